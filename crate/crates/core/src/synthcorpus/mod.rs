//! Synthetic feature-level corpora.
//!
//! Each class owns a prototype vector. Trimmed exemplar clips are the
//! prototype plus Gaussian noise plus a constant bias `β·u` shared by every
//! exemplar (the frame-rate regime of uniformly sampled clips). Untrimmed
//! sequences are `T'×D` maps whose rows are background noise outside ground
//! truth segments and prototype plus noise inside them, with no bias term.
//! Both streams also carry a class-agnostic action offset on every action row.
//!
//! Prototypes are built against a pool of "pretraining" prototypes that live
//! in a fixed subspace. Pretrain-visible classes reuse their pool prototype;
//! the others mix it with an orthogonal component at correlation `ρ`.

mod io;

pub use io::{load_corpus, read_corpus, save_corpus, write_corpus, CORPUS_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

mod defaults {
    pub fn num_classes() -> usize {
        100
    }
    pub fn feature_dim() -> usize {
        32
    }
    pub fn sequence_length() -> usize {
        96
    }
    pub fn noise() -> f64 {
        0.25
    }
    pub fn segments_per_sequence() -> [usize; 2] {
        [1, 2]
    }
    pub fn segment_length() -> [usize; 2] {
        [12, 40]
    }
    pub fn one() -> usize {
        1
    }
    pub fn frame_rate_bias() -> f64 {
        0.5
    }
    pub fn visible_fraction() -> f64 {
        0.37
    }
    pub fn correlation() -> [f64; 2] {
        [0.0, 0.0]
    }
    pub fn pretrain_dim() -> usize {
        16
    }
    pub fn prototype_scale() -> f64 {
        1.0
    }
    pub fn action_scale() -> f64 {
        1.0
    }
    pub fn exemplars_per_class() -> usize {
        10
    }
    pub fn sequences_per_class() -> usize {
        5
    }
    pub fn frames_per_clip() -> usize {
        16
    }
    pub fn frame_rate() -> f64 {
        6.0
    }
    pub fn temporal_stride() -> usize {
        8
    }
}

/// Generation parameters. Every field but `seed` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Number of classes `C`.
    #[serde(default = "defaults::num_classes")]
    pub num_classes: usize,
    /// Raw feature width `D_raw`.
    #[serde(default = "defaults::feature_dim")]
    pub feature_dim: usize,
    /// Untrimmed feature-map length `T'`.
    #[serde(default = "defaults::sequence_length")]
    pub sequence_length: usize,
    /// σ_clip: per-entry noise on exemplars and in-segment rows.
    #[serde(default = "defaults::noise")]
    pub clip_noise: f64,
    /// σ_background: per-entry noise on background rows.
    #[serde(default = "defaults::noise")]
    pub background_noise: f64,
    /// Inclusive range of ground-truth segment counts per sequence.
    #[serde(default = "defaults::segments_per_sequence")]
    pub segments_per_sequence: [usize; 2],
    /// Inclusive range of segment lengths in feature units.
    #[serde(default = "defaults::segment_length")]
    pub segment_length: [usize; 2],
    /// Maximum number of distinct classes in one sequence.
    #[serde(default = "defaults::one")]
    pub classes_per_sequence: usize,
    /// β: magnitude of the exemplar-stream bias.
    #[serde(default = "defaults::frame_rate_bias")]
    pub frame_rate_bias: f64,
    /// Fraction of classes whose prototype belongs to the pretraining set.
    #[serde(default = "defaults::visible_fraction")]
    pub visible_fraction: f64,
    /// Range of ρ drawn uniformly for classes outside the pretraining set.
    #[serde(default = "defaults::correlation")]
    pub correlation: [f64; 2],
    /// Dimension of the subspace spanned by pretraining prototypes.
    #[serde(default = "defaults::pretrain_dim")]
    pub pretrain_dim: usize,
    /// Per-entry scale of prototypes; every prototype has norm `scale·√D`.
    #[serde(default = "defaults::prototype_scale")]
    pub prototype_scale: f64,
    /// Per-entry scale of the action offset (norm `action_scale·√D`) added to
    /// every exemplar and in-segment row, orthogonal to all prototypes.
    #[serde(default = "defaults::action_scale")]
    pub action_scale: f64,
    #[serde(default = "defaults::exemplars_per_class")]
    pub exemplars_per_class: usize,
    #[serde(default = "defaults::sequences_per_class")]
    pub sequences_per_class: usize,
    /// L: frames uniformly sampled from each trimmed clip (metadata).
    #[serde(default = "defaults::frames_per_clip")]
    pub frames_per_clip: usize,
    /// Nominal untrimmed frame rate in fps (metadata).
    #[serde(default = "defaults::frame_rate")]
    pub frame_rate: f64,
    /// Frames per feature step (metadata).
    #[serde(default = "defaults::temporal_stride")]
    pub temporal_stride: usize,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            num_classes: defaults::num_classes(),
            feature_dim: defaults::feature_dim(),
            sequence_length: defaults::sequence_length(),
            clip_noise: defaults::noise(),
            background_noise: defaults::noise(),
            segments_per_sequence: defaults::segments_per_sequence(),
            segment_length: defaults::segment_length(),
            classes_per_sequence: defaults::one(),
            frame_rate_bias: defaults::frame_rate_bias(),
            visible_fraction: defaults::visible_fraction(),
            correlation: defaults::correlation(),
            pretrain_dim: defaults::pretrain_dim(),
            prototype_scale: defaults::prototype_scale(),
            action_scale: defaults::action_scale(),
            exemplars_per_class: defaults::exemplars_per_class(),
            sequences_per_class: defaults::sequences_per_class(),
            frames_per_clip: defaults::frames_per_clip(),
            frame_rate: defaults::frame_rate(),
            temporal_stride: defaults::temporal_stride(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.num_classes < 10 {
            return fail(
                "num_classes",
                format!("need at least 10 classes, got {}", self.num_classes),
            );
        }
        if self.feature_dim < 2 {
            return fail("feature_dim", "must be at least 2".into());
        }
        let class_dims = self.feature_dim - usize::from(self.action_scale > 0.0);
        if self.pretrain_dim == 0 || self.pretrain_dim >= class_dims {
            return fail("pretrain_dim", format!("must lie in 1..{class_dims}"));
        }
        if self.sequence_length == 0 {
            return fail("sequence_length", "must be positive".into());
        }
        for (field, v) in [
            ("clip_noise", self.clip_noise),
            ("background_noise", self.background_noise),
            ("frame_rate_bias", self.frame_rate_bias),
            ("prototype_scale", self.prototype_scale),
            ("action_scale", self.action_scale),
            ("frame_rate", self.frame_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(field, format!("must be a non-negative number, got {v}"));
            }
        }
        if self.prototype_scale == 0.0 {
            return fail("prototype_scale", "must be positive".into());
        }
        let [smin, smax] = self.segments_per_sequence;
        if smin == 0 || smin > smax {
            return fail(
                "segments_per_sequence",
                format!("invalid range [{smin}, {smax}]"),
            );
        }
        let [lmin, lmax] = self.segment_length;
        if lmin == 0 || lmin > lmax || lmax > self.sequence_length {
            return fail(
                "segment_length",
                format!(
                    "invalid range [{lmin}, {lmax}] for sequence length {}",
                    self.sequence_length
                ),
            );
        }
        if self.classes_per_sequence == 0 {
            return fail("classes_per_sequence", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.visible_fraction) {
            return fail("visible_fraction", "must lie in [0, 1]".into());
        }
        let [rlo, rhi] = self.correlation;
        if !(0.0..=1.0).contains(&rlo) || !(0.0..=1.0).contains(&rhi) || rlo > rhi {
            return fail(
                "correlation",
                format!("invalid range [{rlo}, {rhi}] within [0, 1]"),
            );
        }
        if self.exemplars_per_class == 0 {
            return fail("exemplars_per_class", "must be positive".into());
        }
        if self.sequences_per_class == 0 {
            return fail("sequences_per_class", "must be positive".into());
        }
        if self.temporal_stride == 0 || self.frames_per_clip == 0 {
            return fail("temporal_stride", "metadata fields must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassInfo {
    pub name: String,
    pub prototype: Vec<f64>,
    /// Whether the class belongs to the simulated pretraining label set.
    pub pretrain_visible: bool,
    /// ρ between the prototype and its pretraining reference (1 for visible classes).
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCatalog {
    pub classes: Vec<ClassInfo>,
    /// One pretraining reference prototype per class, all inside the pretraining subspace.
    pub pretrain_prototypes: Vec<Vec<f64>>,
    /// Unit direction `u` of the exemplar-stream bias.
    pub bias_direction: Vec<f64>,
    /// Class-agnostic offset carried by every action row and exemplar.
    pub action_offset: Vec<f64>,
}

impl ClassCatalog {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.bias_direction.len()
    }

    pub fn visible_count(&self) -> usize {
        self.classes.iter().filter(|c| c.pretrain_visible).count()
    }

    /// Minimum Euclidean distance between two distinct prototypes.
    pub fn min_prototype_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                best = best.min(distance(&a.prototype, &b.prototype));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarClip {
    pub class_id: usize,
    /// Clip duration in seconds.
    pub duration: f64,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtSegment {
    pub start: f64,
    pub end: f64,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UntrimmedSequence {
    /// `T'×D_raw` feature map.
    pub features: Tensor,
    pub segments: Vec<GtSegment>,
    pub frame_rate: f64,
    pub temporal_stride: usize,
}

impl UntrimmedSequence {
    pub fn length(&self) -> usize {
        self.features.dims()[0]
    }

    /// Distinct ground-truth classes, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.segments.iter().map(|s| s.class_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub catalog: ClassCatalog,
    pub exemplars: Vec<ExemplarClip>,
    pub sequences: Vec<UntrimmedSequence>,
}

impl Corpus {
    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn sequence_length(&self) -> usize {
        self.config.sequence_length
    }

    /// Exemplar indices grouped by class id.
    pub fn exemplars_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.catalog.len()];
        for (i, e) in self.exemplars.iter().enumerate() {
            out[e.class_id].push(i);
        }
        out
    }
}

const STREAM_CATALOG: u64 = 0;
const STREAM_EXEMPLARS: u64 = 1;
const STREAM_SEQUENCES: u64 = 2;
const PLACEMENT_RETRIES: usize = 100;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn scaled_to(v: &mut [f64], norm: f64) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x *= norm / n);
}

/// Random orthonormal basis of R^d (Gram-Schmidt over Gaussian draws).
fn orthonormal_basis<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

/// Random vector in the span of `basis`, scaled to `norm`.
fn random_in_span<R: Rng + ?Sized>(
    basis: &[Vec<f64>],
    d: usize,
    norm: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut v = vec![0.0; d];
    for b in basis {
        let g = gaussian(rng);
        v.iter_mut().zip(b).for_each(|(x, y)| *x += g * y);
    }
    scaled_to(&mut v, norm);
    v
}

pub fn build_catalog(config: &CorpusConfig) -> Result<ClassCatalog> {
    config.validate()?;
    let mut rng = stream(config.seed, STREAM_CATALOG);
    let d = config.feature_dim;
    let c = config.num_classes;
    let norm = config.prototype_scale * (d as f64).sqrt();

    let basis = orthonormal_basis(d, &mut rng);
    let (pre, rest) = basis.split_at(config.pretrain_dim);
    let (complement, shared) = if config.action_scale > 0.0 {
        rest.split_at(rest.len() - 1)
    } else {
        (rest, &[][..])
    };
    let action_norm = config.action_scale * (d as f64).sqrt();
    let action_offset = shared.first().map_or_else(
        || vec![0.0; d],
        |u| u.iter().map(|v| action_norm * v).collect(),
    );

    let n_visible = (config.visible_fraction * c as f64).round() as usize;
    let mut order: Vec<usize> = (0..c).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut visible = vec![false; c];
    for &i in &order[..n_visible] {
        visible[i] = true;
    }

    let mut pretrain_prototypes = Vec::with_capacity(c);
    let mut classes = Vec::with_capacity(c);
    let [rlo, rhi] = config.correlation;
    for (i, &is_visible) in visible.iter().enumerate() {
        let reference = random_in_span(pre, d, norm, &mut rng);
        let orthogonal = random_in_span(complement, d, norm, &mut rng);
        let rho = if is_visible {
            1.0
        } else if rhi > rlo {
            rng.random_range(rlo..=rhi)
        } else {
            rlo
        };
        let mix = (1.0 - rho * rho).max(0.0).sqrt();
        let prototype: Vec<f64> = reference
            .iter()
            .zip(&orthogonal)
            .map(|(r, o)| rho * r + mix * o)
            .collect();
        classes.push(ClassInfo {
            name: format!("class_{i:03}"),
            prototype,
            pretrain_visible: is_visible,
            correlation: rho,
        });
        pretrain_prototypes.push(reference);
    }

    let mut bias_direction: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
    scaled_to(&mut bias_direction, 1.0);

    let catalog = ClassCatalog {
        classes,
        pretrain_prototypes,
        bias_direction,
        action_offset,
    };
    if catalog.min_prototype_distance() <= 0.0 {
        return Err(Error::Generation("duplicate class prototypes".into()));
    }
    Ok(catalog)
}

/// One trimmed clip: `prototype + a + N(0, σ_clip²) + β·u`, with `a` the action offset.
pub fn synth_exemplar<R: Rng + ?Sized>(
    catalog: &ClassCatalog,
    class_id: usize,
    config: &CorpusConfig,
    rng: &mut R,
) -> Result<ExemplarClip> {
    let class = catalog
        .classes
        .get(class_id)
        .ok_or_else(|| Error::contract(format!("class id {class_id} not in catalog")))?;
    let duration = rng.random_range(2.0..30.0);
    let beta = config.frame_rate_bias;
    let feature = class
        .prototype
        .iter()
        .zip(&catalog.bias_direction)
        .zip(&catalog.action_offset)
        .map(|((&p, &u), &a)| p + a + config.clip_noise * gaussian(rng) + beta * u)
        .collect();
    Ok(ExemplarClip {
        class_id,
        duration,
        feature,
    })
}

/// One untrimmed sequence whose ground-truth classes are drawn from `classes_present`.
pub fn synth_untrimmed<R: Rng + ?Sized>(
    catalog: &ClassCatalog,
    classes_present: &[usize],
    config: &CorpusConfig,
    rng: &mut R,
) -> Result<UntrimmedSequence> {
    if classes_present.is_empty() {
        return Err(Error::contract("synth_untrimmed needs at least one class"));
    }
    if let Some(&bad) = classes_present.iter().find(|&&c| c >= catalog.len()) {
        return Err(Error::contract(format!("class id {bad} not in catalog")));
    }
    let t = config.sequence_length;
    let d = catalog.feature_dim();
    let [smin, smax] = config.segments_per_sequence;
    let [lmin, lmax] = config.segment_length;
    let count = rng.random_range(smin..=smax);

    let mut placed: Vec<(usize, usize, usize)> = Vec::with_capacity(count);
    for k in 0..count {
        let class_id = if k < classes_present.len() {
            classes_present[k]
        } else {
            classes_present[rng.random_range(0..classes_present.len())]
        };
        let mut slot = None;
        for _ in 0..PLACEMENT_RETRIES {
            let len = rng.random_range(lmin..=lmax.min(t));
            let start = rng.random_range(0..=t - len);
            let end = start + len;
            if placed.iter().all(|&(s, e, _)| end <= s || start >= e) {
                slot = Some((start, end));
                break;
            }
        }
        let (start, end) = slot.ok_or_else(|| {
            Error::Generation(format!(
                "could not place segment {} of {count} after {PLACEMENT_RETRIES} attempts; density too high",
                k + 1
            ))
        })?;
        placed.push((start, end, class_id));
    }
    placed.sort_unstable();

    let mut values = Vec::with_capacity(t * d);
    let mut owner: Vec<Option<usize>> = vec![None; t];
    for &(s, e, c) in &placed {
        owner[s..e].iter_mut().for_each(|o| *o = Some(c));
    }
    for row_owner in owner {
        match row_owner {
            Some(c) => {
                let proto = &catalog.classes[c].prototype;
                values.extend(
                    proto
                        .iter()
                        .zip(&catalog.action_offset)
                        .map(|(&p, &a)| p + a + config.clip_noise * gaussian(rng)),
                );
            }
            None => values.extend((0..d).map(|_| config.background_noise * gaussian(rng))),
        }
    }
    Ok(UntrimmedSequence {
        features: Tensor::from_raw(vec![t, d], values),
        segments: placed
            .into_iter()
            .map(|(s, e, c)| GtSegment {
                start: s as f64,
                end: e as f64,
                class_id: c,
            })
            .collect(),
        frame_rate: config.frame_rate,
        temporal_stride: config.temporal_stride,
    })
}

/// Builds a full corpus; a pure function of `config`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    let catalog = build_catalog(config)?;
    let c = catalog.len();

    let mut rng = stream(config.seed, STREAM_EXEMPLARS);
    let mut exemplars = Vec::with_capacity(c * config.exemplars_per_class);
    for class_id in 0..c {
        for _ in 0..config.exemplars_per_class {
            exemplars.push(synth_exemplar(&catalog, class_id, config, &mut rng)?);
        }
    }

    let mut rng = stream(config.seed, STREAM_SEQUENCES);
    let mut sequences = Vec::with_capacity(c * config.sequences_per_class);
    for primary in 0..c {
        for _ in 0..config.sequences_per_class {
            let extra = rng.random_range(1..=config.classes_per_sequence.min(c)) - 1;
            let mut present = vec![primary];
            while present.len() < extra + 1 {
                let other = rng.random_range(0..c);
                if !present.contains(&other) {
                    present.push(other);
                }
            }
            sequences.push(synth_untrimmed(&catalog, &present, config, &mut rng)?);
        }
    }

    Ok(Corpus {
        config: config.clone(),
        catalog,
        exemplars,
        sequences,
    })
}
