//! Episodic training.
//!
//! One step is split into [`plan_step`], which runs the forward passes once to
//! make every discrete choice (target sampling, NMS, top-k), and [`step_loss`],
//! a smooth function of the parameters given that plan. `step_loss` is what
//! the gradient checks differentiate.

use rand::Rng;

use super::config::TrainConfig;
use super::model::Model;
use crate::diffmath::{binary_score_loss, sgd_step, smooth_l1, ParamStore, Tensor};
use crate::episodes::{episode_rng, Episode, EpisodeSampler, Phase};
use crate::error::{Error, Result};
use crate::fewshot::{
    adaptation_loss, encode_backward, encode_exemplars, fewshot_cls_loss, normalize_rows,
    normalize_rows_backward, similarity_backward, similarity_matrix, total_loss, LossComponents,
};
use crate::proposals::{
    label_and_sample, nms_indices, pool_margin, pool_segments, project_map, projection_backward,
    soi_pool_backward_into, stage1_backward, stage1_forward, stage1_proposals, stage2_backward,
    stage2_forward, AnchorSegment, ProposalConfig, SampleConfig, Segment, Target,
};
use crate::splits::ClassSplit;
use crate::synthcorpus::Corpus;

/// Multipliers on the individual loss terms of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub p1_cls: f64,
    pub p1_reg: f64,
    pub p2_cls: f64,
    pub p2_reg: f64,
    pub fewshot: f64,
    pub adapt: f64,
}

impl LossWeights {
    /// The training objective with adaptation weight `lambda`.
    pub fn total(lambda: f64) -> Self {
        Self {
            p1_cls: 1.0,
            p1_reg: 1.0,
            p2_cls: 1.0,
            p2_reg: 1.0,
            fewshot: 1.0,
            adapt: lambda,
        }
    }

    pub fn none() -> Self {
        Self {
            p1_cls: 0.0,
            p1_reg: 0.0,
            p2_cls: 0.0,
            p2_reg: 0.0,
            fewshot: 0.0,
            adapt: 0.0,
        }
    }
}

/// Everything one step needs besides the parameters.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub query: Tensor,
    pub anchor_targets: Vec<Target>,
    /// Stage-2 candidates: stage-1 survivors followed by the GT segments.
    pub candidates: Vec<Segment>,
    pub survivors: usize,
    pub stage2_targets: Vec<Target>,
    /// Episode label per candidate for the few-shot loss.
    pub fewshot_targets: Vec<Option<usize>>,
    pub support_raw: Vec<f64>,
    pub support_labels: Vec<usize>,
    pub n_way: usize,
}

/// Step settings shared by training and the gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSettings {
    pub stage1: SampleConfig,
    pub stage2: SampleConfig,
    pub nms_threshold: f64,
    pub top_k: usize,
    pub temperature: f64,
}

impl From<&TrainConfig> for StepSettings {
    fn from(c: &TrainConfig) -> Self {
        Self {
            stage1: c.stage1,
            stage2: c.stage2,
            nms_threshold: c.nms_threshold,
            top_k: c.top_k,
            temperature: c.temperature,
        }
    }
}

/// Episode content in plain arrays, independent of corpus borrowing.
#[derive(Debug, Clone)]
pub struct EpisodeData {
    pub query: Tensor,
    /// GT segments with their episode label (`None` for classes outside the episode).
    pub gts: Vec<(Segment, Option<usize>)>,
    pub support_raw: Vec<f64>,
    pub support_labels: Vec<usize>,
    pub n_way: usize,
}

impl EpisodeData {
    pub fn from_episode(e: &Episode<'_>) -> Result<Self> {
        let gts = e
            .query
            .segments
            .iter()
            .map(|g| Ok((Segment::new(g.start, g.end)?, e.label_of(g.class_id))))
            .collect::<Result<_>>()?;
        Ok(Self {
            query: e.query.features.clone(),
            gts,
            support_raw: e
                .support
                .iter()
                .flat_map(|c| c.feature.iter().copied())
                .collect(),
            support_labels: e.support_labels(),
            n_way: e.n_way(),
        })
    }
}

pub fn plan_step<R: Rng + ?Sized>(
    params: &ParamStore,
    model: &ProposalConfig,
    settings: &StepSettings,
    data: &EpisodeData,
    rng: &mut R,
) -> Result<StepPlan> {
    let length = data.query.dims()[0];
    let limit = length as f64;
    let gt_segments: Vec<Segment> = data.gts.iter().map(|g| g.0).collect();

    let anchors = model.anchors(length)?;
    let projected = project_map(params, model, &data.query)?;
    let s1 = stage1_forward(params, model, &projected.map)?;
    if !s1.logits.iter().chain(&s1.offsets).all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            iteration: 0,
            component: "stage-1 output".into(),
        });
    }
    let anchor_targets = label_and_sample(&anchors, &gt_segments, limit, &settings.stage1, rng)?;

    let proposals = stage1_proposals(&s1, &anchors, limit);
    let segs: Vec<Segment> = proposals.iter().map(|p| p.segment).collect();
    let scores: Vec<f64> = proposals.iter().map(|p| p.score).collect();
    let mut candidates: Vec<Segment> = nms_indices(&segs, &scores, settings.nms_threshold)
        .into_iter()
        .take(settings.top_k)
        .map(|i| segs[i])
        .collect();
    let survivors = candidates.len();
    candidates.extend(gt_segments.iter().copied());

    let refs: Vec<AnchorSegment> = candidates.iter().map(AnchorSegment::from_segment).collect();
    let stage2_targets = label_and_sample(&refs, &gt_segments, limit, &settings.stage2, rng)?;
    let mut fewshot_targets = vec![None; candidates.len()];
    for t in stage2_targets.iter().filter(|t| t.foreground) {
        fewshot_targets[t.index] = data.gts[t.gt.expect("positive target has a GT")].1;
    }

    Ok(StepPlan {
        query: data.query.clone(),
        anchor_targets,
        candidates,
        survivors,
        stage2_targets,
        fewshot_targets,
        support_raw: data.support_raw.clone(),
        support_labels: data.support_labels.clone(),
        n_way: data.n_way,
    })
}

/// Proposal loss over sampled targets: mean classification loss plus summed
/// smooth-L1 over positives divided by the positive count. Returns
/// `(cls, reg, d_logits, d_offsets)` for `n` rows of logits and offsets.
fn proposal_loss(
    targets: &[Target],
    logits: &[f64],
    offsets: &[f64],
    w_cls: f64,
    w_reg: f64,
) -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
    let mut d_logits = vec![0.0; logits.len()];
    let mut d_offsets = vec![0.0; offsets.len()];
    let batch = targets.len().max(1) as f64;
    let positives = targets.iter().filter(|t| t.foreground).count().max(1) as f64;
    let (mut cls, mut reg) = (0.0, 0.0);
    for t in targets {
        let i = t.index;
        let lg = binary_score_loss([logits[2 * i], logits[2 * i + 1]], t.foreground);
        cls += lg.loss / batch;
        d_logits[2 * i] += w_cls * lg.grad[0] / batch;
        d_logits[2 * i + 1] += w_cls * lg.grad[1] / batch;
        if t.foreground {
            let r = smooth_l1(&offsets[2 * i..2 * i + 2], &t.offsets)?;
            reg += r.loss / positives;
            d_offsets[2 * i] += w_reg * r.grad[0] / positives;
            d_offsets[2 * i + 1] += w_reg * r.grad[1] / positives;
        }
    }
    Ok((cls, reg, d_logits, d_offsets))
}

/// Per-term losses of a planned step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub p1_cls: f64,
    pub p1_reg: f64,
    pub p2_cls: f64,
    pub p2_reg: f64,
    pub fewshot: f64,
    pub adapt: f64,
    /// Smallest distance of any ReLU pre-activation from its kink.
    pub min_preactivation: f64,
    /// Smallest distance of any regression residual from the smooth-L1 kink at |d| = 1.
    pub min_huber_margin: f64,
    /// Smallest gap between the winner and runner-up of any positive SoI max.
    pub min_pool_margin: f64,
}

impl StepLosses {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            p1: self.p1_cls + self.p1_reg,
            p2: self.p2_cls + self.p2_reg,
            fewshot: self.fewshot,
            adapt: self.adapt,
        }
    }

    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.p1_cls * self.p1_cls
            + w.p1_reg * self.p1_reg
            + w.p2_cls * self.p2_cls
            + w.p2_reg * self.p2_reg
            + w.fewshot * self.fewshot
            + w.adapt * self.adapt
    }
}

fn huber_margin(targets: &[Target], offsets: &[f64]) -> f64 {
    targets
        .iter()
        .filter(|t| t.foreground)
        .flat_map(|t| {
            (0..2).map(move |k| ((offsets[2 * t.index + k] - t.offsets[k]).abs() - 1.0).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

/// Evaluates every loss term for `plan` and accumulates the gradient of the
/// `weights`-weighted sum into `params`.
pub fn step_loss(
    params: &mut ParamStore,
    model: &ProposalConfig,
    plan: &StepPlan,
    temperature: f64,
    weights: &LossWeights,
) -> Result<StepLosses> {
    let projected = project_map(params, model, &plan.query)?;
    let s1 = stage1_forward(params, model, &projected.map)?;
    let (p1_cls, p1_reg, d1_logits, d1_offsets) = proposal_loss(
        &plan.anchor_targets,
        &s1.logits,
        &s1.offsets,
        weights.p1_cls,
        weights.p1_reg,
    )?;

    let n = plan.candidates.len();
    let (pooled_flat, pooled) = pool_segments(&projected.map, &plan.candidates, model.bins)?;
    let s2 = stage2_forward(params, &pooled_flat, n)?;
    let (p2_cls, p2_reg, d2_logits, d2_offsets) = proposal_loss(
        &plan.stage2_targets,
        &s2.logits,
        &s2.offsets,
        weights.p2_cls,
        weights.p2_reg,
    )?;

    let m = plan.support_labels.len();
    let enc = encode_exemplars(params, model, &plan.support_raw, m)?;
    let e = enc.embed_dim;
    let mut d_support = vec![0.0; enc.features.len()];
    let mut d_props = vec![0.0; s2.features.len()];

    let columns: Vec<usize> = (0..n)
        .filter(|&i| plan.fewshot_targets[i].is_some())
        .collect();
    let mut fewshot = 0.0;
    if !columns.is_empty() {
        let feats: Vec<f64> = columns
            .iter()
            .flat_map(|&i| s2.feature(i).iter().copied())
            .collect();
        let targets: Vec<Option<usize>> =
            columns.iter().map(|&i| plan.fewshot_targets[i]).collect();
        let sim = similarity_matrix(&enc.features, &feats, e, &plan.support_labels)?;
        let (l, d_sim) = fewshot_cls_loss(&sim, &targets, plan.n_way, temperature)?;
        fewshot = l;
        let (ds, dr) = similarity_backward(&enc.features, &feats, e, &d_sim);
        d_support
            .iter_mut()
            .zip(&ds)
            .for_each(|(a, b)| *a += weights.fewshot * b);
        for (c, &i) in columns.iter().enumerate() {
            for k in 0..e {
                d_props[i * e + k] += weights.fewshot * dr[c * e + k];
            }
        }
    }

    let mut adapt = 0.0;
    if plan.survivors > 0 {
        let props = &s2.features[..plan.survivors * e];
        let (l, dp, ds) = adaptation_loss(
            &normalize_rows(props, e),
            &normalize_rows(&enc.features, e),
            e,
        )?;
        adapt = l;
        let dp = normalize_rows_backward(props, e, &dp);
        let ds = normalize_rows_backward(&enc.features, e, &ds);
        d_props
            .iter_mut()
            .zip(&dp)
            .for_each(|(a, b)| *a += weights.adapt * b);
        d_support
            .iter_mut()
            .zip(&ds)
            .for_each(|(a, b)| *a += weights.adapt * b);
    }

    let mut d_map = stage1_backward(params, &s1, &d1_logits, &d1_offsets);
    let d_pooled = stage2_backward(params, &s2, &d2_logits, &d2_offsets, &d_props);
    let width = d_pooled.len() / n.max(1);
    for (k, p) in pooled.iter().enumerate() {
        soi_pool_backward_into(p, &d_pooled[k * width..(k + 1) * width], &mut d_map);
    }
    projection_backward(params, &projected, &d_map);
    encode_backward(params, &enc, &d_support);

    Ok(StepLosses {
        p1_cls,
        p1_reg,
        p2_cls,
        p2_reg,
        fewshot,
        adapt,
        min_preactivation: projected
            .min_abs_preactivation()
            .min(s1.min_abs_preactivation())
            .min(s2.min_abs_preactivation())
            .min(enc.min_abs_preactivation()),
        min_huber_margin: huber_margin(&plan.anchor_targets, &s1.offsets)
            .min(huber_margin(&plan.stage2_targets, &s2.offsets)),
        min_pool_margin: plan
            .candidates
            .iter()
            .map(|c| pool_margin(&projected.map, c, model.bins))
            .fold(enc.min_pool_margin(), f64::min),
    })
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub components: LossComponents,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LossRecord>,
}

/// Window over which [`TrainOutcome::final_adaptation_loss`] averages.
pub const FINAL_WINDOW: usize = 100;

impl TrainOutcome {
    /// Mean logged adaptation loss over the last `min(100, iterations)` iterations.
    pub fn final_adaptation_loss(&self) -> f64 {
        let tail = &self.log[self.log.len().saturating_sub(FINAL_WINDOW)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|r| r.components.adapt).sum::<f64>() / tail.len() as f64
    }

    /// Mean logged total loss over the first and last windows.
    pub fn loss_trend(&self) -> (f64, f64) {
        let w = FINAL_WINDOW.min(self.log.len()).max(1);
        let mean =
            |s: &[LossRecord]| s.iter().map(|r| r.total).sum::<f64>() / s.len().max(1) as f64;
        (
            mean(&self.log[..w.min(self.log.len())]),
            mean(&self.log[self.log.len().saturating_sub(w)..]),
        )
    }

    /// Loss log as CSV with columns `iter,L_p1,L_p2,L_fewshot,L_adapt,L_total`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iter,L_p1,L_p2,L_fewshot,L_adapt,L_total\n");
        for r in &self.log {
            let c = r.components;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, c.p1, c.p2, c.fewshot, c.adapt, r.total
            ));
        }
        out
    }
}

fn at_iteration(e: Error, iter: usize) -> Error {
    match e {
        Error::NonFinite { component, .. } => Error::NonFinite {
            iteration: iter,
            component,
        },
        other => other,
    }
}

/// Trains from a fresh initialisation.
pub fn train(config: &TrainConfig, corpus: &Corpus, split: &ClassSplit) -> Result<TrainOutcome> {
    config.validate()?;
    split.validate(&corpus.catalog)?;
    if split.base.is_empty() {
        return Err(Error::config("split", "base subset is empty"));
    }
    let mut model = Model::init(config, corpus.feature_dim())?;
    let view = model.view(corpus)?;
    let sampler = EpisodeSampler::new(&view, split, Phase::Train, config.n_way, config.shots)?;
    let settings = StepSettings::from(config);
    let weights = LossWeights::total(config.lambda);
    let mut log = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let mut rng = episode_rng(config.seed, iter as u64);
        let episode = sampler.sample(&mut rng)?;
        let data = EpisodeData::from_episode(&episode)?;
        let plan = plan_step(&model.params, &model.config, &settings, &data, &mut rng)
            .map_err(|e| at_iteration(e, iter))?;
        let losses = step_loss(
            &mut model.params,
            &model.config,
            &plan,
            config.temperature,
            &weights,
        )
        .map_err(|e| at_iteration(e, iter))?;
        let components = losses.components();
        let total = total_loss(&components, config.lambda, iter)?;
        if !model.params.grads_finite() {
            return Err(Error::NonFinite {
                iteration: iter,
                component: "gradient".into(),
            });
        }
        if let Some(c) = config.grad_clip {
            model.params.clip_grad_norm(c);
        }
        sgd_step(&mut model.params, config.learning_rate);
        log.push(LossRecord {
            iter,
            components,
            total,
        });
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splits::random_split;
    use crate::synthcorpus::{generate_corpus, CorpusConfig};

    fn small_corpus() -> Corpus {
        generate_corpus(&CorpusConfig {
            num_classes: 20,
            exemplars_per_class: 4,
            sequences_per_class: 3,
            ..CorpusConfig::with_seed(8)
        })
        .unwrap()
    }

    #[test]
    fn zero_iterations_return_initialisation() {
        let corpus = small_corpus();
        let split = random_split(&corpus.catalog, 8, 0).unwrap();
        let cfg = TrainConfig {
            iterations: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &corpus, &split).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.model, Model::init(&cfg, 32).unwrap());
        assert_eq!(out.loss_csv(), "iter,L_p1,L_p2,L_fewshot,L_adapt,L_total\n");
    }

    #[test]
    fn short_run_logs_every_iteration_and_is_reproducible() {
        let corpus = small_corpus();
        let split = random_split(&corpus.catalog, 8, 0).unwrap();
        let cfg = TrainConfig {
            iterations: 20,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &corpus, &split).unwrap();
        let b = train(&cfg, &corpus, &split).unwrap();
        assert_eq!(a.log.len(), 20);
        assert_eq!(a, b);
        assert_eq!(a.loss_csv().lines().count(), 21);
        for r in &a.log {
            let c = r.components;
            assert_eq!(r.total, c.p1 + c.p2 + c.fewshot + cfg.lambda * c.adapt);
        }
    }

    #[test]
    fn exploding_learning_rate_reports_non_finite() {
        let corpus = small_corpus();
        let split = random_split(&corpus.catalog, 8, 0).unwrap();
        let cfg = TrainConfig {
            iterations: 200,
            learning_rate: 1e300,
            seed: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, &corpus, &split),
            Err(Error::NonFinite { .. })
        ));
    }
}
