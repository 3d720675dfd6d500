//! Similarity network: exemplar encoding, cosine similarity, label assignment,
//! the few-shot classification loss and the adaptation loss.
//!
//! An exemplar is encoded with the same weights as a proposal. Its vector is
//! laid out as an isolated clip between zero rows, projected, SoI-pooled over
//! the clip and passed through the stage-2 projection and embedding, so `f(S)`
//! is the feature of a perfectly localized proposal around that clip.

use crate::diffmath::{softmax_cross_entropy, ParamStore};
use crate::error::{Error, Result};
use crate::proposals::network::FEATURE_PROJ_W;
use crate::proposals::{
    clip_windows, pool_margin, pool_segments, project_windows, projection_backward,
    soi_pool_backward_into, stage2_backward, stage2_forward, Pooled, Projected, ProposalConfig,
    Segment, Stage2Output,
};

/// Norms below this are treated as zero by the cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

/// Default softmax temperature applied to class-averaged cosine scores.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Encoded exemplar batch with the activations needed for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodedSupport {
    pub count: usize,
    pub embed_dim: usize,
    bins: usize,
    clips: Vec<Segment>,
    projected: Projected,
    pooled: Vec<Pooled>,
    stage2: Stage2Output,
    /// `count × embed_dim`.
    pub features: Vec<f64>,
}

impl EncodedSupport {
    pub fn feature(&self, j: usize) -> &[f64] {
        &self.features[j * self.embed_dim..(j + 1) * self.embed_dim]
    }

    pub fn min_abs_preactivation(&self) -> f64 {
        self.projected
            .min_abs_preactivation()
            .min(self.stage2.min_abs_preactivation())
    }

    /// Smallest SoI max gap over all clips.
    pub fn min_pool_margin(&self) -> f64 {
        self.clips
            .iter()
            .map(|c| pool_margin(&self.projected.map, c, self.bins))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Encodes `count` raw exemplar vectors through the proposal feature path.
pub fn encode_exemplars(
    params: &ParamStore,
    model: &ProposalConfig,
    raw: &[f64],
    count: usize,
) -> Result<EncodedSupport> {
    let window = params.value(FEATURE_PROJ_W).dims()[0];
    if count == 0 || !raw.len().is_multiple_of(count) {
        return Err(Error::contract(format!(
            "{} raw values do not split into {count} exemplars",
            raw.len()
        )));
    }
    let dim = raw.len() / count;
    if dim * model.taps() != window {
        return Err(Error::contract(format!(
            "exemplar width {dim} does not match the {window}-wide feature projection"
        )));
    }
    let rows = model.clip_rows();
    let projected = project_windows(
        params,
        clip_windows(raw, dim, model.radius, rows),
        count * rows,
    )?;
    let clips = (0..count)
        .map(|j| Segment::new((j * rows) as f64, ((j + 1) * rows) as f64))
        .collect::<Result<Vec<_>>>()?;
    let (flat, pooled) = pool_segments(&projected.map, &clips, model.bins)?;
    let stage2 = stage2_forward(params, &flat, count)?;
    Ok(EncodedSupport {
        count,
        embed_dim: stage2.embed_dim,
        bins: model.bins,
        clips,
        projected,
        pooled,
        features: stage2.features.clone(),
        stage2,
    })
}

pub fn encode_exemplar(
    params: &ParamStore,
    model: &ProposalConfig,
    raw: &[f64],
) -> Result<Vec<f64>> {
    Ok(encode_exemplars(params, model, raw, 1)?.features)
}

pub fn encode_backward(params: &mut ParamStore, enc: &EncodedSupport, d_features: &[f64]) {
    let n = enc.count;
    let zeros = vec![0.0; 2 * n];
    let d_flat = stage2_backward(params, &enc.stage2, &zeros, &zeros, d_features);
    let width = d_flat.len() / n;
    let mut d_map = vec![0.0; enc.projected.map.values().len()];
    for (p, d) in enc.pooled.iter().zip(d_flat.chunks(width)) {
        soi_pool_backward_into(p, d, &mut d_map);
    }
    projection_backward(params, &enc.projected, &d_map);
}

/// Cosine similarities between `M` support rows and `N` proposal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `M × N`.
    pub values: Vec<f64>,
    /// Episode label of each support row.
    pub row_labels: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.cols + i]
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Entry `(j, i)` is the cosine between support row `j` and proposal row `i`;
/// zero when either vector has (near-)zero norm.
pub fn similarity_matrix(
    support: &[f64],
    proposals: &[f64],
    dim: usize,
    row_labels: &[usize],
) -> Result<SimilarityMatrix> {
    if dim == 0 || !support.len().is_multiple_of(dim) || !proposals.len().is_multiple_of(dim) {
        return Err(Error::contract(
            "similarity inputs must be whole rows of equal dimension",
        ));
    }
    let m = support.len() / dim;
    let n = proposals.len() / dim;
    if row_labels.len() != m {
        return Err(Error::contract(format!(
            "{} row labels for {m} support rows",
            row_labels.len()
        )));
    }
    let pnorms: Vec<f64> = proposals.chunks(dim).map(norm).collect();
    let mut values = Vec::with_capacity(m * n);
    for s in support.chunks(dim) {
        let sn = norm(s);
        for (r, &rn) in proposals.chunks(dim).zip(&pnorms) {
            values.push(if sn < NORM_EPS || rn < NORM_EPS {
                0.0
            } else {
                (dot(s, r) / (sn * rn)).clamp(-1.0, 1.0)
            });
        }
    }
    Ok(SimilarityMatrix {
        rows: m,
        cols: n,
        values,
        row_labels: row_labels.to_vec(),
    })
}

/// Gradients of `Σ d_sim ⊙ sim` with respect to both feature sets.
pub fn similarity_backward(
    support: &[f64],
    proposals: &[f64],
    dim: usize,
    d_sim: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let m = support.len() / dim;
    let n = proposals.len() / dim;
    let mut ds = vec![0.0; support.len()];
    let mut dr = vec![0.0; proposals.len()];
    let pnorms: Vec<f64> = proposals.chunks(dim).map(norm).collect();
    for j in 0..m {
        let s = &support[j * dim..(j + 1) * dim];
        let sn = norm(s);
        if sn < NORM_EPS {
            continue;
        }
        for i in 0..n {
            let g = d_sim[j * n + i];
            let rn = pnorms[i];
            if g == 0.0 || rn < NORM_EPS {
                continue;
            }
            let r = &proposals[i * dim..(i + 1) * dim];
            let cos = dot(s, r) / (sn * rn);
            for k in 0..dim {
                ds[j * dim + k] += g * (r[k] / (sn * rn) - cos * s[k] / (sn * sn));
                dr[i * dim + k] += g * (s[k] / (sn * rn) - cos * r[k] / (rn * rn));
            }
        }
    }
    (ds, dr)
}

/// Per-column class averages, `N × n_way` row-major. Rows with the same label
/// are averaged (multi-shot support).
pub fn class_averages(sim: &SimilarityMatrix, n_way: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_way];
    for &l in &sim.row_labels {
        if l >= n_way {
            return Err(Error::contract(format!(
                "row label {l} out of range for {n_way} classes"
            )));
        }
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::contract(
            "every class needs at least one support row",
        ));
    }
    let mut avg = vec![0.0; sim.cols * n_way];
    for (j, &l) in sim.row_labels.iter().enumerate() {
        for i in 0..sim.cols {
            avg[i * n_way + l] += sim.get(j, i) / counts[l] as f64;
        }
    }
    Ok(avg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub label: usize,
    /// Winning class-averaged similarity.
    pub score: f64,
}

/// Assigns each proposal the episode label with the highest class-averaged
/// similarity; ties go to the smaller label.
pub fn assign_labels(sim: &SimilarityMatrix, n_way: usize) -> Result<Vec<Assignment>> {
    let avg = class_averages(sim, n_way)?;
    Ok(avg
        .chunks(n_way)
        .map(|col| {
            let mut best = Assignment {
                label: 0,
                score: col[0],
            };
            for (l, &v) in col.iter().enumerate().skip(1) {
                if v > best.score {
                    best = Assignment { label: l, score: v };
                }
            }
            best
        })
        .collect())
}

/// Mean softmax cross-entropy over positive columns of `class_avg / τ`.
///
/// `targets[i]` is the episode label of proposal `i`, or `None` for proposals
/// that do not contribute. Returns the loss and its gradient w.r.t. `sim`.
pub fn fewshot_cls_loss(
    sim: &SimilarityMatrix,
    targets: &[Option<usize>],
    n_way: usize,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if targets.len() != sim.cols {
        return Err(Error::contract(format!(
            "{} targets for {} proposals",
            targets.len(),
            sim.cols
        )));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::contract("temperature must be positive"));
    }
    let avg = class_averages(sim, n_way)?;
    let mut counts = vec![0usize; n_way];
    sim.row_labels.iter().for_each(|&l| counts[l] += 1);
    let positives = targets.iter().flatten().count();
    let mut d_sim = vec![0.0; sim.values.len()];
    if positives == 0 || n_way < 2 {
        return Ok((0.0, d_sim));
    }
    let mut loss = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let Some(label) = *t else { continue };
        let logits: Vec<f64> = avg[i * n_way..(i + 1) * n_way]
            .iter()
            .map(|v| v / temperature)
            .collect();
        let lg = softmax_cross_entropy(&logits, label)?;
        loss += lg.loss;
        for (j, &l) in sim.row_labels.iter().enumerate() {
            d_sim[j * sim.cols + i] +=
                lg.grad[l] / (temperature * counts[l] as f64 * positives as f64);
        }
    }
    Ok((loss / positives as f64, d_sim))
}

/// Scales every `dim`-row to unit length; rows of (near-)zero norm become zero.
pub fn normalize_rows(x: &[f64], dim: usize) -> Vec<f64> {
    x.chunks(dim)
        .flat_map(|r| {
            let n = norm(r);
            r.iter()
                .map(move |v| if n < NORM_EPS { 0.0 } else { v / n })
        })
        .collect()
}

/// Gradient through [`normalize_rows`] given the gradient `dy` on its output.
pub fn normalize_rows_backward(x: &[f64], dim: usize, dy: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for ((r, g), out) in x.chunks(dim).zip(dy.chunks(dim)).zip(dx.chunks_mut(dim)) {
        let n = norm(r);
        if n < NORM_EPS {
            continue;
        }
        let proj = dot(r, g) / (n * n);
        for k in 0..dim {
            out[k] = (g[k] - r[k] * proj) / n;
        }
    }
    dx
}

/// `‖mean(proposals) − mean(support)‖₂` with gradients for both sets.
/// At zero distance the (sub)gradient returned is zero.
pub fn adaptation_loss(
    proposals: &[f64],
    support: &[f64],
    dim: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if dim == 0 || proposals.is_empty() || support.is_empty() {
        return Err(Error::contract(
            "adaptation loss needs non-empty feature sets",
        ));
    }
    if !proposals.len().is_multiple_of(dim) || !support.len().is_multiple_of(dim) {
        return Err(Error::contract("adaptation inputs must be whole rows"));
    }
    let n = proposals.len() / dim;
    let m = support.len() / dim;
    let mut diff = vec![0.0; dim];
    for r in proposals.chunks(dim) {
        diff.iter_mut().zip(r).for_each(|(d, v)| *d += v / n as f64);
    }
    for s in support.chunks(dim) {
        diff.iter_mut().zip(s).for_each(|(d, v)| *d -= v / m as f64);
    }
    let loss = norm(&diff);
    let mut dp = vec![0.0; proposals.len()];
    let mut ds = vec![0.0; support.len()];
    if loss > 0.0 {
        for (k, d) in diff.iter().enumerate() {
            let u = d / loss;
            (0..n).for_each(|i| dp[i * dim + k] = u / n as f64);
            (0..m).for_each(|j| ds[j * dim + k] = -u / m as f64);
        }
    }
    Ok((loss, dp, ds))
}

/// The four logged loss terms of one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub p1: f64,
    pub p2: f64,
    pub fewshot: f64,
    pub adapt: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("L_p1", self.p1),
            ("L_p2", self.p2),
            ("L_fewshot", self.fewshot),
            ("L_adapt", self.adapt),
        ]
    }
}

/// `L_p1 + L_p2 + L_fewshot + λ·L_adapt`; a non-finite term is reported by name.
pub fn total_loss(c: &LossComponents, lambda: f64, iteration: usize) -> Result<f64> {
    if let Some((name, _)) = c.named().into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration,
            component: name.to_string(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config("lambda", "must be finite and non-negative"));
    }
    Ok(c.p1 + c.p2 + c.fewshot + lambda * c.adapt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{finite_diff_check, Tensor};
    use crate::proposals::{init_proposal_params, project_map};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sim(values: Vec<f64>, rows: usize, labels: Vec<usize>) -> SimilarityMatrix {
        let cols = values.len() / rows;
        SimilarityMatrix {
            rows,
            cols,
            values,
            row_labels: labels,
        }
    }

    fn micro_model() -> ProposalConfig {
        ProposalConfig {
            radius: 1,
            channels: 3,
            stride: 2,
            scales: vec![2.0, 4.0],
            context_cells: 1,
            hidden: 4,
            bins: 2,
            embed_dim: 4,
        }
    }

    fn encoder_store(model: &ProposalConfig, d: usize, seed: u64) -> ParamStore {
        let mut p = ParamStore::new();
        init_proposal_params(&mut p, model, d, &mut ChaCha8Rng::seed_from_u64(seed));
        p
    }

    #[test]
    fn zero_weights_encode_to_zero_and_width_is_checked() {
        let model = micro_model();
        let mut p = encoder_store(&model, 3, 1);
        let names: Vec<String> = p.names().map(str::to_owned).collect();
        for n in names {
            p.value_mut(&n).values_mut().fill(0.0);
        }
        assert_eq!(
            encode_exemplar(&p, &model, &[1.0, -2.0, 3.0]).unwrap(),
            vec![0.0; 4]
        );
        assert!(encode_exemplar(&p, &model, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exemplar_matches_an_isolated_segment_of_a_silent_query() {
        let model = micro_model();
        let p = encoder_store(&model, 3, 4);
        let clip = [0.6, -0.4, 1.1];
        let (pad, len) = (3, model.clip_rows());
        let mut rows = vec![0.0; pad * 3];
        rows.extend(clip.repeat(len));
        rows.extend(vec![0.0; pad * 3]);
        let query = Tensor::matrix(2 * pad + len, 3, rows).unwrap();
        let projected = project_map(&p, &model, &query).unwrap();
        let seg = Segment::new(pad as f64, (pad + len) as f64).unwrap();
        let (flat, _) = pool_segments(&projected.map, &[seg], model.bins).unwrap();
        let proposal = stage2_forward(&p, &flat, 1).unwrap().features;
        let exemplar = encode_exemplar(&p, &model, &clip).unwrap();
        assert!(proposal
            .iter()
            .zip(&exemplar)
            .all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(exemplar.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn cosine_examples() {
        let s = similarity_matrix(
            &[1.0, 2.0, 2.0],
            &[2.0, 1.0, 2.0, 1.0, 2.0, 2.0, 0.0, 0.0, 0.0],
            3,
            &[0],
        )
        .unwrap();
        assert!((s.get(0, 0) - 8.0 / 9.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(s.get(0, 2), 0.0);
        let o = similarity_matrix(&[1.0, 0.0], &[0.0, 3.0], 2, &[0]).unwrap();
        assert_eq!(o.values, vec![0.0]);
        let (ds, dr) = similarity_backward(&[1.0, 2.0, 2.0], &[0.0, 0.0, 0.0], 3, &[1.0]);
        assert!(ds.iter().chain(&dr).all(|&g| g == 0.0));
    }

    #[test]
    fn assignment_examples() {
        let one = sim(vec![0.1, -0.3, 0.9], 1, vec![0]);
        assert!(assign_labels(&one, 1).unwrap().iter().all(|a| a.label == 0));

        let col = sim(vec![0.2, 0.9, 0.1, 0.4, 0.3], 5, vec![0, 1, 2, 3, 4]);
        let a = assign_labels(&col, 5).unwrap();
        assert_eq!(
            a,
            vec![Assignment {
                label: 1,
                score: 0.9
            }]
        );

        let two = sim(vec![0.4, 0.6, 0.55, 0.35], 4, vec![0, 0, 1, 1]);
        let a = assign_labels(&two, 2).unwrap()[0];
        assert_eq!(a.label, 0);
        assert!((a.score - 0.5).abs() < 1e-15);

        let tie = sim(vec![0.3, 0.3], 2, vec![0, 1]);
        assert_eq!(assign_labels(&tie, 2).unwrap()[0].label, 0);
    }

    #[test]
    fn fewshot_loss_examples() {
        let uniform = sim(vec![0.2; 5 * 3], 5, vec![0, 1, 2, 3, 4]);
        let (l, _) = fewshot_cls_loss(&uniform, &[Some(0), Some(3), None], 5, 0.1).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);

        let margin = sim(vec![0.9, 0.1, 0.0, 0.2, 0.1], 5, vec![0, 1, 2, 3, 4]);
        let (l, _) = fewshot_cls_loss(&margin, &[Some(0)], 5, 0.1).unwrap();
        assert!(l < 5f64.ln());

        let (l, g) = fewshot_cls_loss(&margin, &[None], 5, 0.1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adaptation_examples() {
        let (l, _, _) = adaptation_loss(&[1.0, 0.0, 3.0, 2.0], &[2.0, 1.0], 2).unwrap();
        assert_eq!(l, 0.0);
        let (l, _, _) = adaptation_loss(&[1.0, 0.0], &[0.0, 0.0], 2).unwrap();
        assert_eq!(l, 1.0);
        let a = adaptation_loss(&[1.0, 5.0, 2.0, -1.0], &[0.5, 0.25], 2)
            .unwrap()
            .0;
        let b = adaptation_loss(&[0.5, 0.25], &[1.0, 5.0, 2.0, -1.0], 2)
            .unwrap()
            .0;
        assert_eq!(a, b);
        assert!(adaptation_loss(&[], &[1.0], 1).is_err());
    }

    #[test]
    fn normalized_rows_and_their_gradient() {
        let x = [3.0, 4.0, 0.0, 0.0];
        assert_eq!(normalize_rows(&x, 2), vec![0.6, 0.8, 0.0, 0.0]);
        assert_eq!(
            normalize_rows_backward(&x, 2, &[1.0, 1.0, 1.0, 1.0])[2..],
            [0.0, 0.0]
        );
        let x = [0.3, -1.2, 0.5, 2.0, 0.1, -0.4];
        let w = [0.7, -0.3, 1.1, 0.2, -0.9, 0.4];
        let f = |v: &[f64]| -> f64 {
            normalize_rows(v, 3)
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        let g = normalize_rows_backward(&x, 3, &w);
        for k in 0..x.len() {
            let (mut up, mut down) = (x, x);
            up[k] += 1e-6;
            down[k] -= 1e-6;
            assert!(((f(&up) - f(&down)) / 2e-6 - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn total_loss_examples() {
        let c = LossComponents {
            p1: 1.0,
            p2: 1.0,
            fewshot: 1.0,
            adapt: 2.0,
        };
        assert_eq!(total_loss(&c, 0.5, 0).unwrap(), 4.0);
        assert_eq!(total_loss(&c, 0.0, 0).unwrap(), 3.0);
        let bad = LossComponents {
            fewshot: f64::NAN,
            ..c
        };
        match total_loss(&bad, 0.5, 7) {
            Err(Error::NonFinite {
                iteration,
                component,
            }) => {
                assert_eq!(iteration, 7);
                assert_eq!(component, "L_fewshot");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn multi_shot_with_identical_rows_matches_one_shot() {
        let one = sim(vec![0.1, 0.7, 0.5, -0.2], 2, vec![0, 1]);
        let five = sim(
            [[0.1, 0.7].repeat(5), [0.5, -0.2].repeat(5)].concat(),
            10,
            [vec![0; 5], vec![1; 5]].concat(),
        );
        assert_eq!(
            assign_labels(&one, 2).unwrap(),
            assign_labels(&five, 2).unwrap()
        );
    }

    #[test]
    fn encoder_similarity_and_losses_pass_gradcheck() {
        let model = micro_model();
        let (d, e) = (3, model.embed_dim);
        let raw = [
            0.3, -0.2, 0.8, 0.9, 0.4, -0.5, -0.1, 0.7, 0.2, 0.6, 0.1, -0.3,
        ];
        let clear_of_kinks = |p: &ParamStore| {
            let enc = encode_exemplars(p, &model, &raw, 4).unwrap();
            enc.min_abs_preactivation() > 1e-3
                && enc.min_pool_margin() > 1e-3
                && enc.features.chunks(e).all(|r| r.iter().any(|&v| v > 1e-3))
        };
        let params = (0..)
            .map(|seed| encoder_store(&model, d, seed))
            .find(clear_of_kinks)
            .unwrap();
        let proposals = [0.5, 0.1, 0.0, 0.9, 0.2, 0.8, 0.4, 0.3, 0.7, 0.0, 0.6, 0.1];
        let labels = [0, 0, 1, 1];
        let loss = |p: &mut ParamStore| {
            let enc = encode_exemplars(p, &model, &raw, 4).unwrap();
            let s = similarity_matrix(&enc.features, &proposals, e, &labels).unwrap();
            let (l, d_sim) = fewshot_cls_loss(&s, &[Some(1), None, Some(0)], 2, 0.5).unwrap();
            let (ds, _) = similarity_backward(&enc.features, &proposals, e, &d_sim);
            let (la, _, da) = adaptation_loss(&proposals, &enc.features, e).unwrap();
            let grad: Vec<f64> = ds.iter().zip(&da).map(|(a, b)| a + 0.7 * b).collect();
            encode_backward(p, &enc, &grad);
            l + 0.7 * la
        };
        let report = finite_diff_check(loss, &params, 1e-6, 1e-5);
        assert!(report.passed(), "{report:?}");
    }

    proptest! {
        #[test]
        fn similarity_bounded_and_scale_invariant(
            s in prop::collection::vec(-2.0f64..2.0, 6),
            r in prop::collection::vec(-2.0f64..2.0, 9),
            scale in 0.01f64..100.0,
        ) {
            let a = similarity_matrix(&s, &r, 3, &[0, 1]).unwrap();
            prop_assert!(a.values.iter().all(|v| (-1.0..=1.0).contains(v)));
            let scaled: Vec<f64> = r.iter().map(|v| v * scale).collect();
            let b = similarity_matrix(&s, &scaled, 3, &[0, 1]).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert_eq!(assign_labels(&a, 2).unwrap().iter().map(|x| x.label).collect::<Vec<_>>(),
                            assign_labels(&b, 2).unwrap().iter().map(|x| x.label).collect::<Vec<_>>());
        }

        #[test]
        fn one_shot_assignment_is_column_argmax(values in prop::collection::vec(-1.0f64..1.0, 12)) {
            let m = sim(values.clone(), 4, vec![0, 1, 2, 3]);
            for (i, a) in assign_labels(&m, 4).unwrap().iter().enumerate() {
                let col: Vec<f64> = (0..4).map(|j| values[j * 3 + i]).collect();
                let best = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(a.label, col.iter().position(|&v| v == best).unwrap());
            }
        }

        #[test]
        fn adaptation_nonnegative_and_total_linear(
            p in prop::collection::vec(-3.0f64..3.0, 4),
            s in prop::collection::vec(-3.0f64..3.0, 4),
            lambda in 0.0f64..4.0,
        ) {
            let (l, _, _) = adaptation_loss(&p, &s, 2).unwrap();
            prop_assert!(l >= 0.0);
            let c = LossComponents { p1: 0.3, p2: 0.2, fewshot: 1.1, adapt: l };
            let t0 = total_loss(&c, 0.0, 0).unwrap();
            let t1 = total_loss(&c, 1.0, 0).unwrap();
            prop_assert!((total_loss(&c, lambda, 0).unwrap() - (t0 + lambda * (t1 - t0))).abs() < 1e-9);
        }
    }
}
