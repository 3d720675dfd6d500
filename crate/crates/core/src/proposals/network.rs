//! Two-stage class-agnostic proposal network.
//!
//! Raw feature rows first pass through a projection shared with the exemplar
//! stream: every row sees a window of `2·radius + 1` neighbouring rows and is
//! mapped to `channels` ReLU units, with zeros past the sequence ends.
//!
//! Stage 1 averages the projected map into `stride`-row cells and runs a
//! projection over a window of neighbouring cells at every cell position. Two
//! heads then emit, per anchor scale, a (background, foreground) logit pair and
//! `(δc, δl)` offsets. Stage 2 pools each stage-1 proposal with SoI pooling,
//! projects it, passes it through the shared embedding layer to obtain the
//! proposal feature, and rescores and refines it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{decode_offsets, generate_anchors, AnchorSegment};
use super::soi::{soi_pool, Pooled};
use super::{Proposal, Segment};
use crate::diffmath::{
    dense, dense_backward, foreground_probability, min_abs, relu_backward_slice, relu_slice,
    ParamStore, Tensor,
};
use crate::error::{Error, Result};

pub const FEATURE_PROJ_W: &str = "features.proj.w";
pub const FEATURE_PROJ_B: &str = "features.proj.b";
pub const STAGE1_PROJ_W: &str = "stage1.proj.w";
pub const STAGE1_PROJ_B: &str = "stage1.proj.b";
pub const STAGE1_SCORE_W: &str = "stage1.score.w";
pub const STAGE1_SCORE_B: &str = "stage1.score.b";
pub const STAGE1_OFFSET_W: &str = "stage1.offset.w";
pub const STAGE1_OFFSET_B: &str = "stage1.offset.b";
pub const STAGE2_PROJ_W: &str = "stage2.proj.w";
pub const STAGE2_PROJ_B: &str = "stage2.proj.b";
pub const STAGE2_SCORE_W: &str = "stage2.score.w";
pub const STAGE2_SCORE_B: &str = "stage2.score.b";
pub const STAGE2_OFFSET_W: &str = "stage2.offset.w";
pub const STAGE2_OFFSET_B: &str = "stage2.offset.b";
/// Final embedding layer shared by proposal and exemplar features.
pub const EMBED_W: &str = "embed.w";
pub const EMBED_B: &str = "embed.b";

mod defaults {
    pub fn radius() -> usize {
        2
    }
    pub fn channels() -> usize {
        64
    }
    pub fn stride() -> usize {
        8
    }
    pub fn scales() -> Vec<f64> {
        vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
    }
    pub fn context_cells() -> usize {
        4
    }
    pub fn hidden() -> usize {
        64
    }
    pub fn bins() -> usize {
        4
    }
    pub fn embed_dim() -> usize {
        64
    }
}

/// Shape hyperparameters of the proposal network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    /// Rows on each side of a row seen by the shared feature projection.
    #[serde(default = "defaults::radius")]
    pub radius: usize,
    /// Width of the projected feature map.
    #[serde(default = "defaults::channels")]
    pub channels: usize,
    /// Rows per stage-1 cell; also the anchor grid stride.
    #[serde(default = "defaults::stride")]
    pub stride: usize,
    /// Anchor lengths in feature rows.
    #[serde(default = "defaults::scales")]
    pub scales: Vec<f64>,
    /// Cells on each side of the centre cell seen by the stage-1 projection.
    #[serde(default = "defaults::context_cells")]
    pub context_cells: usize,
    /// Stage-1 hidden width.
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::bins")]
    pub bins: usize,
    /// Dimension of proposal and exemplar features.
    #[serde(default = "defaults::embed_dim")]
    pub embed_dim: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            radius: defaults::radius(),
            channels: defaults::channels(),
            stride: defaults::stride(),
            scales: defaults::scales(),
            context_cells: defaults::context_cells(),
            hidden: defaults::hidden(),
            bins: defaults::bins(),
            embed_dim: defaults::embed_dim(),
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::config("model.stride", "must be positive"));
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config(
                "model.scales",
                "need at least one positive scale",
            ));
        }
        for (field, v) in [
            ("model.channels", self.channels),
            ("model.hidden", self.hidden),
            ("model.bins", self.bins),
            ("model.embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    /// Rows in the window of the shared feature projection.
    pub fn taps(&self) -> usize {
        2 * self.radius + 1
    }

    /// Length of the clip an exemplar is laid out as; every SoI bin then
    /// holds a full window of clip rows.
    pub fn clip_rows(&self) -> usize {
        self.bins * self.taps()
    }

    pub fn stage1_input_dim(&self) -> usize {
        (2 * self.context_cells + 1) * self.channels
    }

    pub fn anchors(&self, length: usize) -> Result<Vec<AnchorSegment>> {
        generate_anchors(length, self.stride, &self.scales)
    }
}

/// Adds Glorot-initialised proposal-network weights (zero biases) to `params`.
pub fn init_proposal_params<R: Rng + ?Sized>(
    params: &mut ParamStore,
    config: &ProposalConfig,
    feature_dim: usize,
    rng: &mut R,
) {
    let s2 = 2 * config.num_scales();
    let e = config.embed_dim;
    let c = config.channels;
    let layers = [
        (
            FEATURE_PROJ_W,
            FEATURE_PROJ_B,
            config.taps() * feature_dim,
            c,
        ),
        (
            STAGE1_PROJ_W,
            STAGE1_PROJ_B,
            config.stage1_input_dim(),
            config.hidden,
        ),
        (STAGE1_SCORE_W, STAGE1_SCORE_B, config.hidden, s2),
        (STAGE1_OFFSET_W, STAGE1_OFFSET_B, config.hidden, s2),
        (STAGE2_PROJ_W, STAGE2_PROJ_B, config.bins * c, e),
        (EMBED_W, EMBED_B, e, e),
        (STAGE2_SCORE_W, STAGE2_SCORE_B, e, 2),
        (STAGE2_OFFSET_W, STAGE2_OFFSET_B, e, 2),
    ];
    for (w, b, fan_in, fan_out) in layers {
        params.insert_glorot(w, fan_in, fan_out, rng);
        params.insert_zeros(b, &[fan_out]);
    }
}

/// Output of the shared feature projection with its backward-pass state.
#[derive(Debug, Clone)]
pub struct Projected {
    pub rows: usize,
    input: Vec<f64>,
    pre: Vec<f64>,
    /// `rows × channels`.
    pub map: Tensor,
}

impl Projected {
    pub fn min_abs_preactivation(&self) -> f64 {
        min_abs(&self.pre)
    }
}

/// Concatenates the `2·radius + 1` rows around every row, with zeros past the
/// edges.
pub fn row_windows(features: &Tensor, radius: usize) -> Result<Vec<f64>> {
    let (rows, d) = match features.dims() {
        [r, d] if *r > 0 => (*r, *d),
        other => {
            return Err(Error::contract(format!(
                "feature map must be non-empty 2-D, got {other:?}"
            )))
        }
    };
    Ok(padded_windows(features.values(), rows, d, radius))
}

fn padded_windows(values: &[f64], rows: usize, d: usize, radius: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (2 * radius + 1) * d);
    for t in 0..rows {
        for o in 0..=2 * radius {
            match (t + o).checked_sub(radius).filter(|&r| r < rows) {
                Some(r) => out.extend_from_slice(&values[r * d..(r + 1) * d]),
                None => out.extend(std::iter::repeat_n(0.0, d)),
            }
        }
    }
    out
}

/// Windows of isolated clips: each `dim`-vector held for `rows` rows with
/// zeros on both sides, giving `rows` windows per clip.
pub fn clip_windows(raw: &[f64], dim: usize, radius: usize, rows: usize) -> Vec<f64> {
    raw.chunks(dim)
        .flat_map(|v| padded_windows(&v.repeat(rows), rows, dim, radius))
        .collect()
}

/// Applies the shared projection to `rows` pre-built windows.
pub fn project_windows(params: &ParamStore, windows: Vec<f64>, rows: usize) -> Result<Projected> {
    let w = params.value(FEATURE_PROJ_W);
    let (inp, out) = (w.dims()[0], w.dims()[1]);
    if windows.len() != rows * inp {
        return Err(Error::contract(format!(
            "feature projection expects {rows}×{inp} window values, got {}",
            windows.len()
        )));
    }
    let pre = dense(params, FEATURE_PROJ_W, FEATURE_PROJ_B, &windows, rows);
    let map = Tensor::from_raw(vec![rows, out], relu_slice(&pre));
    Ok(Projected {
        rows,
        input: windows,
        pre,
        map,
    })
}

/// Projects a `T×D` feature map.
pub fn project_map(
    params: &ParamStore,
    config: &ProposalConfig,
    features: &Tensor,
) -> Result<Projected> {
    let rows = features.dims().first().copied().unwrap_or(0);
    project_windows(params, row_windows(features, config.radius)?, rows)
}

/// Accumulates projection gradients given the gradient on the projected map.
pub fn projection_backward(params: &mut ParamStore, out: &Projected, d_map: &[f64]) {
    let mut d = d_map.to_vec();
    relu_backward_slice(&out.pre, &mut d);
    dense_backward(
        params,
        FEATURE_PROJ_W,
        FEATURE_PROJ_B,
        &out.input,
        out.rows,
        &d,
    );
}

/// Row-major `cells×D` means of consecutive `stride`-row blocks; trailing rows
/// that do not fill a cell are dropped.
pub fn cell_means(features: &Tensor, stride: usize) -> Result<(Vec<f64>, usize)> {
    let (rows, d) = match features.dims() {
        [r, d] => (*r, *d),
        other => {
            return Err(Error::contract(format!(
                "feature map must be 2-D, got {other:?}"
            )))
        }
    };
    if stride == 0 || rows < stride {
        return Err(Error::contract(format!(
            "{rows} rows cannot fill a {stride}-row cell"
        )));
    }
    let cells = rows / stride;
    let mut out = vec![0.0; cells * d];
    for c in 0..cells {
        let acc = &mut out[c * d..(c + 1) * d];
        for r in c * stride..(c + 1) * stride {
            for (a, v) in acc.iter_mut().zip(features.row(r)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= stride as f64);
    }
    Ok((out, cells))
}

/// Concatenates each cell with `context` neighbours per side, zero-padded.
fn window_inputs(cells: &[f64], n_cells: usize, d: usize, context: usize) -> Vec<f64> {
    let width = 2 * context + 1;
    let mut out = vec![0.0; n_cells * width * d];
    for p in 0..n_cells {
        for w in 0..width {
            let c = p as isize + w as isize - context as isize;
            if c >= 0 && (c as usize) < n_cells {
                let c = c as usize;
                let dst = (p * width + w) * d;
                out[dst..dst + d].copy_from_slice(&cells[c * d..(c + 1) * d]);
            }
        }
    }
    out
}

/// Stage-1 activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub positions: usize,
    pub num_scales: usize,
    rows: usize,
    stride: usize,
    context: usize,
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    /// `positions × 2S` logits; anchor `p·S + s` owns entries `2s, 2s+1` of row `p`.
    pub logits: Vec<f64>,
    /// Same layout as `logits`, holding `(δc, δl)`.
    pub offsets: Vec<f64>,
}

impl Stage1Output {
    pub fn num_anchors(&self) -> usize {
        self.positions * self.num_scales
    }

    pub fn anchor_logits(&self, a: usize) -> [f64; 2] {
        [self.logits[2 * a], self.logits[2 * a + 1]]
    }

    pub fn anchor_offsets(&self, a: usize) -> [f64; 2] {
        [self.offsets[2 * a], self.offsets[2 * a + 1]]
    }

    pub fn score(&self, a: usize) -> f64 {
        foreground_probability(self.anchor_logits(a))
    }

    /// Smallest |pre-activation| of the hidden layer (distance to the ReLU kink).
    pub fn min_abs_preactivation(&self) -> f64 {
        min_abs(&self.pre)
    }
}

/// Runs stage 1 on a projected map.
pub fn stage1_forward(
    params: &ParamStore,
    config: &ProposalConfig,
    features: &Tensor,
) -> Result<Stage1Output> {
    let d = features.dims().get(1).copied().unwrap_or(0);
    let in_dim = (2 * config.context_cells + 1) * d;
    if params.value(STAGE1_PROJ_W).dims()[0] != in_dim {
        return Err(Error::contract(format!(
            "stage-1 projection expects {} inputs, feature map gives {in_dim}",
            params.value(STAGE1_PROJ_W).dims()[0]
        )));
    }
    let (cells, n) = cell_means(features, config.stride)?;
    let input = window_inputs(&cells, n, d, config.context_cells);
    let pre = dense(params, STAGE1_PROJ_W, STAGE1_PROJ_B, &input, n);
    let hidden = relu_slice(&pre);
    let logits = dense(params, STAGE1_SCORE_W, STAGE1_SCORE_B, &hidden, n);
    let offsets = dense(params, STAGE1_OFFSET_W, STAGE1_OFFSET_B, &hidden, n);
    Ok(Stage1Output {
        positions: n,
        num_scales: config.num_scales(),
        rows: features.dims()[0],
        stride: config.stride,
        context: config.context_cells,
        input,
        pre,
        hidden,
        logits,
        offsets,
    })
}

/// Accumulates parameter gradients given upstream gradients on logits and
/// offsets, and returns the gradient on the input map (`rows × D`).
pub fn stage1_backward(
    params: &mut ParamStore,
    out: &Stage1Output,
    d_logits: &[f64],
    d_offsets: &[f64],
) -> Vec<f64> {
    let n = out.positions;
    let mut dh = dense_backward(
        params,
        STAGE1_SCORE_W,
        STAGE1_SCORE_B,
        &out.hidden,
        n,
        d_logits,
    );
    let dh2 = dense_backward(
        params,
        STAGE1_OFFSET_W,
        STAGE1_OFFSET_B,
        &out.hidden,
        n,
        d_offsets,
    );
    dh.iter_mut().zip(&dh2).for_each(|(a, b)| *a += b);
    relu_backward_slice(&out.pre, &mut dh);
    let d_input = dense_backward(params, STAGE1_PROJ_W, STAGE1_PROJ_B, &out.input, n, &dh);

    let width = 2 * out.context + 1;
    let d = d_input.len() / (n * width).max(1);
    let mut d_cells = vec![0.0; n * d];
    for p in 0..n {
        for w in 0..width {
            let c = p as isize + w as isize - out.context as isize;
            if c >= 0 && (c as usize) < n {
                let src = (p * width + w) * d;
                let c = c as usize;
                d_cells[c * d..(c + 1) * d]
                    .iter_mut()
                    .zip(&d_input[src..src + d])
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
    let mut d_map = vec![0.0; out.rows * d];
    let scale = 1.0 / out.stride as f64;
    for c in 0..n {
        for r in c * out.stride..(c + 1) * out.stride {
            d_map[r * d..(r + 1) * d]
                .iter_mut()
                .zip(&d_cells[c * d..(c + 1) * d])
                .for_each(|(a, b)| *a = b * scale);
        }
    }
    d_map
}

/// Decodes every anchor into a stage-1 proposal, in anchor order.
pub fn stage1_proposals(
    out: &Stage1Output,
    anchors: &[AnchorSegment],
    limit: f64,
) -> Vec<Proposal> {
    anchors
        .iter()
        .enumerate()
        .map(|(a, anchor)| Proposal {
            segment: decode_offsets(anchor, out.anchor_offsets(a), limit),
            score: out.score(a),
            stage: 1,
        })
        .collect()
}

/// Stage-2 activations for a batch of pooled proposals.
#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub count: usize,
    pub embed_dim: usize,
    input: Vec<f64>,
    pre_proj: Vec<f64>,
    proj: Vec<f64>,
    pre_embed: Vec<f64>,
    /// `count × embed_dim` proposal features.
    pub features: Vec<f64>,
    /// `count × 2` logits.
    pub logits: Vec<f64>,
    /// `count × 2` refinement offsets relative to the stage-1 segment.
    pub offsets: Vec<f64>,
}

impl Stage2Output {
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    pub fn proposal_logits(&self, i: usize) -> [f64; 2] {
        [self.logits[2 * i], self.logits[2 * i + 1]]
    }

    pub fn proposal_offsets(&self, i: usize) -> [f64; 2] {
        [self.offsets[2 * i], self.offsets[2 * i + 1]]
    }

    pub fn score(&self, i: usize) -> f64 {
        foreground_probability(self.proposal_logits(i))
    }

    pub fn min_abs_preactivation(&self) -> f64 {
        min_abs(&self.pre_proj).min(min_abs(&self.pre_embed))
    }
}

/// SoI-pools every segment and stacks the flattened results row-wise.
pub fn pool_segments(
    features: &Tensor,
    segments: &[Segment],
    bins: usize,
) -> Result<(Vec<f64>, Vec<Pooled>)> {
    let mut flat = Vec::new();
    let mut pooled = Vec::with_capacity(segments.len());
    for s in segments {
        let p = soi_pool(features, s, bins)?;
        flat.extend_from_slice(p.output.values());
        pooled.push(p);
    }
    Ok((flat, pooled))
}

/// Runs stage 2 on `count` rows of flattened pooled features (`bins·D` each).
pub fn stage2_forward(params: &ParamStore, pooled: &[f64], count: usize) -> Result<Stage2Output> {
    let in_dim = params.value(STAGE2_PROJ_W).dims()[0];
    if pooled.len() != count * in_dim {
        return Err(Error::contract(format!(
            "stage 2 expects {count}×{in_dim} pooled values, got {}",
            pooled.len()
        )));
    }
    let pre_proj = dense(params, STAGE2_PROJ_W, STAGE2_PROJ_B, pooled, count);
    let proj = relu_slice(&pre_proj);
    let pre_embed = dense(params, EMBED_W, EMBED_B, &proj, count);
    let features = relu_slice(&pre_embed);
    let logits = dense(params, STAGE2_SCORE_W, STAGE2_SCORE_B, &features, count);
    let offsets = dense(params, STAGE2_OFFSET_W, STAGE2_OFFSET_B, &features, count);
    Ok(Stage2Output {
        count,
        embed_dim: params.value(EMBED_W).dims()[1],
        input: pooled.to_vec(),
        pre_proj,
        proj,
        pre_embed,
        features,
        logits,
        offsets,
    })
}

/// Accumulates parameter gradients from upstream gradients on logits, offsets
/// and features, and returns the gradient on the pooled input.
pub fn stage2_backward(
    params: &mut ParamStore,
    out: &Stage2Output,
    d_logits: &[f64],
    d_offsets: &[f64],
    d_features: &[f64],
) -> Vec<f64> {
    let n = out.count;
    let mut df = dense_backward(
        params,
        STAGE2_SCORE_W,
        STAGE2_SCORE_B,
        &out.features,
        n,
        d_logits,
    );
    let df2 = dense_backward(
        params,
        STAGE2_OFFSET_W,
        STAGE2_OFFSET_B,
        &out.features,
        n,
        d_offsets,
    );
    df.iter_mut()
        .zip(&df2)
        .zip(d_features)
        .for_each(|((a, b), c)| *a += b + c);
    relu_backward_slice(&out.pre_embed, &mut df);
    let mut dp = dense_backward(params, EMBED_W, EMBED_B, &out.proj, n, &df);
    relu_backward_slice(&out.pre_proj, &mut dp);
    dense_backward(params, STAGE2_PROJ_W, STAGE2_PROJ_B, &out.input, n, &dp)
}
