//! Segment-of-interest max pooling over a `T×D` feature map.

use super::geometry::Segment;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// Pooled output plus the source row of every output entry (for the backward pass).
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    /// `bins×D`.
    pub output: Tensor,
    /// Row index in the feature map that produced each output entry, row-major like `output`.
    pub argmax: Vec<usize>,
}

/// Row range covered by `segment`, expanded to at least one row.
pub fn segment_rows(segment: &Segment, rows: usize) -> (usize, usize) {
    let limit = rows as f64;
    let mut lo = segment.start.clamp(0.0, limit).floor() as usize;
    let mut hi = segment.end.clamp(0.0, limit).ceil() as usize;
    if hi <= lo {
        if lo < rows {
            hi = lo + 1;
        } else {
            lo = rows - 1;
            hi = rows;
        }
    }
    (lo, hi)
}

/// Contiguous, non-empty row ranges of each bin. When the segment spans fewer
/// rows than bins, neighbouring bins share rows.
pub fn bin_ranges(lo: usize, hi: usize, bins: usize) -> Vec<(usize, usize)> {
    let n = hi - lo;
    (0..bins)
        .map(|b| {
            let a = lo + b * n / bins;
            let e = (lo + (b + 1) * n / bins).max(a + 1);
            (a, e)
        })
        .collect()
}

pub fn soi_pool(map: &Tensor, segment: &Segment, bins: usize) -> Result<Pooled> {
    let (rows, d) = match map.dims() {
        [r, d] => (*r, *d),
        other => {
            return Err(Error::contract(format!(
                "feature map must be 2-D, got {other:?}"
            )))
        }
    };
    if bins == 0 {
        return Err(Error::contract("soi_pool needs at least one bin"));
    }
    let (lo, hi) = segment_rows(segment, rows);
    let mut output = Vec::with_capacity(bins * d);
    let mut argmax = Vec::with_capacity(bins * d);
    for (a, e) in bin_ranges(lo, hi, bins) {
        for ch in 0..d {
            let mut best_row = a;
            let mut best = map.values()[a * d + ch];
            for r in a + 1..e {
                let v = map.values()[r * d + ch];
                if v > best {
                    best = v;
                    best_row = r;
                }
            }
            output.push(best);
            argmax.push(best_row);
        }
    }
    Ok(Pooled {
        output: Tensor::from_raw(vec![bins, d], output),
        argmax,
    })
}

/// Routes `d_output` (`bins×D`) back onto the argmax rows of a `rows×D` map.
pub fn soi_pool_backward(pooled: &Pooled, d_output: &[f64], rows: usize) -> Tensor {
    let d = pooled.output.dims()[1];
    let mut grad = vec![0.0; rows * d];
    soi_pool_backward_into(pooled, d_output, &mut grad);
    Tensor::from_raw(vec![rows, d], grad)
}

/// Like [`soi_pool_backward`] but adds into an existing row-major map gradient.
pub fn soi_pool_backward_into(pooled: &Pooled, d_output: &[f64], grad: &mut [f64]) {
    let d = pooled.output.dims()[1];
    for (i, (&row, &g)) in pooled.argmax.iter().zip(d_output).enumerate() {
        grad[row * d + i % d] += g;
    }
}

/// Smallest gap between the winning and runner-up rows over every bin and
/// channel whose maximum is positive; infinite when there is no such pair.
pub fn pool_margin(map: &Tensor, segment: &Segment, bins: usize) -> f64 {
    let (rows, d) = (map.dims()[0], map.dims()[1]);
    let (lo, hi) = segment_rows(segment, rows);
    let mut margin = f64::INFINITY;
    for (a, e) in bin_ranges(lo, hi, bins) {
        for ch in 0..d {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for r in a..e {
                let v = map.values()[r * d + ch];
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            if first > 0.0 && second.is_finite() {
                margin = margin.min(first - second);
            }
        }
    }
    margin
}
