//! Brute-force reference implementations shared by the integration tests.

#![allow(dead_code)]

use fewshot_tad::diffmath::Tensor;
use fewshot_tad::engine::Detection;
use fewshot_tad::proposals::{tiou, Segment};

/// Greedy NMS written directly from its definition: position of every
/// candidate by pairwise comparison, then keep a candidate iff no better-placed
/// kept candidate overlaps it by more than `threshold`.
pub fn brute_nms(segments: &[Segment], scores: &[f64], threshold: f64) -> Vec<usize> {
    let n = segments.len();
    let beats = |a: usize, b: usize| {
        scores[a] > scores[b]
            || (scores[a] == scores[b]
                && (segments[a].start < segments[b].start
                    || (segments[a].start == segments[b].start && a < b)))
    };
    let mut slots = vec![usize::MAX; n];
    for i in 0..n {
        let place = (0..n).filter(|&j| j != i && beats(j, i)).count();
        slots[place] = i;
    }
    let mut kept: Vec<usize> = Vec::new();
    for &i in &slots {
        let suppressed = kept
            .iter()
            .any(|&k| tiou(&segments[k], &segments[i]) > threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// AP from an explicitly built precision/recall curve: detections ranked by
/// similarity then proposal score, matched one by one against every GT, and
/// precision interpolated as the maximum over all later points.
pub fn brute_ap(detections: &[Detection], gts: &[Segment], alpha: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let n = detections.len();
    let beats = |a: usize, b: usize| {
        let (x, y) = (&detections[a], &detections[b]);
        x.similarity > y.similarity
            || (x.similarity == y.similarity
                && (x.proposal_score > y.proposal_score
                    || (x.proposal_score == y.proposal_score && a < b)))
    };
    let mut ranked = vec![0usize; n];
    for i in 0..n {
        ranked[(0..n).filter(|&j| j != i && beats(j, i)).count()] = i;
    }

    let mut used = vec![false; gts.len()];
    let mut curve = Vec::with_capacity(n);
    let mut hits = 0usize;
    for (k, &i) in ranked.iter().enumerate() {
        let seg = detections[i].segment();
        let mut best: Option<usize> = None;
        for g in 0..gts.len() {
            if used[g] || tiou(&seg, &gts[g]) < alpha {
                continue;
            }
            match best {
                Some(b) if tiou(&seg, &gts[b]) >= tiou(&seg, &gts[g]) => {}
                _ => best = Some(g),
            }
        }
        if let Some(g) = best {
            used[g] = true;
            hits += 1;
        }
        curve.push((hits as f64 / (k + 1) as f64, hits as f64 / gts.len() as f64));
    }

    let mut ap = 0.0;
    let mut prev = 0.0;
    for k in 0..curve.len() {
        let p = curve[k..].iter().map(|c| c.0).fold(0.0, f64::max);
        ap += (curve[k].1 - prev) * p;
        prev = curve[k].1;
    }
    Some(ap)
}

/// Rows owned by each SoI bin.
pub fn brute_bins(segment: &Segment, rows: usize, bins: usize) -> Vec<Vec<usize>> {
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
    let n = hi - lo;
    (0..bins)
        .map(|b| {
            let first = lo + b * n / bins;
            let last = (lo + (b + 1) * n / bins).max(first + 1);
            (lo..hi).filter(|r| (first..last).contains(r)).collect()
        })
        .collect()
}

/// Per-bin, per-channel maximum by scanning the bin's rows.
pub fn brute_soi(map: &Tensor, segment: &Segment, bins: usize) -> Vec<f64> {
    let (rows, d) = map.shape2();
    let mut out = Vec::with_capacity(bins * d);
    for members in brute_bins(segment, rows, bins) {
        for ch in 0..d {
            out.push(
                members
                    .iter()
                    .map(|&r| map.row(r)[ch])
                    .fold(f64::NEG_INFINITY, f64::max),
            );
        }
    }
    out
}
