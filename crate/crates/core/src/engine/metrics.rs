//! Average precision over temporal detections.

use super::detect::Detection;
use crate::proposals::{tiou, Segment};

/// tIoU thresholds of the average-mAP protocol: 0.50, 0.55, ..., 0.95.
pub fn average_map_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Ranking order: similarity descending, then proposal score descending, then input order.
pub fn rank_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&detections[a], &detections[b]);
        y.similarity
            .total_cmp(&x.similarity)
            .then(y.proposal_score.total_cmp(&x.proposal_score))
            .then(a.cmp(&b))
    });
    order
}

/// Single-class AP at tIoU `alpha` with all-point interpolation.
///
/// Detections are matched greedily in rank order, each to the unmatched GT
/// with the highest tIoU (≥ `alpha`). Returns `None` when there is no GT.
pub fn ap_at_tiou(detections: &[Detection], gts: &[Segment], alpha: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut matched = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(detections.len());
    for i in rank_order(detections) {
        let seg = detections[i].segment();
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched[g] {
                continue;
            }
            let u = tiou(&seg, gt);
            if u >= alpha && best.is_none_or(|(_, b)| u > b) {
                best = Some((g, u));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
        }
        tp.push(best.is_some());
    }

    let n = gts.len() as f64;
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &hit) in tp.iter().enumerate() {
        hits += usize::from(hit);
        precision.push(hits as f64 / (k + 1) as f64);
        recall.push(hits as f64 / n);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Some(ap)
}

/// A GT segment carrying its episode label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSegment {
    pub segment: Segment,
    pub label: usize,
}

/// Mean AP over labels present in `gts`; 0 when no label is present.
pub fn map_at_tiou(detections: &[Detection], gts: &[LabeledSegment], alpha: f64) -> f64 {
    let mut labels: Vec<usize> = gts.iter().map(|g| g.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .map(|&l| {
            let dets: Vec<Detection> = detections
                .iter()
                .filter(|d| d.label == l)
                .copied()
                .collect();
            let segs: Vec<Segment> = gts
                .iter()
                .filter(|g| g.label == l)
                .map(|g| g.segment)
                .collect();
            ap_at_tiou(&dets, &segs, alpha).expect("label has GT")
        })
        .sum();
    total / labels.len() as f64
}

/// Mean of [`map_at_tiou`] over [`average_map_thresholds`].
pub fn average_map(detections: &[Detection], gts: &[LabeledSegment]) -> f64 {
    let t = average_map_thresholds();
    t.iter()
        .map(|&a| map_at_tiou(detections, gts, a))
        .sum::<f64>()
        / t.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(start: f64, end: f64, label: usize, sim: f64) -> Detection {
        Detection {
            start,
            end,
            label,
            proposal_score: 0.5,
            similarity: sim,
        }
    }

    fn seg(a: f64, b: f64) -> Segment {
        Segment::new(a, b).unwrap()
    }

    #[test]
    fn threshold_grid() {
        let t = average_map_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn ap_examples() {
        let gt = [seg(10.0, 20.0)];
        assert_eq!(ap_at_tiou(&[det(10.0, 20.0, 0, 0.9)], &gt, 0.5), Some(1.0));
        assert_eq!(ap_at_tiou(&[], &gt, 0.5), Some(0.0));
        assert_eq!(ap_at_tiou(&[det(10.0, 20.0, 0, 0.9)], &[], 0.5), None);
        let tp_then_fp = [det(10.0, 20.0, 0, 0.9), det(50.0, 60.0, 0, 0.5)];
        assert_eq!(ap_at_tiou(&tp_then_fp, &gt, 0.5), Some(1.0));
        let fp_then_tp = [det(10.0, 20.0, 0, 0.5), det(50.0, 60.0, 0, 0.9)];
        assert_eq!(ap_at_tiou(&fp_then_tp, &gt, 0.5), Some(0.5));
    }

    #[test]
    fn duplicates_count_as_false_positives() {
        let gt = [seg(0.0, 10.0), seg(30.0, 40.0)];
        let d = [
            det(0.0, 10.0, 0, 0.9),
            det(0.0, 10.0, 0, 0.8),
            det(30.0, 40.0, 0, 0.7),
        ];
        // PR points: (1/2, 1), (1/2, 1/2), (1, 2/3) -> envelope 1 then 2/3.
        let ap = ap_at_tiou(&d, &gt, 0.5).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn episode_map_and_average_map() {
        let gts = [
            LabeledSegment {
                segment: seg(0.0, 10.0),
                label: 0,
            },
            LabeledSegment {
                segment: seg(20.0, 30.0),
                label: 2,
            },
        ];
        let perfect = [det(0.0, 10.0, 0, 0.9), det(20.0, 30.0, 2, 0.9)];
        assert_eq!(map_at_tiou(&perfect, &gts, 0.5), 1.0);
        assert_eq!(average_map(&perfect, &gts), 1.0);
        // Label 1 has no GT and is excluded; label 2 has no detections (AP 0).
        let partial = [det(0.0, 10.0, 0, 0.9), det(40.0, 50.0, 1, 0.9)];
        assert_eq!(map_at_tiou(&partial, &gts, 0.5), 0.5);

        let shifted = [det(0.0, 12.0, 0, 0.9)];
        let manual: f64 = average_map_thresholds()
            .iter()
            .map(|&a| map_at_tiou(&shifted, &gts[..1], a))
            .sum::<f64>()
            / 10.0;
        assert_eq!(average_map(&shifted, &gts[..1]), manual);
    }
}
