use super::geometry::{tiou, Segment};
use super::Proposal;

/// Greedy non-maximum suppression.
///
/// Candidates are visited by descending score, ties broken by earlier start and
/// then by input index. A candidate is dropped when its tIoU with an already
/// kept one exceeds `threshold`. Returns kept indices in visiting order.
pub fn nms_indices(segments: &[Segment], scores: &[f64], threshold: f64) -> Vec<usize> {
    assert_eq!(segments.len(), scores.len(), "one score per segment");
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| segments[a].start.total_cmp(&segments[b].start))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| tiou(&segments[k], &segments[i]) <= threshold)
        {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(proposals: &[Proposal], threshold: f64) -> Vec<Proposal> {
    let segments: Vec<Segment> = proposals.iter().map(|p| p.segment).collect();
    let scores: Vec<f64> = proposals.iter().map(|p| p.score).collect();
    nms_indices(&segments, &scores, threshold)
        .into_iter()
        .map(|i| proposals[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(start: f64, end: f64, score: f64) -> Proposal {
        Proposal {
            segment: Segment::new(start, end).unwrap(),
            score,
            stage: 1,
        }
    }

    #[test]
    fn single_and_disjoint() {
        assert_eq!(nms(&[p(0.0, 1.0, 0.2)], 0.7).len(), 1);
        let disjoint = [p(0.0, 1.0, 0.2), p(2.0, 3.0, 0.9), p(4.0, 6.0, 0.5)];
        let kept = nms(&disjoint, 0.7);
        assert_eq!(kept.len(), 3);
        assert_eq!(
            kept.iter().map(|k| k.score).collect::<Vec<_>>(),
            vec![0.9, 0.5, 0.2]
        );
    }

    #[test]
    fn overlapping_pair() {
        let kept = nms(&[p(0.0, 10.0, 0.9), p(1.0, 10.0, 0.8)], 0.7);
        assert_eq!(kept, vec![p(0.0, 10.0, 0.9)]);
    }

    #[test]
    fn ties_prefer_earlier_start_then_index() {
        let segs = [
            Segment::new(5.0, 15.0).unwrap(),
            Segment::new(4.0, 14.0).unwrap(),
        ];
        assert_eq!(nms_indices(&segs, &[0.5, 0.5], 0.5), vec![1]);
        let same = [
            Segment::new(0.0, 4.0).unwrap(),
            Segment::new(0.0, 4.0).unwrap(),
        ];
        assert_eq!(nms_indices(&same, &[0.5, 0.5], 0.5), vec![0]);
    }
}
