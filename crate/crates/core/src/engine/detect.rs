use serde::{Deserialize, Serialize};

use super::config::EvalConfig;
use super::train::EpisodeData;
use crate::diffmath::ParamStore;
use crate::error::Result;
use crate::fewshot::{assign_labels, encode_exemplars, similarity_matrix};
use crate::proposals::{
    decode_offsets, nms_indices, pool_segments, project_map, stage1_forward, stage1_proposals,
    stage2_forward, AnchorSegment, ProposalConfig, Segment,
};

/// A labelled, scored segment in one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub start: f64,
    pub end: f64,
    /// Episode label.
    pub label: usize,
    pub proposal_score: f64,
    pub similarity: f64,
}

impl Detection {
    pub fn segment(&self) -> Segment {
        Segment {
            start: self.start,
            end: self.end,
        }
    }
}

/// Scored, labelled stage-2 proposals before any threshold is applied.
/// Ordered by descending stage-1 score (the NMS visiting order).
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub items: Vec<Detection>,
}

/// Runs both proposal stages and the similarity network on one episode.
pub fn score_candidates(
    params: &ParamStore,
    model: &ProposalConfig,
    data: &EpisodeData,
    nms_threshold: f64,
    top_k: usize,
) -> Result<Candidates> {
    let length = data.query.dims()[0];
    let limit = length as f64;
    let anchors = model.anchors(length)?;
    let projected = project_map(params, model, &data.query)?;
    let s1 = stage1_forward(params, model, &projected.map)?;
    let proposals = stage1_proposals(&s1, &anchors, limit);
    let segs: Vec<Segment> = proposals.iter().map(|p| p.segment).collect();
    let scores: Vec<f64> = proposals.iter().map(|p| p.score).collect();
    let kept: Vec<Segment> = nms_indices(&segs, &scores, nms_threshold)
        .into_iter()
        .take(top_k)
        .map(|i| segs[i])
        .collect();
    if kept.is_empty() {
        return Ok(Candidates { items: Vec::new() });
    }

    let (pooled, _) = pool_segments(&projected.map, &kept, model.bins)?;
    let s2 = stage2_forward(params, &pooled, kept.len())?;
    let support = encode_exemplars(params, model, &data.support_raw, data.support_labels.len())?;
    let sim = similarity_matrix(
        &support.features,
        &s2.features,
        s2.embed_dim,
        &data.support_labels,
    )?;
    let assigned = assign_labels(&sim, data.n_way)?;

    let items = kept
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let refined = decode_offsets(
                &AnchorSegment::from_segment(seg),
                s2.proposal_offsets(i),
                limit,
            );
            Detection {
                start: refined.start,
                end: refined.end,
                label: assigned[i].label,
                proposal_score: s2.score(i),
                similarity: assigned[i].score,
            }
        })
        .collect();
    Ok(Candidates { items })
}

/// Applies both score thresholds and, optionally, per-label NMS ranked by
/// proposal score.
pub fn filter_detections(
    candidates: &Candidates,
    proposal_threshold: f64,
    similarity_threshold: f64,
    per_class_nms: Option<f64>,
) -> Vec<Detection> {
    let kept: Vec<Detection> = candidates
        .items
        .iter()
        .filter(|d| d.proposal_score >= proposal_threshold && d.similarity >= similarity_threshold)
        .copied()
        .collect();
    let Some(threshold) = per_class_nms else {
        return kept;
    };
    let mut labels: Vec<usize> = kept.iter().map(|d| d.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut out = Vec::with_capacity(kept.len());
    for l in labels {
        let group: Vec<&Detection> = kept.iter().filter(|d| d.label == l).collect();
        let segs: Vec<Segment> = group.iter().map(|d| d.segment()).collect();
        let scores: Vec<f64> = group.iter().map(|d| d.proposal_score).collect();
        out.extend(
            nms_indices(&segs, &scores, threshold)
                .into_iter()
                .map(|i| *group[i]),
        );
    }
    out
}

/// Full two-step inference on one episode.
pub fn detect(
    params: &ParamStore,
    model: &ProposalConfig,
    data: &EpisodeData,
    eval: &EvalConfig,
) -> Result<Vec<Detection>> {
    let c = score_candidates(params, model, data, eval.nms_threshold, eval.top_k)?;
    Ok(filter_detections(
        &c,
        eval.proposal_threshold,
        eval.similarity_threshold,
        eval.per_class_nms.then_some(eval.nms_threshold),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(start: f64, end: f64, label: usize, p: f64, s: f64) -> Detection {
        Detection {
            start,
            end,
            label,
            proposal_score: p,
            similarity: s,
        }
    }

    #[test]
    fn threshold_boundaries() {
        let c = Candidates {
            items: vec![
                det(0.0, 10.0, 0, 0.9, 0.8),
                det(20.0, 30.0, 1, 0.4, 0.2),
                det(1.0, 10.0, 0, 0.6, 0.7),
            ],
        };
        assert!(filter_detections(&c, 1.0, 1.0, Some(0.7)).is_empty());
        assert_eq!(filter_detections(&c, 0.0, 0.0, None).len(), 3);
        // Same-label overlap (tIoU 0.9) is suppressed in favour of the higher proposal score.
        let kept = filter_detections(&c, 0.0, 0.0, Some(0.7));
        assert_eq!(
            kept,
            vec![det(0.0, 10.0, 0, 0.9, 0.8), det(20.0, 30.0, 1, 0.4, 0.2)]
        );
    }

    proptest! {
        #[test]
        fn raising_proposal_threshold_never_adds_detections(
            raw in prop::collection::vec((0.0f64..80.0, 1.0f64..16.0, 0usize..3, 0.0f64..1.0, -1.0f64..1.0), 0..24),
            lo in 0.0f64..1.0, delta in 0.0f64..1.0,
        ) {
            let c = Candidates { items: raw.iter().map(|&(s, l, lab, p, q)| det(s, s + l, lab, p, q)).collect() };
            let hi = (lo + delta).min(1.0);
            let a = filter_detections(&c, lo, 0.0, Some(0.7)).len();
            let b = filter_detections(&c, hi, 0.0, Some(0.7)).len();
            prop_assert!(b <= a);
        }
    }
}
