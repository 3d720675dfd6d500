//! Class-agnostic temporal proposals: anchors, target assignment, SoI pooling,
//! NMS and the two-stage proposal network.

pub mod geometry;
pub mod network;
pub mod nms;
pub mod soi;
pub mod targets;

pub use geometry::{
    decode_offsets, encode_offsets, generate_anchors, tiou, AnchorSegment, Segment,
};
pub use network::{
    clip_windows, init_proposal_params, pool_segments, project_map, project_windows,
    projection_backward, row_windows, stage1_backward, stage1_forward, stage1_proposals,
    stage2_backward, stage2_forward, Projected, ProposalConfig, Stage1Output, Stage2Output,
};
pub use nms::{nms, nms_indices};
pub use soi::{pool_margin, soi_pool, soi_pool_backward, soi_pool_backward_into, Pooled};
pub use targets::{label_and_sample, SampleConfig, Target};

/// A scored candidate segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub segment: Segment,
    /// Foreground probability from a 2-way softmax.
    pub score: f64,
    /// 1 for stage-1 proposals, 2 after stage-2 refinement.
    pub stage: u8,
}
