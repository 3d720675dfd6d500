use crate::error::{Error, Result};

/// Minimum length of a decoded segment, in feature units.
pub const MIN_SEGMENT_LENGTH: f64 = 1.0;

/// Half-open temporal interval `[start, end)` in feature units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::contract(format!("invalid segment [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Clips to `[0, limit]`, keeping at least [`MIN_SEGMENT_LENGTH`] (or `limit` if shorter).
    pub fn clipped(&self, limit: f64) -> Segment {
        let min_len = MIN_SEGMENT_LENGTH.min(limit);
        let mut start = self.start.clamp(0.0, limit);
        let mut end = self.end.clamp(0.0, limit);
        if end - start < min_len {
            if start + min_len <= limit {
                end = start + min_len;
            } else {
                start = limit - min_len;
                end = limit;
            }
        }
        Segment { start, end }
    }
}

/// Reference interval for offset regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSegment {
    pub center: f64,
    pub length: f64,
}

impl AnchorSegment {
    pub fn from_segment(s: &Segment) -> Self {
        Self {
            center: s.center(),
            length: s.length(),
        }
    }

    pub fn extent(&self) -> Segment {
        Segment {
            start: self.center - 0.5 * self.length,
            end: self.center + 0.5 * self.length,
        }
    }

    pub fn clipped(&self, limit: f64) -> Segment {
        self.extent().clipped(limit)
    }
}

/// Anchors centred on a stride grid over `[0, length)`: one per (position, scale),
/// position-major.
pub fn generate_anchors(
    length: usize,
    stride: usize,
    scales: &[f64],
) -> Result<Vec<AnchorSegment>> {
    if stride == 0 || length < stride {
        return Err(Error::contract(format!(
            "sequence length {length} must be at least the anchor stride {stride}"
        )));
    }
    if scales.is_empty() || scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::contract("anchor scales must be positive"));
    }
    let positions = length / stride;
    let mut anchors = Vec::with_capacity(positions * scales.len());
    for p in 0..positions {
        let center = (p as f64 + 0.5) * stride as f64;
        anchors.extend(
            scales
                .iter()
                .map(|&length| AnchorSegment { center, length }),
        );
    }
    Ok(anchors)
}

/// Temporal intersection over union.
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `(δc, δl) = ((c_gt − c_a)/l_a, ln(l_gt/l_a))`.
pub fn encode_offsets(gt: &Segment, anchor: &AnchorSegment) -> Result<[f64; 2]> {
    if !(gt.length() > 0.0 && anchor.length > 0.0) {
        return Err(Error::contract("encode_offsets needs positive lengths"));
    }
    Ok([
        (gt.center() - anchor.center) / anchor.length,
        (gt.length() / anchor.length).ln(),
    ])
}

/// Inverse of [`encode_offsets`], clipped to `[0, limit]`.
pub fn decode_offsets(anchor: &AnchorSegment, offsets: [f64; 2], limit: f64) -> Segment {
    // exp(30) already exceeds any plausible sequence length.
    let center = anchor.center + offsets[0] * anchor.length;
    let length = anchor.length * offsets[1].clamp(-30.0, 30.0).exp();
    let raw = Segment {
        start: center - 0.5 * length,
        end: center + 0.5 * length,
    };
    raw.clipped(limit)
}
