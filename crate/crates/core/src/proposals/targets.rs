use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{encode_offsets, tiou, AnchorSegment, Segment};
use crate::error::{Error, Result};

/// Target-assignment thresholds and batch composition for one proposal stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// Candidates with tIoU ≥ this against some GT are positive.
    pub pos_tiou: f64,
    /// Candidates whose best tIoU is below this are negative.
    pub neg_tiou: f64,
    /// Preferred lower edge of the negative band; candidates below it are used
    /// only when the band runs short.
    #[serde(default)]
    pub neg_floor: f64,
    pub batch_size: usize,
    pub pos_fraction: f64,
}

impl SampleConfig {
    pub fn stage1() -> Self {
        Self {
            pos_tiou: 0.7,
            neg_tiou: 0.3,
            neg_floor: 0.0,
            batch_size: 64,
            pos_fraction: 0.5,
        }
    }

    pub fn stage2() -> Self {
        Self {
            pos_tiou: 0.5,
            neg_tiou: 0.5,
            neg_floor: 0.1,
            batch_size: 64,
            pos_fraction: 0.5,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let ok = 0.0 <= self.neg_floor
            && self.neg_floor <= self.neg_tiou
            && self.neg_tiou <= self.pos_tiou
            && self.pos_tiou <= 1.0;
        if !ok {
            return Err(Error::config(
                field,
                "need 0 ≤ neg_floor ≤ neg_tiou ≤ pos_tiou ≤ 1",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config(field, "batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.pos_fraction) {
            return Err(Error::config(field, "pos_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One sampled training candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    /// Index into the candidate list.
    pub index: usize,
    pub foreground: bool,
    /// Best-matching GT for positives.
    pub gt: Option<usize>,
    /// Regression target against `gt`; zero for negatives.
    pub offsets: [f64; 2],
}

/// Labels candidates against the GT segments and samples a training batch.
///
/// Candidate extents are clipped to `[0, limit]` before matching. Every GT also
/// claims its best-matching candidate (smallest index on ties) as a positive.
/// Returned targets list positives then negatives, each in candidate order.
pub fn label_and_sample<R: Rng + ?Sized>(
    candidates: &[AnchorSegment],
    gts: &[Segment],
    limit: f64,
    config: &SampleConfig,
    rng: &mut R,
) -> Result<Vec<Target>> {
    config.validate("sample")?;
    let extents: Vec<Segment> = candidates.iter().map(|a| a.clipped(limit)).collect();
    let mut best: Vec<(f64, Option<usize>)> = vec![(0.0, None); candidates.len()];
    let mut claimed_by: Vec<Option<usize>> = vec![None; candidates.len()];
    for (g, gt) in gts.iter().enumerate() {
        let mut claim: Option<(usize, f64)> = None;
        for (i, ext) in extents.iter().enumerate() {
            let u = tiou(ext, gt);
            if best[i].1.is_none() || u > best[i].0 {
                best[i] = (u, Some(g));
            }
            if claim.is_none_or(|(_, c)| u > c) {
                claim = Some((i, u));
            }
        }
        if let Some((i, _)) = claim {
            claimed_by[i] = Some(g);
        }
    }
    // A forced positive below threshold regresses towards the GT that claimed it.
    for (i, claim) in claimed_by.iter().enumerate() {
        if claim.is_some() && best[i].0 < config.pos_tiou {
            best[i].1 = *claim;
        }
    }

    let mut pos = Vec::new();
    let mut band = Vec::new();
    let mut below = Vec::new();
    for i in 0..candidates.len() {
        let u = best[i].0;
        if claimed_by[i].is_some() || (!gts.is_empty() && u >= config.pos_tiou) {
            pos.push(i);
        } else if u < config.neg_tiou {
            if u >= config.neg_floor {
                band.push(i);
            } else {
                below.push(i);
            }
        }
    }
    if band.is_empty() && below.is_empty() {
        return Err(Error::contract(
            "no negative candidates available for target sampling",
        ));
    }

    let want_pos = (config.batch_size as f64 * config.pos_fraction).round() as usize;
    let n_pos = pos.len().min(want_pos);
    let n_neg = (config.batch_size - n_pos).min(band.len() + below.len());

    let mut chosen_pos = pick(rng, &pos, n_pos);
    let mut chosen_neg = pick(rng, &band, n_neg.min(band.len()));
    if n_neg > band.len() {
        chosen_neg.extend(pick(rng, &below, n_neg - band.len()));
    }
    chosen_pos.sort_unstable();
    chosen_neg.sort_unstable();

    let mut out = Vec::with_capacity(n_pos + n_neg);
    for i in chosen_pos {
        let g = best[i].1.expect("positives have a GT");
        out.push(Target {
            index: i,
            foreground: true,
            gt: Some(g),
            offsets: encode_offsets(&gts[g], &candidates[i])?,
        });
    }
    out.extend(chosen_neg.into_iter().map(|i| Target {
        index: i,
        foreground: false,
        gt: None,
        offsets: [0.0, 0.0],
    }));
    Ok(out)
}

fn pick<R: Rng + ?Sized>(rng: &mut R, from: &[usize], n: usize) -> Vec<usize> {
    if n >= from.len() {
        return from.to_vec();
    }
    index::sample(rng, from.len(), n)
        .into_iter()
        .map(|i| from[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposals::geometry::generate_anchors;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn exact_anchor_is_positive_with_zero_offsets() {
        let anchors = generate_anchors(96, 8, &[8.0, 16.0]).unwrap();
        let gt = anchors[5].extent();
        let t =
            label_and_sample(&anchors, &[gt], 96.0, &SampleConfig::stage1(), &mut rng()).unwrap();
        let hit = t.iter().find(|t| t.index == 5).unwrap();
        assert!(hit.foreground);
        assert_eq!(hit.offsets, [0.0, 0.0]);
    }

    #[test]
    fn disjoint_gts_only_force_their_best_anchor() {
        let anchors = vec![
            AnchorSegment {
                center: 10.0,
                length: 4.0,
            },
            AnchorSegment {
                center: 30.0,
                length: 4.0,
            },
            AnchorSegment {
                center: 50.0,
                length: 4.0,
            },
        ];
        let gt = Segment::new(70.0, 80.0).unwrap();
        let t =
            label_and_sample(&anchors, &[gt], 96.0, &SampleConfig::stage1(), &mut rng()).unwrap();
        let pos: Vec<usize> = t.iter().filter(|t| t.foreground).map(|t| t.index).collect();
        assert_eq!(pos, vec![0]);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn balanced_batch_when_plentiful() {
        // 40 copies of the GT and 40 disjoint candidates.
        let mut cands = vec![
            AnchorSegment {
                center: 10.0,
                length: 10.0
            };
            40
        ];
        cands.extend(vec![
            AnchorSegment {
                center: 80.0,
                length: 10.0
            };
            40
        ]);
        let gt = Segment::new(5.0, 15.0).unwrap();
        let t = label_and_sample(&cands, &[gt], 96.0, &SampleConfig::stage1(), &mut rng()).unwrap();
        let n_pos = t.iter().filter(|t| t.foreground).count();
        assert_eq!((n_pos, t.len() - n_pos), (32, 32));
    }

    #[test]
    fn scarce_positives_are_padded_with_negatives() {
        let mut cands = vec![
            AnchorSegment {
                center: 10.0,
                length: 10.0
            };
            3
        ];
        cands.extend(vec![
            AnchorSegment {
                center: 80.0,
                length: 10.0
            };
            100
        ]);
        let gt = Segment::new(5.0, 15.0).unwrap();
        let t = label_and_sample(&cands, &[gt], 96.0, &SampleConfig::stage1(), &mut rng()).unwrap();
        let n_pos = t.iter().filter(|t| t.foreground).count();
        assert_eq!((n_pos, t.len()), (3, 64));
    }

    #[test]
    fn stage2_band_prefers_partial_overlaps() {
        // Candidate 0 matches; 1 overlaps with tIoU 0.25 (in band); 2..=4 are disjoint.
        let cands = vec![
            AnchorSegment {
                center: 15.0,
                length: 10.0,
            },
            AnchorSegment {
                center: 21.0,
                length: 10.0,
            },
            AnchorSegment {
                center: 60.0,
                length: 10.0,
            },
            AnchorSegment {
                center: 70.0,
                length: 10.0,
            },
            AnchorSegment {
                center: 80.0,
                length: 10.0,
            },
        ];
        let gt = Segment::new(10.0, 20.0).unwrap();
        let cfg = SampleConfig {
            batch_size: 2,
            ..SampleConfig::stage2()
        };
        let t = label_and_sample(&cands, &[gt], 96.0, &cfg, &mut rng()).unwrap();
        assert_eq!(
            t.iter()
                .map(|t| (t.index, t.foreground))
                .collect::<Vec<_>>(),
            vec![(0, true), (1, false)]
        );
    }

    #[test]
    fn no_negatives_is_a_contract_error() {
        let cands = vec![AnchorSegment {
            center: 15.0,
            length: 10.0,
        }];
        let gt = Segment::new(10.0, 20.0).unwrap();
        assert!(
            label_and_sample(&cands, &[gt], 96.0, &SampleConfig::stage1(), &mut rng()).is_err()
        );
    }
}
