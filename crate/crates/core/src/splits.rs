//! Base/novel class partitions.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthcorpus::ClassCatalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    /// Novel classes restricted to those absent from the pretraining label set.
    Controlled,
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Random => "random",
            SplitMode::Controlled => "controlled",
        })
    }
}

/// Serialized as `{mode, seed, base, novel}` with ascending id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSplit {
    pub mode: SplitMode,
    pub seed: u64,
    pub base: Vec<usize>,
    pub novel: Vec<usize>,
}

impl ClassSplit {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("split serializes");
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config("split", e.to_string()))
    }

    /// Checks the partition property against a catalog.
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        let c = catalog.len();
        let mut seen = vec![false; c];
        for &id in self.base.iter().chain(&self.novel) {
            if id >= c || seen[id] {
                return Err(Error::config(
                    "split",
                    format!("class {id} out of range or listed twice"),
                ));
            }
            seen[id] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::config(
                "split",
                "split does not cover every catalog class",
            ));
        }
        if self.mode == SplitMode::Controlled
            && self
                .novel
                .iter()
                .any(|&id| catalog.classes[id].pretrain_visible)
        {
            return Err(Error::config(
                "split",
                "controlled split has a pretrain-visible novel class",
            ));
        }
        Ok(())
    }
}

fn partition(
    mut pool: Vec<usize>,
    all: usize,
    n_novel: usize,
    seed: u64,
    mode: SplitMode,
) -> ClassSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut novel = pool[..n_novel].to_vec();
    novel.sort_unstable();
    let base = (0..all)
        .filter(|id| novel.binary_search(id).is_err())
        .collect();
    ClassSplit {
        mode,
        seed,
        base,
        novel,
    }
}

pub fn random_split(catalog: &ClassCatalog, n_novel: usize, seed: u64) -> Result<ClassSplit> {
    let c = catalog.len();
    if n_novel == 0 || n_novel >= c {
        return Err(Error::config(
            "n_novel",
            format!("must lie in 1..{c}, got {n_novel}"),
        ));
    }
    Ok(partition(
        (0..c).collect(),
        c,
        n_novel,
        seed,
        SplitMode::Random,
    ))
}

pub fn controlled_split(catalog: &ClassCatalog, n_novel: usize, seed: u64) -> Result<ClassSplit> {
    let c = catalog.len();
    if n_novel == 0 || n_novel >= c {
        return Err(Error::config(
            "n_novel",
            format!("must lie in 1..{c}, got {n_novel}"),
        ));
    }
    let eligible: Vec<usize> = (0..c)
        .filter(|&i| !catalog.classes[i].pretrain_visible)
        .collect();
    if eligible.len() < n_novel {
        return Err(Error::InfeasibleSplit {
            requested: n_novel,
            available: eligible.len(),
        });
    }
    Ok(partition(eligible, c, n_novel, seed, SplitMode::Controlled))
}

pub fn make_split(
    catalog: &ClassCatalog,
    mode: SplitMode,
    n_novel: usize,
    seed: u64,
) -> Result<ClassSplit> {
    match mode {
        SplitMode::Random => random_split(catalog, n_novel, seed),
        SplitMode::Controlled => controlled_split(catalog, n_novel, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RhoStats {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub mode: SplitMode,
    pub base_count: usize,
    pub novel_count: usize,
    /// Novel classes that belong to the pretraining label set.
    pub novel_pretrain_overlap: usize,
    pub base_rho: Option<RhoStats>,
    pub novel_rho: Option<RhoStats>,
}

pub fn split_report(split: &ClassSplit, catalog: &ClassCatalog) -> SplitReport {
    let rho = |ids: &[usize]| RhoStats::of(ids.iter().map(|&i| catalog.classes[i].correlation));
    SplitReport {
        mode: split.mode,
        base_count: split.base.len(),
        novel_count: split.novel.len(),
        novel_pretrain_overlap: split
            .novel
            .iter()
            .filter(|&&i| catalog.classes[i].pretrain_visible)
            .count(),
        base_rho: rho(&split.base),
        novel_rho: rho(&split.novel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::ClassInfo;
    use proptest::prelude::*;

    fn catalog(n: usize, visible: impl Fn(usize) -> bool) -> ClassCatalog {
        ClassCatalog {
            classes: (0..n)
                .map(|i| ClassInfo {
                    name: format!("c{i}"),
                    prototype: vec![i as f64, 1.0],
                    pretrain_visible: visible(i),
                    correlation: if visible(i) { 1.0 } else { 0.25 },
                })
                .collect(),
            pretrain_prototypes: vec![vec![0.0, 1.0]; n],
            bias_direction: vec![1.0, 0.0],
            action_offset: vec![0.0, 0.0],
        }
    }

    #[test]
    fn random_split_sizes() {
        let cat = catalog(100, |_| false);
        let s = random_split(&cat, 20, 1).unwrap();
        assert_eq!((s.base.len(), s.novel.len()), (80, 20));
        let s = random_split(&cat, 99, 1).unwrap();
        assert_eq!(s.base.len(), 1);
        assert_eq!(
            random_split(&cat, 20, 5).unwrap(),
            random_split(&cat, 20, 5).unwrap()
        );
        assert!(random_split(&cat, 0, 1).is_err());
        assert!(random_split(&cat, 100, 1).is_err());
    }

    #[test]
    fn controlled_split_examples() {
        let cat = catalog(100, |i| i >= 63);
        let s = controlled_split(&cat, 20, 3).unwrap();
        assert_eq!(s.base.len(), 80);
        assert!(s.novel.iter().all(|&i| i < 63));

        let thumos = catalog(20, |i| i < 11);
        assert_eq!(
            thumos
                .classes
                .iter()
                .filter(|c| !c.pretrain_visible)
                .count(),
            9
        );
        let s = controlled_split(&thumos, 9, 0).unwrap();
        assert_eq!((s.base.len(), s.novel.len()), (11, 9));

        let all_visible = catalog(20, |_| true);
        match controlled_split(&all_visible, 5, 0) {
            Err(Error::InfeasibleSplit {
                requested: 5,
                available: 0,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn controlled_over_unconstrained_catalog_matches_random() {
        let cat = catalog(30, |_| false);
        let a = controlled_split(&cat, 6, 9).unwrap();
        let b = random_split(&cat, 6, 9).unwrap();
        assert_eq!(a.novel, b.novel);
    }

    #[test]
    fn report_counts_overlap() {
        let cat = catalog(40, |i| i % 3 == 0);
        let s = controlled_split(&cat, 10, 2).unwrap();
        let r = split_report(&s, &cat);
        assert_eq!(r.novel_pretrain_overlap, 0);
        assert_eq!(r.novel_rho.unwrap().max, 0.25);

        let all_visible = catalog(40, |_| true);
        let s = random_split(&all_visible, 10, 2).unwrap();
        let before = s.clone();
        assert_eq!(split_report(&s, &all_visible).novel_pretrain_overlap, 10);
        assert_eq!(s, before);
    }

    #[test]
    fn split_file_round_trip() {
        let cat = catalog(12, |_| false);
        let s = random_split(&cat, 3, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        s.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"mode\": \"random\""));
        assert_eq!(ClassSplit::load(&path).unwrap(), s);
    }

    proptest! {
        #[test]
        fn partition_and_disjointness_hold(
            n in 10usize..60,
            frac in 0.0f64..0.6,
            novel_frac in 0.05f64..0.4,
            seed in any::<u64>(),
            mask_seed in any::<u64>(),
        ) {
            let cat = catalog(n, |i| ((i as u64).wrapping_mul(0x9E37_79B9).wrapping_add(mask_seed) % 1000) as f64 / 1000.0 < frac);
            let n_novel = ((n as f64 * novel_frac) as usize).max(1);
            for mode in [SplitMode::Random, SplitMode::Controlled] {
                match make_split(&cat, mode, n_novel, seed) {
                    Ok(s) => {
                        prop_assert!(s.validate(&cat).is_ok());
                        prop_assert_eq!(s.novel.len(), n_novel);
                        prop_assert_eq!(&s, &make_split(&cat, mode, n_novel, seed).unwrap());
                    }
                    Err(Error::InfeasibleSplit { .. }) => prop_assert_eq!(mode, SplitMode::Controlled),
                    Err(e) => prop_assert!(false, "{e}"),
                }
            }
        }
    }
}
