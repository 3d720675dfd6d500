//! N-way k-shot episode sampling.
//!
//! An episode draws `N` classes from the phase's class subset, assigns them a
//! random label order, picks `k` exemplars per class for the support set and
//! one untrimmed query sequence sharing at least one class with the support.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splits::ClassSplit;
use crate::synthcorpus::{Corpus, ExemplarClip, UntrimmedSequence};

/// Class resampling attempts before giving up on finding a query.
pub const MAX_CLASS_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub phase: Phase,
    /// `classes[label]` is the catalog id behind episode label `label`.
    pub classes: Vec<usize>,
    pub shots: usize,
    /// Label-major: the `k` clips of label 0, then label 1, ...
    pub support: Vec<&'a ExemplarClip>,
    pub query_index: usize,
    pub query: &'a UntrimmedSequence,
}

impl Episode<'_> {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn label_of(&self, class_id: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class_id)
    }

    /// Episode label of each support row.
    pub fn support_labels(&self) -> Vec<usize> {
        (0..self.n_way())
            .flat_map(|l| std::iter::repeat_n(l, self.shots))
            .collect()
    }
}

/// Per-episode random stream: a pure function of `(master_seed, index)`.
pub fn episode_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Precomputed lookup tables for sampling episodes of one phase.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    corpus: &'a Corpus,
    phase: Phase,
    n_way: usize,
    shots: usize,
    pool: Vec<usize>,
    exemplars_by_class: Vec<Vec<usize>>,
    /// Sequences whose every GT class lies in `pool`, indexed by class.
    sequences_by_class: Vec<Vec<usize>>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(
        corpus: &'a Corpus,
        split: &ClassSplit,
        phase: Phase,
        n_way: usize,
        shots: usize,
    ) -> Result<Self> {
        let pool = match phase {
            Phase::Train => split.base.clone(),
            Phase::Test => split.novel.clone(),
        };
        if n_way == 0 || shots == 0 {
            return Err(Error::config(
                "n_way",
                "episodes need at least one class and one shot",
            ));
        }
        if pool.len() < n_way {
            return Err(Error::Sampling(format!(
                "{phase:?} subset has {} classes, fewer than N = {n_way}",
                pool.len()
            )));
        }
        let c = corpus.catalog.len();
        if let Some(&bad) = pool.iter().find(|&&id| id >= c) {
            return Err(Error::config(
                "split",
                format!("class {bad} not in corpus catalog"),
            ));
        }
        let mut in_pool = vec![false; c];
        pool.iter().for_each(|&id| in_pool[id] = true);
        let mut sequences_by_class = vec![Vec::new(); c];
        for (i, seq) in corpus.sequences.iter().enumerate() {
            let classes = seq.classes();
            if !classes.is_empty() && classes.iter().all(|&id| in_pool[id]) {
                classes
                    .iter()
                    .for_each(|&id| sequences_by_class[id].push(i));
            }
        }
        Ok(Self {
            corpus,
            phase,
            n_way,
            shots,
            pool,
            exemplars_by_class: corpus.exemplars_by_class(),
            sequences_by_class,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Episode<'a>> {
        for _ in 0..MAX_CLASS_RETRIES {
            let mut classes: Vec<usize> = index::sample(rng, self.pool.len(), self.n_way)
                .into_iter()
                .map(|i| self.pool[i])
                .collect();
            classes.shuffle(rng);

            let mut candidates: Vec<usize> = classes
                .iter()
                .flat_map(|&c| self.sequences_by_class[c].iter().copied())
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            if candidates.is_empty() {
                continue;
            }
            let query_index = candidates[rng.random_range(0..candidates.len())];

            let mut support = Vec::with_capacity(self.n_way * self.shots);
            for &c in &classes {
                let clips = &self.exemplars_by_class[c];
                if clips.len() < self.shots {
                    return Err(Error::Sampling(format!(
                        "class {c} has {} exemplars, fewer than k = {}",
                        clips.len(),
                        self.shots
                    )));
                }
                for i in index::sample(rng, clips.len(), self.shots) {
                    support.push(&self.corpus.exemplars[clips[i]]);
                }
            }
            return Ok(Episode {
                phase: self.phase,
                classes,
                shots: self.shots,
                support,
                query_index,
                query: &self.corpus.sequences[query_index],
            });
        }
        Err(Error::Sampling(format!(
            "no query sequence overlaps the sampled classes after {MAX_CLASS_RETRIES} attempts"
        )))
    }

    /// Episode `index` of the stream rooted at `master_seed`.
    pub fn episode(&self, master_seed: u64, index: u64) -> Result<Episode<'a>> {
        self.sample(&mut episode_rng(master_seed, index))
    }

    pub fn stream(
        &self,
        master_seed: u64,
        count: usize,
    ) -> impl Iterator<Item = Result<Episode<'a>>> + '_ {
        (0..count as u64).map(move |i| self.episode(master_seed, i))
    }
}

pub fn sample_train_episode<'a, R: Rng + ?Sized>(
    corpus: &'a Corpus,
    split: &ClassSplit,
    n_way: usize,
    shots: usize,
    rng: &mut R,
) -> Result<Episode<'a>> {
    EpisodeSampler::new(corpus, split, Phase::Train, n_way, shots)?.sample(rng)
}

pub fn sample_test_episode<'a, R: Rng + ?Sized>(
    corpus: &'a Corpus,
    split: &ClassSplit,
    n_way: usize,
    shots: usize,
    rng: &mut R,
) -> Result<Episode<'a>> {
    EpisodeSampler::new(corpus, split, Phase::Test, n_way, shots)?.sample(rng)
}

/// `count` reproducible episodes; episode `i` depends only on `(master_seed, i)`.
pub fn episode_stream<'a>(
    corpus: &'a Corpus,
    split: &ClassSplit,
    phase: Phase,
    n_way: usize,
    shots: usize,
    master_seed: u64,
    count: usize,
) -> Result<Vec<Episode<'a>>> {
    if count == 0 {
        return Err(Error::config("count", "episode count must be at least 1"));
    }
    let sampler = EpisodeSampler::new(corpus, split, phase, n_way, shots)?;
    sampler.stream(master_seed, count).collect()
}
