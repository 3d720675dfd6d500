//! Episode evaluation and the three studies built on it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EvalConfig, TrainConfig};
use super::detect::{filter_detections, score_candidates, Detection};
use super::metrics::{average_map, map_at_tiou, LabeledSegment};
use super::model::Model;
use super::train::{train, EpisodeData};
use crate::episodes::{EpisodeSampler, Phase};
use crate::error::{Error, Result};
use crate::splits::{make_split, ClassSplit, SplitMode};
use crate::synthcorpus::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub query: usize,
    pub classes: Vec<usize>,
    pub detections: usize,
    pub map50: f64,
    pub average_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub count: usize,
    pub config: EvalConfig,
    pub mean_map50: f64,
    pub std_map50: f64,
    pub mean_average_map: f64,
    pub std_average_map: f64,
    pub episodes: Vec<EpisodeResult>,
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    fn assemble(config: &EvalConfig, episodes: Vec<EpisodeResult>) -> Self {
        let m50: Vec<f64> = episodes.iter().map(|e| e.map50).collect();
        let avg: Vec<f64> = episodes.iter().map(|e| e.average_map).collect();
        let (mean_map50, std_map50) = mean_std(&m50);
        let (mean_average_map, std_average_map) = mean_std(&avg);
        Self {
            seed: config.seed,
            count: config.count,
            config: config.clone(),
            mean_map50,
            std_map50,
            mean_average_map,
            std_average_map,
            episodes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        format!(
            "mAP@0.5 {:.4} ± {:.4} | average mAP {:.4} ± {:.4} | {} episodes",
            self.mean_map50,
            self.std_map50,
            self.mean_average_map,
            self.std_average_map,
            self.count
        )
    }
}

/// Per-episode scored candidates plus the labelled GT, shared across thresholds.
struct ScoredEpisode {
    index: usize,
    query: usize,
    classes: Vec<usize>,
    candidates: super::detect::Candidates,
    gts: Vec<LabeledSegment>,
}

fn score_episodes(
    model: &Model,
    corpus: &Corpus,
    split: &ClassSplit,
    eval: &EvalConfig,
) -> Result<Vec<ScoredEpisode>> {
    eval.validate()?;
    split.validate(&corpus.catalog)?;
    let view = model.view(corpus)?;
    let sampler = EpisodeSampler::new(&view, split, Phase::Test, eval.n_way, eval.shots)?;
    (0..eval.count)
        .into_par_iter()
        .map(|index| {
            let episode = sampler.episode(eval.seed, index as u64)?;
            let data = EpisodeData::from_episode(&episode)?;
            let candidates = score_candidates(
                &model.params,
                &model.config,
                &data,
                eval.nms_threshold,
                eval.top_k,
            )?;
            let gts = data
                .gts
                .iter()
                .filter_map(|&(segment, label)| {
                    label.map(|label| LabeledSegment { segment, label })
                })
                .collect();
            Ok(ScoredEpisode {
                index,
                query: episode.query_index,
                classes: episode.classes.clone(),
                candidates,
                gts,
            })
        })
        .collect()
}

fn report_at(scored: &[ScoredEpisode], eval: &EvalConfig) -> EvalReport {
    let episodes = scored
        .par_iter()
        .map(|s| {
            let dets: Vec<Detection> = filter_detections(
                &s.candidates,
                eval.proposal_threshold,
                eval.similarity_threshold,
                eval.per_class_nms.then_some(eval.nms_threshold),
            );
            EpisodeResult {
                index: s.index,
                query: s.query,
                classes: s.classes.clone(),
                detections: dets.len(),
                map50: map_at_tiou(&dets, &s.gts, 0.5),
                average_map: average_map(&dets, &s.gts),
            }
        })
        .collect();
    EvalReport::assemble(eval, episodes)
}

/// Runs `eval.count` test episodes (rooted at `eval.seed`) and aggregates their metrics.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    split: &ClassSplit,
    eval: &EvalConfig,
) -> Result<EvalReport> {
    Ok(report_at(
        &score_episodes(model, corpus, split, eval)?,
        eval,
    ))
}

/// [`evaluate`] on a dedicated pool of `threads` workers.
pub fn evaluate_with_threads(
    model: &Model,
    corpus: &Corpus,
    split: &ClassSplit,
    eval: &EvalConfig,
    threads: usize,
) -> Result<EvalReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    pool.install(|| evaluate(model, corpus, split, eval))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub map50: f64,
    pub average_map: f64,
}

/// Evaluates once per proposal-score threshold on a shared episode stream.
pub fn sweep_proposal_threshold(
    model: &Model,
    corpus: &Corpus,
    split: &ClassSplit,
    eval: &EvalConfig,
    thresholds: &[f64],
) -> Result<Vec<ThresholdRow>> {
    if thresholds.is_empty() {
        return Err(Error::config("grid", "threshold grid is empty"));
    }
    for &t in thresholds {
        EvalConfig {
            proposal_threshold: t,
            ..eval.clone()
        }
        .validate()?;
    }
    let scored = score_episodes(model, corpus, split, eval)?;
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let r = report_at(
                &scored,
                &EvalConfig {
                    proposal_threshold: threshold,
                    ..eval.clone()
                },
            );
            ThresholdRow {
                threshold,
                map50: r.mean_map50,
                average_map: r.mean_average_map,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub map50: f64,
    pub average_map: f64,
    pub final_adaptation_loss: f64,
}

/// Default adaptation-weight grid.
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.0, 0.1, 0.5, 1.0];

/// Trains and evaluates once per λ with shared seeds.
pub fn sweep_lambda(
    train_config: &TrainConfig,
    corpus: &Corpus,
    split: &ClassSplit,
    eval: &EvalConfig,
    lambdas: &[f64],
) -> Result<Vec<LambdaRow>> {
    if lambdas.is_empty() {
        return Err(Error::config("grid", "lambda grid is empty"));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = TrainConfig {
                lambda,
                ..train_config.clone()
            };
            let out = train(&cfg, corpus, split)?;
            let r = evaluate(&out.model, corpus, split, eval)?;
            Ok(LambdaRow {
                lambda,
                map50: r.mean_map50,
                average_map: r.mean_average_map,
                final_adaptation_loss: out.final_adaptation_loss(),
            })
        })
        .collect()
}

pub fn threshold_csv(rows: &[ThresholdRow]) -> String {
    let mut s = String::from("threshold,map50,average_map\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.threshold, r.map50, r.average_map));
    }
    s
}

pub fn lambda_csv(rows: &[LambdaRow]) -> String {
    let mut s = String::from("lambda,map50,average_map,final_adaptation_loss\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.lambda, r.map50, r.average_map, r.final_adaptation_loss
        ));
    }
    s
}

/// One base/novel partition to train and evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub n_novel: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub mode: SplitMode,
    pub split_seed: u64,
    pub map50: f64,
    pub average_map: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: SplitMode,
    pub splits: usize,
    pub mean_map50: f64,
    pub std_map50: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitComparison {
    pub rows: Vec<SplitRow>,
    pub summary: Vec<ModeSummary>,
}

impl SplitComparison {
    pub fn summary_for(&self, mode: SplitMode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("mode,split_seed,map50,average_map\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.mode, r.split_seed, r.map50, r.average_map
            ));
        }
        s
    }

    /// Mean ± sample standard deviation of mAP@0.5 per split mode.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("mode,splits,mean_map50,std_map50\n");
        for m in &self.summary {
            s.push_str(&format!(
                "{},{},{},{}\n",
                m.mode, m.splits, m.mean_map50, m.std_map50
            ));
        }
        s
    }
}

/// `count` random and `count` controlled split specs with seeds `first_seed..`.
pub fn default_split_specs(
    n_random: usize,
    n_controlled: usize,
    n_novel: usize,
    first_seed: u64,
) -> Vec<SplitSpec> {
    let random = (0..n_random).map(|i| SplitSpec {
        mode: SplitMode::Random,
        n_novel,
        seed: first_seed + i as u64,
    });
    let controlled = (0..n_controlled).map(|i| SplitSpec {
        mode: SplitMode::Controlled,
        n_novel,
        seed: first_seed + i as u64,
    });
    random.chain(controlled).collect()
}

/// Trains and evaluates one model per split spec and aggregates per mode.
pub fn compare_splits(
    corpus: &Corpus,
    train_config: &TrainConfig,
    eval: &EvalConfig,
    specs: &[SplitSpec],
) -> Result<SplitComparison> {
    if specs.len() < 2 {
        return Err(Error::config("splits", "need at least two split specs"));
    }
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let split = make_split(&corpus.catalog, spec.mode, spec.n_novel, spec.seed)?;
        let out = train(train_config, corpus, &split)?;
        let r = evaluate(&out.model, corpus, &split, eval)?;
        rows.push(SplitRow {
            mode: spec.mode,
            split_seed: spec.seed,
            map50: r.mean_map50,
            average_map: r.mean_average_map,
        });
    }
    let mut summary = Vec::new();
    for mode in [SplitMode::Random, SplitMode::Controlled] {
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.map50)
            .collect();
        if values.is_empty() {
            continue;
        }
        let (mean_map50, std_map50) = mean_std(&values);
        summary.push(ModeSummary {
            mode,
            splits: values.len(),
            mean_map50,
            std_map50,
        });
    }
    Ok(SplitComparison { rows, summary })
}
