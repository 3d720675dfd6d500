use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use fewshot_tad::engine::{
    self, default_split_specs, evaluate, lambda_csv, run_gradcheck, sweep_lambda,
    sweep_proposal_threshold, threshold_csv, EvalConfig, GradcheckConfig, Model, TrainConfig,
    DEFAULT_LAMBDAS,
};
use fewshot_tad::splits::{make_split, split_report, ClassSplit, SplitMode};
use fewshot_tad::synthcorpus::{generate_corpus, load_corpus, save_corpus, CorpusConfig};

use crate::exit::{Failure, Outcome, CONFIG, GRADCHECK, IO};
use crate::{Common, Mode, SweepKind};

/// Default proposal-score grid: 0.0, 0.1, ..., 0.9.
fn default_threshold_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

/// Exact echo of a run, written as `run_config.json` next to its outputs.
#[derive(Debug, Serialize)]
struct RunConfig<'a> {
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a Path>,
    out: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus_config: Option<&'a CorpusConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<&'a TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval: Option<&'a EvalConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradcheck: Option<&'a GradcheckConfig>,
    #[serde(skip_serializing_if = "Value::is_null")]
    options: Value,
}

impl<'a> RunConfig<'a> {
    fn new(command: &'a str, common: &'a Common) -> Self {
        Self {
            command,
            seed: common.seed,
            corpus: None,
            split: None,
            model: None,
            out: &common.out,
            corpus_config: None,
            train: None,
            eval: None,
            gradcheck: None,
            options: Value::Null,
        }
    }
}

struct Output<'a> {
    dir: &'a Path,
    quiet: bool,
}

impl<'a> Output<'a> {
    fn create(common: &'a Common) -> Outcome<Self> {
        fs::create_dir_all(&common.out)?;
        Ok(Self {
            dir: &common.out,
            quiet: common.quiet,
        })
    }

    fn write(&self, name: &str, contents: &str) -> Outcome<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Outcome<PathBuf> {
        let text = serde_json::to_string_pretty(value).expect("value serializes");
        self.write(name, &(text + "\n"))
    }

    fn echo(&self, run: &RunConfig<'_>) -> Outcome<PathBuf> {
        self.json("run_config.json", run)
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

/// Reads a JSON config (an empty object when `path` is `None`), applies the
/// seed override and deserializes it strictly.
fn load_config<T: DeserializeOwned>(path: Option<&Path>, seed: Option<u64>) -> Outcome<T> {
    let label = path.map_or_else(|| "<defaults>".to_owned(), |p| p.display().to_string());
    let mut value: Value = match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| Failure::new(IO, format!("{label}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::new(CONFIG, format!("{label}: {e}")))?
        }
        None => json!({}),
    };
    if let Some(seed) = seed {
        match value.as_object_mut() {
            Some(map) => {
                map.insert("seed".into(), json!(seed));
            }
            None => {
                return Err(Failure::new(
                    CONFIG,
                    format!("{label}: config must be a JSON object"),
                ))
            }
        }
    }
    serde_json::from_value(value).map_err(|e| Failure::new(CONFIG, format!("{label}: {e}")))
}

fn split_mode(mode: Mode) -> SplitMode {
    match mode {
        Mode::Random => SplitMode::Random,
        Mode::Controlled => SplitMode::Controlled,
    }
}

pub fn gen(common: &Common) -> Outcome {
    let cfg: CorpusConfig = load_config(common.config.as_deref(), common.seed)?;
    let corpus = generate_corpus(&cfg)?;
    let out = Output::create(common)?;
    let path = out.dir.join("corpus.bin");
    save_corpus(&corpus, &path)?;
    out.echo(&RunConfig {
        corpus_config: Some(&cfg),
        ..RunConfig::new("gen", common)
    })?;
    let cat = &corpus.catalog;
    out.say(format!(
        "corpus: {} classes ({} pretrain-visible), D={}, T'={}, {} sequences, {} exemplars, min prototype distance {:.3}",
        cat.len(),
        cat.visible_count(),
        corpus.feature_dim(),
        corpus.sequence_length(),
        corpus.sequences.len(),
        corpus.exemplars.len(),
        cat.min_prototype_distance()
    ));
    out.say(format!("wrote {}", path.display()));
    Ok(())
}

pub fn split(common: &Common, corpus_path: &Path, mode: Mode, n_novel: usize) -> Outcome {
    let corpus = load_corpus(corpus_path)?;
    let seed = common.seed.unwrap_or(0);
    let split = make_split(&corpus.catalog, split_mode(mode), n_novel, seed)?;
    let out = Output::create(common)?;
    let path = out.dir.join("split.json");
    split.save(&path)?;
    let report = split_report(&split, &corpus.catalog);
    out.json("split_report.json", &report)?;
    out.echo(&RunConfig {
        seed: Some(seed),
        corpus: Some(corpus_path),
        options: json!({ "mode": split.mode, "n_novel": n_novel }),
        ..RunConfig::new("split", common)
    })?;
    out.say(format!(
        "split: {} mode, {} base, {} novel ({} in the pretraining set)",
        report.mode, report.base_count, report.novel_count, report.novel_pretrain_overlap
    ));
    out.say(format!("wrote {}", path.display()));
    Ok(())
}

pub fn train(common: &Common, corpus_path: &Path, split_path: &Path) -> Outcome {
    let cfg: TrainConfig = load_config(common.config.as_deref(), common.seed)?;
    let corpus = load_corpus(corpus_path)?;
    let split = ClassSplit::load(split_path)?;
    let outcome = engine::train(&cfg, &corpus, &split)?;
    let out = Output::create(common)?;
    let model_path = out.dir.join("model.bin");
    outcome.model.save(&model_path)?;
    out.write("loss_log.csv", &outcome.loss_csv())?;
    out.echo(&RunConfig {
        seed: Some(cfg.seed),
        corpus: Some(corpus_path),
        split: Some(split_path),
        train: Some(&cfg),
        ..RunConfig::new("train", common)
    })?;
    let (first, last) = outcome.loss_trend();
    out.say(format!(
        "trained {} iterations; mean total loss {first:.4} (first window) -> {last:.4} (last window); final adaptation loss {:.4}",
        outcome.log.len(),
        outcome.final_adaptation_loss()
    ));
    out.say(format!("wrote {}", model_path.display()));
    Ok(())
}

pub struct EvalInputs {
    pub model: PathBuf,
    pub corpus: PathBuf,
    pub split: PathBuf,
}

pub fn eval(
    common: &Common,
    inputs: &EvalInputs,
    count: Option<usize>,
    proposal_threshold: Option<f64>,
    similarity_threshold: Option<f64>,
) -> Outcome {
    let mut cfg: EvalConfig = load_config(common.config.as_deref(), common.seed)?;
    if let Some(c) = count {
        cfg.count = c;
    }
    if let Some(t) = proposal_threshold {
        cfg.proposal_threshold = t;
    }
    if let Some(t) = similarity_threshold {
        cfg.similarity_threshold = t;
    }
    let model = Model::load(&inputs.model)?;
    let corpus = load_corpus(&inputs.corpus)?;
    let split = ClassSplit::load(&inputs.split)?;
    let report = evaluate(&model, &corpus, &split, &cfg)?;
    let out = Output::create(common)?;
    let path = out.write("report.json", &(report.to_json() + "\n"))?;
    out.echo(&RunConfig {
        seed: Some(cfg.seed),
        corpus: Some(&inputs.corpus),
        split: Some(&inputs.split),
        model: Some(&inputs.model),
        eval: Some(&cfg),
        ..RunConfig::new("eval", common)
    })?;
    out.say(report.summary());
    out.say(format!("wrote {}", path.display()));
    Ok(())
}

pub fn sweep(
    common: &Common,
    kind: SweepKind,
    corpus_path: &Path,
    split_path: &Path,
    model_path: Option<&Path>,
    eval_config: Option<&Path>,
    grid: Option<Vec<f64>>,
) -> Outcome {
    let corpus = load_corpus(corpus_path)?;
    let split = ClassSplit::load(split_path)?;
    let out = Output::create(common)?;
    let (name, csv) = match kind {
        SweepKind::Threshold => {
            let model_path =
                model_path.ok_or_else(|| Failure::new(CONFIG, "threshold sweep needs --model"))?;
            let cfg_path = eval_config.or(common.config.as_deref());
            let cfg: EvalConfig = load_config(cfg_path, common.seed)?;
            let grid = grid.unwrap_or_else(default_threshold_grid);
            let model = Model::load(model_path)?;
            let rows = sweep_proposal_threshold(&model, &corpus, &split, &cfg, &grid)?;
            out.echo(&RunConfig {
                seed: Some(cfg.seed),
                corpus: Some(corpus_path),
                split: Some(split_path),
                model: Some(model_path),
                eval: Some(&cfg),
                options: json!({ "kind": "threshold", "grid": grid }),
                ..RunConfig::new("sweep", common)
            })?;
            ("threshold_sweep.csv", threshold_csv(&rows))
        }
        SweepKind::Lambda => {
            let tcfg: TrainConfig = load_config(common.config.as_deref(), common.seed)?;
            let ecfg: EvalConfig = load_config(eval_config, common.seed)?;
            let grid = grid.unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
            let rows = sweep_lambda(&tcfg, &corpus, &split, &ecfg, &grid)?;
            out.echo(&RunConfig {
                seed: Some(tcfg.seed),
                corpus: Some(corpus_path),
                split: Some(split_path),
                train: Some(&tcfg),
                eval: Some(&ecfg),
                options: json!({ "kind": "lambda", "grid": grid }),
                ..RunConfig::new("sweep", common)
            })?;
            ("lambda_sweep.csv", lambda_csv(&rows))
        }
    };
    let path = out.write(name, &csv)?;
    out.say(csv.trim_end());
    out.say(format!("wrote {}", path.display()));
    Ok(())
}

pub fn compare_splits(
    common: &Common,
    corpus_path: &Path,
    eval_config: Option<&Path>,
    [n_random, n_controlled]: [usize; 2],
    n_novel: usize,
) -> Outcome {
    let tcfg: TrainConfig = load_config(common.config.as_deref(), common.seed)?;
    let ecfg: EvalConfig = load_config(eval_config, common.seed)?;
    let corpus = load_corpus(corpus_path)?;
    let first_seed = common.seed.unwrap_or(0);
    let specs = default_split_specs(n_random, n_controlled, n_novel, first_seed);
    let cmp = engine::compare_splits(&corpus, &tcfg, &ecfg, &specs)?;
    let out = Output::create(common)?;
    out.write("splits.csv", &cmp.rows_csv())?;
    let path = out.write("summary.csv", &cmp.summary_csv())?;
    out.json("comparison.json", &cmp)?;
    out.echo(&RunConfig {
        seed: Some(first_seed),
        corpus: Some(corpus_path),
        train: Some(&tcfg),
        eval: Some(&ecfg),
        options: json!({ "specs": specs }),
        ..RunConfig::new("compare-splits", common)
    })?;
    for m in &cmp.summary {
        let note = if m.splits == 1 {
            " (single split: stdev reported as 0)"
        } else {
            ""
        };
        out.say(format!(
            "{}: mAP@0.5 {:.4} ± {:.4} over {} splits{note}",
            m.mode, m.mean_map50, m.std_map50, m.splits
        ));
    }
    out.say(format!("wrote {}", path.display()));
    Ok(())
}

pub fn gradcheck(common: &Common, instances: Option<usize>, tolerance: Option<f64>) -> Outcome {
    let mut cfg: GradcheckConfig = load_config(common.config.as_deref(), common.seed)?;
    if let Some(n) = instances {
        cfg.instances = n;
    }
    if let Some(t) = tolerance {
        cfg.tolerance = t;
    }
    let summary = run_gradcheck(&cfg)?;
    let out = Output::create(common)?;
    out.json("gradcheck.json", &summary)?;
    out.echo(&RunConfig {
        seed: Some(cfg.seed),
        gradcheck: Some(&cfg),
        ..RunConfig::new("gradcheck", common)
    })?;
    for r in &summary.rows {
        out.say(format!(
            "{:<16} {:>3} instances  max rel err {:.3e}  worst {:<18} {}",
            r.path.name(),
            r.instances,
            r.max_rel_error,
            r.worst_param,
            if r.passed { "ok" } else { "FAIL" }
        ));
    }
    if summary.passed() {
        return Ok(());
    }
    let failures: Vec<String> = summary
        .rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| {
            format!(
                "{} ({} rel err {:.3e})",
                r.path.name(),
                r.worst_param,
                r.max_rel_error
            )
        })
        .collect();
    Err(Failure::new(
        GRADCHECK,
        format!(
            "gradient check above tolerance {:e}: {}",
            cfg.tolerance,
            failures.join(", ")
        ),
    ))
}
