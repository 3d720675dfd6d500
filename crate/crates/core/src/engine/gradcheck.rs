//! Finite-difference verification of every training loss path on small random
//! instances.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::train::{plan_step, step_loss, EpisodeData, LossWeights, StepPlan, StepSettings};
use crate::diffmath::{finite_diff_check, ParamStore, Tensor};
use crate::episodes::episode_rng;
use crate::error::{Error, Result};
use crate::proposals::{init_proposal_params, ProposalConfig, SampleConfig, Segment};

/// Instances whose ReLU inputs, Huber residuals or SoI max gaps lie this close to a kink are redrawn.
pub const KINK_GUARD: f64 = 1e-3;
const MAX_ATTEMPTS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPath {
    Binary,
    SmoothL1,
    FewShot,
    Adaptation,
    Total,
}

impl LossPath {
    pub const ALL: [LossPath; 5] = [
        LossPath::Binary,
        LossPath::SmoothL1,
        LossPath::FewShot,
        LossPath::Adaptation,
        LossPath::Total,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossPath::Binary => "binary_proposal",
            LossPath::SmoothL1 => "smooth_l1",
            LossPath::FewShot => "fewshot_ce",
            LossPath::Adaptation => "adaptation",
            LossPath::Total => "total",
        }
    }

    pub fn weights(&self) -> LossWeights {
        let z = LossWeights::none();
        match self {
            LossPath::Binary => LossWeights {
                p1_cls: 1.0,
                p2_cls: 1.0,
                ..z
            },
            LossPath::SmoothL1 => LossWeights {
                p1_reg: 1.0,
                p2_reg: 1.0,
                ..z
            },
            LossPath::FewShot => LossWeights { fewshot: 1.0, ..z },
            LossPath::Adaptation => LossWeights { adapt: 1.0, ..z },
            LossPath::Total => LossWeights::total(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub path: LossPath,
    pub instances: usize,
    pub max_rel_error: f64,
    /// Parameter holding the largest relative error.
    pub worst_param: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub tolerance: f64,
    pub rows: Vec<PathResult>,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Network shape used by the micro-instances.
pub fn micro_model() -> ProposalConfig {
    ProposalConfig {
        radius: 1,
        channels: 3,
        stride: 2,
        scales: vec![2.0, 4.0],
        context_cells: 1,
        hidden: 4,
        bins: 2,
        embed_dim: 3,
    }
}

const MICRO_DIM: usize = 3;
const MICRO_LENGTH: usize = 8;
const MICRO_WAY: usize = 2;
const MICRO_SHOTS: usize = 2;
const MICRO_TEMPERATURE: f64 = 0.1;

fn micro_settings() -> StepSettings {
    StepSettings {
        stage1: SampleConfig {
            batch_size: 8,
            ..SampleConfig::stage1()
        },
        stage2: SampleConfig {
            batch_size: 8,
            ..SampleConfig::stage2()
        },
        nms_threshold: 0.7,
        top_k: 4,
        temperature: MICRO_TEMPERATURE,
    }
}

/// A random parameter set and planned step that keeps clear of every kink.
pub struct MicroInstance {
    pub params: ParamStore,
    pub plan: StepPlan,
}

fn draw_instance<R: Rng + ?Sized>(rng: &mut R) -> Result<MicroInstance> {
    let model = micro_model();
    let mut params = ParamStore::new();
    init_proposal_params(&mut params, &model, MICRO_DIM, rng);
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for n in names {
        params
            .value_mut(&n)
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
    }

    let normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    let query = Tensor::matrix(
        MICRO_LENGTH,
        MICRO_DIM,
        (0..MICRO_LENGTH * MICRO_DIM).map(|_| normal(rng)).collect(),
    )?;
    let start = rng.random_range(0..MICRO_LENGTH - 2);
    let end = rng.random_range(start + 2..=MICRO_LENGTH.min(start + 5));
    let gts = vec![(
        Segment::new(start as f64, end as f64)?,
        Some(rng.random_range(0..MICRO_WAY)),
    )];
    let data = EpisodeData {
        query,
        gts,
        support_raw: (0..MICRO_WAY * MICRO_SHOTS * MICRO_DIM)
            .map(|_| normal(rng))
            .collect(),
        support_labels: (0..MICRO_WAY)
            .flat_map(|l| std::iter::repeat_n(l, MICRO_SHOTS))
            .collect(),
        n_way: MICRO_WAY,
    };
    let plan = plan_step(&params, &model, &micro_settings(), &data, rng)?;
    Ok(MicroInstance { params, plan })
}

fn acceptable(inst: &mut MicroInstance) -> Result<bool> {
    let mut scratch = inst.params.clone();
    let l = step_loss(
        &mut scratch,
        &micro_model(),
        &inst.plan,
        MICRO_TEMPERATURE,
        &LossWeights::none(),
    )?;
    Ok(l.min_preactivation > KINK_GUARD
        && l.min_huber_margin > KINK_GUARD
        && l.min_pool_margin > KINK_GUARD
        && l.adapt > KINK_GUARD
        && inst.plan.survivors > 0
        && inst.plan.fewshot_targets.iter().any(Option::is_some))
}

/// Draws `count` kink-free micro-instances from `seed`.
pub fn micro_instances(count: usize, seed: u64) -> Result<Vec<MicroInstance>> {
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    while out.len() < count {
        if attempt >= MAX_ATTEMPTS {
            return Err(Error::Sampling(
                "could not draw kink-free gradient-check instances".into(),
            ));
        }
        let mut rng = episode_rng(seed, attempt);
        attempt += 1;
        let Ok(mut inst) = draw_instance(&mut rng) else {
            continue;
        };
        if acceptable(&mut inst)? {
            out.push(inst);
        }
    }
    Ok(out)
}

/// Checks every loss path on the same set of micro-instances.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckSummary> {
    let instances = micro_instances(config.instances, config.seed)?;
    let model = micro_model();
    let rows = LossPath::ALL
        .iter()
        .map(|&path| {
            let weights = path.weights();
            let mut worst = (0.0f64, String::new());
            let mut passed = true;
            for inst in &instances {
                let loss = |p: &mut ParamStore| {
                    step_loss(p, &model, &inst.plan, MICRO_TEMPERATURE, &weights)
                        .map(|l| l.weighted(&weights))
                        .unwrap_or(f64::NAN)
                };
                let report = finite_diff_check(loss, &inst.params, config.step, config.tolerance);
                passed &= report.passed();
                for p in &report.params {
                    if p.max_rel_error > worst.0
                        || worst.1.is_empty()
                        || !p.max_rel_error.is_finite()
                    {
                        worst = (p.max_rel_error, p.name.clone());
                    }
                }
            }
            PathResult {
                path,
                instances: instances.len(),
                max_rel_error: worst.0,
                worst_param: worst.1,
                passed,
            }
        })
        .collect();
    Ok(GradcheckSummary {
        tolerance: config.tolerance,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_gradcheck_passes_and_zero_tolerance_fails() {
        let s = run_gradcheck(&GradcheckConfig {
            instances: 4,
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert_eq!(s.rows.len(), LossPath::ALL.len());
        assert!(s.passed(), "{s:?}");
        let z = run_gradcheck(&GradcheckConfig {
            instances: 2,
            tolerance: 0.0,
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert!(!z.passed());
    }
}
