//! The three experiment drivers and their CSV tables.

use std::path::{Path, PathBuf};

use estop_core::bounds::solve_estop;
use estop_core::learners::{actor_critic, cross_entropy_search, mean_final_offset, Algorithm, CemResult};
use estop_core::mdp::{value_iteration, vi_flops, EvalMode, DEFAULT_TOL};
use estop_core::{
    average_state_distribution, build_estop_mdp, build_support_by_fraction, estimate_visit_stats, policy_value,
    q_learning, LearningCurve, LearningEnv, SupportSet,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregateCurve, AGGREGATE_HEADER, GRID_STEP};
use crate::config::{default_sweep_fractions, EnvironmentConfig, ExperimentConfig, ExpertSource, RemovalRule};
use crate::error::{config_err, io_err, LabError, Result};
use crate::pipeline::{build_expert, load_demos, pendulum_box, prepare_tabular, prepare_with};

/// Values at or below this count as "no path to the goal".
pub const FEASIBLE_TOL: f64 = 1e-12;

/// Curve level, relative to the trial's own asymptote, used for speed.
pub const ASYMPTOTE_LEVEL: f64 = 0.9;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "ESTOP_LAB_THREADS";

/// Worker pool sized by `ESTOP_LAB_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => builder = builder.num_threads(n),
            _ => return config_err(format!("{THREADS_ENV}={raw:?} is not a positive integer")),
        }
    }
    builder.build().map_err(|e| LabError::Config(e.to_string()))
}

fn writer(dir: &Path, name: &str) -> Result<(csv::Writer<std::fs::File>, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    Ok((csv::Writer::from_path(&path)?, path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViSweepRow {
    pub fraction: f64,
    pub kept_states: usize,
    /// `J_M̂(π̂*)` under the finite horizon.
    pub j_estop_opt: f64,
    /// `J_M(π̂*)`.
    pub j_estop_opt_base: f64,
    /// Discounted optimum of `M̂` from its initial distribution.
    pub j_discounted: f64,
    pub sweeps: usize,
    /// `sweeps · 4|S̃|²|A|` with `|S̃|` the kept states plus `s_term`.
    pub flops: u64,
    pub feasible: bool,
}

/// Removes growing fractions of states by expert `ρ` rank and solves each
/// e-stop MDP, stopping after the first one with no path to reward.
///
/// `ρ` is exact when the expert is a policy and estimated from the demo file
/// otherwise.
pub fn run_vi_sweep(cfg: &ExperimentConfig) -> Result<Vec<ViSweepRow>> {
    let mdp = cfg.frozen_lake()?.build(cfg.learner.gamma)?;
    let scores = match (build_expert(&mdp, &cfg.expert)?, &cfg.expert) {
        (Some(pi), _) => average_state_distribution(&mdp, &pi)?,
        (None, ExpertSource::DemoFile { path }) => {
            estimate_visit_stats(&load_demos(path)?, mdp.n_states(), mdp.horizon())?.rho_hat
        }
        (None, _) => unreachable!("only demo files come without a policy"),
    };
    let mut fractions = match &cfg.removal {
        RemovalRule::Sweep { fractions } => fractions.clone(),
        _ => default_sweep_fractions(),
    };
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let protect = mdp.initial_support();
    let mode = EvalMode::discounted(cfg.learner.gamma)?;
    let mut rows = Vec::with_capacity(fractions.len());
    for fraction in fractions {
        let support = build_support_by_fraction(&scores, fraction, &protect)?;
        let estop = build_estop_mdp(&mdp, &support)?;
        let opt = solve_estop(&estop)?;
        let vi = value_iteration(&estop.mdp, mode, DEFAULT_TOL)?;
        let j_discounted = estop
            .mdp
            .rho0()
            .iter()
            .zip(vi.initial_values())
            .map(|(p, v)| p * v)
            .sum();
        let feasible = opt.value_in_estop > FEASIBLE_TOL;
        rows.push(ViSweepRow {
            fraction,
            kept_states: support.len(),
            j_estop_opt: opt.value_in_estop,
            j_estop_opt_base: opt.value_in_base,
            j_discounted,
            sweeps: vi.sweeps,
            flops: vi_flops(vi.sweeps, estop.effective_states(), mdp.n_actions()),
            feasible,
        });
        if !feasible {
            break;
        }
    }
    Ok(rows)
}

pub fn write_vi_sweep(rows: &[ViSweepRow], dir: &Path, hash: &str) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, "vi_sweep.csv")?;
    w.write_record([
        "config_hash",
        "fraction_removed",
        "kept_states",
        "j_estop_opt",
        "j_estop_opt_base",
        "j_discounted",
        "sweeps",
        "flops",
        "feasible",
    ])?;
    for r in rows {
        w.write_record([
            hash.to_string(),
            r.fraction.to_string(),
            r.kept_states.to_string(),
            r.j_estop_opt.to_string(),
            r.j_estop_opt_base.to_string(),
            r.j_discounted.to_string(),
            r.sweeps.to_string(),
            r.flops.to_string(),
            r.feasible.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Estop,
    Full,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Estop => "estop",
            Variant::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub curve: LearningCurve,
    pub steps_to_asymptote: Option<u64>,
    pub asymptote: f64,
    /// Pendulum only: mean |offset from upright| over the last 50 steps.
    pub final_offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub seed: u64,
    pub variant: Variant,
    pub result: std::result::Result<TrialRecord, String>,
}

#[derive(Debug, Clone)]
pub struct LearningOutcome {
    pub estop: AggregateCurve,
    pub full: AggregateCurve,
    /// Seed-ordered, e-stop trial first for each seed.
    pub trials: Vec<TrialOutcome>,
    pub support: SupportSet,
}

impl LearningOutcome {
    pub fn records(&self, variant: Variant) -> impl Iterator<Item = &TrialRecord> {
        self.trials
            .iter()
            .filter(move |t| t.variant == variant)
            .filter_map(|t| t.result.as_ref().ok())
    }

    /// Median over trials of the steps needed to reach 90% of the trial's
    /// own asymptote.
    pub fn median_steps_to_asymptote(&self, variant: Variant) -> Option<f64> {
        let steps: Vec<f64> = self
            .records(variant)
            .filter_map(|r| r.steps_to_asymptote)
            .map(|s| s as f64)
            .collect();
        (!steps.is_empty()).then(|| crate::aggregate::summarize(&steps).0)
    }

    /// Full-run median steps over e-stop-run median steps.
    pub fn speedup(&self) -> Option<f64> {
        Some(self.median_steps_to_asymptote(Variant::Full)? / self.median_steps_to_asymptote(Variant::Estop)?)
    }
}

fn record(curve: LearningCurve, final_offset: Option<f64>) -> TrialRecord {
    TrialRecord {
        steps_to_asymptote: curve.steps_to_asymptote_fraction(ASYMPTOTE_LEVEL),
        asymptote: curve.asymptote(0.1).unwrap_or(0.0),
        curve,
        final_offset,
    }
}

fn check_trials(trials: &[TrialOutcome], variant: Variant) -> Result<()> {
    let ours: Vec<&TrialOutcome> = trials.iter().filter(|t| t.variant == variant).collect();
    let failed: Vec<&String> = ours.iter().filter_map(|t| t.result.as_ref().err()).collect();
    if failed.len() * 2 > ours.len() {
        return Err(LabError::Trials {
            failed: failed.len(),
            total: ours.len(),
            first: failed[0].clone(),
        });
    }
    Ok(())
}

/// Runs the learner with and without the e-stop support for every seed and
/// aggregates the curves. Aggregation needs at least half of each variant's
/// trials to succeed.
pub fn run_learning_experiment(cfg: &ExperimentConfig) -> Result<LearningOutcome> {
    let jobs: Vec<(u64, Variant)> = cfg
        .trials
        .iter()
        .flat_map(|&seed| [(seed, Variant::Estop), (seed, Variant::Full)])
        .collect();
    let pool = worker_pool()?;
    let (trials, support) = match &cfg.environment {
        EnvironmentConfig::FrozenLake(_) => {
            let prepared = prepare_tabular(cfg)?;
            let estop_env = LearningEnv::estop(&prepared.estop);
            let full_env = LearningEnv::plain(&prepared.mdp);
            let run = |seed: u64, variant: Variant| -> estop_core::Result<TrialRecord> {
                let env = if variant == Variant::Estop { &estop_env } else { &full_env };
                let learner = estop_core::LearnerConfig {
                    seed,
                    ..cfg.learner.clone()
                };
                let curve = match learner.algorithm {
                    Algorithm::ActorCritic => actor_critic(env, &learner)?.curve,
                    _ => q_learning(env, &learner)?.curve,
                };
                Ok(record(curve, None))
            };
            let trials = pool.install(|| {
                jobs.par_iter()
                    .map(|&(seed, variant)| TrialOutcome {
                        seed,
                        variant,
                        result: run(seed, variant).map_err(|e| e.to_string()),
                    })
                    .collect::<Vec<_>>()
            });
            (trials, SupportSet::StateSet(prepared.support().clone()))
        }
        EnvironmentConfig::Pendulum(p) => {
            let bounds = pendulum_box(p, cfg.n_demos, cfg.demo_seed)?;
            let run = |seed: u64, variant: Variant| -> estop_core::Result<TrialRecord> {
                let cem = estop_core::learners::CemConfig {
                    seed,
                    ..p.cem.clone()
                };
                let support = (variant == Variant::Estop).then_some(&bounds);
                let out: CemResult = cross_entropy_search(&p.spec, support, &cem)?;
                let offset = mean_final_offset(&p.spec, &out.mean, &out.eval_starts, 50)?;
                Ok(record(out.curve, Some(offset)))
            };
            let trials = pool.install(|| {
                jobs.par_iter()
                    .map(|&(seed, variant)| TrialOutcome {
                        seed,
                        variant,
                        result: run(seed, variant).map_err(|e| e.to_string()),
                    })
                    .collect::<Vec<_>>()
            });
            (trials, SupportSet::ContinuousBox(bounds))
        }
    };
    check_trials(&trials, Variant::Estop)?;
    check_trials(&trials, Variant::Full)?;
    let curves = |v: Variant| -> Vec<LearningCurve> {
        trials
            .iter()
            .filter(|t| t.variant == v)
            .filter_map(|t| t.result.as_ref().ok())
            .map(|r| r.curve.clone())
            .collect()
    };
    Ok(LearningOutcome {
        estop: AggregateCurve::from_curves(&curves(Variant::Estop), GRID_STEP),
        full: AggregateCurve::from_curves(&curves(Variant::Full), GRID_STEP),
        trials,
        support,
    })
}

/// Writes `learn_curves.csv`, `learn_trials.csv`, `learn_raw.csv` and
/// `learn_support.json`.
pub fn write_learning(outcome: &LearningOutcome, dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let (mut w, curves_path) = writer(dir, "learn_curves.csv")?;
    w.write_record(AGGREGATE_HEADER)?;
    outcome.estop.write_rows(&mut w, hash, Variant::Estop.name())?;
    outcome.full.write_rows(&mut w, hash, Variant::Full.name())?;
    w.flush().map_err(io_err(&curves_path))?;

    let (mut w, trials_path) = writer(dir, "learn_trials.csv")?;
    w.write_record([
        "config_hash",
        "variant",
        "seed",
        "status",
        "steps_to_90pct",
        "asymptote",
        "final_offset",
        "error",
    ])?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    for t in &outcome.trials {
        let row = match &t.result {
            Ok(r) => [
                "ok".to_string(),
                opt(r.steps_to_asymptote.map(|s| s.to_string())),
                r.asymptote.to_string(),
                opt(r.final_offset.map(|x| x.to_string())),
                String::new(),
            ],
            Err(e) => ["failed".into(), String::new(), String::new(), String::new(), e.clone()],
        };
        let mut rec = vec![hash.to_string(), t.variant.name().to_string(), t.seed.to_string()];
        rec.extend(row);
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(&trials_path))?;

    let (mut w, raw_path) = writer(dir, "learn_raw.csv")?;
    w.write_record(["config_hash", "variant", "seed", "states_seen", "eval_return", "eval_return_train"])?;
    for t in &outcome.trials {
        let Ok(r) = &t.result else { continue };
        for p in &r.curve.points {
            w.write_record([
                hash.to_string(),
                t.variant.name().to_string(),
                t.seed.to_string(),
                p.states_seen.to_string(),
                p.eval_return.to_string(),
                p.eval_return_train.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(&raw_path))?;

    let support_path = dir.join("learn_support.json");
    let text = serde_json::to_string_pretty(&outcome.support).expect("support serialises");
    std::fs::write(&support_path, text + "\n").map_err(io_err(&support_path))?;
    Ok(vec![curves_path, trials_path, raw_path, support_path])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    ExpertNoise,
    DemoCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kind: AblationKind,
    /// `σ` or `n`.
    pub value: f64,
    pub j_expert: f64,
    pub j_estop_opt: f64,
    pub j_estop_opt_base: f64,
    pub kept_states: usize,
}

/// Rebuilds the e-stop MDP at every grid point and records exact optima.
pub fn run_ablation(cfg: &ExperimentConfig, kind: AblationKind) -> Result<Vec<AblationRow>> {
    let mdp = cfg.frozen_lake()?.build(cfg.learner.gamma)?;
    let noise_seed = match &cfg.expert {
        ExpertSource::NoisyQ { seed, .. } => *seed,
        ExpertSource::DemoFile { .. } => return config_err("ablations need a policy expert, not a demo file"),
        ExpertSource::ViOptimal => 0,
    };
    let points: Vec<(f64, ExpertSource, usize)> = match kind {
        AblationKind::ExpertNoise => cfg
            .ablation
            .sigmas
            .iter()
            .map(|&sigma| (sigma, ExpertSource::NoisyQ { sigma, seed: noise_seed }, cfg.n_demos))
            .collect(),
        AblationKind::DemoCount => cfg
            .ablation
            .demo_counts
            .iter()
            .map(|&n| (n as f64, cfg.expert.clone(), n))
            .collect(),
    };
    if points.iter().any(|p| p.2 == 0) {
        return config_err("ablation demo counts must be positive");
    }
    let pool = worker_pool()?;
    pool.install(|| {
        points
            .par_iter()
            .map(|(value, source, n)| {
                let prepared = prepare_with(cfg, mdp.clone(), source, *n)?;
                let expert = prepared.expert.as_ref().expect("policy expert");
                let opt = solve_estop(&prepared.estop)?;
                Ok(AblationRow {
                    kind,
                    value: *value,
                    j_expert: policy_value(&mdp, expert, EvalMode::FiniteHorizon)?,
                    j_estop_opt: opt.value_in_estop,
                    j_estop_opt_base: opt.value_in_base,
                    kept_states: prepared.support().len(),
                })
            })
            .collect()
    })
}

pub fn write_ablation(rows: &[AblationRow], dir: &Path, hash: &str) -> Result<PathBuf> {
    let name = match rows.first().map(|r| r.kind) {
        Some(AblationKind::DemoCount) => "ablation_demos.csv",
        _ => "ablation_noise.csv",
    };
    let (mut w, path) = writer(dir, name)?;
    w.write_record(["config_hash", "kind", "value", "j_expert", "j_estop_opt", "j_estop_opt_base", "kept_states"])?;
    for r in rows {
        let kind = match r.kind {
            AblationKind::ExpertNoise => "expert_noise",
            AblationKind::DemoCount => "demo_count",
        };
        w.write_record([
            hash.to_string(),
            kind.to_string(),
            r.value.to_string(),
            r.j_expert.to_string(),
            r.j_estop_opt.to_string(),
            r.j_estop_opt_base.to_string(),
            r.kept_states.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}
