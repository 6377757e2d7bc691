//! Shared steps of every experiment: environment, expert, demonstrations and
//! the support built from them.

use std::io::BufReader;
use std::path::Path;

use estop_core::envs::pendulum_reset;
use estop_core::learners::rollout_linear;
use estop_core::mdp::{argmax, q_values, rollout_with, seeded_rng, value_iteration, EvalMode, DEFAULT_TOL};
use estop_core::support::{box_from_trajectories, ContinuousBox};
use estop_core::{
    build_estop_mdp, build_support_by_budget, build_support_by_fraction, estimate_visit_stats, read_demos, Demo,
    EStopMdp, StateSet, TabularMdp, TabularPolicy, VisitStats,
};
use rand_distr::{Distribution, Normal};

use crate::config::{ExperimentConfig, ExpertSource, PendulumConfig, RemovalRule};
use crate::error::{config_err, io_err, LabError, Result};

/// Greedy policy on the finite-horizon optimal `Q_t` after adding independent
/// Gaussian noise to every `(t, s, a)` entry. `sigma = 0` returns the
/// value-iteration policy itself.
pub fn noisy_q_expert(mdp: &TabularMdp, sigma: f64, seed: u64) -> Result<TabularPolicy> {
    let vi = value_iteration(mdp, EvalMode::FiniteHorizon, DEFAULT_TOL)?;
    if sigma == 0.0 {
        return Ok(vi.policy);
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| LabError::Config(e.to_string()))?;
    let mut rng = seeded_rng(seed);
    let (n, na, h) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let mut actions = Vec::with_capacity(h);
    for t in 0..h {
        let q = if t + 1 < h {
            q_values(mdp, &vi.values[t + 1], 1.0)
        } else {
            vec![0.0; n * na]
        };
        let row: Vec<usize> = q
            .chunks(na)
            .map(|qs| {
                let noisy: Vec<f64> = qs.iter().map(|x| x + noise.sample(&mut rng)).collect();
                argmax(&noisy)
            })
            .collect();
        actions.push(row);
    }
    Ok(TabularPolicy::deterministic_time_dependent(&actions, na))
}

/// The expert policy, or `None` when demonstrations come from a file.
pub fn build_expert(mdp: &TabularMdp, source: &ExpertSource) -> Result<Option<TabularPolicy>> {
    match source {
        ExpertSource::ViOptimal => Ok(Some(noisy_q_expert(mdp, 0.0, 0)?)),
        ExpertSource::NoisyQ { sigma, seed } => Ok(Some(noisy_q_expert(mdp, *sigma, *seed)?)),
        ExpertSource::DemoFile { .. } => Ok(None),
    }
}

pub fn collect_demos(mdp: &TabularMdp, expert: &TabularPolicy, n: usize, seed: u64) -> Vec<Demo> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| Demo::from(&rollout_with(mdp, expert, &mut rng))).collect()
}

pub fn load_demos(path: &Path) -> Result<Vec<Demo>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let demos = read_demos(BufReader::new(file))?;
    if demos.is_empty() {
        return config_err(format!("{} holds no demonstrations", path.display()));
    }
    Ok(demos)
}

/// Support chosen by `rule` from demonstration statistics. Initial states
/// are always kept.
pub fn support_from_stats(mdp: &TabularMdp, stats: &VisitStats, rule: &RemovalRule) -> Result<StateSet> {
    let protect = mdp.initial_support();
    let set = match rule {
        RemovalRule::Budget { xi } => build_support_by_budget(&stats.h_hat, *xi, &protect)?,
        RemovalRule::FractionH { fraction } => build_support_by_fraction(&stats.h_hat, *fraction, &protect)?,
        RemovalRule::FractionRho { fraction } => build_support_by_fraction(&stats.rho_hat, *fraction, &protect)?,
        RemovalRule::Sweep { .. } => return config_err("a sweep rule does not define a single support"),
    };
    Ok(set)
}

/// Everything an experiment on a tabular environment starts from.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mdp: TabularMdp,
    pub expert: Option<TabularPolicy>,
    pub demos: Vec<Demo>,
    pub stats: VisitStats,
    pub estop: EStopMdp,
}

impl Prepared {
    pub fn support(&self) -> &StateSet {
        &self.estop.support
    }
}

pub fn prepare_tabular(cfg: &ExperimentConfig) -> Result<Prepared> {
    let mdp = cfg.frozen_lake()?.build(cfg.learner.gamma)?;
    prepare_with(cfg, mdp, &cfg.expert, cfg.n_demos)
}

/// As [`prepare_tabular`] with the expert and demo count overridden.
pub fn prepare_with(cfg: &ExperimentConfig, mdp: TabularMdp, source: &ExpertSource, n_demos: usize) -> Result<Prepared> {
    let expert = build_expert(&mdp, source)?;
    let demos = match (&expert, source) {
        (Some(pi), _) => collect_demos(&mdp, pi, n_demos, cfg.demo_seed),
        (None, ExpertSource::DemoFile { path }) => load_demos(path)?,
        (None, _) => unreachable!("only demo files come without a policy"),
    };
    let stats = estimate_visit_stats(&demos, mdp.n_states(), mdp.horizon())?;
    let support = support_from_stats(&mdp, &stats, &cfg.removal)?;
    let estop = build_estop_mdp(&mdp, &support)?;
    Ok(Prepared {
        mdp,
        expert,
        demos,
        stats,
        estop,
    })
}

/// State trajectories of the demonstrating pendulum controller.
pub fn pendulum_demos(p: &PendulumConfig, n: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let start = pendulum_reset(&p.spec, &mut rng);
            let ep = rollout_linear(&p.spec, &p.demo_gains, start, None)?;
            Ok(ep.states.iter().map(|s| s.as_array().to_vec()).collect())
        })
        .collect()
}

pub fn pendulum_box(p: &PendulumConfig, n: usize, seed: u64) -> Result<ContinuousBox> {
    let demos = pendulum_demos(p, n, seed)?;
    Ok(box_from_trajectories(&demos, p.box_margin)?)
}
