use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LearningCurve;
use crate::envs::{pendulum_reset, pendulum_step, PendulumSpec, PendulumState};
use crate::error::{MdpError, Result};
use crate::mdp::seeded_rng;
use crate::support::ContinuousBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub iterations: usize,
    pub population: usize,
    pub elite_fraction: f64,
    pub init_std: f64,
    /// Lower bound on every per-weight variance.
    pub min_variance: f64,
    /// Start states drawn per iteration and shared by the whole population.
    pub starts_per_iteration: usize,
    /// Fixed start states used to score the mean policy.
    pub eval_starts: usize,
    pub eval_seed: u64,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            iterations: 40,
            population: 30,
            elite_fraction: 0.2,
            init_std: 10.0,
            min_variance: 1e-6,
            starts_per_iteration: 2,
            eval_starts: 5,
            eval_seed: 12_345,
            seed: 0,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.starts_per_iteration == 0 || self.eval_starts == 0 {
            return Err(MdpError::Invalid("population and start counts must be positive".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(MdpError::Invalid("elite_fraction must lie in (0, 1]".into()));
        }
        if !(self.init_std >= 0.0) || !(self.min_variance > 0.0) {
            return Err(MdpError::Invalid("init_std must be >= 0 and min_variance > 0".into()));
        }
        Ok(())
    }
}

/// `clamp(w · [upright offset, θ̇], ±max_torque)`.
pub fn linear_torque(spec: &PendulumSpec, weights: &[f64; 2], state: &PendulumState) -> f64 {
    let u = weights[0] * state.upright_offset() + weights[1] * state.theta_dot;
    u.clamp(-spec.max_torque, spec.max_torque)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumEpisode {
    /// Visited states, the start included.
    pub states: Vec<PendulumState>,
    pub total_reward: f64,
    /// Transitions taken, the e-stop transition included.
    pub steps: usize,
    pub estopped: bool,
}

/// Runs a linear controller for one episode. With a box, leaving it ends the
/// episode and the leaving transition pays nothing.
pub fn rollout_linear(
    spec: &PendulumSpec,
    weights: &[f64; 2],
    start: PendulumState,
    support: Option<&ContinuousBox>,
) -> Result<PendulumEpisode> {
    let inside = |s: &PendulumState| support.is_none_or(|b| b.contains(&s.as_array()));
    let mut ep = PendulumEpisode {
        states: vec![start],
        total_reward: 0.0,
        steps: 0,
        estopped: !inside(&start),
    };
    if ep.estopped {
        return Ok(ep);
    }
    let mut s = start;
    for _ in 0..spec.episode_length {
        let (next, reward) = pendulum_step(spec, &s, linear_torque(spec, weights, &s))?;
        ep.steps += 1;
        if !inside(&next) {
            ep.estopped = true;
            break;
        }
        ep.total_reward += reward;
        ep.states.push(next);
        s = next;
    }
    Ok(ep)
}

/// Mean absolute upright offset over the final `last` states of full-length
/// unsupported episodes, averaged over `starts`.
pub fn mean_final_offset(spec: &PendulumSpec, weights: &[f64; 2], starts: &[PendulumState], last: usize) -> Result<f64> {
    let mut total = 0.0;
    for &start in starts {
        let ep = rollout_linear(spec, weights, start, None)?;
        let tail = &ep.states[ep.states.len().saturating_sub(last)..];
        total += tail.iter().map(|s| s.upright_offset().abs()).sum::<f64>() / tail.len() as f64;
    }
    Ok(total / starts.len() as f64)
}

#[derive(Debug, Clone)]
pub struct CemResult {
    pub mean: [f64; 2],
    pub std: [f64; 2],
    /// Mean-policy return on the fixed evaluation starts against training
    /// transitions.
    pub curve: LearningCurve,
    /// Average training episode length per iteration.
    pub mean_episode_lengths: Vec<f64>,
    pub eval_starts: Vec<PendulumState>,
}

/// The evaluation start states of `cfg`.
pub fn eval_starts(spec: &PendulumSpec, cfg: &CemConfig) -> Vec<PendulumState> {
    let mut rng = seeded_rng(cfg.eval_seed);
    (0..cfg.eval_starts).map(|_| pendulum_reset(spec, &mut rng)).collect()
}

fn evaluate(spec: &PendulumSpec, w: &[f64; 2], starts: &[PendulumState]) -> Result<f64> {
    let mut total = 0.0;
    for &s in starts {
        total += rollout_linear(spec, w, s, None)?.total_reward;
    }
    Ok(total / starts.len() as f64)
}

/// Cross-entropy search over linear feedback gains with a diagonal Gaussian.
pub fn cross_entropy_search(
    spec: &PendulumSpec,
    support: Option<&ContinuousBox>,
    cfg: &CemConfig,
) -> Result<CemResult> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let starts_eval = eval_starts(spec, cfg);
    let n_elite = ((cfg.population as f64 * cfg.elite_fraction).round() as usize).clamp(1, cfg.population);
    let mut mean = [0.0; 2];
    let mut std = [cfg.init_std; 2];
    let mut curve = LearningCurve::new(cfg.seed);
    let mut lengths = Vec::with_capacity(cfg.iterations);
    let mut states_seen = 0u64;
    let j = evaluate(spec, &mean, &starts_eval)?;
    curve.push(0, j, j);

    for _ in 0..cfg.iterations {
        let starts: Vec<PendulumState> = (0..cfg.starts_per_iteration)
            .map(|_| pendulum_reset(spec, &mut rng))
            .collect();
        let mut scored: Vec<([f64; 2], f64)> = Vec::with_capacity(cfg.population);
        let mut steps_this_iter = 0usize;
        for _ in 0..cfg.population {
            let mut w = [0.0; 2];
            for d in 0..2 {
                let normal = Normal::new(mean[d], std[d]).map_err(|e| MdpError::Invalid(e.to_string()))?;
                w[d] = normal.sample(&mut rng);
            }
            let mut ret = 0.0;
            for &s in &starts {
                let ep = rollout_linear(spec, &w, s, support)?;
                steps_this_iter += ep.steps;
                ret += ep.total_reward;
            }
            scored.push((w, ret / starts.len() as f64));
        }
        states_seen += steps_this_iter as u64;
        lengths.push(steps_this_iter as f64 / (cfg.population * starts.len()) as f64);

        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
        let elites: Vec<[f64; 2]> = order[..n_elite].iter().map(|&i| scored[i].0).collect();
        for d in 0..2 {
            let m = elites.iter().map(|w| w[d]).sum::<f64>() / n_elite as f64;
            let var = elites.iter().map(|w| (w[d] - m).powi(2)).sum::<f64>() / n_elite as f64;
            mean[d] = m;
            std[d] = var.max(cfg.min_variance).sqrt();
        }
        let j = evaluate(spec, &mean, &starts_eval)?;
        curve.push(states_seen, j, j);
    }
    Ok(CemResult {
        mean,
        std,
        curve,
        mean_episode_lengths: lengths,
        eval_starts: starts_eval,
    })
}
