//! Tabular learners and a cross-entropy policy search, with learning curves
//! scored by exact policy evaluation.

mod actor_critic;
mod cem;
mod curve;
mod q_learning;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MdpError, Result};
use crate::mdp::{discounted_evaluation, IterOptions, TabularMdp, TabularPolicy, TerminationCause};
use crate::support::{build_estop_mdp, EStopMdp, StateSet};

pub use actor_critic::{actor_critic, softmax, ActorCriticResult};
pub use cem::{
    cross_entropy_search, eval_starts, linear_torque, mean_final_offset, rollout_linear, CemConfig, CemResult, PendulumEpisode,
};
pub use curve::{CurvePoint, LearningCurve};
pub use q_learning::{q_learning, QLearner, QLearningResult, StepEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    QLearning,
    ActorCritic,
    CrossEntropy,
}

/// Hyperparameters shared by the tabular learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    /// Q-learning and critic step size.
    pub alpha: f64,
    /// Actor step size.
    pub beta: f64,
    /// Exploration rate at the first episode, decayed linearly to
    /// `epsilon_end` at the last.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub eval_every_episodes: usize,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::QLearning,
            alpha: 0.1,
            beta: 0.05,
            epsilon_start: 0.1,
            epsilon_end: 0.01,
            gamma: 0.99,
            episodes: 10_000,
            eval_every_episodes: 10,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit_open = |x: f64| x > 0.0 && x <= 1.0;
        if !unit_open(self.alpha) || !unit_open(self.beta) {
            return Err(MdpError::Invalid("alpha and beta must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(MdpError::Invalid("epsilon must lie in [0, 1]".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(MdpError::Invalid("gamma must lie in (0, 1)".into()));
        }
        if self.eval_every_episodes == 0 {
            return Err(MdpError::Invalid("eval_every_episodes must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_start;
        }
        let frac = (episode.min(self.episodes - 1)) as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// What a tabular learner trains on and how it is scored.
///
/// Training samples come from `train`, or from `full` with `filter` applied
/// online. Greedy policies are scored in both `train` and `full`.
#[derive(Debug, Clone)]
pub struct LearningEnv {
    train: TabularMdp,
    full: TabularMdp,
    filter: Option<StateSet>,
}

impl LearningEnv {
    pub fn plain(mdp: &TabularMdp) -> Self {
        Self {
            train: mdp.clone(),
            full: mdp.clone(),
            filter: None,
        }
    }

    pub fn estop(estop: &EStopMdp) -> Self {
        Self {
            train: estop.mdp.clone(),
            full: estop.base.clone(),
            filter: None,
        }
    }

    /// Samples `mdp` and stops episodes on leaving `support`.
    pub fn online(mdp: &TabularMdp, support: &StateSet) -> Result<Self> {
        Ok(Self {
            train: build_estop_mdp(mdp, support)?.mdp,
            full: mdp.clone(),
            filter: Some(support.clone()),
        })
    }

    /// Replaces the online support.
    pub fn set_support(&mut self, support: &StateSet) -> Result<()> {
        self.train = build_estop_mdp(&self.full, support)?.mdp;
        self.filter = Some(support.clone());
        Ok(())
    }

    pub fn train(&self) -> &TabularMdp {
        &self.train
    }

    pub fn full(&self) -> &TabularMdp {
        &self.full
    }

    pub fn support(&self) -> Option<&StateSet> {
        self.filter.as_ref()
    }

    pub fn n_actions(&self) -> usize {
        self.train.n_actions()
    }

    pub fn horizon(&self) -> usize {
        self.train.horizon()
    }

    fn check(&self) -> Result<()> {
        if self.train.horizon() < 2 {
            return Err(MdpError::Invalid("learning needs a horizon of at least 2".into()));
        }
        let sampler = self.sampler();
        if sampler.initial_support().iter().any(|&s| sampler.is_terminal(s)) {
            return Err(MdpError::Invalid("initial states must not be terminal".into()));
        }
        Ok(())
    }

    fn sampler(&self) -> &TabularMdp {
        if self.filter.is_some() {
            &self.full
        } else {
            &self.train
        }
    }

    pub(crate) fn sample_initial(&self, rng: &mut impl Rng) -> usize {
        self.sampler().sample_initial(rng)
    }

    /// One transition. The returned cause is set when the episode ends on
    /// this transition for a reason other than the horizon.
    pub(crate) fn transition(
        &self,
        s: usize,
        a: usize,
        rng: &mut impl Rng,
    ) -> (usize, f64, Option<TerminationCause>) {
        match &self.filter {
            Some(support) => {
                let (next, reward) = self.full.step(s, a, rng);
                if !support.contains(next) {
                    (self.full.n_states(), 0.0, Some(TerminationCause::Estop))
                } else if self.full.is_terminal(next) {
                    (next, reward, Some(TerminationCause::TerminalState))
                } else {
                    (next, reward, None)
                }
            }
            None => {
                let (next, reward) = self.train.step(s, a, rng);
                let cause = if self.train.estop_state() == Some(next) {
                    Some(TerminationCause::Estop)
                } else if self.train.is_terminal(next) {
                    Some(TerminationCause::TerminalState)
                } else {
                    None
                };
                (next, reward, cause)
            }
        }
    }
}

/// Scores policies by discounted iterative evaluation in both MDPs of a
/// [`LearningEnv`], warm-starting from the previous call.
#[derive(Debug, Clone)]
pub struct Evaluator {
    gamma: f64,
    opts: IterOptions,
    warm_train: Option<Vec<f64>>,
    warm_full: Option<Vec<f64>>,
}

impl Evaluator {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            opts: IterOptions::default(),
            warm_train: None,
            warm_full: None,
        }
    }

    /// `(J_full, J_train)` of a policy over the training state space.
    pub fn score(&mut self, env: &LearningEnv, policy: &TabularPolicy) -> Result<(f64, f64)> {
        let v_train = discounted_evaluation(&env.train, policy, self.gamma, self.opts, self.warm_train.as_deref())?;
        let j_train = crate::mdp::dot(env.train.rho0(), &v_train);
        self.warm_train = Some(v_train);
        if env.train == env.full {
            return Ok((j_train, j_train));
        }
        let restricted = policy.restrict(env.full.n_states())?;
        let v_full = discounted_evaluation(&env.full, &restricted, self.gamma, self.opts, self.warm_full.as_deref())?;
        let j_full = crate::mdp::dot(env.full.rho0(), &v_full);
        self.warm_full = Some(v_full);
        Ok((j_full, j_train))
    }
}

/// Greedy action among `values` with uniformly random tie-breaking.
pub(crate) fn random_argmax(values: &[f64], rng: &mut impl Rng) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = values.iter().filter(|&&v| v == best).count();
    if ties == 1 {
        return values.iter().position(|&v| v == best).expect("non-empty");
    }
    let pick = rng.random_range(0..ties);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .nth(pick)
        .map(|(i, _)| i)
        .expect("pick < ties")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::seeded_rng;

    #[test]
    fn epsilon_schedule_is_linear() {
        let cfg = LearnerConfig {
            episodes: 11,
            ..LearnerConfig::default()
        };
        assert_eq!(cfg.epsilon(0), 0.1);
        assert!((cfg.epsilon(5) - 0.055).abs() < 1e-15);
        assert!((cfg.epsilon(10) - 0.01).abs() < 1e-15);
        assert!((cfg.epsilon(50) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(LearnerConfig::default().validate().is_ok());
        let bad = LearnerConfig {
            alpha: 0.0,
            ..LearnerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LearnerConfig {
            gamma: 1.0,
            ..LearnerConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: LearnerConfig = serde_json::from_str(r#"{"alpha": 0.5}"#).unwrap();
        assert_eq!(parsed.alpha, 0.5);
        assert!(serde_json::from_str::<LearnerConfig>(r#"{"alpah": 0.5}"#).is_err());
    }

    #[test]
    fn random_argmax_breaks_ties_uniformly() {
        let mut rng = seeded_rng(1);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[random_argmax(&[1.0, 0.0, 1.0], &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 - 15_000.0).abs() < 600.0);
        assert_eq!(random_argmax(&[0.0, 2.0, 1.0], &mut rng), 1);
    }
}
