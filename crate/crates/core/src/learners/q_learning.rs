use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_argmax, Evaluator, LearnerConfig, LearningCurve, LearningEnv};
use crate::error::Result;
use crate::mdp::{argmax, seeded_rng, TabularPolicy, TerminationCause};

/// One transition taken by a [`QLearner`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub episode: usize,
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// Set when the episode ended with this transition.
    pub done: Option<TerminationCause>,
}

/// Q-learning advanced one transition at a time.
///
/// The behaviour policy is ε-greedy with random tie-breaking; the evaluated
/// policy is greedy with the lowest action index on ties. Q starts at zero.
/// Horizon truncation bootstraps, terminal and e-stop transitions do not.
#[derive(Debug, Clone)]
pub struct QLearner {
    cfg: LearnerConfig,
    q: Vec<f64>,
    n_actions: usize,
    horizon: usize,
    rng: ChaCha8Rng,
    episode: usize,
    t: usize,
    state: Option<usize>,
    states_seen: u64,
    episode_return: f64,
    episode_returns: Vec<f64>,
}

impl QLearner {
    pub fn new(env: &LearningEnv, cfg: &LearnerConfig) -> Result<Self> {
        cfg.validate()?;
        env.check()?;
        Ok(Self {
            cfg: cfg.clone(),
            q: vec![0.0; env.train().n_states() * env.n_actions()],
            n_actions: env.n_actions(),
            horizon: env.horizon(),
            rng: seeded_rng(cfg.seed),
            episode: 0,
            t: 0,
            state: None,
            states_seen: 0,
            episode_return: 0.0,
            episode_returns: Vec::new(),
        })
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Completed episodes.
    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Time point of the current state within the running episode.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn current_state(&self) -> Option<usize> {
        self.state
    }

    pub fn states_seen(&self) -> u64 {
        self.states_seen
    }

    pub fn episode_returns(&self) -> &[f64] {
        &self.episode_returns
    }

    /// Starts an episode if none is running and returns the current state.
    pub fn ensure_started(&mut self, env: &LearningEnv) -> usize {
        match self.state {
            Some(s) => s,
            None => {
                let s = env.sample_initial(&mut self.rng);
                self.state = Some(s);
                self.t = 0;
                self.episode_return = 0.0;
                s
            }
        }
    }

    /// Takes and learns from one transition.
    pub fn step(&mut self, env: &LearningEnv) -> StepEvent {
        let s = self.ensure_started(env);
        let na = self.n_actions;
        let row = s * na..(s + 1) * na;
        let action = if self.rng.random::<f64>() < self.cfg.epsilon(self.episode) {
            self.rng.random_range(0..na)
        } else {
            random_argmax(&self.q[row.clone()], &mut self.rng)
        };
        let (next, reward, cause) = env.transition(s, action, &mut self.rng);
        let bootstrap = if cause.is_some() {
            0.0
        } else {
            self.q[next * na..(next + 1) * na]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let idx = s * na + action;
        self.q[idx] += self.cfg.alpha * (reward + self.cfg.gamma * bootstrap - self.q[idx]);

        let event_t = self.t;
        self.t += 1;
        self.states_seen += 1;
        self.episode_return += reward;
        let done = match cause {
            Some(c) => Some(c),
            None if self.t + 1 >= self.horizon => Some(TerminationCause::Horizon),
            None => None,
        };
        let episode = self.episode;
        if done.is_some() {
            self.finish_episode();
        } else {
            self.state = Some(next);
        }
        StepEvent {
            episode,
            t: event_t,
            state: s,
            action,
            reward,
            next_state: next,
            done,
        }
    }

    /// Ends the running episode without another transition. Returns `false`
    /// when no episode was running.
    pub fn abort_episode(&mut self) -> bool {
        if self.state.is_none() {
            return false;
        }
        self.finish_episode();
        true
    }

    fn finish_episode(&mut self) {
        self.episode_returns.push(self.episode_return);
        self.episode += 1;
        self.state = None;
        self.t = 0;
        self.episode_return = 0.0;
    }

    /// Greedy policy over the training state space (lowest index on ties).
    pub fn greedy_policy(&self) -> TabularPolicy {
        let actions: Vec<usize> = self.q.chunks(self.n_actions).map(argmax).collect();
        TabularPolicy::deterministic(&actions, self.n_actions)
    }
}

#[derive(Debug, Clone)]
pub struct QLearningResult {
    /// Row-major `[s][a]` over the training state space.
    pub q: Vec<f64>,
    pub policy: TabularPolicy,
    pub curve: LearningCurve,
    pub episode_returns: Vec<f64>,
}

/// Runs `cfg.episodes` episodes, scoring the greedy policy before training
/// and after every `cfg.eval_every_episodes` episodes.
pub fn q_learning(env: &LearningEnv, cfg: &LearnerConfig) -> Result<QLearningResult> {
    let mut learner = QLearner::new(env, cfg)?;
    let mut evaluator = Evaluator::new(cfg.gamma);
    let mut curve = LearningCurve::new(cfg.seed);
    let (j_full, j_train) = evaluator.score(env, &learner.greedy_policy())?;
    curve.push(0, j_full, j_train);
    while learner.episode() < cfg.episodes {
        let event = learner.step(env);
        let finished = learner.episode();
        if event.done.is_some() && (finished % cfg.eval_every_episodes == 0 || finished == cfg.episodes) {
            let (j_full, j_train) = evaluator.score(env, &learner.greedy_policy())?;
            curve.push(learner.states_seen(), j_full, j_train);
        }
    }
    Ok(QLearningResult {
        policy: learner.greedy_policy(),
        q: learner.q,
        curve,
        episode_returns: learner.episode_returns,
    })
}
