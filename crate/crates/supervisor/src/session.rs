//! A training session that a supervisor can interrupt.
//!
//! Q-learning runs on FrozenLake with the supervisor's removed set applied
//! online. A trigger ends the running episode before its next transition and
//! permanently removes the last `window` visited states, except initial ones.

use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use estop_core::envs::{build_frozenlake, FrozenLakeSpec, GridMap};
use estop_core::learners::{Evaluator, QLearner};
use estop_core::{LearnerConfig, LearningCurve, LearningEnv, MdpError, StateSet, SupportSet, TabularMdp};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown environment {0:?}")]
    UnknownEnvironment(String),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("session {0}")]
    NotRunning(&'static str),
    #[error(transparent)]
    Core(#[from] MdpError),
}

pub type Result<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// `frozen_lake_8x8` or `frozen_lake_4x4`.
    pub environment: String,
    pub hole_escape_prob: f64,
    pub horizon: usize,
    pub learner: LearnerConfig,
    /// Paced steps per second while an observer is attached.
    pub speed: f64,
    /// Default marking window of a trigger.
    pub window: usize,
    /// Create the session paused; `resume` starts it.
    pub start_paused: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let spec = FrozenLakeSpec::default();
        Self {
            environment: "frozen_lake_8x8".into(),
            hole_escape_prob: spec.hole_escape_prob,
            horizon: spec.horizon,
            learner: LearnerConfig::default(),
            speed: 5.0,
            window: 1,
            start_paused: false,
        }
    }
}

impl SessionConfig {
    pub fn build_mdp(&self) -> Result<TabularMdp> {
        let map = match self.environment.as_str() {
            "frozen_lake_8x8" => GridMap::classic_8x8(),
            "frozen_lake_4x4" => GridMap::classic_4x4(),
            other => return Err(SessionError::UnknownEnvironment(other.into())),
        };
        if !(self.speed > 0.0) || self.window == 0 {
            return Err(SessionError::Config("speed must be positive and window at least 1".into()));
        }
        let spec = FrozenLakeSpec {
            hole_escape_prob: self.hole_escape_prob,
            horizon: self.horizon,
            discount: self.learner.gamma,
            ..FrozenLakeSpec::with_map(map)
        };
        Ok(build_frozenlake(&spec)?)
    }

    pub fn grid(&self) -> Option<GridMap> {
        match self.environment.as_str() {
            "frozen_lake_8x8" => Some(GridMap::classic_8x8()),
            "frozen_lake_4x4" => Some(GridMap::classic_4x4()),
            _ => None,
        }
    }
}

/// What observers receive: one document per transition, plus one per state
/// marked by an intervention (with `removed_flag` set and no action).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub episode: usize,
    pub t: usize,
    pub s: usize,
    pub a: Option<usize>,
    pub r: f64,
    pub removed_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionRecord {
    /// Milliseconds since the Unix epoch.
    pub wall_time_ms: u64,
    pub episode: usize,
    pub t: usize,
    pub state: usize,
    pub window: usize,
    /// States newly added to the removed set.
    pub marked: Vec<usize>,
}

/// Replay stamp of an intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub episode: usize,
    pub t: usize,
    pub window: usize,
}

impl From<&InterventionRecord> for ReplayEntry {
    fn from(r: &InterventionRecord) -> Self {
        Self {
            episode: r.episode,
            t: r.t,
            window: r.window,
        }
    }
}

/// The sequential part of a session: learner, support and log.
#[derive(Debug, Clone)]
pub struct SessionCore {
    cfg: SessionConfig,
    mdp: TabularMdp,
    env: LearningEnv,
    learner: QLearner,
    evaluator: Evaluator,
    curve: LearningCurve,
    removed: BTreeSet<usize>,
    protected: Vec<usize>,
    /// States of the running episode, one per time point so far.
    visited: Vec<usize>,
    interventions: Vec<InterventionRecord>,
}

impl SessionCore {
    pub fn new(cfg: SessionConfig) -> Result<Self> {
        let mdp = cfg.build_mdp()?;
        let env = LearningEnv::online(&mdp, &StateSet::full(mdp.n_states()))?;
        let mut learner = QLearner::new(&env, &cfg.learner)?;
        let mut evaluator = Evaluator::new(cfg.learner.gamma);
        let mut curve = LearningCurve::new(cfg.learner.seed);
        let (j_full, j_train) = evaluator.score(&env, &learner.greedy_policy())?;
        curve.push(0, j_full, j_train);
        let mut visited = Vec::new();
        if cfg.learner.episodes > 0 {
            visited.push(learner.ensure_started(&env));
        }
        Ok(Self {
            protected: mdp.initial_support(),
            cfg,
            mdp,
            env,
            learner,
            evaluator,
            curve,
            removed: BTreeSet::new(),
            visited,
            interventions: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn finished(&self) -> bool {
        self.learner.episode() >= self.cfg.learner.episodes
    }

    pub fn episode(&self) -> usize {
        self.learner.episode()
    }

    pub fn t(&self) -> usize {
        self.learner.t()
    }

    pub fn current_state(&self) -> Option<usize> {
        self.learner.current_state()
    }

    pub fn removed(&self) -> &BTreeSet<usize> {
        &self.removed
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn interventions(&self) -> &[InterventionRecord] {
        &self.interventions
    }

    pub fn episode_returns(&self) -> &[f64] {
        self.learner.episode_returns()
    }

    /// `S ∖ removed`.
    pub fn support(&self) -> StateSet {
        let n = self.mdp.n_states();
        StateSet::new(n, (0..n).filter(|s| !self.removed.contains(s))).expect("indices in range")
    }

    pub fn support_document(&self) -> SupportSet {
        SupportSet::StateSet(self.support())
    }

    /// Scores the greedy policy when the learner has just completed an
    /// episode on the evaluation cadence.
    fn after_episode(&mut self) -> Result<()> {
        let done = self.learner.episode();
        let every = self.cfg.learner.eval_every_episodes;
        if done.is_multiple_of(every) || done == self.cfg.learner.episodes {
            let (j_full, j_train) = self.evaluator.score(&self.env, &self.learner.greedy_policy())?;
            self.curve.push(self.learner.states_seen(), j_full, j_train);
        }
        self.visited.clear();
        if !self.finished() {
            self.visited.push(self.learner.ensure_started(&self.env));
        }
        Ok(())
    }

    /// Takes one transition. `None` once all episodes are done.
    pub fn step(&mut self) -> Result<Option<SessionEvent>> {
        if self.finished() {
            return Ok(None);
        }
        let ev = self.learner.step(&self.env);
        if ev.done.is_some() {
            self.after_episode()?;
        } else {
            self.visited.push(ev.next_state);
        }
        Ok(Some(SessionEvent {
            episode: ev.episode,
            t: ev.t,
            s: ev.state,
            a: Some(ev.action),
            r: ev.reward,
            removed_flag: false,
        }))
    }

    /// Ends the running episode and removes the last `window` visited states
    /// that are not initial states.
    pub fn trigger(&mut self, window: usize) -> Result<InterventionRecord> {
        if window == 0 {
            return Err(SessionError::Config("window must be at least 1".into()));
        }
        if self.finished() {
            return Err(SessionError::NotRunning("has ended"));
        }
        let state = *self.visited.last().expect("a running session has a current state");
        let (episode, t) = (self.learner.episode(), self.learner.t());
        let start = self.visited.len().saturating_sub(window);
        let mut marked = Vec::new();
        for &s in &self.visited[start..] {
            if !self.protected.contains(&s) && self.removed.insert(s) {
                marked.push(s);
            }
        }
        if !marked.is_empty() {
            self.env.set_support(&self.support())?;
        }
        self.learner.abort_episode();
        self.after_episode()?;
        let wall_time_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let record = InterventionRecord {
            wall_time_ms,
            episode,
            t,
            state,
            window,
            marked,
        };
        self.interventions.push(record.clone());
        Ok(record)
    }

    /// Runs a fresh session to completion, applying each intervention when
    /// the learner reaches its `(episode, t)` stamp.
    pub fn replay(cfg: SessionConfig, log: &[ReplayEntry]) -> Result<Self> {
        let mut core = Self::new(cfg)?;
        let mut pending = log.iter().peekable();
        while !core.finished() {
            while let Some(entry) = pending.peek() {
                if (entry.episode, entry.t) == (core.episode(), core.t()) {
                    core.trigger(entry.window)?;
                    pending.next();
                } else {
                    break;
                }
            }
            if core.finished() {
                break;
            }
            core.step()?;
        }
        Ok(core)
    }
}
