//! Finite episodic MDPs, tabular policies, and exact evaluation.
//!
//! Time indexing: an episode observes the states `s_0, …, s_{H-1}` and
//! therefore performs `H - 1` rewarded transitions. `ρ^t` is the state
//! distribution at time point `t`, `ρ_π` the mean of `ρ^0 … ρ^{H-1}`, and a
//! hitting probability is the chance that a state shows up at any of those `H`
//! time points. This is the indexing under which the union bound
//! `h(s) ≤ H·ρ_π(s)` holds exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MdpError, Result};

/// Tolerance for row sums and initial distributions.
pub const PROB_TOL: f64 = 1e-12;
/// Iterative evaluation tolerance used throughout the experiments.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Sweep cap for iterative evaluation.
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

/// One entry of a sparse transition row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Successor {
    pub state: usize,
    pub prob: f64,
    pub reward: f64,
}

impl Successor {
    pub fn new(state: usize, prob: f64, reward: f64) -> Self {
        Self {
            state,
            prob,
            reward,
        }
    }
}

/// A finite, episodic MDP with sparse transitions and rewards on `(s, a, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    rho0: Vec<f64>,
    terminal: Vec<bool>,
    rows: Vec<Vec<Successor>>,
    estop_state: Option<usize>,
}

impl TabularMdp {
    /// Validates and builds an MDP. `rows` is indexed by `s * n_actions + a`.
    /// Duplicate successors within a row are merged (their rewards must agree)
    /// and zero-probability entries are dropped.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        rho0: Vec<f64>,
        rows: Vec<Vec<Successor>>,
        terminals: &[usize],
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return invalid("n_states and n_actions must be positive");
        }
        if horizon == 0 {
            return invalid("horizon must be positive");
        }
        if rows.len() != n_states * n_actions {
            return Err(MdpError::Dimension(format!(
                "expected {} transition rows, got {}",
                n_states * n_actions,
                rows.len()
            )));
        }
        check_distribution(&rho0, n_states, "rho0")?;

        let mut merged_rows = Vec::with_capacity(rows.len());
        for (idx, row) in rows.into_iter().enumerate() {
            let (s, a) = (idx / n_actions, idx % n_actions);
            merged_rows.push(merge_row(row, n_states, s, a)?);
        }

        let mut terminal = vec![false; n_states];
        for &s in terminals {
            if s >= n_states {
                return invalid(format!("terminal state {s} out of range"));
            }
            terminal[s] = true;
            for a in 0..n_actions {
                let row = &merged_rows[s * n_actions + a];
                let ok = row.len() == 1 && row[0].state == s && row[0].reward == 0.0;
                if !ok {
                    return invalid(format!(
                        "terminal state {s} must self-loop with reward 0 under action {a}"
                    ));
                }
            }
        }

        Ok(Self {
            n_states,
            n_actions,
            horizon,
            rho0,
            terminal,
            rows: merged_rows,
            estop_state: None,
        })
    }

    /// Marks `s` as the absorbing e-stop state. It must already be terminal.
    pub fn with_estop_state(mut self, s: usize) -> Result<Self> {
        if s >= self.n_states || !self.terminal[s] {
            return invalid(format!("e-stop state {s} must be a terminal state"));
        }
        self.estop_state = Some(s);
        Ok(self)
    }

    /// Same dynamics with a different horizon.
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return invalid("horizon must be positive");
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminals(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.terminal[s]).collect()
    }

    pub fn estop_state(&self) -> Option<usize> {
        self.estop_state
    }

    /// Sparse successor list for `(s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> &[Successor] {
        &self.rows[s * self.n_actions + a]
    }

    /// States with positive initial probability.
    pub fn initial_support(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.rho0[s] > 0.0).collect()
    }

    /// Expected immediate reward of `(s, a)`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.successors(s, a).iter().map(|x| x.prob * x.reward).sum()
    }

    /// Largest transition count over all rows; used for FLOP accounting
    /// of sparse sweeps and for sanity checks.
    pub fn max_branching(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn sample_successor(&self, s: usize, a: usize, rng: &mut impl Rng) -> Successor {
        let row = self.successors(s, a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for x in row {
            acc += x.prob;
            if u < acc {
                return *x;
            }
        }
        *row.last().expect("rows are never empty")
    }

    /// Samples one transition.
    pub fn step(&self, s: usize, a: usize, rng: &mut impl Rng) -> (usize, f64) {
        let x = self.sample_successor(s, a, rng);
        (x.state, x.reward)
    }

    /// Samples an initial state from `rho0`.
    pub fn sample_initial(&self, rng: &mut impl Rng) -> usize {
        sample_index(&self.rho0, rng)
    }
}

fn check_distribution(p: &[f64], n: usize, what: &str) -> Result<()> {
    if p.len() != n {
        return Err(MdpError::Dimension(format!(
            "{what} has length {} but there are {n} entries",
            p.len()
        )));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return invalid(format!("{what} has a negative or non-finite entry"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return invalid(format!("{what} sums to {sum}, expected 1"));
    }
    Ok(())
}

fn merge_row(row: Vec<Successor>, n_states: usize, s: usize, a: usize) -> Result<Vec<Successor>> {
    let mut out: Vec<Successor> = Vec::with_capacity(row.len());
    for x in row {
        if x.state >= n_states {
            return invalid(format!("({s},{a}) -> {} is out of range", x.state));
        }
        if !x.prob.is_finite() || x.prob < 0.0 {
            return invalid(format!("({s},{a}) -> {} has probability {}", x.state, x.prob));
        }
        if !(0.0..=1.0).contains(&x.reward) {
            return invalid(format!(
                "({s},{a}) -> {} has reward {} outside [0, 1]",
                x.state, x.reward
            ));
        }
        if x.prob == 0.0 {
            continue;
        }
        match out.iter_mut().find(|y| y.state == x.state) {
            Some(y) if y.reward == x.reward => y.prob += x.prob,
            Some(y) => {
                return invalid(format!(
                    "({s},{a}) -> {} listed with rewards {} and {}",
                    x.state, y.reward, x.reward
                ))
            }
            None => out.push(x),
        }
    }
    let sum: f64 = out.iter().map(|x| x.prob).sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return invalid(format!("row ({s},{a}) sums to {sum}, expected 1"));
    }
    Ok(out)
}

pub(crate) fn sample_index(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > 0.0 {
            acc += x;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Whether a policy conditions on time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyMode {
    Stationary,
    /// Defined for `t` in `0..horizon`.
    TimeDependent { horizon: usize },
}

/// Action distributions per state (and optionally per time point).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    mode: PolicyMode,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// `probs` is laid out as `[s][a]`.
    pub fn stationary(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        Self::build(n_states, n_actions, PolicyMode::Stationary, probs)
    }

    /// `probs` is laid out as `[t][s][a]` for `t` in `0..horizon`.
    pub fn time_dependent(
        horizon: usize,
        n_states: usize,
        n_actions: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if horizon == 0 {
            return invalid("policy horizon must be positive");
        }
        Self::build(n_states, n_actions, PolicyMode::TimeDependent { horizon }, probs)
    }

    fn build(n_states: usize, n_actions: usize, mode: PolicyMode, probs: Vec<f64>) -> Result<Self> {
        let slices = match mode {
            PolicyMode::Stationary => 1,
            PolicyMode::TimeDependent { horizon } => horizon,
        };
        if probs.len() != slices * n_states * n_actions {
            return Err(MdpError::Dimension(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                slices * n_states * n_actions
            )));
        }
        for (i, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, n_actions, &format!("policy row {i}"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            mode,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            n_states,
            n_actions,
            mode: PolicyMode::Stationary,
            probs: vec![p; n_states * n_actions],
        }
    }

    /// Deterministic stationary policy.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            assert!(a < n_actions, "action {a} out of range");
            probs[s * n_actions + a] = 1.0;
        }
        Self {
            n_states: actions.len(),
            n_actions,
            mode: PolicyMode::Stationary,
            probs,
        }
    }

    /// Deterministic time-dependent policy from `actions[t][s]`.
    pub fn deterministic_time_dependent(actions: &[Vec<usize>], n_actions: usize) -> Self {
        let horizon = actions.len();
        assert!(horizon > 0);
        let n_states = actions[0].len();
        let mut probs = vec![0.0; horizon * n_states * n_actions];
        for (t, row) in actions.iter().enumerate() {
            assert_eq!(row.len(), n_states);
            for (s, &a) in row.iter().enumerate() {
                probs[(t * n_states + s) * n_actions + a] = 1.0;
            }
        }
        Self {
            n_states,
            n_actions,
            mode: PolicyMode::TimeDependent { horizon },
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    /// Action distribution at time `t` in state `s`. Time-dependent policies
    /// reuse their last slice past the end of their horizon.
    pub fn action_probs(&self, t: usize, s: usize) -> &[f64] {
        let slice = match self.mode {
            PolicyMode::Stationary => 0,
            PolicyMode::TimeDependent { horizon } => t.min(horizon - 1),
        };
        let start = (slice * self.n_states + s) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    /// The most probable action (lowest index among ties).
    pub fn mode_action(&self, t: usize, s: usize) -> usize {
        argmax(self.action_probs(t, s))
    }

    pub fn sample_action(&self, t: usize, s: usize, rng: &mut impl Rng) -> usize {
        sample_index(self.action_probs(t, s), rng)
    }

    /// Keeps only the first `n` states (drops appended states such as `s_term`).
    pub fn restrict(&self, n: usize) -> Result<Self> {
        if n > self.n_states {
            return Err(MdpError::Dimension(format!(
                "cannot restrict {} states to {n}",
                self.n_states
            )));
        }
        let slices = self.probs.len() / (self.n_states * self.n_actions);
        let mut probs = Vec::with_capacity(slices * n * self.n_actions);
        for k in 0..slices {
            let start = k * self.n_states * self.n_actions;
            probs.extend_from_slice(&self.probs[start..start + n * self.n_actions]);
        }
        Ok(Self {
            n_states: n,
            n_actions: self.n_actions,
            mode: self.mode,
            probs,
        })
    }

    /// Appends states acting uniformly at random.
    pub fn extend(&self, n: usize) -> Result<Self> {
        if n < self.n_states {
            return Err(MdpError::Dimension(format!(
                "cannot extend {} states to {n}",
                self.n_states
            )));
        }
        let slices = self.probs.len() / (self.n_states * self.n_actions);
        let uniform = 1.0 / self.n_actions as f64;
        let mut probs = Vec::with_capacity(slices * n * self.n_actions);
        for k in 0..slices {
            let start = k * self.n_states * self.n_actions;
            probs.extend_from_slice(&self.probs[start..start + self.n_states * self.n_actions]);
            probs.extend(std::iter::repeat_n(uniform, (n - self.n_states) * self.n_actions));
        }
        Ok(Self {
            n_states: n,
            n_actions: self.n_actions,
            mode: self.mode,
            probs,
        })
    }

    fn check_compatible(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(MdpError::Dimension(format!(
                "policy is {}x{} but the MDP is {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }

    fn check_covers(&self, decisions: usize) -> Result<()> {
        if let PolicyMode::TimeDependent { horizon } = self.mode {
            if horizon < decisions {
                return Err(MdpError::Dimension(format!(
                    "time-dependent policy covers {horizon} steps, {decisions} required"
                )));
            }
        }
        Ok(())
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Evaluation criterion shared by every solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalMode {
    /// Undiscounted sum over the `H - 1` transitions of an episode.
    FiniteHorizon,
    /// Discounted return until a terminal state; rollouts still stop at `H`.
    Discounted { gamma: f64 },
}

impl EvalMode {
    pub fn discounted(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return invalid(format!("discount {gamma} must lie in (0, 1)"));
        }
        Ok(EvalMode::Discounted { gamma })
    }
}

/// Tolerance and sweep cap for iterative procedures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

/// `ρ^t` by forward recursion from `ρ^0 = rho0`.
pub fn state_distribution(mdp: &TabularMdp, policy: &TabularPolicy, t: usize) -> Result<Vec<f64>> {
    policy.check_compatible(mdp)?;
    policy.check_covers(t)?;
    let mut rho = mdp.rho0.clone();
    for step in 0..t {
        rho = propagate(mdp, policy, step, &rho);
    }
    Ok(rho)
}

/// `ρ^0, …, ρ^{H-1}`.
pub fn state_distributions(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<Vec<f64>>> {
    policy.check_compatible(mdp)?;
    let h = mdp.horizon;
    policy.check_covers(h - 1)?;
    let mut out = Vec::with_capacity(h);
    out.push(mdp.rho0.clone());
    for step in 0..h - 1 {
        let next = propagate(mdp, policy, step, &out[step]);
        out.push(next);
    }
    Ok(out)
}

fn propagate(mdp: &TabularMdp, policy: &TabularPolicy, t: usize, rho: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; mdp.n_states];
    for (s, &mass) in rho.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for (a, &pa) in policy.action_probs(t, s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for x in mdp.successors(s, a) {
                next[x.state] += mass * pa * x.prob;
            }
        }
    }
    next
}

/// `ρ_π = (1/H) Σ_{t<H} ρ^t`.
pub fn average_state_distribution(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let dists = state_distributions(mdp, policy)?;
    let h = dists.len() as f64;
    let mut avg = vec![0.0; mdp.n_states];
    for d in &dists {
        for (acc, x) in avg.iter_mut().zip(d) {
            *acc += x;
        }
    }
    avg.iter_mut().for_each(|x| *x /= h);
    Ok(avg)
}

/// Expected return `J(π)` under `mode`.
pub fn policy_value(mdp: &TabularMdp, policy: &TabularPolicy, mode: EvalMode) -> Result<f64> {
    let v = state_values(mdp, policy, mode, IterOptions::default())?;
    Ok(dot(&mdp.rho0, &v))
}

/// Per-state values at `t = 0` (finite horizon) or the discounted fixed point.
pub fn state_values(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mode: EvalMode,
    opts: IterOptions,
) -> Result<Vec<f64>> {
    policy.check_compatible(mdp)?;
    match mode {
        EvalMode::FiniteHorizon => {
            let h = mdp.horizon;
            policy.check_covers(h - 1)?;
            let mut v = vec![0.0; mdp.n_states];
            for t in (0..h - 1).rev() {
                v = (0..mdp.n_states)
                    .map(|s| policy_backup(mdp, policy, t, s, &v, 1.0))
                    .collect();
            }
            Ok(v)
        }
        EvalMode::Discounted { gamma } => discounted_evaluation(mdp, policy, gamma, opts, None),
    }
}

/// Iterative policy evaluation for a stationary (or time-0 slice of a)
/// policy. `warm` seeds the iteration.
pub fn discounted_evaluation(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    gamma: f64,
    opts: IterOptions,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>> {
    policy.check_compatible(mdp)?;
    let mut v = match warm {
        Some(w) if w.len() == mdp.n_states => w.to_vec(),
        _ => vec![0.0; mdp.n_states],
    };
    let mut next = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        residual = 0.0;
        for (s, slot) in next.iter_mut().enumerate() {
            *slot = policy_backup(mdp, policy, 0, s, &v, gamma);
            residual = f64::max(residual, (*slot - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual < opts.tol {
            return Ok(v);
        }
    }
    Err(MdpError::NotConverged {
        sweeps: opts.max_sweeps,
        residual,
    })
}

fn policy_backup(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    t: usize,
    s: usize,
    v: &[f64],
    gamma: f64,
) -> f64 {
    policy
        .action_probs(t, s)
        .iter()
        .enumerate()
        .filter(|(_, &pa)| pa > 0.0)
        .map(|(a, &pa)| pa * q_backup(mdp, s, a, v, gamma))
        .sum()
}

fn q_backup(mdp: &TabularMdp, s: usize, a: usize, v: &[f64], gamma: f64) -> f64 {
    mdp.successors(s, a)
        .iter()
        .map(|x| x.prob * (x.reward + gamma * v[x.state]))
        .sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Horizon,
    TerminalState,
    Estop,
}

/// One transition of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A sampled episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_state: usize,
    pub steps: Vec<Step>,
    pub terminated_early: bool,
    pub termination_cause: TerminationCause,
}

impl Trajectory {
    /// Observed states `s_0, s_1, …` including the final one.
    pub fn states(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(self.initial_state);
        out.extend(self.steps.iter().map(|x| x.next_state));
        out
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|x| x.action).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|x| x.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|x| x.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Deterministic generator used for every seeded sampling path.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Samples one episode; deterministic in `seed`.
pub fn rollout(mdp: &TabularMdp, policy: &TabularPolicy, seed: u64) -> Trajectory {
    rollout_with(mdp, policy, &mut seeded_rng(seed))
}

/// Samples one episode from an existing generator. Stops at the horizon or on
/// entering a terminal state; entering the designated e-stop state reports
/// [`TerminationCause::Estop`].
pub fn rollout_with(mdp: &TabularMdp, policy: &TabularPolicy, rng: &mut impl Rng) -> Trajectory {
    let s0 = mdp.sample_initial(rng);
    let mut s = s0;
    let mut steps = Vec::with_capacity(mdp.horizon.saturating_sub(1));
    let mut cause = TerminationCause::Horizon;
    if mdp.terminal[s] {
        cause = terminal_cause(mdp, s);
    } else {
        for t in 0..mdp.horizon - 1 {
            let a = policy.sample_action(t, s, rng);
            let (next, reward) = mdp.step(s, a, rng);
            steps.push(Step {
                t,
                state: s,
                action: a,
                reward,
                next_state: next,
            });
            s = next;
            if mdp.terminal[s] {
                cause = terminal_cause(mdp, s);
                break;
            }
        }
    }
    Trajectory {
        initial_state: s0,
        terminated_early: cause != TerminationCause::Horizon,
        termination_cause: cause,
        steps,
    }
}

fn terminal_cause(mdp: &TabularMdp, s: usize) -> TerminationCause {
    if mdp.estop_state == Some(s) {
        TerminationCause::Estop
    } else {
        TerminationCause::TerminalState
    }
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    /// Finite horizon: `values[t]` for `t` in `0..H`. Discounted: one vector.
    pub values: Vec<Vec<f64>>,
    pub policy: TabularPolicy,
    pub sweeps: usize,
    pub flops: u64,
}

impl ValueIterationResult {
    /// Values at `t = 0`.
    pub fn initial_values(&self) -> &[f64] {
        &self.values[0]
    }
}

/// FLOPs charged for `sweeps` dense value-iteration updates.
pub fn vi_flops(sweeps: usize, n_states: usize, n_actions: usize) -> u64 {
    4 * sweeps as u64 * (n_states as u64).pow(2) * n_actions as u64
}

/// Bellman-optimal values and a greedy policy (lowest action index on ties).
pub fn value_iteration(mdp: &TabularMdp, mode: EvalMode, tol: f64) -> Result<ValueIterationResult> {
    value_iteration_with(
        mdp,
        mode,
        IterOptions {
            tol,
            ..IterOptions::default()
        },
    )
}

pub fn value_iteration_with(
    mdp: &TabularMdp,
    mode: EvalMode,
    opts: IterOptions,
) -> Result<ValueIterationResult> {
    if !(opts.tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let n = mdp.n_states;
    let na = mdp.n_actions;
    let mut q = vec![0.0; na];
    match mode {
        EvalMode::FiniteHorizon => {
            let h = mdp.horizon;
            let mut values = vec![vec![0.0; n]; h];
            let mut actions = vec![vec![0usize; n]; h];
            for t in (0..h - 1).rev() {
                let (head, tail) = values.split_at_mut(t + 1);
                let next = &tail[0];
                for s in 0..n {
                    for (a, slot) in q.iter_mut().enumerate() {
                        *slot = q_backup(mdp, s, a, next, 1.0);
                    }
                    let best = argmax(&q);
                    actions[t][s] = best;
                    head[t][s] = q[best];
                }
            }
            let sweeps = h - 1;
            Ok(ValueIterationResult {
                policy: TabularPolicy::deterministic_time_dependent(&actions, na),
                values,
                sweeps,
                flops: vi_flops(sweeps, n, na),
            })
        }
        EvalMode::Discounted { gamma } => {
            let mut v: Vec<f64> = vec![0.0; n];
            let mut next: Vec<f64> = vec![0.0; n];
            let mut sweeps = 0;
            loop {
                if sweeps >= opts.max_sweeps {
                    let residual = v.iter().zip(&next).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
                    return Err(MdpError::NotConverged { sweeps, residual });
                }
                sweeps += 1;
                let mut residual: f64 = 0.0;
                for s in 0..n {
                    let best = (0..na)
                        .map(|a| q_backup(mdp, s, a, &v, gamma))
                        .fold(f64::NEG_INFINITY, f64::max);
                    residual = residual.max((best - v[s]).abs());
                    next[s] = best;
                }
                std::mem::swap(&mut v, &mut next);
                if residual < opts.tol {
                    break;
                }
            }
            let actions = greedy_actions(mdp, &v, gamma);
            Ok(ValueIterationResult {
                policy: TabularPolicy::deterministic(&actions, na),
                values: vec![v],
                sweeps,
                flops: vi_flops(sweeps, n, na),
            })
        }
    }
}

/// Greedy actions with respect to `v` (lowest index on ties).
pub fn greedy_actions(mdp: &TabularMdp, v: &[f64], gamma: f64) -> Vec<usize> {
    let mut q = vec![0.0; mdp.n_actions];
    (0..mdp.n_states)
        .map(|s| {
            for (a, slot) in q.iter_mut().enumerate() {
                *slot = q_backup(mdp, s, a, v, gamma);
            }
            argmax(&q)
        })
        .collect()
}

/// `Q(s, a)` table (laid out `[s][a]`) for the given state values.
pub fn q_values(mdp: &TabularMdp, v: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            out.push(q_backup(mdp, s, a, v, gamma));
        }
    }
    out
}
