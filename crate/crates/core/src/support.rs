//! Support sets and the e-stop transformation.
//!
//! A support set decides, state by state, whether an episode may continue.
//! Entering a state outside the support ends the episode and the entering
//! transition pays nothing. For a plain state set this is realised explicitly
//! by [`build_estop_mdp`], which appends an absorbing zero-reward state
//! `s_term`; the other variants are applied online through
//! [`estop_step_filter`] and [`rollout_filtered`].

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MdpError, Result};
use crate::mdp::{Step, Successor, TabularMdp, TabularPolicy, TerminationCause, Trajectory};

fn support_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(MdpError::Support(msg.into()))
}

/// Membership mask over a discrete state space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSet {
    mask: Vec<bool>,
}

impl StateSet {
    pub fn new(n_states: usize, kept: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = vec![false; n_states];
        for s in kept {
            if s >= n_states {
                return support_err(format!("state {s} out of range for {n_states} states"));
            }
            mask[s] = true;
        }
        Ok(Self { mask })
    }

    pub fn full(n_states: usize) -> Self {
        Self {
            mask: vec![true; n_states],
        }
    }

    /// `{s : score(s) > threshold}`.
    pub fn above(scores: &[f64], threshold: f64) -> Self {
        Self {
            mask: scores.iter().map(|&x| x > threshold).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, s: usize) -> bool {
        self.mask.get(s).copied().unwrap_or(false)
    }

    pub fn kept(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&s| self.mask[s]).collect()
    }

    pub fn removed(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&s| !self.mask[s]).collect()
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&x| x).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_subset_of(&self, other: &StateSet) -> bool {
        self.mask.len() == other.mask.len()
            && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    pub fn insert(&mut self, s: usize) {
        self.mask[s] = true;
    }

    pub fn remove(&mut self, s: usize) {
        self.mask[s] = false;
    }

    /// Adds every state with positive initial probability.
    pub fn protect_initial(&mut self, mdp: &TabularMdp) {
        for s in mdp.initial_support() {
            self.mask[s] = true;
        }
    }

    fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        if self.mask.len() != mdp.n_states() {
            return Err(MdpError::Dimension(format!(
                "support covers {} states, MDP has {}",
                self.mask.len(),
                mdp.n_states()
            )));
        }
        if let Some(s) = mdp.initial_support().into_iter().find(|&s| !self.mask[s]) {
            return support_err(format!("initial state {s} lies outside the support"));
        }
        Ok(())
    }
}

/// Per-time-point supports `Ŝ^0, …, Ŝ^{H-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeIndexedSet {
    sets: Vec<StateSet>,
}

impl TimeIndexedSet {
    pub fn new(sets: Vec<StateSet>) -> Result<Self> {
        let Some(first) = sets.first() else {
            return support_err("time-indexed support needs at least one set");
        };
        let n = first.n_states();
        if sets.iter().any(|x| x.n_states() != n) {
            return support_err("time-indexed sets disagree on the state count");
        }
        Ok(Self { sets })
    }

    /// `Ŝ^t = {s : ρ^t(s) > ε}`.
    pub fn from_distributions(dists: &[Vec<f64>], eps: f64) -> Result<Self> {
        Self::new(dists.iter().map(|d| StateSet::above(d, eps)).collect())
    }

    pub fn sets(&self) -> &[StateSet] {
        &self.sets
    }

    pub fn at(&self, t: usize) -> Result<&StateSet> {
        self.sets.get(t).ok_or(MdpError::Timestep {
            t,
            max: self.sets.len() - 1,
        })
    }

    /// Union over time, the single set `Ŝ` obtained with the same threshold.
    pub fn union(&self) -> StateSet {
        let n = self.sets[0].n_states();
        StateSet {
            mask: (0..n).map(|s| self.sets.iter().any(|x| x.contains(s))).collect(),
        }
    }
}

/// Visit budget `f(s)`: the episode stops when a visit would exceed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitCountBudget {
    budget: Vec<u32>,
}

impl VisitCountBudget {
    pub fn new(budget: Vec<u32>) -> Self {
        Self { budget }
    }

    pub fn uniform(n_states: usize, f: u32) -> Self {
        Self {
            budget: vec![f; n_states],
        }
    }

    /// `f(s) = Σ_t 1{ρ^t(s) > ε}`.
    pub fn from_distributions(dists: &[Vec<f64>], eps: f64) -> Self {
        let n = dists.first().map_or(0, Vec::len);
        let mut budget = vec![0u32; n];
        for d in dists {
            for (f, &p) in budget.iter_mut().zip(d) {
                if p > eps {
                    *f += 1;
                }
            }
        }
        Self { budget }
    }

    /// `f(s)` = largest number of visits to `s` in any single demonstration.
    pub fn from_demo_max_counts(n_states: usize, demos: &[Vec<usize>]) -> Self {
        let mut budget = vec![0u32; n_states];
        let mut counts = vec![0u32; n_states];
        for states in demos {
            counts.iter_mut().for_each(|c| *c = 0);
            for &s in states {
                counts[s] += 1;
            }
            for (f, &c) in budget.iter_mut().zip(&counts) {
                *f = (*f).max(c);
            }
        }
        Self { budget }
    }

    pub fn budget(&self) -> &[u32] {
        &self.budget
    }

    pub fn n_states(&self) -> usize {
        self.budget.len()
    }
}

/// Axis-aligned box `lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ContinuousBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return support_err("box bounds must be non-empty and of equal length");
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return support_err("box requires lo <= hi in every dimension");
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| (l..=h).contains(&v))
    }
}

/// Tight box around every demo state, widened on both sides by
/// `margin_fraction · (hi − lo)`.
pub fn box_from_trajectories(demos: &[Vec<Vec<f64>>], margin_fraction: f64) -> Result<ContinuousBox> {
    let mut points = demos.iter().flatten();
    let Some(first) = points.next() else {
        return support_err("box construction needs at least one demo state");
    };
    let mut lo = first.clone();
    let mut hi = first.clone();
    for x in points {
        if x.len() != lo.len() {
            return support_err("demo states have inconsistent dimension");
        }
        for (d, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return support_err("demo state is not finite");
            }
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    for d in 0..lo.len() {
        let pad = margin_fraction * (hi[d] - lo[d]);
        lo[d] -= pad;
        hi[d] += pad;
    }
    ContinuousBox::new(lo, hi)
}

/// Every support variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SupportDocument", into = "SupportDocument")]
pub enum SupportSet {
    StateSet(StateSet),
    TimeIndexed(TimeIndexedSet),
    VisitCountBudget(VisitCountBudget),
    ContinuousBox(ContinuousBox),
}

/// Wire form of [`SupportSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SupportDocument {
    StateSet { n_states: usize, states: Vec<usize> },
    TimeIndexed { n_states: usize, sets: Vec<Vec<usize>> },
    VisitCountBudget { budget: Vec<u32> },
    ContinuousBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl TryFrom<SupportDocument> for SupportSet {
    type Error = MdpError;

    fn try_from(doc: SupportDocument) -> Result<Self> {
        Ok(match doc {
            SupportDocument::StateSet { n_states, states } => {
                SupportSet::StateSet(StateSet::new(n_states, states)?)
            }
            SupportDocument::TimeIndexed { n_states, sets } => SupportSet::TimeIndexed(
                TimeIndexedSet::new(
                    sets.into_iter()
                        .map(|x| StateSet::new(n_states, x))
                        .collect::<Result<_>>()?,
                )?,
            ),
            SupportDocument::VisitCountBudget { budget } => {
                SupportSet::VisitCountBudget(VisitCountBudget::new(budget))
            }
            SupportDocument::ContinuousBox { lo, hi } => {
                SupportSet::ContinuousBox(ContinuousBox::new(lo, hi)?)
            }
        })
    }
}

impl From<SupportSet> for SupportDocument {
    fn from(s: SupportSet) -> Self {
        match s {
            SupportSet::StateSet(x) => SupportDocument::StateSet {
                n_states: x.n_states(),
                states: x.kept(),
            },
            SupportSet::TimeIndexed(x) => SupportDocument::TimeIndexed {
                n_states: x.sets[0].n_states(),
                sets: x.sets.iter().map(StateSet::kept).collect(),
            },
            SupportSet::VisitCountBudget(x) => SupportDocument::VisitCountBudget { budget: x.budget },
            SupportSet::ContinuousBox(x) => SupportDocument::ContinuousBox { lo: x.lo, hi: x.hi },
        }
    }
}

/// Result of checking one arriving state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDecision {
    Continue,
    Terminate,
}

/// The state the filter is asked about.
#[derive(Debug, Clone, Copy)]
pub enum StateRef<'a> {
    Index(usize),
    Point(&'a [f64]),
}

/// Decides whether arriving in `state` at time point `t` stops the episode.
///
/// `visit_counts` holds visits made before this arrival and is required for
/// the visit-count variant.
pub fn estop_step_filter(
    support: &SupportSet,
    t: usize,
    state: StateRef<'_>,
    visit_counts: Option<&[u32]>,
) -> Result<StepDecision> {
    let keep = match (support, state) {
        (SupportSet::StateSet(set), StateRef::Index(s)) => set.contains(s),
        (SupportSet::TimeIndexed(sets), StateRef::Index(s)) => sets.at(t)?.contains(s),
        (SupportSet::VisitCountBudget(f), StateRef::Index(s)) => {
            let Some(counts) = visit_counts else {
                return support_err("visit-count support needs visit counts");
            };
            let (Some(&seen), Some(&limit)) = (counts.get(s), f.budget.get(s)) else {
                return support_err(format!("state {s} outside the visit-count table"));
            };
            seen < limit
        }
        (SupportSet::ContinuousBox(b), StateRef::Point(x)) => b.contains(x),
        _ => return support_err("support variant does not match the state kind"),
    };
    Ok(if keep {
        StepDecision::Continue
    } else {
        StepDecision::Terminate
    })
}

/// An MDP with an appended absorbing e-stop state.
#[derive(Debug, Clone)]
pub struct EStopMdp {
    pub base: TabularMdp,
    pub mdp: TabularMdp,
    pub support: StateSet,
}

impl EStopMdp {
    /// Index of `s_term` (equal to the base state count).
    pub fn term_state(&self) -> usize {
        self.base.n_states()
    }

    /// Kept states plus `s_term`.
    pub fn effective_states(&self) -> usize {
        self.support.len() + 1
    }
}

/// Redirects every transition that leaves `support` to `s_term` with zero
/// reward. Removed states stay in the index space as stubs that lead straight
/// to `s_term`; they are unreachable from the initial distribution.
pub fn build_estop_mdp(mdp: &TabularMdp, support: &StateSet) -> Result<EStopMdp> {
    support.check_against(mdp)?;
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let term = n;
    let mut rows = Vec::with_capacity((n + 1) * na);
    for s in 0..n {
        for a in 0..na {
            if !support.contains(s) {
                rows.push(vec![Successor::new(term, 1.0, 0.0)]);
                continue;
            }
            let mut row = Vec::with_capacity(mdp.successors(s, a).len() + 1);
            let mut leak = 0.0;
            for x in mdp.successors(s, a) {
                if support.contains(x.state) {
                    row.push(*x);
                } else {
                    leak += x.prob;
                }
            }
            if leak > 0.0 {
                row.push(Successor::new(term, leak, 0.0));
            }
            rows.push(row);
        }
    }
    for _ in 0..na {
        rows.push(vec![Successor::new(term, 1.0, 0.0)]);
    }
    let mut rho0 = mdp.rho0().to_vec();
    rho0.push(0.0);
    let mut terminals: Vec<usize> = mdp
        .terminals()
        .into_iter()
        .filter(|&s| support.contains(s))
        .collect();
    terminals.push(term);
    let out = TabularMdp::new(n + 1, na, mdp.horizon(), rho0, rows, &terminals)?.with_estop_state(term)?;
    Ok(EStopMdp {
        base: mdp.clone(),
        mdp: out,
        support: support.clone(),
    })
}

/// Samples an episode of `mdp` with `support` applied online. Consumes the
/// generator exactly like [`crate::mdp::rollout_with`], so a support that never
/// fires reproduces the unfiltered trajectory.
pub fn rollout_filtered(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    support: &SupportSet,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut counts = vec![0u32; mdp.n_states()];
    let s0 = mdp.sample_initial(rng);
    let mut steps = Vec::new();
    let mut cause = TerminationCause::Horizon;
    if estop_step_filter(support, 0, StateRef::Index(s0), Some(&counts))? == StepDecision::Terminate {
        cause = TerminationCause::Estop;
    } else if mdp.is_terminal(s0) {
        cause = TerminationCause::TerminalState;
    } else {
        counts[s0] += 1;
        let mut s = s0;
        for t in 0..mdp.horizon() - 1 {
            let a = policy.sample_action(t, s, rng);
            let (next, reward) = mdp.step(s, a, rng);
            let decision = estop_step_filter(support, t + 1, StateRef::Index(next), Some(&counts))?;
            if decision == StepDecision::Terminate {
                steps.push(Step {
                    t,
                    state: s,
                    action: a,
                    reward: 0.0,
                    next_state: next,
                });
                cause = TerminationCause::Estop;
                break;
            }
            steps.push(Step {
                t,
                state: s,
                action: a,
                reward,
                next_state: next,
            });
            counts[next] += 1;
            s = next;
            if mdp.is_terminal(s) {
                cause = TerminationCause::TerminalState;
                break;
            }
        }
    }
    Ok(Trajectory {
        initial_state: s0,
        terminated_early: cause != TerminationCause::Horizon,
        termination_cause: cause,
        steps,
    })
}

/// Explicit product construction for a visit-count support: states are pairs
/// `(s, visit counts)` plus a final `s_term`. Only reachable pairs are built.
/// Exponential in `|S|`; intended for very small models.
#[derive(Debug, Clone)]
pub struct VisitProductMdp {
    pub mdp: TabularMdp,
    /// `(base state, counts)` for every product state except `s_term`.
    pub labels: Vec<(usize, Vec<u32>)>,
}

impl VisitProductMdp {
    /// Lifts a stationary policy of the base MDP.
    pub fn lift_policy(&self, policy: &TabularPolicy) -> TabularPolicy {
        let na = policy.n_actions();
        let mut probs = Vec::with_capacity((self.labels.len() + 1) * na);
        for (s, _) in &self.labels {
            probs.extend_from_slice(policy.action_probs(0, *s));
        }
        probs.extend(std::iter::repeat_n(1.0 / na as f64, na));
        TabularPolicy::stationary(self.labels.len() + 1, na, probs).expect("lifted rows are distributions")
    }
}

pub fn visit_count_product_mdp(mdp: &TabularMdp, budget: &VisitCountBudget) -> Result<VisitProductMdp> {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    if budget.n_states() != n {
        return Err(MdpError::Dimension("visit budget does not match the MDP".into()));
    }
    let mut index: HashMap<(usize, Vec<u32>), usize> = HashMap::new();
    let mut labels: Vec<(usize, Vec<u32>)> = Vec::new();
    let mut rho0 = Vec::new();
    for s in mdp.initial_support() {
        if budget.budget[s] == 0 {
            return support_err(format!("initial state {s} has a zero visit budget"));
        }
        let mut c = vec![0u32; n];
        c[s] = 1;
        index.insert((s, c.clone()), labels.len());
        labels.push((s, c));
        rho0.push(mdp.rho0()[s]);
    }
    let mut raw_rows: Vec<Vec<(Option<usize>, f64, f64)>> = Vec::new();
    let mut k = 0;
    while k < labels.len() {
        let (s, counts) = labels[k].clone();
        for a in 0..na {
            let mut row = Vec::new();
            if mdp.is_terminal(s) {
                row.push((Some(k), 1.0, 0.0));
            } else {
                for x in mdp.successors(s, a) {
                    if counts[x.state] >= budget.budget[x.state] {
                        row.push((None, x.prob, 0.0));
                        continue;
                    }
                    let mut c = counts.clone();
                    c[x.state] += 1;
                    let key = (x.state, c);
                    let id = match index.get(&key) {
                        Some(&id) => id,
                        None => {
                            let id = labels.len();
                            index.insert(key.clone(), id);
                            labels.push(key);
                            id
                        }
                    };
                    row.push((Some(id), x.prob, x.reward));
                }
            }
            raw_rows.push(row);
        }
        k += 1;
    }
    let term = labels.len();
    let mut rows: Vec<Vec<Successor>> = raw_rows
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(to, p, r)| Successor::new(to.unwrap_or(term), p, if to.is_some() { r } else { 0.0 }))
                .collect()
        })
        .collect();
    for _ in 0..na {
        rows.push(vec![Successor::new(term, 1.0, 0.0)]);
    }
    rho0.resize(term + 1, 0.0);
    let mut terminals: Vec<usize> = (0..term).filter(|&i| mdp.is_terminal(labels[i].0)).collect();
    terminals.push(term);
    let out = TabularMdp::new(term + 1, na, mdp.horizon(), rho0, rows, &terminals)?.with_estop_state(term)?;
    Ok(VisitProductMdp { mdp: out, labels })
}
