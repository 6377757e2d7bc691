//! Visitation statistics from demonstrations, exact hitting probabilities,
//! and budgeted support construction.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{MdpError, Result};
use crate::mdp::{TabularMdp, TabularPolicy, Trajectory};
use crate::support::{build_estop_mdp, EStopMdp, StateSet};

/// One demonstration: the observed states plus the actions and rewards of the
/// transitions between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub states: Vec<usize>,
    #[serde(default)]
    pub actions: Vec<usize>,
    #[serde(default)]
    pub rewards: Vec<f64>,
}

impl From<&Trajectory> for Demo {
    fn from(t: &Trajectory) -> Self {
        Self {
            states: t.states(),
            actions: t.actions(),
            rewards: t.rewards(),
        }
    }
}

/// Reads one demo per non-empty line.
pub fn read_demos(reader: impl BufRead) -> Result<Vec<Demo>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MdpError::Format(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demo = serde_json::from_str(&line)
            .map_err(|e| MdpError::Format(format!("line {}: {e}", i + 1)))?;
        if demo.states.is_empty() {
            return Err(MdpError::Format(format!("line {}: demo has no states", i + 1)));
        }
        out.push(demo);
    }
    Ok(out)
}

pub fn write_demos(mut writer: impl Write, demos: &[Demo]) -> std::io::Result<()> {
    for d in demos {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Empirical visitation statistics of a demo set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitStats {
    pub n: usize,
    pub horizon: usize,
    /// Fraction of demos that visit each state.
    pub h_hat: Vec<f64>,
    /// Visit frequency `(1/(nH)) Σ_i Σ_t 1{τ_t = s}`.
    pub rho_hat: Vec<f64>,
    /// Per-demo visit fractions `ϱ^{(i)}(s)`, indexed `[i][s]`.
    pub varrho: Vec<Vec<f64>>,
    /// Unbiased sample variance of `ϱ(s)` across demos (0 when `n < 2`).
    pub sample_variance: Vec<f64>,
    /// Every demo observed all `H` time points. Short demos are padded with
    /// their final state for `rho_hat` and `varrho`.
    pub full_horizon: bool,
}

/// Computes [`VisitStats`] for `demos` over `n_states` states.
pub fn estimate_visit_stats(demos: &[Demo], n_states: usize, horizon: usize) -> Result<VisitStats> {
    if horizon == 0 {
        return Err(MdpError::Invalid("horizon must be positive".into()));
    }
    let n = demos.len();
    let mut hits = vec![0usize; n_states];
    let mut rho_hat = vec![0.0; n_states];
    let mut varrho = Vec::with_capacity(n);
    let mut full_horizon = true;
    let mut seen = vec![false; n_states];
    let mut counts = vec![0usize; n_states];
    for (i, demo) in demos.iter().enumerate() {
        let len = demo.states.len();
        if len == 0 || len > horizon {
            return Err(MdpError::Invalid(format!(
                "demo {i} has {len} states, expected 1..={horizon}"
            )));
        }
        if let Some(&s) = demo.states.iter().find(|&&s| s >= n_states) {
            return Err(MdpError::Invalid(format!("demo {i} visits unknown state {s}")));
        }
        full_horizon &= len == horizon;
        seen.iter_mut().for_each(|x| *x = false);
        counts.iter_mut().for_each(|x| *x = 0);
        for &s in &demo.states {
            seen[s] = true;
            counts[s] += 1;
        }
        counts[*demo.states.last().expect("non-empty")] += horizon - len;
        for s in 0..n_states {
            hits[s] += seen[s] as usize;
        }
        let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / horizon as f64).collect();
        for (acc, f) in rho_hat.iter_mut().zip(&fractions) {
            *acc += f;
        }
        varrho.push(fractions);
    }
    let denom = n.max(1) as f64;
    rho_hat.iter_mut().for_each(|x| *x /= denom);
    let h_hat = hits.iter().map(|&c| c as f64 / denom).collect();
    let sample_variance = (0..n_states)
        .map(|s| {
            if n < 2 {
                return 0.0;
            }
            let mean = rho_hat[s];
            let ss: f64 = varrho.iter().map(|v: &Vec<f64>| (v[s] - mean).powi(2)).sum();
            ss / (n - 1) as f64
        })
        .collect();
    Ok(VisitStats {
        n,
        horizon,
        h_hat,
        rho_hat,
        varrho,
        sample_variance,
        full_horizon,
    })
}

impl VisitStats {
    /// CSV with header `state,h_hat,rho_hat,var_varrho`.
    pub fn write_csv(&self, writer: impl Write) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state", "h_hat", "rho_hat", "var_varrho"])?;
        for s in 0..self.h_hat.len() {
            w.write_record([
                s.to_string(),
                self.h_hat[s].to_string(),
                self.rho_hat[s].to_string(),
                self.sample_variance[s].to_string(),
            ])?;
        }
        w.flush()
    }
}

/// Probability that an episode of `policy` visits each state at least once.
///
/// For every target the policy-induced chain is made absorbing at the target
/// and `ρ0` is pushed forward through the `H - 1` transitions; the mass that
/// reaches the target is its hitting probability.
pub fn exact_hitting_probabilities(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(MdpError::Dimension(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let n = mdp.n_states();
    let kernels: Vec<Vec<Vec<(usize, f64)>>> = (0..mdp.horizon().saturating_sub(1))
        .map(|t| induced_kernel(mdp, policy, t))
        .collect();
    let mut out = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut next = vec![0.0; n];
    for (target, slot) in out.iter_mut().enumerate() {
        d.copy_from_slice(mdp.rho0());
        let mut hit = d[target];
        d[target] = 0.0;
        for kernel in &kernels {
            next.iter_mut().for_each(|x| *x = 0.0);
            for (s, &mass) in d.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for &(to, p) in &kernel[s] {
                    next[to] += mass * p;
                }
            }
            hit += next[target];
            next[target] = 0.0;
            std::mem::swap(&mut d, &mut next);
        }
        *slot = hit.min(1.0);
    }
    Ok(out)
}

/// State-to-state kernel of `policy` at time `t`.
fn induced_kernel(mdp: &TabularMdp, policy: &TabularPolicy, t: usize) -> Vec<Vec<(usize, f64)>> {
    (0..mdp.n_states())
        .map(|s| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (a, &pa) in policy.action_probs(t, s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for x in mdp.successors(s, a) {
                    match row.iter_mut().find(|e| e.0 == x.state) {
                        Some(e) => e.1 += pa * x.prob,
                        None => row.push((x.state, pa * x.prob)),
                    }
                }
            }
            row
        })
        .collect()
}

/// States sorted by increasing score, ties by index.
fn removal_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

/// Greedy budgeted removal: walks states by increasing score and removes them
/// while the total removed score stays within `xi`. Protected states are never
/// removed.
pub fn build_support_by_budget(scores: &[f64], xi: f64, protect: &[usize]) -> Result<StateSet> {
    if !(xi >= 0.0) {
        return Err(MdpError::Invalid(format!("budget {xi} must be nonnegative")));
    }
    if scores.iter().any(|&x| !(x >= 0.0)) {
        return Err(MdpError::Invalid("scores must be nonnegative".into()));
    }
    let mut kept = StateSet::full(scores.len());
    let mut removed = 0.0;
    for s in removal_order(scores) {
        if protect.contains(&s) {
            continue;
        }
        if removed + scores[s] > xi {
            break;
        }
        removed += scores[s];
        kept.remove(s);
    }
    Ok(kept)
}

/// Removes the `round(fraction · |S|)` lowest-scoring unprotected states.
pub fn build_support_by_fraction(scores: &[f64], fraction: f64, protect: &[usize]) -> Result<StateSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(MdpError::Invalid(format!("fraction {fraction} outside [0, 1]")));
    }
    let target = (fraction * scores.len() as f64).round() as usize;
    let mut kept = StateSet::full(scores.len());
    for s in removal_order(scores)
        .into_iter()
        .filter(|s| !protect.contains(s))
        .take(target)
    {
        kept.remove(s);
    }
    Ok(kept)
}

/// Estimate hitting probabilities from `demos`, remove states under budget
/// `xi` (never the initial support), and build the e-stop MDP.
pub fn learned_estop(mdp: &TabularMdp, demos: &[Demo], xi: f64) -> Result<EStopMdp> {
    let stats = estimate_visit_stats(demos, mdp.n_states(), mdp.horizon())?;
    let support = build_support_by_budget(&stats.h_hat, xi, &mdp.initial_support())?;
    build_estop_mdp(mdp, &support)
}

/// As [`learned_estop`] but removing a fixed fraction of states by `ĥ` rank.
pub fn learned_estop_by_fraction(mdp: &TabularMdp, demos: &[Demo], fraction: f64) -> Result<EStopMdp> {
    let stats = estimate_visit_stats(demos, mdp.n_states(), mdp.horizon())?;
    let support = build_support_by_fraction(&stats.h_hat, fraction, &mdp.initial_support())?;
    build_estop_mdp(mdp, &support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::tests::chain_a;
    use crate::mdp::{rollout, state_distributions};

    fn demo(states: &[usize]) -> Demo {
        Demo {
            states: states.to_vec(),
            actions: vec![],
            rewards: vec![],
        }
    }

    #[test]
    fn single_and_pair_demos() {
        let one = estimate_visit_stats(&[demo(&[0, 1])], 3, 2).unwrap();
        assert_eq!(one.h_hat, vec![1.0, 1.0, 0.0]);
        let two = estimate_visit_stats(&[demo(&[0, 1]), demo(&[0, 2])], 3, 2).unwrap();
        assert_eq!(two.h_hat[2], 0.5);
        assert_eq!(two.rho_hat, vec![0.5, 0.25, 0.25]);
        assert_eq!(two.sample_variance[0], 0.0);
        // varrho(1) = (0.5, 0) → mean 0.25, variance 0.125.
        assert!((two.sample_variance[1] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn chain_demos_are_exact() {
        let m = chain_a(2);
        let pi = TabularPolicy::uniform(2, 1);
        let demos: Vec<Demo> = (0..10_000).map(|i| Demo::from(&rollout(&m, &pi, i))).collect();
        let stats = estimate_visit_stats(&demos, 2, 2).unwrap();
        assert_eq!(stats.h_hat, vec![1.0, 1.0]);
        assert_eq!(stats.rho_hat, vec![0.5, 0.5]);
        assert!(stats.full_horizon);
    }

    #[test]
    fn short_demos_are_padded_and_flagged() {
        let stats = estimate_visit_stats(&[demo(&[0, 1])], 2, 4).unwrap();
        assert!(!stats.full_horizon);
        assert_eq!(stats.rho_hat, vec![0.25, 0.75]);
        assert!(estimate_visit_stats(&[demo(&[0, 1, 1])], 2, 2).is_err());
        assert!(estimate_visit_stats(&[demo(&[5])], 2, 2).is_err());
    }

    #[test]
    fn hitting_probabilities_on_chain() {
        let m = chain_a(2);
        let h = exact_hitting_probabilities(&m, &TabularPolicy::uniform(2, 1)).unwrap();
        assert_eq!(h, vec![1.0, 1.0]);
        let h1 = exact_hitting_probabilities(&m.with_horizon(1).unwrap(), &TabularPolicy::uniform(2, 1)).unwrap();
        assert_eq!(h1, vec![1.0, 0.0]);
    }

    #[test]
    fn hitting_bounded_by_union_over_time() {
        for seed in 0..30 {
            let m = crate::envs::random_mdp(6, 3, 5, 3, seed);
            let pi = TabularPolicy::uniform(6, 3);
            let h = exact_hitting_probabilities(&m, &pi).unwrap();
            let dists = state_distributions(&m, &pi).unwrap();
            for s in 0..6 {
                let total: f64 = dists.iter().map(|d| d[s]).sum();
                assert!(h[s] <= total + 1e-12);
                assert!(h[s] >= dists.iter().map(|d| d[s]).fold(0.0, f64::max) - 1e-12);
            }
        }
    }

    #[test]
    fn budget_examples() {
        let kept = build_support_by_budget(&[0.0, 0.2, 0.5], 0.2, &[]).unwrap();
        assert_eq!(kept.kept(), vec![2]);
        let all = build_support_by_budget(&[0.1, 0.2, 0.5], 0.0, &[]).unwrap();
        assert_eq!(all.len(), 3);
        let zeros = build_support_by_budget(&[0.0, 0.3, 0.0], 0.0, &[2]).unwrap();
        assert_eq!(zeros.kept(), vec![1, 2]);
        assert!(build_support_by_budget(&[0.1], -1.0, &[]).is_err());
    }

    #[test]
    fn half_removal_via_budget_matches_fraction() {
        let scores = [0.9, 0.05, 0.3, 0.05, 0.7, 0.01];
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let xi: f64 = sorted[..3].iter().sum();
        let by_budget = build_support_by_budget(&scores, xi, &[]).unwrap();
        let by_fraction = build_support_by_fraction(&scores, 0.5, &[]).unwrap();
        assert_eq!(by_budget, by_fraction);
        assert_eq!(by_fraction.kept(), vec![0, 2, 4]);
    }

    #[test]
    fn learned_estop_keeps_visited_states() {
        let m = crate::envs::random_mdp(8, 2, 3, 2, 4);
        let pi = TabularPolicy::uniform(8, 2);
        let demos: Vec<Demo> = (0..50).map(|i| Demo::from(&rollout(&m, &pi, i))).collect();
        let stats = estimate_visit_stats(&demos, 8, 3).unwrap();
        let mut visited: Vec<usize> = (0..8).filter(|&s| stats.h_hat[s] > 0.0).collect();
        visited.extend(m.initial_support());
        visited.sort();
        visited.dedup();
        assert_eq!(learned_estop(&m, &demos, 0.0).unwrap().support.kept(), visited);
        // A huge budget removes everything except the protected initial support.
        assert_eq!(learned_estop(&m, &demos, 1e9).unwrap().support.kept(), m.initial_support());
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let demos = vec![demo(&[0, 1]), Demo {
            states: vec![1, 1],
            actions: vec![0],
            rewards: vec![0.5],
        }];
        let mut buf = Vec::new();
        write_demos(&mut buf, &demos).unwrap();
        assert_eq!(read_demos(&buf[..]).unwrap(), demos);
        assert!(read_demos(&b"{\"states\": []}\n"[..]).is_err());

        let stats = estimate_visit_stats(&demos, 2, 2).unwrap();
        let mut out = Vec::new();
        stats.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("state,h_hat,rho_hat,var_varrho\n0,0.5,"));
    }
}
