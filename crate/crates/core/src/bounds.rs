//! Sub-optimality bounds for e-stop MDPs, checked exactly on tabular
//! instances, plus the concentration and covering quantities behind them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MdpError, Result};
use crate::estimation::{exact_hitting_probabilities, VisitStats};
use crate::mdp::{
    average_state_distribution, policy_value, value_iteration, EvalMode, TabularMdp, TabularPolicy,
    DEFAULT_TOL,
};
use crate::support::{build_estop_mdp, EStopMdp, StateSet};

/// Slack allowed when comparing exact values.
pub const CERT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Support equal to the expert's reachable states; gap at most 0.
    Perfect,
    /// Gap at most `H · Σ_{s∉Ŝ} h(s)`.
    Imperfect,
    /// Gap at most `H² · ρ_πe(S∖Ŝ)`.
    Stationary,
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Theorem::Perfect => "perfect",
            Theorem::Imperfect => "imperfect",
            Theorem::Stationary => "stationary",
        })
    }
}

/// Exact comparison of the expert with the optimum of the e-stop MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub theorem: Theorem,
    pub j_expert: f64,
    /// Optimal e-stop policy re-evaluated in the original MDP.
    pub j_estop_opt: f64,
    /// Optimal value of the e-stop MDP itself.
    pub j_estop_opt_in_estop: f64,
    /// `J(πe) − J_M̂(π̂*)`; never smaller than the gap measured in `M`.
    pub gap: f64,
    pub bound: f64,
    pub holds: bool,
}

impl GapCertificate {
    /// The same bound with `π̂*` scored in the original MDP.
    pub fn holds_in_base(&self) -> bool {
        self.j_expert - self.j_estop_opt <= self.bound + CERT_TOL
    }
}

/// Solved e-stop MDP: `J_M̂(π̂*)` and `J_M(π̂*)`.
#[derive(Debug, Clone)]
pub struct EStopOptimum {
    pub policy: TabularPolicy,
    pub value_in_estop: f64,
    pub value_in_base: f64,
}

/// Exact finite-horizon optimum of `estop`, re-evaluated in its base MDP.
pub fn solve_estop(estop: &EStopMdp) -> Result<EStopOptimum> {
    let vi = value_iteration(&estop.mdp, EvalMode::FiniteHorizon, DEFAULT_TOL)?;
    let value_in_estop = crate::mdp::dot(estop.mdp.rho0(), vi.initial_values());
    let restricted = vi.policy.restrict(estop.base.n_states())?;
    let value_in_base = policy_value(&estop.base, &restricted, EvalMode::FiniteHorizon)?;
    Ok(EStopOptimum {
        policy: restricted,
        value_in_estop,
        value_in_base,
    })
}

/// Exact finite-horizon optimum of `mdp`.
pub fn optimal_value(mdp: &TabularMdp) -> Result<f64> {
    let vi = value_iteration(mdp, EvalMode::FiniteHorizon, DEFAULT_TOL)?;
    Ok(crate::mdp::dot(mdp.rho0(), vi.initial_values()))
}

fn certificate(
    theorem: Theorem,
    mdp: &TabularMdp,
    expert: &TabularPolicy,
    support: &StateSet,
    bound: f64,
) -> Result<GapCertificate> {
    let j_expert = policy_value(mdp, expert, EvalMode::FiniteHorizon)?;
    let opt = solve_estop(&build_estop_mdp(mdp, support)?)?;
    let gap = j_expert - opt.value_in_estop;
    Ok(GapCertificate {
        theorem,
        j_expert,
        j_estop_opt: opt.value_in_base,
        j_estop_opt_in_estop: opt.value_in_estop,
        gap,
        bound,
        holds: gap <= bound + CERT_TOL,
    })
}

/// Support `{s : h(s) > 0}` of the expert; the optimum of the e-stop MDP must
/// be at least as good as the expert.
pub fn certify_perfect(mdp: &TabularMdp, expert: &TabularPolicy) -> Result<GapCertificate> {
    let h = exact_hitting_probabilities(mdp, expert)?;
    let support = StateSet::above(&h, 0.0);
    certificate(Theorem::Perfect, mdp, expert, &support, 0.0)
}

/// `J(πe) − J(π̂*) ≤ H · Σ_{s∉Ŝ} h(s)`.
pub fn certify_imperfect(mdp: &TabularMdp, expert: &TabularPolicy, support: &StateSet) -> Result<GapCertificate> {
    let h = exact_hitting_probabilities(mdp, expert)?;
    let bound = imperfect_bound(mdp.horizon(), &h, support);
    certificate(Theorem::Imperfect, mdp, expert, support, bound)
}

/// `J(πe) − J(π̂*) ≤ H² · ρ_πe(S∖Ŝ)`.
pub fn certify_stationary(mdp: &TabularMdp, expert: &TabularPolicy, support: &StateSet) -> Result<GapCertificate> {
    let rho = average_state_distribution(mdp, expert)?;
    let bound = stationary_bound(mdp.horizon(), &rho, support);
    certificate(Theorem::Stationary, mdp, expert, support, bound)
}

pub fn imperfect_bound(horizon: usize, h: &[f64], support: &StateSet) -> f64 {
    horizon as f64 * support.removed().iter().map(|&s| h[s]).sum::<f64>()
}

pub fn stationary_bound(horizon: usize, rho: &[f64], support: &StateSet) -> f64 {
    (horizon * horizon) as f64 * support.removed().iter().map(|&s| rho[s]).sum::<f64>()
}

/// Hoeffding guarantee for budgeted removal from `n` demos.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingGuarantee {
    /// `(ξ + ε) · H`.
    pub gap_bound: f64,
    /// Probability that the removed true hitting mass exceeds `ξ + ε`.
    pub failure_prob: f64,
}

pub fn hoeffding_guarantee(n: usize, n_states: usize, xi: f64, eps: f64, horizon: usize) -> Result<HoeffdingGuarantee> {
    if !(eps > 0.0) || n_states == 0 || !(xi >= 0.0) {
        return Err(MdpError::Invalid("hoeffding needs eps > 0, xi >= 0 and states".into()));
    }
    let s = n_states as f64;
    let failure_prob = (s * (-2.0 * eps * eps * n as f64 / (s * s)).exp()).min(1.0);
    Ok(HoeffdingGuarantee {
        gap_bound: (xi + eps) * horizon as f64,
        failure_prob,
    })
}

/// Empirical-Bernstein gap bound
/// `(ξ + √(2 ln(2|S|/δ)/n) Σ_s √V_n(ϱ(s)) + 7|S| ln(2|S|/δ) / (3(n−1))) · H²`.
pub fn bernstein_guarantee(stats: &VisitStats, xi: f64, delta: f64) -> Result<f64> {
    if stats.n < 2 {
        return Err(MdpError::Invalid("empirical Bernstein needs at least two demos".into()));
    }
    if !stats.full_horizon {
        return Err(MdpError::Invalid("empirical Bernstein needs full-horizon demos".into()));
    }
    let s = stats.sample_variance.len() as f64;
    if !(delta > 0.0 && delta <= 2.0 * s) {
        return Err(MdpError::Invalid(format!("delta {delta} outside (0, 2|S|]")));
    }
    let n = stats.n as f64;
    let log_term = (2.0 * s / delta).ln();
    let spread: f64 = stats.sample_variance.iter().map(|v| v.max(0.0).sqrt()).sum();
    let h = stats.horizon as f64;
    Ok((xi + (2.0 * log_term / n).sqrt() * spread + 7.0 * s * log_term / (3.0 * (n - 1.0))) * h * h)
}

/// Split of the `T`-step regret into the price of the support and the
/// learner's own regret inside the e-stop MDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretDecomposition {
    pub episodes: usize,
    /// `K · (J(π*) − J_M̂(π̂*))`.
    pub asymptotic_term: f64,
    /// `K · J_M̂(π̂*) − Σ` logged returns of the first `K` episodes.
    pub learning_term: f64,
    pub j_opt: f64,
    pub j_estop_opt_in_estop: f64,
    pub j_estop_opt: f64,
}

impl RegretDecomposition {
    pub fn total(&self) -> f64 {
        self.asymptotic_term + self.learning_term
    }
}

/// `K = ceil(T / H)` episodes. `episode_returns` are the learner's training
/// returns in the e-stop MDP, in order.
pub fn regret_decomposition(
    mdp: &TabularMdp,
    estop: &EStopMdp,
    episode_returns: &[f64],
    t_steps: usize,
) -> Result<RegretDecomposition> {
    let episodes = t_steps.div_ceil(mdp.horizon());
    if episode_returns.len() < episodes {
        return Err(MdpError::Invalid(format!(
            "{} logged episodes, {episodes} needed for T = {t_steps}",
            episode_returns.len()
        )));
    }
    let j_opt = optimal_value(mdp)?;
    let opt = solve_estop(estop)?;
    let k = episodes as f64;
    let collected: f64 = episode_returns[..episodes].iter().sum();
    Ok(RegretDecomposition {
        episodes,
        asymptotic_term: k * (j_opt - opt.value_in_estop),
        learning_term: k * opt.value_in_estop - collected,
        j_opt,
        j_estop_opt_in_estop: opt.value_in_estop,
        j_estop_opt: opt.value_in_base,
    })
}

/// Above this many events the covering probability is computed by an
/// occupancy recursion instead of the alternating sum.
const ALTERNATING_SUM_MAX_M: usize = 16;

/// Probability that `n` uniform draws with replacement from `m` items hit
/// every item.
pub fn coupon_probability(m: usize, n: usize) -> Result<f64> {
    if m == 0 {
        return Err(MdpError::Invalid("coupon_probability needs m >= 1".into()));
    }
    cover_probability(m, 1.0 / m as f64, n)
}

/// Probability that `n` draws, each landing on one of `m` cells with
/// probability `eps_d` apiece, hit every cell:
/// `Σ_k (−1)^k C(m,k) (1 − k·eps_d)^n` with negative bases read as 0.
pub fn cover_probability(m: usize, eps_d: f64, n: usize) -> Result<f64> {
    if m == 0 || !(eps_d > 0.0 && eps_d <= 1.0) {
        return Err(MdpError::Invalid("cover_probability needs m >= 1 and eps_d in (0, 1]".into()));
    }
    if n < m {
        return Ok(0.0);
    }
    if m > ALTERNATING_SUM_MAX_M && m as f64 * eps_d <= 1.0 + 1e-12 {
        return Ok(occupancy(m, eps_d, n));
    }
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut binom = 1.0;
    for k in 0..=m {
        if k > 0 {
            binom = binom * (m - k + 1) as f64 / k as f64;
        }
        let base = (1.0 - k as f64 * eps_d).max(0.0);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign * binom * base.powi(n as i32);
        // Neumaier compensated summation.
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    Ok((sum + comp).clamp(0.0, 1.0))
}

/// Distribution of the number of distinct cells hit, advanced draw by draw.
fn occupancy(m: usize, eps_d: f64, n: usize) -> f64 {
    let mut dist = vec![0.0; m + 1];
    dist[0] = 1.0;
    for _ in 0..n {
        for j in (0..=m).rev() {
            let fresh = (m - j) as f64 * eps_d;
            let stay = dist[j] * (1.0 - fresh);
            let arrive = if j > 0 { dist[j - 1] * (m - j + 1) as f64 * eps_d } else { 0.0 };
            dist[j] = stay + arrive;
        }
    }
    dist[m].clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::tests::chain_a;

    #[test]
    fn chain_certificates() {
        let m = chain_a(2);
        let pi = TabularPolicy::uniform(2, 1);
        let perfect = certify_perfect(&m, &pi).unwrap();
        assert_eq!((perfect.gap, perfect.bound, perfect.holds), (0.0, 0.0, true));

        let only_s0 = StateSet::new(2, [0]).unwrap();
        let imp = certify_imperfect(&m, &pi, &only_s0).unwrap();
        assert_eq!((imp.gap, imp.bound), (1.0, 2.0));
        assert!(imp.holds && imp.holds_in_base());
        let st = certify_stationary(&m, &pi, &only_s0).unwrap();
        assert_eq!(st.bound, 2.0);
        let full = certify_stationary(&m, &pi, &StateSet::full(2)).unwrap();
        assert_eq!(full.bound, 0.0);
    }

    #[test]
    fn hoeffding_limits() {
        let g = hoeffding_guarantee(0, 16, 0.1, 0.15, 10).unwrap();
        assert_eq!(g.failure_prob, 1.0);
        assert!((g.gap_bound - 2.5).abs() < 1e-12);
        let big = hoeffding_guarantee(10_000_000, 16, 0.1, 0.15, 10).unwrap();
        assert!(big.failure_prob < 1e-12);
        let mid = hoeffding_guarantee(2000, 4, 0.0, 0.15, 1).unwrap();
        assert!((mid.failure_prob - 4.0 * (-2.0 * 0.0225 * 2000.0 / 16.0f64).exp()).abs() < 1e-15);
        assert!(hoeffding_guarantee(10, 4, 0.0, 0.0, 1).is_err());
    }

    fn stats(variance: Vec<f64>, n: usize) -> VisitStats {
        let k = variance.len();
        VisitStats {
            n,
            horizon: 3,
            h_hat: vec![0.0; k],
            rho_hat: vec![0.0; k],
            varrho: vec![],
            sample_variance: variance,
            full_horizon: true,
        }
    }

    #[test]
    fn bernstein_terms() {
        let s = stats(vec![0.0; 4], 10);
        let log_term = (8.0f64 / 0.05).ln();
        let expect = (0.1 + 7.0 * 4.0 * log_term / 27.0) * 9.0;
        assert!((bernstein_guarantee(&s, 0.1, 0.05).unwrap() - expect).abs() < 1e-12);
        // δ = 2|S| zeroes the logarithm.
        assert!((bernstein_guarantee(&s, 0.1, 8.0).unwrap() - 0.9).abs() < 1e-12);
        let spread = stats(vec![0.04, 0.09, 0.0, 0.0], 10);
        let mid = (2.0 * log_term / 10.0).sqrt() * 0.5;
        assert!((bernstein_guarantee(&spread, 0.1, 0.05).unwrap() - expect - 9.0 * mid).abs() < 1e-12);
        assert!(bernstein_guarantee(&stats(vec![0.0; 4], 1), 0.1, 0.05).is_err());
    }

    #[test]
    fn coupon_values() {
        assert_eq!(coupon_probability(1, 1).unwrap(), 1.0);
        assert_eq!(coupon_probability(1, 7).unwrap(), 1.0);
        assert_eq!(coupon_probability(2, 2).unwrap(), 0.5);
        assert!((coupon_probability(3, 3).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(cover_probability(4, 0.25, 0).unwrap(), 0.0);
        assert!(coupon_probability(0, 3).is_err());
    }

    /// Independent recursion on the number of uncovered items.
    fn coupon_oracle(m: usize, n: usize) -> f64 {
        let mut p = vec![0.0; m + 1];
        p[0] = 1.0;
        for _ in 0..n {
            let mut q = vec![0.0; m + 1];
            for j in 0..=m {
                q[j] += p[j] * j as f64 / m as f64;
                if j < m {
                    q[j + 1] += p[j] * (m - j) as f64 / m as f64;
                }
            }
            p = q;
        }
        p[m]
    }

    #[test]
    fn both_evaluation_paths_agree_with_oracle() {
        for m in [2, 5, 12, 16, 17, 30, 80] {
            for n in [m, m + 3, 2 * m, 10 * m] {
                let got = coupon_probability(m, n).unwrap();
                let want = coupon_oracle(m, n);
                assert!((got - want).abs() < 1e-9, "m={m} n={n}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn coupon_is_monotone_in_n() {
        for m in [3, 9, 20] {
            let mut last = 0.0;
            for n in 0..200 {
                let p = coupon_probability(m, n).unwrap();
                assert!(p + 1e-12 >= last);
                last = p;
            }
        }
    }
}
