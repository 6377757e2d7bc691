//! Exact evaluators checked against Monte Carlo and brute-force oracles.

use estop_core::envs::random_mdp;
use estop_core::mdp::{
    average_state_distribution, policy_value, rollout_with, seeded_rng, state_distribution, state_distributions,
    value_iteration, EvalMode, TabularMdp, TabularPolicy,
};
use estop_core::{exact_hitting_probabilities, Trajectory};
use rand::Rng;

fn random_policy(n: usize, na: usize, seed: u64) -> TabularPolicy {
    let mut rng = seeded_rng(seed);
    let mut probs = Vec::with_capacity(n * na);
    for _ in 0..n {
        let w: Vec<f64> = (0..na).map(|_| rng.random::<f64>() + 0.05).collect();
        let z: f64 = w.iter().sum();
        probs.extend(w.iter().map(|x| x / z));
    }
    // Last entry absorbs the rounding so rows sum to 1.
    for row in probs.chunks_mut(na) {
        let s: f64 = row[..na - 1].iter().sum();
        row[na - 1] = 1.0 - s;
    }
    TabularPolicy::stationary(n, na, probs).unwrap()
}

fn sample(m: &TabularMdp, pi: &TabularPolicy, n: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| rollout_with(m, pi, &mut rng)).collect()
}

/// Binomial standard error of an empirical frequency, floored to avoid zero.
fn se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64)
}

#[test]
fn state_distribution_matches_monte_carlo() {
    let m = random_mdp(5, 2, 6, 3, 21);
    let pi = random_policy(5, 2, 3);
    let n = 1_000_000;
    let rho3 = state_distribution(&m, &pi, 3).unwrap();
    let mut counts = [0usize; 5];
    for tr in sample(&m, &pi, n, 77) {
        counts[tr.states()[3]] += 1;
    }
    for s in 0..5 {
        let freq = counts[s] as f64 / n as f64;
        assert!((freq - rho3[s]).abs() <= 3.0 * se(rho3[s], n), "state {s}: {freq} vs {}", rho3[s]);
    }
    assert_eq!(state_distribution(&m, &pi, 0).unwrap(), m.rho0());
}

#[test]
fn average_distribution_composes_per_time_distributions() {
    let m = random_mdp(5, 3, 7, 2, 4);
    let pi = random_policy(5, 3, 4);
    let avg = average_state_distribution(&m, &pi).unwrap();
    let mut manual = [0.0; 5];
    for t in 0..7 {
        for (acc, x) in manual.iter_mut().zip(state_distribution(&m, &pi, t).unwrap()) {
            *acc += x / 7.0;
        }
    }
    for s in 0..5 {
        assert!((avg[s] - manual[s]).abs() < 1e-12);
    }
    assert!((avg.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    let one = m.clone().with_horizon(1).unwrap();
    assert_eq!(average_state_distribution(&one, &pi).unwrap(), m.rho0());
}

#[test]
fn policy_value_matches_monte_carlo() {
    let m = random_mdp(6, 3, 5, 3, 8);
    let pi = random_policy(6, 3, 8);
    let exact = policy_value(&m, &pi, EvalMode::FiniteHorizon).unwrap();
    let n = 1_000_000;
    let returns: Vec<f64> = sample(&m, &pi, n, 5).iter().map(Trajectory::total_reward).collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - exact).abs() <= 3.0 * (var / n as f64).sqrt(), "{mean} vs {exact}");
}

#[test]
fn small_models_agree_with_rollouts() {
    for seed in 0..10u64 {
        let n_states = 2 + (seed as usize % 7);
        let m = random_mdp(n_states, 2, 4, 2, 100 + seed);
        let pi = random_policy(n_states, 2, seed);
        let exact = policy_value(&m, &pi, EvalMode::FiniteHorizon).unwrap();
        let n = 100_000;
        let returns: Vec<f64> = sample(&m, &pi, n, seed).iter().map(Trajectory::total_reward).collect();
        let mean = returns.iter().sum::<f64>() / n as f64;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - exact).abs() <= 4.0 * (var / n as f64).sqrt() + 1e-12);
        assert!(returns.iter().all(|&r| (0.0..=3.0).contains(&r)));
    }
}

#[test]
fn hitting_probabilities_match_monte_carlo() {
    let m = random_mdp(6, 2, 5, 2, 31);
    let pi = random_policy(6, 2, 31);
    let h = exact_hitting_probabilities(&m, &pi).unwrap();
    let n = 1_000_000;
    let mut hits = [0usize; 6];
    let mut seen = [false; 6];
    for tr in sample(&m, &pi, n, 9) {
        seen.iter_mut().for_each(|x| *x = false);
        for s in tr.states() {
            seen[s] = true;
        }
        for s in 0..6 {
            hits[s] += seen[s] as usize;
        }
    }
    for s in 0..6 {
        let freq = hits[s] as f64 / n as f64;
        assert!((freq - h[s]).abs() <= 4.0 * se(h[s], n), "state {s}: {freq} vs {}", h[s]);
    }
}

/// Every deterministic stationary policy of a small MDP.
fn all_deterministic(n: usize, na: usize) -> impl Iterator<Item = TabularPolicy> {
    (0..na.pow(n as u32)).map(move |mut code| {
        let actions: Vec<usize> = (0..n)
            .map(|_| {
                let a = code % na;
                code /= na;
                a
            })
            .collect();
        TabularPolicy::deterministic(&actions, na)
    })
}

#[test]
fn discounted_value_iteration_beats_every_deterministic_policy() {
    for seed in 0..5 {
        let m = random_mdp(6, 3, 5, 3, 500 + seed);
        let mode = EvalMode::discounted(0.9).unwrap();
        let vi = value_iteration(&m, mode, 1e-9).unwrap();
        let greedy = policy_value(&m, &vi.policy, mode).unwrap();
        let best = all_deterministic(6, 3)
            .map(|p| policy_value(&m, &p, mode).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((greedy - best).abs() < 1e-6, "{greedy} vs {best}");
        let v0: f64 = m.rho0().iter().zip(&vi.values[0]).map(|(a, b)| a * b).sum();
        assert!(v0 >= best - 1e-6);
    }
}

#[test]
fn finite_horizon_optimum_dominates_stationary_policies() {
    for seed in 0..5 {
        let m = random_mdp(5, 2, 4, 2, 900 + seed);
        let vi = value_iteration(&m, EvalMode::FiniteHorizon, 1e-9).unwrap();
        let opt = policy_value(&m, &vi.policy, EvalMode::FiniteHorizon).unwrap();
        for p in all_deterministic(5, 2) {
            assert!(policy_value(&m, &p, EvalMode::FiniteHorizon).unwrap() <= opt + 1e-12);
        }
    }
}

#[test]
fn distributions_stay_normalised() {
    for seed in 0..20 {
        let m = random_mdp(7, 3, 9, 4, seed);
        let pi = random_policy(7, 3, seed + 1);
        for d in state_distributions(&m, &pi).unwrap() {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}
