//! Coverage of the sample-based guarantees and sanity of the regret split.

use estop_core::bounds::{
    bernstein_guarantee, certify_imperfect, certify_stationary, coupon_probability, cover_probability,
    hoeffding_guarantee, regret_decomposition,
};
use estop_core::envs::{build_frozenlake, random_mdp, FrozenLakeSpec, GridMap};
use estop_core::mdp::{rollout_with, seeded_rng, value_iteration, EvalMode, TabularMdp, TabularPolicy};
use estop_core::{
    average_state_distribution, build_estop_mdp, build_support_by_budget, build_support_by_fraction,
    estimate_visit_stats, exact_hitting_probabilities, q_learning, Demo, LearnerConfig, LearningEnv, StateSet,
};
use rand::Rng;

fn demos(m: &TabularMdp, pi: &TabularPolicy, n: usize, rng: &mut impl Rng) -> Vec<Demo> {
    (0..n).map(|_| Demo::from(&rollout_with(m, pi, rng))).collect()
}

fn allowance(p: f64, trials: usize) -> f64 {
    p + 3.0 * (p * (1.0 - p) / trials as f64).sqrt() + 1.0 / trials as f64
}

#[test]
fn hoeffding_failure_rate_is_covered() {
    let m = random_mdp(4, 2, 5, 2, 11);
    let pi = TabularPolicy::uniform(4, 2);
    let h = exact_hitting_probabilities(&m, &pi).unwrap();
    let (n, xi, eps) = (2000, 0.1, 0.15);
    let g = hoeffding_guarantee(n, 4, xi, eps, m.horizon()).unwrap();
    assert!(g.failure_prob < 0.05, "bound should be informative here: {}", g.failure_prob);
    let trials = 300;
    let mut rng = seeded_rng(1);
    let mut failures = 0;
    for _ in 0..trials {
        let d = demos(&m, &pi, n, &mut rng);
        let stats = estimate_visit_stats(&d, 4, m.horizon()).unwrap();
        let support = build_support_by_budget(&stats.h_hat, xi, &m.initial_support()).unwrap();
        let lost: f64 = support.removed().iter().map(|&s| h[s]).sum();
        if lost > xi + eps {
            failures += 1;
            continue;
        }
        let cert = certify_imperfect(&m, &pi, &support).unwrap();
        assert!(cert.gap <= g.gap_bound + 1e-9);
    }
    let rate = failures as f64 / trials as f64;
    assert!(rate <= allowance(g.failure_prob, trials), "{rate} vs {}", g.failure_prob);
}

#[test]
fn bernstein_bound_covers_the_gap() {
    let m = random_mdp(5, 2, 4, 3, 12);
    let pi = TabularPolicy::uniform(5, 2);
    let (xi, delta) = (0.05, 0.1);
    let trials = 200;
    let mut rng = seeded_rng(2);
    let mut misses = 0;
    for _ in 0..trials {
        let d = demos(&m, &pi, 100, &mut rng);
        let stats = estimate_visit_stats(&d, 5, m.horizon()).unwrap();
        assert!(stats.full_horizon);
        let support = build_support_by_budget(&stats.rho_hat, xi, &m.initial_support()).unwrap();
        let bound = bernstein_guarantee(&stats, xi, delta).unwrap();
        let cert = certify_stationary(&m, &pi, &support).unwrap();
        misses += (cert.gap > bound) as usize;
    }
    assert!(misses as f64 / trials as f64 <= allowance(delta, trials));
}

#[test]
fn coupon_matches_simulation() {
    let (m, n, trials) = (4, 20, 200_000);
    let exact = coupon_probability(m, n).unwrap();
    let mut rng = seeded_rng(5);
    let hits = (0..trials)
        .filter(|_| {
            let mut seen = 0u32;
            for _ in 0..n {
                seen |= 1 << rng.random_range(0..m);
            }
            seen == (1 << m) - 1
        })
        .count();
    let freq = hits as f64 / trials as f64;
    let se = (exact * (1.0 - exact) / trials as f64).sqrt();
    assert!((freq - exact).abs() <= 4.0 * se, "{freq} vs {exact}");
}

fn simulate_cover(m: usize, eps_d: f64, n: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let hits = (0..trials)
        .filter(|_| {
            let mut seen = vec![false; m];
            for _ in 0..n {
                let u: f64 = rng.random();
                let cell = (u / eps_d) as usize;
                if cell < m {
                    seen[cell] = true;
                }
            }
            seen.iter().all(|&x| x)
        })
        .count();
    hits as f64 / trials as f64
}

#[test]
fn cover_matches_simulation() {
    for (m, eps_d, n) in [(3, 0.2, 10), (20, 0.05, 60), (20, 0.04, 90)] {
        let exact = cover_probability(m, eps_d, n).unwrap();
        let trials = 100_000;
        let freq = simulate_cover(m, eps_d, n, trials, m as u64);
        let se = (exact * (1.0 - exact) / trials as f64).sqrt().max(1.0 / trials as f64);
        assert!((freq - exact).abs() <= 4.0 * se, "m={m}: {freq} vs {exact}");
    }
}

fn small_lake(horizon: usize) -> TabularMdp {
    build_frozenlake(&FrozenLakeSpec {
        horizon,
        ..FrozenLakeSpec::with_map(GridMap::classic_4x4())
    })
    .unwrap()
}

#[test]
fn regret_split_accounts_for_every_episode() {
    let m = small_lake(20);
    let expert = value_iteration(&m, EvalMode::FiniteHorizon, 1e-12).unwrap().policy;
    let rho = average_state_distribution(&m, &expert).unwrap();
    let support = build_support_by_fraction(&rho, 0.25, &m.initial_support()).unwrap();
    let cfg = LearnerConfig {
        episodes: 3000,
        seed: 4,
        ..LearnerConfig::default()
    };
    for support in [support, StateSet::full(m.n_states())] {
        let e = build_estop_mdp(&m, &support).unwrap();
        let out = q_learning(&LearningEnv::estop(&e), &cfg).unwrap();
        let t = 3000 * m.horizon();
        let r = regret_decomposition(&m, &e, &out.episode_returns, t).unwrap();
        assert_eq!(r.episodes, 3000);
        let collected: f64 = out.episode_returns.iter().sum();
        assert!((r.total() - (3000.0 * r.j_opt - collected)).abs() < 1e-6);
        assert!(r.asymptotic_term >= -1e-9);
        if support.removed().is_empty() {
            assert!(r.asymptotic_term.abs() < 1e-9);
        }
        let early: f64 = out.episode_returns[..1000].iter().sum();
        let late: f64 = out.episode_returns[2000..].iter().sum();
        assert!(late > early, "learning should improve returns: {early} then {late}");
    }
    let e = build_estop_mdp(&m, &StateSet::full(m.n_states())).unwrap();
    assert!(regret_decomposition(&m, &e, &[0.0; 3], 100).is_err());
}

#[test]
fn frozenlake_half_removal_rewires_every_row() {
    let m = build_frozenlake(&FrozenLakeSpec::default()).unwrap();
    let expert = value_iteration(&m, EvalMode::FiniteHorizon, 1e-12).unwrap().policy;
    let rho = average_state_distribution(&m, &expert).unwrap();
    let support = build_support_by_fraction(&rho, 0.5, &m.initial_support()).unwrap();
    assert_eq!(support.removed().len(), 32);
    let e = build_estop_mdp(&m, &support).unwrap();
    let term = e.term_state();
    for s in 0..m.n_states() {
        for a in 0..m.n_actions() {
            let row = e.mdp.successors(s, a);
            let total: f64 = row.iter().map(|x| x.prob).sum();
            assert!((total - 1.0).abs() < 1e-12, "row ({s},{a}) sums to {total}");
            if !support.contains(s) {
                assert_eq!(row.len(), 1);
                assert_eq!((row[0].state, row[0].prob, row[0].reward), (term, 1.0, 0.0));
                continue;
            }
            let mut leak = 0.0;
            for x in m.successors(s, a) {
                if support.contains(x.state) {
                    assert!(row.contains(x), "kept transition ({s},{a})->{} missing", x.state);
                } else {
                    leak += x.prob;
                }
            }
            let to_term: f64 = row.iter().filter(|x| x.state == term).map(|x| x.prob).sum();
            assert!((to_term - leak).abs() < 1e-12);
            assert!(row.iter().filter(|x| x.state == term).all(|x| x.reward == 0.0));
        }
    }
}
