use rand::seq::index;
use rand::Rng;

use crate::mdp::{seeded_rng, Successor, TabularMdp};

/// Random MDP for property tests.
///
/// Each `(s, a)` row draws `sparsity` distinct successors with flat-Dirichlet
/// weights and independent uniform rewards. `rho0` is Dirichlet over a random
/// subset of at most `max(1, n_states / 3)` states so that random supports have
/// room to remove something.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    sparsity: usize,
    seed: u64,
) -> TabularMdp {
    assert!(n_states >= 2, "random_mdp needs at least two states");
    assert!(n_actions >= 1 && horizon >= 1);
    let k = sparsity.clamp(1, n_states);
    let mut rng = seeded_rng(seed);

    let mut rows = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states * n_actions {
        let targets = index::sample(&mut rng, n_states, k).into_vec();
        let weights = dirichlet(&mut rng, k);
        rows.push(
            targets
                .into_iter()
                .zip(weights)
                .map(|(s, p)| Successor::new(s, p, rng.random::<f64>()))
                .collect(),
        );
    }

    let n_start = rng.random_range(1..=(n_states / 3).max(1));
    let starts = index::sample(&mut rng, n_states, n_start).into_vec();
    let weights = dirichlet(&mut rng, n_start);
    let mut rho0 = vec![0.0; n_states];
    for (s, w) in starts.into_iter().zip(weights) {
        rho0[s] = w;
    }

    TabularMdp::new(n_states, n_actions, horizon, rho0, rows, &[])
        .expect("generated rows are normalised")
}

/// Flat Dirichlet sample whose entries sum to 1 up to rounding in the last
/// entry.
fn dirichlet(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k)
        .map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-12)
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let head: f64 = w[..k - 1].iter().sum();
    w[k - 1] = (1.0 - head).max(0.0);
    w
}
