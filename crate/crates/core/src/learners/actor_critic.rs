use super::{Evaluator, LearnerConfig, LearningCurve, LearningEnv};
use crate::error::Result;
use crate::mdp::{argmax, sample_index, seeded_rng, TabularPolicy};

/// Softmax of `prefs` with max-subtraction.
pub fn softmax(prefs: &[f64]) -> Vec<f64> {
    let m = prefs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = prefs.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

#[derive(Debug, Clone)]
pub struct ActorCriticResult {
    /// Action preferences `[s][a]`, row-major.
    pub preferences: Vec<f64>,
    pub values: Vec<f64>,
    pub curve: LearningCurve,
    pub episode_returns: Vec<f64>,
}

impl ActorCriticResult {
    pub fn n_actions(&self) -> usize {
        self.preferences.len() / self.values.len()
    }

    /// Softmax policy over the preferences.
    pub fn policy(&self) -> TabularPolicy {
        let probs = self.preferences.chunks(self.n_actions()).flat_map(softmax).collect();
        TabularPolicy::stationary(self.values.len(), self.n_actions(), probs).expect("softmax rows are distributions")
    }

    /// Most likely action of the softmax policy in every state.
    pub fn mode_policy(&self) -> TabularPolicy {
        mode_policy(&self.preferences, self.n_actions())
    }
}

fn mode_policy(prefs: &[f64], na: usize) -> TabularPolicy {
    let actions: Vec<usize> = prefs.chunks(na).map(argmax).collect();
    TabularPolicy::deterministic(&actions, na)
}

/// One-step actor-critic with a tabular critic and a softmax actor.
///
/// `δ = r + γV(s') − V(s)` (no bootstrap after terminal or e-stop
/// transitions), `V(s) += αδ`, and `θ(s,·) += β γ^t δ (e_a − π(·|s))`. Each
/// updated preference row is recentred so its maximum is zero.
pub fn actor_critic(env: &LearningEnv, cfg: &LearnerConfig) -> Result<ActorCriticResult> {
    cfg.validate()?;
    env.check()?;
    let n = env.train().n_states();
    let na = env.n_actions();
    let horizon = env.horizon();
    let mut rng = seeded_rng(cfg.seed);
    let mut prefs = vec![0.0; n * na];
    let mut values = vec![0.0; n];
    let mut evaluator = Evaluator::new(cfg.gamma);
    let mut curve = LearningCurve::new(cfg.seed);
    let mut episode_returns = Vec::with_capacity(cfg.episodes);
    let mut states_seen = 0u64;

    let (j_full, j_train) = evaluator.score(env, &mode_policy(&prefs, na))?;
    curve.push(0, j_full, j_train);
    for episode in 0..cfg.episodes {
        let mut s = env.sample_initial(&mut rng);
        let mut discount = 1.0;
        let mut total = 0.0;
        for _ in 0..horizon - 1 {
            let row = s * na..(s + 1) * na;
            let pi = softmax(&prefs[row.clone()]);
            let a = sample_index(&pi, &mut rng);
            let (next, reward, cause) = env.transition(s, a, &mut rng);
            states_seen += 1;
            total += reward;
            let target = if cause.is_some() { reward } else { reward + cfg.gamma * values[next] };
            let delta = target - values[s];
            values[s] += cfg.alpha * delta;
            let step = cfg.beta * discount * delta;
            for (b, p) in prefs[row.clone()].iter_mut().enumerate() {
                let indicator = if b == a { 1.0 } else { 0.0 };
                *p += step * (indicator - pi[b]);
            }
            let top = prefs[row.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prefs[row].iter_mut().for_each(|p| *p -= top);
            discount *= cfg.gamma;
            if cause.is_some() {
                break;
            }
            s = next;
        }
        episode_returns.push(total);
        let finished = episode + 1;
        if finished % cfg.eval_every_episodes == 0 || finished == cfg.episodes {
            let (j_full, j_train) = evaluator.score(env, &mode_policy(&prefs, na))?;
            curve.push(states_seen, j_full, j_train);
        }
    }
    Ok(ActorCriticResult {
        preferences: prefs,
        values,
        curve,
        episode_returns,
    })
}
