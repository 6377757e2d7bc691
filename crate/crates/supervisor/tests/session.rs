use estop_core::mdp::{seeded_rng, TerminationCause};
use estop_core::{
    build_estop_mdp, q_learning, rollout_filtered, state_distributions, LearnerConfig, LearningEnv, StateSet, SupportSet,
    TabularPolicy,
};
use estop_supervisor::{ReplayEntry, SessionConfig, SessionCore};
use rand::Rng;

fn cfg(map: &str, episodes: usize, seed: u64) -> SessionConfig {
    SessionConfig {
        environment: map.into(),
        horizon: 60,
        learner: LearnerConfig {
            episodes,
            seed,
            eval_every_episodes: 20,
            ..LearnerConfig::default()
        },
        ..SessionConfig::default()
    }
}

/// Drives a session and triggers at pseudo-random points.
fn supervised(cfg: SessionConfig, triggers: usize, seed: u64) -> SessionCore {
    let mut rng = seeded_rng(seed);
    let mut core = SessionCore::new(cfg).unwrap();
    let mut left = triggers;
    while !core.finished() {
        if left > 0 && core.t() > 0 && rng.random::<f64>() < 0.01 {
            core.trigger(rng.random_range(1..=3)).unwrap();
            left -= 1;
        } else {
            core.step().unwrap();
        }
    }
    core
}

#[test]
fn replaying_the_log_reproduces_the_run() {
    let live = supervised(cfg("frozen_lake_8x8", 400, 11), 12, 5);
    assert!(!live.interventions().is_empty());
    let log: Vec<ReplayEntry> = live.interventions().iter().map(ReplayEntry::from).collect();
    let again = SessionCore::replay(live.config().clone(), &log).unwrap();
    assert_eq!(again.removed(), live.removed());
    assert_eq!(again.curve(), live.curve());
    assert_eq!(again.episode_returns(), live.episode_returns());
    let stamps = |c: &SessionCore| c.interventions().iter().map(|r| (r.episode, r.t, r.marked.clone())).collect::<Vec<_>>();
    assert_eq!(stamps(&again), stamps(&live));
}

#[test]
fn without_interventions_the_session_is_ordinary_q_learning() {
    for seed in [0, 1, 2] {
        let c = cfg("frozen_lake_8x8", 200, seed);
        let mut core = SessionCore::new(c.clone()).unwrap();
        while core.step().unwrap().is_some() {}
        let env = LearningEnv::online(core.mdp(), &StateSet::full(core.mdp().n_states())).unwrap();
        let offline = q_learning(&env, &c.learner).unwrap();
        assert_eq!(core.curve(), &offline.curve);
        assert_eq!(core.episode_returns(), &offline.episode_returns[..]);
    }
}

#[test]
fn a_trigger_takes_effect_before_the_next_transition() {
    let mut core = SessionCore::new(cfg("frozen_lake_8x8", 100, 4)).unwrap();
    let mut rng = seeded_rng(9);
    for _ in 0..30 {
        let steps = rng.random_range(1..20);
        for _ in 0..steps {
            core.step().unwrap();
        }
        if core.finished() {
            break;
        }
        let rec = core.trigger(2).unwrap();
        let next = core.step().unwrap();
        if let Some(ev) = next {
            assert!(ev.episode > rec.episode, "transition {ev:?} after stop {rec:?}");
            assert_eq!(ev.t, 0);
        }
    }
}

#[test]
fn removed_states_stop_later_episodes_on_entry() {
    let mut core = SessionCore::new(cfg("frozen_lake_4x4", 300, 8)).unwrap();
    for _ in 0..40 {
        core.step().unwrap();
    }
    while core.t() == 0 {
        core.step().unwrap();
    }
    let rec = core.trigger(1).unwrap();
    let Some(&marked) = rec.marked.first() else {
        return;
    };
    while let Some(ev) = core.step().unwrap() {
        assert_ne!(ev.s, marked, "a removed state was acted from");
    }
}

#[test]
fn export_keeps_everything_but_the_marked_states() {
    let core = supervised(cfg("frozen_lake_8x8", 300, 3), 25, 17);
    let n = core.mdp().n_states();
    let k = core.removed().len();
    let marked: usize = core.interventions().iter().map(|r| r.marked.len()).sum();
    assert_eq!(marked, k);
    let support = core.support();
    assert_eq!(support.len(), n - k);
    for s in core.mdp().initial_support() {
        assert!(support.contains(s));
    }
    let doc = serde_json::to_string(&core.support_document()).unwrap();
    let back: SupportSet = serde_json::from_str(&doc).unwrap();
    assert_eq!(back, SupportSet::StateSet(support));
}

#[test]
fn the_exported_support_reproduces_offline() {
    // Offline rollouts under the exported support never act from a removed
    // state and stop at about the rate the e-stop model predicts.
    let core = supervised(cfg("frozen_lake_8x8", 300, 6), 25, 2);
    let support = core.support();
    assert!(support.len() < core.mdp().n_states());
    let estop = build_estop_mdp(core.mdp(), &support).unwrap();
    let n = core.mdp().n_states();
    let na = core.mdp().n_actions();
    let pi = TabularPolicy::uniform(n, na);
    let filter = SupportSet::StateSet(support.clone());
    let mut rng = seeded_rng(1);
    let runs = 20_000;
    let mut stopped = 0usize;
    for _ in 0..runs {
        let traj = rollout_filtered(core.mdp(), &pi, &filter, &mut rng).unwrap();
        assert!(traj.steps.iter().all(|x| support.contains(x.state)));
        if traj.termination_cause == TerminationCause::Estop {
            stopped += 1;
        }
    }
    let dists = state_distributions(&estop.mdp, &TabularPolicy::uniform(n + 1, na)).unwrap();
    let p = dists.last().unwrap()[estop.term_state()];
    let freq = stopped as f64 / runs as f64;
    let se = (p * (1.0 - p) / runs as f64).sqrt().max(1e-4);
    assert!((freq - p).abs() < 4.0 * se, "stop rate {freq} vs model {p}");
}
