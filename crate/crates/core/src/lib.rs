//! Tabular MDPs, e-stop support sets, visitation estimation, learners and
//! sub-optimality bounds.

// Negated comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod envs;
pub mod error;
pub mod estimation;
pub mod formats;
pub mod learners;
pub mod mdp;
pub mod support;

pub use bounds::{
    bernstein_guarantee, certify_imperfect, certify_perfect, certify_stationary, coupon_probability,
    cover_probability, hoeffding_guarantee, regret_decomposition, solve_estop, GapCertificate, Theorem,
};
pub use error::{MdpError, Result};
pub use estimation::{
    build_support_by_budget, build_support_by_fraction, estimate_visit_stats, exact_hitting_probabilities,
    learned_estop, learned_estop_by_fraction, read_demos, write_demos, Demo, VisitStats,
};
pub use formats::{mdp_from_json, mdp_to_json};
pub use learners::{actor_critic, cross_entropy_search, q_learning, LearnerConfig, LearningCurve, LearningEnv};
pub use mdp::{
    average_state_distribution, policy_value, rollout, rollout_with, seeded_rng, state_distribution,
    state_distributions, value_iteration, value_iteration_with, EvalMode, IterOptions, Successor, TabularMdp,
    TabularPolicy, Trajectory, ValueIterationResult,
};
pub use support::{
    box_from_trajectories, build_estop_mdp, estop_step_filter, rollout_filtered, ContinuousBox, EStopMdp,
    StateRef, StateSet, StepDecision, SupportSet, TimeIndexedSet, VisitCountBudget,
};
