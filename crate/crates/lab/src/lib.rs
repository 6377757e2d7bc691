//! Experiment protocol for e-stop MDPs: configuration, multi-seed trials,
//! curve aggregation and CSV tables.

// Negated comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod certify;
pub mod config;
pub mod error;
pub mod experiments;
pub mod pipeline;

pub use aggregate::{AggregateCurve, AggregatePoint, GRID_STEP};
pub use certify::{certification_sweep, certify_config, InstanceCertificates};
pub use config::{EnvironmentConfig, ExperimentConfig, ExpertSource, FrozenLakeConfig, PendulumConfig, RemovalRule};
pub use error::{LabError, Result};
pub use experiments::{
    run_ablation, run_learning_experiment, run_vi_sweep, write_ablation, write_learning, write_vi_sweep,
    AblationKind, AblationRow, LearningOutcome, TrialOutcome, TrialRecord, Variant, ViSweepRow,
};
pub use pipeline::{prepare_tabular, Prepared};
