//! Live training sessions that a human supervisor can stop, and the HTTP
//! service that hosts them.

// Negated comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod service;
pub mod session;

pub use service::{router, serve, Created, EstopRequest, ServiceError, SessionStatus, SpeedRequest};
pub use session::{InterventionRecord, ReplayEntry, SessionConfig, SessionCore, SessionError, SessionEvent};
