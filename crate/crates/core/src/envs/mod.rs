//! Concrete environments.

pub mod frozenlake;
pub mod pendulum;
mod random;

pub use frozenlake::{build_frozenlake, Cell, FrozenLakeSpec, GridMap};
pub use pendulum::{pendulum_reset, pendulum_step, PendulumSpec, PendulumState};
pub use random::random_mdp;
