#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod baselines;
pub mod brain;
pub mod copac;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod sac;

pub use brain::{Brain, HealthyBrain, InjuredBrain};
pub use envs::{StepResult, World, WorldMdpSpec};
pub use error::{Error, Result};
pub use nn::{Activation, FeedforwardNet};
