//! Dense function approximators shared by the imitation and provisioning
//! learners.
//!
//! Everything is `f64`, row-major, and stored as one flat parameter vector per
//! network so optimizers, soft updates and finite-difference checks can treat
//! networks as plain slices.

mod grad_check;
mod mlp;
mod optim;
mod snapshot;

pub use grad_check::grad_check;
pub use mlp::{mac_count, reset_mac_count, Activation, Mlp, Trace};
pub use optim::{Optimizer, OptimizerKind};
pub use snapshot::{MlpSnapshot, SNAPSHOT_MAGIC};
