// `!(x > 0.0)` is used throughout to reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod exec;
pub mod grid;
pub mod nls;
pub mod state;
pub mod contractions;
pub mod functionals;
pub mod hierarchy;
pub mod inequality;

pub use error::{GphError, Result};
pub use exec::Exec;
pub use grid::{FourierMultiplier, Grid, LpFamily};
pub use nls::{NlsParams, WaveFunction};
pub use state::{ClosurePolicy, DenseMarginal, HierarchyTruncation, MixtureState};
