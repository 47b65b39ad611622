//! Brute-force oracles, instance generators and numeric property suites.
//!
//! Nothing here is used by the algorithms themselves. The oracles are deliberately simple so
//! that they can be trusted as references in tests and comparisons.

use thiserror::Error;

use crate::ascent::AscendError;
use crate::flow::FlowError;
use crate::functions::FunctionError;
use crate::market::MarketError;

pub mod discrete;
pub mod generate;
pub mod grid;
pub mod lemmas;
pub mod sweep;

pub use discrete::{discrete_min_cost_flow, DiscreteFlow};
pub use generate::{gen_random_graph, gen_random_mhr_instance, gen_vertex_cover_gadget, is_vertex_cover, InstanceSpec, RandomMhrSpec};
pub use grid::{ascent_lower_bounds, grid_opt_revenue, grid_opt_revenue_auto, ItemGrid, OracleConfig, OracleReport};
pub use lemmas::{lemma_suite, LemmaConfig, PropertyReport, SuiteReport};
pub use sweep::{sweep_ascending, SweepReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle needs {required:.3e} evaluations, over the budget of {budget:.3e}")]
    BudgetExceeded { required: f64, budget: f64 },
    #[error("invalid oracle input `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Ascend(#[from] AscendError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Function(#[from] FunctionError),
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> OracleError {
    OracleError::InvalidSpec { field, reason: reason.into() }
}
