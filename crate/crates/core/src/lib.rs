//! Envy-free pricing in large bipartite markets with convex production costs.

pub mod functions;
pub mod market;
pub mod flow;
pub mod ascent;
pub mod pricing;
pub mod oracle;

pub use functions::{CostFn, CostSpec, DemandFn, DemandSpec, FunctionError};
pub use market::{Allocation, BuyerType, DemandVector, Edge, Item, MarketError, MarketInstance, PriceVector, Solution};
