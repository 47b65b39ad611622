//! Bipartite markets of buyer types and items, and the basic outcome measures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{CostFn, DemandFn, FunctionError};

/// Grid used for the MHR certificate at construction time.
pub const MHR_GRID: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("market needs at least one buyer and one item")]
    Empty,
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("edge refers to unknown buyer `{0}`")]
    UnknownBuyer(String),
    #[error("edge refers to unknown item `{0}`")]
    UnknownItem(String),
    #[error("duplicate edge ({buyer}, {item})")]
    DuplicateEdge { buyer: String, item: String },
    #[error("buyer `{0}` has no edges")]
    IsolatedBuyer(String),
    #[error("demand of buyer `{buyer}` is not MHR: hazard drops by {worst} near x = {location:?}")]
    NotMhr { buyer: String, worst: f64, location: Option<f64> },
    #[error("cost of item `{0}` is not convex")]
    NotConvex(String),
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Function(#[from] FunctionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerType {
    pub id: String,
    pub demand: DemandFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub id: String,
    pub cost: CostFn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub buyer: usize,
    pub item: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub buyers: Vec<BuyerType>,
    pub items: Vec<Item>,
    /// `[buyer-id, item-id]` pairs.
    pub edges: Vec<[String; 2]>,
}

/// A validated market: every demand curve is MHR, every cost convex, every buyer connected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketSpec", into = "MarketSpec")]
pub struct MarketInstance {
    buyers: Vec<BuyerType>,
    items: Vec<Item>,
    edges: Vec<Edge>,
    buyer_edges: Vec<Vec<usize>>,
    item_edges: Vec<Vec<usize>>,
}

pub type PriceVector = Vec<f64>;
pub type DemandVector = Vec<f64>;

/// Per-edge flows `y_t(i)`, indexed like [`MarketInstance::edges`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub flows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub prices: PriceVector,
    pub demand: DemandVector,
    pub allocation: Allocation,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvyReport {
    pub passes: bool,
    /// Largest `p_t - p̄_i` over edges carrying flow.
    pub edge_residual: f64,
    /// Largest best-response mismatch, respecting the clamps at `0` and `T_i`.
    pub best_response_residual: f64,
    pub worst_edge: Option<usize>,
    pub worst_buyer: Option<usize>,
}

impl EnvyReport {
    pub fn residual(&self) -> f64 {
        self.edge_residual.max(self.best_response_residual)
    }
}

impl TryFrom<MarketSpec> for MarketInstance {
    type Error = MarketError;

    fn try_from(spec: MarketSpec) -> Result<Self, MarketError> {
        let mut edges = Vec::with_capacity(spec.edges.len());
        for [b, t] in &spec.edges {
            let buyer = spec
                .buyers
                .iter()
                .position(|x| &x.id == b)
                .ok_or_else(|| MarketError::UnknownBuyer(b.clone()))?;
            let item = spec
                .items
                .iter()
                .position(|x| &x.id == t)
                .ok_or_else(|| MarketError::UnknownItem(t.clone()))?;
            edges.push(Edge { buyer, item });
        }
        MarketInstance::new(spec.buyers, spec.items, edges)
    }
}

impl From<MarketInstance> for MarketSpec {
    fn from(m: MarketInstance) -> Self {
        let edges = m
            .edges
            .iter()
            .map(|e| [m.buyers[e.buyer].id.clone(), m.items[e.item].id.clone()])
            .collect();
        MarketSpec { buyers: m.buyers, items: m.items, edges }
    }
}

impl MarketInstance {
    pub fn new(buyers: Vec<BuyerType>, items: Vec<Item>, edges: Vec<Edge>) -> Result<Self, MarketError> {
        if buyers.is_empty() || items.is_empty() {
            return Err(MarketError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &buyers {
            if !seen.insert(b.id.as_str()) {
                return Err(MarketError::DuplicateId { kind: "buyer", id: b.id.clone() });
            }
        }
        seen.clear();
        for t in &items {
            if !seen.insert(t.id.as_str()) {
                return Err(MarketError::DuplicateId { kind: "item", id: t.id.clone() });
            }
        }
        let mut buyer_edges = vec![Vec::new(); buyers.len()];
        let mut item_edges = vec![Vec::new(); items.len()];
        let mut pairs = std::collections::BTreeSet::new();
        for (k, e) in edges.iter().enumerate() {
            if e.buyer >= buyers.len() {
                return Err(MarketError::UnknownBuyer(e.buyer.to_string()));
            }
            if e.item >= items.len() {
                return Err(MarketError::UnknownItem(e.item.to_string()));
            }
            if !pairs.insert((e.buyer, e.item)) {
                return Err(MarketError::DuplicateEdge {
                    buyer: buyers[e.buyer].id.clone(),
                    item: items[e.item].id.clone(),
                });
            }
            buyer_edges[e.buyer].push(k);
            item_edges[e.item].push(k);
        }
        if let Some(i) = buyer_edges.iter().position(Vec::is_empty) {
            return Err(MarketError::IsolatedBuyer(buyers[i].id.clone()));
        }
        for b in &buyers {
            let cert = b.demand.check_mhr(MHR_GRID)?;
            if !cert.passes {
                return Err(MarketError::NotMhr {
                    buyer: b.id.clone(),
                    worst: cert.worst_violation,
                    location: cert.location,
                });
            }
        }
        for t in &items {
            if !t.cost.check_convex(MHR_GRID)?.passes {
                return Err(MarketError::NotConvex(t.id.clone()));
            }
        }
        Ok(MarketInstance { buyers, items, edges, buyer_edges, item_edges })
    }

    /// Builds a market from `(buyer, item)` index pairs.
    pub fn from_pairs(
        buyers: Vec<BuyerType>,
        items: Vec<Item>,
        pairs: &[(usize, usize)],
    ) -> Result<Self, MarketError> {
        let edges = pairs.iter().map(|&(buyer, item)| Edge { buyer, item }).collect();
        Self::new(buyers, items, edges)
    }

    pub fn buyers(&self) -> &[BuyerType] {
        &self.buyers
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_buyers(&self) -> usize {
        self.buyers.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Edge indices incident to buyer `i`.
    pub fn buyer_edges(&self, i: usize) -> &[usize] {
        &self.buyer_edges[i]
    }

    /// Edge indices incident to item `t`.
    pub fn item_edges(&self, t: usize) -> &[usize] {
        &self.item_edges[t]
    }

    pub fn buyer_index(&self, id: &str) -> Option<usize> {
        self.buyers.iter().position(|b| b.id == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|t| t.id == id)
    }

    /// `λ^max_0`, the largest peak valuation.
    pub fn max_peak(&self) -> f64 {
        self.buyers.iter().map(|b| b.demand.peak()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `λ^min_0`, the smallest peak valuation.
    pub fn min_peak(&self) -> f64 {
        self.buyers.iter().map(|b| b.demand.peak()).fold(f64::INFINITY, f64::min)
    }

    /// Whether all peaks agree within `tol` relative to the largest.
    pub fn has_uniform_peak(&self, tol: f64) -> bool {
        let hi = self.max_peak();
        hi - self.min_peak() <= tol * hi.max(1.0)
    }

    /// `Σ_i T_i`.
    pub fn total_mass(&self) -> f64 {
        self.buyers.iter().map(|b| b.demand.support()).sum()
    }

    fn check_len(&self, what: &'static str, got: usize, expected: usize) -> Result<(), MarketError> {
        if got == expected {
            Ok(())
        } else {
            Err(MarketError::LengthMismatch { what, expected, got })
        }
    }

    /// `p̄_i = min_{t ∈ S_i} p_t`.
    pub fn cheapest_price(&self, prices: &[f64], buyer: usize) -> Result<f64, MarketError> {
        self.check_len("price vector", prices.len(), self.items.len())?;
        Ok(self.cheapest(prices, buyer))
    }

    pub(crate) fn cheapest(&self, prices: &[f64], buyer: usize) -> f64 {
        self.buyer_edges[buyer]
            .iter()
            .map(|&k| prices[self.edges[k].item])
            .fold(f64::INFINITY, f64::min)
    }

    /// Best-response demand `x_i = λ_i⁻¹(p̄_i)`.
    pub fn best_response(&self, prices: &[f64]) -> Result<DemandVector, MarketError> {
        self.check_len("price vector", prices.len(), self.items.len())?;
        Ok((0..self.buyers.len())
            .map(|i| self.buyers[i].demand.inverse(self.cheapest(prices, i)))
            .collect())
    }

    pub fn loads(&self, allocation: &Allocation) -> Vec<f64> {
        let mut y = vec![0.0; self.items.len()];
        for (e, f) in self.edges.iter().zip(&allocation.flows) {
            y[e.item] += f;
        }
        y
    }

    pub fn shipped(&self, allocation: &Allocation) -> Vec<f64> {
        let mut x = vec![0.0; self.buyers.len()];
        for (e, f) in self.edges.iter().zip(&allocation.flows) {
            x[e.buyer] += f;
        }
        x
    }

    pub fn production_cost(&self, loads: &[f64]) -> f64 {
        self.items.iter().zip(loads).map(|(t, &y)| t.cost.total(y)).sum()
    }

    /// `Σ_t (p_t y_t - C_t(y_t))`.
    pub fn revenue(&self, prices: &[f64], allocation: &Allocation) -> Result<f64, MarketError> {
        self.check_len("price vector", prices.len(), self.items.len())?;
        self.check_len("allocation", allocation.flows.len(), self.edges.len())?;
        let y = self.loads(allocation);
        Ok(self.items.iter().enumerate().map(|(t, it)| prices[t] * y[t] - it.cost.total(y[t])).sum())
    }

    /// `Σ_i ∫_0^{x_i} λ_i - Σ_t C_t(y_t)`.
    pub fn social_welfare(&self, demand: &[f64], allocation: &Allocation) -> Result<f64, MarketError> {
        self.check_len("demand vector", demand.len(), self.buyers.len())?;
        self.check_len("allocation", allocation.flows.len(), self.edges.len())?;
        let value: f64 = self.buyers.iter().zip(demand).map(|(b, &x)| b.demand.antiderivative(x)).sum();
        Ok(value - self.production_cost(&self.loads(allocation)))
    }

    /// Residuals of the envy-freeness conditions; `tol` both filters flows and bounds the residual.
    pub fn check_envy_free(
        &self,
        prices: &[f64],
        demand: &[f64],
        allocation: &Allocation,
        tol: f64,
    ) -> Result<EnvyReport, MarketError> {
        self.check_len("price vector", prices.len(), self.items.len())?;
        self.check_len("demand vector", demand.len(), self.buyers.len())?;
        self.check_len("allocation", allocation.flows.len(), self.edges.len())?;
        let cheapest: Vec<f64> = (0..self.buyers.len()).map(|i| self.cheapest(prices, i)).collect();
        let mut edge_residual = 0.0f64;
        let mut worst_edge = None;
        for (k, e) in self.edges.iter().enumerate() {
            if allocation.flows[k] > tol {
                let r = (prices[e.item] - cheapest[e.buyer]).max(0.0);
                if r > edge_residual {
                    edge_residual = r;
                    worst_edge = Some(k);
                }
            }
        }
        let shipped = self.shipped(allocation);
        let mut best_response_residual = 0.0f64;
        let mut worst_buyer = None;
        for (i, b) in self.buyers.iter().enumerate() {
            let f = &b.demand;
            let x = demand[i];
            let p = cheapest[i];
            let t = f.support();
            let slack = tol.max(1e-12 * t);
            let mut r = if x <= slack {
                (f.peak() - p).max(0.0)
            } else if x >= t - slack {
                (p - f.floor()).max(0.0)
            } else {
                // inside the support, λ must equal p̄ unless x sits on the edge of a plateau
                let lo = f.value(x + slack);
                let hi = f.value(x - slack);
                (p - hi).max(lo - p).max(0.0)
            };
            r = r.max((shipped[i] - x).abs());
            if r > best_response_residual {
                best_response_residual = r;
                worst_buyer = Some(i);
            }
        }
        Ok(EnvyReport {
            passes: edge_residual <= tol && best_response_residual <= tol,
            edge_residual,
            best_response_residual,
            worst_edge,
            worst_buyer,
        })
    }
}

impl Allocation {
    pub fn zeros(instance: &MarketInstance) -> Self {
        Allocation { flows: vec![0.0; instance.edges().len()] }
    }
}

impl Solution {
    pub fn revenue(&self, instance: &MarketInstance) -> Result<f64, MarketError> {
        instance.revenue(&self.prices, &self.allocation)
    }

    pub fn welfare(&self, instance: &MarketInstance) -> Result<f64, MarketError> {
        instance.social_welfare(&self.demand, &self.allocation)
    }

    pub fn envy(&self, instance: &MarketInstance, tol: f64) -> Result<EnvyReport, MarketError> {
        instance.check_envy_free(&self.prices, &self.demand, &self.allocation, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market(buyers: Vec<(&str, DemandFn)>, items: Vec<(&str, CostFn)>, pairs: &[(usize, usize)]) -> MarketInstance {
        MarketInstance::from_pairs(
            buyers.into_iter().map(|(id, demand)| BuyerType { id: id.into(), demand }).collect(),
            items.into_iter().map(|(id, cost)| Item { id: id.into(), cost }).collect(),
            pairs,
        )
        .unwrap()
    }

    #[test]
    fn cheapest_price_takes_minimum_over_edges() {
        let m = market(
            vec![("b", DemandFn::linear(1.0, 1.0, 1.0).unwrap())],
            vec![("A", CostFn::zero()), ("B", CostFn::zero())],
            &[(0, 0), (0, 1)],
        );
        assert_eq!(m.cheapest_price(&[0.5, 0.3], 0).unwrap(), 0.3);
        assert!(matches!(m.cheapest_price(&[0.5], 0), Err(MarketError::LengthMismatch { .. })));
    }

    #[test]
    fn revenue_can_be_negative() {
        let m = market(
            vec![("b", DemandFn::uniform(3.0, 2.0).unwrap())],
            vec![("A", CostFn::quadratic(1.0).unwrap())],
            &[(0, 0)],
        );
        let a = Allocation { flows: vec![2.0] };
        assert_eq!(m.revenue(&[1.0], &a).unwrap(), -2.0);
    }

    #[test]
    fn welfare_of_uniform_buyer_with_linear_cost() {
        let m = market(
            vec![("b", DemandFn::uniform(2.0, 1.0).unwrap())],
            vec![("A", CostFn::linear(1.0).unwrap())],
            &[(0, 0)],
        );
        let a = Allocation { flows: vec![1.0] };
        assert_eq!(m.social_welfare(&[1.0], &a).unwrap(), 1.0);
    }

    #[test]
    fn envy_check_flags_flow_on_expensive_item() {
        let m = market(
            vec![("b", DemandFn::linear(1.0, 1.0, 1.0).unwrap())],
            vec![("A", CostFn::zero()), ("B", CostFn::zero())],
            &[(0, 0), (0, 1)],
        );
        let prices = [0.5, 0.4];
        let x = m.best_response(&prices).unwrap();
        let good = Allocation { flows: vec![0.0, x[0]] };
        assert!(m.check_envy_free(&prices, &x, &good, 1e-9).unwrap().passes);
        let bad = Allocation { flows: vec![x[0], 0.0] };
        let r = m.check_envy_free(&prices, &x, &bad, 1e-9).unwrap();
        assert!(!r.passes);
        assert!((r.edge_residual - 0.1).abs() < 1e-12);
        assert_eq!(r.worst_edge, Some(0));
    }

    #[test]
    fn envy_check_respects_clamps() {
        let m = market(
            vec![("b", DemandFn::linear(1.0, 0.5, 1.0).unwrap())],
            vec![("A", CostFn::zero())],
            &[(0, 0)],
        );
        // p̄ below λ(T) = 0.5 forces x = T
        let a = Allocation { flows: vec![1.0] };
        assert!(m.check_envy_free(&[0.2], &[1.0], &a, 1e-9).unwrap().passes);
        let z = Allocation { flows: vec![0.0] };
        assert!(m.check_envy_free(&[1.2], &[0.0], &z, 1e-9).unwrap().passes);
        let short = Allocation { flows: vec![0.9] };
        assert!(!m.check_envy_free(&[0.2], &[0.9], &short, 1e-9).unwrap().passes);
    }

    #[test]
    fn construction_rejects_bad_graphs() {
        let d = || DemandFn::linear(1.0, 1.0, 1.0).unwrap();
        let buyers = vec![BuyerType { id: "b".into(), demand: d() }, BuyerType { id: "c".into(), demand: d() }];
        let items = vec![Item { id: "A".into(), cost: CostFn::zero() }];
        assert!(matches!(
            MarketInstance::from_pairs(buyers.clone(), items.clone(), &[(0, 0)]),
            Err(MarketError::IsolatedBuyer(id)) if id == "c"
        ));
        assert!(matches!(
            MarketInstance::from_pairs(buyers, items, &[(0, 0), (1, 0), (0, 0)]),
            Err(MarketError::DuplicateEdge { .. })
        ));
    }

    #[test]
    fn construction_rejects_non_mhr_demand() {
        let pts = vec![[0.0, 1.0], [1.0, 0.2], [2.0, 0.15], [3.0, 0.0]];
        let buyers = vec![BuyerType { id: "b".into(), demand: DemandFn::tabulated(pts).unwrap() }];
        let items = vec![Item { id: "A".into(), cost: CostFn::zero() }];
        assert!(matches!(
            MarketInstance::from_pairs(buyers, items, &[(0, 0)]),
            Err(MarketError::NotMhr { .. })
        ));
    }

    #[test]
    fn market_spec_round_trips() {
        let m = market(
            vec![("b", DemandFn::linear(1.0, 1.0, 1.0).unwrap())],
            vec![("A", CostFn::zero()), ("B", CostFn::quadratic(0.5).unwrap())],
            &[(0, 1), (0, 0)],
        );
        let s = serde_json::to_string(&m).unwrap();
        let back: MarketInstance = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
