//! Reference min-cost flow on a unit lattice: demands are whole multiples of `h` and every item
//! pays its true cost at lattice loads, i.e. the piecewise-linear interpolation of `C_t`.

use std::collections::VecDeque;

use super::{invalid, OracleError};
use crate::market::{Allocation, MarketInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFlow {
    /// Demands after rounding to the lattice.
    pub demand: Vec<f64>,
    pub allocation: Allocation,
    pub loads: Vec<f64>,
    pub cost: f64,
    pub augmentations: usize,
}

/// Nearest lattice point for each demand.
pub fn round_to_grid(demand: &[f64], step: f64) -> Vec<f64> {
    demand.iter().map(|&x| (x.max(0.0) / step).round() * step).collect()
}

/// Successive shortest paths with unit augmentations. A path from any buyer with unmet demand
/// alternates forward edges and edges carrying flow, so only its final item changes load; the
/// cheapest such path therefore ends at the reachable item with the smallest next increment.
pub fn discrete_min_cost_flow(instance: &MarketInstance, demand: &[f64], step: f64) -> Result<DiscreteFlow, OracleError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid("step", format!("must be positive, got {step}")));
    }
    if demand.len() != instance.num_buyers() {
        return Err(invalid("demand", format!("expected {} entries, got {}", instance.num_buyers(), demand.len())));
    }
    let nb = instance.num_buyers();
    let nt = instance.num_items();
    let edges = instance.edges();
    let mut remaining: Vec<u64> = demand.iter().map(|&x| (x.max(0.0) / step).round() as u64).collect();
    let mut units = vec![0u64; edges.len()];
    let mut load = vec![0u64; nt];
    let increment = |t: usize, k: u64| {
        let c = &instance.items()[t].cost;
        c.total((k + 1) as f64 * step) - c.total(k as f64 * step)
    };
    let mut augmentations = 0;
    // parent edge of each node in the search forest; buyers are nodes 0..nb, items nb..
    let mut via: Vec<Option<usize>> = vec![None; nb + nt];
    let mut seen = vec![false; nb + nt];
    let mut queue = VecDeque::new();
    while remaining.iter().any(|&r| r > 0) {
        seen.fill(false);
        via.fill(None);
        queue.clear();
        for i in 0..nb {
            if remaining[i] > 0 {
                seen[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(node) = queue.pop_front() {
            if node < nb {
                for &k in instance.buyer_edges(node) {
                    let t = nb + edges[k].item;
                    if !seen[t] {
                        seen[t] = true;
                        via[t] = Some(k);
                        queue.push_back(t);
                    }
                }
            } else {
                for &k in instance.item_edges(node - nb) {
                    let i = edges[k].buyer;
                    if units[k] > 0 && !seen[i] {
                        seen[i] = true;
                        via[i] = Some(k);
                        queue.push_back(i);
                    }
                }
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for t in 0..nt {
            if seen[nb + t] {
                let inc = increment(t, load[t]);
                if inc.is_finite() && best.is_none_or(|(b, _)| inc < b) {
                    best = Some((inc, t));
                }
            }
        }
        let Some((_, target)) = best else {
            return Err(invalid("demand", "lattice demand cannot be routed within capacity"));
        };
        load[target] += 1;
        let mut node = nb + target;
        while let Some(k) = via[node] {
            if node >= nb {
                units[k] += 1;
                node = edges[k].buyer;
            } else {
                units[k] -= 1;
                node = nb + edges[k].item;
            }
        }
        remaining[node] -= 1;
        augmentations += 1;
    }
    let flows: Vec<f64> = units.iter().map(|&u| u as f64 * step).collect();
    let loads: Vec<f64> = load.iter().map(|&u| u as f64 * step).collect();
    let cost = instance.production_cost(&loads);
    Ok(DiscreteFlow { demand: round_to_grid(demand, step), allocation: Allocation { flows }, loads, cost, augmentations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{CostFn, DemandFn};
    use crate::market::{BuyerType, Item};

    #[test]
    fn reroutes_through_shared_buyer() {
        // b0 reaches t0 only, b1 reaches both; quadratic costs balance the loads
        let m = MarketInstance::from_pairs(
            vec![
                BuyerType { id: "b0".into(), demand: DemandFn::uniform(1.0, 1.0).unwrap() },
                BuyerType { id: "b1".into(), demand: DemandFn::uniform(1.0, 1.0).unwrap() },
            ],
            vec![
                Item { id: "t0".into(), cost: CostFn::quadratic(1.0).unwrap() },
                Item { id: "t1".into(), cost: CostFn::quadratic(1.0).unwrap() },
            ],
            &[(0, 0), (1, 0), (1, 1)],
        )
        .unwrap();
        let d = discrete_min_cost_flow(&m, &[1.0, 1.0], 0.01).unwrap();
        assert!((d.loads[0] - 1.0).abs() < 1e-9 && (d.loads[1] - 1.0).abs() < 1e-9);
        assert_eq!(d.augmentations, 200);
    }
}
