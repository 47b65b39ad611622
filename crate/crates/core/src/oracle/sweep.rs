//! Fixed-step reference for the ascending auction: the active price walks up in small steps and
//! every stop is taken at the first step where the rule holds. No bisection, no boundary logic.

use serde::{Deserialize, Serialize};

use super::{invalid, OracleError};
use crate::ascent::AscendConfig;
use crate::flow::{min_cost_flow_masked, WelfareOptimum};
use crate::market::MarketInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub prices: Vec<f64>,
    pub demand: Vec<f64>,
    pub step: f64,
    pub steps: usize,
    pub flow_solves: usize,
}

const INACTIVE: u8 = 0;
const ACTIVE: u8 = 1;
const DONE: u8 = 2;

pub fn sweep_ascending(
    instance: &MarketInstance,
    optimum: &WelfareOptimum,
    cfg: &AscendConfig,
    step: f64,
) -> Result<SweepReport, OracleError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid("step", format!("must be positive, got {step}")));
    }
    let nb = instance.num_buyers();
    let nt = instance.num_items();
    let edges = instance.edges();
    let target = cfg.target;
    let scale = target.abs().max(1.0);
    let tol = 1e-9 * scale;
    let slack = 1e-10 * scale;

    let item_start = optimum.prices.clone();
    let buyer_start: Vec<f64> = (0..nb)
        .map(|i| instance.buyer_edges(i).iter().map(|&k| item_start[edges[k].item]).fold(f64::INFINITY, f64::min))
        .collect();
    let mut item_state = vec![INACTIVE; nt];
    let mut buyer_state = vec![INACTIVE; nb];
    let mut prices = item_start.clone();
    let mut demand = vec![0.0; nb];
    for t in 0..nt {
        if item_start[t] >= target - tol {
            item_state[t] = DONE;
        }
    }
    for i in 0..nb {
        if buyer_start[i] >= target - tol {
            buyer_state[i] = DONE;
            demand[i] = optimum.demand[i];
        }
    }
    let Some(p0) = (0..nt).filter(|&t| item_state[t] != DONE).map(|t| item_start[t]).min_by(f64::total_cmp) else {
        return Ok(SweepReport { prices, demand, step, steps: 0, flow_solves: 0 });
    };

    let mut steps = 0;
    let mut flow_solves = 0;
    let mut n = 0u64;
    loop {
        let p = (p0 + n as f64 * step).min(target);
        steps += 1;
        for t in 0..nt {
            if item_state[t] == INACTIVE && item_start[t] <= p + tol {
                item_state[t] = ACTIVE;
            }
        }
        for i in 0..nb {
            if buyer_state[i] == INACTIVE && buyer_start[i] <= p + tol {
                buyer_state[i] = ACTIVE;
            }
        }
        let at_target = p >= target;
        while item_state.contains(&ACTIVE) {
            let x: Vec<f64> = (0..nb)
                .map(|i| if buyer_state[i] == ACTIVE { instance.buyers()[i].demand.inverse(p) } else { 0.0 })
                .collect();
            let mask: Vec<bool> = edges.iter().map(|e| buyer_state[e.buyer] == ACTIVE && item_state[e.item] == ACTIVE).collect();
            let flow = min_cost_flow_masked(instance, &x, Some(&mask), cfg.solver_tol)?;
            flow_solves += 1;
            let mut item_in: Vec<bool> =
                (0..nt).map(|t| item_state[t] == ACTIVE && (at_target || cfg.gap(p, flow.marginals[t]) >= -slack)).collect();
            if !item_in.contains(&true) {
                break;
            }
            let mut buyer_in = vec![false; nb];
            let mut changed = true;
            while changed {
                changed = false;
                for (k, e) in edges.iter().enumerate() {
                    if buyer_state[e.buyer] != ACTIVE {
                        continue;
                    }
                    if item_in[e.item] && !buyer_in[e.buyer] {
                        buyer_in[e.buyer] = true;
                        changed = true;
                    }
                    let used = flow.allocation.flows[k] > 1e-12 * x[e.buyer].max(1.0);
                    if buyer_in[e.buyer] && used && item_state[e.item] == ACTIVE && !item_in[e.item] {
                        item_in[e.item] = true;
                        changed = true;
                    }
                }
            }
            for t in 0..nt {
                if item_in[t] {
                    item_state[t] = DONE;
                    prices[t] = p;
                }
            }
            for i in 0..nb {
                if buyer_in[i] {
                    buyer_state[i] = DONE;
                    demand[i] = x[i];
                }
            }
        }
        if at_target || !item_state.iter().any(|&s| s != DONE) {
            break;
        }
        n += 1;
    }
    Ok(SweepReport { prices, demand, step, steps, flow_solves })
}
