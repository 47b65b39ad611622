//! Exhaustive search for the revenue-optimal envy-free price vector on a product grid.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{invalid, OracleError};
use crate::ascent::{run_ascending, AscendConfig};
use crate::flow::{revenue_best_outcome, welfare_opt, DEFAULT_TOL};
use crate::market::{MarketInstance, PriceVector};

const E: f64 = std::f64::consts::E;

fn default_step() -> f64 {
    1e-3
}

fn default_budget() -> u64 {
    10_000_000
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_step")]
    pub step: f64,
    /// Largest number of price tuples the oracle may evaluate.
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { step: default_step(), budget: default_budget(), solver_tol: default_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemGrid {
    pub item: String,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub prices: PriceVector,
    pub revenue: f64,
    pub grids: Vec<ItemGrid>,
    pub step: f64,
    pub evaluations: u64,
    /// How far the true optimum over the box may exceed `revenue`: `step · Σ_i T_i`.
    pub resolution_slack: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// `lower`, every multiple of `step` strictly inside `(lower, upper)`, then `upper`.
fn axis(lower: f64, upper: f64, step: f64) -> Vec<f64> {
    let mut out = vec![lower];
    if upper <= lower {
        return out;
    }
    let guard = 1e-12 * upper.abs().max(1.0);
    let mut j = (lower / step).floor() as i64 + 1;
    loop {
        let p = j as f64 * step;
        if p >= upper - guard {
            break;
        }
        if p > lower + guard {
            out.push(p);
        }
        j += 1;
    }
    out.push(upper);
    out
}

struct Evaluator<'a> {
    instance: &'a MarketInstance,
    tol: f64,
}

impl Evaluator<'_> {
    /// Best envy-free revenue at `prices`; ties between cheapest items and plateau demand go
    /// through the flow solver.
    fn revenue(&self, prices: &[f64]) -> f64 {
        let inst = self.instance;
        let mut loads = vec![0.0; inst.num_items()];
        // (item, price) of buyers sitting on a demand plateau
        let mut plateaus = Vec::new();
        for (i, b) in inst.buyers().iter().enumerate() {
            let edges = inst.buyer_edges(i);
            let cheapest = edges.iter().map(|&k| prices[inst.edges()[k].item]).fold(f64::INFINITY, f64::min);
            let band = 1e-9 * cheapest.abs().max(1.0);
            let x = b.demand.inverse(cheapest - band);
            let on_plateau = x - b.demand.inverse(cheapest + band) > 1e-6 * b.demand.support();
            let x = if on_plateau { x } else { b.demand.inverse(cheapest) };
            if x <= 0.0 {
                continue;
            }
            let cut = cheapest + 1e-12 * cheapest.abs().max(1.0);
            let mut tight = edges.iter().map(|&k| inst.edges()[k].item).filter(|&t| prices[t] <= cut);
            let first = tight.next();
            match (first, tight.next()) {
                (Some(t), None) => {
                    loads[t] += x;
                    if on_plateau {
                        plateaus.push((t, cheapest));
                    }
                }
                _ => return self.slow(prices),
            }
        }
        // selling the whole plateau is optimal unless it pushes marginal cost above the price
        if plateaus.iter().any(|&(t, p)| inst.items()[t].cost.marginal(loads[t]) > p) {
            return self.slow(prices);
        }
        inst.items()
            .iter()
            .zip(&loads)
            .zip(prices)
            .map(|((it, &y), &p)| p * y - it.cost.total(y))
            .sum()
    }

    fn slow(&self, prices: &[f64]) -> f64 {
        revenue_best_outcome(self.instance, prices, self.tol)
            .ok()
            .and_then(|s| s.revenue(self.instance).ok())
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Best envy-free revenue over the grid spanned by `[lower_t, max peak of t's buyers]` per item.
pub fn grid_opt_revenue(instance: &MarketInstance, lower: &[f64], cfg: &OracleConfig) -> Result<OracleReport, OracleError> {
    let started = Instant::now();
    let nt = instance.num_items();
    if lower.len() != nt {
        return Err(invalid("lower", format!("expected {nt} bounds, got {}", lower.len())));
    }
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(invalid("step", format!("must be positive, got {}", cfg.step)));
    }
    let mut axes = Vec::with_capacity(nt);
    let mut grids = Vec::with_capacity(nt);
    for (t, item) in instance.items().iter().enumerate() {
        if !lower[t].is_finite() {
            return Err(invalid("lower", format!("bound for `{}` is not finite", item.id)));
        }
        let upper = instance
            .item_edges(t)
            .iter()
            .map(|&k| instance.buyers()[instance.edges()[k].buyer].demand.peak())
            .fold(lower[t], f64::max);
        let a = axis(lower[t], upper, cfg.step);
        grids.push(ItemGrid { item: item.id.clone(), lower: lower[t], upper, points: a.len() });
        axes.push(a);
    }
    let required: f64 = axes.iter().map(|a| a.len() as f64).product();
    if required > cfg.budget as f64 {
        return Err(OracleError::BudgetExceeded { required, budget: cfg.budget as f64 });
    }
    let eval = Evaluator { instance, tol: cfg.solver_tol };
    let rest = &axes[1..];
    let per_slice: Vec<(f64, Vec<usize>)> = (0..axes[0].len())
        .into_par_iter()
        .map(|i0| {
            let mut idx = vec![0usize; nt];
            idx[0] = i0;
            let mut prices: Vec<f64> = idx.iter().zip(&axes).map(|(&j, a)| a[j]).collect();
            let mut best = (f64::NEG_INFINITY, idx.clone());
            loop {
                let r = eval.revenue(&prices);
                if r > best.0 {
                    best = (r, idx.clone());
                }
                // odometer over items 1.., last item fastest
                let mut d = nt;
                loop {
                    if d == 1 {
                        return best;
                    }
                    d -= 1;
                    idx[d] += 1;
                    if idx[d] < rest[d - 1].len() {
                        prices[d] = rest[d - 1][idx[d]];
                        break;
                    }
                    idx[d] = 0;
                    prices[d] = rest[d - 1][0];
                }
            }
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, vec![0usize; nt]);
    for cand in per_slice {
        if cand.0 > best.0 {
            best = cand;
        }
    }
    if !best.0.is_finite() {
        return Err(invalid("instance", "no grid point admits a feasible envy-free allocation"));
    }
    let prices = best.1.iter().zip(&axes).map(|(&j, a)| a[j]).collect();
    Ok(OracleReport {
        prices,
        revenue: best.0,
        grids,
        step: cfg.step,
        evaluations: required as u64,
        resolution_slack: cfg.step * instance.total_mass(),
        wall_time: started.elapsed(),
    })
}

/// Lower bounds from the `k = e` ascent, in uniform-peak mode when the peaks allow it.
pub fn ascent_lower_bounds(instance: &MarketInstance, tol: f64) -> Result<PriceVector, OracleError> {
    let opt = welfare_opt(instance, tol)?;
    let base = if instance.has_uniform_peak(1e-7) {
        AscendConfig::uniform_peak(instance, E)?
    } else {
        AscendConfig::generalized(instance, E)?
    };
    let eps = 1e-6 * base.target.abs().max(f64::MIN_POSITIVE);
    let cfg = AscendConfig { solver_tol: tol, ..base.with_epsilon(eps) };
    Ok(run_ascending(instance, &opt, cfg)?.solution.prices)
}

/// [`grid_opt_revenue`] with the box anchored at the `k = e` ascent prices.
pub fn grid_opt_revenue_auto(instance: &MarketInstance, cfg: &OracleConfig) -> Result<OracleReport, OracleError> {
    let lower = ascent_lower_bounds(instance, cfg.solver_tol)?;
    grid_opt_revenue(instance, &lower, cfg)
}
