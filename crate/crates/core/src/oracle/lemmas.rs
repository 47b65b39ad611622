//! Numeric checks of the structural facts the algorithms rely on: monotone responses to price
//! increases, cost splitting between buyer subsets, continuity in the common price, and the
//! quantitative MHR inequalities.
//!
//! Each property reports a signed slack that is non-negative when it holds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{invalid, OracleError};
use crate::flow::{envy_free_outcome, kkt_violation, min_cost_flow, welfare_opt, FlowResult};
use crate::functions::{mhr_on_grid, DemandFn};
use crate::market::MarketInstance;
use crate::oracle::grid::ascent_lower_bounds;

const E: f64 = std::f64::consts::E;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaConfig {
    /// Random trials per instance for each market property.
    pub trials: usize,
    pub seed: u64,
    /// Allowed negative slack, relative to the instance's largest peak.
    pub tol: f64,
    /// Grid size for the single-function checks.
    pub grid: usize,
    pub solver_tol: f64,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig { trials: 8, seed: 0, tol: 1e-6, grid: 256, solver_tol: crate::flow::DEFAULT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest slack seen; `None` if no trial applied.
    pub worst_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub properties: Vec<PropertyReport>,
}

impl SuiteReport {
    pub fn violations(&self) -> usize {
        self.properties.iter().map(|p| p.violations).sum()
    }

    pub fn get(&self, name: &str) -> Option<&PropertyReport> {
        self.properties.iter().find(|p| p.name == name)
    }
}

struct Tally {
    report: PropertyReport,
}

impl Tally {
    fn new(name: &str) -> Self {
        Tally { report: PropertyReport { name: name.into(), trials: 0, violations: 0, worst_slack: None } }
    }

    fn record(&mut self, slack: f64, ok: bool) {
        let r = &mut self.report;
        r.trials += 1;
        if !ok || slack.is_nan() {
            r.violations += 1;
        }
        r.worst_slack = Some(r.worst_slack.map_or(slack, |w| w.min(slack)));
    }

    fn check(&mut self, slack: f64, tol: f64) {
        self.record(slack, slack >= -tol);
    }
}

struct Suite {
    demand_mono: Tally,
    marginal_mono: Tally,
    partition: Tally,
    left_cont: Tally,
    cost_cmp: Tally,
    witness: Tally,
    peak_bound: Tally,
    doubling: Tally,
    revenue_shape: Tally,
    shifted: Tally,
}

/// Runs every property over the market corpus and the function corpus. Buyer demands of the
/// markets are added to the function corpus.
pub fn lemma_suite(instances: &[MarketInstance], functions: &[DemandFn], cfg: &LemmaConfig) -> Result<SuiteReport, OracleError> {
    if instances.is_empty() && functions.is_empty() {
        return Err(invalid("corpus", "nothing to check"));
    }
    let mut s = Suite {
        demand_mono: Tally::new("demand-monotonicity"),
        marginal_mono: Tally::new("marginal-monotonicity"),
        partition: Tally::new("flow-partition"),
        left_cont: Tally::new("left-continuity"),
        cost_cmp: Tally::new("cost-comparison"),
        witness: Tally::new("mixed-price-witness"),
        peak_bound: Tally::new("mhr-peak-bound"),
        doubling: Tally::new("mhr-quantity-doubling"),
        revenue_shape: Tally::new("mhr-revenue-shape"),
        shifted: Tally::new("mhr-shifted"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for inst in instances {
        market_properties(inst, cfg, &mut rng, &mut s)?;
    }
    let mut corpus: Vec<&DemandFn> = functions.iter().collect();
    for inst in instances {
        corpus.extend(inst.buyers().iter().map(|b| &b.demand));
    }
    for f in corpus {
        function_properties(f, cfg, &mut s)?;
    }
    let properties = [
        s.demand_mono,
        s.marginal_mono,
        s.partition,
        s.left_cont,
        s.cost_cmp,
        s.witness,
        s.peak_bound,
        s.doubling,
        s.revenue_shape,
        s.shifted,
    ]
    .into_iter()
    .map(|t| t.report)
    .collect();
    Ok(SuiteReport { properties })
}

fn cheapest(inst: &MarketInstance, prices: &[f64], i: usize) -> f64 {
    inst.cheapest_price(prices, i).unwrap_or(f64::INFINITY)
}

fn market_properties(inst: &MarketInstance, cfg: &LemmaConfig, rng: &mut ChaCha8Rng, s: &mut Suite) -> Result<(), OracleError> {
    let nt = inst.num_items();
    let nb = inst.num_buyers();
    let peak = inst.max_peak();
    let tol = cfg.tol * peak.max(1.0);
    let opt = welfare_opt(inst, cfg.solver_tol)?;
    let flow = |x: &[f64]| -> Result<FlowResult, OracleError> { Ok(min_cost_flow(inst, x, cfg.solver_tol)?) };

    for trial in 0..cfg.trials {
        // higher prices: lower demand and lower marginal costs
        let p2: Vec<f64> = (0..nt).map(|_| rng.gen_range(0.0..1.2 * peak)).collect();
        let p1: Vec<f64> = if trial % 2 == 0 {
            p2.iter().map(|p| 1.1 * p).collect()
        } else {
            p2.iter().map(|p| p + rng.gen_range(0.0..0.2 * peak)).collect()
        };
        let x1 = inst.best_response(&p1)?;
        let x2 = inst.best_response(&p2)?;
        let slack = x1.iter().zip(&x2).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
        s.demand_mono.check(slack, tol);
        let (z1, z2) = (flow(&x1)?, flow(&x2)?);
        let slack = z1.marginals.iter().zip(&z2.marginals).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
        s.marginal_mono.check(slack, tol);

        // flow partition on a random buyer subset
        let x: Vec<f64> = inst.buyers().iter().map(|b| rng.gen_range(0.0..=b.demand.support())).collect();
        let high: Vec<bool> = (0..nb).map(|_| rng.gen_bool(0.5)).collect();
        let xh: Vec<f64> = x.iter().zip(&high).map(|(&v, &h)| if h { v } else { 0.0 }).collect();
        let (y, yh) = (flow(&x)?, flow(&xh)?);
        let mut slack = f64::INFINITY;
        for t in 0..nt {
            let by_load = y.loads[t] - yh.loads[t];
            let by_marginal = -(y.marginals[t] - yh.marginals[t]).abs();
            slack = slack.min(by_load.max(by_marginal));
        }
        let outside: f64 = (0..nb).filter(|&i| !high[i]).map(|i| y.levels[i] * x[i]).sum();
        let linear: f64 = (0..nt).map(|t| y.marginals[t] * (y.loads[t] - yh.loads[t])).sum();
        let exact: f64 = inst.items().iter().enumerate().map(|(t, it)| it.cost.total(y.loads[t]) - it.cost.total(yh.loads[t])).sum();
        slack = slack.min(outside - linear).min(linear - exact);
        s.partition.check(slack, tol);

        // left continuity of marginals in a common price; peaks are the delicate points
        let bar = if trial % 2 == 0 {
            inst.buyers()[rng.gen_range(0..nb)].demand.peak()
        } else {
            rng.gen_range(0.0..=peak)
        };
        let at = |p: f64| -> Result<Vec<f64>, OracleError> {
            let x: Vec<f64> = inst.buyers().iter().map(|b| b.demand.inverse(p)).collect();
            Ok(flow(&x)?.marginals)
        };
        let base = at(bar)?;
        let near = at(bar - 1e-9 * peak.max(1.0))?;
        let gap = base.iter().zip(&near).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        s.left_cont.check(-gap, tol);

        // profit at the lower prices beats repricing the larger-price demand at them
        let q1: Vec<f64> = opt.prices.iter().map(|p| p + rng.gen_range(0.0..0.3 * peak)).collect();
        let q2: Vec<f64> = q1.iter().map(|p| p + rng.gen_range(0.0..0.3 * peak)).collect();
        let (w1, w2) = (inst.best_response(&q1)?, inst.best_response(&q2)?);
        let (f1, f2) = (flow(&w1)?, flow(&w2)?);
        let priced = |q: &[f64], f: &FlowResult| (0..nt).all(|t| q[t] >= f.marginals[t] - 1e-12 * peak.max(1.0));
        if priced(&q1, &f1) && priced(&q2, &f2) {
            let lhs: f64 = (0..nb).map(|i| cheapest(inst, &q1, i) * w1[i]).sum::<f64>() - f1.cost;
            let rhs: f64 = (0..nb).map(|i| cheapest(inst, &q1, i) * w2[i]).sum::<f64>() - f2.cost;
            s.cost_cmp.check(lhs - rhs, tol);
        }

        // some item that got cheaper runs at a marginal at least as high
        let (r1, d1, a1) = if trial % 2 == 0 {
            (opt.prices.clone(), opt.demand.clone(), opt.allocation.clone())
        } else {
            let prices = ascent_lower_bounds(inst, cfg.solver_tol)?;
            let sol = envy_free_outcome(inst, &prices, cfg.solver_tol)?;
            (sol.prices, sol.demand, sol.allocation)
        };
        if kkt_violation(inst, &d1, &a1)? <= 1e-7 * peak.max(1.0) {
            let mut r2: Vec<f64> = r1.iter().map(|p| p * rng.gen_range(0.5..1.1)).collect();
            let forced = rng.gen_range(0..nt);
            r2[forced] = r2[forced].min(0.9 * r1[forced]);
            if r2[forced] < r1[forced] {
                let sol2 = envy_free_outcome(inst, &r2, cfg.solver_tol)?;
                let l1 = inst.loads(&a1);
                let l2 = inst.loads(&sol2.allocation);
                let slack = (0..nt)
                    .filter(|&t| r1[t] > r2[t])
                    .map(|t| {
                        let c = &inst.items()[t].cost;
                        c.marginal(l2[t]) - c.marginal(l1[t])
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                s.witness.check(slack, tol);
            }
        }
    }
    Ok(())
}

fn function_properties(f: &DemandFn, cfg: &LemmaConfig, s: &mut Suite) -> Result<(), OracleError> {
    let n = cfg.grid.max(2);
    let t = f.support();
    let f0 = f.peak();
    let tol = cfg.tol;
    let at = |j: usize| t * (j as f64 + 0.5) / n as f64;

    // a point whose value-to-slope ratio exceeds it sits within a factor e of the peak
    for j in 0..n {
        let x = at(j);
        let (v, d) = (f.value(x), f.derivative(x).abs());
        if v > 0.0 && x * d < v {
            s.peak_bound.check((E * v - f0) / f0, tol);
        }
    }

    // quantities at values f0/√e and f0/e
    let v1 = f0 / E.sqrt();
    if f.floor() < v1 && f.derivative(0.0) != 0.0 {
        let x1 = f.inverse(v1);
        let x2 = f.inverse(f0 / E);
        s.doubling.check((2.0 * x1 - x2) / t, tol);
    }

    // x f(x) falls to the right of a point with hazard ≥ 1/x, rises to the left of one with hazard ≤ 1/x
    let m = n.min(64);
    let pts: Vec<(f64, f64, f64)> = (0..m)
        .map(|j| {
            let x = t * (j as f64 + 0.5) / m as f64;
            let v = f.value(x);
            (x, v, f.derivative(x).abs())
        })
        .collect();
    let norm = f0 * t;
    for a in 0..m {
        for b in a + 1..m {
            let (x1, v1, d1) = pts[a];
            let (x2, v2, d2) = pts[b];
            if d1 * x1 >= v1 {
                s.revenue_shape.check((x1 * v1 - x2 * v2) / norm, tol);
            }
            if d2 * x2 <= v2 {
                s.revenue_shape.check((x2 * v2 - x1 * v1) / norm, tol);
            }
        }
    }

    // subtracting a non-decreasing function keeps the hazard monotone where the difference is positive
    for a in [0.1, 0.3, 0.6] {
        let c = a * f0;
        let cert = mhr_on_grid(n, t, |x| (f.value(x) - c, f.derivative(x)))?;
        s.shifted.record(-cert.worst_violation, cert.passes);
        let slope = c / t;
        let cert = mhr_on_grid(n, t, |x| (f.value(x) - slope * x, f.derivative(x) - slope))?;
        s.shifted.record(-cert.worst_violation, cert.passes);
    }
    Ok(())
}
