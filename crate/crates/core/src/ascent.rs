//! Ascending-price engine.
//!
//! Prices start at the welfare-supporting vector and rise uniformly on the set of active items.
//! An item stops once its price margin over marginal cost reaches a `1/k` share of the margin
//! at the target valuation. Stop prices are located by a bracketing search between the activation
//! boundaries, so the number of flow solves grows with `log(1/ε)` rather than `1/ε`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{min_cost_flow_masked, FlowError, WelfareOptimum};
use crate::market::{Allocation, MarketError, MarketInstance, Solution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AscendError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("buyer `{buyer}` peaks at {peak}, but uniform-peak mode needs every peak at {target}")]
    NonUniformPeaks { buyer: String, peak: f64, target: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Which valuation the stopping rule measures margins against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopMode {
    /// All peaks coincide; the target is that common peak.
    UniformPeak,
    /// The target is the smallest peak; items already priced above it never move.
    Generalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscendConfig {
    pub k: f64,
    pub target: f64,
    /// Bracket width for stop prices.
    pub epsilon: f64,
    pub solver_tol: f64,
    pub mode: StopMode,
}

impl AscendConfig {
    pub fn uniform_peak(instance: &MarketInstance, k: f64) -> Result<Self, AscendError> {
        let target = instance.max_peak();
        for b in instance.buyers() {
            let peak = b.demand.peak();
            if (target - peak).abs() > 1e-7 * target.max(1.0) {
                return Err(AscendError::NonUniformPeaks { buyer: b.id.clone(), peak, target });
            }
        }
        Self::build(k, target, StopMode::UniformPeak)
    }

    pub fn generalized(instance: &MarketInstance, k: f64) -> Result<Self, AscendError> {
        Self::build(k, instance.min_peak(), StopMode::Generalized)
    }

    fn build(k: f64, target: f64, mode: StopMode) -> Result<Self, AscendError> {
        if !(k.is_finite() && k >= 1.0) {
            return Err(AscendError::InvalidParameter { field: "k", reason: format!("must be a finite value >= 1, got {k}") });
        }
        Ok(AscendConfig { k, target, epsilon: 1e-6 * target.max(f64::MIN_POSITIVE), solver_tol: crate::flow::DEFAULT_TOL, mode })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// `p - λ/k - (1 - 1/k) c`; non-negative exactly when the stopping rule holds.
    pub fn gap(&self, price: f64, marginal: f64) -> f64 {
        price - self.target / self.k - (1.0 - 1.0 / self.k) * marginal
    }
}

/// `p - c >= (λ_target - c)/k - ε`.
pub fn stopping_criterion(price: f64, marginal: f64, k: f64, target: f64, epsilon: f64) -> bool {
    price - marginal >= (target - marginal) / k - epsilon
}

/// The price at which the stopping rule holds with equality for a fixed marginal.
pub fn stop_price(marginal: f64, k: f64, target: f64) -> f64 {
    (target + (k - 1.0) * marginal) / k
}

/// Sorted distinct welfare prices below the target, followed by the target.
pub fn boundary_prices(p_star: &[f64], target: f64, tol: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = p_star.iter().copied().filter(|p| p.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for p in sorted {
        if p >= target - tol {
            break;
        }
        if out.last().is_none_or(|&q| p - q > tol) {
            out.push(p);
        }
    }
    out.push(target);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    Item,
    Buyer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transition {
    Activated,
    Finished,
    /// Never activated; keeps its welfare-optimal price and allocation.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub price: f64,
    pub kind: EntityKind,
    pub id: String,
    pub transition: Transition,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AscendTrace {
    pub events: Vec<TraceEvent>,
    pub boundaries: Vec<f64>,
    pub flow_solves: usize,
}

impl AscendTrace {
    /// One JSON object per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_ndjson(text: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
    }

    /// Number of flow solves allowed by the bracketing search.
    pub fn solve_budget(&self, items: usize, min_start: f64, target: f64, epsilon: f64) -> usize {
        let span = ((target - min_start) / epsilon).max(1.0);
        self.boundaries.len() + items * span.log2().ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscendOutcome {
    pub solution: Solution,
    pub trace: AscendTrace,
    /// Stopping-rule gap of each item when it finished; `None` for frozen items.
    pub finish_gaps: Vec<Option<f64>>,
}

/// Snapshot of the active market at one price.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub price: f64,
    pub demand: Vec<f64>,
    pub flows: Vec<f64>,
    pub marginals: Vec<f64>,
    /// Stopping-rule gap per item; `-inf` for items that are not active.
    pub gaps: Vec<f64>,
    pub worst: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Inactive,
    Active,
    Done,
}

/// Stateful ascending auction over one market.
pub struct Ascent<'a> {
    instance: &'a MarketInstance,
    optimum: &'a WelfareOptimum,
    cfg: AscendConfig,
    item_status: Vec<Status>,
    buyer_status: Vec<Status>,
    item_start: Vec<f64>,
    buyer_start: Vec<f64>,
    prices: Vec<f64>,
    demand: Vec<f64>,
    flows: Vec<f64>,
    finish_gaps: Vec<Option<f64>>,
    trace: AscendTrace,
    diagnostics: Vec<String>,
    slack: f64,
    group_tol: f64,
}

const EXTRA_STEPS: i32 = 4;

impl<'a> Ascent<'a> {
    pub fn new(instance: &'a MarketInstance, optimum: &'a WelfareOptimum, cfg: AscendConfig) -> Result<Self, AscendError> {
        if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
            return Err(AscendError::InvalidParameter { field: "epsilon", reason: format!("must be positive, got {}", cfg.epsilon) });
        }
        if optimum.prices.len() != instance.num_items() || optimum.demand.len() != instance.num_buyers() {
            return Err(MarketError::LengthMismatch { what: "welfare optimum", expected: instance.num_items(), got: optimum.prices.len() }.into());
        }
        let scale = cfg.target.abs().max(1.0);
        let group_tol = 1e-9 * scale;
        let boundaries = boundary_prices(&optimum.prices, cfg.target, group_tol);
        // snap each item onto the boundary value of its group
        let item_start: Vec<f64> = optimum
            .prices
            .iter()
            .map(|&p| {
                boundaries
                    .iter()
                    .copied()
                    .find(|&b| p >= b - group_tol && p <= b + group_tol)
                    .unwrap_or(p)
            })
            .collect();
        let buyer_start: Vec<f64> = (0..instance.num_buyers())
            .map(|i| instance.cheapest(&item_start, i))
            .collect();
        let trace = AscendTrace { boundaries, ..Default::default() };
        Ok(Ascent {
            instance,
            optimum,
            cfg,
            item_status: vec![Status::Inactive; instance.num_items()],
            buyer_status: vec![Status::Inactive; instance.num_buyers()],
            item_start,
            buyer_start,
            prices: optimum.prices.clone(),
            demand: vec![0.0; instance.num_buyers()],
            flows: vec![0.0; instance.edges().len()],
            finish_gaps: vec![None; instance.num_items()],
            trace,
            diagnostics: Vec::new(),
            slack: 1e-10 * scale,
            group_tol,
        })
    }

    pub fn config(&self) -> &AscendConfig {
        &self.cfg
    }

    pub fn item_status(&self) -> &[Status] {
        &self.item_status
    }

    pub fn buyer_status(&self) -> &[Status] {
        &self.buyer_status
    }

    pub fn flow_solves(&self) -> usize {
        self.trace.flow_solves
    }

    fn event(&mut self, price: f64, kind: EntityKind, index: usize, transition: Transition) {
        let id = match kind {
            EntityKind::Item => self.instance.items()[index].id.clone(),
            EntityKind::Buyer => self.instance.buyers()[index].id.clone(),
        };
        self.trace.events.push(TraceEvent { price, kind, id, transition });
    }

    fn freeze(&mut self) {
        let target = self.cfg.target;
        for t in 0..self.instance.num_items() {
            if self.item_start[t] >= target - self.group_tol {
                self.item_status[t] = Status::Done;
                self.prices[t] = self.optimum.prices[t];
                if self.cfg.mode == StopMode::UniformPeak {
                    self.diagnostics.push(format!(
                        "item `{}` has welfare price {} at or above the common peak; left at that price",
                        self.instance.items()[t].id, self.optimum.prices[t]
                    ));
                }
                self.event(self.optimum.prices[t], EntityKind::Item, t, Transition::Frozen);
            }
        }
        for i in 0..self.instance.num_buyers() {
            if self.buyer_start[i] >= target - self.group_tol {
                self.buyer_status[i] = Status::Done;
                self.demand[i] = self.optimum.demand[i];
                for &k in self.instance.buyer_edges(i) {
                    self.flows[k] = self.optimum.allocation.flows[k];
                }
                self.event(self.buyer_start[i], EntityKind::Buyer, i, Transition::Frozen);
            }
        }
    }

    /// Activates every inactive item and buyer whose starting price is at most `price`.
    pub fn activate_up_to(&mut self, price: f64) {
        for t in 0..self.instance.num_items() {
            if self.item_status[t] == Status::Inactive && self.item_start[t] <= price + self.group_tol {
                self.item_status[t] = Status::Active;
                self.event(price, EntityKind::Item, t, Transition::Activated);
            }
        }
        for i in 0..self.instance.num_buyers() {
            if self.buyer_status[i] == Status::Inactive && self.buyer_start[i] <= price + self.group_tol {
                self.buyer_status[i] = Status::Active;
                self.event(price, EntityKind::Buyer, i, Transition::Activated);
            }
        }
    }

    fn has_active_items(&self) -> bool {
        self.item_status.contains(&Status::Active)
    }

    /// Best responses of active buyers and the cheapest routing through active items at `price`.
    pub fn probe(&mut self, price: f64) -> Result<Probe, AscendError> {
        let inst = self.instance;
        let demand: Vec<f64> = (0..inst.num_buyers())
            .map(|i| if self.buyer_status[i] == Status::Active { inst.buyers()[i].demand.inverse(price) } else { 0.0 })
            .collect();
        let mask: Vec<bool> = inst
            .edges()
            .iter()
            .map(|e| self.buyer_status[e.buyer] == Status::Active && self.item_status[e.item] == Status::Active)
            .collect();
        let r = min_cost_flow_masked(inst, &demand, Some(&mask), self.cfg.solver_tol)?;
        self.trace.flow_solves += 1;
        let gaps: Vec<f64> = (0..inst.num_items())
            .map(|t| if self.item_status[t] == Status::Active { self.cfg.gap(price, r.marginals[t]) } else { f64::NEG_INFINITY })
            .collect();
        let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Probe { price, demand, flows: r.allocation.flows, marginals: r.marginals, gaps, worst })
    }

    /// Smallest price in `[lo, hi]` at which some active item meets the stopping rule, given a
    /// probe at `hi` where one does. Returns the price together with the probe taken there.
    ///
    /// The worst gap is non-decreasing in the price, so the root is bracketed throughout. Steps
    /// interpolate when that stays within one probe of plain bisection (the ITP scheme), and the
    /// search ends once the gap at the right end is below `ε/2`, or below `ε` in an `ε` bracket.
    pub fn find_stop_price(&mut self, lo: f64, hi: f64, at_hi: Probe) -> Result<(f64, Probe), AscendError> {
        let slack = self.slack;
        let eps = self.cfg.epsilon;
        let (mut a, mut b) = (lo, hi);
        let mut pb = at_hi;
        let mut fa: Option<f64> = None;
        let mut fb = pb.worst + slack;
        let half = 0.5 * eps;
        let n_max = ((b - a) / eps).max(1.0).log2().ceil() as i32 + 1;
        let k1 = 0.2 / (b - a).max(f64::MIN_POSITIVE);
        let mut j = 0;
        // a steep gap can leave the right end above ε even in a narrow bracket; a few extra
        // interpolation steps close it
        while ((b - a > eps && fb > half) || fb > eps) && j < n_max + EXTRA_STEPS {
            let mid = 0.5 * (a + b);
            let x = match fa {
                Some(ya) => {
                    let r = (half * 2f64.powi(n_max - j) - 0.5 * (b - a)).max(0.0);
                    let falsi = (b * ya - a * fb) / (ya - fb);
                    let sigma = (mid - falsi).signum();
                    let delta = k1 * (b - a) * (b - a);
                    let t = if delta <= (mid - falsi).abs() { falsi + sigma * delta } else { mid };
                    if (t - mid).abs() <= r { t } else { mid - sigma * r }
                }
                None => mid,
            };
            let px = self.probe(x)?;
            let fx = px.worst + slack;
            if fx >= 0.0 {
                b = x;
                fb = fx;
                pb = px;
            } else {
                a = x;
                fa = Some(fx);
            }
            j += 1;
        }
        if fa.is_none() && fb > half && b > lo {
            // the stop may sit at `lo` itself, e.g. right after an activation
            let pa = self.probe(lo)?;
            if pa.worst >= -slack {
                return Ok((lo, pa));
            }
        }
        Ok((b, pb))
    }

    /// Finishes every item meeting the rule at `probe`, plus the closure under shared buyers.
    fn finish(&mut self, probe: &Probe, force_all: bool) {
        let inst = self.instance;
        let mut item_in: Vec<bool> = (0..inst.num_items())
            .map(|t| self.item_status[t] == Status::Active && (force_all || probe.gaps[t] >= -self.slack))
            .collect();
        let mut buyer_in = vec![false; inst.num_buyers()];
        loop {
            let mut changed = false;
            for (k, e) in inst.edges().iter().enumerate() {
                if self.buyer_status[e.buyer] != Status::Active {
                    continue;
                }
                if item_in[e.item] && !buyer_in[e.buyer] {
                    buyer_in[e.buyer] = true;
                    changed = true;
                }
                let used = probe.flows[k] > 1e-12 * probe.demand[e.buyer].max(1.0);
                if buyer_in[e.buyer] && used && !item_in[e.item] && self.item_status[e.item] == Status::Active {
                    item_in[e.item] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let p = probe.price;
        for t in 0..inst.num_items() {
            if item_in[t] {
                self.item_status[t] = Status::Done;
                self.prices[t] = p;
                self.finish_gaps[t] = Some(probe.gaps[t]);
                if !force_all && probe.gaps[t] < -self.slack {
                    self.diagnostics.push(format!(
                        "item `{}` finished with its buyers at {p} while its stopping gap was {}",
                        inst.items()[t].id, probe.gaps[t]
                    ));
                }
                self.event(p, EntityKind::Item, t, Transition::Finished);
            }
        }
        for i in 0..inst.num_buyers() {
            if buyer_in[i] {
                self.buyer_status[i] = Status::Done;
                self.demand[i] = probe.demand[i];
                for &k in inst.buyer_edges(i) {
                    self.flows[k] = probe.flows[k];
                }
                self.event(p, EntityKind::Buyer, i, Transition::Finished);
            }
        }
    }

    /// Resolves all stops in `(lo, hi]`; stops exactly at `hi` wait for activations there
    /// unless `closing` is set.
    fn process_stops(&mut self, lo: f64, hi: f64, closing: bool) -> Result<(), AscendError> {
        let mut lo = lo;
        while self.has_active_items() {
            let at_hi = self.probe(hi)?;
            if at_hi.worst < -self.slack {
                return Ok(());
            }
            let (p, probe) = self.find_stop_price(lo, hi, at_hi)?;
            if !closing && p >= hi - self.group_tol {
                return Ok(());
            }
            self.finish(&probe, false);
            lo = p;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<AscendOutcome, AscendError> {
        self.freeze();
        let boundaries = self.trace.boundaries.clone();
        let last = boundaries.len() - 1;
        for (j, &b) in boundaries.iter().enumerate() {
            if j > 0 {
                self.process_stops(boundaries[j - 1], b, j == last)?;
            }
            if j < last {
                self.activate_up_to(b);
            }
        }
        if self.has_active_items() {
            let probe = self.probe(self.cfg.target)?;
            self.diagnostics.push("items still active at the target price were stopped there".into());
            self.finish(&probe, true);
        }
        let solution = Solution {
            prices: self.prices,
            demand: self.demand,
            allocation: Allocation { flows: self.flows },
            diagnostics: self.diagnostics,
        };
        Ok(AscendOutcome { solution, trace: self.trace, finish_gaps: self.finish_gaps })
    }
}

/// Runs the ascending auction from the welfare optimum.
pub fn run_ascending(instance: &MarketInstance, optimum: &WelfareOptimum, cfg: AscendConfig) -> Result<AscendOutcome, AscendError> {
    Ascent::new(instance, optimum, cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{welfare_opt, DEFAULT_TOL};
    use crate::functions::{CostFn, DemandFn};
    use crate::market::{BuyerType, Item};

    const E: f64 = std::f64::consts::E;

    fn market(buyers: Vec<DemandFn>, items: Vec<CostFn>, pairs: &[(usize, usize)]) -> MarketInstance {
        MarketInstance::from_pairs(
            buyers.into_iter().enumerate().map(|(i, demand)| BuyerType { id: format!("b{i}"), demand }).collect(),
            items.into_iter().enumerate().map(|(t, cost)| Item { id: format!("t{t}"), cost }).collect(),
            pairs,
        )
        .unwrap()
    }

    #[test]
    fn criterion_examples() {
        assert!(!stopping_criterion(0.36, 0.0, E, 1.0, 0.0));
        assert!(stopping_criterion(0.37, 0.0, E, 1.0, 0.0));
        assert!((stop_price(0.5, E, 1.0) - 0.6839397).abs() < 1e-7);
        assert!(stopping_criterion(stop_price(0.5, E, 1.0), 0.5, E, 1.0, 1e-12));
    }

    #[test]
    fn boundaries_are_sorted_and_unique() {
        assert_eq!(boundary_prices(&[0.2, 0.5, 0.2], 1.0, 1e-9), vec![0.2, 0.5, 1.0]);
        assert_eq!(boundary_prices(&[1.2, 0.3], 1.0, 1e-9), vec![0.3, 1.0]);
    }

    #[test]
    fn single_linear_buyer_prices() {
        let m = market(vec![DemandFn::linear(1.0, 1.0, 1.0).unwrap()], vec![CostFn::zero()], &[(0, 0)]);
        let opt = welfare_opt(&m, DEFAULT_TOL).unwrap();
        for (k, price, revenue) in [(E, 0.36788, 0.23254), (E.sqrt(), 0.60653, 0.23865)] {
            let cfg = AscendConfig::uniform_peak(&m, k).unwrap();
            let out = run_ascending(&m, &opt, cfg).unwrap();
            assert!((out.solution.prices[0] - price).abs() < 1e-5, "k={k}: {}", out.solution.prices[0]);
            assert!((out.solution.revenue(&m).unwrap() - revenue).abs() < 1e-5);
        }
    }

    #[test]
    fn uniform_peak_mode_rejects_mixed_peaks() {
        let m = market(
            vec![DemandFn::linear(1.0, 1.0, 1.0).unwrap(), DemandFn::linear(2.0, 1.0, 1.0).unwrap()],
            vec![CostFn::zero()],
            &[(0, 0), (1, 0)],
        );
        assert!(matches!(AscendConfig::uniform_peak(&m, E), Err(AscendError::NonUniformPeaks { .. })));
        assert!(AscendConfig::generalized(&m, E).is_ok());
    }

    #[test]
    fn trace_round_trips_as_ndjson() {
        let m = market(vec![DemandFn::linear(1.0, 1.0, 1.0).unwrap()], vec![CostFn::zero()], &[(0, 0)]);
        let opt = welfare_opt(&m, DEFAULT_TOL).unwrap();
        let out = run_ascending(&m, &opt, AscendConfig::uniform_peak(&m, E).unwrap()).unwrap();
        let text = out.trace.to_ndjson();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(AscendTrace::parse_ndjson(&text).unwrap(), out.trace.events);
    }
}
