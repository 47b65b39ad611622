//! Pricing algorithms built on the ascending engine, with their guarantee reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ascent::{run_ascending, AscendConfig, AscendError, AscendTrace, StopMode};
use crate::flow::{envy_free_outcome, welfare_opt, FlowError, WelfareOptimum};
use crate::market::{MarketError, MarketInstance, PriceVector, Solution};

const E: f64 = std::f64::consts::E;

/// Constant used verbatim in the ladder's welfare-drop bound.
pub const LADDER_CONSTANT: f64 = 4.5;

/// Revenue guarantee of the better of the `k = e` and `k = √e` runs.
pub fn uniform_peak_ratio() -> f64 {
    4.0 * E.sqrt() - 2.0 - E
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("cost of item `{item}` is not doubly convex (c(0) = {floor}, curvature drop {worst})")]
    NotDoublyConvex { item: String, floor: f64, worst: f64 },
    #[error(transparent)]
    Ascend(#[from] AscendError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    /// Stop-price bisection width relative to the target valuation.
    pub epsilon_rel: f64,
    pub solver_tol: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig { epsilon_rel: 1e-6, solver_tol: crate::flow::DEFAULT_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    ApproxUniformPeak,
    BicriteriaE,
    LogDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    /// `k` for ascending runs, the rung index for the ladder.
    pub parameter: f64,
    pub revenue: f64,
    pub welfare: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub algorithm: AlgorithmKind,
    /// Claimed bound on optimal revenue over achieved revenue.
    pub revenue_ratio: f64,
    /// Claimed bound on optimal welfare over achieved welfare, when the algorithm has one.
    pub welfare_ratio: Option<f64>,
    pub revenue: f64,
    pub welfare: f64,
    pub optimal_welfare: f64,
    /// `SW* / SW`.
    pub alpha: f64,
    /// Guaranteed fraction `max(1/e, (α-1)/α)` of optimal revenue.
    pub alpha_bound: f64,
    pub chosen: usize,
    pub candidates: Vec<Candidate>,
    pub delta: Option<f64>,
    pub threshold: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingOutcome {
    pub solution: Solution,
    pub report: GuaranteeReport,
    pub optimum: WelfareOptimum,
    pub traces: Vec<AscendTrace>,
}

fn alpha_of(optimal: f64, achieved: f64) -> (f64, f64) {
    let alpha = if achieved > 0.0 { optimal / achieved } else if optimal > 0.0 { f64::INFINITY } else { 1.0 };
    let bound = if alpha.is_finite() { (1.0 / E).max((alpha - 1.0) / alpha) } else { 1.0 };
    (alpha, bound)
}

fn ascend(
    instance: &MarketInstance,
    optimum: &WelfareOptimum,
    k: f64,
    mode: StopMode,
    cfg: &PricingConfig,
) -> Result<(Solution, AscendTrace), PricingError> {
    let base = match mode {
        StopMode::UniformPeak => AscendConfig::uniform_peak(instance, k)?,
        StopMode::Generalized => AscendConfig::generalized(instance, k)?,
    };
    let eps = cfg.epsilon_rel * base.target.abs().max(f64::MIN_POSITIVE);
    let ac = AscendConfig { solver_tol: cfg.solver_tol, ..base.with_epsilon(eps) };
    let out = run_ascending(instance, optimum, ac)?;
    Ok((out.solution, out.trace))
}

/// Runs `k = e` and `k = √e` in uniform-peak mode and keeps the more profitable outcome.
pub fn approx_revenue_uniform_peak(instance: &MarketInstance, cfg: &PricingConfig) -> Result<PricingOutcome, PricingError> {
    AscendConfig::uniform_peak(instance, E)?;
    let optimum = welfare_opt(instance, cfg.solver_tol)?;
    let mut runs = Vec::new();
    for (label, k) in [("k=e", E), ("k=sqrt(e)", E.sqrt())] {
        let (sol, trace) = ascend(instance, &optimum, k, StopMode::UniformPeak, cfg)?;
        let revenue = sol.revenue(instance)?;
        let welfare = sol.welfare(instance)?;
        runs.push((Candidate { label: label.into(), parameter: k, revenue, welfare }, sol, trace));
    }
    let chosen = if runs[1].0.revenue > runs[0].0.revenue { 1 } else { 0 };
    let (alpha, alpha_bound) = alpha_of(optimum.welfare, runs[chosen].0.welfare);
    let report = GuaranteeReport {
        algorithm: AlgorithmKind::ApproxUniformPeak,
        revenue_ratio: uniform_peak_ratio(),
        welfare_ratio: None,
        revenue: runs[chosen].0.revenue,
        welfare: runs[chosen].0.welfare,
        optimal_welfare: optimum.welfare,
        alpha,
        alpha_bound,
        chosen,
        candidates: runs.iter().map(|r| r.0.clone()).collect(),
        delta: None,
        threshold: None,
        notes: Vec::new(),
    };
    let mut traces = Vec::new();
    let mut solution = None;
    for (j, (_, sol, trace)) in runs.into_iter().enumerate() {
        if j == chosen {
            solution = Some(sol);
        }
        traces.push(trace);
    }
    Ok(PricingOutcome { solution: solution.expect("chosen run exists"), report, optimum, traces })
}

/// The `k = e` outcome, which is simultaneously revenue- and welfare-approximate.
pub fn bicriteria_e(instance: &MarketInstance, cfg: &PricingConfig) -> Result<PricingOutcome, PricingError> {
    let mode = if instance.has_uniform_peak(1e-7) { StopMode::UniformPeak } else { StopMode::Generalized };
    let optimum = welfare_opt(instance, cfg.solver_tol)?;
    let (solution, trace) = ascend(instance, &optimum, E, mode, cfg)?;
    let revenue = solution.revenue(instance)?;
    let welfare = solution.welfare(instance)?;
    let (alpha, alpha_bound) = alpha_of(optimum.welfare, welfare);
    let mut notes = Vec::new();
    if mode == StopMode::Generalized {
        notes.push("peaks differ; stopping rule measured against the smallest peak".into());
    }
    let report = GuaranteeReport {
        algorithm: AlgorithmKind::BicriteriaE,
        revenue_ratio: E,
        welfare_ratio: Some(2.0),
        revenue,
        welfare,
        optimal_welfare: optimum.welfare,
        alpha,
        alpha_bound,
        chosen: 0,
        candidates: vec![Candidate { label: "k=e".into(), parameter: E, revenue, welfare }],
        delta: None,
        threshold: None,
        notes,
    };
    Ok(PricingOutcome { solution, report, optimum, traces: vec![trace] })
}

/// `Δ = λ^max_0 / λ^min_0`.
pub fn compute_delta(instance: &MarketInstance) -> f64 {
    instance.max_peak() / instance.min_peak()
}

/// Number of ladder rungs above the base solution.
pub fn ladder_len(delta: f64) -> usize {
    (delta.ln() - 1e-9).ceil().max(0.0) as usize
}

/// Rung `j` prices `max(p^e_t, e^{j-1} λ^min_0)`; rung 0 is `p^e` itself.
pub fn ladder_prices(p_e: &[f64], lambda_min0: f64, j: usize) -> PriceVector {
    if j == 0 {
        return p_e.to_vec();
    }
    let floor = E.powi(j as i32 - 1) * lambda_min0;
    p_e.iter().map(|&p| p.max(floor)).collect()
}

/// Ladder over price floors for markets with spread-out peaks.
pub fn log_delta_algorithm(instance: &MarketInstance, cfg: &PricingConfig) -> Result<PricingOutcome, PricingError> {
    for t in instance.items() {
        let cert = t.cost.check_doubly_convex(256).map_err(MarketError::from)?;
        if !cert.passes {
            return Err(PricingError::NotDoublyConvex { item: t.id.clone(), floor: cert.floor, worst: cert.worst_violation });
        }
    }
    let optimum = welfare_opt(instance, cfg.solver_tol)?;
    let (base, trace) = ascend(instance, &optimum, E, StopMode::Generalized, cfg)?;
    let delta = compute_delta(instance);
    let lambda_min0 = instance.min_peak();
    let rungs = ladder_len(delta);
    let mut candidates = vec![Candidate {
        label: "j=0".into(),
        parameter: 0.0,
        revenue: base.revenue(instance)?,
        welfare: base.welfare(instance)?,
    }];
    let mut solutions = vec![base];
    for j in 1..=rungs {
        let prices = ladder_prices(&solutions[0].prices, lambda_min0, j);
        let sol = envy_free_outcome(instance, &prices, cfg.solver_tol)?;
        candidates.push(Candidate {
            label: format!("j={j}"),
            parameter: j as f64,
            revenue: sol.revenue(instance)?,
            welfare: sol.welfare(instance)?,
        });
        solutions.push(sol);
    }
    let threshold = 0.5 * candidates[0].welfare / (LADDER_CONSTANT * (1.0 + delta.ln()));
    let mut notes = Vec::new();
    let chosen = match candidates.iter().position(|c| c.revenue >= threshold) {
        Some(j) => j,
        None => {
            notes.push(format!("no rung reaches the revenue threshold {threshold}; returning the base rung"));
            0
        }
    };
    let (alpha, alpha_bound) = alpha_of(optimum.welfare, candidates[chosen].welfare);
    let report = GuaranteeReport {
        algorithm: AlgorithmKind::LogDelta,
        revenue_ratio: 2.0 * LADDER_CONSTANT * (1.0 + delta.ln()),
        welfare_ratio: Some(4.0),
        revenue: candidates[chosen].revenue,
        welfare: candidates[chosen].welfare,
        optimal_welfare: optimum.welfare,
        alpha,
        alpha_bound,
        chosen,
        candidates,
        delta: Some(delta),
        threshold: Some(threshold),
        notes,
    };
    let solution = solutions.swap_remove(chosen);
    Ok(PricingOutcome { solution, report, optimum, traces: vec![trace] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{CostFn, DemandFn};
    use crate::market::{BuyerType, Item};

    fn single(demand: DemandFn, cost: CostFn) -> MarketInstance {
        MarketInstance::from_pairs(
            vec![BuyerType { id: "b".into(), demand }],
            vec![Item { id: "t".into(), cost }],
            &[(0, 0)],
        )
        .unwrap()
    }

    #[test]
    fn ratio_constant() {
        assert!((uniform_peak_ratio() - 1.8766).abs() < 1e-4);
    }

    #[test]
    fn uniform_demand_prefers_sqrt_e() {
        let m = single(DemandFn::uniform(2.0, 1.0).unwrap(), CostFn::zero());
        let out = approx_revenue_uniform_peak(&m, &PricingConfig::default()).unwrap();
        let c = &out.report.candidates;
        assert!((c[0].revenue - 2.0 / E).abs() < 1e-5);
        assert!((c[1].revenue - 2.0 / E.sqrt()).abs() < 1e-5);
        assert_eq!(out.report.chosen, 1);
        assert!((2.0 / out.report.revenue - E.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn bicriteria_on_linear_demand() {
        let m = single(DemandFn::linear(1.0, 1.0, 1.0).unwrap(), CostFn::zero());
        let out = bicriteria_e(&m, &PricingConfig::default()).unwrap();
        assert!((out.report.welfare - 0.43233).abs() < 1e-5);
        assert!((out.report.optimal_welfare - 0.5).abs() < 1e-12);
        assert!(out.report.welfare >= 0.5 * out.report.optimal_welfare);
    }

    #[test]
    fn bicriteria_on_uniform_demand_is_welfare_optimal() {
        let m = single(DemandFn::uniform(2.0, 1.0).unwrap(), CostFn::zero());
        let out = bicriteria_e(&m, &PricingConfig::default()).unwrap();
        assert!((out.report.welfare - 2.0).abs() < 1e-9);
        assert!((out.report.alpha - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ladder_prices_take_floor() {
        assert_eq!(ladder_prices(&[0.5, 2.0], 1.0, 0), vec![0.5, 2.0]);
        assert_eq!(ladder_prices(&[0.5, 2.0], 1.0, 1), vec![1.0, 2.0]);
        let p = ladder_prices(&[0.5, 2.0], 1.0, 2);
        assert!((p[0] - E).abs() < 1e-15 && (p[1] - E).abs() < 1e-15);
        assert_eq!(ladder_len(E), 1);
        assert_eq!(ladder_len(E * E * E), 3);
        assert_eq!(ladder_len(1.0), 0);
    }

    #[test]
    fn log_delta_rejects_linear_costs() {
        let m = single(DemandFn::linear(1.0, 1.0, 1.0).unwrap(), CostFn::linear(0.2).unwrap());
        assert!(matches!(
            log_delta_algorithm(&m, &PricingConfig::default()),
            Err(PricingError::NotDoublyConvex { .. })
        ));
    }

    #[test]
    fn delta_of_uniform_peaks_is_one() {
        let m = single(DemandFn::linear(1.0, 1.0, 1.0).unwrap(), CostFn::zero());
        assert_eq!(compute_delta(&m), 1.0);
        let out = log_delta_algorithm(&m, &PricingConfig::default()).unwrap();
        assert_eq!(out.report.candidates.len(), 1);
        assert_eq!(out.report.chosen, 0);
    }
}
