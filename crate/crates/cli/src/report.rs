//! Records written by the commands. Everything here is a pure function of the scenario, so
//! re-running a scenario reproduces the files byte for byte; wall-clock data lives in `meta.json`.

use std::path::Path;

use envyprice_core::flow::kkt_violation;
use envyprice_core::functions::{ConvexityCertificate, MhrCertificate};
use envyprice_core::oracle::OracleReport;
use envyprice_core::pricing::{compute_delta, GuaranteeReport};
use envyprice_core::{MarketInstance, Solution};
use serde::Serialize;

use crate::error::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSummary {
    pub buyers: usize,
    pub items: usize,
    pub edges: usize,
    pub min_peak: f64,
    pub max_peak: f64,
    pub delta: f64,
    pub uniform_peak: bool,
}

impl InstanceSummary {
    pub fn of(inst: &MarketInstance) -> Self {
        InstanceSummary {
            buyers: inst.num_buyers(),
            items: inst.num_items(),
            edges: inst.edges().len(),
            min_peak: inst.min_peak(),
            max_peak: inst.max_peak(),
            delta: compute_delta(inst),
            uniform_peak: inst.has_uniform_peak(1e-7),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemRow {
    pub id: String,
    pub price: f64,
    pub load: f64,
    pub marginal_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuyerRow {
    pub id: String,
    pub demand: f64,
    /// Cheapest accessible price.
    pub price: f64,
    pub payment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRow {
    pub buyer: String,
    pub item: String,
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub revenue: f64,
    pub welfare: f64,
    pub optimal_welfare: f64,
    /// `SW* / SW`.
    pub alpha: f64,
    /// `max(1/e, (α-1)/α)`.
    pub alpha_bound: f64,
}

impl Summary {
    pub fn new(revenue: f64, welfare: f64, optimal_welfare: f64) -> Self {
        let alpha = if welfare > 0.0 {
            optimal_welfare / welfare
        } else if optimal_welfare > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        let alpha_bound = if alpha.is_finite() { (1.0 / std::f64::consts::E).max((alpha - 1.0) / alpha) } else { 1.0 };
        Summary { revenue, welfare, optimal_welfare, alpha, alpha_bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub envy_residual: f64,
    pub kkt_residual: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Re-checks envy-freeness and min-cost optimality of a solution.
pub fn verify(inst: &MarketInstance, sol: &Solution, tol: f64) -> Result<Verification, CliError> {
    let env = sol.envy(inst, tol)?;
    let kkt = kkt_violation(inst, &sol.demand, &sol.allocation)?;
    let scale = inst.max_peak().max(1.0);
    let passed = env.residual() <= tol * scale && kkt <= tol * scale;
    Ok(Verification { envy_residual: env.residual(), kkt_residual: kkt, tol, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRef {
    pub path: String,
    pub events: usize,
    pub flow_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub schema: u32,
    pub scenario_hash: String,
    pub algorithm: String,
    pub instance: InstanceSummary,
    pub summary: Summary,
    pub items: Vec<ItemRow>,
    pub buyers: Vec<BuyerRow>,
    pub flows: Vec<FlowRow>,
    pub verification: Verification,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guarantee: Option<GuaranteeReport>,
    pub diagnostics: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceRef>,
}

impl RunRecord {
    pub fn new(
        scenario_hash: String,
        algorithm: &str,
        inst: &MarketInstance,
        sol: &Solution,
        optimal_welfare: f64,
        verification: Verification,
    ) -> Result<Self, CliError> {
        let loads = inst.loads(&sol.allocation);
        let items = inst
            .items()
            .iter()
            .enumerate()
            .map(|(t, it)| ItemRow { id: it.id.clone(), price: sol.prices[t], load: loads[t], marginal_cost: it.cost.marginal(loads[t]) })
            .collect();
        let mut payments = vec![0.0; inst.num_buyers()];
        let mut flows = Vec::new();
        for (k, e) in inst.edges().iter().enumerate() {
            let f = sol.allocation.flows[k];
            payments[e.buyer] += sol.prices[e.item] * f;
            if f > 0.0 {
                flows.push(FlowRow { buyer: inst.buyers()[e.buyer].id.clone(), item: inst.items()[e.item].id.clone(), flow: f });
            }
        }
        let mut buyers = Vec::with_capacity(inst.num_buyers());
        for (i, b) in inst.buyers().iter().enumerate() {
            buyers.push(BuyerRow {
                id: b.id.clone(),
                demand: sol.demand[i],
                price: inst.cheapest_price(&sol.prices, i)?,
                payment: payments[i],
            });
        }
        Ok(RunRecord {
            schema: SCHEMA,
            scenario_hash,
            algorithm: algorithm.to_string(),
            instance: InstanceSummary::of(inst),
            summary: Summary::new(sol.revenue(inst)?, sol.welfare(inst)?, optimal_welfare),
            items,
            buyers,
            flows,
            verification,
            guarantee: None,
            diagnostics: sol.diagnostics.clone(),
            trace: None,
        })
    }
}

/// A measured ratio against the claimed bound; `passed` is `None` when nothing is claimed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioCheck {
    pub measured: f64,
    pub slack: f64,
    pub bound: Option<f64>,
    pub passed: Option<bool>,
}

impl RatioCheck {
    pub fn new(numerator: f64, denominator: f64, abs_slack: f64, bound: Option<f64>) -> Self {
        let ratio = |n: f64| if denominator > 0.0 { n / denominator } else if n > 0.0 { f64::INFINITY } else { 1.0 };
        let measured = ratio(numerator);
        let slack = if denominator > 0.0 { abs_slack / denominator } else { 0.0 };
        let passed = bound.map(|b| measured <= b + slack);
        RatioCheck { measured, slack, bound, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRecord {
    pub schema: u32,
    pub scenario_hash: String,
    pub algorithm: String,
    pub oracle: OracleReport,
    pub optimal_welfare: f64,
    pub revenue: f64,
    pub welfare: f64,
    /// Oracle revenue over algorithm revenue.
    pub revenue_ratio: RatioCheck,
    /// Optimal welfare over algorithm welfare.
    pub welfare_ratio: RatioCheck,
    pub passed: bool,
    /// Full solution, included when a check fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuyerCheck {
    pub id: String,
    pub family: &'static str,
    pub peak: f64,
    pub support: f64,
    pub mhr: MhrCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemCheck {
    pub id: String,
    pub family: &'static str,
    pub convex: ConvexityCertificate,
    pub doubly_convex: ConvexityCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreconditionCheck {
    pub requirement: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateRecord {
    pub schema: u32,
    pub scenario_hash: String,
    pub buyers: Vec<BuyerCheck>,
    pub items: Vec<ItemCheck>,
    /// Result of assembling the market; `None` when it succeeded.
    pub structure_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSummary>,
    pub preconditions: Vec<PreconditionCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub command: String,
    pub tool_version: &'static str,
    pub started_unix_ms: u128,
    pub wall_ms: u128,
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Write { path: parent.display().to_string(), message: e.to_string() })?;
        }
    }
    std::fs::write(path, contents).map_err(|e| CliError::Write { path: path.display().to_string(), message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_vec_pretty(value).expect("records serialize");
    text.push(b'\n');
    write_file(path, &text)
}
