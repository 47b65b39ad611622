use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use envyprice_core::ascent::{run_ascending, AscendConfig, AscendTrace, StopMode};
use envyprice_core::flow::{envy_free_outcome, welfare_opt};
use envyprice_core::market::MHR_GRID;
use envyprice_core::oracle::{grid_opt_revenue_auto, InstanceSpec};
use envyprice_core::pricing::{
    approx_revenue_uniform_peak, bicriteria_e, ladder_prices, log_delta_algorithm, GuaranteeReport, PricingConfig,
    PricingOutcome,
};
use envyprice_core::{BuyerType, Item, MarketInstance, Solution};

use crate::error::CliError;
use crate::report::{
    verify, write_file, write_json, BuyerCheck, CompareRecord, ItemCheck, Meta, PreconditionCheck, RatioCheck, RunRecord,
    Summary, TraceRef, ValidateRecord, SCHEMA,
};
use crate::scenario::{AlgorithmSpec, Overrides, Scenario, SweepParameter, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Run,
    Compare,
    Sweep,
    Validate,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Run => "run",
            Verb::Compare => "compare",
            Verb::Sweep => "sweep",
            Verb::Validate => "validate",
        }
    }
}

/// Result of running one algorithm on one instance.
#[derive(Debug, Clone)]
pub struct Execution {
    pub solution: Solution,
    pub optimal_welfare: f64,
    pub guarantee: Option<GuaranteeReport>,
    pub trace: Option<AscendTrace>,
}

impl Execution {
    fn from_pricing(out: PricingOutcome) -> Self {
        let chosen = out.report.chosen.min(out.traces.len().saturating_sub(1));
        let trace = out.traces.into_iter().nth(chosen);
        Execution { solution: out.solution, optimal_welfare: out.optimum.welfare, guarantee: Some(out.report), trace }
    }
}

fn pricing_config(tol: &Tolerances) -> PricingConfig {
    PricingConfig { epsilon_rel: tol.epsilon_rel, solver_tol: tol.solver }
}

fn ascend_config(inst: &MarketInstance, k: f64, mode: Option<StopMode>, tol: &Tolerances) -> Result<AscendConfig, CliError> {
    let mode = mode.unwrap_or(if inst.has_uniform_peak(1e-7) { StopMode::UniformPeak } else { StopMode::Generalized });
    let base = match mode {
        StopMode::UniformPeak => AscendConfig::uniform_peak(inst, k)?,
        StopMode::Generalized => AscendConfig::generalized(inst, k)?,
    };
    let eps = tol.epsilon_rel * base.target.abs().max(f64::MIN_POSITIVE);
    Ok(AscendConfig { solver_tol: tol.solver, ..base.with_epsilon(eps) })
}

pub fn execute(inst: &MarketInstance, alg: &AlgorithmSpec, tol: &Tolerances) -> Result<Execution, CliError> {
    let pc = pricing_config(tol);
    Ok(match alg {
        AlgorithmSpec::Welfare => {
            let opt = welfare_opt(inst, tol.solver)?;
            Execution { solution: opt.solution(), optimal_welfare: opt.welfare, guarantee: None, trace: None }
        }
        AlgorithmSpec::ApproxRevenue => Execution::from_pricing(approx_revenue_uniform_peak(inst, &pc)?),
        AlgorithmSpec::Bicriteria => Execution::from_pricing(bicriteria_e(inst, &pc)?),
        AlgorithmSpec::LogDelta => Execution::from_pricing(log_delta_algorithm(inst, &pc)?),
        AlgorithmSpec::Ascend { k, mode } => {
            let cfg = ascend_config(inst, *k, *mode, tol)?;
            let opt = welfare_opt(inst, tol.solver)?;
            let out = run_ascending(inst, &opt, cfg)?;
            Execution { solution: out.solution, optimal_welfare: opt.welfare, guarantee: None, trace: Some(out.trace) }
        }
    })
}

fn verified_record(sc: &Scenario, inst: &MarketInstance, ex: &Execution) -> Result<RunRecord, CliError> {
    let v = verify(inst, &ex.solution, sc.tolerances.verify)?;
    if !v.passed {
        return Err(CliError::Verification(format!(
            "{} solution has envy residual {:e} and KKT residual {:e} over tolerance {:e}",
            sc.algorithm.name(),
            v.envy_residual,
            v.kkt_residual,
            v.tol
        )));
    }
    let mut rec = RunRecord::new(sc.hash(), sc.algorithm.name(), inst, &ex.solution, ex.optimal_welfare, v)?;
    rec.guarantee = ex.guarantee.clone();
    Ok(rec)
}

pub fn cmd_run(sc: &Scenario) -> Result<PathBuf, CliError> {
    let inst = sc.build_instance()?;
    let ex = execute(&inst, &sc.algorithm, &sc.tolerances)?;
    let mut rec = verified_record(sc, &inst, &ex)?;
    let dir = sc.out_dir();
    if sc.outputs.trace {
        let trace = ex.trace.clone().unwrap_or_default();
        write_file(&dir.join("trace.ndjson"), trace.to_ndjson().as_bytes())?;
        rec.trace = Some(TraceRef { path: "trace.ndjson".into(), events: trace.events.len(), flow_solves: trace.flow_solves });
    }
    let path = dir.join("report.json");
    write_json(&path, &rec)?;
    Ok(path)
}

fn claimed_bounds(alg: &AlgorithmSpec, guarantee: Option<&GuaranteeReport>) -> (Option<f64>, Option<f64>) {
    match alg {
        AlgorithmSpec::Welfare => (None, Some(1.0)),
        AlgorithmSpec::Ascend { .. } => (None, None),
        _ => guarantee.map_or((None, None), |g| (Some(g.revenue_ratio), g.welfare_ratio)),
    }
}

pub fn cmd_compare(sc: &Scenario) -> Result<PathBuf, CliError> {
    let inst = sc.build_instance()?;
    let ex = execute(&inst, &sc.algorithm, &sc.tolerances)?;
    let rec = verified_record(sc, &inst, &ex)?;
    let oracle = grid_opt_revenue_auto(&inst, &sc.oracle)?;
    let (rev_bound, welfare_bound) = claimed_bounds(&sc.algorithm, ex.guarantee.as_ref());
    let revenue = rec.summary.revenue;
    let welfare = rec.summary.welfare;
    let revenue_ratio = RatioCheck::new(oracle.revenue, revenue, oracle.resolution_slack, rev_bound);
    let welfare_slack = sc.tolerances.verify * inst.max_peak().max(1.0);
    let welfare_ratio = RatioCheck::new(ex.optimal_welfare, welfare, welfare_slack, welfare_bound);
    let passed = revenue_ratio.passed != Some(false) && welfare_ratio.passed != Some(false);
    let record = CompareRecord {
        schema: SCHEMA,
        scenario_hash: rec.scenario_hash.clone(),
        algorithm: rec.algorithm.clone(),
        oracle,
        optimal_welfare: ex.optimal_welfare,
        revenue,
        welfare,
        revenue_ratio,
        welfare_ratio,
        passed,
        solution: (!passed).then_some(rec),
    };
    let path = sc.out_dir().join("compare.json");
    write_json(&path, &record)?;
    if !passed {
        return Err(CliError::Verification(format!(
            "measured ratios exceed the claimed bounds (revenue {} vs {:?}, welfare {} vs {:?}); see {}",
            record.revenue_ratio.measured,
            record.revenue_ratio.bound,
            record.welfare_ratio.measured,
            record.welfare_ratio.bound,
            path.display()
        )));
    }
    Ok(path)
}

fn csv_row(out: &mut String, parameter: f64, s: &Summary) {
    out.push_str(&format!("{parameter},{},{},{},{}\n", s.revenue, s.welfare, s.alpha, s.alpha_bound));
}

fn checked(sc: &Scenario, inst: &MarketInstance, sol: &Solution, label: String) -> Result<(), CliError> {
    let v = verify(inst, sol, sc.tolerances.verify)?;
    if v.passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{label}: envy residual {:e}, KKT residual {:e} over tolerance {:e}",
            v.envy_residual, v.kkt_residual, v.tol
        )))
    }
}

pub fn cmd_sweep(sc: &Scenario) -> Result<PathBuf, CliError> {
    let spec = sc.sweep.as_ref().ok_or_else(|| CliError::parse("sweep", "the sweep command needs a `sweep` section"))?;
    let points = spec.points()?;
    let inst = sc.build_instance()?;
    let mut csv = format!("{},revenue,welfare,alpha,bound\n", spec.parameter.column());
    if !points.is_empty() {
        let opt = welfare_opt(&inst, sc.tolerances.solver)?;
        let summarize = |sol: &Solution| -> Result<Summary, CliError> {
            Ok(Summary::new(sol.revenue(&inst)?, sol.welfare(&inst)?, opt.welfare))
        };
        match spec.parameter {
            SweepParameter::K => {
                let mode = match sc.algorithm {
                    AlgorithmSpec::Ascend { mode, .. } => mode,
                    _ => None,
                };
                for &k in &points {
                    let out = run_ascending(&inst, &opt, ascend_config(&inst, k, mode, &sc.tolerances)?)?;
                    checked(sc, &inst, &out.solution, format!("k = {k}"))?;
                    csv_row(&mut csv, k, &summarize(&out.solution)?);
                }
            }
            SweepParameter::J => {
                let base_cfg = ascend_config(&inst, std::f64::consts::E, Some(StopMode::Generalized), &sc.tolerances)?;
                let base = run_ascending(&inst, &opt, base_cfg)?.solution;
                for &j in &points {
                    let j = j as usize;
                    let sol = if j == 0 {
                        base.clone()
                    } else {
                        envy_free_outcome(&inst, &ladder_prices(&base.prices, inst.min_peak(), j), sc.tolerances.solver)?
                    };
                    checked(sc, &inst, &sol, format!("rung {j}"))?;
                    csv_row(&mut csv, j as f64, &summarize(&sol)?);
                }
            }
        }
    }
    let path = sc.out_dir().join("sweep.csv");
    write_file(&path, csv.as_bytes())?;
    Ok(path)
}

fn uniform_peak_check(buyers: &[BuyerType]) -> PreconditionCheck {
    let target = buyers.iter().map(|b| b.demand.peak()).fold(f64::NEG_INFINITY, f64::max);
    let off = buyers.iter().find(|b| (target - b.demand.peak()).abs() > 1e-7 * target.max(1.0));
    PreconditionCheck {
        requirement: "uniform peak".into(),
        passed: off.is_none(),
        detail: off.map(|b| format!("buyer `{}` peaks at {}, others reach {target}", b.id, b.demand.peak())),
    }
}

pub fn cmd_validate(sc: &Scenario) -> Result<PathBuf, CliError> {
    let (buyers, items, built): (Vec<BuyerType>, Vec<Item>, Result<MarketInstance, String>) = match &sc.instance {
        InstanceSpec::Manual { market } => {
            let built = MarketInstance::try_from(market.clone()).map_err(|e| e.to_string());
            (market.buyers.clone(), market.items.clone(), built)
        }
        _ => {
            let inst = sc.build_instance()?;
            (inst.buyers().to_vec(), inst.items().to_vec(), Ok(inst))
        }
    };
    let mut buyer_checks = Vec::with_capacity(buyers.len());
    for b in &buyers {
        buyer_checks.push(BuyerCheck {
            id: b.id.clone(),
            family: b.demand.family(),
            peak: b.demand.peak(),
            support: b.demand.support(),
            mhr: b.demand.check_mhr(MHR_GRID)?,
        });
    }
    let mut item_checks = Vec::with_capacity(items.len());
    for t in &items {
        item_checks.push(ItemCheck {
            id: t.id.clone(),
            family: t.cost.family(),
            convex: t.cost.check_convex(MHR_GRID)?,
            doubly_convex: t.cost.check_doubly_convex(MHR_GRID)?,
        });
    }
    let mut preconditions = Vec::new();
    let needs_uniform = match &sc.algorithm {
        AlgorithmSpec::ApproxRevenue => true,
        AlgorithmSpec::Ascend { mode, .. } => *mode == Some(StopMode::UniformPeak),
        _ => false,
    };
    if needs_uniform && !buyers.is_empty() {
        preconditions.push(uniform_peak_check(&buyers));
    }
    if sc.algorithm == AlgorithmSpec::LogDelta {
        let bad = item_checks.iter().find(|c| !c.doubly_convex.passes);
        preconditions.push(PreconditionCheck {
            requirement: "doubly convex costs".into(),
            passed: bad.is_none(),
            detail: bad.map(|c| format!("cost of item `{}` is not doubly convex (c(0) = {})", c.id, c.doubly_convex.floor)),
        });
    }

    let bad_buyer = buyer_checks.iter().find(|c| !c.mhr.passes).map(|c| c.id.clone());
    let bad_item = item_checks.iter().find(|c| !c.convex.passes).map(|c| c.id.clone());
    let structure_error = built.as_ref().err().cloned();
    let failed_pre = preconditions.iter().find(|p| !p.passed).cloned();
    let passed = bad_buyer.is_none() && bad_item.is_none() && structure_error.is_none() && failed_pre.is_none();
    let record = ValidateRecord {
        schema: SCHEMA,
        scenario_hash: sc.hash(),
        buyers: buyer_checks,
        items: item_checks,
        structure_error: structure_error.clone(),
        instance: built.as_ref().ok().map(crate::report::InstanceSummary::of),
        preconditions,
        passed,
    };
    let path = sc.out_dir().join("validate.json");
    write_json(&path, &record)?;
    if let Some(id) = bad_buyer {
        return Err(CliError::precondition(format!("demand of buyer `{id}` is not MHR"), Some(id)));
    }
    if let Some(id) = bad_item {
        return Err(CliError::precondition(format!("cost of item `{id}` is not convex"), Some(id)));
    }
    if let Some(e) = structure_error {
        return Err(CliError::precondition(e, None));
    }
    if let Some(p) = failed_pre {
        let subject = p.detail.as_deref().and_then(|d| d.split('`').nth(1)).map(str::to_string);
        return Err(CliError::precondition(p.detail.unwrap_or(p.requirement), subject));
    }
    Ok(path)
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Loads the scenario, runs one verb, and writes `meta.json` next to the outputs.
pub fn dispatch(verb: Verb, scenario: &Path, overrides: &Overrides) -> Result<PathBuf, (CliError, Option<PathBuf>)> {
    let started = unix_ms();
    let clock = Instant::now();
    let mut sc = Scenario::load(scenario).map_err(|e| (e, overrides.out.clone()))?;
    sc.apply(overrides).map_err(|e| (e, overrides.out.clone()))?;
    let dir = sc.out_dir();
    let result = match verb {
        Verb::Run => cmd_run(&sc),
        Verb::Compare => cmd_compare(&sc),
        Verb::Sweep => cmd_sweep(&sc),
        Verb::Validate => cmd_validate(&sc),
    };
    let meta = Meta {
        command: verb.name().into(),
        tool_version: env!("CARGO_PKG_VERSION"),
        started_unix_ms: started,
        wall_ms: clock.elapsed().as_millis(),
    };
    match result {
        Ok(path) => {
            write_json(&dir.join("meta.json"), &meta).map_err(|e| (e, Some(dir.clone())))?;
            Ok(path)
        }
        Err(e) => Err((e, Some(dir))),
    }
}

/// Best-effort `error.json` in the output directory.
pub fn write_error(dir: &Path, err: &CliError) {
    let _ = write_json(&dir.join("error.json"), &err.record());
}
