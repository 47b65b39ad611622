use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use envyprice_core::ascent::AscendTrace;
use serde_json::Value;
use tempfile::TempDir;

const E: f64 = std::f64::consts::E;

fn manual(buyers: &str, items: &str, edges: &str, algorithm: &str, extra: &str) -> String {
    format!(
        r#"{{"version": 1,
            "instance": {{"generator": "manual", "market": {{"buyers": [{buyers}], "items": [{items}], "edges": [{edges}]}}}},
            "algorithm": {algorithm}{extra}}}"#
    )
}

fn single_linear(algorithm: &str, extra: &str) -> String {
    manual(
        r#"{"id": "b", "demand": {"family": "linear", "intercept": 1, "slope": 1, "support": 1}}"#,
        r#"{"id": "t", "cost": {"family": "zero"}}"#,
        r#"["b", "t"]"#,
        algorithm,
        extra,
    )
}

struct Case {
    dir: TempDir,
}

impl Case {
    fn new(scenario: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("scenario.json"), scenario).unwrap();
        Case { dir }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cli(&self, verb: &str, out: &str, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_envyprice"))
            .arg(verb)
            .arg("--scenario")
            .arg(self.dir.path().join("scenario.json"))
            .arg("--out")
            .arg(self.out(out))
            .args(extra)
            .output()
            .unwrap()
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_record(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn bicriteria_on_single_linear_buyer() {
    let case = Case::new(&single_linear(r#"{"kind": "bicriteria"}"#, ""));
    let out = case.cli("run", "a", &["--trace"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&case.out("a/report.json"));
    let rev = r["summary"]["revenue"].as_f64().unwrap();
    assert!((rev - (1.0 / E) * (1.0 - 1.0 / E)).abs() < 1e-6, "{rev}");
    assert!((rev - 0.23254).abs() < 1e-5);
    assert!(r["verification"]["passed"].as_bool().unwrap());
    assert_eq!(r["guarantee"]["algorithm"], "bicriteria-e");

    let events = AscendTrace::parse_ndjson(&std::fs::read_to_string(case.out("a/trace.ndjson")).unwrap()).unwrap();
    assert_eq!(events.len() as u64, r["trace"]["events"].as_u64().unwrap());
    assert!(case.out("a/meta.json").exists());
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let sc = r#"{"version": 1,
        "instance": {"generator": "random-mhr", "seed": 42, "buyers": 5, "items": 4},
        "algorithm": {"kind": "approx-revenue"}}"#;
    let case = Case::new(sc);
    for d in ["a", "b"] {
        assert_eq!(case.cli("run", d, &["--trace"]).status.code(), Some(0));
    }
    for f in ["report.json", "trace.ndjson"] {
        let a = std::fs::read(case.out("a").join(f)).unwrap();
        let b = std::fs::read(case.out("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn seed_flag_replaces_generator_seed() {
    let sc = r#"{"version": 1,
        "instance": {"generator": "random-mhr", "seed": 1, "buyers": 3, "items": 3},
        "algorithm": {"kind": "welfare"}}"#;
    let case = Case::new(sc);
    assert_eq!(case.cli("run", "a", &[]).status.code(), Some(0));
    assert_eq!(case.cli("run", "b", &["--seed", "2"]).status.code(), Some(0));
    let (a, b) = (json(&case.out("a/report.json")), json(&case.out("b/report.json")));
    assert_ne!(a["scenario_hash"], b["scenario_hash"]);
    assert_ne!(a["summary"], b["summary"]);
}

#[test]
fn malformed_scenarios_exit_2_naming_the_field() {
    let case = Case::new(&single_linear(r#"{"kind": "ascend", "k": "big"}"#, ""));
    let out = case.cli("run", "a", &[]);
    assert_eq!(out.status.code(), Some(2));
    let rec = stderr_record(&out);
    assert_eq!(rec["error"], "parse");
    assert!(rec["field"].as_str().unwrap().contains("algorithm"), "{rec}");
    assert!(case.out("a/error.json").exists());

    let case = Case::new(&single_linear(r#"{"kind": "bicriteria"}"#, r#", "tolerances": {"verify": -1}"#));
    let rec = stderr_record(&case.cli("run", "a", &[]));
    assert_eq!(rec["field"], "tolerances.verify");

    let case = Case::new(r#"{"version": 1, "instance": {"generator": "vertex-cover-gadget", "vertices": 3}, "algorithm": {"kind": "welfare"}}"#);
    let rec = stderr_record(&case.cli("run", "a", &[]));
    assert_eq!(rec["field"], "instance.seed");

    let case = Case::new("{ not json");
    assert_eq!(case.cli("validate", "a", &[]).status.code(), Some(2));
}

fn two_item_market(cost: &str, algorithm: &str) -> String {
    manual(
        r#"{"id": "a", "demand": {"family": "linear", "intercept": 1, "slope": 1, "support": 1}},
           {"id": "b", "demand": {"family": "exponential", "scale": 8, "rate": 2, "support": 1}}"#,
        &format!(r#"{{"id": "s", "cost": {{"family": "quadratic", "coef": 0.5}}}}, {{"id": "u", "cost": {cost}}}"#),
        r#"["a", "s"], ["b", "s"], ["b", "u"]"#,
        algorithm,
        "",
    )
}

#[test]
fn log_delta_rejects_costs_that_are_not_doubly_convex() {
    let case = Case::new(&two_item_market(r#"{"family": "linear", "rate": 0.1}"#, r#"{"kind": "log-delta"}"#));
    for verb in ["run", "validate"] {
        let out = case.cli(verb, verb, &[]);
        assert_eq!(out.status.code(), Some(3), "{verb}");
        assert_eq!(stderr_record(&out)["subject"], "u", "{verb}");
    }
    let v = json(&case.out("validate/validate.json"));
    assert_eq!(v["passed"], false);
    assert_eq!(v["preconditions"][0]["passed"], false);

    let ok = Case::new(&two_item_market(r#"{"family": "power", "coef": 1, "exponent": 3}"#, r#"{"kind": "log-delta"}"#));
    assert_eq!(ok.cli("run", "a", &[]).status.code(), Some(0));
}

#[test]
fn approx_revenue_needs_uniform_peaks() {
    let case = Case::new(&two_item_market(r#"{"family": "zero"}"#, r#"{"kind": "approx-revenue"}"#));
    let out = case.cli("run", "a", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_record(&out)["subject"], "a");
}

#[test]
fn validate_reports_non_mhr_demand() {
    let case = Case::new(&manual(
        r#"{"id": "bumpy", "demand": {"family": "tabulated", "points": [[0, 1], [0.5, 0.1], [1, 0.09]]}}"#,
        r#"{"id": "t", "cost": {"family": "zero"}}"#,
        r#"["bumpy", "t"]"#,
        r#"{"kind": "welfare"}"#,
        "",
    ));
    let out = case.cli("validate", "a", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_record(&out)["subject"], "bumpy");
    let v = json(&case.out("a/validate.json"));
    assert_eq!(v["buyers"][0]["mhr"]["passes"], false);
    assert!(v["structure_error"].as_str().unwrap().contains("bumpy"));
    assert_eq!(case.cli("run", "b", &[]).status.code(), Some(3));
}

#[test]
fn compare_reproduces_closed_form_ratios() {
    let case = Case::new(&single_linear(r#"{"kind": "approx-revenue"}"#, ""));
    assert_eq!(case.cli("compare", "a", &[]).status.code(), Some(0));
    let c = json(&case.out("a/compare.json"));
    let ratio = c["revenue_ratio"]["measured"].as_f64().unwrap();
    // oracle 1/4 against the √e run's (1/√e)(1 - 1/√e)
    let s = E.sqrt();
    assert!((ratio - 0.25 / ((1.0 / s) * (1.0 - 1.0 / s))).abs() < 1e-4, "{ratio}");
    assert!((ratio - 1.0475).abs() < 1e-4);
    assert_eq!(c["passed"], true);
    assert!(c.get("solution").is_none());

    let case = Case::new(&manual(
        r#"{"id": "b", "demand": {"family": "uniform", "value": 2, "support": 1}}"#,
        r#"{"id": "t", "cost": {"family": "zero"}}"#,
        r#"["b", "t"]"#,
        r#"{"kind": "approx-revenue"}"#,
        "",
    ));
    assert_eq!(case.cli("compare", "a", &[]).status.code(), Some(0));
    let c = json(&case.out("a/compare.json"));
    assert!((c["revenue_ratio"]["measured"].as_f64().unwrap() - E.sqrt()).abs() < 1e-4);
    assert!((c["revenue_ratio"]["bound"].as_f64().unwrap() - 1.8766).abs() < 1e-4);
}

#[test]
fn compare_reports_oracle_budget_overrun() {
    let sc = r#"{"version": 1,
        "instance": {"generator": "random-mhr", "seed": 3, "buyers": 3, "items": 3},
        "algorithm": {"kind": "bicriteria"},
        "oracle": {"budget": 1000}}"#;
    let case = Case::new(sc);
    let out = case.cli("compare", "a", &["--oracle-step", "1e-4"]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stderr_record(&out)["error"], "oracle-budget");
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn k_sweep_prices_at_peak_over_k() {
    let ks = [1.0, E.sqrt(), E, 4.0];
    let extra = format!(r#", "sweep": {{"parameter": "k", "values": [{}]}}"#, ks.map(|k| k.to_string()).join(", "));
    let case = Case::new(&single_linear(r#"{"kind": "bicriteria"}"#, &extra));
    assert_eq!(case.cli("sweep", "a", &[]).status.code(), Some(0));
    let (header, rows) = csv_rows(&case.out("a/sweep.csv"));
    assert_eq!(header, "k,revenue,welfare,alpha,bound");
    assert_eq!(rows.len(), ks.len());
    for (row, k) in rows.iter().zip(ks) {
        let p = 1.0 / k;
        assert!((row[1] - p * (1.0 - p)).abs() < 1e-6, "k {k}: {row:?}");
    }
    // beyond the unconstrained peak at k = 2 revenue falls as k grows
    assert!(rows[1][1] > rows[2][1] && rows[2][1] > rows[3][1]);
    for row in &rows[1..] {
        assert!((row[4] - (1.0 / E).max((row[3] - 1.0) / row[3])).abs() < 1e-12);
    }
}

#[test]
fn empty_sweep_writes_header_only() {
    let extra = r#", "sweep": {"parameter": "k", "start": 1, "stop": 3, "count": 0}"#;
    let case = Case::new(&single_linear(r#"{"kind": "bicriteria"}"#, extra));
    assert_eq!(case.cli("sweep", "a", &[]).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(case.out("a/sweep.csv")).unwrap(), "k,revenue,welfare,alpha,bound\n");

    let case = Case::new(&single_linear(r#"{"kind": "bicriteria"}"#, ""));
    let out = case.cli("sweep", "a", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_record(&out)["field"], "sweep");
}

#[test]
fn j_sweep_matches_ladder_candidates() {
    let sc = format!(
        r#"{{"version": 1,
            "instance": {{"generator": "random-mhr", "seed": 7, "buyers": 5, "items": 4, "delta": {}, "doubly_convex_only": true}},
            "algorithm": {{"kind": "log-delta"}},
            "sweep": {{"parameter": "j", "values": [0, 1, 2, 3]}}}}"#,
        E.powi(3)
    );
    let case = Case::new(&sc);
    assert_eq!(case.cli("run", "run", &[]).status.code(), Some(0));
    assert_eq!(case.cli("sweep", "sweep", &[]).status.code(), Some(0));
    let report = json(&case.out("run/report.json"));
    let candidates = report["guarantee"]["candidates"].as_array().unwrap();
    let (header, rows) = csv_rows(&case.out("sweep/sweep.csv"));
    assert!(header.starts_with("j,"));
    assert_eq!(rows.len(), candidates.len());
    for (row, c) in rows.iter().zip(candidates) {
        assert_eq!(row[0], c["parameter"].as_f64().unwrap());
        assert_eq!(row[1], c["revenue"].as_f64().unwrap());
        assert_eq!(row[2], c["welfare"].as_f64().unwrap());
    }
}

#[test]
fn validate_certifies_generated_markets() {
    let sc = r#"{"version": 1,
        "instance": {"generator": "vertex-cover-gadget", "vertices": 3, "edges": [[0, 1], [1, 2]]},
        "algorithm": {"kind": "approx-revenue"}}"#;
    let case = Case::new(sc);
    let out = case.cli("validate", "a", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&case.out("a/validate.json"));
    assert_eq!(v["passed"], true);
    assert_eq!(v["instance"]["buyers"], 5);
    assert_eq!(v["preconditions"][0]["requirement"], "uniform peak");
}
