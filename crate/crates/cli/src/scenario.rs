//! Scenario documents: one JSON file naming an instance, an algorithm and its settings.

use std::path::{Path, PathBuf};

use envyprice_core::ascent::StopMode;
use envyprice_core::oracle::{InstanceSpec, OracleConfig, OracleError};
use envyprice_core::MarketInstance;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Welfare,
    ApproxRevenue,
    Bicriteria,
    LogDelta,
    Ascend {
        k: f64,
        /// Defaults to uniform-peak when every peak coincides, generalized otherwise.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<StopMode>,
    },
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Welfare => "welfare",
            AlgorithmSpec::ApproxRevenue => "approx-revenue",
            AlgorithmSpec::Bicriteria => "bicriteria",
            AlgorithmSpec::LogDelta => "log-delta",
            AlgorithmSpec::Ascend { .. } => "ascend",
        }
    }
}

fn solver_default() -> f64 {
    envyprice_core::flow::DEFAULT_TOL
}

fn epsilon_default() -> f64 {
    1e-6
}

fn verify_default() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "solver_default")]
    pub solver: f64,
    /// Stop-price bracket width relative to the target valuation.
    #[serde(default = "epsilon_default")]
    pub epsilon_rel: f64,
    /// Bound on envy and KKT residuals for emitted solutions.
    #[serde(default = "verify_default")]
    pub verify: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { solver: solver_default(), epsilon_rel: epsilon_default(), verify: verify_default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    K,
    J,
}

impl SweepParameter {
    pub fn column(self) -> &'static str {
        match self {
            SweepParameter::K => "k",
            SweepParameter::J => "j",
        }
    }
}

/// Either an explicit list of values or `count` evenly spaced points from `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl SweepSpec {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        let range = (self.start, self.stop, self.count);
        let pts = match (&self.values, range) {
            (Some(v), (None, None, None)) => v.clone(),
            (None, (Some(a), Some(b), Some(n))) => match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
            },
            _ => return Err(CliError::parse("sweep", "give either `values` or all of `start`, `stop`, `count`")),
        };
        for (i, &v) in pts.iter().enumerate() {
            let ok = match self.parameter {
                SweepParameter::K => v.is_finite() && v >= 1.0,
                SweepParameter::J => v >= 0.0 && v.fract() == 0.0 && v <= 64.0,
            };
            if !ok {
                let want = match self.parameter {
                    SweepParameter::K => "k must be finite and at least 1",
                    SweepParameter::J => "j must be an integer rung in [0, 64]",
                };
                return Err(CliError::parse(format!("sweep.values[{i}]"), format!("{want}, got {v}")));
            }
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub instance: InstanceSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub outputs: Outputs,
}

/// Command-line settings that take precedence over the scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub oracle_step: Option<f64>,
    pub seed: Option<u64>,
    pub trace: bool,
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::parse(field, format!("must be positive and finite, got {v}")))
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path.is_empty() || path == "." { "scenario".to_string() } else { path };
            CliError::parse(field, e.into_inner().to_string())
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCENARIO_VERSION {
            return Err(CliError::parse("version", format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version)));
        }
        positive("tolerances.solver", self.tolerances.solver)?;
        positive("tolerances.epsilon_rel", self.tolerances.epsilon_rel)?;
        positive("tolerances.verify", self.tolerances.verify)?;
        positive("oracle.step", self.oracle.step)?;
        positive("oracle.solver_tol", self.oracle.solver_tol)?;
        if let AlgorithmSpec::Ascend { k, .. } = self.algorithm {
            if !(k.is_finite() && k >= 1.0) {
                return Err(CliError::parse("algorithm.k", format!("must be finite and at least 1, got {k}")));
            }
        }
        if let InstanceSpec::VertexCoverGadget { edges: None, seed: None, .. } = self.instance {
            return Err(CliError::parse("instance.seed", "a random gadget graph needs a seed"));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(dir) = &o.out {
            self.outputs.dir = Some(dir.clone());
        }
        if let Some(t) = o.tol {
            self.tolerances.verify = t;
        }
        if let Some(s) = o.oracle_step {
            self.oracle.step = s;
        }
        if let Some(seed) = o.seed {
            self.instance.reseed(seed);
        }
        self.outputs.trace |= o.trace;
        self.validate()
    }

    pub fn build_instance(&self) -> Result<MarketInstance, CliError> {
        self.instance.build().map_err(|e| match e {
            OracleError::InvalidSpec { field, reason } => CliError::parse(format!("instance.{field}"), reason),
            other => other.into(),
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.outputs.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// SHA-256 of the canonical scenario with output settings cleared, as lowercase hex.
    pub fn hash(&self) -> String {
        let canonical = Scenario { outputs: Outputs::default(), ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("scenario serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "instance": {"generator": "manual", "market": {
            "buyers": [{"id": "b", "demand": {"family": "linear", "intercept": 1, "slope": 1, "support": 1}}],
            "items": [{"id": "t", "cost": {"family": "zero"}}],
            "edges": [["b", "t"]]}},
        "algorithm": {"kind": "bicriteria"}
    }"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(sc.algorithm, AlgorithmSpec::Bicriteria);
        assert_eq!(sc.tolerances, Tolerances::default());
        assert_eq!(sc.build_instance().unwrap().num_buyers(), 1);
    }

    #[test]
    fn parse_errors_name_the_field() {
        let bad = MINIMAL.replace(r#""slope": 1"#, r#""slope": "steep""#);
        match Scenario::from_json(&bad) {
            Err(CliError::Parse { field, .. }) => assert!(field.starts_with("instance"), "{field}"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace(r#""version": 1"#, r#""version": 1, "colour": 3"#);
        assert!(matches!(Scenario::from_json(&bad), Err(CliError::Parse { .. })));
        let bad = MINIMAL.replace("bicriteria", "ascend");
        match Scenario::from_json(&bad) {
            Err(CliError::Parse { field, message }) => assert!(field.contains("algorithm"), "{field}: {message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_ignores_output_settings() {
        let a = Scenario::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.apply(&Overrides { out: Some("elsewhere".into()), trace: true, ..Default::default() }).unwrap();
        assert_eq!(a.hash(), b.hash());
        b.apply(&Overrides { tol: Some(1e-5), ..Default::default() }).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sweep_ranges() {
        let s = SweepSpec { parameter: SweepParameter::K, values: None, start: Some(1.0), stop: Some(3.0), count: Some(3) };
        assert_eq!(s.points().unwrap(), vec![1.0, 2.0, 3.0]);
        let empty = SweepSpec { count: Some(0), ..s.clone() };
        assert!(empty.points().unwrap().is_empty());
        let j = SweepSpec { parameter: SweepParameter::J, values: Some(vec![0.0, 1.5]), start: None, stop: None, count: None };
        assert!(j.points().is_err());
        let both = SweepSpec { values: Some(vec![1.0]), ..s };
        assert!(both.points().is_err());
    }
}
