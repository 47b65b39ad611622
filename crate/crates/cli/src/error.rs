use envyprice_core::ascent::AscendError;
use envyprice_core::flow::FlowError;
use envyprice_core::oracle::OracleError;
use envyprice_core::pricing::PricingError;
use envyprice_core::{FunctionError, MarketError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("cannot read scenario `{path}`: {message}")]
    Read { path: String, message: String },
    #[error("invalid scenario at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("precondition failed: {message}")]
    Precondition { message: String, subject: Option<String> },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("oracle needs {required:.3e} evaluations, over the budget of {budget:.3e}")]
    Budget { required: f64, budget: f64 },
    #[error("cannot write `{path}`: {message}")]
    Write { path: String, message: String },
}

/// What goes to stderr and `error.json` when a command fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl CliError {
    pub fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Parse { field: field.into(), message: message.into() }
    }

    pub fn precondition(message: impl Into<String>, subject: Option<String>) -> Self {
        CliError::Precondition { message: message.into(), subject }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Parse { .. } => 2,
            CliError::Precondition { .. } => 3,
            CliError::Solver(_) | CliError::Verification(_) => 4,
            CliError::Budget { .. } => 5,
            CliError::Write { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Read { .. } => "read",
            CliError::Parse { .. } => "parse",
            CliError::Precondition { .. } => "precondition",
            CliError::Solver(_) => "solver",
            CliError::Verification(_) => "verification",
            CliError::Budget { .. } => "oracle-budget",
            CliError::Write { .. } => "write",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        let (field, subject) = match self {
            CliError::Parse { field, .. } => (Some(field.clone()), None),
            CliError::Precondition { subject, .. } => (None, subject.clone()),
            _ => (None, None),
        };
        ErrorRecord { error: self.kind(), exit_code: self.exit_code(), message: self.to_string(), field, subject }
    }
}

impl From<FunctionError> for CliError {
    fn from(e: FunctionError) -> Self {
        CliError::precondition(e.to_string(), None)
    }
}

impl From<MarketError> for CliError {
    fn from(e: MarketError) -> Self {
        let subject = match &e {
            MarketError::NotMhr { buyer, .. } => Some(buyer.clone()),
            MarketError::IsolatedBuyer(b) | MarketError::UnknownBuyer(b) => Some(b.clone()),
            MarketError::NotConvex(t) | MarketError::UnknownItem(t) => Some(t.clone()),
            MarketError::DuplicateId { id, .. } => Some(id.clone()),
            MarketError::LengthMismatch { .. } => return CliError::Solver(e.to_string()),
            _ => None,
        };
        CliError::precondition(e.to_string(), subject)
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Infeasible { .. } => CliError::precondition(e.to_string(), None),
            FlowError::Uncertified { .. } => CliError::Solver(e.to_string()),
            FlowError::Market(m) => m.into(),
        }
    }
}

impl From<AscendError> for CliError {
    fn from(e: AscendError) -> Self {
        match e {
            AscendError::NonUniformPeaks { ref buyer, .. } => CliError::precondition(e.to_string(), Some(buyer.clone())),
            AscendError::InvalidParameter { .. } => CliError::precondition(e.to_string(), None),
            AscendError::Flow(f) => f.into(),
            AscendError::Market(m) => m.into(),
        }
    }
}

impl From<PricingError> for CliError {
    fn from(e: PricingError) -> Self {
        match e {
            PricingError::NotDoublyConvex { ref item, .. } => CliError::precondition(e.to_string(), Some(item.clone())),
            PricingError::Ascend(a) => a.into(),
            PricingError::Flow(f) => f.into(),
            PricingError::Market(m) => m.into(),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::BudgetExceeded { required, budget } => CliError::Budget { required, budget },
            OracleError::InvalidSpec { field, .. } => CliError::precondition(e.to_string(), Some(field.to_string())),
            OracleError::Flow(f) => f.into(),
            OracleError::Ascend(a) => a.into(),
            OracleError::Market(m) => m.into(),
            OracleError::Function(f) => f.into(),
        }
    }
}
