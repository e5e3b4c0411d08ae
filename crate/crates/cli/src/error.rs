use std::fmt;

use ripple_core::alignment::AlignError;
use ripple_core::asset_pricing::PricingError;
use ripple_core::evaluation::EvalError;
use ripple_core::instruction::InstructionError;
use ripple_core::market_graph::GraphError;
use ripple_core::portfolio::PortfolioError;
use ripple_core::propagator::PropagatorError;
use ripple_core::synth::SynthError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Usage,
    Data,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: m.into(),
        }
    }

    pub fn data(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: m.into(),
        }
    }

    pub fn runtime(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: m.into(),
        }
    }

    pub fn code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Runtime => 3,
        }
    }

    /// One JSON object on a single line.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: ErrorKind,
            code: i32,
            message: &'a str,
        }
        serde_json::to_string(&Line {
            error: self.kind,
            code: self.code(),
            message: &self.message,
        })
        .expect("error line serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::BadConfig(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<PricingError> for CliError {
    fn from(e: PricingError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<PropagatorError> for CliError {
    fn from(e: PropagatorError) -> Self {
        match e {
            PropagatorError::BadParams(_) => CliError::usage(e.to_string()),
            PropagatorError::BadEvent(_) | PropagatorError::Json(_) | PropagatorError::Io(_) => {
                CliError::data(e.to_string())
            }
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::BadConfig(_) => CliError::usage(e.to_string()),
            AlignError::EmptyStream => CliError::data(e.to_string()),
            AlignError::Propagator(p) => p.into(),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<PortfolioError> for CliError {
    fn from(e: PortfolioError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<InstructionError> for CliError {
    fn from(e: InstructionError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InfeasibleConfig(_) => CliError::usage(e.to_string()),
            SynthError::Io(_) | SynthError::Csv(_) => CliError::data(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::data(e.to_string())
    }
}
