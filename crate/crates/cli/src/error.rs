use std::fmt;

use faultline::dcl::DclError;
use faultline::gateway::GatewayError;
use faultline::jsonl::JsonlError;
use faultline::manipulator::ManipulatorError;
use faultline::pipeline::PipelineError;
use faultline::reward::RewardError;
use faultline::sim::SimError;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Gateway(g) => g.into(),
            SimError::NeedsGateway(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ManipulatorError> for CliError {
    fn from(e: ManipulatorError) -> Self {
        match e {
            ManipulatorError::Gateway(g) => g.into(),
            ManipulatorError::Agent(s) => s.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(io) => io.into(),
            PipelineError::Manipulator(m) => m.into(),
            PipelineError::Sim(s) => s.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        match e {
            RewardError::InvalidConfig(_) | RewardError::InvalidEpsilon(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DclError> for CliError {
    fn from(e: DclError) -> Self {
        CliError::Data(e.to_string())
    }
}
