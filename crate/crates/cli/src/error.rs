use std::fmt;
use std::io;
use std::path::Path;

use vda_core::auction::AuctionError;
use vda_core::eval::EvalError;
use vda_core::mechanism::MechanismError;
use vda_core::scenario::ScenarioError;
use vda_core::trainer::TrainError;
use vda_core::vcg::VcgError;

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Input data that is well formed but not acceptable (bids, scenarios, weights).
    Validation,
    /// Flags, config files, unreadable or unwritable paths.
    Config,
    /// Training produced non-finite values.
    Divergence,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Validation => 2,
            Kind::Config => 3,
            Kind::Divergence => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Validation => "validation",
            Kind::Config => "config",
            Kind::Divergence => "divergence",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        Self::config(format!("{}: {e}", path.display()))
    }

    /// The one-line form written to stderr: `error: <kind>: <message>`.
    pub fn line(&self) -> String {
        let flat: String = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error: {}: {flat}", self.kind.name())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<AuctionError> for CliError {
    fn from(e: AuctionError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<VcgError> for CliError {
    fn from(e: VcgError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        Self::validation(format!("scenario: {e}"))
    }
}

impl From<MechanismError> for CliError {
    fn from(e: MechanismError) -> Self {
        match e {
            MechanismError::Io(e) => Self::config(e.to_string()),
            MechanismError::NonFinite(what) => Self {
                kind: Kind::Divergence,
                message: format!("non-finite {what}"),
            },
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Self::config(m),
            TrainError::Divergence { .. } => Self {
                kind: Kind::Divergence,
                message: e.to_string(),
            },
            TrainError::Scenario(e) => e.into(),
            TrainError::Mechanism(e) => e.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NoSamples => Self::config(e.to_string()),
            EvalError::Mechanism(m) => m.into(),
            other => Self::validation(other.to_string()),
        }
    }
}
