use std::path::PathBuf;

use thiserror::Error;

use crate::model::{PmId, VmId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `field` names the offending key.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A config or trace document could not be parsed at all.
    #[error("failed to parse {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vm {0} is not placed")]
    UnknownVm(VmId),

    #[error("vm {0} is already placed")]
    DuplicateVm(VmId),

    #[error("placing {demand} MIPS on pm {pm} exceeds its capacity")]
    Infeasible { pm: PmId, demand: f64 },

    #[error("no feasible assignment for a batch of {0} vms")]
    NoFeasibleAssignment(usize),

    /// No allocation exists for a batch (raised by the allocators and surfaced by the simulator).
    #[error("no feasible allocation for window {window}: {reason}")]
    Allocation { window: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(what: impl Into<String>, reason: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, parse, argument).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Parse { .. } | Error::InvalidArgument(_)
        )
    }

    pub fn is_allocation_error(&self) -> bool {
        matches!(
            self,
            Error::Allocation { .. } | Error::Infeasible { .. } | Error::NoFeasibleAssignment(_)
        )
    }
}
