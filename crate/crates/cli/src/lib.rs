//! Command implementations and the experiment harness behind the
//! `flowrecon` binary.

pub mod commands;
pub mod experiment;
pub mod manifest;

use std::fmt;

/// Maps to the process exit code: 2 for bad inputs, 3 for numerical failure.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Numerical(anyhow::Error),
}

impl Failure {
    /// Sorts an error by whether the arithmetic or the input was at fault.
    pub fn classify(e: anyhow::Error) -> Self {
        let numerical = e.chain().any(|c| {
            c.downcast_ref::<flowrecon_core::Error>().is_some_and(|e| e.is_numerical())
                || c.downcast_ref::<flowrecon_scvae::Error>().is_some_and(|e| e.is_numerical())
        });
        if numerical {
            Failure::Numerical(e)
        } else {
            Failure::Invalid(e)
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(e) => write!(f, "error: {e:#}"),
            Failure::Numerical(e) => write!(f, "numerical failure: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::classify(e)
    }
}
