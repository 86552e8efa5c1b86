//! Library half of the `mosaic` command-line tool: CSV ingestion, cluster
//! merging, and the stable output schemas. The binary in `main.rs` is a thin
//! dispatcher over these pieces.

pub mod ingest;
pub mod output;

use std::process::ExitCode;

/// CLI failure with the exit code it maps to: 2 for validation problems
/// (bad files, bad flags), 3 for numerical failures reported by the library.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            code: 2,
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            code: 3,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::validation(format!("io error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::validation(format!("csv error: {e}"))
    }
}

impl From<mosaic_core::Error> for CliError {
    fn from(e: mosaic_core::Error) -> Self {
        use mosaic_core::Error as E;
        let remediation = match &e {
            E::DegenerateCluster { .. } => " (try --merge-clusters <min-units>)",
            E::NoLocalVariation => {
                " (the covariate may be constant within time pairs; try another invariance)"
            }
            _ => "",
        };
        let message = format!("{e}{remediation}");
        match e {
            E::DegenerateCluster { .. }
            | E::NoLocalVariation
            | E::RankDeficient(_)
            | E::ZeroVariance(_) => CliError::numerical(message),
            _ => CliError::validation(message),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
