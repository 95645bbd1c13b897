use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage that raised a core error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Smoothing,
    FirstStage,
    Trimming,
    PartialMean,
    Inference,
    Functionals,
    Simulation,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Smoothing => "smoothing",
            Stage::FirstStage => "generated_regressors",
            Stage::Trimming => "trimming",
            Stage::PartialMean => "partial_mean",
            Stage::Inference => "inference",
            Stage::Functionals => "functionals",
            Stage::Simulation => "sim_harness",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("config line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },
    #[error("column `{0}` not found in the input header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("no usable rows after dropping missing outcome/treatment values")]
    NoRows,
    #[error("psi dump: {0}")]
    PsiDump(String),
    #[error("[{}] {source}", stage.name())]
    Module { stage: Stage, source: drfkit_core::Error },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Tags a core result with the stage it came from.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> AtStage<T> for drfkit_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|source| CliError::Module { stage, source })
    }
}
