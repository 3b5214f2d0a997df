// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Syntax errors and unknown keys. The message carries the line and column.
    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("field `{field}`: {constraint}")]
    Schema { field: String, constraint: String },

    #[error("unknown figure `{0}` (expected one of fig9, fig10, fig3a-shape, fig7-direction, fig8-direction, takeaway3)")]
    UnknownFigure(String),

    #[error("malformed result table: {0}")]
    Table(String),

    #[error(transparent)]
    Sim(#[from] asyncrl_core::Error),

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl ReportError {
    pub(crate) fn schema(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        ReportError::Schema {
            field: field.into(),
            constraint: constraint.into(),
        }
    }
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;
