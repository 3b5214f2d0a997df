// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot schedule event at t={at} before current time t={now}")]
    ScheduleInPast { at: f64, now: f64 },

    #[error("event time must be finite, got {0}")]
    NonFiniteTime(f64),

    #[error("invalid latency model: {0}")]
    InvalidLatencyModel(String),

    #[error("invalid environment profile: {0}")]
    InvalidEnvProfile(String),

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("deadlock: {0}")]
    Deadlock(String),

    #[error("missing {0} policy")]
    MissingPolicy(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
