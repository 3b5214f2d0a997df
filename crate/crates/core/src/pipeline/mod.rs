// SPDX-License-Identifier: Apache-2.0

//! End-to-end generate/train pipelines.
//!
//! [`run_sync`] alternates a full rollout on all workers with training on
//! all workers. [`run_async`] splits workers into producers and trainers
//! that meet at a [`SampleBuffer`]; the buffer bounds both occupancy and the
//! policy-version gap of every consumed sample. [`env_manager`] holds the
//! rollout-only agentic simulations (environment-level asynchrony and
//! redundant environments).

mod buffer;
mod engine;
pub mod env_manager;
mod sync;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use buffer::{Admission, PolicyVersion, Sample, SampleBuffer};
pub use engine::run_async;
pub use sync::run_sync;

use crate::error::{Error, Result};
use crate::simcore::Time;
use crate::workload::{env_step, EnvProfile, EpisodeState, LatencyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Total workers `K`.
    pub workers: usize,
    /// Concurrent generations per inference worker.
    #[serde(default = "one")]
    pub slots_per_worker: usize,
    /// Train share; `None` runs synchronously on all workers.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Synchronous schedule driven through the buffer: generation is
    /// suspended from `get_batch` until the model update completes.
    #[serde(default)]
    pub merged: bool,
    #[serde(default)]
    pub alpha: f64,
    pub batch: usize,
    /// Training passes per sample `E`.
    #[serde(default = "one")]
    pub reuse: usize,
    pub train_latency: LatencyModel,
    #[serde(default)]
    pub update_cost: Time,
    pub generation: LatencyModel,
    #[serde(default)]
    pub env: Option<EnvProfile>,
    #[serde(default)]
    pub env_level_async: bool,
    #[serde(default)]
    pub partial_resume: bool,
    pub steps: usize,
    /// Leading steps excluded from the steady-state step time.
    #[serde(default)]
    pub warmup: usize,
}

fn one() -> usize {
    1
}

impl PipelineConfig {
    /// Non-agentic config with one slot per worker and no update cost.
    pub fn new(workers: usize, batch: usize, generation: LatencyModel, train_latency: LatencyModel) -> Self {
        Self {
            workers,
            slots_per_worker: 1,
            beta: None,
            merged: false,
            alpha: 0.0,
            batch,
            reuse: 1,
            train_latency,
            update_cost: 0.0,
            generation,
            env: None,
            env_level_async: false,
            partial_resume: false,
            steps: 10,
            warmup: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.slots_per_worker == 0 {
            return Err(Error::InvalidConfig("workers and slots_per_worker must be positive".into()));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("batch and steps must be positive".into()));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!("beta must lie in (0, 1), got {b}")));
            }
            if self.workers < 2 {
                return Err(Error::InvalidConfig("async mode needs at least 2 workers".into()));
            }
            if self.merged {
                return Err(Error::InvalidConfig("merged mode shares all workers; unset beta".into()));
            }
        }
        if !(self.update_cost >= 0.0) || !self.update_cost.is_finite() {
            return Err(Error::InvalidConfig(format!("update_cost must be finite and >= 0, got {}", self.update_cost)));
        }
        self.generation.validate()?;
        self.train_latency.validate()?;
        if let Some(env) = &self.env {
            env.validate()?;
        }
        Ok(())
    }
}

/// One training step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub start: Time,
    pub end: Time,
    /// From step start until the batch was available.
    pub gen_span: Time,
    pub train_span: Time,
    pub staleness_mean: f64,
    pub staleness_max: u64,
    /// Realized generation mean and max over the batch.
    pub gen_mean: Time,
    pub gen_max: Time,
    /// Realized per-sample train cost mean.
    pub train_mean: Time,
    pub evicted: usize,
    pub aborted: usize,
}

impl StepMetrics {
    pub fn duration(&self) -> Time {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub steps: Vec<StepMetrics>,
    pub total_time: Time,
    pub mean_step_time: Time,
    /// Mean step time after the warm-up steps.
    pub steady_step_time: Time,
    pub throughput: f64,
    pub infer_idle_fraction: f64,
    pub train_idle_fraction: f64,
    /// `hist[s]` counts consumed samples with staleness `s`.
    pub staleness_hist: Vec<u64>,
    pub wasted_seconds: Time,
    pub wasted_samples: usize,
    pub max_occupancy: usize,
    pub capacity: usize,
    pub consumed: usize,
    pub gen_mean: Time,
    pub gen_max: Time,
    pub train_mean: Time,
    pub producers: usize,
    pub trainers: usize,
    pub slots: usize,
}

impl RunMetrics {
    pub fn max_staleness(&self) -> u64 {
        self.staleness_hist.iter().rposition(|&c| c > 0).unwrap_or(0) as u64
    }

    pub fn step_times(&self) -> Vec<Time> {
        self.steps.iter().map(StepMetrics::duration).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Phase {
    Gen(Time),
    Env(Time),
}

/// Pre-drawn work of one generation: a single phase, or alternating
/// generation and environment phases in agentic mode.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EpisodeDraw {
    pub phases: Vec<Phase>,
    pub failed: bool,
    pub turns: u32,
}

impl EpisodeDraw {
    pub fn gen_time(&self) -> Time {
        self.phases
            .iter()
            .map(|p| match p {
                Phase::Gen(d) => *d,
                Phase::Env(_) => 0.0,
            })
            .sum()
    }
}

pub(crate) fn draw_episode<R: Rng + ?Sized>(
    generation: &LatencyModel,
    env: Option<&EnvProfile>,
    rng: &mut R,
) -> Result<EpisodeDraw> {
    let Some(env) = env else {
        return Ok(EpisodeDraw {
            phases: vec![Phase::Gen(generation.sample(rng))],
            failed: false,
            turns: 1,
        });
    };
    let mut state = EpisodeState::default();
    let mut phases = Vec::new();
    let mut turns = 0;
    loop {
        phases.push(Phase::Gen(generation.sample(rng)));
        turns += 1;
        let out = env_step(env, &mut state, rng)?;
        phases.push(Phase::Env(out.latency));
        if out.failed || out.done {
            return Ok(EpisodeDraw {
                phases,
                failed: out.failed,
                turns,
            });
        }
    }
}

pub(crate) fn mean_max(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for x in xs {
        n += 1;
        sum += x;
        max = max.max(x);
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (sum / n as f64, max)
    }
}

pub(crate) fn finish_metrics(mut m: RunMetrics, warmup: usize) -> RunMetrics {
    let times = m.step_times();
    m.total_time = m.steps.last().map_or(0.0, |s| s.end);
    m.mean_step_time = if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    let steady = &times[warmup.min(times.len().saturating_sub(1))..];
    m.steady_step_time = if steady.is_empty() {
        0.0
    } else {
        steady.iter().sum::<f64>() / steady.len() as f64
    };
    m.throughput = if m.total_time > 0.0 {
        m.consumed as f64 / m.total_time
    } else {
        0.0
    };
    m
}
