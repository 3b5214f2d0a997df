// SPDX-License-Identifier: Apache-2.0

//! Fixed recipes that regenerate the data behind each figure and check the
//! qualitative claim attached to it.

use std::fmt;

use asyncrl_core::scheduler::{FilterPredicate, RewardStage};
use asyncrl_core::workload::{EnvProfile, LatencyModel};
use serde::Serialize;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{ReportError, Result};
use crate::experiment::run_points;
use crate::table::ResultTable;

pub const FIGURES: [&str; 6] = ["fig9", "fig10", "fig3a-shape", "fig7-direction", "fig8-direction", "takeaway3"];

/// Relative step-time margin within which a larger async ratio counts as
/// no further gain.
pub const SATURATION_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureOutcome {
    pub name: String,
    pub table: ResultTable,
    pub checks: Vec<Check>,
}

impl FigureOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for FigureOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, self.name, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Runs the named recipe. `reps` overrides the recipe's repetition count.
pub fn reproduce_figure(name: &str, seed: u64, reps: Option<usize>) -> Result<FigureOutcome> {
    let (table, checks) = match name {
        "fig9" => fig9(seed, reps.unwrap_or(3)),
        "fig10" => fig10(seed, reps.unwrap_or(5)),
        "fig3a-shape" => fig3a(seed, reps.unwrap_or(1)),
        "fig7-direction" => fig7(seed, reps.unwrap_or(20)),
        "fig8-direction" => fig8(seed, reps.unwrap_or(20)),
        "takeaway3" => takeaway3(seed, reps.unwrap_or(1)),
        _ => return Err(ReportError::UnknownFigure(name.to_string())),
    }?;
    Ok(FigureOutcome {
        name: name.to_string(),
        table,
        checks,
    })
}

fn mean(t: &ResultTable, point: usize, metric: &str) -> Result<f64> {
    if let Some(row) = t.errors().find(|r| r.point == point) {
        return Err(ReportError::Table(format!(
            "point {} failed: {}",
            row.params,
            row.error.as_deref().unwrap_or("")
        )));
    }
    t.summary_for(point, metric)
        .map(|s| s.mean)
        .ok_or_else(|| ReportError::Table(format!("no `{metric}` at point {point}")))
}

/// Environment-level async rollout against the turn barrier, 512
/// episodes of 30 Gaussian environment steps and 1 s generation turns.
fn fig9(seed: u64, reps: usize) -> Result<(ResultTable, Vec<Check>)> {
    let settings = [(10.0, 1.0), (10.0, 5.0), (10.0, 7.0), (10.0, 10.0), (50.0, 5.0)];
    let points: Vec<(String, ExperimentConfig)> = settings
        .iter()
        .map(|&(mu, sigma)| {
            let cfg = ExperimentConfig {
                mode: Some(Mode::EnvAsync),
                rollout_batch_size: 512,
                env: EnvProfile::reliable(LatencyModel::gaussian(mu, sigma, mu + 6.0 * sigma), 30),
                generation: LatencyModel::constant(1.0),
                ..ExperimentConfig::default()
            };
            (format!("mu={mu};sigma={sigma}"), cfg)
        })
        .collect();
    let t = run_points(&points, Mode::EnvAsync, reps, seed, true, 0);
    let speedup = |p: usize| -> Result<f64> { Ok(mean(&t, p, "sequential_time")? / mean(&t, p, "env_async_time")?) };
    let s: Vec<f64> = (0..settings.len()).map(speedup).collect::<Result<_>>()?;
    let checks = vec![
        Check::new("speedup_10_10", (2.0..=3.0).contains(&s[3]), format!("speedup at (10,10) = {:.3}, want [2.0, 3.0]", s[3])),
        Check::new(
            "variance_ordering",
            s[0] < s[2] && s[2] < s[3],
            format!("(10,1) {:.3} < (10,7) {:.3} < (10,10) {:.3}", s[0], s[2], s[3]),
        ),
        Check::new("mean_ordering", s[4] < s[1], format!("(50,5) {:.3} < (10,5) {:.3}", s[4], s[1])),
    ];
    Ok((t, checks))
}

pub const FIG10_GROUPS: [usize; 5] = [32, 33, 34, 35, 36];
pub const FIG10_SIZES: [usize; 5] = [8, 9, 10, 11, 12];

/// Redundant environment heatmap at 256 trajectories with fail-slow and
/// fail-stop environments.
fn fig10(seed: u64, reps: usize) -> Result<(ResultTable, Vec<Check>)> {
    let env = EnvProfile {
        step_latency: LatencyModel::gaussian(10.0, 5.0, 40.0),
        max_steps: 10,
        terminal_prob: 0.0,
        fail_slow_prob: 0.1,
        fail_slow_multiplier: 5.0,
        fail_stop_prob: 0.05,
        fail_stop_timeout: 400.0,
    };
    let mut points = Vec::new();
    for &g in &FIG10_GROUPS {
        for &s in &FIG10_SIZES {
            let cfg = ExperimentConfig {
                mode: Some(Mode::Redundancy),
                rollout_batch_size: 256,
                num_env_groups: g,
                group_size: s,
                env: env.clone(),
                generation: LatencyModel::constant(1.0),
                ..ExperimentConfig::default()
            };
            points.push((format!("num_env_groups={g};group_size={s}"), cfg));
        }
    }
    let t = run_points(&points, Mode::Redundancy, reps, seed, true, 0);
    let idx = |gi: usize, si: usize| gi * FIG10_SIZES.len() + si;
    let base = mean(&t, idx(0, 0), "step_time")?;
    let best = mean(&t, idx(4, 4), "step_time")?;
    let speedup = base / best;
    let mut monotone = true;
    let mut worst = String::from("none");
    for si in 0..FIG10_SIZES.len() {
        for gi in 1..FIG10_GROUPS.len() {
            let (a, b) = (mean(&t, idx(gi - 1, si), "step_time")?, mean(&t, idx(gi, si), "step_time")?);
            if b > a {
                monotone = false;
                worst = format!("group_size {}: {} groups {:.2} -> {} groups {:.2}", FIG10_SIZES[si], FIG10_GROUPS[gi - 1], a, FIG10_GROUPS[gi], b);
            }
        }
    }
    let checks = vec![
        Check::new("speedup_36x12", speedup >= 3.0, format!("36x12 over 32x8 = {speedup:.3}, want >= 3.0")),
        Check::new("monotone_in_groups", monotone, format!("first increase: {worst}")),
    ];
    Ok((t, checks))
}

/// 40 workers, 256 samples per step, long-tail generation and a training
/// cost comparable to the generation share.
fn pipeline_base() -> ExperimentConfig {
    ExperimentConfig {
        mode: Some(Mode::Async),
        workers: 40,
        rollout_batch_size: 256,
        generation: LatencyModel::gaussian(10.0, 10.0, 50.0),
        train_latency: LatencyModel::gaussian(8.0, 0.8, 16.0),
        steps: 30,
        warmup: 8,
        async_generation_ratio: 2.0,
        ..ExperimentConfig::default()
    }
}

pub const FIG3A_TRAINERS: [usize; 7] = [8, 12, 16, 20, 24, 28, 32];

/// Step time against the train/infer split, with the sync run as point 0.
fn fig3a(seed: u64, reps: usize) -> Result<(ResultTable, Vec<Check>)> {
    let base = pipeline_base();
    let mut points = vec![(
        "sync".to_string(),
        ExperimentConfig {
            mode: Some(Mode::Sync),
            ..base.clone()
        },
    )];
    for &t in &FIG3A_TRAINERS {
        points.push((
            format!("trainers={t}"),
            ExperimentConfig {
                train_fraction: Some(t as f64 / base.workers as f64),
                ..base.clone()
            },
        ));
    }
    let t = run_points(&points, Mode::Async, reps, seed, true, 0);
    let sync = mean(&t, 0, "step_time")?;
    let times: Vec<f64> = (1..points.len()).map(|p| mean(&t, p, "step_time")).collect::<Result<_>>()?;
    let (arg, best) = times
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty sweep");
    let checks = vec![
        Check::new(
            "interior_optimum",
            arg > 0 && arg + 1 < times.len(),
            format!("best split at {} trainers", FIG3A_TRAINERS[arg]),
        ),
        Check::new("async_beats_sync", best < sync, format!("best async {best:.2} vs sync {sync:.2}")),
    ];
    Ok((t, checks))
}

pub const TAKEAWAY3_ALPHAS: [f64; 5] = [0.0, 1.0, 2.0, 4.0, 8.0];

/// Async ratio sweep at a fixed 16/24 split.
fn takeaway3(seed: u64, reps: usize) -> Result<(ResultTable, Vec<Check>)> {
    let points: Vec<(String, ExperimentConfig)> = TAKEAWAY3_ALPHAS
        .iter()
        .map(|&a| {
            (
                format!("async_generation_ratio={a}"),
                ExperimentConfig {
                    async_generation_ratio: a,
                    train_fraction: Some(0.4),
                    ..pipeline_base()
                },
            )
        })
        .collect();
    let t = run_points(&points, Mode::Async, reps, seed, true, 0);
    let times: Vec<f64> = (0..points.len()).map(|p| mean(&t, p, "step_time")).collect::<Result<_>>()?;
    let floor = times.iter().copied().fold(f64::INFINITY, f64::min);
    let sat = times
        .iter()
        .position(|&x| x <= floor * (1.0 + SATURATION_TOLERANCE))
        .map(|i| TAKEAWAY3_ALPHAS[i])
        .expect("minimum is attained");
    let checks = vec![Check::new(
        "saturating_alpha",
        sat <= 4.0,
        format!("step time within {SATURATION_TOLERANCE} of its floor from alpha = {sat}, want <= 4"),
    )];
    Ok((t, checks))
}

/// Long-tail lengths: median 10, sigma 1, capped at 25x the median.
pub fn long_tail() -> LatencyModel {
    LatencyModel::lognormal_from_median(10.0, 1.0, 250.0)
}

pub const FIG7_BATCHES: [usize; 4] = [8, 16, 32, 64];

/// Queue scheduling with 16 extra prompts against filtered batch rollout.
fn fig7(seed: u64, reps: usize) -> Result<(ResultTable, Vec<Check>)> {
    let points: Vec<(String, ExperimentConfig)> = FIG7_BATCHES
        .iter()
        .map(|&b| {
            (
                format!("rollout_batch_size={b}"),
                ExperimentConfig {
                    mode: Some(Mode::BatchVsQueue),
                    rollout_batch_size: b,
                    group_size: 8,
                    max_additional_running_prompts: 16,
                    workers: 4,
                    slots_per_worker: 16,
                    generation: long_tail(),
                    reward: RewardStage::unbounded(LatencyModel::constant(1.0)),
                    filter: FilterPredicate::ZeroVarianceReject,
                    ..ExperimentConfig::default()
                },
            )
        })
        .collect();
    let t = run_points(&points, Mode::BatchVsQueue, reps, seed, true, 0);
    let speedup = mean(&t, 0, "batch_time")? / mean(&t, 0, "queue_time")?;
    let checks = vec![Check::new(
        "queue_speedup_b8",
        speedup >= 1.5,
        format!("batch/queue at B=8, G=8 = {speedup:.3}, want >= 1.5"),
    )];
    Ok((t, checks))
}

pub const FIG8_PROMPTS: [usize; 3] = [4, 16, 64];

/// Prompt replication against per-prompt pinning, 16 responses per prompt
/// on 8 workers with 16 slots each.
fn fig8(seed: u64, reps: usize) -> Result<(ResultTable, Vec<Check>)> {
    let points: Vec<(String, ExperimentConfig)> = FIG8_PROMPTS
        .iter()
        .map(|&b| {
            (
                format!("{b}x16"),
                ExperimentConfig {
                    mode: Some(Mode::Replication),
                    rollout_batch_size: b,
                    group_size: 16,
                    is_num_return_sequences_expand: true,
                    workers: 8,
                    slots_per_worker: 16,
                    generation: long_tail(),
                    prompt_difficulty: 1.0,
                    ..ExperimentConfig::default()
                },
            )
        })
        .collect();
    let t = run_points(&points, Mode::Replication, reps, seed, true, 0);
    let s: Vec<f64> = (0..points.len())
        .map(|p| Ok(mean(&t, p, "pinned_time")? / mean(&t, p, "variant_time")?))
        .collect::<Result<_>>()?;
    let last = s.len() - 1;
    let checks = vec![Check::new(
        "replication_grows_with_prompts",
        s[last] > s[0],
        format!("64x16 {:.3} > 4x16 {:.3}", s[last], s[0]),
    )];
    Ok((t, checks))
}
