// SPDX-License-Identifier: Apache-2.0

use asyncrl_core::pipeline::env_manager::{run_env_level_async, run_redundant_rollout};
use asyncrl_core::pipeline::{run_async, run_sync, RunMetrics};
use asyncrl_core::scheduler::{
    run_batch_rollout_filtered, run_queue_scheduling, run_queue_scheduling_tasks, Placement, WorkerPool,
};
use asyncrl_core::simcore::point_seed;
use asyncrl_core::workload::make_tasks_with_difficulty;
use asyncrl_core::offpolicy::toy_train_loop;
use asyncrl_core::SeedState;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Mode};
use crate::error::Result;
use crate::table::{ResultTable, Row};

pub type Metrics = Vec<(&'static str, f64)>;

fn pipeline_metrics(m: &RunMetrics) -> Metrics {
    vec![
        ("step_time", m.steady_step_time),
        ("mean_step_time", m.mean_step_time),
        ("throughput", m.throughput),
        ("infer_idle_fraction", m.infer_idle_fraction),
        ("train_idle_fraction", m.train_idle_fraction),
        ("max_staleness", m.max_staleness() as f64),
        ("max_occupancy", m.max_occupancy as f64),
        ("capacity", m.capacity as f64),
        ("wasted_samples", m.wasted_samples as f64),
        ("trainers", m.trainers as f64),
        ("producers", m.producers as f64),
    ]
}

/// Runs one repetition of one (already swept) config.
pub fn run_point(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> Result<Metrics> {
    let s = SeedState::new(seed);
    Ok(match mode {
        Mode::Sync => {
            let mut p = cfg.pipeline_config()?;
            p.beta = None;
            pipeline_metrics(&run_sync(&p, &s)?)
        }
        Mode::Async => pipeline_metrics(&run_async(&cfg.pipeline_config()?, &s)?),
        Mode::BatchVsQueue => {
            let q = cfg.queue_scheduling();
            let queue = run_queue_scheduling(&q, &s)?;
            let batch = run_batch_rollout_filtered(&q, &s)?;
            vec![
                ("batch_time", batch.makespan),
                ("queue_time", queue.makespan),
                ("speedup", batch.makespan / queue.makespan),
                ("queue_idle_fraction", queue.idle_fraction),
                ("batch_idle_fraction", batch.idle_fraction),
                ("accepted_groups", queue.accepted_groups as f64),
                ("wasted_samples", queue.wasted_samples as f64),
            ]
        }
        Mode::Replication => {
            let prompts: Vec<usize> = (0..cfg.rollout_batch_size).collect();
            let tasks =
                make_tasks_with_difficulty(&prompts, cfg.group_size, 0, &cfg.generation, cfg.prompt_difficulty, &s)?;
            let pool = WorkerPool::infer(cfg.workers).with_slots(cfg.slots_per_worker);
            let pinned = run_queue_scheduling_tasks(&tasks, &pool, Placement::PinnedByPrompt, &cfg.reward, &s)?;
            let variant = run_queue_scheduling_tasks(&tasks, &pool, cfg.placement(), &cfg.reward, &s)?;
            let (n, mean, max) = variant.realized_moments();
            vec![
                ("pinned_time", pinned.makespan),
                ("variant_time", variant.makespan),
                ("speedup", pinned.makespan / variant.makespan),
                ("makespan", variant.generation_end),
                ("tasks", n as f64),
                ("realized_mean", mean),
                ("realized_max", max),
                ("slots", variant.slots as f64),
            ]
        }
        Mode::EnvAsync => {
            let r = run_env_level_async(&cfg.env_rollout_config(), &s)?;
            vec![
                ("env_async_time", r.env_async.step_time),
                ("sequential_time", r.sequential.step_time),
                ("speedup", r.speedup),
                ("failed_attempts", r.env_async.failed_attempts as f64),
            ]
        }
        Mode::Redundancy => {
            let v = run_redundant_rollout(&cfg.redundancy_plan(), &cfg.env, &cfg.generation, &s)?;
            let b = run_redundant_rollout(&cfg.baseline_plan(), &cfg.env, &cfg.generation, &s)?;
            vec![
                ("step_time", v.step_time),
                ("baseline_time", b.step_time),
                ("speedup", b.step_time / v.step_time),
                ("abandoned", v.abandoned as f64),
                ("failed_attempts", v.failed_attempts as f64),
            ]
        }
        Mode::Bounds => {
            let r = cfg.bound_inputs().report()?;
            vec![
                ("completion_time", r.completion_time),
                ("per_sample_sync", r.per_sample_sync),
                ("per_sample_async", r.per_sample_async),
                ("sync_end2end", r.sync_end2end),
                ("async_end2end", r.async_end2end),
                ("beta", r.beta),
                ("optimal_beta", r.optimal_beta),
                ("speedup_gen_only", r.speedup_gen_only),
                ("speedup_end2end", r.speedup_end2end),
            ]
        }
        Mode::Offpolicy => {
            let curve = toy_train_loop(&cfg.toy_task(), &cfg.train_config(seed))?;
            vec![
                ("final_reward", curve.final_reward),
                ("grad_norm_variance", curve.grad_norm_variance()),
            ]
        }
    })
}

/// Runs every sweep point for every repetition. Points run in parallel;
/// the table is sorted afterwards, so it does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let points = cfg.points()?;
    Ok(run_points(&points, cfg.mode(), cfg.repetitions, cfg.seed, cfg.paired, cfg.baseline_point))
}

/// Runs explicit `(label, config)` points. With `paired`, repetition `r`
/// uses the same seed at every point.
pub fn run_points(
    points: &[(String, ExperimentConfig)],
    mode: Mode,
    repetitions: usize,
    master: u64,
    paired: bool,
    baseline_point: usize,
) -> ResultTable {
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..repetitions).map(move |r| (p, r)))
        .collect();
    let rows: Vec<Row> = jobs
        .par_iter()
        .flat_map_iter(|&(p, rep)| {
            let (params, pcfg) = &points[p];
            let key = if paired { 0 } else { p as u64 };
            let seed = point_seed(master, key, rep as u64);
            let row = |metric: &str, value: Option<f64>, error: Option<String>| Row {
                point: p,
                params: params.clone(),
                rep,
                seed,
                metric: metric.to_string(),
                value,
                error,
            };
            match run_point(pcfg, pcfg.mode(), seed) {
                Ok(ms) => ms.into_iter().map(|(m, v)| row(m, Some(v), None)).collect::<Vec<_>>(),
                Err(e) => vec![row("error", None, Some(e.to_string()))],
            }
        })
        .collect();
    ResultTable::new(mode, baseline_point, rows)
}
