// SPDX-License-Identifier: Apache-2.0

use super::engine::{run_async, train_time};
use super::{draw_episode, finish_metrics, mean_max, PipelineConfig, RunMetrics, StepMetrics};
use crate::error::{Error, Result};
use crate::scheduler::list_schedule;
use crate::simcore::SeedState;

/// Synchronous training: each step list-schedules `B` generations on all
/// `K * slots` slots from the step start, then trains on all `K` workers,
/// then pays the update cost.
///
/// Task `i` of step `s` draws from stream `("task", s * B + i)` and the
/// step's training costs from `("train", s)`, the same streams the
/// asynchronous engine uses, so an `alpha = 0` merged run replays this one.
/// Agentic configs run through the merged engine directly.
pub fn run_sync(cfg: &PipelineConfig, seed: &SeedState) -> Result<RunMetrics> {
    cfg.validate()?;
    if cfg.beta.is_some() {
        return Err(Error::InvalidConfig("synchronous runs take no train share".into()));
    }
    if cfg.env.is_some() {
        let mut merged = cfg.clone();
        merged.merged = true;
        merged.alpha = 0.0;
        return run_async(&merged, seed);
    }
    let slots = cfg.workers * cfg.slots_per_worker;
    let mut m = RunMetrics {
        steps: Vec::with_capacity(cfg.steps),
        total_time: 0.0,
        mean_step_time: 0.0,
        steady_step_time: 0.0,
        throughput: 0.0,
        infer_idle_fraction: 0.0,
        train_idle_fraction: 0.0,
        staleness_hist: vec![0],
        wasted_seconds: 0.0,
        wasted_samples: 0,
        max_occupancy: cfg.batch,
        capacity: cfg.batch,
        consumed: 0,
        gen_mean: 0.0,
        gen_max: 0.0,
        train_mean: 0.0,
        producers: cfg.workers,
        trainers: cfg.workers,
        slots,
    };
    let mut t = 0.0;
    let mut gen_busy = 0.0;
    let mut train_busy = 0.0;
    let mut all_gen = Vec::with_capacity(cfg.steps * cfg.batch);
    let mut train_sum = 0.0;
    for step in 0..cfg.steps {
        let mut durations = Vec::with_capacity(cfg.batch);
        for i in 0..cfg.batch {
            let seq = (step * cfg.batch + i) as u64;
            let mut rng = seed.derive("task", seq).rng();
            durations.push(draw_episode(&cfg.generation, None, &mut rng)?.gen_time());
        }
        let gen_end = list_schedule(&durations, slots, t)
            .into_iter()
            .fold(t, |acc, (_, _, f)| acc.max(f));
        let (train, train_mean) = train_time(cfg, seed, step, cfg.workers);
        let end = (gen_end + train) + cfg.update_cost;
        let (gen_mean, gen_max) = mean_max(durations.iter().copied());
        gen_busy += durations.iter().sum::<f64>();
        train_busy += train;
        train_sum += train_mean;
        all_gen.extend_from_slice(&durations);
        m.staleness_hist[0] += cfg.batch as u64;
        m.consumed += cfg.batch;
        m.steps.push(StepMetrics {
            step,
            start: t,
            end,
            gen_span: gen_end - t,
            train_span: train,
            staleness_mean: 0.0,
            staleness_max: 0,
            gen_mean,
            gen_max,
            train_mean,
            evicted: 0,
            aborted: 0,
        });
        t = end;
    }
    (m.gen_mean, m.gen_max) = mean_max(all_gen);
    m.train_mean = train_sum / cfg.steps as f64;
    if t > 0.0 {
        m.infer_idle_fraction = (1.0 - gen_busy / (slots as f64 * t)).clamp(0.0, 1.0);
        m.train_idle_fraction = (1.0 - train_busy / t).clamp(0.0, 1.0);
    }
    Ok(finish_metrics(m, cfg.warmup))
}
