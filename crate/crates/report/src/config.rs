// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration.
//!
//! Configs are TOML. Top-level keys follow the rollout-system naming
//! (`async_generation_ratio`, `rollout_batch_size`, `num_env_groups`,
//! `group_size`, `is_num_return_sequences_expand`,
//! `max_additional_running_prompts`); everything else has a default, and
//! [`ExperimentConfig::echo`] writes the fully populated config back out.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use asyncrl_core::bounds::optimal_beta;
use asyncrl_core::offpolicy::{BanditTask, ToyTask, TrainConfig};
use asyncrl_core::pipeline::env_manager::{EnvRolloutConfig, RolloutMode};
use asyncrl_core::pipeline::PipelineConfig;
use asyncrl_core::scheduler::{
    FilterPredicate, FilterRule, Placement, QueueScheduling, RedundancyPlan, RewardStage, WorkerPool,
};
use asyncrl_core::workload::{EnvProfile, LatencyModel, OutcomeModel};
use asyncrl_core::{BoundInputs, LossConfig};
use serde::{Deserialize, Serialize};

use crate::error::{ReportError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sync,
    Async,
    BatchVsQueue,
    Replication,
    EnvAsync,
    Redundancy,
    Bounds,
    Offpolicy,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
            Mode::BatchVsQueue => "batch-vs-queue",
            Mode::Replication => "replication",
            Mode::EnvAsync => "env-async",
            Mode::Redundancy => "redundancy",
            Mode::Bounds => "bounds",
            Mode::Offpolicy => "offpolicy",
        }
    }

    /// Metric summarised against the baseline point, and whether the
    /// speedup column applies to it (time-like metrics only).
    pub fn primary_metric(self) -> (&'static str, bool) {
        match self {
            Mode::Sync | Mode::Async | Mode::Redundancy => ("step_time", true),
            Mode::BatchVsQueue => ("queue_time", true),
            Mode::Replication => ("variant_time", true),
            Mode::EnvAsync => ("env_async_time", true),
            Mode::Bounds => ("async_end2end", true),
            Mode::Offpolicy => ("final_reward", false),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Toy bandit used by `offpolicy` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffpolicySection {
    pub contexts: usize,
    pub arms: usize,
    /// Seed of the bandit means; the training seed comes from the run.
    pub task_seed: u64,
    pub steps: usize,
    pub prompts_per_step: usize,
    pub lr: f64,
    pub epochs: usize,
    pub eval_window: usize,
    /// Random instances per objective for `gradcheck`.
    pub gradcheck_instances: usize,
}

impl Default for OffpolicySection {
    fn default() -> Self {
        Self {
            contexts: 8,
            arms: 10,
            task_seed: 0,
            steps: 300,
            prompts_per_step: 8,
            lr: 16.0,
            epochs: 1,
            eval_window: 30,
            gradcheck_instances: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Defaults to `sync` when `async_generation_ratio` is 0, else `async`.
    pub mode: Option<Mode>,
    pub seed: u64,
    pub repetitions: usize,
    /// Reuse one random stream per repetition across sweep points.
    pub paired: bool,

    pub async_generation_ratio: f64,
    /// Samples per step in pipeline modes, prompts per step in
    /// `batch-vs-queue` and `replication`, trajectories in env modes.
    pub rollout_batch_size: usize,
    pub group_size: usize,
    pub num_env_groups: usize,
    pub is_num_return_sequences_expand: bool,
    pub max_additional_running_prompts: usize,

    pub workers: usize,
    pub slots_per_worker: usize,
    /// Share of workers that train in async mode; `None` picks the optimum.
    pub train_fraction: Option<f64>,
    pub steps: usize,
    pub warmup: usize,
    pub reuse: usize,
    pub update_cost: f64,
    pub generation: LatencyModel,
    pub train_latency: LatencyModel,

    pub env: EnvProfile,
    /// Run pipeline modes as multi-turn episodes against `env`.
    pub agentic: bool,
    pub env_level_async: bool,
    pub gen_slots: Option<usize>,
    pub baseline_env_groups: usize,
    pub baseline_group_size: usize,

    pub reward: RewardStage,
    pub filter: FilterPredicate,
    pub outcome: OutcomeModel,
    /// Log-space spread of per-prompt difficulty (0 for i.i.d. lengths).
    pub prompt_difficulty: f64,

    pub loss: LossConfig,
    pub offpolicy: OffpolicySection,

    pub sweep: BTreeMap<String, Vec<f64>>,
    pub baseline_point: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 0,
            repetitions: 1,
            paired: true,
            async_generation_ratio: 0.0,
            rollout_batch_size: 256,
            group_size: 8,
            num_env_groups: 32,
            is_num_return_sequences_expand: false,
            max_additional_running_prompts: 0,
            workers: 32,
            slots_per_worker: 1,
            train_fraction: None,
            steps: 20,
            warmup: 5,
            reuse: 1,
            update_cost: 0.0,
            generation: LatencyModel::gaussian(10.0, 10.0, 50.0),
            train_latency: LatencyModel::gaussian(2.0, 0.2, 4.0),
            env: EnvProfile::reliable(LatencyModel::gaussian(10.0, 5.0, 40.0), 10),
            agentic: false,
            env_level_async: false,
            gen_slots: None,
            baseline_env_groups: 32,
            baseline_group_size: 8,
            reward: RewardStage::instant(),
            filter: FilterPredicate::None,
            outcome: OutcomeModel::default(),
            prompt_difficulty: 0.0,
            loss: LossConfig::default(),
            offpolicy: OffpolicySection::default(),
            sweep: BTreeMap::new(),
            baseline_point: 0,
        }
    }
}

/// Keys accepted on sweep axes.
pub const SWEEP_KEYS: &[&str] = &[
    "async_generation_ratio",
    "rollout_batch_size",
    "group_size",
    "num_env_groups",
    "max_additional_running_prompts",
    "workers",
    "slots_per_worker",
    "train_fraction",
    "steps",
    "update_cost",
    "prompt_difficulty",
    "loss.c",
];

fn count(key: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(ReportError::schema(format!("sweep.{key}"), format!("expected a non-negative integer, got {v}")))
    }
}

/// Loads and validates a TOML config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml_named(&text, &path.display().to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_named(text, "<config>")
    }

    fn from_toml_named(text: &str, name: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ReportError::Parse {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The config with every default filled in, as TOML.
    pub fn echo(&self) -> Result<String> {
        let mut full = self.clone();
        full.mode = Some(self.mode());
        toml::to_string(&full).map_err(|e| ReportError::Serialize(e.to_string()))
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(if self.async_generation_ratio > 0.0 {
            Mode::Async
        } else {
            Mode::Sync
        })
    }

    pub fn placement(&self) -> Placement {
        if self.is_num_return_sequences_expand {
            Placement::Global
        } else {
            Placement::PinnedByPrompt
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("repetitions", self.repetitions),
            ("rollout_batch_size", self.rollout_batch_size),
            ("group_size", self.group_size),
            ("num_env_groups", self.num_env_groups),
            ("workers", self.workers),
            ("slots_per_worker", self.slots_per_worker),
            ("steps", self.steps),
            ("baseline_env_groups", self.baseline_env_groups),
            ("baseline_group_size", self.baseline_group_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ReportError::schema(field, "must be at least 1"));
            }
        }
        let r = self.async_generation_ratio;
        if !(r >= 0.0) || !r.is_finite() {
            return Err(ReportError::schema("async_generation_ratio", format!("must be finite and >= 0, got {r}")));
        }
        if let Some(b) = self.train_fraction {
            if !(b > 0.0 && b < 1.0) {
                return Err(ReportError::schema("train_fraction", format!("must lie in (0, 1), got {b}")));
            }
        }
        if !(self.update_cost >= 0.0) || !self.update_cost.is_finite() {
            return Err(ReportError::schema("update_cost", "must be finite and >= 0"));
        }
        if !(self.prompt_difficulty >= 0.0) || !self.prompt_difficulty.is_finite() {
            return Err(ReportError::schema("prompt_difficulty", "must be finite and >= 0"));
        }
        for (field, m) in [("generation", &self.generation), ("train_latency", &self.train_latency)] {
            m.validate().map_err(|e| ReportError::schema(field, e.to_string()))?;
        }
        self.env.validate().map_err(|e| ReportError::schema("env", e.to_string()))?;
        self.outcome.validate().map_err(|e| ReportError::schema("outcome", e.to_string()))?;
        self.loss.validate().map_err(|e| ReportError::schema("loss", e.to_string()))?;
        if self.mode() == Mode::Offpolicy && r.fract() != 0.0 {
            return Err(ReportError::schema("async_generation_ratio", "offpolicy mode needs an integer lag"));
        }
        for (key, values) in &self.sweep {
            if !SWEEP_KEYS.contains(&key.as_str()) {
                return Err(ReportError::schema(
                    format!("sweep.{key}"),
                    format!("unknown parameter (expected one of {})", SWEEP_KEYS.join(", ")),
                ));
            }
            if values.is_empty() {
                return Err(ReportError::schema(format!("sweep.{key}"), "needs at least one value"));
            }
        }
        let points = self.points()?;
        if self.baseline_point >= points.len() {
            return Err(ReportError::schema(
                "baseline_point",
                format!("must index one of the {} sweep points", points.len()),
            ));
        }
        for (_, p) in &points {
            if !self.sweep.is_empty() {
                p.validate()?;
            }
        }
        Ok(())
    }

    /// Returns a copy with one sweep parameter set.
    pub fn with_param(&self, key: &str, v: f64) -> Result<Self> {
        let mut c = self.clone();
        match key {
            "async_generation_ratio" => c.async_generation_ratio = v,
            "rollout_batch_size" => c.rollout_batch_size = count(key, v)?,
            "group_size" => c.group_size = count(key, v)?,
            "num_env_groups" => c.num_env_groups = count(key, v)?,
            "max_additional_running_prompts" => c.max_additional_running_prompts = count(key, v)?,
            "workers" => c.workers = count(key, v)?,
            "slots_per_worker" => c.slots_per_worker = count(key, v)?,
            "train_fraction" => c.train_fraction = Some(v),
            "steps" => c.steps = count(key, v)?,
            "update_cost" => c.update_cost = v,
            "prompt_difficulty" => c.prompt_difficulty = v,
            "loss.c" => c.loss.c = v,
            _ => return Err(ReportError::schema(format!("sweep.{key}"), "unknown parameter")),
        }
        c.sweep.clear();
        c.baseline_point = 0;
        Ok(c)
    }

    /// Cartesian product of the sweep axes (last key varies fastest), each
    /// with a `key=value;...` label. Without axes: one point labelled `base`.
    pub fn points(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        let mut out = vec![(Vec::<String>::new(), {
            let mut c = self.clone();
            c.sweep.clear();
            c.baseline_point = 0;
            c
        })];
        for (key, values) in &self.sweep {
            let mut next = Vec::with_capacity(out.len() * values.len());
            for (label, cfg) in &out {
                for &v in values {
                    let mut l = label.clone();
                    l.push(format!("{key}={v}"));
                    next.push((l, cfg.with_param(key, v)?));
                }
            }
            out = next;
        }
        Ok(out
            .into_iter()
            .map(|(l, c)| (if l.is_empty() { "base".to_string() } else { l.join(";") }, c))
            .collect())
    }

    pub fn bound_inputs(&self) -> BoundInputs {
        let n = self.rollout_batch_size;
        BoundInputs {
            q: n,
            n,
            k: self.workers,
            mu_gen: self.generation.effective_mean(),
            l_gen: self.generation.upper(),
            mu_train: self.train_latency.effective_mean(),
            e: self.reuse as f64,
            alpha: self.async_generation_ratio,
            beta: self.train_fraction,
        }
    }

    /// Configured train share, or the optimum of the async bound.
    pub fn beta(&self) -> Result<f64> {
        if let Some(b) = self.train_fraction {
            return Ok(b);
        }
        let i = self.bound_inputs();
        Ok(optimal_beta(i.n, i.k, i.alpha, i.mu_gen, i.l_gen, i.mu_train, i.e)?)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut p = PipelineConfig::new(
            self.workers,
            self.rollout_batch_size,
            self.generation.clone(),
            self.train_latency.clone(),
        );
        p.slots_per_worker = self.slots_per_worker;
        p.alpha = self.async_generation_ratio;
        p.reuse = self.reuse;
        p.update_cost = self.update_cost;
        p.steps = self.steps;
        p.warmup = self.warmup;
        if self.agentic {
            p.env = Some(self.env.clone());
            p.env_level_async = self.env_level_async;
        }
        if self.mode() == Mode::Async {
            if self.async_generation_ratio == 0.0 && self.train_fraction.is_none() {
                // No lag allowed: share all workers, which replays sync.
                p.merged = true;
            } else {
                p.beta = Some(self.beta()?);
            }
        }
        Ok(p)
    }

    /// Filtered rollout of `rollout_batch_size` groups of `group_size`.
    pub fn queue_scheduling(&self) -> QueueScheduling {
        QueueScheduling {
            rule: FilterRule {
                group_size: self.group_size,
                predicate: self.filter,
                target_groups: self.rollout_batch_size,
                max_additional_running_prompts: self.max_additional_running_prompts,
            },
            pool: WorkerPool::infer(self.workers).with_slots(self.slots_per_worker),
            placement: Placement::Global,
            generation: self.generation.clone(),
            reward: self.reward.clone(),
            outcome: self.outcome,
            prompt_budget: None,
            log_events: false,
        }
    }

    pub fn redundancy_plan(&self) -> RedundancyPlan {
        RedundancyPlan {
            num_env_groups: self.num_env_groups,
            group_size: self.group_size,
            rollout_batch_size: self.rollout_batch_size,
        }
    }

    pub fn baseline_plan(&self) -> RedundancyPlan {
        RedundancyPlan {
            num_env_groups: self.baseline_env_groups,
            group_size: self.baseline_group_size,
            rollout_batch_size: self.rollout_batch_size,
        }
    }

    pub fn env_rollout_config(&self) -> EnvRolloutConfig {
        EnvRolloutConfig {
            env: self.env.clone(),
            generation: self.generation.clone(),
            env_slots: self.rollout_batch_size,
            target: self.rollout_batch_size,
            gen_slots: self.gen_slots,
            mode: RolloutMode::EnvAsync,
        }
    }

    pub fn toy_task(&self) -> ToyTask {
        let o = &self.offpolicy;
        ToyTask::Bandit(BanditTask::random(o.contexts, o.arms, o.task_seed))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let o = &self.offpolicy;
        TrainConfig {
            loss: self.loss,
            alpha: self.async_generation_ratio as usize,
            steps: o.steps,
            prompts_per_step: o.prompts_per_step,
            group_size: self.group_size,
            lr: o.lr,
            epochs: o.epochs,
            eval_window: o.eval_window,
            seed,
        }
    }
}
