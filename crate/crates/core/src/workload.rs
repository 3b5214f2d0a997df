// SPDX-License-Identifier: Apache-2.0

//! Generative models of work: per-sample generation latencies, environment
//! step latencies with fail-slow / fail-stop behaviour, and task construction.

use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::simcore::{SeedState, Time};

/// Rejection attempts for truncated draws before falling back to a clamp.
const MAX_REJECTIONS: usize = 100;

/// Distribution of a latency in seconds. Every draw lies in `[0, upper()]`.
///
/// For the Gaussian and log-normal kinds, `mean`/`std` and `mu`/`sigma` are
/// the pre-truncation parameters; [`LatencyModel::effective_mean`] reports
/// the mean of the truncated law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyModel {
    Constant {
        value: f64,
    },
    TruncatedGaussian {
        mean: f64,
        std: f64,
        upper: f64,
    },
    /// `exp(N(mu, sigma^2))` truncated to `(0, upper]`.
    LogNormal {
        mu: f64,
        sigma: f64,
        upper: f64,
    },
    Empirical {
        samples: Vec<f64>,
    },
}

impl LatencyModel {
    pub fn constant(value: f64) -> Self {
        LatencyModel::Constant { value }
    }

    pub fn gaussian(mean: f64, std: f64, upper: f64) -> Self {
        LatencyModel::TruncatedGaussian { mean, std, upper }
    }

    /// Log-normal with the given median and log-space spread.
    pub fn lognormal_from_median(median: f64, sigma: f64, upper: f64) -> Self {
        LatencyModel::LogNormal {
            mu: median.ln(),
            sigma,
            upper,
        }
    }

    /// Reads one latency (seconds) per line; blank lines and `#` comments
    /// are skipped.
    pub fn load_empirical(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_empirical(&text)
    }

    pub fn parse_empirical(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| {
                Error::InvalidLatencyModel(format!("line {}: not a number: {line:?}", lineno + 1))
            })?;
            samples.push(v);
        }
        let model = LatencyModel::Empirical { samples };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLatencyModel(m));
        match self {
            LatencyModel::Constant { value } => {
                if !value.is_finite() || *value < 0.0 {
                    return bad(format!("constant value must be finite and >= 0, got {value}"));
                }
            }
            LatencyModel::TruncatedGaussian { mean, std, upper } => {
                if !mean.is_finite() || !std.is_finite() || *std < 0.0 {
                    return bad(format!("gaussian needs finite mean and std >= 0, got ({mean}, {std})"));
                }
                if !upper.is_finite() || *upper <= 0.0 {
                    return bad(format!("upper bound must be finite and > 0, got {upper}"));
                }
            }
            LatencyModel::LogNormal { mu, sigma, upper } => {
                if !mu.is_finite() || !sigma.is_finite() || *sigma < 0.0 {
                    return bad(format!("lognormal needs finite mu and sigma >= 0, got ({mu}, {sigma})"));
                }
                if !upper.is_finite() || *upper <= 0.0 {
                    return bad(format!("upper bound must be finite and > 0, got {upper}"));
                }
            }
            LatencyModel::Empirical { samples } => {
                if samples.is_empty() {
                    return bad("empirical sample list is empty".into());
                }
                if let Some(v) = samples.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return bad(format!("empirical samples must be finite and >= 0, got {v}"));
                }
            }
        }
        Ok(())
    }

    /// Upper bound `L` of the support.
    pub fn upper(&self) -> f64 {
        match self {
            LatencyModel::Constant { value } => *value,
            LatencyModel::TruncatedGaussian { upper, .. } | LatencyModel::LogNormal { upper, .. } => *upper,
            LatencyModel::Empirical { samples } => samples.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Analytic mean of the (truncated) law.
    pub fn effective_mean(&self) -> f64 {
        match self {
            LatencyModel::Constant { value } => *value,
            LatencyModel::TruncatedGaussian { mean, std, upper } => {
                if *std == 0.0 {
                    return mean.clamp(0.0, *upper);
                }
                let n = Normal::standard();
                let a = (0.0 - mean) / std;
                let b = (upper - mean) / std;
                let z = n.cdf(b) - n.cdf(a);
                if z < 1e-300 {
                    return mean.clamp(0.0, *upper);
                }
                mean + std * (n.pdf(a) - n.pdf(b)) / z
            }
            LatencyModel::LogNormal { mu, sigma, upper } => {
                if *sigma == 0.0 {
                    return mu.exp().min(*upper);
                }
                let n = Normal::standard();
                let ln_u = upper.ln();
                let num = n.cdf((ln_u - mu - sigma * sigma) / sigma);
                let den = n.cdf((ln_u - mu) / sigma);
                if den < 1e-300 {
                    return *upper;
                }
                (mu + 0.5 * sigma * sigma).exp() * num / den
            }
            LatencyModel::Empirical { samples } => samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }

    /// Draws one latency. The model must already be valid.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Time {
        match self {
            LatencyModel::Constant { value } => *value,
            LatencyModel::TruncatedGaussian { mean, std, upper } => {
                if *std == 0.0 {
                    return mean.clamp(0.0, *upper);
                }
                let mut x = *mean;
                for _ in 0..MAX_REJECTIONS {
                    let z: f64 = StandardNormal.sample(rng);
                    x = mean + std * z;
                    if (0.0..=*upper).contains(&x) {
                        return x;
                    }
                }
                x.clamp(0.0, *upper)
            }
            LatencyModel::LogNormal { mu, sigma, upper } => {
                let mut x = *upper;
                for _ in 0..MAX_REJECTIONS {
                    let z: f64 = StandardNormal.sample(rng);
                    x = (mu + sigma * z).exp();
                    if x <= *upper {
                        return x;
                    }
                }
                x.min(*upper)
            }
            LatencyModel::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        }
    }
}

/// Validating single draw.
pub fn sample_latency<R: Rng + ?Sized>(model: &LatencyModel, rng: &mut R) -> Result<Time> {
    model.validate()?;
    Ok(model.sample(rng))
}

fn default_multiplier() -> f64 {
    1.0
}

/// Step-latency and failure behaviour of an agentic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvProfile {
    pub step_latency: LatencyModel,
    pub max_steps: u32,
    /// Per-step probability that the episode ends before `max_steps`.
    #[serde(default)]
    pub terminal_prob: f64,
    #[serde(default)]
    pub fail_slow_prob: f64,
    #[serde(default = "default_multiplier")]
    pub fail_slow_multiplier: f64,
    /// Per-episode probability, drawn at the first step.
    #[serde(default)]
    pub fail_stop_prob: f64,
    #[serde(default)]
    pub fail_stop_timeout: Time,
}

impl EnvProfile {
    pub fn reliable(step_latency: LatencyModel, max_steps: u32) -> Self {
        Self {
            step_latency,
            max_steps,
            terminal_prob: 0.0,
            fail_slow_prob: 0.0,
            fail_slow_multiplier: 1.0,
            fail_stop_prob: 0.0,
            fail_stop_timeout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.step_latency.validate()?;
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidEnvProfile(format!("{name} must lie in [0,1], got {p}")))
            }
        };
        prob("terminal_prob", self.terminal_prob)?;
        prob("fail_slow_prob", self.fail_slow_prob)?;
        prob("fail_stop_prob", self.fail_stop_prob)?;
        if self.max_steps == 0 {
            return Err(Error::InvalidEnvProfile("max_steps must be positive".into()));
        }
        if !(self.fail_slow_multiplier >= 1.0) || !self.fail_slow_multiplier.is_finite() {
            return Err(Error::InvalidEnvProfile(format!(
                "fail_slow_multiplier must be >= 1, got {}",
                self.fail_slow_multiplier
            )));
        }
        if !(self.fail_stop_timeout >= 0.0) || !self.fail_stop_timeout.is_finite() {
            return Err(Error::InvalidEnvProfile(format!(
                "fail_stop_timeout must be finite and >= 0, got {}",
                self.fail_stop_timeout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpisodeState {
    pub steps: u32,
    pub done: bool,
    pub failed: bool,
}

impl EpisodeState {
    pub fn is_finished(&self) -> bool {
        self.done || self.failed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub latency: Time,
    pub done: bool,
    pub failed: bool,
}

/// Advances an episode by one environment step.
///
/// Draw order is fixed (fail-stop on the first step, latency, fail-slow,
/// terminal) so that replays are deterministic.
pub fn env_step<R: Rng + ?Sized>(env: &EnvProfile, state: &mut EpisodeState, rng: &mut R) -> Result<StepOutcome> {
    if state.is_finished() {
        return Err(Error::EpisodeFinished);
    }
    if state.steps == 0 {
        let u: f64 = rng.random();
        if u < env.fail_stop_prob {
            state.failed = true;
            return Ok(StepOutcome {
                latency: env.fail_stop_timeout,
                done: false,
                failed: true,
            });
        }
    }
    let mut latency = env.step_latency.sample(rng);
    let slow: f64 = rng.random();
    if slow < env.fail_slow_prob {
        latency *= env.fail_slow_multiplier;
    }
    let terminal: f64 = rng.random();
    state.steps += 1;
    let done = state.steps >= env.max_steps || terminal < env.terminal_prob;
    state.done = done;
    Ok(StepOutcome {
        latency,
        done,
        failed: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Running,
    Aborted,
    Done,
}

/// One unit of generation work.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTask {
    pub id: usize,
    pub prompt: usize,
    pub replica: usize,
    pub replicas: usize,
    pub init_version: u64,
    pub service_time: Time,
    pub state: TaskState,
    /// Fraction of `service_time` already completed when aborted.
    pub completed_fraction: f64,
}

impl RolloutTask {
    pub fn new(id: usize, prompt: usize, service_time: Time) -> Self {
        Self {
            id,
            prompt,
            replica: 0,
            replicas: 1,
            init_version: 0,
            service_time,
            state: TaskState::Pending,
            completed_fraction: 0.0,
        }
    }
}

/// Expands each prompt into `n` independent tasks. Service times come from a
/// per-prompt stream, so permuting `prompts` permutes tasks without changing
/// any prompt's draws.
pub fn make_tasks(
    prompts: &[usize],
    n: usize,
    version: u64,
    model: &LatencyModel,
    seed: &SeedState,
) -> Result<Vec<RolloutTask>> {
    make_tasks_with_difficulty(prompts, n, version, model, 0.0, seed)
}

/// Like [`make_tasks`], but every response of a prompt is scaled by a shared
/// factor `exp(sigma * Z)`, `Z ~ N(0, 1)`, and re-capped at the model's
/// upper bound. Hard prompts then produce uniformly long responses.
pub fn make_tasks_with_difficulty(
    prompts: &[usize],
    n: usize,
    version: u64,
    model: &LatencyModel,
    difficulty_sigma: f64,
    seed: &SeedState,
) -> Result<Vec<RolloutTask>> {
    if n == 0 {
        return Err(Error::InvalidArgument("replicas per prompt must be >= 1".into()));
    }
    if !(difficulty_sigma >= 0.0) || !difficulty_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "difficulty sigma must be finite and >= 0, got {difficulty_sigma}"
        )));
    }
    model.validate()?;
    let upper = model.upper();
    let mut tasks = Vec::with_capacity(prompts.len() * n);
    for &prompt in prompts {
        let mut rng = seed.derive("prompt", prompt as u64).rng();
        let factor = if difficulty_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut seed.derive("difficulty", prompt as u64).rng());
            (difficulty_sigma * z).exp()
        } else {
            1.0
        };
        for replica in 0..n {
            let base = model.sample(&mut rng);
            tasks.push(RolloutTask {
                id: tasks.len(),
                prompt,
                replica,
                replicas: n,
                init_version: version,
                service_time: if factor == 1.0 { base } else { (base * factor).min(upper) },
                state: TaskState::Pending,
                completed_fraction: 0.0,
            });
        }
    }
    Ok(tasks)
}

/// Per-prompt difficulty: each response is correct with probability
/// `p ~ Beta(alpha, beta)` drawn once per prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5 }
    }
}

impl OutcomeModel {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "outcome Beta parameters must be positive, got ({}, {})",
                self.alpha, self.beta
            )))
        }
    }

    pub fn success_prob<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Beta::new(self.alpha, self.beta)
            .expect("validated beta parameters")
            .sample(rng)
    }
}
