// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{grpo_advantages, loss_and_grad, LossConfig, Policies, Trajectory};
use super::policy::ToyPolicy;
use crate::error::{Error, Result};
use crate::simcore::SeedState;

/// Contextual bandit with Bernoulli rewards: one token per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditTask {
    pub contexts: usize,
    pub arms: usize,
    /// Success probability per `(context, arm)`, row-major.
    pub means: Vec<f64>,
}

impl BanditTask {
    /// Success probabilities drawn uniformly from `[0.05, 0.95]`.
    pub fn random(contexts: usize, arms: usize, seed: u64) -> Self {
        let mut rng = SeedState::new(seed).derive("bandit", 0).rng();
        let means = (0..contexts * arms).map(|_| rng.random_range(0.05..0.95)).collect();
        Self { contexts, arms, means }
    }

    pub fn best_reward(&self) -> f64 {
        (0..self.contexts)
            .map(|c| self.means[c * self.arms..(c + 1) * self.arms].iter().copied().fold(0.0, f64::max))
            .sum::<f64>()
            / self.contexts as f64
    }
}

/// Fixed-length sequence task: position `t` of prompt `q` uses context
/// `q * length + t`; reward is the fraction of positions hitting the target.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTask {
    pub prompts: usize,
    pub vocab: usize,
    pub length: usize,
    pub targets: Vec<usize>,
}

impl SequenceTask {
    pub fn random(prompts: usize, vocab: usize, length: usize, seed: u64) -> Self {
        let mut rng = SeedState::new(seed).derive("sequence", 0).rng();
        let targets = (0..prompts * length).map(|_| rng.random_range(0..vocab)).collect();
        Self {
            prompts,
            vocab,
            length,
            targets,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToyTask {
    Bandit(BanditTask),
    Sequence(SequenceTask),
}

impl ToyTask {
    fn shape(&self) -> (usize, usize) {
        match self {
            ToyTask::Bandit(b) => (b.contexts, b.arms),
            ToyTask::Sequence(s) => (s.prompts * s.length, s.vocab),
        }
    }

    fn prompts(&self) -> usize {
        match self {
            ToyTask::Bandit(b) => b.contexts,
            ToyTask::Sequence(s) => s.prompts,
        }
    }

    fn rollout<R: Rng + ?Sized>(&self, pol: &ToyPolicy<f64>, prompt: usize, rng: &mut R) -> Trajectory<f64> {
        let contexts: Vec<usize> = match self {
            ToyTask::Bandit(_) => vec![prompt],
            ToyTask::Sequence(s) => (0..s.length).map(|t| prompt * s.length + t).collect(),
        };
        let tokens: Vec<usize> = contexts.iter().map(|&c| pol.sample(c, rng)).collect();
        let behavior_logp = contexts.iter().zip(&tokens).map(|(&c, &t)| pol.log_prob(c, t)).collect();
        let reward = match self {
            ToyTask::Bandit(b) => {
                let u: f64 = rng.random();
                if u < b.means[prompt * b.arms + tokens[0]] {
                    1.0
                } else {
                    0.0
                }
            }
            ToyTask::Sequence(s) => {
                let hits = contexts.iter().zip(&tokens).filter(|(&c, &t)| s.targets[c] == t).count();
                hits as f64 / s.length as f64
            }
        };
        Trajectory {
            prompt,
            tokens,
            contexts,
            reward,
            behavior_logp,
            advantage: 0.0,
        }
    }

    /// Exact expected reward of `pol`, averaged over prompts.
    pub fn expected_reward(&self, pol: &ToyPolicy<f64>) -> f64 {
        match self {
            ToyTask::Bandit(b) => {
                (0..b.contexts)
                    .map(|c| {
                        pol.probs(c)
                            .iter()
                            .zip(&b.means[c * b.arms..(c + 1) * b.arms])
                            .map(|(p, m)| p * m)
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / b.contexts as f64
            }
            ToyTask::Sequence(s) => {
                (0..s.prompts * s.length)
                    .map(|c| pol.probs(c)[s.targets[c]])
                    .sum::<f64>()
                    / (s.prompts * s.length) as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossConfig<f64>,
    /// Behavior policy lag in versions.
    pub alpha: usize,
    pub steps: usize,
    pub prompts_per_step: usize,
    pub group_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Steps averaged for the final reward.
    pub eval_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            alpha: 0,
            steps: 300,
            prompts_per_step: 8,
            group_size: 8,
            lr: 0.5,
            epochs: 1,
            eval_window: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
    pub grad_norm: f64,
    pub mean_staleness: f64,
    pub max_staleness: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    pub final_reward: f64,
}

impl LearningCurve {
    /// Population variance of the per-step gradient norm.
    pub fn grad_norm_variance(&self) -> f64 {
        let n = self.points.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let m = self.points.iter().map(|p| p.grad_norm).sum::<f64>() / n;
        self.points.iter().map(|p| (p.grad_norm - m).powi(2)).sum::<f64>() / n
    }
}

/// Trains a [`ToyPolicy`] whose samples come from a snapshot `alpha`
/// versions behind the learner. The proximal policy is the learner at the
/// start of each step and the reference is the initial policy.
pub fn toy_train_loop(task: &ToyTask, cfg: &TrainConfig) -> Result<LearningCurve> {
    cfg.loss.validate()?;
    if cfg.steps == 0 || cfg.prompts_per_step == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("steps, prompts_per_step and epochs must be positive".into()));
    }
    if cfg.group_size < 2 {
        return Err(Error::InvalidConfig("group_size must be at least 2".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let (contexts, vocab) = task.shape();
    let reference = ToyPolicy::<f64>::uniform(contexts, vocab);
    let mut theta = reference.clone();
    // snapshots[i] is version (current - len + 1 + i).
    let mut snapshots: VecDeque<ToyPolicy<f64>> = VecDeque::from([theta.clone()]);
    let root = SeedState::new(cfg.seed);
    let mut points = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let behavior_version = step.saturating_sub(cfg.alpha);
        let behavior = &snapshots[behavior_version + snapshots.len() - 1 - step];
        let mut rng = root.derive("step", step as u64).rng();
        let mut batch = Vec::with_capacity(cfg.prompts_per_step * cfg.group_size);
        for _ in 0..cfg.prompts_per_step {
            let prompt = rng.random_range(0..task.prompts());
            let mut group: Vec<Trajectory<f64>> =
                (0..cfg.group_size).map(|_| task.rollout(behavior, prompt, &mut rng)).collect();
            let rewards: Vec<f64> = group.iter().map(|t| t.reward).collect();
            let adv = grpo_advantages(&rewards)?;
            for (t, a) in group.iter_mut().zip(adv.values) {
                t.advantage = a;
            }
            batch.extend(group);
        }
        let old = behavior.clone();
        let prox = theta.clone();
        let mut grad_norm = 0.0;
        for epoch in 0..cfg.epochs {
            let pols = Policies {
                theta: &theta,
                old: Some(&old),
                prox: Some(&prox),
                reference: Some(&reference),
            };
            let out = loss_and_grad(&cfg.loss, &pols, &batch)?;
            if epoch == 0 {
                grad_norm = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            }
            for (z, g) in theta.logits_mut().iter_mut().zip(&out.grad) {
                *z += cfg.lr * g;
            }
        }
        snapshots.push_back(theta.clone());
        while snapshots.len() > cfg.alpha + 1 {
            snapshots.pop_front();
        }
        let staleness = step - behavior_version;
        points.push(CurvePoint {
            step,
            mean_reward: task.expected_reward(&theta),
            grad_norm,
            mean_staleness: staleness as f64,
            max_staleness: staleness,
        });
    }
    let w = cfg.eval_window.clamp(1, points.len());
    let final_reward = points[points.len() - w..].iter().map(|p| p.mean_reward).sum::<f64>() / w as f64;
    Ok(LearningCurve { points, final_reward })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offpolicy::loss::PgVariant;

    #[test]
    fn bandit_learns() {
        let task = ToyTask::Bandit(BanditTask::random(4, 10, 1));
        let cfg = TrainConfig {
            loss: LossConfig::new(PgVariant::Grpo),
            steps: 150,
            ..TrainConfig::default()
        };
        let curve = toy_train_loop(&task, &cfg).unwrap();
        let start = task.expected_reward(&ToyPolicy::uniform(4, 10));
        assert!(curve.final_reward > start + 0.2, "{} vs {}", curve.final_reward, start);
    }

    #[test]
    fn sequence_task_learns() {
        let task = ToyTask::Sequence(SequenceTask::random(2, 5, 3, 4));
        let cfg = TrainConfig {
            loss: LossConfig::new(PgVariant::Tis),
            steps: 100,
            ..TrainConfig::default()
        };
        let curve = toy_train_loop(&task, &cfg).unwrap();
        assert!(curve.final_reward > 0.5);
    }

    #[test]
    fn staleness_follows_alpha() {
        let task = ToyTask::Bandit(BanditTask::random(2, 3, 1));
        let cfg = TrainConfig {
            alpha: 3,
            steps: 10,
            ..TrainConfig::default()
        };
        let curve = toy_train_loop(&task, &cfg).unwrap();
        let s: Vec<usize> = curve.points.iter().map(|p| p.max_staleness).collect();
        assert_eq!(s, vec![0, 1, 2, 3, 3, 3, 3, 3, 3, 3]);
    }
}
