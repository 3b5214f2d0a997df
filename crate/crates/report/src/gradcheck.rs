// SPDX-License-Identifier: Apache-2.0

use asyncrl_core::offpolicy::{finite_diff_check, LossConfig, PgVariant, Policies, ToyPolicy, Trajectory};
use asyncrl_core::SeedState;
use rand::Rng;
use serde::Serialize;

use crate::error::Result;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// A random off-policy batch: theta and the proximal policy are jittered
/// copies of the behavior policy, the reference is independent.
#[derive(Debug, Clone)]
pub struct Instance {
    pub theta: ToyPolicy<f64>,
    pub behavior: ToyPolicy<f64>,
    pub prox: ToyPolicy<f64>,
    pub reference: ToyPolicy<f64>,
    pub batch: Vec<Trajectory<f64>>,
}

impl Instance {
    pub fn random(seed: u64, contexts: usize, vocab: usize, trajectories: usize) -> Self {
        let mut rng = SeedState::new(seed).derive("gradcheck", 0).rng();
        let behavior = ToyPolicy::random(contexts, vocab, 1.0, &mut rng);
        let mut jitter = |s: f64| {
            let z = behavior.logits().iter().map(|z| z + rng.random_range(-s..=s)).collect();
            ToyPolicy::from_logits(contexts, vocab, z).expect("same shape")
        };
        let theta = jitter(0.6);
        let prox = jitter(0.3);
        let reference = ToyPolicy::random(contexts, vocab, 1.0, &mut rng);
        let batch = (0..trajectories)
            .map(|_| {
                let len = rng.random_range(1..=3);
                let ctx: Vec<usize> = (0..len).map(|_| rng.random_range(0..contexts)).collect();
                let tokens: Vec<usize> = ctx.iter().map(|&c| behavior.sample(c, &mut rng)).collect();
                let behavior_logp = ctx.iter().zip(&tokens).map(|(&c, &t)| behavior.log_prob(c, t)).collect();
                Trajectory {
                    prompt: 0,
                    tokens,
                    contexts: ctx,
                    reward: 0.0,
                    behavior_logp,
                    advantage: rng.random_range(-1.5..1.5),
                }
            })
            .collect();
        Self {
            theta,
            behavior,
            prox,
            reference,
            batch,
        }
    }

    pub fn policies(&self) -> Policies<'_, f64> {
        Policies {
            theta: &self.theta,
            old: Some(&self.behavior),
            prox: Some(&self.prox),
            reference: Some(&self.reference),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub variant: &'static str,
    /// Kink-free instances checked.
    pub instances: usize,
    /// Instances skipped because a logit sat near a clip boundary.
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Checks `cfg` on `instances` kink-free random instances, drawing seeds
/// `seed, seed + 1, ...` and skipping instances that touch a kink. Gives up
/// after `20 * instances` draws; the summary then reports fewer instances.
pub fn gradcheck(cfg: &LossConfig<f64>, instances: usize, seed: u64) -> Result<GradcheckSummary> {
    let (mut done, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut s = seed;
    while done < instances && done + skipped < 20 * instances {
        let inst = Instance::random(s, 3, 4, 4);
        s += 1;
        let report = finite_diff_check(cfg, &inst.policies(), &inst.batch, STEP)?;
        if report.any_kink() {
            skipped += 1;
            continue;
        }
        worst = worst.max(report.max_rel_err);
        done += 1;
    }
    Ok(GradcheckSummary {
        variant: cfg.variant.as_str(),
        instances: done,
        skipped,
        max_rel_err: worst,
    })
}

/// The configured loss with each objective swapped in.
pub fn all_variants(base: &LossConfig<f64>) -> Vec<LossConfig<f64>> {
    PgVariant::ALL
        .iter()
        .map(|&variant| LossConfig { variant, ..*base })
        .collect()
}
