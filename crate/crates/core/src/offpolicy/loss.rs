// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::policy::ToyPolicy;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgVariant {
    Ppo,
    DecoupledPpo,
    Tis,
    Cispo,
    Topr,
    Grpo,
}

impl PgVariant {
    pub const ALL: [PgVariant; 6] = [
        PgVariant::Ppo,
        PgVariant::DecoupledPpo,
        PgVariant::Tis,
        PgVariant::Cispo,
        PgVariant::Topr,
        PgVariant::Grpo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PgVariant::Ppo => "ppo",
            PgVariant::DecoupledPpo => "decoupled_ppo",
            PgVariant::Tis => "tis",
            PgVariant::Cispo => "cispo",
            PgVariant::Topr => "topr",
            PgVariant::Grpo => "grpo",
        }
    }
}

/// How per-token ratios combine within a sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One term per token, averaged over the sequence.
    #[default]
    TokenMean,
    /// One term per sequence using the product of token ratios.
    SequenceProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig<T> {
    pub variant: PgVariant,
    pub eps: T,
    pub eps_low: T,
    pub eps_high: T,
    /// Truncation cap for TIS and TOPR; infinity disables it.
    pub c: T,
    pub beta_kl: T,
    pub w_plus: T,
    pub w_minus: T,
    /// Cap on the train/inference engine probability ratio, if enabled.
    pub engine_mismatch_cap: Option<T>,
    pub aggregation: Aggregation,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            variant: PgVariant::Grpo,
            eps: T::lit(0.2),
            eps_low: T::lit(0.2),
            eps_high: T::lit(0.2),
            c: T::lit(5.0),
            beta_kl: T::zero(),
            w_plus: T::one(),
            w_minus: T::one(),
            engine_mismatch_cap: None,
            aggregation: Aggregation::TokenMean,
        }
    }
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(variant: PgVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        if !(self.eps > z && self.eps < T::one()) {
            return Err(Error::InvalidConfig(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.c > z) {
            return Err(Error::InvalidConfig(format!("truncation cap must be positive, got {}", self.c)));
        }
        for (name, v) in [
            ("eps_low", self.eps_low),
            ("eps_high", self.eps_high),
            ("beta_kl", self.beta_kl),
            ("w_plus", self.w_plus),
            ("w_minus", self.w_minus),
        ] {
            if v.is_nan() || v < z {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if let Some(cap) = self.engine_mismatch_cap {
            if !(cap > z) {
                return Err(Error::InvalidConfig(format!("engine mismatch cap must be positive, got {cap}")));
            }
        }
        Ok(())
    }
}

/// A sampled sequence with the log-probabilities recorded by the behavior
/// policy at generation time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub prompt: usize,
    pub tokens: Vec<usize>,
    /// Policy context used for each token.
    pub contexts: Vec<usize>,
    pub reward: T,
    pub behavior_logp: Vec<T>,
    pub advantage: T,
}

impl<T: Scalar> Trajectory<T> {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidArgument("trajectory must have at least one token".into()));
        }
        if self.tokens.len() != self.contexts.len() || self.tokens.len() != self.behavior_logp.len() {
            return Err(Error::InvalidArgument("trajectory token, context and log-prob lengths differ".into()));
        }
        if self.behavior_logp.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("behavior log-probabilities"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages<T> {
    pub values: Vec<T>,
    /// All rewards (numerically) equal; values are zero.
    pub degenerate: bool,
}

/// Group-normalised advantages `(r - mean) / std` with population std.
pub fn grpo_advantages<T: Scalar>(rewards: &[T]) -> Result<Advantages<T>> {
    if rewards.len() < 2 {
        return Err(Error::InvalidArgument(format!("a group needs at least 2 rewards, got {}", rewards.len())));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("rewards"));
    }
    let g = T::count(rewards.len());
    let mean = rewards.iter().fold(T::zero(), |a, &b| a + b) / g;
    let var = rewards.iter().fold(T::zero(), |a, &r| a + (r - mean) * (r - mean)) / g;
    let std = var.sqrt();
    if std < T::lit(1e-8) {
        return Ok(Advantages {
            values: vec![T::zero(); rewards.len()],
            degenerate: true,
        });
    }
    Ok(Advantages {
        values: rewards.iter().map(|&r| (r - mean) / std).collect(),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRatio<T> {
    pub per_token: Vec<T>,
    pub product: T,
}

/// Token ratios `exp(log pi_theta - log pi_old)` and their product, in log space.
pub fn trajectory_ratio<T: Scalar>(theta: &ToyPolicy<T>, traj: &Trajectory<T>) -> Result<TrajectoryRatio<T>> {
    traj.validate()?;
    let mut sum = T::zero();
    let mut per_token = Vec::with_capacity(traj.tokens.len());
    for ((&c, &tok), &b) in traj.contexts.iter().zip(&traj.tokens).zip(&traj.behavior_logp) {
        let d = theta.log_prob(c, tok) - b;
        sum = sum + d;
        per_token.push(d.exp());
    }
    let product = sum.exp();
    if !product.is_finite() || per_token.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("trajectory ratio"));
    }
    Ok(TrajectoryRatio { per_token, product })
}

/// Auxiliary policies. `old` is the training-side recomputation of the
/// behavior policy and is only read in engine-mismatch mode.
#[derive(Debug, Clone, Copy)]
pub struct Policies<'a, T> {
    pub theta: &'a ToyPolicy<T>,
    pub old: Option<&'a ToyPolicy<T>>,
    pub prox: Option<&'a ToyPolicy<T>>,
    pub reference: Option<&'a ToyPolicy<T>>,
}

impl<'a, T> Policies<'a, T> {
    pub fn theta(theta: &'a ToyPolicy<T>) -> Self {
        Self {
            theta,
            old: None,
            prox: None,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub objective: T,
    /// Gradient of the objective with respect to `theta`'s logits.
    pub grad: Vec<T>,
    /// Active branch per term, used to detect clip and min kinks.
    pub branches: Vec<u8>,
}

/// One term of the surrogate: either a token or a whole sequence.
struct Unit<T> {
    /// `(context, token)` pairs whose log-probs sum into `log pi_theta`.
    tokens: Vec<(usize, usize)>,
    log_theta: T,
    log_old: T,
    log_prox: T,
    /// Engine-mismatch weight (already capped), 1 when disabled.
    engine: T,
    scale: T,
}

fn clip_region<T: Scalar>(x: T, lo: T, hi: T) -> u8 {
    if x < lo {
        0
    } else if x > hi {
        2
    } else {
        1
    }
}

/// Evaluates the objective (to be maximised) and its gradient.
pub fn loss_and_grad<T: Scalar>(
    cfg: &LossConfig<T>,
    pols: &Policies<'_, T>,
    batch: &[Trajectory<T>],
) -> Result<LossOutput<T>> {
    evaluate(cfg, pols, batch, pols.theta)
}

/// Like [`loss_and_grad`] but stop-gradient weights are computed from
/// `frozen` instead of `theta`. With `frozen == theta` the two agree; the
/// finite-difference check perturbs `theta` while holding `frozen` fixed.
pub(crate) fn evaluate<T: Scalar>(
    cfg: &LossConfig<T>,
    pols: &Policies<'_, T>,
    batch: &[Trajectory<T>],
    frozen: &ToyPolicy<T>,
) -> Result<LossOutput<T>> {
    cfg.validate()?;
    let theta = pols.theta;
    if cfg.variant == PgVariant::DecoupledPpo && pols.prox.is_none() {
        return Err(Error::MissingPolicy("proximal"));
    }
    if cfg.beta_kl > T::zero() && pols.reference.is_none() {
        return Err(Error::MissingPolicy("reference"));
    }
    if cfg.engine_mismatch_cap.is_some() && pols.old.is_none() {
        return Err(Error::MissingPolicy("old"));
    }
    for p in [pols.old, pols.prox, pols.reference].into_iter().flatten() {
        if !p.same_shape(theta) {
            return Err(Error::InvalidArgument("auxiliary policy shape differs from theta".into()));
        }
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }

    let one = T::one();
    let n_seq = T::count(batch.len());
    let mut grad = vec![T::zero(); theta.logits().len()];
    let mut objective = T::zero();
    let mut branches = Vec::new();

    for traj in batch {
        traj.validate()?;
        if !traj.advantage.is_finite() {
            return Err(Error::NonFinite("advantage"));
        }
        let a = traj.advantage;
        let len = T::count(traj.tokens.len());
        let seq_scale = one / n_seq;

        // Per-token pieces.
        let mut token_units = Vec::with_capacity(traj.tokens.len());
        for (t, (&c, &tok)) in traj.contexts.iter().zip(&traj.tokens).enumerate() {
            let behavior = traj.behavior_logp[t];
            let (log_old, engine) = match (cfg.engine_mismatch_cap, pols.old) {
                (Some(cap), Some(old)) => {
                    let lo = old.log_prob(c, tok);
                    (lo, (lo - behavior).exp().min(cap))
                }
                _ => (behavior, one),
            };
            let log_prox = pols.prox.map_or(log_old, |p| p.log_prob(c, tok));
            token_units.push(Unit {
                tokens: vec![(c, tok)],
                log_theta: theta.log_prob(c, tok),
                log_old,
                log_prox,
                engine,
                scale: seq_scale / len,
            });
        }
        let units = match cfg.aggregation {
            Aggregation::TokenMean => token_units,
            Aggregation::SequenceProduct => {
                let sum = |f: &dyn Fn(&Unit<T>) -> T| token_units.iter().map(f).fold(T::zero(), |x, y| x + y);
                let engine_log = sum(&|u| u.engine.ln());
                let cap = cfg.engine_mismatch_cap.unwrap_or(T::infinity());
                vec![Unit {
                    tokens: token_units.iter().flat_map(|u| u.tokens.clone()).collect(),
                    log_theta: sum(&|u| u.log_theta),
                    log_old: sum(&|u| u.log_old),
                    log_prox: sum(&|u| u.log_prox),
                    engine: engine_log.exp().min(cap),
                    scale: seq_scale,
                }]
            }
        };

        for u in &units {
            // Frozen ratio for stop-gradient weights.
            let log_frozen: T = u
                .tokens
                .iter()
                .map(|&(c, tok)| frozen.log_prob(c, tok))
                .fold(T::zero(), |x, y| x + y);
            let rho = (u.log_theta - u.log_old).exp();
            let rho_sg = (log_frozen - u.log_old).exp();
            if !rho.is_finite() || !rho_sg.is_finite() {
                return Err(Error::NonFinite("importance ratio"));
            }
            // value: term value; dlog: d(term)/d(log pi_theta).
            let (value, dlog, branch) = match cfg.variant {
                PgVariant::Ppo | PgVariant::Grpo => {
                    let clipped = rho.clip(one - cfg.eps, one + cfg.eps);
                    let (un, cl) = (rho * a, clipped * a);
                    let region = clip_region(rho, one - cfg.eps, one + cfg.eps);
                    if un <= cl {
                        (un, rho * a, region * 2)
                    } else {
                        (cl, T::zero(), region * 2 + 1)
                    }
                }
                PgVariant::DecoupledPpo => {
                    let w = (u.log_prox - u.log_old).exp();
                    let q = (u.log_theta - u.log_prox).exp();
                    let un = w * q * a;
                    let cl = w * q.clip(one - cfg.eps, one + cfg.eps) * a;
                    let region = clip_region(q, one - cfg.eps, one + cfg.eps);
                    if un <= cl {
                        (un, un, region * 2)
                    } else {
                        (cl, T::zero(), region * 2 + 1)
                    }
                }
                PgVariant::Tis => {
                    let w = rho_sg.clip(T::zero(), cfg.c);
                    (w * a * u.log_theta, w * a, clip_region(rho_sg, T::zero(), cfg.c))
                }
                PgVariant::Cispo => {
                    let w = rho_sg.clip(one - cfg.eps_low, one + cfg.eps_high);
                    let r = clip_region(rho_sg, one - cfg.eps_low, one + cfg.eps_high);
                    (w * a * u.log_theta, w * a, r)
                }
                PgVariant::Topr => {
                    let (w, r) = if a > T::zero() {
                        (cfg.w_plus, 3)
                    } else {
                        (cfg.w_minus * rho_sg.clip(T::zero(), cfg.c), clip_region(rho_sg, T::zero(), cfg.c))
                    };
                    (w * a * u.log_theta, w * a, r)
                }
            };
            branches.push(branch);
            let k = u.scale * u.engine;
            objective = objective + k * value;
            let g = k * dlog;
            if g != T::zero() {
                for &(c, tok) in &u.tokens {
                    add_dlogp(&mut grad, theta, c, tok, g);
                }
            }
        }

        if cfg.beta_kl > T::zero() {
            let reference = pols.reference.expect("checked above");
            let scale = seq_scale / len;
            for &c in &traj.contexts {
                let lp = theta.log_probs(c);
                let lq = reference.log_probs(c);
                let kl = lp
                    .iter()
                    .zip(&lq)
                    .map(|(&x, &y)| x.exp() * (x - y))
                    .fold(T::zero(), |s, v| s + v);
                objective = objective - cfg.beta_kl * scale * kl;
                // d KL / d z_j = p_j ((log p_j - log q_j) - KL)
                for j in 0..theta.vocab() {
                    let d = lp[j].exp() * ((lp[j] - lq[j]) - kl);
                    let i = theta.index(c, j);
                    grad[i] = grad[i] - cfg.beta_kl * scale * d;
                }
            }
        }
    }
    if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("objective"));
    }
    Ok(LossOutput {
        objective,
        grad,
        branches,
    })
}

/// Adds `g * d log pi(tok | c) / d z` to `grad`: `g (e_tok - p)`.
fn add_dlogp<T: Scalar>(grad: &mut [T], theta: &ToyPolicy<T>, c: usize, tok: usize, g: T) {
    let p = theta.probs(c);
    for (j, pj) in p.into_iter().enumerate() {
        let i = theta.index(c, j);
        let e = if j == tok { T::one() } else { T::zero() };
        grad[i] = grad[i] + g * (e - pj);
    }
}
