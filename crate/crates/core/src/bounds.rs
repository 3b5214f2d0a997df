// SPDX-License-Identifier: Apache-2.0

//! Closed-form completion-time bounds for list-scheduled rollouts and for
//! synchronous and asynchronous generate/train pipelines.
//!
//! Notation: `Q` samples (or `N` per batch) on `K` workers, generation time
//! with mean `mu_gen` and maximum `l_gen`, per-sample training time
//! `mu_train` reused `e` times, async ratio `alpha` and train share `beta`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs<T> {
    pub q: usize,
    pub n: usize,
    pub k: usize,
    pub mu_gen: T,
    pub l_gen: T,
    pub mu_train: T,
    pub e: T,
    pub alpha: T,
    /// Train share. `None` means the optimal split is used.
    #[serde(default)]
    pub beta: Option<T>,
}

impl<T: Scalar> BoundInputs<T> {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        let z = T::zero();
        for (name, v) in [
            ("mu_gen", self.mu_gen),
            ("l_gen", self.l_gen),
            ("mu_train", self.mu_train),
            ("e", self.e),
            ("alpha", self.alpha),
        ] {
            if v.is_nan() || v < z {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.l_gen < self.mu_gen {
            return Err(Error::InvalidArgument(format!(
                "max generation time {} is below the mean {}",
                self.l_gen, self.mu_gen
            )));
        }
        if let Some(b) = self.beta {
            check_beta(b)?;
        }
        Ok(())
    }

    /// Evaluates every bound. Missing `beta` falls back to the optimum.
    pub fn report(&self) -> Result<BoundReport<T>> {
        self.validate()?;
        let (ps_sync, ps_async) = per_sample_bounds(self.n, self.k, self.mu_gen, self.l_gen, self.alpha)?;
        let beta_star = optimal_beta(self.n, self.k, self.alpha, self.mu_gen, self.l_gen, self.mu_train, self.e)?;
        let beta = self.beta.unwrap_or(beta_star);
        let async_bound = if beta > T::zero() && beta < T::one() {
            async_end2end_bound(self.n, self.k, beta, self.alpha, self.mu_gen, self.l_gen, self.mu_train, self.e)?
        } else {
            // beta* = 0 only when there is no training work at all.
            sync_end2end_bound(self.n, self.k, self.mu_gen, self.l_gen / (self.alpha + T::one()), T::zero(), self.e)?
        };
        let (gen_only, end2end) = speedup_limits(self.n, self.k, self.mu_gen, self.l_gen, self.mu_train, self.e)?;
        Ok(BoundReport {
            completion_time: completion_time_bound(self.q, self.k, self.mu_gen, self.l_gen)?,
            per_sample_sync: ps_sync,
            per_sample_async: ps_async,
            sync_end2end: sync_end2end_bound(self.n, self.k, self.mu_gen, self.l_gen, self.mu_train, self.e)?,
            async_end2end: async_bound,
            beta,
            optimal_beta: beta_star,
            speedup_gen_only: gen_only,
            speedup_end2end: end2end,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport<T> {
    pub completion_time: T,
    pub per_sample_sync: T,
    pub per_sample_async: T,
    pub sync_end2end: T,
    pub async_end2end: T,
    pub beta: T,
    pub optimal_beta: T,
    pub speedup_gen_only: T,
    pub speedup_end2end: T,
}

impl<T: Scalar> fmt::Display for BoundReport<T> {
    /// One `key=value` pair per line, in a fixed order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in [
            ("completion_time", self.completion_time),
            ("per_sample_sync", self.per_sample_sync),
            ("per_sample_async", self.per_sample_async),
            ("sync_end2end", self.sync_end2end),
            ("async_end2end", self.async_end2end),
            ("beta", self.beta),
            ("optimal_beta", self.optimal_beta),
            ("speedup_gen_only", self.speedup_gen_only),
            ("speedup_end2end", self.speedup_end2end),
        ] {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidArgument("K must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn check_beta<T: Scalar>(beta: T) -> Result<()> {
    if beta > T::zero() && beta < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {beta}")))
    }
}

/// `(Q/K) mu + L`.
pub fn completion_time_bound<T: Scalar>(q: usize, k: usize, mu_gen: T, l_gen: T) -> Result<T> {
    check_k(k)?;
    Ok(T::count(q) / T::count(k) * mu_gen + l_gen)
}

/// Per-sample completion time `(sync, async)` for a batch of `N`:
/// `mu/K + L/N` and `mu/K + L/((alpha+1)N)`.
pub fn per_sample_bounds<T: Scalar>(n: usize, k: usize, mu_gen: T, l_gen: T, alpha: T) -> Result<(T, T)> {
    check_k(k)?;
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let base = mu_gen / T::count(k);
    let n = T::count(n);
    Ok((base + l_gen / n, base + l_gen / ((alpha + T::one()) * n)))
}

/// `(N/K)(mu_gen + E mu_train) + L`.
pub fn sync_end2end_bound<T: Scalar>(n: usize, k: usize, mu_gen: T, l_gen: T, mu_train: T, e: T) -> Result<T> {
    check_k(k)?;
    Ok(T::count(n) / T::count(k) * (mu_gen + e * mu_train) + l_gen)
}

/// The generation and training terms of the async bound, before the max.
#[allow(clippy::too_many_arguments)]
pub fn async_terms<T: Scalar>(
    n: usize,
    k: usize,
    beta: T,
    alpha: T,
    mu_gen: T,
    l_gen: T,
    mu_train: T,
    e: T,
) -> Result<(T, T)> {
    check_k(k)?;
    check_beta(beta)?;
    let (n, k) = (T::count(n), T::count(k));
    let infer = T::one() - beta;
    let gen = n * mu_gen / (infer * k) + l_gen / ((alpha + T::one()) * infer);
    let train = e * n * mu_train / (beta * k);
    Ok((gen, train))
}

/// `max(N mu_g / ((1-beta)K) + L/((alpha+1)(1-beta)), E N mu_t / (beta K))`.
#[allow(clippy::too_many_arguments)]
pub fn async_end2end_bound<T: Scalar>(
    n: usize,
    k: usize,
    beta: T,
    alpha: T,
    mu_gen: T,
    l_gen: T,
    mu_train: T,
    e: T,
) -> Result<T> {
    let (g, t) = async_terms(n, k, beta, alpha, mu_gen, l_gen, mu_train, e)?;
    Ok(g.max(t))
}

/// Train share balancing the two async terms:
/// `E N mu_t / (N mu_g + K L/(alpha+1) + E N mu_t)`.
pub fn optimal_beta<T: Scalar>(n: usize, k: usize, alpha: T, mu_gen: T, l_gen: T, mu_train: T, e: T) -> Result<T> {
    check_k(k)?;
    let (n, k) = (T::count(n), T::count(k));
    let train = e * n * mu_train;
    let denom = n * mu_gen + k * l_gen / (alpha + T::one()) + train;
    if denom <= T::zero() {
        return Err(Error::InvalidArgument("optimal beta undefined: all work terms are zero".into()));
    }
    Ok(train / denom)
}

/// Asymptotic speedups `(gen_only, end2end)`: `(L+mu)/mu` with `K = N`, and
/// `1 + K L / (N (mu_g + E mu_t))`.
pub fn speedup_limits<T: Scalar>(n: usize, k: usize, mu_gen: T, l_gen: T, mu_train: T, e: T) -> Result<(T, T)> {
    check_k(k)?;
    if mu_gen <= T::zero() {
        return Err(Error::InvalidArgument("mean generation time must be positive".into()));
    }
    let denom = T::count(n) * (mu_gen + e * mu_train);
    if denom <= T::zero() {
        return Err(Error::InvalidArgument("N (mu_gen + E mu_train) must be positive".into()));
    }
    Ok(((l_gen + mu_gen) / mu_gen, T::one() + T::count(k) * l_gen / denom))
}

/// Whole-worker split for a train share: `floor(beta K)` trainers (at least
/// one) and the remainder (at least one) for inference.
pub fn worker_split(beta: f64, k: usize) -> Result<(usize, usize)> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("a split needs at least 2 workers, got {k}")));
    }
    let train = ((beta * k as f64 + 1e-9).floor() as usize).clamp(1, k - 1);
    Ok((train, k - train))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_workers_rejected() {
        assert!(completion_time_bound(10, 0, 1.0, 2.0).is_err());
        assert!(sync_end2end_bound(10, 0, 1.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn beta_outside_unit_interval_rejected() {
        for b in [0.0, 1.0, -0.5, 1.5] {
            assert!(async_end2end_bound(256, 32, b, 2.0, 10.0, 50.0, 2.0, 1.0).is_err());
        }
    }

    #[test]
    fn zero_train_gives_zero_beta() {
        assert_eq!(optimal_beta(256, 32, 2.0, 10.0, 50.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(optimal_beta(256, 32, 2.0, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn worker_split_rounds_down_with_minimums() {
        assert_eq!(worker_split(0.14201, 32).unwrap(), (4, 28));
        assert_eq!(worker_split(0.01, 8).unwrap(), (1, 7));
        assert_eq!(worker_split(0.99, 8).unwrap(), (7, 1));
        assert_eq!(worker_split(0.25, 8).unwrap(), (2, 6));
        assert!(worker_split(0.5, 1).is_err());
    }

    #[test]
    fn report_is_stable_key_value() {
        let r = BoundInputs {
            q: 256,
            n: 256,
            k: 32,
            mu_gen: 10.0,
            l_gen: 50.0,
            mu_train: 2.0,
            e: 1.0,
            alpha: 2.0,
            beta: None,
        }
        .report()
        .unwrap();
        let text = r.to_string();
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        assert_eq!(keys[0], "completion_time");
        assert_eq!(keys.len(), 9);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let mut b = BoundInputs {
            q: 1,
            n: 1,
            k: 1,
            mu_gen: 10.0f32,
            l_gen: 5.0,
            mu_train: 1.0,
            e: 1.0,
            alpha: 0.0,
            beta: None,
        };
        assert!(b.validate().is_err());
        b.l_gen = 10.0;
        assert!(b.validate().is_ok());
        b.beta = Some(1.0);
        assert!(b.validate().is_err());
    }
}
