// SPDX-License-Identifier: Apache-2.0

use super::loss::{evaluate, LossConfig, Policies, Trajectory};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gradients below this magnitude are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport<T> {
    pub analytic: Vec<T>,
    pub numeric: Vec<T>,
    /// Per-logit relative error.
    pub rel_err: Vec<T>,
    /// Logits within `10 h` of a clip or min kink.
    pub near_kink: Vec<bool>,
    /// Largest relative error over logits not flagged as near a kink.
    pub max_rel_err: T,
}

impl<T: Scalar> GradReport<T> {
    pub fn any_kink(&self) -> bool {
        self.near_kink.iter().any(|&k| k)
    }
}

/// Central finite differences over every logit of `theta`.
///
/// Stop-gradient weights stay frozen at the unperturbed policy, so the
/// numeric derivative targets the same surrogate as the analytic gradient.
pub fn finite_diff_check<T: Scalar>(
    cfg: &LossConfig<T>,
    pols: &Policies<'_, T>,
    batch: &[Trajectory<T>],
    h: T,
) -> Result<GradReport<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let frozen = pols.theta.clone();
    let base = evaluate(cfg, pols, batch, &frozen)?;
    let n = frozen.logits().len();
    let mut numeric = Vec::with_capacity(n);
    let mut near_kink = Vec::with_capacity(n);
    let mut rel_err = Vec::with_capacity(n);
    let floor = T::lit(REL_ERR_FLOOR);
    let ten = T::lit(10.0);
    let mut max_rel = T::zero();

    let at = |i: usize, delta: T| -> Result<super::loss::LossOutput<T>> {
        let mut p = frozen.clone();
        p.logits_mut()[i] = p.logits()[i] + delta;
        let shifted = Policies { theta: &p, ..*pols };
        evaluate(cfg, &shifted, batch, &frozen)
    };

    for i in 0..n {
        let plus = at(i, h)?;
        let minus = at(i, -h)?;
        let d = (plus.objective - minus.objective) / (h + h);
        let kink = at(i, ten * h)?.branches != base.branches || at(i, -ten * h)?.branches != base.branches;
        let a = base.grad[i];
        let err = (a - d).abs() / a.abs().max(d.abs()).max(floor);
        if !kink {
            max_rel = max_rel.max(err);
        }
        numeric.push(d);
        near_kink.push(kink);
        rel_err.push(err);
    }
    Ok(GradReport {
        analytic: base.grad,
        numeric,
        rel_err,
        near_kink,
        max_rel_err: max_rel,
    })
}
