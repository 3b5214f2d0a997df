// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;

use asyncrl_core::bounds::completion_time_bound;
use asyncrl_core::BoundInputs;
use serde::Serialize;

use crate::error::Result;
use crate::table::ResultTable;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub point: usize,
    pub rep: usize,
    pub makespan: f64,
    pub bound: f64,
    /// `bound - makespan`; negative means a violation.
    pub slack: f64,
    /// Whether the bound used realized moments or the configured ones.
    pub realized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub checked: usize,
    pub violations: Vec<BoundCheck>,
    pub min_slack: Option<f64>,
    pub checks: Vec<BoundCheck>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "checked={} violations={} min_slack={}",
            self.checked,
            self.violations.len(),
            self.min_slack.map_or("n/a".to_string(), |s| s.to_string())
        )?;
        for v in &self.violations {
            writeln!(f, "violation point={} rep={} makespan={} bound={}", v.point, v.rep, v.makespan, v.bound)?;
        }
        Ok(())
    }
}

/// Checks every row group carrying a `makespan` against the completion
/// bound `(Q/K) mean + max`.
///
/// Rows that also report `tasks`, `realized_mean`, `realized_max` and
/// `slots` are checked against their own realized moments; the rest fall
/// back to the configured `inputs` (Q, K, mean, upper bound).
pub fn verify_bounds(table: &ResultTable, inputs: &BoundInputs) -> Result<Verdict> {
    let mut runs: BTreeMap<(usize, usize), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in &table.rows {
        if let Some(v) = r.value {
            runs.entry((r.point, r.rep)).or_default().insert(&r.metric, v);
        }
    }
    let mut checks = Vec::new();
    for ((point, rep), m) in runs {
        let Some(&makespan) = m.get("makespan") else { continue };
        let realized = ["tasks", "realized_mean", "realized_max", "slots"].map(|k| m.get(k).copied());
        let (bound, is_realized) = match realized {
            [Some(n), Some(mean), Some(max), Some(k)] => {
                if n == 0.0 {
                    (0.0, true)
                } else {
                    (completion_time_bound(n as usize, k as usize, mean, max)?, true)
                }
            }
            _ => (completion_time_bound(inputs.q, inputs.k, inputs.mu_gen, inputs.l_gen)?, false),
        };
        checks.push(BoundCheck {
            point,
            rep,
            makespan,
            bound,
            slack: bound - makespan,
            realized: is_realized,
        });
    }
    let violations: Vec<BoundCheck> = checks
        .iter()
        // Sums of many floats can overshoot an exact tie by a few ulps.
        .filter(|c| c.makespan > c.bound + 1e-9 * c.bound.abs().max(1.0))
        .cloned()
        .collect();
    let min_slack = checks.iter().map(|c| c.slack).min_by(f64::total_cmp);
    Ok(Verdict {
        checked: checks.len(),
        violations,
        min_slack,
        checks,
    })
}
