// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simcore::Time;

pub type PolicyVersion = u64;

/// A completed trajectory waiting to be trained on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub id: u64,
    pub prompt: usize,
    pub init_version: PolicyVersion,
    pub finish_version: PolicyVersion,
    pub reward: f64,
    /// Number of generation turns (1 outside agentic mode).
    pub turns: u32,
    pub latency: Time,
    pub finished_at: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit { init_version: PolicyVersion },
    Defer,
}

/// FIFO sample buffer with a freshness bound.
///
/// Capacity is `floor((1+alpha) B)` and counts held samples, in-flight
/// generations and the batch currently being trained on. The version gap
/// is `ceil(alpha)`.
#[derive(Debug, Clone)]
pub struct SampleBuffer {
    queue: VecDeque<Sample>,
    batch: usize,
    alpha: f64,
    version: PolicyVersion,
    in_flight: usize,
    in_training: usize,
    max_occupancy: usize,
}

impl SampleBuffer {
    pub fn new(batch: usize, alpha: f64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if alpha.is_nan() || alpha < 0.0 {
            return Err(Error::InvalidArgument(format!("async ratio must be non-negative, got {alpha}")));
        }
        Ok(Self {
            queue: VecDeque::new(),
            batch,
            alpha,
            version: 0,
            in_flight: 0,
            in_training: 0,
            max_occupancy: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        if self.alpha.is_infinite() {
            usize::MAX
        } else {
            ((1.0 + self.alpha) * self.batch as f64 + 1e-9).floor() as usize
        }
    }

    pub fn gap(&self) -> u64 {
        if self.alpha.is_infinite() {
            u64::MAX
        } else {
            (self.alpha - 1e-9).ceil().max(0.0) as u64
        }
    }

    pub fn version(&self) -> PolicyVersion {
        self.version
    }

    pub fn held(&self) -> usize {
        self.queue.len()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn occupancy(&self) -> usize {
        self.queue.len() + self.in_flight + self.in_training
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    /// Oldest admissible init version at the current version.
    pub fn min_fresh_version(&self) -> PolicyVersion {
        self.version.saturating_sub(self.gap())
    }

    pub fn is_fresh(&self, init_version: PolicyVersion) -> bool {
        init_version >= self.min_fresh_version()
    }

    /// Admits a new generation if there is room, stamping the current version.
    pub fn admit(&mut self) -> Admission {
        if self.occupancy() < self.capacity() {
            self.in_flight += 1;
            self.max_occupancy = self.max_occupancy.max(self.occupancy());
            Admission::Admit {
                init_version: self.version,
            }
        } else {
            Admission::Defer
        }
    }

    /// Releases `n` in-flight admissions without producing samples.
    pub fn release(&mut self, n: usize) {
        self.in_flight -= n;
    }

    pub fn complete(&mut self, sample: Sample) {
        self.in_flight -= 1;
        self.queue.push_back(sample);
        self.max_occupancy = self.max_occupancy.max(self.occupancy());
    }

    pub fn can_get_batch(&self) -> bool {
        self.queue.len() >= self.batch
    }

    /// Removes the oldest `B` samples. The batch keeps occupying capacity
    /// until [`SampleBuffer::advance_version`].
    pub fn get_batch(&mut self) -> Option<Vec<Sample>> {
        if !self.can_get_batch() {
            return None;
        }
        self.in_training += self.batch;
        Some(self.queue.drain(..self.batch).collect())
    }

    /// Bumps the version, frees the trained batch and evicts held samples
    /// that are now too stale. Returns the evicted samples.
    pub fn advance_version(&mut self) -> Vec<Sample> {
        self.version += 1;
        self.in_training = 0;
        let min = self.min_fresh_version();
        let mut evicted = Vec::new();
        self.queue.retain(|s| {
            let fresh = s.init_version >= min;
            if !fresh {
                evicted.push(s.clone());
            }
            fresh
        });
        evicted
    }
}
