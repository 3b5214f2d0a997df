// SPDX-License-Identifier: Apache-2.0

//! Rollout-only agentic simulations.
//!
//! Each environment slot runs one episode (alternating generation and
//! environment steps) and restarts it only after a fail-stop. Collection
//! ends when `target` trajectories have completed, so `env_slots > target`
//! admits redundant episodes. Episode attempt `k` of slot `i` draws from
//! stream `("env", i) / ("attempt", k)`, so runs with different modes or
//! slot counts see the same episodes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{draw_episode, EpisodeDraw, Phase};
use crate::error::{Error, Result};
use crate::scheduler::{plan_redundant_envs, RedundancyPlan};
use crate::simcore::{Engine, EventKind, Flow, SeedState, SimEvent, StopCondition, Time};
use crate::workload::{EnvProfile, LatencyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Episodes advance independently; a generation slot is only held
    /// while generating.
    EnvAsync,
    /// All episodes advance turn by turn: batched generation for every
    /// active episode, then every environment step, waiting for the slowest.
    TurnBarrier,
    /// Episodes advance independently but hold a generation slot for the
    /// whole episode, including environment waits.
    SlotHeld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvRolloutConfig {
    pub env: EnvProfile,
    /// Generation time per turn.
    pub generation: LatencyModel,
    pub env_slots: usize,
    pub target: usize,
    /// Concurrent generations; `None` is unbounded.
    #[serde(default)]
    pub gen_slots: Option<usize>,
    pub mode: RolloutMode,
}

impl EnvRolloutConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.generation.validate()?;
        if self.env_slots == 0 || self.target == 0 || self.gen_slots == Some(0) {
            return Err(Error::InvalidConfig("env_slots, target and gen_slots must be positive".into()));
        }
        if self.env_slots < self.target {
            return Err(Error::InvalidConfig(format!(
                "{} environment slots cannot produce {} trajectories",
                self.env_slots, self.target
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnvRolloutMetrics {
    /// Time at which the `target`-th trajectory completed.
    pub step_time: Time,
    pub completed: usize,
    pub failed_attempts: usize,
    /// Episodes still running when the target was reached.
    pub abandoned: usize,
    pub gen_busy: Time,
    pub turns: u64,
}

fn episode(cfg: &EnvRolloutConfig, seed: &SeedState, slot: usize, attempt: u64) -> Result<EpisodeDraw> {
    let mut rng = seed.derive("env", slot as u64).derive("attempt", attempt).rng();
    draw_episode(&cfg.generation, Some(&cfg.env), &mut rng)
}

fn len(p: Phase) -> Time {
    match p {
        Phase::Gen(d) | Phase::Env(d) => d,
    }
}

pub fn run_env_rollout(cfg: &EnvRolloutConfig, seed: &SeedState) -> Result<EnvRolloutMetrics> {
    cfg.validate()?;
    match cfg.mode {
        RolloutMode::TurnBarrier => run_barrier(cfg, seed),
        RolloutMode::EnvAsync | RolloutMode::SlotHeld => run_events(cfg, seed),
    }
}

fn run_barrier(cfg: &EnvRolloutConfig, seed: &SeedState) -> Result<EnvRolloutMetrics> {
    // (episode, phase index, attempt); `None` once the slot has finished.
    let mut eps: Vec<Option<(EpisodeDraw, usize, u64)>> = (0..cfg.env_slots)
        .map(|i| episode(cfg, seed, i, 0).map(|d| Some((d, 0, 0))))
        .collect::<Result<_>>()?;
    let mut m = EnvRolloutMetrics::default();
    let mut t = 0.0;
    loop {
        // Every active episode sits at a generation phase at the start of a turn.
        let active = || eps.iter().flatten();
        let gen = active().map(|(d, p, _)| len(d.phases[*p])).fold(0.0, f64::max);
        let env = active().map(|(d, p, _)| len(d.phases[*p + 1])).fold(0.0, f64::max);
        m.gen_busy += active().map(|(d, p, _)| len(d.phases[*p])).sum::<f64>();
        m.turns += active().count() as u64;
        t += gen + env;
        for (i, slot) in eps.iter_mut().enumerate() {
            let Some((d, p, attempt)) = slot else { continue };
            *p += 2;
            if *p < d.phases.len() {
                continue;
            }
            if d.failed {
                m.failed_attempts += 1;
                *attempt += 1;
                *d = episode(cfg, seed, i, *attempt)?;
                *p = 0;
            } else {
                m.completed += 1;
                *slot = None;
            }
        }
        if m.completed >= cfg.target {
            m.step_time = t;
            m.abandoned = eps.iter().flatten().count();
            return Ok(m);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Gen(usize),
    Env(usize),
}

impl SimEvent for Ev {
    fn kind(&self) -> EventKind {
        match self {
            Ev::Gen(_) => EventKind::TaskFinish,
            Ev::Env(_) => EventKind::EnvStepFinish,
        }
    }
    fn entity(&self) -> u64 {
        match self {
            Ev::Gen(i) | Ev::Env(i) => *i as u64,
        }
    }
}

struct Slot {
    draw: EpisodeDraw,
    phase: usize,
    attempt: u64,
    holds_gen: bool,
}

struct EventSim<'a> {
    cfg: &'a EnvRolloutConfig,
    seed: SeedState,
    slots: Vec<Slot>,
    free_gen: Option<usize>,
    waiting: VecDeque<usize>,
    m: EnvRolloutMetrics,
}

impl EventSim<'_> {
    fn request_gen(&mut self, eng: &mut Engine<Ev>, i: usize) -> Result<()> {
        if self.slots[i].holds_gen {
            return self.start_gen(eng, i);
        }
        match self.free_gen {
            None => self.start_gen(eng, i),
            Some(0) => {
                self.waiting.push_back(i);
                Ok(())
            }
            Some(ref mut n) => {
                *n -= 1;
                self.slots[i].holds_gen = true;
                self.start_gen(eng, i)
            }
        }
    }

    fn start_gen(&mut self, eng: &mut Engine<Ev>, i: usize) -> Result<()> {
        let d = len(self.slots[i].draw.phases[self.slots[i].phase]);
        self.m.gen_busy += d;
        self.m.turns += 1;
        eng.schedule_in(Ev::Gen(i), d)?;
        Ok(())
    }

    fn release_gen(&mut self, eng: &mut Engine<Ev>, i: usize) -> Result<()> {
        if !self.slots[i].holds_gen {
            return Ok(());
        }
        self.slots[i].holds_gen = false;
        if let Some(next) = self.waiting.pop_front() {
            self.slots[next].holds_gen = true;
            self.start_gen(eng, next)
        } else {
            if let Some(n) = self.free_gen.as_mut() {
                *n += 1;
            }
            Ok(())
        }
    }

    fn on_gen(&mut self, eng: &mut Engine<Ev>, i: usize) -> Result<()> {
        let s = &mut self.slots[i];
        s.phase += 1;
        let d = len(s.draw.phases[s.phase]);
        if self.cfg.mode == RolloutMode::EnvAsync {
            self.release_gen(eng, i)?;
        }
        eng.schedule_in(Ev::Env(i), d)?;
        Ok(())
    }

    fn on_env(&mut self, eng: &mut Engine<Ev>, i: usize) -> Result<Flow> {
        let s = &mut self.slots[i];
        s.phase += 1;
        if s.phase < s.draw.phases.len() {
            self.request_gen(eng, i)?;
            return Ok(Flow::Continue);
        }
        if !s.draw.failed {
            self.m.completed += 1;
            self.release_gen(eng, i)?;
            if self.m.completed == self.cfg.target {
                self.m.step_time = eng.now();
                return Ok(Flow::Halt);
            }
            return Ok(Flow::Continue);
        }
        self.m.failed_attempts += 1;
        s.attempt += 1;
        let attempt = s.attempt;
        let draw = episode(self.cfg, &self.seed, i, attempt)?;
        self.release_gen(eng, i)?;
        let s = &mut self.slots[i];
        s.draw = draw;
        s.phase = 0;
        self.request_gen(eng, i)?;
        Ok(Flow::Continue)
    }
}

fn run_events(cfg: &EnvRolloutConfig, seed: &SeedState) -> Result<EnvRolloutMetrics> {
    let slots = (0..cfg.env_slots)
        .map(|i| {
            episode(cfg, seed, i, 0).map(|draw| Slot {
                draw,
                phase: 0,
                attempt: 0,
                holds_gen: false,
            })
        })
        .collect::<Result<_>>()?;
    let mut sim = EventSim {
        cfg,
        seed: *seed,
        slots,
        free_gen: cfg.gen_slots,
        waiting: VecDeque::new(),
        m: EnvRolloutMetrics::default(),
    };
    let mut eng: Engine<Ev> = Engine::new();
    for i in 0..cfg.env_slots {
        sim.request_gen(&mut eng, i)?;
    }
    let mut failure = None;
    eng.run_until(StopCondition::queue_empty(), |eng, fired| {
        let r = match fired.payload {
            Ev::Gen(i) => sim.on_gen(eng, i).map(|_| Flow::Continue),
            Ev::Env(i) => sim.on_env(eng, i),
        };
        r.unwrap_or_else(|e| {
            failure = Some(e);
            Flow::Halt
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mut m = sim.m;
    m.abandoned = cfg.env_slots - m.completed;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvAsyncComparison {
    pub env_async: EnvRolloutMetrics,
    pub sequential: EnvRolloutMetrics,
    pub speedup: f64,
}

/// Environment-level asynchronous rollout against the turn-barrier
/// baseline on the same episodes.
pub fn run_env_level_async(cfg: &EnvRolloutConfig, seed: &SeedState) -> Result<EnvAsyncComparison> {
    let env_async = run_env_rollout(
        &EnvRolloutConfig {
            mode: RolloutMode::EnvAsync,
            ..cfg.clone()
        },
        seed,
    )?;
    let sequential = run_env_rollout(
        &EnvRolloutConfig {
            mode: RolloutMode::TurnBarrier,
            ..cfg.clone()
        },
        seed,
    )?;
    Ok(EnvAsyncComparison {
        env_async,
        sequential,
        speedup: sequential.step_time / env_async.step_time,
    })
}

/// Redundant environment rollout: `num_env_groups * group_size` episodes
/// run concurrently and collection stops at `rollout_batch_size`.
pub fn run_redundant_rollout(
    plan: &RedundancyPlan,
    env: &EnvProfile,
    generation: &LatencyModel,
    seed: &SeedState,
) -> Result<EnvRolloutMetrics> {
    let schedule = plan_redundant_envs(plan)?;
    run_env_rollout(
        &EnvRolloutConfig {
            env: env.clone(),
            generation: generation.clone(),
            env_slots: schedule.episodes.len(),
            target: schedule.target,
            gen_slots: None,
            mode: RolloutMode::EnvAsync,
        },
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: RolloutMode) -> EnvRolloutConfig {
        EnvRolloutConfig {
            env: EnvProfile::reliable(LatencyModel::constant(10.0), 3),
            generation: LatencyModel::constant(1.0),
            env_slots: 4,
            target: 4,
            gen_slots: None,
            mode,
        }
    }

    #[test]
    fn constant_latencies_match_across_modes() {
        for mode in [RolloutMode::EnvAsync, RolloutMode::TurnBarrier, RolloutMode::SlotHeld] {
            let m = run_env_rollout(&cfg(mode), &SeedState::new(1)).unwrap();
            assert_eq!(m.step_time, 33.0, "{mode:?}");
            assert_eq!(m.completed, 4);
        }
    }

    #[test]
    fn slot_held_serialises_on_one_generation_slot() {
        let mut c = cfg(RolloutMode::SlotHeld);
        c.gen_slots = Some(1);
        assert_eq!(run_env_rollout(&c, &SeedState::new(1)).unwrap().step_time, 4.0 * 33.0);
        c.mode = RolloutMode::EnvAsync;
        // Generation of one episode overlaps the others' environment waits.
        assert_eq!(run_env_rollout(&c, &SeedState::new(1)).unwrap().step_time, 36.0);
    }

    #[test]
    fn fail_stop_restarts_after_timeout() {
        let mut c = cfg(RolloutMode::EnvAsync);
        c.env.fail_stop_prob = 0.5;
        c.env.fail_stop_timeout = 100.0;
        let mut failures = 0;
        for s in 0..20 {
            let m = run_env_rollout(&c, &SeedState::new(s)).unwrap();
            assert_eq!(m.completed, 4);
            failures += m.failed_attempts;
            // Each failed attempt costs its generation turn plus the timeout.
            assert!(m.step_time >= 33.0 + 101.0 * (m.failed_attempts > 0) as u8 as f64);
        }
        assert!(failures > 0);
    }
}
