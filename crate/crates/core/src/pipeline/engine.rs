// SPDX-License-Identifier: Apache-2.0

//! Event-driven producer/trainer pipeline around a [`SampleBuffer`].

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;

use super::buffer::{Admission, Sample, SampleBuffer};
use super::{draw_episode, finish_metrics, mean_max, EpisodeDraw, Phase, PipelineConfig, RunMetrics, StepMetrics};
use crate::bounds::worker_split;
use crate::error::{Error, Result};
use crate::simcore::{Engine, EventId, EventKind, Flow, SeedState, SimEvent, StopCondition, Time};

/// Training time of step `step` on `trainers` workers: the sum of `E * B`
/// per-sample costs from stream `("train", step)`, divided evenly.
/// Returns `(time, realized per-sample mean)`.
pub(crate) fn train_time(cfg: &PipelineConfig, seed: &SeedState, step: usize, trainers: usize) -> (Time, Time) {
    let n = cfg.reuse * cfg.batch;
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut rng = seed.derive("train", step as u64).rng();
    let sum: f64 = (0..n).map(|_| cfg.train_latency.sample(&mut rng)).sum();
    (sum / trainers as f64, sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Phase { task: usize, env: bool },
    TrainDone(usize),
    UpdateDone(usize),
}

impl SimEvent for Ev {
    fn kind(&self) -> EventKind {
        match self {
            Ev::Phase { env: false, .. } => EventKind::TaskFinish,
            Ev::Phase { env: true, .. } => EventKind::EnvStepFinish,
            Ev::TrainDone(_) => EventKind::ModelUpdate,
            Ev::UpdateDone(_) => EventKind::TaskStart,
        }
    }

    fn entity(&self) -> u64 {
        match self {
            Ev::Phase { task, .. } => *task as u64,
            Ev::TrainDone(s) | Ev::UpdateDone(s) => *s as u64,
        }
    }
}

struct Task {
    seq: u64,
    init_version: u64,
    draw: EpisodeDraw,
    reward: f64,
    phase: usize,
    remaining: Time,
    phase_started: Time,
    /// Generation work already spent on this attempt.
    gen_done: Time,
    slot: Option<usize>,
    event: Option<EventId>,
    attempts: u64,
}

impl Task {
    fn current(&self) -> Phase {
        self.draw.phases[self.phase]
    }

    fn in_gen(&self) -> bool {
        matches!(self.current(), Phase::Gen(_))
    }
}

fn phase_len(p: Phase) -> Time {
    match p {
        Phase::Gen(d) | Phase::Env(d) => d,
    }
}

struct Sim<'a> {
    cfg: &'a PipelineConfig,
    seed: SeedState,
    buffer: SampleBuffer,
    tasks: Vec<Task>,
    live: BTreeSet<usize>,
    free_slots: BTreeSet<usize>,
    ready: VecDeque<usize>,
    suspended: bool,
    frozen: Vec<usize>,
    next_seq: u64,
    trainers: usize,
    training: bool,
    steps_done: usize,
    step_start: Time,
    batch_ready: Time,
    batch_stats: (f64, u64, f64, f64, f64),
    train_span: Time,
    step_evicted: usize,
    step_aborted: usize,
    gen_busy: Time,
    train_busy: Time,
    consumed_gen: Vec<Time>,
    train_means: Vec<Time>,
    m: RunMetrics,
}

impl Sim<'_> {
    fn draw(&self, seq: u64, attempt: u64) -> Result<(EpisodeDraw, f64)> {
        let base = self.seed.derive("task", seq);
        let stream = if attempt == 0 { base } else { base.derive("attempt", attempt) };
        let mut rng = stream.rng();
        let draw = draw_episode(&self.cfg.generation, self.cfg.env.as_ref(), &mut rng)?;
        let u: f64 = rng.random();
        Ok((draw, if u < 0.5 { 1.0 } else { 0.0 }))
    }

    fn fill(&mut self, eng: &mut Engine<Ev>) -> Result<()> {
        if self.suspended {
            return Ok(());
        }
        while let Some(&slot) = self.free_slots.first() {
            let task = if let Some(t) = self.ready.pop_front() {
                t
            } else {
                match self.buffer.admit() {
                    Admission::Admit { init_version } => {
                        let seq = self.next_seq;
                        self.next_seq += 1;
                        let (draw, reward) = self.draw(seq, 0)?;
                        let remaining = phase_len(draw.phases[0]);
                        self.tasks.push(Task {
                            seq,
                            init_version,
                            draw,
                            reward,
                            phase: 0,
                            remaining,
                            phase_started: eng.now(),
                            gen_done: 0.0,
                            slot: None,
                            event: None,
                            attempts: 0,
                        });
                        let id = self.tasks.len() - 1;
                        self.live.insert(id);
                        id
                    }
                    Admission::Defer => break,
                }
            };
            self.free_slots.remove(&slot);
            self.tasks[task].slot = Some(slot);
            self.start_phase(eng, task)?;
        }
        Ok(())
    }

    fn start_phase(&mut self, eng: &mut Engine<Ev>, id: usize) -> Result<()> {
        let now = eng.now();
        let suspended = self.suspended;
        let t = &mut self.tasks[id];
        t.phase_started = now;
        let env = !t.in_gen();
        if !env && suspended {
            self.frozen.push(id);
            return Ok(());
        }
        t.event = Some(eng.schedule(Ev::Phase { task: id, env }, now + t.remaining)?);
        Ok(())
    }

    fn release_slot(&mut self, id: usize) {
        if let Some(s) = self.tasks[id].slot.take() {
            self.free_slots.insert(s);
        }
    }

    fn on_phase(&mut self, eng: &mut Engine<Ev>, id: usize) -> Result<()> {
        let now = eng.now();
        let env_async = self.cfg.env_level_async;
        let t = &mut self.tasks[id];
        t.event = None;
        if t.in_gen() {
            let spent = now - t.phase_started;
            t.gen_done += spent;
            self.gen_busy += spent;
        }
        t.phase += 1;
        if t.phase < t.draw.phases.len() {
            t.remaining = phase_len(t.current());
            match t.current() {
                Phase::Env(_) => {
                    if env_async {
                        self.release_slot(id);
                    }
                    self.start_phase(eng, id)?;
                }
                Phase::Gen(_) => {
                    if t.slot.is_some() {
                        self.start_phase(eng, id)?;
                    } else {
                        self.ready.push_back(id);
                    }
                }
            }
        } else if t.draw.failed {
            t.attempts += 1;
            let (seq, attempts) = (t.seq, t.attempts);
            let (draw, reward) = self.draw(seq, attempts)?;
            let version = self.buffer.version();
            let t = &mut self.tasks[id];
            t.remaining = phase_len(draw.phases[0]);
            t.draw = draw;
            t.reward = reward;
            t.phase = 0;
            t.gen_done = 0.0;
            t.init_version = version;
            if t.slot.is_some() {
                self.start_phase(eng, id)?;
            } else {
                self.ready.push_back(id);
            }
        } else {
            let sample = Sample {
                id: t.seq,
                prompt: t.seq as usize,
                init_version: t.init_version,
                finish_version: self.buffer.version(),
                reward: t.reward,
                turns: t.draw.turns,
                latency: t.draw.gen_time(),
                finished_at: now,
            };
            self.release_slot(id);
            self.live.remove(&id);
            self.buffer.complete(sample);
        }
        Ok(())
    }

    fn try_train(&mut self, eng: &mut Engine<Ev>) -> Result<()> {
        if self.training || self.steps_done >= self.cfg.steps {
            return Ok(());
        }
        let Some(batch) = self.buffer.get_batch() else {
            return Ok(());
        };
        let now = eng.now();
        let version = self.buffer.version();
        let mut st_sum = 0u64;
        let mut st_max = 0u64;
        for s in &batch {
            let st = version - s.init_version;
            st_sum += st;
            st_max = st_max.max(st);
            let i = st as usize;
            if self.m.staleness_hist.len() <= i {
                self.m.staleness_hist.resize(i + 1, 0);
            }
            self.m.staleness_hist[i] += 1;
            self.consumed_gen.push(s.latency);
        }
        self.m.consumed += batch.len();
        let (gen_mean, gen_max) = mean_max(batch.iter().map(|s| s.latency));
        let (train, train_mean) = train_time(self.cfg, &self.seed, self.steps_done, self.trainers);
        self.train_means.push(train_mean);
        self.batch_stats = (st_sum as f64 / batch.len() as f64, st_max, gen_mean, gen_max, train_mean);
        self.batch_ready = now;
        self.train_span = train;
        self.train_busy += train;
        self.training = true;
        eng.schedule(Ev::TrainDone(self.steps_done), now + train)?;
        if self.cfg.merged {
            self.suspend(eng);
        }
        Ok(())
    }

    fn suspend(&mut self, eng: &mut Engine<Ev>) {
        if self.suspended {
            return;
        }
        self.suspended = true;
        let now = eng.now();
        let running: Vec<usize> = self
            .live
            .iter()
            .copied()
            .filter(|&i| self.tasks[i].in_gen() && self.tasks[i].event.is_some())
            .collect();
        for id in running {
            let t = &mut self.tasks[id];
            eng.cancel(t.event.take().expect("running"));
            let spent = now - t.phase_started;
            t.remaining -= spent;
            t.gen_done += spent;
            self.gen_busy += spent;
            self.frozen.push(id);
        }
    }

    fn resume(&mut self, eng: &mut Engine<Ev>) -> Result<()> {
        self.suspended = false;
        let mut frozen = std::mem::take(&mut self.frozen);
        frozen.sort_unstable();
        for id in frozen {
            if self.live.contains(&id) {
                self.start_phase(eng, id)?;
            }
        }
        Ok(())
    }

    fn on_train_done(&mut self, eng: &mut Engine<Ev>, step: usize) -> Result<()> {
        let now = eng.now();
        for s in self.buffer.advance_version() {
            self.step_evicted += 1;
            self.m.wasted_samples += 1;
            self.m.wasted_seconds += s.latency;
        }
        let min = self.buffer.min_fresh_version();
        let version = self.buffer.version();
        let stale: Vec<usize> = self
            .live
            .iter()
            .copied()
            .filter(|&i| self.tasks[i].init_version < min)
            .collect();
        for id in stale {
            self.step_aborted += 1;
            if self.cfg.partial_resume {
                self.tasks[id].init_version = version;
                continue;
            }
            let t = &mut self.tasks[id];
            let mut spent = t.gen_done;
            if let Some(ev) = t.event.take() {
                eng.cancel(ev);
                if t.in_gen() {
                    let partial = now - t.phase_started;
                    spent += partial;
                    self.gen_busy += partial;
                }
            }
            self.m.wasted_seconds += spent;
            self.m.wasted_samples += 1;
            self.frozen.retain(|&f| f != id);
            self.ready.retain(|&r| r != id);
            self.release_slot(id);
            self.live.remove(&id);
            self.buffer.release(1);
        }
        if self.cfg.update_cost > 0.0 {
            self.suspend(eng);
        }
        eng.schedule(Ev::UpdateDone(step), now + self.cfg.update_cost)?;
        Ok(())
    }

    fn on_update_done(&mut self, eng: &mut Engine<Ev>, step: usize) -> Result<Flow> {
        let now = eng.now();
        let (staleness_mean, staleness_max, gen_mean, gen_max, train_mean) = self.batch_stats;
        self.m.steps.push(StepMetrics {
            step,
            start: self.step_start,
            end: now,
            gen_span: self.batch_ready - self.step_start,
            train_span: self.train_span,
            staleness_mean,
            staleness_max,
            gen_mean,
            gen_max,
            train_mean,
            evicted: std::mem::take(&mut self.step_evicted),
            aborted: std::mem::take(&mut self.step_aborted),
        });
        self.step_start = now;
        self.steps_done += 1;
        self.training = false;
        if self.steps_done == self.cfg.steps {
            return Ok(Flow::Halt);
        }
        if self.suspended {
            self.resume(eng)?;
        }
        self.fill(eng)?;
        self.try_train(eng)?;
        Ok(Flow::Continue)
    }
}

/// Runs the buffered pipeline.
///
/// With `beta` set, `floor(beta K)` workers (at least one) train and the
/// rest generate; trainers loop `get_batch`, `E` passes, model update.
/// Without `beta` and with `merged`, all workers do both and generation is
/// suspended from `get_batch` until the update completes; at `alpha = 0`
/// this replays [`super::run_sync`] exactly.
///
/// At every update, held samples and in-flight generations whose init
/// version falls behind the gap are evicted or aborted (or restamped when
/// `partial_resume` is set), so no consumed sample is staler than
/// `ceil(alpha)`.
pub fn run_async(cfg: &PipelineConfig, seed: &SeedState) -> Result<RunMetrics> {
    cfg.validate()?;
    let (trainers, producers) = match cfg.beta {
        Some(beta) => worker_split(beta, cfg.workers)?,
        None if cfg.merged => (cfg.workers, cfg.workers),
        None => {
            return Err(Error::InvalidConfig(
                "buffered runs need a train share or the merged flag".into(),
            ))
        }
    };
    let slots = producers * cfg.slots_per_worker;
    let buffer = SampleBuffer::new(cfg.batch, cfg.alpha)?;
    let capacity = buffer.capacity();
    let mut sim = Sim {
        cfg,
        seed: *seed,
        buffer,
        tasks: Vec::new(),
        live: BTreeSet::new(),
        free_slots: (0..slots).collect(),
        ready: VecDeque::new(),
        suspended: false,
        frozen: Vec::new(),
        next_seq: 0,
        trainers,
        training: false,
        steps_done: 0,
        step_start: 0.0,
        batch_ready: 0.0,
        batch_stats: (0.0, 0, 0.0, 0.0, 0.0),
        train_span: 0.0,
        step_evicted: 0,
        step_aborted: 0,
        gen_busy: 0.0,
        train_busy: 0.0,
        consumed_gen: Vec::new(),
        train_means: Vec::new(),
        m: RunMetrics {
            steps: Vec::with_capacity(cfg.steps),
            total_time: 0.0,
            mean_step_time: 0.0,
            steady_step_time: 0.0,
            throughput: 0.0,
            infer_idle_fraction: 0.0,
            train_idle_fraction: 0.0,
            staleness_hist: vec![0],
            wasted_seconds: 0.0,
            wasted_samples: 0,
            max_occupancy: 0,
            capacity,
            consumed: 0,
            gen_mean: 0.0,
            gen_max: 0.0,
            train_mean: 0.0,
            producers,
            trainers,
            slots,
        },
    };
    let mut eng: Engine<Ev> = Engine::new();
    sim.fill(&mut eng)?;
    sim.try_train(&mut eng)?;

    let mut failure = None;
    eng.run_until(StopCondition::queue_empty(), |eng, fired| {
        let r = match fired.payload {
            Ev::Phase { task, .. } => sim
                .on_phase(eng, task)
                .and_then(|_| sim.fill(eng))
                .and_then(|_| sim.try_train(eng))
                .map(|_| Flow::Continue),
            Ev::TrainDone(step) => sim.on_train_done(eng, step).map(|_| Flow::Continue),
            Ev::UpdateDone(step) => sim.on_update_done(eng, step),
        };
        r.unwrap_or_else(|e| {
            failure = Some(e);
            Flow::Halt
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if sim.steps_done < cfg.steps {
        return Err(Error::Deadlock(format!(
            "stalled after {} of {} steps: {} held, {} in flight, capacity {}",
            sim.steps_done,
            cfg.steps,
            sim.buffer.held(),
            sim.buffer.in_flight(),
            capacity
        )));
    }
    let mut m = sim.m;
    m.max_occupancy = sim.buffer.max_occupancy();
    (m.gen_mean, m.gen_max) = mean_max(sim.consumed_gen);
    m.train_mean = sim.train_means.iter().sum::<f64>() / sim.train_means.len().max(1) as f64;
    let total = m.steps.last().map_or(0.0, |s| s.end);
    if total > 0.0 {
        m.infer_idle_fraction = (1.0 - sim.gen_busy / (slots as f64 * total)).clamp(0.0, 1.0);
        m.train_idle_fraction = (1.0 - sim.train_busy / total).clamp(0.0, 1.0);
    }
    Ok(finish_metrics(m, cfg.warmup))
}
