// SPDX-License-Identifier: Apache-2.0

//! Rollout-stage scheduling over a pool of inference slots.
//!
//! Two policies are modelled:
//!
//! - **Batch rollout**: tasks are list-scheduled onto slots and reward
//!   evaluation for the whole batch starts only after the last generation
//!   finishes. With dynamic filtering, whole rounds are repeated until
//!   enough groups are accepted.
//! - **Queue scheduling**: every response is an independent task in a FIFO
//!   queue, dispatched the instant a slot frees, and scored as soon as it
//!   completes. Extra prompt groups may run concurrently, and the rollout
//!   stops as soon as the target number of groups has been accepted.
//!
//! [`Placement`] controls prompt replication: with [`Placement::PinnedByPrompt`]
//! all responses of a prompt run on one worker, with [`Placement::Global`]
//! each response may run on any worker.

use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::cmp::Reverse;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{Engine, EventKind, Flow, SeedState, SimEvent, StopCondition, Time};
use crate::workload::{LatencyModel, OutcomeModel, RolloutTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Infer,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPool {
    pub role: Role,
    pub workers: usize,
    pub slots_per_worker: usize,
}

impl WorkerPool {
    pub fn infer(workers: usize) -> Self {
        Self {
            role: Role::Infer,
            workers,
            slots_per_worker: 1,
        }
    }

    pub fn with_slots(mut self, slots: usize) -> Self {
        self.slots_per_worker = slots;
        self
    }

    pub fn capacity(&self) -> usize {
        self.workers * self.slots_per_worker
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.slots_per_worker == 0 {
            return Err(Error::InvalidArgument(format!(
                "worker pool needs at least one worker and one slot, got {}x{}",
                self.workers, self.slots_per_worker
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Any response may run on any slot (prompt replication).
    #[default]
    Global,
    /// All responses of a prompt run on one worker, assigned round-robin.
    PinnedByPrompt,
}

/// Reward evaluation stage. `workers: None` is an unbounded pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardStage {
    pub latency: LatencyModel,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl RewardStage {
    pub fn instant() -> Self {
        Self {
            latency: LatencyModel::constant(0.0),
            workers: None,
        }
    }

    pub fn unbounded(latency: LatencyModel) -> Self {
        Self { latency, workers: None }
    }

    fn validate(&self) -> Result<()> {
        self.latency.validate()?;
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("reward pool needs at least one worker".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPredicate {
    #[default]
    None,
    /// Reject groups whose rewards are all equal.
    ZeroVarianceReject,
}

impl FilterPredicate {
    pub fn accepts(self, rewards: &[f64]) -> bool {
        match self {
            FilterPredicate::None => true,
            FilterPredicate::ZeroVarianceReject => rewards.windows(2).any(|w| w[0] != w[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRule {
    pub group_size: usize,
    #[serde(default)]
    pub predicate: FilterPredicate,
    pub target_groups: usize,
    #[serde(default)]
    pub max_additional_running_prompts: usize,
}

impl FilterRule {
    fn validate(&self) -> Result<()> {
        if self.group_size == 0 || self.target_groups == 0 {
            return Err(Error::InvalidArgument(format!(
                "filter rule needs group_size >= 1 and target_groups >= 1, got {} and {}",
                self.group_size, self.target_groups
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Done,
    Aborted,
    /// Queued but never started before the rollout ended.
    Discarded,
}

impl TaskStatus {
    fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Done => "done",
            TaskStatus::Aborted => "aborted",
            TaskStatus::Discarded => "discarded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub prompt: usize,
    pub replica: usize,
    pub worker: Option<usize>,
    pub slot: Option<usize>,
    pub admitted: Time,
    pub start: Option<Time>,
    pub finish: Option<Time>,
    pub service_time: Time,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutTrace {
    pub makespan: Time,
    /// Time the last generation finished (or was aborted).
    pub generation_end: Time,
    pub records: Vec<TaskRecord>,
    /// Idle share of slot-time over `[0, generation_end]`.
    pub idle_fraction: f64,
    pub accepted_groups: usize,
    pub rejected_groups: usize,
    pub completed_samples: usize,
    /// Aborted tasks plus completed tasks not used by an accepted group.
    pub wasted_samples: usize,
    pub wasted_seconds: Time,
    /// Reward evaluation time overlapping the generation phase.
    pub reward_overlap: Time,
    pub incomplete: bool,
    pub slots: usize,
    pub rounds: usize,
    pub event_log: Vec<String>,
}

impl RolloutTrace {
    /// Service times of tasks that ran to completion.
    pub fn completed_service_times(&self) -> Vec<Time> {
        self.records
            .iter()
            .filter(|r| r.status == TaskStatus::Done)
            .map(|r| r.service_time)
            .collect()
    }

    /// Realized `(count, mean, max)` over completed tasks.
    pub fn realized_moments(&self) -> (usize, f64, f64) {
        let s = self.completed_service_times();
        if s.is_empty() {
            return (0, 0.0, 0.0);
        }
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let max = s.iter().copied().fold(0.0, f64::max);
        (s.len(), mean, max)
    }

    /// Per-task records as comma-separated values.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "task,prompt,replica,start,finish,worker,status")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.task,
                r.prompt,
                r.replica,
                opt(r.start),
                opt(r.finish),
                r.worker.map(|x| x.to_string()).unwrap_or_default(),
                r.status.as_str()
            )?;
        }
        Ok(())
    }
}

/// Pre-drawn randomness for one response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskDraw {
    pub service: Time,
    pub reward_latency: Time,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptGroup {
    pub prompt: usize,
    pub draws: Vec<TaskDraw>,
}

/// Generative prompt source: prompt `p` draws from its own stream, so two
/// policies fed the same seed see identical prompts.
#[derive(Debug, Clone)]
pub struct PromptSource<'a> {
    pub generation: &'a LatencyModel,
    pub reward_latency: &'a LatencyModel,
    pub outcome: OutcomeModel,
    pub group_size: usize,
    pub seed: SeedState,
}

impl PromptSource<'_> {
    pub fn group(&self, prompt: usize) -> PromptGroup {
        let mut rng = self.seed.derive("prompt", prompt as u64).rng();
        let p = self.outcome.success_prob(&mut rng);
        let draws = (0..self.group_size)
            .map(|_| {
                let service = self.generation.sample(&mut rng);
                let reward_latency = self.reward_latency.sample(&mut rng);
                let u: f64 = rng.random();
                TaskDraw {
                    service,
                    reward_latency,
                    reward: if u < p { 1.0 } else { 0.0 },
                }
            })
            .collect();
        PromptGroup { prompt, draws }
    }
}

/// Greedy list scheduling: each duration, in order, goes to the slot that
/// frees earliest (lowest index on ties). Returns `(slot, start, finish)`.
pub fn list_schedule(durations: &[Time], slots: usize, start: Time) -> Vec<(usize, Time, Time)> {
    let mut heap: BinaryHeap<Reverse<(OrdTime, usize)>> =
        (0..slots).map(|s| Reverse((OrdTime(start), s))).collect();
    durations
        .iter()
        .map(|d| {
            let Reverse((OrdTime(free), slot)) = heap.pop().expect("at least one slot");
            let finish = free + d;
            heap.push(Reverse((OrdTime(finish), slot)));
            (slot, free, finish)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdTime(f64);

impl Eq for OrdTime {}

impl PartialOrd for OrdTime {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdTime {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Time for a reward stage to drain `jobs = (ready_time, latency)`.
/// Returns per-job finish times in input order.
fn reward_finishes(jobs: &[(Time, Time)], workers: Option<usize>) -> Vec<Time> {
    match workers {
        None => jobs.iter().map(|(t, d)| t + d).collect(),
        Some(k) => {
            let mut order: Vec<usize> = (0..jobs.len()).collect();
            order.sort_by(|&a, &b| jobs[a].0.total_cmp(&jobs[b].0).then(a.cmp(&b)));
            let mut free = vec![f64::NEG_INFINITY; k];
            let mut out = vec![0.0; jobs.len()];
            for i in order {
                let (slot, _) = free
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                    .expect("k >= 1");
                let begin = free[slot].max(jobs[i].0);
                out[i] = begin + jobs[i].1;
                free[slot] = out[i];
            }
            out
        }
    }
}

fn overlap(start: Time, end: Time, horizon: Time) -> Time {
    (end.min(horizon) - start).max(0.0)
}

fn idle_fraction(busy: Time, slots: usize, span: Time) -> f64 {
    if span <= 0.0 {
        0.0
    } else {
        (1.0 - busy / (slots as f64 * span)).clamp(0.0, 1.0)
    }
}

struct BatchTask {
    prompt: usize,
    replica: usize,
    draw: TaskDraw,
}

/// Runs one batch (generation, barrier, reward) starting at `t0`.
fn batch_round(
    tasks: &[BatchTask],
    pool: &WorkerPool,
    placement: Placement,
    reward: &RewardStage,
    t0: Time,
    first_task_id: usize,
) -> (Vec<TaskRecord>, Time, Time) {
    let mut records = Vec::with_capacity(tasks.len());
    let mut gen_end = t0;
    match placement {
        Placement::Global => {
            let durations: Vec<Time> = tasks.iter().map(|t| t.draw.service).collect();
            for (i, (slot, s, f)) in list_schedule(&durations, pool.capacity(), t0).into_iter().enumerate() {
                gen_end = gen_end.max(f);
                records.push(record(first_task_id + i, &tasks[i], slot, pool, t0, s, f));
            }
        }
        Placement::PinnedByPrompt => {
            let mut worker_of: HashMap<usize, usize> = HashMap::new();
            let mut per_worker: Vec<Vec<usize>> = vec![Vec::new(); pool.workers];
            for (i, t) in tasks.iter().enumerate() {
                let next = worker_of.len();
                let w = *worker_of.entry(t.prompt).or_insert(next % pool.workers);
                per_worker[w].push(i);
            }
            let mut placed: Vec<Option<TaskRecord>> = vec![None; tasks.len()];
            for (w, idxs) in per_worker.iter().enumerate() {
                let durations: Vec<Time> = idxs.iter().map(|&i| tasks[i].draw.service).collect();
                for (k, (slot, s, f)) in list_schedule(&durations, pool.slots_per_worker, t0).into_iter().enumerate() {
                    let i = idxs[k];
                    gen_end = gen_end.max(f);
                    placed[i] = Some(record(
                        first_task_id + i,
                        &tasks[i],
                        w * pool.slots_per_worker + slot,
                        pool,
                        t0,
                        s,
                        f,
                    ));
                }
            }
            records.extend(placed.into_iter().map(|r| r.expect("every task placed")));
        }
    }
    let jobs: Vec<(Time, Time)> = tasks.iter().map(|t| (gen_end, t.draw.reward_latency)).collect();
    let end = reward_finishes(&jobs, reward.workers)
        .into_iter()
        .fold(gen_end, f64::max);
    (records, gen_end, end)
}

fn record(task: usize, t: &BatchTask, slot: usize, pool: &WorkerPool, admitted: Time, s: Time, f: Time) -> TaskRecord {
    TaskRecord {
        task,
        prompt: t.prompt,
        replica: t.replica,
        worker: Some(slot / pool.slots_per_worker),
        slot: Some(slot),
        admitted,
        start: Some(s),
        finish: Some(f),
        service_time: t.draw.service,
        status: TaskStatus::Done,
    }
}

fn explicit_draws(tasks: &[RolloutTask], reward: &RewardStage, seed: &SeedState) -> Vec<BatchTask> {
    tasks
        .iter()
        .map(|t| {
            let mut rng = seed.derive("reward", t.id as u64).rng();
            BatchTask {
                prompt: t.prompt,
                replica: t.replica,
                draw: TaskDraw {
                    service: t.service_time,
                    reward_latency: reward.latency.sample(&mut rng),
                    reward: 0.0,
                },
            }
        })
        .collect()
}

/// Synchronous batch rollout of explicit tasks: generation on all slots,
/// then rewards for every task once the last generation finishes.
pub fn run_batch_rollout(
    tasks: &[RolloutTask],
    pool: &WorkerPool,
    placement: Placement,
    reward: &RewardStage,
    seed: &SeedState,
) -> Result<RolloutTrace> {
    pool.validate()?;
    reward.validate()?;
    if tasks.is_empty() {
        return Ok(RolloutTrace {
            slots: pool.capacity(),
            ..RolloutTrace::default()
        });
    }
    let draws = explicit_draws(tasks, reward, seed);
    let (mut records, gen_end, end) = batch_round(&draws, pool, placement, reward, 0.0, 0);
    for (r, t) in records.iter_mut().zip(tasks) {
        r.task = t.id;
    }
    let busy: Time = tasks.iter().map(|t| t.service_time).sum();
    let mut prompts: Vec<usize> = tasks.iter().map(|t| t.prompt).collect();
    prompts.sort_unstable();
    prompts.dedup();
    Ok(RolloutTrace {
        makespan: end,
        generation_end: gen_end,
        idle_fraction: idle_fraction(busy, pool.capacity(), gen_end),
        accepted_groups: prompts.len(),
        completed_samples: tasks.len(),
        records,
        slots: pool.capacity(),
        rounds: 1,
        ..RolloutTrace::default()
    })
}

/// Configuration of a generative rollout with dynamic filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueScheduling {
    pub rule: FilterRule,
    pub pool: WorkerPool,
    pub placement: Placement,
    pub generation: LatencyModel,
    pub reward: RewardStage,
    pub outcome: OutcomeModel,
    /// Total prompts available; `None` is unlimited.
    pub prompt_budget: Option<usize>,
    pub log_events: bool,
}

impl QueueScheduling {
    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        self.pool.validate()?;
        self.generation.validate()?;
        self.reward.validate()?;
        self.outcome.validate()
    }

    fn source(&self, seed: &SeedState) -> PromptSource<'_> {
        PromptSource {
            generation: &self.generation,
            reward_latency: &self.reward.latency,
            outcome: self.outcome,
            group_size: self.rule.group_size,
            seed: *seed,
        }
    }
}

/// Synchronous batch rollout with dynamic filtering: rounds of
/// `target_groups` prompts are generated and scored until enough groups are
/// accepted or the prompt budget runs out.
pub fn run_batch_rollout_filtered(cfg: &QueueScheduling, seed: &SeedState) -> Result<RolloutTrace> {
    cfg.validate()?;
    let source = cfg.source(seed);
    let target = cfg.rule.target_groups;
    let mut trace = RolloutTrace {
        slots: cfg.pool.capacity(),
        ..RolloutTrace::default()
    };
    let mut t = 0.0;
    let mut next_prompt = 0usize;
    let mut busy = 0.0;
    let mut gen_time = 0.0;
    while trace.accepted_groups < target {
        let remaining = cfg.prompt_budget.map_or(usize::MAX, |b| b - next_prompt);
        let take = target.min(remaining);
        if take == 0 {
            trace.incomplete = true;
            break;
        }
        let groups: Vec<PromptGroup> = (next_prompt..next_prompt + take).map(|p| source.group(p)).collect();
        next_prompt += take;
        let tasks: Vec<BatchTask> = groups
            .iter()
            .flat_map(|g| {
                g.draws.iter().enumerate().map(move |(r, d)| BatchTask {
                    prompt: g.prompt,
                    replica: r,
                    draw: *d,
                })
            })
            .collect();
        let (records, gen_end, end) = batch_round(&tasks, &cfg.pool, cfg.placement, &cfg.reward, t, trace.records.len());
        busy += tasks.iter().map(|x| x.draw.service).sum::<f64>();
        gen_time += gen_end - t;
        for g in &groups {
            let rewards: Vec<f64> = g.draws.iter().map(|d| d.reward).collect();
            let used = trace.accepted_groups < target && cfg.rule.predicate.accepts(&rewards);
            if used {
                trace.accepted_groups += 1;
            } else {
                if !cfg.rule.predicate.accepts(&rewards) {
                    trace.rejected_groups += 1;
                }
                trace.wasted_samples += g.draws.len();
                trace.wasted_seconds += g.draws.iter().map(|d| d.service).sum::<f64>();
            }
        }
        trace.completed_samples += tasks.len();
        trace.records.extend(records);
        trace.generation_end = gen_end;
        trace.rounds += 1;
        t = end;
    }
    trace.makespan = t;
    trace.idle_fraction = idle_fraction(busy, cfg.pool.capacity(), gen_time);
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueueEvent {
    GenDone(usize),
    RewardDone(usize),
}

impl SimEvent for QueueEvent {
    fn kind(&self) -> EventKind {
        match self {
            QueueEvent::GenDone(_) => EventKind::TaskFinish,
            QueueEvent::RewardDone(_) => EventKind::RewardFinish,
        }
    }
    fn entity(&self) -> u64 {
        match self {
            QueueEvent::GenDone(t) | QueueEvent::RewardDone(t) => *t as u64,
        }
    }
}

struct QTask {
    group: usize,
    replica: usize,
    draw: TaskDraw,
    worker: Option<usize>,
    admitted: Time,
    start: Option<Time>,
    finish: Option<Time>,
    slot: Option<usize>,
    status: Option<TaskStatus>,
}

struct QGroup {
    prompt: usize,
    first_task: usize,
    size: usize,
    scored: usize,
}

struct QueueState<'a> {
    pool: WorkerPool,
    placement: Placement,
    rule: FilterRule,
    reward_workers: Option<usize>,
    groups_source: Box<dyn FnMut(usize) -> Option<PromptGroup> + 'a>,
    tasks: Vec<QTask>,
    groups: Vec<QGroup>,
    global_queue: VecDeque<usize>,
    worker_queues: Vec<VecDeque<usize>>,
    free_slots: BTreeSet<usize>,
    reward_queue: VecDeque<usize>,
    reward_busy: usize,
    reward_spans: Vec<(Time, Time)>,
    active_groups: usize,
    accepted: usize,
    rejected: usize,
    exhausted: bool,
    next_prompt: usize,
}

impl QueueState<'_> {
    fn top_up(&mut self, now: Time) {
        let needed = self.rule.target_groups - self.accepted + self.rule.max_additional_running_prompts;
        while self.active_groups < needed && !self.exhausted {
            let Some(group) = (self.groups_source)(self.next_prompt) else {
                self.exhausted = true;
                break;
            };
            self.next_prompt += 1;
            let gi = self.groups.len();
            let worker = match self.placement {
                Placement::Global => None,
                Placement::PinnedByPrompt => Some(gi % self.pool.workers),
            };
            let first = self.tasks.len();
            for (replica, draw) in group.draws.iter().enumerate() {
                let id = self.tasks.len();
                self.tasks.push(QTask {
                    group: gi,
                    replica,
                    draw: *draw,
                    worker,
                    admitted: now,
                    start: None,
                    finish: None,
                    slot: None,
                    status: None,
                });
                match worker {
                    None => self.global_queue.push_back(id),
                    Some(w) => self.worker_queues[w].push_back(id),
                }
            }
            self.groups.push(QGroup {
                prompt: group.prompt,
                first_task: first,
                size: group.draws.len(),
                scored: 0,
            });
            self.active_groups += 1;
        }
    }

    fn dispatch(&mut self, eng: &mut Engine<QueueEvent>) -> Result<()> {
        let s = self.pool.slots_per_worker;
        match self.placement {
            Placement::Global => {
                while let Some(&slot) = self.free_slots.iter().next() {
                    let Some(task) = self.global_queue.pop_front() else { break };
                    self.free_slots.remove(&slot);
                    self.start(eng, task, slot)?;
                }
            }
            Placement::PinnedByPrompt => {
                for w in 0..self.pool.workers {
                    while let Some(&slot) = self.free_slots.range(w * s..(w + 1) * s).next() {
                        let Some(task) = self.worker_queues[w].pop_front() else { break };
                        self.free_slots.remove(&slot);
                        self.start(eng, task, slot)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn start(&mut self, eng: &mut Engine<QueueEvent>, task: usize, slot: usize) -> Result<()> {
        let now = eng.now();
        let t = &mut self.tasks[task];
        t.start = Some(now);
        t.slot = Some(slot);
        eng.schedule(QueueEvent::GenDone(task), now + t.draw.service)?;
        Ok(())
    }

    fn start_reward(&mut self, eng: &mut Engine<QueueEvent>, task: usize) -> Result<()> {
        let now = eng.now();
        let d = self.tasks[task].draw.reward_latency;
        self.reward_spans.push((now, now + d));
        eng.schedule(QueueEvent::RewardDone(task), now + d)?;
        Ok(())
    }
}

fn run_queue_core<'a>(
    pool: WorkerPool,
    placement: Placement,
    rule: FilterRule,
    reward_workers: Option<usize>,
    source: Box<dyn FnMut(usize) -> Option<PromptGroup> + 'a>,
    log_events: bool,
) -> Result<RolloutTrace> {
    let mut eng: Engine<QueueEvent> = if log_events {
        Engine::new().with_event_log()
    } else {
        Engine::new()
    };
    let mut st = QueueState {
        pool,
        placement,
        rule,
        reward_workers,
        groups_source: source,
        tasks: Vec::new(),
        groups: Vec::new(),
        global_queue: VecDeque::new(),
        worker_queues: vec![VecDeque::new(); pool.workers],
        free_slots: (0..pool.capacity()).collect(),
        reward_queue: VecDeque::new(),
        reward_busy: 0,
        reward_spans: Vec::new(),
        active_groups: 0,
        accepted: 0,
        rejected: 0,
        exhausted: false,
        next_prompt: 0,
    };
    st.top_up(0.0);
    st.dispatch(&mut eng)?;

    let mut failure: Option<Error> = None;
    let summary = eng.run_until(StopCondition::queue_empty(), |eng, fired| {
        let step = (|| -> Result<Flow> {
            match fired.payload {
                QueueEvent::GenDone(task) => {
                    let slot = st.tasks[task].slot.expect("running task has a slot");
                    st.tasks[task].finish = Some(fired.at);
                    st.tasks[task].status = Some(TaskStatus::Done);
                    st.free_slots.insert(slot);
                    match st.reward_workers {
                        Some(k) if st.reward_busy >= k => st.reward_queue.push_back(task),
                        _ => {
                            st.reward_busy += 1;
                            st.start_reward(eng, task)?;
                        }
                    }
                    st.dispatch(eng)?;
                }
                QueueEvent::RewardDone(task) => {
                    st.reward_busy -= 1;
                    if let Some(next) = st.reward_queue.pop_front() {
                        st.reward_busy += 1;
                        st.start_reward(eng, next)?;
                    }
                    let gi = st.tasks[task].group;
                    st.groups[gi].scored += 1;
                    let g = &st.groups[gi];
                    if g.scored == g.size {
                        st.active_groups -= 1;
                        let rewards: Vec<f64> = (g.first_task..g.first_task + g.size)
                            .map(|i| st.tasks[i].draw.reward)
                            .collect();
                        if st.rule.predicate.accepts(&rewards) {
                            st.accepted += 1;
                            if st.accepted == st.rule.target_groups {
                                return Ok(Flow::Halt);
                            }
                        } else {
                            st.rejected += 1;
                        }
                        st.top_up(fired.at);
                        st.dispatch(eng)?;
                    }
                }
            }
            Ok(Flow::Continue)
        })();
        step.unwrap_or_else(|e| {
            failure = Some(e);
            Flow::Halt
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let end = summary.clock;
    let mut trace = RolloutTrace {
        makespan: end,
        slots: pool.capacity(),
        accepted_groups: st.accepted,
        rejected_groups: st.rejected,
        incomplete: st.accepted < st.rule.target_groups,
        rounds: 1,
        event_log: eng.take_log(),
        ..RolloutTrace::default()
    };
    let mut accepted_groups = vec![false; st.groups.len()];
    for (gi, g) in st.groups.iter().enumerate() {
        let rewards: Vec<f64> = (g.first_task..g.first_task + g.size).map(|i| st.tasks[i].draw.reward).collect();
        accepted_groups[gi] = g.scored == g.size && st.rule.predicate.accepts(&rewards);
    }
    let mut busy = 0.0;
    let mut gen_end: Time = 0.0;
    for (id, t) in st.tasks.iter().enumerate() {
        let status = match (t.status, t.start) {
            (Some(s), _) => s,
            (None, Some(_)) => TaskStatus::Aborted,
            (None, None) => TaskStatus::Discarded,
        };
        let finish = match status {
            TaskStatus::Done => t.finish,
            TaskStatus::Aborted => Some(end),
            TaskStatus::Discarded => None,
        };
        if let (Some(s), Some(f)) = (t.start, finish) {
            busy += f - s;
            gen_end = gen_end.max(f);
        }
        match status {
            TaskStatus::Done => {
                trace.completed_samples += 1;
                if !accepted_groups[t.group] {
                    trace.wasted_samples += 1;
                    trace.wasted_seconds += t.draw.service;
                }
            }
            TaskStatus::Aborted => {
                trace.wasted_samples += 1;
                trace.wasted_seconds += end - t.start.expect("aborted task started");
            }
            TaskStatus::Discarded => {}
        }
        trace.records.push(TaskRecord {
            task: id,
            prompt: st.groups[t.group].prompt,
            replica: t.replica,
            worker: t.slot.map(|s| s / pool.slots_per_worker).or(t.worker),
            slot: t.slot,
            admitted: t.admitted,
            start: t.start,
            finish,
            service_time: t.draw.service,
            status,
        });
    }
    trace.generation_end = gen_end;
    trace.idle_fraction = idle_fraction(busy, pool.capacity(), gen_end);
    trace.reward_overlap = st
        .reward_spans
        .iter()
        .map(|(s, e)| overlap(*s, e.min(end), gen_end))
        .sum();
    Ok(trace)
}

/// Queue-scheduled rollout with dynamic filtering over a generative prompt
/// source.
pub fn run_queue_scheduling(cfg: &QueueScheduling, seed: &SeedState) -> Result<RolloutTrace> {
    cfg.validate()?;
    let source = cfg.source(seed);
    let budget = cfg.prompt_budget;
    run_queue_core(
        cfg.pool,
        cfg.placement,
        cfg.rule,
        cfg.reward.workers,
        Box::new(move |p| {
            if budget.is_some_and(|b| p >= b) {
                None
            } else {
                Some(source.group(p))
            }
        }),
        cfg.log_events,
    )
}

/// Queue scheduling of explicit tasks without filtering: every prompt group
/// is admitted at once and the rollout ends when all groups are scored.
/// Reward latencies use the same per-task streams as [`run_batch_rollout`].
pub fn run_queue_scheduling_tasks(
    tasks: &[RolloutTask],
    pool: &WorkerPool,
    placement: Placement,
    reward: &RewardStage,
    seed: &SeedState,
) -> Result<RolloutTrace> {
    pool.validate()?;
    reward.validate()?;
    if tasks.is_empty() {
        return Ok(RolloutTrace {
            slots: pool.capacity(),
            ..RolloutTrace::default()
        });
    }
    let draws = explicit_draws(tasks, reward, seed);
    let mut order: Vec<usize> = Vec::new();
    let mut groups: Vec<PromptGroup> = Vec::new();
    let mut index: HashMap<usize, usize> = HashMap::new();
    for (t, d) in tasks.iter().zip(&draws) {
        let gi = *index.entry(t.prompt).or_insert_with(|| {
            groups.push(PromptGroup {
                prompt: t.prompt,
                draws: Vec::new(),
            });
            groups.len() - 1
        });
        groups[gi].draws.push(d.draw);
        order.push(t.id);
    }
    let n_groups = groups.len();
    let rule = FilterRule {
        group_size: 1,
        predicate: FilterPredicate::None,
        target_groups: n_groups,
        max_additional_running_prompts: 0,
    };
    let mut slots: Vec<Option<PromptGroup>> = groups.into_iter().map(Some).collect();
    let mut trace = run_queue_core(
        *pool,
        placement,
        rule,
        reward.workers,
        Box::new(move |p| slots.get_mut(p).and_then(Option::take)),
        false,
    )?;
    // Records come out grouped by prompt; map back to caller task ids.
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for t in tasks {
        by_group[index[&t.prompt]].push(t.id);
    }
    let ids: Vec<usize> = by_group.into_iter().flatten().collect();
    for (r, id) in trace.records.iter_mut().zip(ids) {
        r.task = id;
    }
    Ok(trace)
}

/// Redundant environment admission: `num_env_groups * group_size` episodes
/// are admitted and collection stops at `rollout_batch_size` trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedundancyPlan {
    pub num_env_groups: usize,
    pub group_size: usize,
    pub rollout_batch_size: usize,
}

impl RedundancyPlan {
    pub fn admitted(&self) -> usize {
        self.num_env_groups * self.group_size
    }

    pub fn is_redundant(&self) -> bool {
        self.admitted() > self.rollout_batch_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissionSchedule {
    /// `(group, index within group)` for every admitted episode.
    pub episodes: Vec<(usize, usize)>,
    pub target: usize,
    /// Upper bound on episodes aborted once the target is reached.
    pub max_surplus: usize,
}

pub fn plan_redundant_envs(plan: &RedundancyPlan) -> Result<AdmissionSchedule> {
    if plan.num_env_groups == 0 || plan.group_size == 0 || plan.rollout_batch_size == 0 {
        return Err(Error::InvalidArgument(format!("redundancy plan fields must be positive: {plan:?}")));
    }
    if plan.admitted() < plan.rollout_batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} env groups x {} < rollout batch size {}",
            plan.num_env_groups, plan.group_size, plan.rollout_batch_size
        )));
    }
    let episodes = (0..plan.num_env_groups)
        .flat_map(|g| (0..plan.group_size).map(move |i| (g, i)))
        .collect();
    Ok(AdmissionSchedule {
        episodes,
        target: plan.rollout_batch_size,
        max_surplus: plan.admitted() - plan.rollout_batch_size,
    })
}
