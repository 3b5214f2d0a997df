// SPDX-License-Identifier: Apache-2.0

use approx::assert_relative_eq;
use asyncrl_core::scheduler::*;
use asyncrl_core::workload::*;
use asyncrl_core::SeedState;
use proptest::prelude::*;

fn tasks(times: &[f64]) -> Vec<RolloutTask> {
    times.iter().enumerate().map(|(i, &t)| RolloutTask::new(i, i, t)).collect()
}

fn seed() -> SeedState {
    SeedState::new(0)
}

fn instant() -> RewardStage {
    RewardStage::instant()
}

/// Greedy list scheduling, written independently: scan slots for the
/// earliest free one.
fn greedy_makespan(times: &[f64], k: usize) -> f64 {
    let mut free = vec![0.0f64; k];
    let mut end: f64 = 0.0;
    for &t in times {
        let (i, _) = free
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &f)| if f < b.1 { (i, f) } else { b });
        free[i] += t;
        end = end.max(free[i]);
    }
    end
}

fn assert_work_conserving(trace: &RolloutTrace) {
    let cap = trace.slots;
    for r in &trace.records {
        let Some(s) = r.start else { continue };
        if s == 0.0 {
            continue;
        }
        let busy = trace
            .records
            .iter()
            .filter(|o| matches!((o.start, o.finish), (Some(a), Some(b)) if a < s && b >= s))
            .count();
        assert_eq!(busy, cap, "a slot idled before t={s}");
    }
}

#[test]
fn batch_rollout_examples() {
    let pool = WorkerPool::infer(2);
    let t = run_batch_rollout(&tasks(&[10.0; 4]), &pool, Placement::Global, &instant(), &seed()).unwrap();
    assert_eq!(t.makespan, 20.0);

    let t = run_batch_rollout(&tasks(&[1.0, 50.0]), &pool, Placement::Global, &instant(), &seed()).unwrap();
    assert_eq!(t.makespan, 50.0);
    assert_relative_eq!(t.idle_fraction, 0.49, epsilon = 1e-12);

    let t = run_batch_rollout(&tasks(&[7.0]), &WorkerPool::infer(8), Placement::Global, &instant(), &seed()).unwrap();
    assert_eq!(t.makespan, 7.0);
    assert_relative_eq!(t.idle_fraction, 7.0 / 8.0, epsilon = 1e-12);

    let empty = run_batch_rollout(&[], &pool, Placement::Global, &instant(), &seed()).unwrap();
    assert_eq!(empty.makespan, 0.0);
}

#[test]
fn queue_scheduling_examples() {
    let pool = WorkerPool::infer(2);
    let q = run_queue_scheduling_tasks(&tasks(&[10.0; 4]), &pool, Placement::Global, &instant(), &seed()).unwrap();
    assert_eq!(q.makespan, 20.0);

    let five = RewardStage::unbounded(LatencyModel::constant(5.0));
    let q = run_queue_scheduling_tasks(&tasks(&[1.0, 50.0]), &pool, Placement::Global, &five, &seed()).unwrap();
    let b = run_batch_rollout(&tasks(&[1.0, 50.0]), &pool, Placement::Global, &five, &seed()).unwrap();
    assert_eq!((q.makespan, b.makespan), (55.0, 55.0));
    assert!(q.reward_overlap > 0.0);

    // Overlap pays off once rewards contend for a finite pool: the batch
    // scores all four after t = 51, the queue scores three while the
    // straggler still runs.
    let one = RewardStage {
        latency: LatencyModel::constant(5.0),
        workers: Some(1),
    };
    let ts = tasks(&[1.0, 1.0, 50.0, 1.0]);
    let q = run_queue_scheduling_tasks(&ts, &pool, Placement::Global, &one, &seed()).unwrap();
    let b = run_batch_rollout(&ts, &pool, Placement::Global, &one, &seed()).unwrap();
    assert_eq!((q.makespan, b.makespan), (56.0, 71.0));
}

#[test]
fn redundancy_plan_examples() {
    let plan = |g, s, b| RedundancyPlan {
        num_env_groups: g,
        group_size: s,
        rollout_batch_size: b,
    };
    let a = plan_redundant_envs(&plan(32, 8, 256)).unwrap();
    assert_eq!((a.episodes.len(), a.target, a.max_surplus), (256, 256, 0));
    assert!(!plan(32, 8, 256).is_redundant());
    let a = plan_redundant_envs(&plan(36, 12, 256)).unwrap();
    assert_eq!((a.episodes.len(), a.max_surplus), (432, 176));
    let a = plan_redundant_envs(&plan(1, 1, 1)).unwrap();
    assert_eq!((a.episodes.len(), a.target), (1, 1));
    assert!(plan_redundant_envs(&plan(4, 4, 17)).is_err());
}

fn filtering(budget: Option<usize>, extra: usize) -> QueueScheduling {
    QueueScheduling {
        rule: FilterRule {
            group_size: 4,
            predicate: FilterPredicate::ZeroVarianceReject,
            target_groups: 6,
            max_additional_running_prompts: extra,
        },
        pool: WorkerPool::infer(4).with_slots(2),
        placement: Placement::Global,
        generation: LatencyModel::lognormal_from_median(5.0, 1.0, 100.0),
        reward: RewardStage::unbounded(LatencyModel::constant(0.5)),
        outcome: OutcomeModel { alpha: 0.4, beta: 0.4 },
        prompt_budget: budget,
        log_events: false,
    }
}

fn nonzero_variance_groups(cfg: &QueueScheduling, seed: &SeedState, prompts: usize) -> usize {
    let source = PromptSource {
        generation: &cfg.generation,
        reward_latency: &cfg.reward.latency,
        outcome: cfg.outcome,
        group_size: cfg.rule.group_size,
        seed: *seed,
    };
    (0..prompts)
        .filter(|&p| {
            let r: Vec<f64> = source.group(p).draws.iter().map(|d| d.reward).collect();
            FilterPredicate::ZeroVarianceReject.accepts(&r)
        })
        .count()
}

#[test]
fn filtering_accepts_min_of_target_and_eligible() {
    for s in 0..30 {
        let seed = SeedState::new(s);
        for budget in [4, 8, 12, 40] {
            for extra in [0, 3] {
                let cfg = filtering(Some(budget), extra);
                let eligible = nonzero_variance_groups(&cfg, &seed, budget);
                let q = run_queue_scheduling(&cfg, &seed).unwrap();
                let b = run_batch_rollout_filtered(&cfg, &seed).unwrap();
                let want = eligible.min(cfg.rule.target_groups);
                assert_eq!(q.accepted_groups, want, "queue seed {s} budget {budget}");
                assert_eq!(q.incomplete, eligible < cfg.rule.target_groups);
                assert!(b.accepted_groups <= cfg.rule.target_groups);
                assert!(q.idle_fraction >= 0.0 && q.idle_fraction <= 1.0);
            }
        }
    }
}

#[test]
fn no_filter_accepts_every_group() {
    let mut cfg = filtering(None, 2);
    cfg.rule.predicate = FilterPredicate::None;
    let q = run_queue_scheduling(&cfg, &seed()).unwrap();
    assert_eq!(q.accepted_groups, cfg.rule.target_groups);
    assert_eq!(q.rejected_groups, 0);
    assert!(!q.incomplete);
}

#[test]
fn trace_csv_has_one_row_per_task() {
    let q = run_queue_scheduling_tasks(&tasks(&[3.0, 1.0, 2.0]), &WorkerPool::infer(2), Placement::Global, &instant(), &seed()).unwrap();
    let mut out = Vec::new();
    q.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "task,prompt,replica,start,finish,worker,status");
    assert_eq!(lines.len(), 4);
}

#[test]
fn replication_beats_pinning_with_prompt_difficulty() {
    let model = LatencyModel::lognormal_from_median(5.0, 1.2, 200.0);
    let pool = WorkerPool::infer(4).with_slots(4);
    let (mut g, mut p) = (0.0, 0.0);
    for s in 0..20 {
        let seed = SeedState::new(s);
        let prompts: Vec<usize> = (0..4).collect();
        let ts = make_tasks_with_difficulty(&prompts, 16, 0, &model, 1.0, &seed).unwrap();
        g += run_queue_scheduling_tasks(&ts, &pool, Placement::Global, &instant(), &seed).unwrap().makespan;
        p += run_queue_scheduling_tasks(&ts, &pool, Placement::PinnedByPrompt, &instant(), &seed).unwrap().makespan;
    }
    assert!(g < p, "{g} vs {p}");
}

proptest! {
    #[test]
    fn queue_matches_oracle_and_respects_bound(
        times in prop::collection::vec(0.0f64..100.0, 1..120),
        k in 1usize..16,
    ) {
        let ts = tasks(&times);
        let pool = WorkerPool::infer(k);
        let q = run_queue_scheduling_tasks(&ts, &pool, Placement::Global, &instant(), &seed()).unwrap();
        let b = run_batch_rollout(&ts, &pool, Placement::Global, &instant(), &seed()).unwrap();
        prop_assert_eq!(q.makespan, greedy_makespan(&times, k));
        prop_assert!(q.makespan <= b.makespan);
        let (n, mean, max) = q.realized_moments();
        prop_assert_eq!(n, times.len());
        prop_assert!(q.makespan <= n as f64 / k as f64 * mean + max + 1e-9);
        assert_work_conserving(&q);
    }
}
