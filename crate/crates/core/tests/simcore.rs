// SPDX-License-Identifier: Apache-2.0

use asyncrl_core::simcore::*;
use proptest::prelude::*;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
struct Ev(u64);

impl SimEvent for Ev {
    fn kind(&self) -> EventKind {
        EventKind::TaskFinish
    }
    fn entity(&self) -> u64 {
        self.0
    }
}

#[test]
fn run_until_examples() {
    let mut eng: Engine<Ev> = Engine::new();
    let s = eng.run_until(StopCondition::queue_empty(), |_, _| Flow::Continue);
    assert_eq!((s.clock, s.exhausted), (0.0, true));

    eng.schedule(Ev(1), 7.5).unwrap();
    assert_eq!(eng.run_until(StopCondition::queue_empty(), |_, _| Flow::Continue).clock, 7.5);

    let mut eng: Engine<Ev> = Engine::new();
    eng.schedule(Ev(1), 5.0).unwrap();
    eng.schedule(Ev(2), 15.0).unwrap();
    let s = eng.run_until(StopCondition::until(10.0), |_, _| Flow::Continue);
    assert_eq!((s.clock, s.processed, eng.pending_count()), (5.0, 1, 1));
}

#[test]
fn cancel_examples() {
    let mut eng: Engine<Ev> = Engine::new();
    let a = eng.schedule(Ev(1), 1.0).unwrap();
    let b = eng.schedule(Ev(2), 2.0).unwrap();
    assert!(eng.cancel(b));
    assert_eq!(eng.pop().unwrap().id, a);
    assert!(!eng.cancel(a));
    let c = eng.schedule(Ev(2), 2.0).unwrap();
    assert_ne!(b, c);
    assert_eq!(eng.pop().unwrap().id, c);
    assert!(eng.pop().is_none());
    assert!(eng.schedule(Ev(3), 1.0).is_err());
}

#[test]
fn handler_halt_acts_as_world_predicate() {
    let mut eng: Engine<Ev> = Engine::new();
    for i in 0..10 {
        eng.schedule(Ev(i), i as f64).unwrap();
    }
    let mut seen = 0;
    let s = eng.run_until(StopCondition::queue_empty(), |_, f| {
        seen += f.payload.0;
        if seen >= 6 {
            Flow::Halt
        } else {
            Flow::Continue
        }
    });
    assert!(s.halted);
    assert_eq!(s.clock, 3.0);
}

fn replay(seed: u64) -> Vec<String> {
    let mut rng = SeedState::new(seed).derive("replay", 0).rng();
    let mut eng: Engine<Ev> = Engine::new().with_event_log();
    for i in 0..50 {
        eng.schedule(Ev(i), rng.random_range(0.0..10.0)).unwrap();
    }
    eng.run_until(StopCondition::queue_empty(), |e, f| {
        if f.payload.0 < 200 {
            let d = rng.random_range(0.0..3.0);
            e.schedule_in(Ev(f.payload.0 + 50), d).unwrap();
        }
        Flow::Continue
    });
    eng.take_log()
}

#[test]
fn replays_are_identical() {
    let a = replay(3);
    assert_eq!(a, replay(3));
    assert_ne!(a, replay(4));
    assert_eq!(a[0].split(',').nth(1), Some("task_finish"));
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let s = SeedState::new(42);
    let draw = |st: SeedState| -> Vec<u64> {
        let mut r = st.rng();
        (0..8).map(|_| r.random::<u64>()).collect()
    };
    assert_eq!(draw(s.derive("task", 1)), draw(s.derive("task", 1)));
    assert_ne!(draw(s.derive("task", 1)), draw(s.derive("task", 2)));
    assert_ne!(draw(s.derive("task", 1)), draw(s.derive("train", 1)));
    assert_ne!(point_seed(1, 0, 0), point_seed(1, 1, 0));
    assert_ne!(point_seed(1, 0, 0), point_seed(1, 0, 1));
}

#[derive(Debug, Clone)]
enum Op {
    Push(u8),
    Pop,
    Cancel(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u8..20).prop_map(Op::Push),
        2 => Just(Op::Pop),
        1 => (0u8..40).prop_map(Op::Cancel),
    ]
}

proptest! {
    /// The engine dequeues in (time, id) order, matching a sorted-list oracle.
    #[test]
    fn matches_sorted_list_oracle(ops in prop::collection::vec(op(), 1..200)) {
        let mut eng: Engine<Ev> = Engine::new();
        let mut oracle: Vec<(f64, u64)> = Vec::new();
        let mut ids: Vec<EventId> = Vec::new();
        let mut last = 0.0;
        for o in ops {
            match o {
                Op::Push(dt) => {
                    let at = eng.now() + f64::from(dt) * 0.5;
                    let id = eng.schedule(Ev(0), at).unwrap();
                    ids.push(id);
                    oracle.push((at, id.0));
                }
                Op::Pop => {
                    oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let want = if oracle.is_empty() { None } else { Some(oracle.remove(0)) };
                    let got = eng.pop().map(|f| (f.at, f.id.0));
                    prop_assert_eq!(got, want);
                    prop_assert!(eng.now() >= last);
                    last = eng.now();
                }
                Op::Cancel(i) => {
                    if let Some(&id) = ids.get(i as usize) {
                        let was = oracle.iter().position(|&(_, x)| x == id.0);
                        prop_assert_eq!(eng.cancel(id), was.is_some());
                        if let Some(p) = was {
                            oracle.remove(p);
                        }
                    }
                }
            }
        }
    }
}
