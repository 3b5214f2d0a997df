// SPDX-License-Identifier: Apache-2.0

use std::process::Command;

use asyncrl_core::scheduler::Placement;
use asyncrl_core::workload::LatencyModel;
use asyncrl_report::verify::verify_bounds;
use asyncrl_report::*;

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

#[test]
fn appendix_keys_select_modes() {
    let c = cfg("async_generation_ratio = 0\nrollout_batch_size = 128\n");
    assert_eq!(c.mode(), Mode::Sync);
    assert_eq!(c.rollout_batch_size, 128);
    assert_eq!(cfg("async_generation_ratio = 2").mode(), Mode::Async);

    let c = cfg("is_num_return_sequences_expand = true");
    assert_eq!(c.placement(), Placement::Global);
    assert_eq!(cfg("").placement(), Placement::PinnedByPrompt);

    let c = cfg("num_env_groups = 36\ngroup_size = 12\nmax_additional_running_prompts = 16\nmode = \"redundancy\"");
    assert_eq!((c.redundancy_plan().num_env_groups, c.redundancy_plan().group_size), (36, 12));
    assert_eq!(c.queue_scheduling().rule.max_additional_running_prompts, 16);
}

#[test]
fn schema_errors_name_the_field() {
    let e = ExperimentConfig::from_toml("rollout_batch_size = -4").unwrap_err().to_string();
    assert!(e.contains("rollout_batch_size") && e.contains("line 1"), "{e}");

    let e = ExperimentConfig::from_toml("seed = 1\nasync_ratio = 2").unwrap_err().to_string();
    assert!(e.contains("async_ratio") && e.contains("line 2"), "{e}");

    let e = ExperimentConfig::from_toml("rollout_batch_size = 0").unwrap_err();
    assert!(matches!(&e, ReportError::Schema { field, .. } if field == "rollout_batch_size"), "{e}");

    let e = ExperimentConfig::from_toml("[sweep]\nnot_a_param = [1, 2]").unwrap_err().to_string();
    assert!(e.contains("sweep.not_a_param"), "{e}");

    let e = ExperimentConfig::from_toml("[generation]\nkind = \"truncated_gaussian\"\nmean = 1\nstd = 1\nupper = 1\nextra = 2")
        .unwrap_err()
        .to_string();
    assert!(e.contains("extra"), "{e}");
    assert!(ExperimentConfig::from_toml("train_fraction = 1.5").is_err());
}

#[test]
fn echo_is_lossless() {
    let c = cfg(r#"
        async_generation_ratio = 2
        rollout_batch_size = 64
        workers = 16
        steps = 6
        warmup = 2
        repetitions = 2
        [generation]
        kind = "log_normal"
        mu = 2.0
        sigma = 1.0
        upper = 200
        [sweep]
        train_fraction = [0.25, 0.5]
    "#);
    let echoed = c.echo().unwrap();
    assert!(echoed.contains("mode = \"async\""), "{echoed}");
    assert!(echoed.contains("slots_per_worker = 1"), "{echoed}");
    let back = ExperimentConfig::from_toml(&echoed).unwrap();
    assert_eq!(back.mode(), c.mode());
    let a = run_experiment(&c).unwrap().to_bytes(Format::Csv).unwrap();
    let b = run_experiment(&back).unwrap().to_bytes(Format::Csv).unwrap();
    assert_eq!(a, b);
}

#[test]
fn alpha_sweep_cardinality_and_summary_arithmetic() {
    let c = cfg(r#"
        mode = "async"
        rollout_batch_size = 64
        workers = 16
        train_fraction = 0.25
        steps = 8
        warmup = 2
        repetitions = 5
        [sweep]
        async_generation_ratio = [0, 1, 2, 4, 8]
    "#);
    let t = run_experiment(&c).unwrap();
    assert_eq!(t.errors().count(), 0);
    let step_rows = t.rows.iter().filter(|r| r.metric == "step_time").count();
    let step_summaries = t.summary.iter().filter(|s| s.metric == "step_time").count();
    assert_eq!((step_rows, step_summaries), (25, 5));
    for p in 0..5 {
        let mut reps: Vec<usize> = t.rows.iter().filter(|r| r.point == p && r.metric == "step_time").map(|r| r.rep).collect();
        reps.sort();
        assert_eq!(reps, vec![0, 1, 2, 3, 4]);
    }
    let base = t.summary_for(0, "step_time").unwrap().mean;
    for s in t.summary.iter().filter(|s| s.metric == "step_time") {
        let xs = t.values(s.point, "step_time");
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((s.mean - mean).abs() <= 1e-12 * mean);
        assert!((s.speedup.unwrap() - base / s.mean).abs() <= 1e-12 * (base / s.mean));
    }
    assert!(t.summary.iter().filter(|s| s.metric != "step_time").all(|s| s.speedup.is_none()));
    // Staleness stays within the configured ratio at every point.
    for r in t.rows.iter().filter(|r| r.metric == "max_staleness") {
        let alpha: f64 = r.params.trim_start_matches("async_generation_ratio=").parse().unwrap();
        assert!(r.value.unwrap() <= alpha.ceil());
    }
}

#[test]
fn bounds_mode_has_one_row_per_quantity() {
    let c = cfg("mode = \"bounds\"\nasync_generation_ratio = 2\nworkers = 32\n");
    let t = run_experiment(&c).unwrap();
    assert_eq!(t.rows.len(), 9);
    let r = c.bound_inputs().report().unwrap();
    let v = t.values(0, "sync_end2end");
    assert_eq!(v, vec![r.sync_end2end]);
}

#[test]
fn batch_vs_queue_speedup_column_is_the_ratio() {
    let c = cfg(r#"
        mode = "batch-vs-queue"
        group_size = 8
        workers = 4
        slots_per_worker = 16
        repetitions = 3
        filter = "zero_variance_reject"
        max_additional_running_prompts = 16
        [generation]
        kind = "log_normal"
        mu = 2.302585092994046
        sigma = 1.0
        upper = 250
        [sweep]
        rollout_batch_size = [8, 16, 32, 64]
    "#);
    let t = run_experiment(&c).unwrap();
    for p in 0..4 {
        let (b, q, s) = (t.values(p, "batch_time"), t.values(p, "queue_time"), t.values(p, "speedup"));
        assert_eq!(s.len(), 3);
        for i in 0..3 {
            assert_eq!(s[i], b[i] / q[i]);
        }
    }
}

#[test]
fn failing_points_do_not_affect_others() {
    let c = cfg(r#"
        mode = "redundancy"
        num_env_groups = 8
        group_size = 8
        baseline_env_groups = 8
        [sweep]
        rollout_batch_size = [64, 100]
    "#);
    let t = run_experiment(&c).unwrap();
    let errs: Vec<_> = t.errors().collect();
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].point, 1);
    assert!(t.values(0, "step_time").len() == 1);
}

#[test]
fn constant_latency_slack_is_exact() {
    for (prompts, group, workers) in [(4, 16, 1), (5, 4, 16), (3, 7, 2)] {
        let mut c = cfg("mode = \"replication\"\nis_num_return_sequences_expand = true\n");
        c.rollout_batch_size = prompts;
        c.group_size = group;
        c.workers = workers;
        c.generation = LatencyModel::constant(10.0);
        let t = run_experiment(&c).unwrap();
        let v = verify_bounds(&t, &c.bound_inputs()).unwrap();
        assert!(v.passed());
        let q = (prompts * group) as f64;
        let k = workers as f64;
        let want = 10.0 * (1.0 + q / k - (q / k).ceil());
        assert!((v.min_slack.unwrap() - want).abs() < 1e-9, "{} vs {want}", v.min_slack.unwrap());
        assert!(v.checks.iter().all(|c| c.realized));
    }
}

#[test]
fn single_long_task_passes() {
    let mut c = cfg("mode = \"replication\"\nis_num_return_sequences_expand = true\nrollout_batch_size = 1\ngroup_size = 1\nworkers = 64\n");
    c.generation = LatencyModel::Empirical { samples: vec![500.0] };
    let t = run_experiment(&c).unwrap();
    let v = verify_bounds(&t, &c.bound_inputs()).unwrap();
    assert!(v.passed());
    assert_eq!(v.checked, 1);
}

#[test]
fn tables_round_trip_through_both_formats() {
    let c = cfg("mode = \"env-async\"\nrollout_batch_size = 32\nrepetitions = 2\n");
    let t = run_experiment(&c).unwrap();
    for f in [Format::Csv, Format::JsonLines] {
        let mut buf = Vec::new();
        t.write_rows(&mut buf, f).unwrap();
        let back = ResultTable::read_rows(std::str::from_utf8(&buf).unwrap(), f, t.mode, 0).unwrap();
        assert_eq!(back, t);
    }
}

#[test]
fn unknown_figure_is_an_error() {
    assert!(matches!(reproduce_figure("fig99", 0, None), Err(ReportError::UnknownFigure(_))));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asyncrl"))
}

#[test]
fn cli_sweep_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.toml");
    std::fs::write(
        &conf,
        "mode = \"replication\"\nis_num_return_sequences_expand = true\nrollout_batch_size = 16\nworkers = 4\n[sweep]\ngroup_size = [2, 4]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let st = cli().arg("sweep").arg(&conf).args(["--reps", "3", "--out"]).arg(&out).status().unwrap();
    assert!(st.success());
    for f in ["results.csv", "summary.csv", "run_summary.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let echoed = load_config(out.join("config.toml")).unwrap();
    assert_eq!(echoed.repetitions, 3);

    let o = cli().arg("verify").arg(out.join("results.csv")).arg(&conf).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("checked=6 violations=0"));

    // A doctored table fails verification with a nonzero exit.
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let bad = text.lines().map(inflate_makespan).collect::<Vec<_>>().join("\n");
    std::fs::write(dir.path().join("bad.csv"), bad).unwrap();
    let o = cli().arg("verify").arg(dir.path().join("bad.csv")).arg(&conf).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("violation"));
}

fn inflate_makespan(line: &str) -> String {
    let mut cols: Vec<&str> = line.split(',').collect();
    if cols.len() > 5 && cols[4] == "makespan" {
        cols[5] = "1e9";
    }
    cols.join(",")
}

#[test]
fn cli_reports_bad_configs_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.toml");
    std::fs::write(&conf, "rollout_batch_size = -1\n").unwrap();
    let o = cli().arg("simulate").arg(&conf).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("rollout_batch_size"));

    let o = cli().args(["reproduce", "fig9", "--format", "json-lines"]).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("[PASS] fig9 speedup_10_10"));
}

#[test]
fn cli_bounds_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("b.toml");
    std::fs::write(&conf, "async_generation_ratio = 2\nworkers = 32\n[generation]\nkind = \"constant\"\nvalue = 10\n").unwrap();
    let o = cli().arg("bounds").arg(&conf).output().unwrap();
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("optimal_beta=") && s.contains("completion_time=90"), "{s}");
}
