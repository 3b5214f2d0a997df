// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use asyncrl_report::gradcheck::{all_variants, gradcheck};
use asyncrl_report::{
    load_config, reproduce_figure, run_experiment, verify_bounds, ExperimentConfig, Format, Mode, ResultTable,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Gradient checks pass below this relative error.
const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "asyncrl", version, about = "Simulate and analyse asynchronous RL post-training pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the number of repetitions.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Write tables, the run summary and the echoed config here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run the base point of a config (sweep axes ignored).
    Simulate { config: PathBuf },
    /// Run every point of the config's sweep.
    Sweep { config: PathBuf },
    /// Print the closed-form bounds for a config.
    Bounds { config: PathBuf },
    /// Check a result table against the completion-time bound.
    Verify { table: PathBuf, config: PathBuf },
    /// Run a figure recipe and its pass/fail checks.
    Reproduce { figure: String },
    /// Finite-difference check of every policy-gradient objective.
    Gradcheck { config: PathBuf },
}

fn load(path: &Path, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.reps {
        cfg.repetitions = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(table: &ResultTable, common: &Common, extra: serde_json::Value, cfg: Option<&ExperimentConfig>) -> Result<()> {
    let Some(dir) = &common.out else {
        let stdout = std::io::stdout();
        table.write_rows(stdout.lock(), common.format)?;
        table.write_summary(stdout.lock(), common.format)?;
        return Ok(());
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let ext = common.format.extension();
    table.write_rows(fs::File::create(dir.join(format!("results.{ext}")))?, common.format)?;
    table.write_summary(fs::File::create(dir.join(format!("summary.{ext}")))?, common.format)?;
    if let Some(cfg) = cfg {
        fs::write(dir.join("config.toml"), cfg.echo()?)?;
    }
    let summary = json!({
        "mode": table.mode,
        "rows": table.rows.len(),
        "errors": table.errors().count(),
        "summary": table.summary,
        "extra": extra,
    });
    fs::write(dir.join("run_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn report_errors(table: &ResultTable) -> bool {
    let mut ok = true;
    for r in table.errors() {
        ok = false;
        eprintln!("error at point {} ({}) rep {}: {}", r.point, r.params, r.rep, r.error.as_deref().unwrap_or(""));
    }
    ok
}

fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    match cli.command {
        Command::Simulate { config } => {
            let mut cfg = load(&config, common)?;
            cfg.sweep.clear();
            cfg.baseline_point = 0;
            let table = run_experiment(&cfg)?;
            emit(&table, common, json!(null), Some(&cfg))?;
            Ok(report_errors(&table))
        }
        Command::Sweep { config } => {
            let cfg = load(&config, common)?;
            let table = run_experiment(&cfg)?;
            emit(&table, common, json!(null), Some(&cfg))?;
            Ok(report_errors(&table))
        }
        Command::Bounds { config } => {
            let cfg = load(&config, common)?;
            print!("{}", cfg.bound_inputs().report()?);
            if common.out.is_some() {
                let bounds = ExperimentConfig {
                    mode: Some(Mode::Bounds),
                    ..cfg.clone()
                };
                emit(&run_experiment(&bounds)?, common, json!(null), Some(&bounds))?;
            }
            Ok(true)
        }
        Command::Verify { table, config } => {
            let cfg = load(&config, common)?;
            let text = fs::read_to_string(&table).with_context(|| format!("reading {}", table.display()))?;
            let format = match table.extension().and_then(|e| e.to_str()) {
                Some("jsonl") | Some("json") => Format::JsonLines,
                _ => Format::Csv,
            };
            let t = ResultTable::read_rows(&text, format, cfg.mode(), cfg.baseline_point)?;
            let verdict = verify_bounds(&t, &cfg.bound_inputs())?;
            if verdict.checked == 0 {
                bail!("{} has no rows with a makespan to verify", table.display());
            }
            print!("{verdict}");
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(&verdict)?)?;
            }
            Ok(verdict.passed())
        }
        Command::Reproduce { figure } => {
            let outcome = reproduce_figure(&figure, common.seed.unwrap_or(0), common.reps)?;
            print!("{outcome}");
            emit(&outcome.table, common, json!({ "figure": figure, "checks": outcome.checks }), None)?;
            Ok(outcome.passed())
        }
        Command::Gradcheck { config } => {
            let cfg = load(&config, common)?;
            let mut ok = true;
            let mut out = std::io::stdout().lock();
            for loss in all_variants(&cfg.loss) {
                let s = gradcheck(&loss, cfg.offpolicy.gradcheck_instances, cfg.seed)?;
                let pass = s.max_rel_err < GRADCHECK_TOL && s.instances == cfg.offpolicy.gradcheck_instances;
                ok &= pass;
                writeln!(
                    out,
                    "[{}] {} instances={} skipped={} max_rel_err={:e}",
                    if pass { "PASS" } else { "FAIL" },
                    s.variant,
                    s.instances,
                    s.skipped,
                    s.max_rel_err
                )?;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
