use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isojet::scenario::{
    batch_exit_code, run_batch, Command, Config, RunOptions, RunReport, Scenario,
};

/// Detect, rebuild and track isometries between chart-presented metrics,
/// driven by scenario files.
///
/// Exit status: 0 when every check passes, 2 when a diagnostic raised a
/// flag, 1 on errors or failed checks.
#[derive(Parser, Debug)]
#[command(name = "isojet", version)]
struct Cli {
    /// Scenario file (TOML, one `[[scenario]]` table per scenario).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this scenario; by default every scenario declaring the
    /// subcommand's task runs.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Replaces the scenarios' quasi-random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where `<scenario>.<command>.json` and `.csv` are written.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Multiplies every acceptance tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
    /// Worker threads (0: one per core).
    #[arg(long, global = true, env = "ISOJET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Normal-coordinate jets of the metric and of chart transitions.
    Invariants,
    /// Compare two atlases and assemble the local isometry on a match.
    Check,
    /// Continue a 1-jet along polylines and evaluate the global map.
    Propagate,
    /// Follow the isometry through a parameter family.
    Track,
    /// Truncated Bergman kernel and metric of a domain.
    Bergman,
    /// Track a family glued from an isometry and its reflection at t = 0.
    DemoDiscontinuity,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::Invariants => Command::Invariants,
            Sub::Check => Command::Check,
            Sub::Propagate => Command::Propagate,
            Sub::Track => Command::Track,
            Sub::Bergman => Command::Bergman,
            Sub::DemoDiscontinuity => Command::DemoDiscontinuity,
        }
    }
}

fn select<'a>(
    cfg: &'a Config,
    id: Option<&str>,
    command: Command,
) -> Result<Vec<&'a Scenario>, String> {
    match id {
        Some(id) => {
            let s = cfg.get(id).map_err(|e| e.to_string())?;
            if !s.supports(command) {
                return Err(format!(
                    "scenario {id:?} declares no task for `{}`",
                    command.name()
                ));
            }
            Ok(vec![s])
        }
        None => {
            let all: Vec<&Scenario> = cfg
                .scenarios
                .iter()
                .filter(|s| s.supports(command))
                .collect();
            if all.is_empty() {
                return Err(format!(
                    "no scenario declares a task for `{}`",
                    command.name()
                ));
            }
            Ok(all)
        }
    }
}

fn write_outputs(dir: &Path, report: &RunReport) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = report.file_stem();
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, report.to_json())?;
    let mut written = vec![json];
    if let Some(csv) = &report.csv {
        let path = dir.join(format!("{stem}.csv"));
        std::fs::write(&path, csv)?;
        written.push(path);
    }
    Ok(written)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let fail = |msg: String| {
        eprintln!("error: {msg}");
        ExitCode::from(1)
    };
    if let Some(n) = cli.threads {
        if let Err(e) = isojet::par::init_threads(n) {
            return fail(format!("cannot size the thread pool: {e}"));
        }
    }
    if !(cli.tol_scale > 0.0 && cli.tol_scale.is_finite()) {
        return fail(format!(
            "--tol-scale must be positive, got {}",
            cli.tol_scale
        ));
    }
    let Some(path) = cli.config.as_deref() else {
        return fail("--config is required".into());
    };
    let cfg = match Config::load(path) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let command = Command::from(cli.command);
    let scenarios = match select(&cfg, cli.scenario.as_deref(), command) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let opts = RunOptions {
        seed: cli.seed,
        tol_scale: cli.tol_scale,
    };
    let results = run_batch(&scenarios, command, &opts);
    let mut code = batch_exit_code(&results);
    for (s, r) in scenarios.iter().zip(&results) {
        match r {
            Ok(report) => {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                let ms = report.timing.as_ref().map_or(0.0, |t| t.elapsed_ms);
                println!(
                    "{} {}: {:?} ({ms:.0} ms)",
                    report.scenario,
                    command.name(),
                    report.status
                );
                for name in failed {
                    println!("  failed check: {name}");
                }
                for flag in &report.flags {
                    println!("  flag: {flag}");
                }
                if let Err(e) = write_outputs(&cli.out_dir, report) {
                    eprintln!("error: writing outputs of {}: {e}", report.scenario);
                    code = 1;
                }
            }
            Err(e) => eprintln!("error: {}: {e}", s.id),
        }
    }
    ExitCode::from(code as u8)
}
