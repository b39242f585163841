//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for configuration problems (including bad
//! arguments), 3 when a run fails after it started.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    run_infill_study_with, run_timing_study, trajectories_csv, BenchName, BenchmarkFn, KrigingFn,
    TimingStudyConfig,
};
use crate::config::{run_config_entries, FlatConfig, OUTPUT_DIR_ENV};
use crate::driver::{checkpoint, history_csv, Driver, Mode, RunConfig, RunState};
use crate::error::{Error, Result};
use crate::evaluator::{
    Clock, EvaluationBackend, InProcessBackend, LatencyModel, RealClock, SimulatedLatencyBackend,
    SubprocessBackend, VirtualClock,
};
use crate::space::Bounds;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const CHECKPOINT_FILE: &str = "run.ckpt";

#[derive(Debug, Parser)]
#[command(name = "asybo", version, about = "Asynchronous Bayesian optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a setting, e.g. `--set run.seed=3`. Applied left to right.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Where outputs go; defaults to $ASYBO_OUTPUT_DIR, then the current
    /// directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the configured objective.
    Optimize(RunArgs),
    /// Budgeted pure-exploration sampling and a grid report of the surrogate.
    Krige(RunArgs),
    /// Total completion time against blocking fraction on virtual time.
    AsyncStudy(RunArgs),
    /// Optimization trajectories for several in-fill batch sizes.
    InfillStudy(RunArgs),
    /// Continue a run from its checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

/// Parse `argv`, run the subcommand and return the process exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("asybo: {e}");
            match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Optimize(a) => run_driver(&a, Mode::Optimize),
        Command::Krige(a) => run_driver(&a, Mode::Krige),
        Command::AsyncStudy(a) => async_study(&a),
        Command::InfillStudy(a) => infill_study(&a),
        Command::Resume {
            checkpoint: path,
            output_dir,
        } => resume(&path, output_dir),
    }
}

fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_flat(a: &RunArgs) -> Result<FlatConfig> {
    let mut flat = FlatConfig::load(&a.config)?;
    for o in &a.overrides {
        flat.apply_override(o)?;
    }
    Ok(flat)
}

fn config_error<E: std::fmt::Display>(e: E) -> Error {
    Error::Config(e.to_string())
}

/// How evaluations are carried out, as described by the `run.*` keys.
enum Objective {
    Bench(BenchmarkFn),
    Kriging(KrigingFn),
    Command(Vec<String>),
}

fn extra<'a>(c: &'a [(String, String)], key: &str) -> Option<&'a str> {
    c.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn extra_f64(c: &[(String, String)], key: &str) -> Result<Option<f64>> {
    extra(c, key)
        .map(|v| v.parse::<f64>().map_err(|_| config_error(format!("`{key}` must be a number"))))
        .transpose()
}

fn objective(c: &[(String, String)]) -> Result<Objective> {
    let name = extra(c, "run.objective").ok_or_else(|| config_error("`run.objective` is required"))?;
    if name == "command" {
        let cmd = extra(c, "run.command")
            .ok_or_else(|| config_error("`run.objective = command` needs `run.command`"))?;
        return Ok(Objective::Command(cmd.split_whitespace().map(String::from).collect()));
    }
    if let Ok(k) = name.parse::<KrigingFn>() {
        return Ok(Objective::Kriging(k));
    }
    let bench: BenchName = name.parse().map_err(config_error)?;
    let dim = match extra(c, "run.dim") {
        Some(d) => d.parse::<usize>().map_err(|_| config_error("`run.dim` must be an integer"))?,
        None => 2,
    };
    Ok(Objective::Bench(BenchmarkFn::new(bench, dim).map_err(config_error)?))
}

fn default_bounds(obj: &Objective) -> Option<Bounds> {
    match obj {
        Objective::Bench(f) => Some(f.domain()),
        Objective::Kriging(k) => Some(k.domain()),
        Objective::Command(_) => None,
    }
}

/// Build the backend and clock for `config`. In-process objectives run on
/// a virtual clock starting at `clock_time`; external commands use the real
/// clock.
fn wire(config: &RunConfig, clock_time: f64) -> Result<(Arc<dyn EvaluationBackend>, Arc<dyn Clock>)> {
    let obj = objective(&config.extra)?;
    let cost: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = match obj {
        Objective::Command(argv) => {
            let (prog, args) = argv
                .split_first()
                .ok_or_else(|| config_error("`run.command` is empty"))?;
            let backend = SubprocessBackend::new(prog).with_args(args.to_vec());
            return Ok((Arc::new(backend), Arc::new(RealClock::new())));
        }
        Objective::Bench(f) => {
            if f.dim != config.dim() {
                return Err(config_error("`run.bounds` dimension does not match `run.dim`"));
            }
            Arc::new(move |x: &[f64]| f.eval_unchecked(x))
        }
        Objective::Kriging(k) => {
            if config.dim() != 1 {
                return Err(config_error("kriging test functions are one-dimensional"));
            }
            Arc::new(move |x: &[f64]| k.eval(x[0]))
        }
    };
    let clock = Arc::new(VirtualClock::new());
    clock.set(clock_time);
    let latency_mean = extra_f64(&config.extra, "run.latency_mean")?;
    let backend: Arc<dyn EvaluationBackend> = match latency_mean {
        Some(mean) => {
            let std = extra_f64(&config.extra, "run.latency_std")?.unwrap_or(0.0);
            let rate = extra_f64(&config.extra, "run.failure_rate")?.unwrap_or(0.0);
            let f = Arc::clone(&cost);
            Arc::new(
                SimulatedLatencyBackend::new(
                    move |x: &[f64]| f(x),
                    clock.clone(),
                    LatencyModel::TruncatedNormal { mean, std },
                    config.seed,
                )
                .with_failure_rate(rate),
            )
        }
        None => {
            let f = Arc::clone(&cost);
            Arc::new(InProcessBackend::synchronous(move |x: &[f64]| f(x)))
        }
    };
    Ok((backend, clock))
}

fn run_config_for(a: &RunArgs, mode: Mode, out: &Path) -> Result<RunConfig> {
    let flat = load_flat(a)?;
    let obj_bounds = flat
        .get("run.objective")
        .map(|_| {
            let entries: Vec<(String, String)> =
                flat.entries().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            objective(&entries).map(|o| default_bounds(&o))
        })
        .transpose()?
        .flatten();
    let mut config = flat.to_run_config(obj_bounds)?;
    config.mode = mode;
    if config.checkpoint_path.is_none() {
        config.checkpoint_path = Some(out.join(CHECKPOINT_FILE));
    }
    Ok(config)
}

fn run_driver(a: &RunArgs, mode: Mode) -> Result<()> {
    let out = output_dir(a.output_dir.clone());
    let config = run_config_for(a, mode, &out)?;
    fs::create_dir_all(&out)?;
    let (backend, clock) = wire(&config, 0.0)?;
    let driver = Driver::new(config, backend, clock)?;
    finish_run(driver, &out)
}

fn resume(path: &Path, out: Option<PathBuf>) -> Result<()> {
    let (mut config, state) = checkpoint::restore(path)?;
    let out = out.unwrap_or_else(|| match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(d) => PathBuf::from(d),
        None => path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    });
    fs::create_dir_all(&out)?;
    config.checkpoint_path = Some(path.to_path_buf());
    let (backend, clock) = wire(&config, state.clock_time)?;
    let driver = Driver::resume(config, state, backend, clock)?;
    finish_run(driver, &out)
}

fn finish_run(mut driver: Driver, out: &Path) -> Result<()> {
    let started = Instant::now();
    let result = (|| -> Result<()> {
        while driver.step()? {}
        Ok(())
    })();
    let wall = started.elapsed().as_secs_f64();
    let dim = driver.config().dim();
    // write whatever we have even when the run failed
    fs::write(out.join("history.csv"), history_csv(driver.state(), dim))?;
    fs::write(
        out.join("summary.txt"),
        summary_text(driver.config(), driver.state(), wall, result.as_ref().err()),
    )?;
    result?;
    if driver.config().mode == Mode::Krige {
        let mut csv = String::new();
        for i in 1..=dim {
            let _ = write!(csv, "x{i},");
        }
        csv.push_str("mean,variance\n");
        for (x, m, v) in driver.surface()? {
            for xi in &x {
                let _ = write!(csv, "{xi},");
            }
            let _ = writeln!(csv, "{m},{v}");
        }
        fs::write(out.join("surface.csv"), csv)?;
    }
    Ok(())
}

fn summary_text(config: &RunConfig, state: &RunState, wall: f64, err: Option<&Error>) -> String {
    let mut s = String::from("# effective configuration\n");
    for (k, v) in run_config_entries(config) {
        let _ = writeln!(s, "{k} = {v}");
    }
    s.push_str("\n# result\n");
    match state.best() {
        Some((x, v)) => {
            let pt: Vec<String> = x.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(s, "best_value = {v}");
            let _ = writeln!(s, "best_point = {}", pt.join(", "));
        }
        None => s.push_str("best_value = none\nbest_point = none\n"),
    }
    let _ = writeln!(s, "completed = {}", state.n_completed());
    let _ = writeln!(s, "failed = {}", state.n_failed());
    let _ = writeln!(s, "pending = {}", state.pending.len());
    let _ = writeln!(s, "iterations = {}", state.iteration);
    let _ = writeln!(s, "run_time = {}", state.elapsed);
    let _ = writeln!(s, "wall_time_s = {wall:.3}");
    let _ = writeln!(
        s,
        "status = {}",
        match err {
            None => "ok".to_string(),
            Some(e) => format!("error: {e}"),
        }
    );
    s
}

fn echo(flat: &FlatConfig) -> String {
    let mut s = String::from("# effective configuration\n");
    s.push_str(&flat.to_text());
    s
}

fn bench_fn(flat: &FlatConfig) -> Result<BenchmarkFn> {
    let entries: Vec<(String, String)> =
        flat.entries().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    match objective(&entries)? {
        Objective::Bench(f) => Ok(f),
        _ => Err(config_error("studies need a benchmark `run.objective`")),
    }
}

fn async_study(a: &RunArgs) -> Result<()> {
    let flat = load_flat(a)?;
    let f = bench_fn(&flat)?;
    let driver = flat.to_run_config(Some(f.domain()))?;
    let mut cfg = TimingStudyConfig::new(
        flat.get_float("study.latency_mean")?.unwrap_or(100.0),
        flat.get_float("study.latency_std")?.unwrap_or(25.0),
    );
    if let Some(n) = flat.get_usize("study.realizations")? {
        cfg.realizations = n;
    }
    if let Some(f) = flat.get_floats("study.fractions")? {
        cfg.fractions = f;
    }
    if let Some(n) = flat.get_usize("study.iterations")? {
        cfg.iterations = n;
    }
    if flat.get("run.batch_k").or(flat.get("acq.batch_k")).is_some() {
        cfg.batch_k = driver.batch_k;
    }
    if flat.get("evaluator.max_simultaneous").is_some() {
        cfg.max_simultaneous = driver.evaluator.max_simultaneous;
    }
    if flat.get("evaluator.poll_interval_ms").is_some() {
        cfg.poll_interval = driver.evaluator.poll_interval.as_secs_f64();
    }
    cfg.seed = driver.seed;
    cfg.function = f;
    cfg.driver = driver;
    cfg.validate().map_err(config_error)?;

    let out = output_dir(a.output_dir.clone());
    fs::create_dir_all(&out)?;
    let started = Instant::now();
    let study = run_timing_study(&cfg)?;
    fs::write(out.join("timing.csv"), study.rows_csv())?;
    fs::write(out.join("timing_summary.csv"), study.summary_csv())?;
    let mut s = echo(&flat);
    s.push_str("\n# result\n");
    for r in &study.summary {
        let _ = writeln!(
            s,
            "fraction {} : mean {} std {} min {} max {}",
            r.fraction, r.mean, r.std, r.min, r.max
        );
    }
    let _ = writeln!(s, "runs = {}", study.rows.len());
    let _ = writeln!(s, "wall_time_s = {:.3}", started.elapsed().as_secs_f64());
    fs::write(out.join("summary.txt"), s)?;
    Ok(())
}

fn infill_study(a: &RunArgs) -> Result<()> {
    let flat = load_flat(a)?;
    let f = bench_fn(&flat)?;
    let mut template = flat.to_run_config(Some(f.domain()))?;
    template.checkpoint_path = None;
    let ks = flat.get_ints("study.ks")?.unwrap_or_else(|| vec![1, 4, 8]);
    if ks.contains(&0) {
        return Err(config_error("`study.ks` entries must be at least 1"));
    }
    let out = output_dir(a.output_dir.clone());
    fs::create_dir_all(&out)?;
    let started = Instant::now();
    let runs = run_infill_study_with(&template, &f, &ks)?;
    fs::write(out.join("infill.csv"), trajectories_csv(&runs))?;
    let mut s = echo(&flat);
    s.push_str("\n# result\n");
    for t in &runs {
        match t.best() {
            Some((x, v)) => {
                let _ = writeln!(s, "k {} : evaluations {} best_value {v} best_point {x:?}", t.k, t.points.len());
            }
            None => {
                let _ = writeln!(s, "k {} : evaluations {} no completed evaluations", t.k, t.points.len());
            }
        }
    }
    let _ = writeln!(s, "wall_time_s = {:.3}", started.elapsed().as_secs_f64());
    fs::write(out.join("summary.txt"), s)?;
    Ok(())
}
