//! Test functions and the two experiment harnesses: in-fill batch size
//! trajectories and the blocking-fraction timing study.

mod functions;

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

pub use functions::{ackley, griewangk, rastrigin, rosenbrock, BenchName, BenchmarkFn, KrigingFn};

use crate::acquisition::{AcquisitionFamily, AcquisitionSpec, KappaSchedule};
use crate::driver::{run, RunConfig};
use crate::error::{invalid, Result};
use crate::evaluator::{
    Clock, EvaluationBackend, InProcessBackend, LatencyModel, SimulatedLatencyBackend, Status,
    VirtualClock,
};
use crate::kernel::KernelSpec;

/// Driver settings used for the benchmark runs: SE kernel, LCB with an
/// annealed κ and an initial length scale of a tenth of the box.
pub fn benchmark_config(f: &BenchmarkFn, max_evals: usize, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(f.domain());
    c.kernel = KernelSpec::squared_exponential(0.1)
        .and_then(|k| k.with_dim(f.dim))
        .expect("valid kernel");
    c.acq = AcquisitionSpec::new(
        AcquisitionFamily::Lcb,
        KappaSchedule::Annealing {
            kappa0: 3.0,
            decay: 0.95,
        },
    );
    c.max_evals = max_evals;
    c.n_init = c.n_init.min(max_evals);
    c.seed = seed;
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingStudyConfig {
    pub latency_mean: f64,
    pub latency_std: f64,
    pub realizations: usize,
    pub fractions: Vec<f64>,
    pub batch_k: usize,
    /// Rounds of `batch_k` points; the first round is the initial design.
    pub iterations: usize,
    pub max_simultaneous: usize,
    pub seed: u64,
    /// Virtual-time polling period.
    pub poll_interval: f64,
    /// Objective whose values drive the surrogate; its cost is irrelevant
    /// to the timing.
    pub function: BenchmarkFn,
    /// Driver settings per run; design size, batch size, budget, seed and
    /// evaluator knobs are overwritten from the fields above.
    pub driver: RunConfig,
    /// Number of realizations run concurrently.
    pub threads: usize,
}

impl TimingStudyConfig {
    pub fn new(latency_mean: f64, latency_std: f64) -> Self {
        let function = BenchmarkFn::new(BenchName::Rastrigin, 2).expect("valid dimension");
        let mut driver = benchmark_config(&function, 1, 0);
        driver.acqopt.max_evals = 400;
        TimingStudyConfig {
            latency_mean,
            latency_std,
            realizations: 50,
            fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            batch_k: 4,
            iterations: 8,
            max_simultaneous: 4,
            seed: 0,
            poll_interval: 0.5,
            function,
            driver,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }

    pub fn max_evals(&self) -> usize {
        self.batch_k * self.iterations
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(invalid("realizations must be at least 1"));
        }
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(invalid("fractions must be a non-empty subset of [0, 1]"));
        }
        if self.batch_k == 0 || self.iterations == 0 {
            return Err(invalid("batch_k and iterations must be at least 1"));
        }
        if !(self.latency_mean >= 0.0 && self.latency_std >= 0.0) {
            return Err(invalid("latency parameters must be non-negative"));
        }
        if !(self.poll_interval > 0.0) {
            return Err(invalid("poll interval must be positive"));
        }
        if self.driver.dim() != self.function.dim {
            return Err(invalid("driver bounds do not match the study function"));
        }
        Ok(())
    }

    fn run_config(&self, fraction: f64, realization: usize) -> RunConfig {
        let mut c = self.driver.clone();
        c.max_evals = self.max_evals();
        c.seed = self.seed.wrapping_add(realization as u64);
        c.checkpoint_path = None;
        c.n_init = self.batch_k;
        c.batch_k = self.batch_k;
        c.evaluator.blocking_fraction = fraction;
        c.evaluator.max_simultaneous = self.max_simultaneous;
        c.evaluator.poll_interval = Duration::from_secs_f64(self.poll_interval);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub fraction: f64,
    pub realization: usize,
    pub total_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    pub fraction: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingStudy {
    pub rows: Vec<TimingRow>,
    pub summary: Vec<TimingSummary>,
}

impl TimingStudy {
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("fraction,realization,total_time\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.fraction, r.realization, r.total_time);
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("fraction,mean,std,min,max\n");
        for r in &self.summary {
            let _ = writeln!(s, "{},{},{},{},{}", r.fraction, r.mean, r.std, r.min, r.max);
        }
        s
    }

    pub fn mean_for(&self, fraction: f64) -> Option<f64> {
        self.summary.iter().find(|s| s.fraction == fraction).map(|s| s.mean)
    }
}

fn one_timing_run(cfg: &TimingStudyConfig, fraction: f64, realization: usize) -> Result<f64> {
    let clock = Arc::new(VirtualClock::new());
    let f = cfg.function.clone();
    let backend = SimulatedLatencyBackend::new(
        move |x: &[f64]| f.eval_unchecked(x),
        clock.clone(),
        LatencyModel::TruncatedNormal {
            mean: cfg.latency_mean,
            std: cfg.latency_std,
        },
        cfg.seed.wrapping_add(realization as u64),
    );
    let state = run(cfg.run_config(fraction, realization), Arc::new(backend), clock)?;
    Ok(state.elapsed)
}

/// Run every (fraction, realization) pair on its own virtual clock and
/// summarize the total completion times per fraction. Realization `r` uses
/// the same seeds for every fraction.
pub fn run_timing_study(cfg: &TimingStudyConfig) -> Result<TimingStudy> {
    cfg.validate()?;
    let jobs: Vec<(f64, usize)> = cfg
        .fractions
        .iter()
        .flat_map(|&f| (0..cfg.realizations).map(move |r| (f, r)))
        .collect();
    let threads = cfg.threads.clamp(1, jobs.len());
    let results: Vec<Result<f64>> = std::thread::scope(|scope| {
        let chunks: Vec<_> = (0..threads)
            .map(|t| {
                let jobs = &jobs;
                scope.spawn(move || {
                    jobs.iter()
                        .enumerate()
                        .filter(|(i, _)| i % threads == t)
                        .map(|(i, &(f, r))| (i, one_timing_run(cfg, f, r)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<(usize, Result<f64>)> = chunks
            .into_iter()
            .flat_map(|h| h.join().expect("timing worker panicked"))
            .collect();
        all.sort_by_key(|(i, _)| *i);
        all.into_iter().map(|(_, r)| r).collect()
    });

    let mut rows = Vec::with_capacity(jobs.len());
    for (&(fraction, realization), total) in jobs.iter().zip(results) {
        rows.push(TimingRow {
            fraction,
            realization,
            total_time: total?,
        });
    }
    let summary = cfg
        .fractions
        .iter()
        .map(|&fraction| {
            let t: Vec<f64> = rows
                .iter()
                .filter(|r| r.fraction == fraction)
                .map(|r| r.total_time)
                .collect();
            let n = t.len() as f64;
            let mean = t.iter().sum::<f64>() / n;
            let var = if t.len() > 1 {
                t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            TimingSummary {
                fraction,
                mean,
                std: var.sqrt(),
                min: t.iter().copied().fold(f64::INFINITY, f64::min),
                max: t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(TimingStudy { rows, summary })
}

/// One evaluated location in an in-fill study run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: u64,
    pub x: Vec<f64>,
    /// `None` for failed evaluations.
    pub value: Option<f64>,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub k: usize,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.points
            .iter()
            .filter_map(|p| p.value.map(|v| (p.x.as_slice(), v)))
            .fold(None, |acc: Option<(&[f64], f64)>, (x, v)| match acc {
                Some((_, b)) if b <= v => acc,
                _ => Some((x, v)),
            })
    }
}

/// Run the driver once per batch size with a shared seed and budget.
pub fn run_infill_study(f: &BenchmarkFn, ks: &[usize], budget: usize, seed: u64) -> Result<Vec<Trajectory>> {
    run_infill_study_with(&benchmark_config(f, budget, seed), f, ks)
}

/// As [`run_infill_study`], starting from a caller-supplied configuration
/// whose `batch_k` is replaced per run.
pub fn run_infill_study_with(template: &RunConfig, f: &BenchmarkFn, ks: &[usize]) -> Result<Vec<Trajectory>> {
    if ks.is_empty() {
        return Err(invalid("at least one batch size is required"));
    }
    let runs: Vec<Result<Trajectory>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ks
            .iter()
            .map(|&k| {
                let mut cfg = template.clone();
                cfg.batch_k = k;
                let f = f.clone();
                scope.spawn(move || -> Result<Trajectory> {
                    let backend: Arc<dyn EvaluationBackend> =
                        Arc::new(InProcessBackend::synchronous(move |x: &[f64]| f.eval_unchecked(x)));
                    let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new());
                    let state = run(cfg, backend, clock)?;
                    let mut best = f64::INFINITY;
                    let points = state
                        .history
                        .iter()
                        .map(|r| {
                            let value = match r.status {
                                Status::Completed(v) => Some(v),
                                _ => None,
                            };
                            if let Some(v) = value {
                                best = best.min(v);
                            }
                            TrajectoryPoint {
                                iteration: r.iteration,
                                x: r.x.clone(),
                                value,
                                best_so_far: best,
                            }
                        })
                        .collect();
                    Ok(Trajectory { k, points })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("in-fill worker panicked"))
            .collect()
    });
    runs.into_iter().collect()
}

pub fn trajectories_csv(runs: &[Trajectory]) -> String {
    let dim = runs
        .iter()
        .flat_map(|t| t.points.first())
        .map(|p| p.x.len())
        .next()
        .unwrap_or(0);
    let mut s = String::from("k,iteration");
    for i in 1..=dim {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",value,best_so_far\n");
    for t in runs {
        for p in &t.points {
            let _ = write!(s, "{},{}", t.k, p.iteration);
            for v in &p.x {
                let _ = write!(s, ",{v}");
            }
            let value = p.value.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, ",{value},{}", p.best_so_far);
        }
    }
    s
}
