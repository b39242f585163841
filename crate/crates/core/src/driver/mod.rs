//! The optimization loop: initial design, evaluate, assimilate, tune,
//! select in-fill points, repeat until the evaluation budget is spent.
//!
//! The surrogate lives in the unit hypercube spanned by the search bounds
//! and is fitted to standardized cost values. Completed evaluations from one
//! evaluator call are assimilated as a single block, ordered by record id.

pub mod checkpoint;
mod design;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acqopt::MinimizeSpec;
use crate::acquisition::{select_infill, AcquisitionFamily, AcquisitionSpec, KappaSchedule};
use crate::error::{invalid, Error, Result};
use crate::evaluator::{
    Clock, EvaluationBackend, EvaluationRecord, Evaluator, EvaluatorConfig, EvaluatorReport,
    Status,
};
use crate::gp::{GpState, Prediction, DEFAULT_JITTER, DUPLICATE_TOL};
use crate::hyper::{tune_length_scale, TuneConfig};
use crate::kernel::{KernelSpec, LengthScale};
use crate::space::Bounds;

pub use design::latin_hypercube;

/// Jitter is raised by this factor after a failed factorization ...
const JITTER_GROWTH: f64 = 100.0;
/// ... but never beyond this.
const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Optimize,
    Krige,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Optimize => "optimize",
            Mode::Krige => "krige",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "optimize" => Ok(Mode::Optimize),
            "krige" => Ok(Mode::Krige),
            other => Err(invalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcqOptConfig {
    /// `None` means `8·d`.
    pub n_starts: Option<usize>,
    pub max_evals: usize,
    pub tol: f64,
}

impl Default for AcqOptConfig {
    fn default() -> Self {
        AcqOptConfig {
            n_starts: None,
            max_evals: 2000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub bounds: Bounds,
    pub mode: Mode,
    pub kernel: KernelSpec,
    pub jitter: f64,
    pub acq: AcquisitionSpec,
    pub acqopt: AcqOptConfig,
    pub evaluator: EvaluatorConfig,
    pub hyper: TuneConfig,
    pub n_init: usize,
    pub batch_k: usize,
    pub max_evals: usize,
    pub seed: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Points per axis of the kriging report grid.
    pub grid_points: usize,
    /// Additional `key = value` entries carried into checkpoints verbatim.
    pub extra: Vec<(String, String)>,
}

impl RunConfig {
    pub fn new(bounds: Bounds) -> Self {
        let d = bounds.dim();
        RunConfig {
            mode: Mode::Optimize,
            kernel: KernelSpec::squared_exponential(0.1)
                .and_then(|k| k.with_dim(d))
                .expect("valid default kernel"),
            jitter: DEFAULT_JITTER,
            acq: AcquisitionSpec::new(
                AcquisitionFamily::Lcb,
                KappaSchedule::Annealing {
                    kappa0: 3.0,
                    decay: 0.95,
                },
            ),
            acqopt: AcqOptConfig::default(),
            evaluator: EvaluatorConfig::default(),
            hyper: TuneConfig::default(),
            n_init: (2 * d).max(4),
            batch_k: 1,
            max_evals: 50,
            seed: 0,
            checkpoint_path: None,
            checkpoint_every: 1,
            grid_points: 101,
            extra: Vec::new(),
            bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(invalid("n_init must be at least 1"));
        }
        if self.max_evals < self.n_init {
            return Err(invalid(format!(
                "max_evals ({}) must be at least n_init ({})",
                self.max_evals, self.n_init
            )));
        }
        if self.batch_k == 0 {
            return Err(invalid("batch_k must be at least 1"));
        }
        if let LengthScale::Anisotropic(v) = self.kernel.length_scale() {
            if v.len() != self.dim() {
                return Err(invalid(format!(
                    "kernel has {} length scales for a {}-dimensional problem",
                    v.len(),
                    self.dim()
                )));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(invalid("jitter must be non-negative"));
        }
        if self.acqopt.max_evals < self.acqopt.n_starts.unwrap_or(8 * self.dim()) {
            return Err(invalid("acqopt.max_evals must be at least acqopt.n_starts"));
        }
        if self.grid_points < 2 {
            return Err(invalid("grid_points must be at least 2"));
        }
        self.acq.validate()?;
        self.evaluator.validate()?;
        self.hyper.validate()?;
        Ok(())
    }

    fn acquisition(&self) -> AcquisitionSpec {
        let mut acq = self.acq.clone();
        if self.mode == Mode::Krige {
            acq.family = AcquisitionFamily::MaxVariance;
        }
        acq
    }
}

/// Everything needed to continue a run. The surrogate itself is derived
/// data and is rebuilt from `history` on restore.
#[derive(Debug, Clone)]
pub struct RunState {
    /// Resolved records in assimilation order.
    pub history: Vec<EvaluationRecord>,
    pub pending: Vec<EvaluationRecord>,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub kernel: KernelSpec,
    pub jitter: f64,
    pub next_id: u64,
    /// Points handed to the evaluator so far (the budget counter).
    pub proposed: usize,
    /// Clock time consumed by the run.
    pub elapsed: f64,
    /// Clock reading at the last state update.
    pub clock_time: f64,
    pub finished: bool,
}

impl PartialEq for RunState {
    fn eq(&self, other: &Self) -> bool {
        self.history == other.history
            && self.pending == other.pending
            && self.iteration == other.iteration
            && self.rng == other.rng
            && self.kernel == other.kernel
            && self.jitter.to_bits() == other.jitter.to_bits()
            && self.next_id == other.next_id
            && self.proposed == other.proposed
            && self.elapsed.to_bits() == other.elapsed.to_bits()
            && self.clock_time.to_bits() == other.clock_time.to_bits()
            && self.finished == other.finished
    }
}

impl RunState {
    pub fn new(config: &RunConfig) -> Self {
        RunState {
            history: Vec::new(),
            pending: Vec::new(),
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            kernel: config.kernel.clone(),
            jitter: config.jitter,
            next_id: 0,
            proposed: 0,
            elapsed: 0.0,
            clock_time: 0.0,
            finished: false,
        }
    }

    pub fn completed(&self) -> impl Iterator<Item = (&EvaluationRecord, f64)> {
        self.history.iter().filter_map(|r| r.value().map(|v| (r, v)))
    }

    /// Best completed point and value; ties go to the earliest record.
    pub fn best(&self) -> Option<(Vec<f64>, f64)> {
        let mut best: Option<(&EvaluationRecord, f64)> = None;
        for (r, v) in self.completed() {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((r, v));
            }
        }
        best.map(|(r, v)| (r.x.clone(), v))
    }

    pub fn n_completed(&self) -> usize {
        self.completed().count()
    }

    pub fn n_failed(&self) -> usize {
        self.history
            .iter()
            .filter(|r| matches!(r.status, Status::Failed(_)))
            .count()
    }

    /// Running minimum of completed values in assimilation order.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut cur = f64::INFINITY;
        self.completed()
            .map(|(_, v)| {
                cur = cur.min(v);
                cur
            })
            .collect()
    }
}

/// GP over unit-cube inputs with standardized targets.
#[derive(Debug, Clone)]
struct Surrogate {
    gp: GpState,
    raw_y: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

fn standardize(raw: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if raw.len() > 1 && sd > 1e-12 * mean.abs().max(1.0) {
        sd
    } else {
        1.0
    };
    (raw.iter().map(|v| (v - mean) / scale).collect(), mean, scale)
}

impl Surrogate {
    fn fit(x: Vec<Vec<f64>>, raw_y: Vec<f64>, kernel: KernelSpec, jitter: f64) -> Result<Self> {
        let (std_y, y_mean, y_scale) = standardize(&raw_y);
        let gp = GpState::fit(x, std_y, kernel, jitter)?;
        Ok(Surrogate {
            gp,
            raw_y,
            y_mean,
            y_scale,
        })
    }

    fn extend(&self, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let mut raw_y = self.raw_y.clone();
        raw_y.extend_from_slice(&y);
        let (std_y, y_mean, y_scale) = standardize(&raw_y);
        let gp = self.gp.extend(x, y)?.with_targets(std_y)?;
        Ok(Surrogate {
            gp,
            raw_y,
            y_mean,
            y_scale,
        })
    }

    fn predict_raw(&self, u: &[f64]) -> Prediction {
        let p = self.gp.predict_unchecked(u);
        Prediction {
            mean: p.mean * self.y_scale + self.y_mean,
            variance: p.variance * self.y_scale * self.y_scale,
            raw_variance: p.raw_variance * self.y_scale * self.y_scale,
        }
    }
}

fn is_new_point(u: &[f64], existing: &[Vec<f64>]) -> bool {
    existing.iter().all(|q| {
        u.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() > DUPLICATE_TOL
    })
}

/// Kriging output: the final surrogate sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct SurfaceReport {
    /// `(x, mean, variance)` in problem units.
    pub rows: Vec<(Vec<f64>, f64, f64)>,
    pub state: RunState,
}

pub struct Driver {
    config: RunConfig,
    evaluator: Evaluator,
    state: RunState,
    surrogate: Option<Surrogate>,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("iteration", &self.state.iteration)
            .field("proposed", &self.state.proposed)
            .finish_non_exhaustive()
    }
}

impl Driver {
    pub fn new(
        config: RunConfig,
        backend: Arc<dyn EvaluationBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        let state = RunState::new(&config);
        Self::resume(config, state, backend, clock)
    }

    /// Continue from a restored state. The surrogate is rebuilt from the
    /// completed history in assimilation order.
    pub fn resume(
        config: RunConfig,
        state: RunState,
        backend: Arc<dyn EvaluationBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        config.validate()?;
        let mut evaluator = Evaluator::new(config.evaluator.clone(), backend, clock)?;
        evaluator.set_next_id(state.next_id);
        let mut driver = Driver {
            config,
            evaluator,
            state,
            surrogate: None,
        };
        driver.rebuild_surrogate()?;
        Ok(driver)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn into_state(self) -> RunState {
        self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    pub fn gp(&self) -> Option<&GpState> {
        self.surrogate.as_ref().map(|s| &s.gp)
    }

    /// Posterior mean and variance at `x` (problem units, raw cost scale).
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let s = self
            .surrogate
            .as_ref()
            .ok_or_else(|| invalid("no completed evaluations yet"))?;
        if x.len() != self.config.dim() {
            return Err(invalid("query dimension does not match bounds"));
        }
        Ok(s.predict_raw(&self.config.bounds.to_unit(x)))
    }

    /// Run steps until the budget is spent and pending points are drained.
    pub fn run_to_end(mut self) -> Result<RunState> {
        while self.step()? {}
        Ok(self.state)
    }

    /// Perform one iteration. Returns `false` once the run has finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.state.finished {
            return Ok(false);
        }
        let clock = Arc::clone(self.evaluator.clock());
        let t0 = clock.now();
        if self.state.proposed == 0 {
            self.initial_design()?;
        } else if self.state.proposed < self.config.max_evals {
            self.infill_iteration()?;
        } else {
            self.finish()?;
        }
        let t1 = clock.now();
        self.state.elapsed += t1 - t0;
        self.state.clock_time = t1;
        self.state.iteration += 1;
        self.state.next_id = self.evaluator.next_id();

        if let Some(path) = &self.config.checkpoint_path {
            let every = self.config.checkpoint_every.max(1);
            if self.state.finished || self.state.iteration % every == 0 {
                checkpoint::checkpoint(&self.config, &self.state, path)?;
            }
        }
        Ok(!self.state.finished)
    }

    /// Sample the current surrogate on the uniform report grid.
    pub fn surface(&self) -> Result<Vec<(Vec<f64>, f64, f64)>> {
        let s = self
            .surrogate
            .as_ref()
            .ok_or_else(|| invalid("no completed evaluations to build a surface from"))?;
        let d = self.config.dim();
        let g = self.config.grid_points;
        let total = g.checked_pow(d as u32).filter(|&t| t <= 1_000_000).ok_or_else(|| {
            invalid(format!("report grid of {g}^{d} points is too large"))
        })?;
        let mut rows = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let u: Vec<f64> = (0..d)
                .map(|_| {
                    let i = rem % g;
                    rem /= g;
                    i as f64 / (g - 1) as f64
                })
                .collect();
            let p = s.predict_raw(&u);
            rows.push((self.config.bounds.from_unit(&u), p.mean, p.variance));
        }
        Ok(rows)
    }

    fn initial_design(&mut self) -> Result<()> {
        let n = self.config.n_init.min(self.config.max_evals);
        let units = latin_hypercube(n, self.config.dim(), &mut self.state.rng);
        let points: Vec<Vec<f64>> = units.iter().map(|u| self.config.bounds.from_unit(u)).collect();
        let recs = self.evaluator.make_records(points, self.state.iteration);
        self.state.proposed += n;
        let report = self.evaluator.evaluate_records(recs, Vec::new(), 1.0);
        self.assimilate(report)
    }

    fn infill_iteration(&mut self) -> Result<()> {
        let d = self.config.dim();
        let k = self.config.batch_k.min(self.config.max_evals - self.state.proposed);
        let seed: u64 = self.state.rng.random();
        self.maybe_tune()?;

        let units: Vec<Vec<f64>> = match &self.surrogate {
            Some(s) => {
                let mut acq = self.config.acquisition();
                acq.f_min = s.gp.targets().iter().copied().fold(f64::INFINITY, f64::min);
                let opt = MinimizeSpec {
                    bounds: Bounds::unit(d),
                    n_starts: self.config.acqopt.n_starts.unwrap_or(8 * d),
                    max_evals: self.config.acqopt.max_evals,
                    tol: self.config.acqopt.tol,
                    seed,
                };
                let avoid: Vec<Vec<f64>> = self
                    .state
                    .pending
                    .iter()
                    .map(|r| self.config.bounds.to_unit(&r.x))
                    .collect();
                // acquisition iterations count from zero after the design
                let acq_iter = self.state.iteration.saturating_sub(1);
                select_infill(&s.gp, &acq, k, acq_iter, &opt, &avoid)?.points
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..k)
                    .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
                    .collect()
            }
        };
        let points: Vec<Vec<f64>> = units.iter().map(|u| self.config.bounds.from_unit(u)).collect();
        let recs = self.evaluator.make_records(points, self.state.iteration);
        self.state.proposed += k;
        let old = std::mem::take(&mut self.state.pending);
        let fraction = self.config.evaluator.blocking_fraction;
        let report = self.evaluator.evaluate_records(recs, old, fraction);
        self.assimilate(report)
    }

    fn finish(&mut self) -> Result<()> {
        if !self.state.pending.is_empty() {
            let old = std::mem::take(&mut self.state.pending);
            let report = self.evaluator.drain(old);
            self.assimilate(report)?;
        }
        self.maybe_tune()?;
        self.state.finished = true;
        Ok(())
    }

    fn maybe_tune(&mut self) -> Result<()> {
        if !self.config.hyper.enabled {
            return Ok(());
        }
        let Some(s) = &self.surrogate else {
            return Ok(());
        };
        let cfg = TuneConfig {
            seed: self.config.seed ^ self.state.iteration,
            ..self.config.hyper.clone()
        };
        let tuned = tune_length_scale(
            s.gp.inputs(),
            s.gp.targets(),
            &self.state.kernel,
            self.state.jitter,
            &cfg,
        )?;
        if tuned != self.state.kernel {
            self.state.kernel = tuned;
            self.rebuild_surrogate()?;
        }
        Ok(())
    }

    fn assimilate(&mut self, report: EvaluatorReport) -> Result<()> {
        let EvaluatorReport {
            mut completed,
            pending,
            mut failed,
        } = report;
        completed.sort_by_key(|r| r.id);
        failed.sort_by_key(|r| r.id);

        let mut known: Vec<Vec<f64>> = self
            .surrogate
            .as_ref()
            .map(|s| s.gp.inputs().to_vec())
            .unwrap_or_default();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in &completed {
            let u = self.config.bounds.to_unit(&r.x);
            if is_new_point(&u, &known) {
                known.push(u.clone());
                xs.push(u);
                ys.push(r.value().expect("completed record has a value"));
            }
        }
        self.state.history.extend(completed);
        self.state.history.extend(failed);
        self.state.pending = pending;
        self.state.next_id = self.evaluator.next_id();

        if xs.is_empty() {
            return Ok(());
        }
        let grown = match &self.surrogate {
            None => Surrogate::fit(xs, ys, self.state.kernel.clone(), self.state.jitter),
            Some(s) => s.extend(xs, ys),
        };
        match grown {
            Ok(s) => {
                self.surrogate = Some(s);
                Ok(())
            }
            Err(Error::Factorization { .. }) => self.rebuild_surrogate(),
            Err(e) => Err(e),
        }
    }

    /// Fit from scratch over the completed history, raising the jitter as
    /// needed.
    fn rebuild_surrogate(&mut self) -> Result<()> {
        let mut xs: Vec<Vec<f64>> = Vec::new();
        let mut ys = Vec::new();
        for (r, v) in self.state.completed() {
            let u = self.config.bounds.to_unit(&r.x);
            if is_new_point(&u, &xs) {
                xs.push(u);
                ys.push(v);
            }
        }
        if xs.is_empty() {
            self.surrogate = None;
            return Ok(());
        }
        loop {
            match Surrogate::fit(xs.clone(), ys.clone(), self.state.kernel.clone(), self.state.jitter)
            {
                Ok(s) => {
                    self.surrogate = Some(s);
                    return Ok(());
                }
                Err(Error::Factorization { pivot }) => {
                    let next = (self.state.jitter * JITTER_GROWTH).max(1e-12);
                    if next > MAX_JITTER {
                        return Err(Error::Factorization { pivot });
                    }
                    self.state.jitter = next;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

pub fn run(
    config: RunConfig,
    backend: Arc<dyn EvaluationBackend>,
    clock: Arc<dyn Clock>,
) -> Result<RunState> {
    Driver::new(config, backend, clock)?.run_to_end()
}

/// Budgeted pure-exploration sampling followed by a grid report of the
/// final surrogate.
pub fn krige(
    mut config: RunConfig,
    backend: Arc<dyn EvaluationBackend>,
    clock: Arc<dyn Clock>,
) -> Result<SurfaceReport> {
    config.mode = Mode::Krige;
    let mut driver = Driver::new(config, backend, clock)?;
    while driver.step()? {}
    let rows = driver.surface()?;
    Ok(SurfaceReport {
        rows,
        state: driver.into_state(),
    })
}

/// History table with columns `iteration, id, x1..xd, value, status,
/// submit_time, complete_time`. Pending records are listed last.
pub fn history_csv(state: &RunState, dim: usize) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("iteration,id");
    for i in 1..=dim {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",value,status,submit_time,complete_time\n");
    let opt = |v: Option<f64>| v.map(|t| format!("{t:e}")).unwrap_or_default();
    for r in state.history.iter().chain(&state.pending) {
        let _ = write!(s, "{},{}", r.iteration, r.id);
        for v in &r.x {
            let _ = write!(s, ",{v:e}");
        }
        let _ = writeln!(
            s,
            ",{},{},{},{}",
            opt(r.value()),
            r.status.label(),
            opt(r.submit_time),
            opt(r.complete_time)
        );
    }
    s
}
