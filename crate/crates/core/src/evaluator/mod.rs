//! Asynchronous cost-function evaluation.
//!
//! [`Evaluator::evaluate`] takes a list of new points and a list of old
//! (previously pending) records and returns three lists: completed, pending
//! and failed. Every input point appears in exactly one output list. The
//! call returns once at least `⌈blocking_fraction · |new|⌉` of the new
//! points have resolved; old points are polled but never waited on.

mod backends;
mod clock;
mod remote;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

pub use backends::{CostFn, InProcessBackend, LatencyModel, SimulatedLatencyBackend, SubprocessBackend};
pub use clock::{Clock, RealClock, VirtualClock};
pub use remote::{CommandOutput, CommandRunner, FakeScheduler, RemoteCommandBackend};

use crate::error::{invalid, Result};

/// Opaque per-attempt job identifier issued by a backend.
pub type JobHandle = String;

#[derive(Debug, Clone, PartialEq)]
pub enum BackendOutcome {
    ValueNotReady,
    Value(f64),
    EvaluationFailed(String),
    EvaluateAgain,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unknown job handle `{0}`")]
    UnknownHandle(String),
}

pub trait EvaluationBackend: Send + Sync {
    /// Start one evaluation attempt at `x` (in the problem's own
    /// coordinates).
    fn submit(&self, x: &[f64]) -> std::result::Result<JobHandle, BackendError>;

    /// Non-blocking status check. Once `Value` is returned for a handle,
    /// later polls of it return the same value.
    fn poll(&self, handle: &str) -> std::result::Result<BackendOutcome, BackendError>;
}

impl<T: EvaluationBackend + ?Sized> EvaluationBackend for Arc<T> {
    fn submit(&self, x: &[f64]) -> std::result::Result<JobHandle, BackendError> {
        (**self).submit(x)
    }

    fn poll(&self, handle: &str) -> std::result::Result<BackendOutcome, BackendError> {
        (**self).poll(handle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Queued,
    Running,
    Completed(f64),
    Failed(String),
}

impl Status {
    pub fn is_resolved(&self) -> bool {
        matches!(self, Status::Completed(_) | Status::Failed(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Queued => "queued",
            Status::Running => "running",
            Status::Completed(_) => "completed",
            Status::Failed(_) => "failed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub id: u64,
    pub x: Vec<f64>,
    pub status: Status,
    /// Time of the first submission.
    pub submit_time: Option<f64>,
    pub complete_time: Option<f64>,
    pub attempts: u32,
    /// Backend handle of the current attempt while running.
    pub handle: Option<JobHandle>,
    /// Driver iteration that proposed this point.
    pub iteration: u64,
}

impl EvaluationRecord {
    pub fn new(id: u64, x: Vec<f64>, iteration: u64) -> Self {
        EvaluationRecord {
            id,
            x,
            status: Status::Queued,
            submit_time: None,
            complete_time: None,
            attempts: 0,
            handle: None,
            iteration,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self.status {
            Status::Completed(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorConfig {
    pub max_simultaneous: usize,
    pub blocking_fraction: f64,
    pub max_attempts: u32,
    pub poll_interval: Duration,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            max_simultaneous: 4,
            blocking_fraction: 1.0,
            max_attempts: 3,
            poll_interval: Duration::from_millis(10),
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_simultaneous == 0 {
            return Err(invalid("max_simultaneous must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.blocking_fraction) {
            return Err(invalid(format!(
                "blocking_fraction must lie in [0, 1], got {}",
                self.blocking_fraction
            )));
        }
        if self.max_attempts == 0 {
            return Err(invalid("max_attempts must be at least 1"));
        }
        Ok(())
    }
}

/// Number of new points that must resolve before `evaluate` returns.
pub fn required_completions(fraction: f64, n_new: usize) -> usize {
    // the small slack keeps e.g. 0.6 * 5 from rounding up to 4
    let need = (fraction * n_new as f64 - 1e-9).ceil();
    (need.max(0.0) as usize).min(n_new)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluatorReport {
    pub completed: Vec<EvaluationRecord>,
    pub pending: Vec<EvaluationRecord>,
    pub failed: Vec<EvaluationRecord>,
}

impl EvaluatorReport {
    pub fn completed_values(&self) -> Vec<(Vec<f64>, f64)> {
        self.completed
            .iter()
            .filter_map(|r| r.value().map(|v| (r.x.clone(), v)))
            .collect()
    }

    pub fn failed_reasons(&self) -> Vec<(Vec<f64>, String)> {
        self.failed
            .iter()
            .map(|r| match &r.status {
                Status::Failed(why) => (r.x.clone(), why.clone()),
                _ => (r.x.clone(), String::new()),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.completed.len() + self.pending.len() + self.failed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Evaluator {
    config: EvaluatorConfig,
    backend: Arc<dyn EvaluationBackend>,
    clock: Arc<dyn Clock>,
    next_id: u64,
}

impl fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Evaluator")
            .field("config", &self.config)
            .field("next_id", &self.next_id)
            .finish_non_exhaustive()
    }
}

enum Wait {
    NewResolved(usize),
    AllResolved,
}

impl Evaluator {
    pub fn new(
        config: EvaluatorConfig,
        backend: Arc<dyn EvaluationBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Evaluator {
            config,
            backend,
            clock,
            next_id: 0,
        })
    }

    pub fn config(&self) -> &EvaluatorConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn set_next_id(&mut self, id: u64) {
        self.next_id = id;
    }

    /// Wrap points as fresh records with ids from this evaluator's counter.
    pub fn make_records(&mut self, points: Vec<Vec<f64>>, iteration: u64) -> Vec<EvaluationRecord> {
        points
            .into_iter()
            .map(|x| {
                let r = EvaluationRecord::new(self.next_id, x, iteration);
                self.next_id += 1;
                r
            })
            .collect()
    }

    pub fn evaluate(&mut self, new: Vec<Vec<f64>>, old: Vec<EvaluationRecord>) -> EvaluatorReport {
        let fraction = self.config.blocking_fraction;
        self.evaluate_with_fraction(new, old, fraction, 0)
    }

    /// `evaluate` with an explicit blocking fraction, tagging new records
    /// with `iteration`.
    pub fn evaluate_with_fraction(
        &mut self,
        new: Vec<Vec<f64>>,
        old: Vec<EvaluationRecord>,
        fraction: f64,
        iteration: u64,
    ) -> EvaluatorReport {
        let new = self.make_records(new, iteration);
        self.evaluate_records(new, old, fraction)
    }

    pub fn evaluate_records(
        &mut self,
        new: Vec<EvaluationRecord>,
        old: Vec<EvaluationRecord>,
        fraction: f64,
    ) -> EvaluatorReport {
        let need = required_completions(fraction.clamp(0.0, 1.0), new.len());
        self.run(new, old, Wait::NewResolved(need))
    }

    /// Block until every record has resolved.
    pub fn drain(&mut self, old: Vec<EvaluationRecord>) -> EvaluatorReport {
        self.run(Vec::new(), old, Wait::AllResolved)
    }

    fn run(
        &mut self,
        new: Vec<EvaluationRecord>,
        old: Vec<EvaluationRecord>,
        wait: Wait,
    ) -> EvaluatorReport {
        let n_new = new.len();
        let mut recs: Vec<EvaluationRecord> = new;
        for mut r in old {
            // a record that claims to run without a handle cannot be polled
            if r.status == Status::Running && r.handle.is_none() {
                r.status = Status::Queued;
            }
            recs.push(r);
        }

        match wait {
            Wait::NewResolved(0) => {
                self.fill_slots(&mut recs);
                for i in n_new..recs.len() {
                    self.poll_one(&mut recs[i]);
                }
                self.fill_slots(&mut recs);
            }
            Wait::NewResolved(need) => loop {
                self.step(&mut recs);
                let done = recs[..n_new].iter().filter(|r| r.status.is_resolved()).count();
                if done >= need {
                    break;
                }
                self.clock.sleep(self.config.poll_interval);
            },
            Wait::AllResolved => loop {
                self.step(&mut recs);
                if recs.iter().all(|r| r.status.is_resolved()) {
                    break;
                }
                self.clock.sleep(self.config.poll_interval);
            },
        }

        let mut report = EvaluatorReport::default();
        for r in recs {
            match r.status {
                Status::Completed(_) => report.completed.push(r),
                Status::Failed(_) => report.failed.push(r),
                Status::Queued | Status::Running => report.pending.push(r),
            }
        }
        for list in [&mut report.completed, &mut report.pending, &mut report.failed] {
            list.sort_by_key(|r| r.id);
        }
        report
    }

    fn step(&mut self, recs: &mut [EvaluationRecord]) {
        self.fill_slots(recs);
        for r in recs.iter_mut() {
            if r.status == Status::Running {
                self.poll_one(r);
            }
        }
        self.fill_slots(recs);
    }

    /// Submit queued records in list order (new points first) while the
    /// concurrency cap allows.
    fn fill_slots(&self, recs: &mut [EvaluationRecord]) {
        let mut running = recs.iter().filter(|r| r.status == Status::Running).count();
        for r in recs.iter_mut() {
            if running >= self.config.max_simultaneous {
                break;
            }
            if r.status != Status::Queued {
                continue;
            }
            let now = self.clock.now();
            r.attempts += 1;
            r.submit_time.get_or_insert(now);
            match self.backend.submit(&r.x) {
                Ok(h) => {
                    r.handle = Some(h);
                    r.status = Status::Running;
                    running += 1;
                }
                Err(e) => {
                    r.handle = None;
                    r.status = Status::Failed(e.to_string());
                    r.complete_time = Some(now);
                }
            }
        }
    }

    fn poll_one(&self, r: &mut EvaluationRecord) {
        if r.status != Status::Running {
            return;
        }
        let Some(handle) = r.handle.clone() else {
            r.status = Status::Queued;
            return;
        };
        let outcome = match self.backend.poll(&handle) {
            Ok(o) => o,
            // treated like a request to evaluate again
            Err(_) => BackendOutcome::EvaluateAgain,
        };
        let now = self.clock.now();
        match outcome {
            BackendOutcome::ValueNotReady => {}
            BackendOutcome::Value(v) if v.is_finite() => {
                r.status = Status::Completed(v);
                r.complete_time = Some(now);
            }
            BackendOutcome::Value(v) => {
                r.status = Status::Failed(format!("non-finite value {v}"));
                r.complete_time = Some(now);
            }
            BackendOutcome::EvaluationFailed(why) => {
                r.status = Status::Failed(why);
                r.complete_time = Some(now);
            }
            BackendOutcome::EvaluateAgain => {
                r.handle = None;
                if r.attempts >= self.config.max_attempts {
                    r.status = Status::Failed(format!(
                        "gave up after {} attempts",
                        r.attempts
                    ));
                    r.complete_time = Some(now);
                } else {
                    r.status = Status::Queued;
                }
            }
        }
    }
}
