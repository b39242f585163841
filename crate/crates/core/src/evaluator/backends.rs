use std::collections::HashMap;
use std::io::Read;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BackendError, BackendOutcome, Clock, EvaluationBackend, JobHandle};

pub type CostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

fn call_guarded(f: &CostFn, x: &[f64]) -> BackendOutcome {
    match catch_unwind(AssertUnwindSafe(|| f(x))) {
        Ok(v) if v.is_finite() => BackendOutcome::Value(v),
        Ok(v) => BackendOutcome::EvaluationFailed(format!("non-finite value {v}")),
        Err(_) => BackendOutcome::EvaluationFailed("cost function panicked".into()),
    }
}

type Job = (u64, Vec<f64>);

/// Evaluates a Rust closure, either inline during `submit` or on a pool of
/// worker threads.
pub struct InProcessBackend {
    f: CostFn,
    results: Arc<Mutex<HashMap<String, Option<BackendOutcome>>>>,
    next: Mutex<u64>,
    sender: Option<Mutex<mpsc::Sender<Job>>>,
    workers: Vec<JoinHandle<()>>,
}

impl InProcessBackend {
    /// `submit` evaluates immediately; the first poll returns the value.
    pub fn synchronous<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        InProcessBackend {
            f: Arc::new(f),
            results: Arc::default(),
            next: Mutex::new(0),
            sender: None,
            workers: Vec::new(),
        }
    }

    pub fn threaded<F>(f: F, workers: usize) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let f: CostFn = Arc::new(f);
        let results: Arc<Mutex<HashMap<String, Option<BackendOutcome>>>> = Arc::default();
        let (tx, rx) = mpsc::channel::<Job>();
        let rx = Arc::new(Mutex::new(rx));
        let handles = (0..workers.max(1))
            .map(|_| {
                let rx = Arc::clone(&rx);
                let f = Arc::clone(&f);
                let results = Arc::clone(&results);
                thread::spawn(move || loop {
                    let job = rx.lock().unwrap().recv();
                    let Ok((id, x)) = job else { break };
                    let out = call_guarded(&f, &x);
                    results.lock().unwrap().insert(id.to_string(), Some(out));
                })
            })
            .collect();
        InProcessBackend {
            f,
            results,
            next: Mutex::new(0),
            sender: Some(Mutex::new(tx)),
            workers: handles,
        }
    }
}

impl Drop for InProcessBackend {
    fn drop(&mut self) {
        self.sender.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl EvaluationBackend for InProcessBackend {
    fn submit(&self, x: &[f64]) -> Result<JobHandle, BackendError> {
        match &self.sender {
            None => {
                // keyed by the point itself so handles survive a restart
                let handle = point_key(x);
                let out = call_guarded(&self.f, x);
                self.results.lock().unwrap().insert(handle.clone(), Some(out));
                Ok(handle)
            }
            Some(tx) => {
                let id = {
                    let mut n = self.next.lock().unwrap();
                    *n += 1;
                    *n
                };
                self.results.lock().unwrap().insert(id.to_string(), None);
                tx.lock()
                    .unwrap()
                    .send((id, x.to_vec()))
                    .map_err(|_| BackendError::Transport("worker pool shut down".into()))?;
                Ok(id.to_string())
            }
        }
    }

    fn poll(&self, handle: &str) -> Result<BackendOutcome, BackendError> {
        match self.results.lock().unwrap().get(handle) {
            None => Err(BackendError::UnknownHandle(handle.to_string())),
            Some(None) => Ok(BackendOutcome::ValueNotReady),
            Some(Some(out)) => Ok(out.clone()),
        }
    }
}

fn point_key(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
    format!("x{}", parts.join(":"))
}

/// Distribution of the delay between submission and availability of a
/// result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyModel {
    Fixed(f64),
    /// Normal distribution; negative draws are resampled.
    TruncatedNormal { mean: f64, std: f64 },
}

impl LatencyModel {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            LatencyModel::Fixed(d) => d.max(0.0),
            LatencyModel::TruncatedNormal { mean, std } => {
                if std <= 0.0 {
                    return mean.max(0.0);
                }
                let dist = Normal::new(mean, std).expect("finite normal parameters");
                for _ in 0..1000 {
                    let v = dist.sample(rng);
                    if v >= 0.0 {
                        return v;
                    }
                }
                0.0
            }
        }
    }
}

struct SimJob {
    ready_at: f64,
    outcome: BackendOutcome,
}

/// Reveals `f(x)` only after a seeded random delay has elapsed on the
/// supplied clock. With a [`super::VirtualClock`] a long latency study runs
/// in milliseconds.
pub struct SimulatedLatencyBackend {
    f: CostFn,
    clock: Arc<dyn Clock>,
    latency: LatencyModel,
    failure_rate: f64,
    state: Mutex<SimState>,
}

struct SimState {
    rng: ChaCha8Rng,
    jobs: HashMap<u64, SimJob>,
    next: u64,
}

impl SimulatedLatencyBackend {
    pub fn new<F>(f: F, clock: Arc<dyn Clock>, latency: LatencyModel, seed: u64) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        SimulatedLatencyBackend {
            f: Arc::new(f),
            clock,
            latency,
            failure_rate: 0.0,
            state: Mutex::new(SimState {
                rng: ChaCha8Rng::seed_from_u64(seed),
                jobs: HashMap::new(),
                next: 0,
            }),
        }
    }

    /// Each attempt independently fails with this probability.
    pub fn with_failure_rate(mut self, p: f64) -> Self {
        self.failure_rate = p.clamp(0.0, 1.0);
        self
    }
}

impl EvaluationBackend for SimulatedLatencyBackend {
    fn submit(&self, x: &[f64]) -> Result<JobHandle, BackendError> {
        let mut st = self.state.lock().unwrap();
        let delay = self.latency.sample(&mut st.rng);
        let fails = self.failure_rate > 0.0 && st.rng.random::<f64>() < self.failure_rate;
        let outcome = if fails {
            BackendOutcome::EvaluationFailed("simulated failure".into())
        } else {
            call_guarded(&self.f, x)
        };
        let id = st.next;
        st.next += 1;
        st.jobs.insert(
            id,
            SimJob {
                ready_at: self.clock.now() + delay,
                outcome,
            },
        );
        Ok(id.to_string())
    }

    fn poll(&self, handle: &str) -> Result<BackendOutcome, BackendError> {
        let id: u64 = handle
            .parse()
            .map_err(|_| BackendError::UnknownHandle(handle.to_string()))?;
        let st = self.state.lock().unwrap();
        let job = st
            .jobs
            .get(&id)
            .ok_or_else(|| BackendError::UnknownHandle(handle.to_string()))?;
        if self.clock.now() >= job.ready_at {
            Ok(job.outcome.clone())
        } else {
            Ok(BackendOutcome::ValueNotReady)
        }
    }
}

enum ProcState {
    Running(Child, JoinHandle<String>),
    Done(BackendOutcome),
}

/// One OS process per evaluation: the point's coordinates are passed as
/// arguments `1..=d` (after any fixed arguments), and the final stdout line
/// is the result. `RETRY` requests another attempt; a nonzero exit code is
/// a failed evaluation.
pub struct SubprocessBackend {
    program: PathBuf,
    fixed_args: Vec<String>,
    procs: Mutex<HashMap<u64, ProcState>>,
    next: Mutex<u64>,
}

impl SubprocessBackend {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        SubprocessBackend {
            program: program.into(),
            fixed_args: Vec::new(),
            procs: Mutex::default(),
            next: Mutex::new(0),
        }
    }

    pub fn with_args(mut self, args: Vec<String>) -> Self {
        self.fixed_args = args;
        self
    }
}

/// Classify a finished child's exit status and stdout.
pub(crate) fn parse_process_output(success: bool, stdout: &str) -> BackendOutcome {
    if !success {
        return BackendOutcome::EvaluationFailed("nonzero exit status".into());
    }
    let last = stdout.lines().rev().map(str::trim).find(|l| !l.is_empty());
    match last {
        Some("RETRY") => BackendOutcome::EvaluateAgain,
        Some(line) => match line.parse::<f64>() {
            Ok(v) if v.is_finite() => BackendOutcome::Value(v),
            _ => BackendOutcome::EvaluationFailed(format!("unparseable output `{line}`")),
        },
        None => BackendOutcome::EvaluationFailed("empty output".into()),
    }
}

impl EvaluationBackend for SubprocessBackend {
    fn submit(&self, x: &[f64]) -> Result<JobHandle, BackendError> {
        let mut child = Command::new(&self.program)
            .args(&self.fixed_args)
            .args(x.iter().map(|v| v.to_string()))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| BackendError::Transport(format!("{}: {e}", self.program.display())))?;
        let mut out = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = out.read_to_string(&mut s);
            s
        });
        let id = {
            let mut n = self.next.lock().unwrap();
            *n += 1;
            *n
        };
        self.procs
            .lock()
            .unwrap()
            .insert(id, ProcState::Running(child, reader));
        Ok(id.to_string())
    }

    fn poll(&self, handle: &str) -> Result<BackendOutcome, BackendError> {
        let id: u64 = handle
            .parse()
            .map_err(|_| BackendError::UnknownHandle(handle.to_string()))?;
        let mut procs = self.procs.lock().unwrap();
        let state = procs
            .remove(&id)
            .ok_or_else(|| BackendError::UnknownHandle(handle.to_string()))?;
        let (next, outcome) = match state {
            ProcState::Done(o) => (ProcState::Done(o.clone()), o),
            ProcState::Running(mut child, reader) => match child.try_wait() {
                Ok(None) => (ProcState::Running(child, reader), BackendOutcome::ValueNotReady),
                Ok(Some(status)) => {
                    let stdout = reader.join().unwrap_or_default();
                    let o = parse_process_output(status.success(), &stdout);
                    (ProcState::Done(o.clone()), o)
                }
                Err(e) => {
                    let o = BackendOutcome::EvaluationFailed(format!("wait failed: {e}"));
                    (ProcState::Done(o.clone()), o)
                }
            },
        };
        procs.insert(id, next);
        Ok(outcome)
    }
}
