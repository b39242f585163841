//! Batch-scheduler style backend driven through an injected command runner.
//!
//! Submission runs `submit_cmd x₁ … x_d` and takes the last whitespace token
//! of its stdout as the job id (`Submitted batch job 4711` → `4711`).
//! Polling runs `status_cmd <jobId>` and reads the first stdout line:
//!
//! | line               | outcome            |
//! |--------------------|--------------------|
//! | `PENDING`/`RUNNING`| value not ready    |
//! | `COMPLETED <v>`    | value `v`          |
//! | `FAILED [reason]`  | evaluation failed  |
//! | `RETRY`            | evaluate again     |

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backends::{CostFn, LatencyModel};
use super::{BackendError, BackendOutcome, Clock, EvaluationBackend, JobHandle};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub status: i32,
    pub stdout: String,
}

pub trait CommandRunner: Send + Sync {
    fn run(&self, program: &str, args: &[String]) -> Result<CommandOutput, BackendError>;
}

pub struct RemoteCommandBackend<R> {
    runner: R,
    submit_cmd: String,
    status_cmd: String,
    finished: Mutex<HashMap<String, BackendOutcome>>,
}

impl<R: CommandRunner> RemoteCommandBackend<R> {
    pub fn new(runner: R, submit_cmd: impl Into<String>, status_cmd: impl Into<String>) -> Self {
        RemoteCommandBackend {
            runner,
            submit_cmd: submit_cmd.into(),
            status_cmd: status_cmd.into(),
            finished: Mutex::default(),
        }
    }

    pub fn runner(&self) -> &R {
        &self.runner
    }
}

pub(crate) fn parse_status_line(stdout: &str) -> Result<BackendOutcome, BackendError> {
    let line = stdout.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let mut parts = line.splitn(2, char::is_whitespace);
    let state = parts.next().unwrap_or("");
    let rest = parts.next().unwrap_or("").trim();
    match state {
        "PENDING" | "RUNNING" => Ok(BackendOutcome::ValueNotReady),
        "COMPLETED" => match rest.parse::<f64>() {
            Ok(v) => Ok(BackendOutcome::Value(v)),
            Err(_) => Ok(BackendOutcome::EvaluationFailed(format!(
                "unparseable result `{rest}`"
            ))),
        },
        "FAILED" => Ok(BackendOutcome::EvaluationFailed(if rest.is_empty() {
            "job failed".into()
        } else {
            rest.to_string()
        })),
        "RETRY" => Ok(BackendOutcome::EvaluateAgain),
        other => Err(BackendError::Transport(format!(
            "unrecognized job state `{other}`"
        ))),
    }
}

impl<R: CommandRunner> EvaluationBackend for RemoteCommandBackend<R> {
    fn submit(&self, x: &[f64]) -> Result<JobHandle, BackendError> {
        let args: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        let out = self.runner.run(&self.submit_cmd, &args)?;
        if out.status != 0 {
            return Err(BackendError::Transport(format!(
                "`{}` exited with status {}",
                self.submit_cmd, out.status
            )));
        }
        out.stdout
            .split_whitespace()
            .last()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("submission printed no job id".into()))
    }

    fn poll(&self, handle: &str) -> Result<BackendOutcome, BackendError> {
        if let Some(done) = self.finished.lock().unwrap().get(handle) {
            return Ok(done.clone());
        }
        let out = self.runner.run(&self.status_cmd, &[handle.to_string()])?;
        if out.status != 0 {
            return Err(BackendError::Transport(format!(
                "`{}` exited with status {}",
                self.status_cmd, out.status
            )));
        }
        let outcome = parse_status_line(&out.stdout)?;
        if matches!(outcome, BackendOutcome::Value(_)) {
            self.finished
                .lock()
                .unwrap()
                .insert(handle.to_string(), outcome.clone());
        }
        Ok(outcome)
    }
}

struct FakeJob {
    queued_until: f64,
    done_at: f64,
    result: String,
}

struct FakeState {
    rng: ChaCha8Rng,
    jobs: HashMap<u64, FakeJob>,
    next: u64,
}

/// In-process stand-in for a batch scheduler. Understands `sbatch`-style
/// submission and `sacct`-style status queries (program names are
/// configurable) and simulates queue wait plus run time on a clock.
pub struct FakeScheduler {
    f: CostFn,
    clock: Arc<dyn Clock>,
    queue_wait: LatencyModel,
    run_time: LatencyModel,
    failure_rate: f64,
    retry_rate: f64,
    pub submit_program: String,
    pub status_program: String,
    state: Mutex<FakeState>,
}

impl FakeScheduler {
    pub fn new<F>(
        f: F,
        clock: Arc<dyn Clock>,
        queue_wait: LatencyModel,
        run_time: LatencyModel,
        seed: u64,
    ) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        FakeScheduler {
            f: Arc::new(f),
            clock,
            queue_wait,
            run_time,
            failure_rate: 0.0,
            retry_rate: 0.0,
            submit_program: "sbatch".into(),
            status_program: "sacct".into(),
            state: Mutex::new(FakeState {
                rng: ChaCha8Rng::seed_from_u64(seed),
                jobs: HashMap::new(),
                next: 1000,
            }),
        }
    }

    pub fn with_failures(mut self, failure_rate: f64, retry_rate: f64) -> Self {
        self.failure_rate = failure_rate;
        self.retry_rate = retry_rate;
        self
    }

    pub fn jobs_submitted(&self) -> u64 {
        self.state.lock().unwrap().next - 1000
    }
}

impl CommandRunner for FakeScheduler {
    fn run(&self, program: &str, args: &[String]) -> Result<CommandOutput, BackendError> {
        let now = self.clock.now();
        let mut st = self.state.lock().unwrap();
        if program == self.submit_program {
            let x: Vec<f64> = args
                .iter()
                .map(|a| a.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| BackendError::Transport(format!("bad coordinate: {e}")))?;
            let wait = self.queue_wait.sample(&mut st.rng);
            let run = self.run_time.sample(&mut st.rng);
            let u: f64 = st.rng.random();
            let result = if u < self.failure_rate {
                "FAILED node failure".to_string()
            } else if u < self.failure_rate + self.retry_rate {
                "RETRY".to_string()
            } else {
                let v = (self.f)(&x);
                if v.is_finite() {
                    format!("COMPLETED {v:e}")
                } else {
                    "FAILED non-finite result".to_string()
                }
            };
            let id = st.next;
            st.next += 1;
            st.jobs.insert(
                id,
                FakeJob {
                    queued_until: now + wait,
                    done_at: now + wait + run,
                    result,
                },
            );
            Ok(CommandOutput {
                status: 0,
                stdout: format!("Submitted batch job {id}\n"),
            })
        } else if program == self.status_program {
            let id: u64 = args
                .first()
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| BackendError::Transport("missing job id".into()))?;
            let Some(job) = st.jobs.get(&id) else {
                return Ok(CommandOutput {
                    status: 1,
                    stdout: String::new(),
                });
            };
            let line = if now < job.queued_until {
                "PENDING".to_string()
            } else if now < job.done_at {
                "RUNNING".to_string()
            } else {
                job.result.clone()
            };
            Ok(CommandOutput {
                status: 0,
                stdout: line + "\n",
            })
        } else {
            Err(BackendError::Transport(format!("unknown program `{program}`")))
        }
    }
}
