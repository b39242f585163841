#![allow(dead_code)]

pub mod oracle;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use asybo_core::driver::checkpoint::restore;
use asybo_core::driver::{Driver, RunConfig, RunState};
use asybo_core::space::Bounds;
use asybo_core::evaluator::{
    required_completions, BackendError, BackendOutcome, Clock, EvaluationBackend, Evaluator,
    EvaluatorConfig, EvaluatorReport, JobHandle, Status, VirtualClock,
};
use rand::Rng;

/// What one submission of a point eventually reports.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Value after the given number of not-ready polls.
    Value(f64, u32),
    Fail(u32),
    Again(u32),
    /// Never resolves.
    Never,
    /// `submit` itself errors.
    SubmitError,
}

#[derive(Default)]
struct State {
    /// `x[0]` identifies the point; one step per attempt, the last repeats.
    scripts: HashMap<u64, Vec<Step>>,
    submissions: HashMap<u64, u32>,
    jobs: HashMap<String, (u64, Step, u32)>,
    running: usize,
    max_running: usize,
    next: u64,
}

/// Backend whose behavior per point and per attempt is fixed in advance.
/// Points are identified by their first coordinate, which must be an
/// integer.
#[derive(Default)]
pub struct ScriptedBackend {
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(&self, point: u64, steps: Vec<Step>) {
        self.state.lock().unwrap().scripts.insert(point, steps);
    }

    pub fn submissions(&self, point: u64) -> u32 {
        *self.state.lock().unwrap().submissions.get(&point).unwrap_or(&0)
    }

    pub fn max_running(&self) -> usize {
        self.state.lock().unwrap().max_running
    }

    pub fn running(&self) -> usize {
        self.state.lock().unwrap().running
    }
}

impl EvaluationBackend for ScriptedBackend {
    fn submit(&self, x: &[f64]) -> Result<JobHandle, BackendError> {
        let mut st = self.state.lock().unwrap();
        let pid = x[0] as u64;
        let attempt = *st.submissions.get(&pid).unwrap_or(&0) as usize;
        *st.submissions.entry(pid).or_insert(0) += 1;
        let script = st.scripts.get(&pid).cloned().unwrap_or_else(|| vec![Step::Value(pid as f64, 0)]);
        let step = script[attempt.min(script.len() - 1)].clone();
        if step == Step::SubmitError {
            return Err(BackendError::Transport("scripted submit failure".into()));
        }
        st.running += 1;
        st.max_running = st.max_running.max(st.running);
        let h = format!("job{}", st.next);
        st.next += 1;
        st.jobs.insert(h.clone(), (pid, step, 0));
        Ok(h)
    }

    fn poll(&self, handle: &str) -> Result<BackendOutcome, BackendError> {
        let mut st = self.state.lock().unwrap();
        let (_, step, polls) = st
            .jobs
            .get_mut(handle)
            .ok_or_else(|| BackendError::UnknownHandle(handle.to_string()))?;
        let wait = match step {
            Step::Value(_, n) | Step::Fail(n) | Step::Again(n) => *n,
            Step::Never | Step::SubmitError => u32::MAX,
        };
        if *polls < wait {
            *polls += 1;
            return Ok(BackendOutcome::ValueNotReady);
        }
        let outcome = match step.clone() {
            Step::Value(v, _) => BackendOutcome::Value(v),
            Step::Fail(_) => BackendOutcome::EvaluationFailed("scripted failure".into()),
            Step::Again(_) => BackendOutcome::EvaluateAgain,
            Step::Never | Step::SubmitError => unreachable!(),
        };
        // terminal answers stay answerable but the slot is released once
        if *polls != u32::MAX {
            *polls = u32::MAX;
            st.running -= 1;
        }
        Ok(outcome)
    }
}

/// One randomized evaluator call: `old` points are first submitted through
/// a non-blocking call so that they arrive as genuine pending records.
#[derive(Debug, Clone)]
pub struct Trial {
    pub new: Vec<Vec<Step>>,
    pub old: Vec<Vec<Step>>,
    pub fraction: f64,
    pub cap: usize,
    pub max_attempts: u32,
}

pub const OLD_BASE: u64 = 1000;

pub struct TrialOutcome {
    pub report: EvaluatorReport,
    pub old_ids: Vec<u64>,
    pub new_ids: Vec<u64>,
    pub backend: Arc<ScriptedBackend>,
    pub elapsed: f64,
    pub poll_interval: f64,
}

fn random_step<R: Rng>(rng: &mut R, allow_never: bool) -> Step {
    let d = rng.random_range(0..4);
    match rng.random_range(0..20) {
        0..=9 => Step::Value(rng.random_range(-5.0..5.0), d),
        10..=12 => Step::Fail(d),
        13..=17 => Step::Again(d),
        18 => Step::SubmitError,
        _ if allow_never => Step::Never,
        _ => Step::Value(0.5, d),
    }
}

pub fn random_trial<R: Rng>(rng: &mut R) -> Trial {
    let n_new = rng.random_range(0..8);
    let n_old = rng.random_range(0..5);
    let script = |rng: &mut R, never: bool| {
        let len = rng.random_range(1..5);
        (0..len).map(|_| random_step(rng, never)).collect::<Vec<_>>()
    };
    let fraction = match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..=1.0),
    };
    let old: Vec<Vec<Step>> = (0..n_old).map(|_| script(rng, true)).collect();
    let cap = rng.random_range(1..6);
    Trial {
        new: (0..n_new).map(|_| script(rng, false)).collect(),
        cap: min_live_cap(&old, cap),
        old,
        fraction,
        max_attempts: rng.random_range(1..5),
    }
}

/// Raises `cap` so that old points that never answer cannot occupy every
/// slot; otherwise a blocking call could not make progress at all.
pub fn min_live_cap(old: &[Vec<Step>], cap: usize) -> usize {
    let stuck = old.iter().filter(|s| s.contains(&Step::Never)).count();
    cap.max(stuck + 1)
}

pub fn run_trial(t: &Trial) -> TrialOutcome {
    let backend = Arc::new(ScriptedBackend::new());
    let new_ids: Vec<u64> = (0..t.new.len() as u64).collect();
    let old_ids: Vec<u64> = (0..t.old.len() as u64).map(|i| OLD_BASE + i).collect();
    for (id, s) in new_ids.iter().zip(&t.new) {
        backend.script(*id, s.clone());
    }
    for (id, s) in old_ids.iter().zip(&t.old) {
        backend.script(*id, s.clone());
    }
    let clock = Arc::new(VirtualClock::new());
    let poll = 0.25;
    let cfg = EvaluatorConfig {
        max_simultaneous: t.cap,
        blocking_fraction: t.fraction,
        max_attempts: t.max_attempts,
        poll_interval: Duration::from_secs_f64(poll),
    };
    let dynb: Arc<dyn EvaluationBackend> = backend.clone();
    let mut ev = Evaluator::new(cfg, dynb, clock.clone()).unwrap();
    let pre = ev.evaluate_with_fraction(
        old_ids.iter().map(|&i| vec![i as f64]).collect(),
        Vec::new(),
        0.0,
        0,
    );
    let old = pre.pending;
    let old_ids: Vec<u64> = old.iter().map(|r| r.x[0] as u64).collect();
    let t0 = clock.now();
    let report = ev.evaluate(new_ids.iter().map(|&i| vec![i as f64]).collect(), old);
    TrialOutcome {
        report,
        old_ids,
        new_ids,
        backend,
        elapsed: clock.now() - t0,
        poll_interval: poll,
    }
}

/// Multiset of point identifiers across the three output lists equals the
/// input multiset.
pub fn union_law(o: &TrialOutcome) -> bool {
    let mut out: Vec<u64> = o
        .report
        .completed
        .iter()
        .chain(&o.report.pending)
        .chain(&o.report.failed)
        .map(|r| r.x[0] as u64)
        .collect();
    let mut inp: Vec<u64> = o.new_ids.iter().chain(&o.old_ids).copied().collect();
    out.sort_unstable();
    inp.sort_unstable();
    out == inp
}

pub fn cap_law(t: &Trial, o: &TrialOutcome) -> bool {
    o.backend.max_running() <= t.cap
}

pub fn threshold_law(t: &Trial, o: &TrialOutcome) -> bool {
    let resolved = o
        .report
        .completed
        .iter()
        .chain(&o.report.failed)
        .filter(|r| (r.x[0] as u64) < OLD_BASE)
        .count();
    resolved >= required_completions(t.fraction, t.new.len())
}

/// Submissions needed before a terminal answer under `script`.
pub fn attempts_needed(script: &[Step]) -> u32 {
    for (i, s) in script.iter().enumerate() {
        if !matches!(s, Step::Again(_)) {
            return i as u32 + 1;
        }
    }
    if matches!(script.last(), Some(Step::Again(_))) {
        u32::MAX
    } else {
        script.len() as u32
    }
}

/// Every resolved new point was submitted exactly `min(needed, max)` times,
/// and points that needed more than `max_attempts` failed.
pub fn retry_law(t: &Trial, o: &TrialOutcome) -> bool {
    for r in o.report.completed.iter().chain(&o.report.failed) {
        let pid = r.x[0] as u64;
        if pid >= OLD_BASE {
            continue;
        }
        let needed = attempts_needed(&t.new[pid as usize]);
        let subs = o.backend.submissions(pid);
        if subs != needed.min(t.max_attempts) || r.attempts != subs {
            return false;
        }
        if needed > t.max_attempts && !matches!(r.status, Status::Failed(_)) {
            return false;
        }
    }
    true
}

/// Backend with simulated latency whose whole state lives in the handle:
/// the handle records the point and its submission time, and the job is
/// ready once the clock passes `submit + latency(x)`. Restarting from a
/// checkpoint therefore needs nothing beyond the clock reading.
pub struct HandleLatencyBackend {
    pub clock: Arc<VirtualClock>,
    pub f: fn(&[f64]) -> f64,
}

impl HandleLatencyBackend {
    pub fn latency(x: &[f64]) -> f64 {
        let s: f64 = x.iter().enumerate().map(|(i, v)| v * (i as f64 + 1.7)).sum();
        1.0 + 4.0 * (s * 37.0).sin().abs()
    }
}

impl EvaluationBackend for HandleLatencyBackend {
    fn submit(&self, x: &[f64]) -> Result<JobHandle, BackendError> {
        let bits: Vec<String> = x.iter().map(|v| format!("{:x}", v.to_bits())).collect();
        Ok(format!("{:x}/{}", self.clock.now().to_bits(), bits.join(",")))
    }

    fn poll(&self, handle: &str) -> Result<BackendOutcome, BackendError> {
        let bad = || BackendError::UnknownHandle(handle.to_string());
        let (t, xs) = handle.split_once('/').ok_or_else(bad)?;
        let t0 = f64::from_bits(u64::from_str_radix(t, 16).map_err(|_| bad())?);
        let x: Vec<f64> = xs
            .split(',')
            .map(|b| u64::from_str_radix(b, 16).map(f64::from_bits))
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        if self.clock.now() >= t0 + Self::latency(&x) {
            Ok(BackendOutcome::Value((self.f)(&x)))
        } else {
            Ok(BackendOutcome::ValueNotReady)
        }
    }
}

pub fn sphere_shift(x: &[f64]) -> f64 {
    x.iter().map(|v| (v - 0.3) * (v - 0.3)).sum::<f64>() + (3.0 * x[0]).sin()
}

/// Small asynchronous run: several points stay pending across iterations.
pub fn async_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::new(Bounds::uniform(2, -1.0, 1.0).unwrap());
    c.seed = seed;
    c.max_evals = 24;
    c.n_init = 4;
    c.batch_k = 3;
    c.evaluator.max_simultaneous = 4;
    c.evaluator.blocking_fraction = 0.34;
    c.evaluator.poll_interval = Duration::from_millis(500);
    c.acqopt.max_evals = 300;
    c.hyper.gate_n = Some(6);
    c
}

fn driver_for(config: RunConfig, state: Option<RunState>) -> Driver {
    let clock = Arc::new(VirtualClock::new());
    if let Some(s) = &state {
        clock.set(s.clock_time);
    }
    let backend: Arc<dyn EvaluationBackend> = Arc::new(HandleLatencyBackend {
        clock: clock.clone(),
        f: sphere_shift,
    });
    match state {
        Some(s) => Driver::resume(config, s, backend, clock).unwrap(),
        None => Driver::new(config, backend, clock).unwrap(),
    }
}

pub fn uninterrupted(config: &RunConfig) -> (RunState, usize) {
    let mut d = driver_for(config.clone(), None);
    let mut steps = 0;
    while d.step().unwrap() {
        steps += 1;
    }
    (d.into_state(), steps + 1)
}

/// Run `kill_after` steps with a checkpoint after each, drop everything,
/// restore from disk and finish.
pub fn killed_and_resumed(config: &RunConfig, kill_after: usize, dir: &Path) -> RunState {
    let path = dir.join(format!("kill{kill_after}.ckpt"));
    let mut cfg = config.clone();
    cfg.checkpoint_path = Some(path.clone());
    cfg.checkpoint_every = 1;
    {
        let mut d = driver_for(cfg.clone(), None);
        for _ in 0..kill_after {
            if !d.step().unwrap() {
                break;
            }
        }
    }
    let (restored_cfg, state) = restore(&path).unwrap();
    assert_eq!(restored_cfg, cfg);
    let mut d = driver_for(restored_cfg, Some(state));
    while d.step().unwrap() {}
    d.into_state()
}
