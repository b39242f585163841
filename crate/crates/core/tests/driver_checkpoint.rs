mod common;

use std::fs;
use std::sync::Arc;

use asybo_core::bench::{benchmark_config, BenchName, BenchmarkFn};
use asybo_core::driver::checkpoint::{checkpoint, from_text, restore, to_text, FORMAT_VERSION};
use asybo_core::driver::{history_csv, krige, run, Driver, Mode, RunConfig, RunState};
use asybo_core::evaluator::{EvaluationBackend, InProcessBackend, Status, VirtualClock};
use asybo_core::space::Bounds;
use asybo_core::Error;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sync_backend(f: fn(&[f64]) -> f64) -> Arc<dyn EvaluationBackend> {
    Arc::new(InProcessBackend::synchronous(f))
}

#[test]
fn async_runs_are_reproducible() {
    let cfg = async_config(3);
    let (a, _) = uninterrupted(&cfg);
    let (b, _) = uninterrupted(&cfg);
    assert_eq!(a, b);
    assert!(a.finished);
    assert!(a.pending.is_empty());
    assert_eq!(a.history.len(), cfg.max_evals);
    // ids are unique and history is sorted by id within each iteration
    let mut ids: Vec<u64> = a.history.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), a.history.len());
}

#[test]
fn different_seeds_differ() {
    let (a, _) = uninterrupted(&async_config(1));
    let (b, _) = uninterrupted(&async_config(2));
    assert_ne!(a.history, b.history);
}

#[test]
fn some_iterations_leave_work_pending() {
    let cfg = async_config(4);
    let clock = Arc::new(VirtualClock::new());
    let backend: Arc<dyn EvaluationBackend> = Arc::new(HandleLatencyBackend {
        clock: clock.clone(),
        f: sphere_shift,
    });
    let mut d = Driver::new(cfg.clone(), backend, clock).unwrap();
    let mut saw_pending = false;
    while d.step().unwrap() {
        let s = d.state();
        saw_pending |= !s.pending.is_empty();
        assert!(s.pending.len() <= cfg.evaluator.max_simultaneous + cfg.batch_k);
        assert!(s.proposed <= cfg.max_evals);
        assert_eq!(s.proposed, s.history.len() + s.pending.len());
    }
    assert!(saw_pending);
}

#[test]
fn checkpoint_text_roundtrip() {
    let mut cfg = async_config(5);
    cfg.extra.push(("run.objective".into(), "with spaces = and %".into()));
    let clock = Arc::new(VirtualClock::new());
    let backend: Arc<dyn EvaluationBackend> = Arc::new(HandleLatencyBackend {
        clock: clock.clone(),
        f: sphere_shift,
    });
    let mut d = Driver::new(cfg.clone(), backend, clock).unwrap();
    for _ in 0..4 {
        d.step().unwrap();
        let text = to_text(&cfg, d.state());
        let (c2, s2) = from_text(&text).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(&s2, d.state());
        assert_eq!(to_text(&c2, &s2), text);
    }
}

#[test]
fn failed_records_survive_checkpoints() {
    let mut cfg = RunConfig::new(Bounds::uniform(1, 0.0, 1.0).unwrap());
    cfg.max_evals = 8;
    cfg.n_init = 4;
    let f = |x: &[f64]| if x[0] < 0.5 { f64::NAN } else { x[0] };
    let st = run(cfg.clone(), sync_backend(f), Arc::new(VirtualClock::new())).unwrap();
    assert!(st.n_failed() > 0);
    let (_, back) = from_text(&to_text(&cfg, &st)).unwrap();
    assert_eq!(back, st);
    assert!(back.history.iter().any(|r| matches!(&r.status, Status::Failed(_))));
}

#[test]
fn resume_matches_uninterrupted_at_every_kill_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = async_config(6);
    let (full, steps) = uninterrupted(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..6 {
        let k = rng.random_range(1..steps);
        let resumed = killed_and_resumed(&cfg, k, dir.path());
        assert_eq!(resumed, full, "kill after {k} of {steps}");
    }
}

#[test]
fn resuming_a_finished_run_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = async_config(7);
    let (full, steps) = uninterrupted(&cfg);
    assert_eq!(killed_and_resumed(&cfg, steps + 3, dir.path()), full);
}

#[test]
fn truncated_file_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let st = run(async_config(8), sync_backend(sphere_shift), Arc::new(VirtualClock::new())).unwrap();
    checkpoint(&async_config(8), &st, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = lines.len() - 3;
    fs::write(&path, lines[..cut].join("\n")).unwrap();
    match restore(&path) {
        Err(Error::Checkpoint { line, .. }) => assert!(line >= cut, "line {line}"),
        other => panic!("expected checkpoint error, got {other:?}"),
    }
    // a mangled record line
    let mut bad: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    let idx = bad.iter().position(|l| l.starts_with("record")).unwrap();
    bad[idx] = bad[idx].replacen("record history", "record history zz", 1);
    match from_text(&bad.join("\n")) {
        Err(Error::Checkpoint { line, .. }) => assert_eq!(line, idx + 1),
        other => panic!("expected checkpoint error, got {other:?}"),
    }
}

#[test]
fn version_and_hash_are_checked() {
    let cfg = async_config(9);
    let st = RunState::new(&cfg);
    let text = to_text(&cfg, &st);
    let newer = text.replacen(
        &format!("asybo-checkpoint {FORMAT_VERSION} "),
        &format!("asybo-checkpoint {} ", FORMAT_VERSION + 1),
        1,
    );
    assert!(matches!(from_text(&newer), Err(Error::CheckpointVersion { .. })));
    let edited = text.replacen("config run.seed = 9", "config run.seed = 10", 1);
    assert_ne!(edited, text);
    assert!(matches!(from_text(&edited), Err(Error::Checkpoint { .. })));
    assert!(matches!(from_text("not a checkpoint"), Err(Error::Checkpoint { line: 1, .. })));
}

#[test]
fn writes_are_atomic_and_leave_no_temp_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let cfg = async_config(10);
    let st = RunState::new(&cfg);
    checkpoint(&cfg, &st, &path).unwrap();
    checkpoint(&cfg, &st, &path).unwrap();
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1);
}

#[test]
fn benchmark_run_improves_on_the_design() {
    let f = BenchmarkFn::new(BenchName::Rastrigin, 2).unwrap();
    let cfg = benchmark_config(&f, 40, 0);
    let g = f.clone();
    let backend: Arc<dyn EvaluationBackend> =
        Arc::new(InProcessBackend::synchronous(move |x: &[f64]| g.eval_unchecked(x)));
    let st = run(cfg.clone(), backend, Arc::new(VirtualClock::new())).unwrap();
    let design_best = st.history[..cfg.n_init]
        .iter()
        .filter_map(|r| r.value())
        .fold(f64::INFINITY, f64::min);
    assert!(st.best().unwrap().1 <= design_best);
    let bsf = st.best_so_far();
    assert!(bsf.windows(2).all(|w| w[1] <= w[0]));
    let csv = history_csv(&st, 2);
    assert_eq!(csv.lines().count(), st.history.len() + 1);
    assert!(csv.starts_with("iteration,id,x1,x2,value,status,submit_time,complete_time"));
}

#[test]
fn krige_mode_reports_a_grid() {
    let mut cfg = RunConfig::new(Bounds::uniform(1, 0.0, 10.0).unwrap());
    cfg.max_evals = 10;
    cfg.n_init = 3;
    cfg.grid_points = 21;
    let rep = krige(cfg, sync_backend(|x| x[0].sin()), Arc::new(VirtualClock::new())).unwrap();
    assert_eq!(rep.rows.len(), 21);
    assert_eq!(rep.rows[0].0, vec![0.0]);
    assert_eq!(rep.rows[20].0, vec![10.0]);
    assert!(rep.rows.iter().all(|(_, _, v)| *v >= 0.0));
    assert_eq!(rep.state.history.len(), 10);
    assert_eq!("krige".parse::<Mode>().unwrap(), Mode::Krige);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = async_config(0);
    cfg.batch_k = 0;
    assert!(run(cfg, sync_backend(sphere_shift), Arc::new(VirtualClock::new())).is_err());
    let mut cfg = async_config(0);
    cfg.max_evals = 2;
    assert!(run(cfg, sync_backend(sphere_shift), Arc::new(VirtualClock::new())).is_err());
}
