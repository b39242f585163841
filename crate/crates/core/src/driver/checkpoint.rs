//! Line-oriented checkpoint files.
//!
//! ```text
//! asybo-checkpoint 1 <config-hash> <dim>
//! config <key> = <value>                      (one per setting)
//! record <history|pending> <id> <status> <iteration> <attempts>
//!        <submit> <complete> <handle> <value> <x1,x2,...> <reason>
//! kernel <family> <l1,l2,...> <gamma> <alpha> <dim>
//! rng <seed-hex> <stream> <word-pos>
//! counters <iteration> <next-id> <proposed> <jitter> <elapsed> <clock> <finished>
//! end <number-of-records>
//! ```
//!
//! Reals are written with `{:e}`, which round-trips exactly. Missing
//! optional fields are `-`; strings are written as `=` followed by a
//! percent-encoded body. The config hash is the first 16 hex digits of the
//! SHA-256 of the `config` lines.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{RunConfig, RunState};
use crate::config::{run_config_entries, FlatConfig};
use crate::error::{Error, Result};
use crate::evaluator::{EvaluationRecord, Status};
use crate::kernel::{KernelFamily, KernelSpec};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "asybo-checkpoint";

fn encode_str(s: &str) -> String {
    let mut out = String::from("=");
    for c in s.chars() {
        match c {
            '%' | ' ' | '\t' | '\n' | '\r' | ',' => {
                let mut buf = [0u8; 4];
                for b in c.encode_utf8(&mut buf).bytes() {
                    let _ = write!(out, "%{b:02X}");
                }
            }
            c => out.push(c),
        }
    }
    out
}

fn decode_str(s: &str) -> Option<String> {
    let body = s.strip_prefix('=')?;
    let bytes = body.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = body.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |t| format!("{t:e}"))
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|t| format!("{t:e}")).collect::<Vec<_>>().join(",")
}

fn config_hash(lines: &[String]) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn record_line(kind: &str, r: &EvaluationRecord) -> String {
    let (status, value, reason) = match &r.status {
        Status::Queued => ("queued", None, None),
        Status::Running => ("running", None, None),
        Status::Completed(v) => ("completed", Some(*v), None),
        Status::Failed(why) => ("failed", None, Some(why.as_str())),
    };
    format!(
        "record {kind} {} {status} {} {} {} {} {} {} {} {}",
        r.id,
        r.iteration,
        r.attempts,
        opt_f64(r.submit_time),
        opt_f64(r.complete_time),
        r.handle.as_deref().map_or_else(|| "-".into(), encode_str),
        opt_f64(value),
        floats(&r.x),
        reason.map_or_else(|| "-".into(), encode_str),
    )
}

/// Serialize `config` and `state` to text.
pub fn to_text(config: &RunConfig, state: &RunState) -> String {
    let cfg_lines: Vec<String> = run_config_entries(config)
        .into_iter()
        .map(|(k, v)| format!("config {k} = {v}"))
        .collect();
    let mut out = format!(
        "{MAGIC} {FORMAT_VERSION} {} {}\n",
        config_hash(&cfg_lines),
        config.dim()
    );
    for l in &cfg_lines {
        out.push_str(l);
        out.push('\n');
    }
    for r in &state.history {
        out.push_str(&record_line("history", r));
        out.push('\n');
    }
    for r in &state.pending {
        out.push_str(&record_line("pending", r));
        out.push('\n');
    }
    let k = &state.kernel;
    let _ = writeln!(
        out,
        "kernel {} {} {:e} {:e} {}",
        k.family().name(),
        floats(&k.length_scale().as_vec()),
        k.gamma(),
        k.alpha(),
        k.dim()
    );
    let seed: String = state.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    let _ = writeln!(
        out,
        "rng {seed} {} {}",
        state.rng.get_stream(),
        state.rng.get_word_pos()
    );
    let _ = writeln!(
        out,
        "counters {} {} {} {:e} {:e} {:e} {}",
        state.iteration,
        state.next_id,
        state.proposed,
        state.jitter,
        state.elapsed,
        state.clock_time,
        state.finished
    );
    let _ = writeln!(out, "end {}", state.history.len() + state.pending.len());
    out
}

/// Write atomically: the text goes to a sibling temp file which is then
/// renamed over `path`.
pub fn checkpoint(config: &RunConfig, state: &RunState, path: &Path) -> Result<()> {
    let text = to_text(config, state);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn restore(path: &Path) -> Result<(RunConfig, RunState)> {
    let text = fs::read_to_string(path)?;
    from_text(&text)
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn peek_tag(&mut self) -> Option<&'a str> {
        self.inner
            .peek()
            .map(|(_, l)| l.split(' ').next().unwrap_or(""))
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(Error::Checkpoint {
                line: self.last + 1,
                message: "unexpected end of file".into(),
            }),
        }
    }
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(line: usize, name: &str, s: Option<&str>) -> Result<T> {
    let s = s.ok_or_else(|| bad(line, format!("missing field `{name}`")))?;
    s.parse::<T>()
        .map_err(|_| bad(line, format!("field `{name}`: cannot parse `{s}`")))
}

fn opt_field(line: usize, name: &str, s: Option<&str>) -> Result<Option<f64>> {
    match s {
        Some("-") => Ok(None),
        other => field::<f64>(line, name, other).map(Some),
    }
}

fn str_field(line: usize, name: &str, s: Option<&str>) -> Result<Option<String>> {
    match s {
        Some("-") => Ok(None),
        Some(t) => decode_str(t)
            .map(Some)
            .ok_or_else(|| bad(line, format!("field `{name}`: malformed string `{t}`"))),
        None => Err(bad(line, format!("missing field `{name}`"))),
    }
}

fn float_list(line: usize, name: &str, s: Option<&str>) -> Result<Vec<f64>> {
    let s = s.ok_or_else(|| bad(line, format!("missing field `{name}`")))?;
    s.split(',')
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| bad(line, format!("field `{name}`: cannot parse `{t}`")))
        })
        .collect()
}

fn parse_record(line: usize, text: &str, dim: usize) -> Result<(bool, EvaluationRecord)> {
    let mut it = text.split(' ');
    it.next();
    let pending = match it.next() {
        Some("history") => false,
        Some("pending") => true,
        other => return Err(bad(line, format!("unknown record list `{}`", other.unwrap_or("")))),
    };
    let id: u64 = field(line, "id", it.next())?;
    let status = it
        .next()
        .ok_or_else(|| bad(line, "missing field `status`"))?
        .to_string();
    let iteration: u64 = field(line, "iteration", it.next())?;
    let attempts: u32 = field(line, "attempts", it.next())?;
    let submit_time = opt_field(line, "submit", it.next())?;
    let complete_time = opt_field(line, "complete", it.next())?;
    let handle = str_field(line, "handle", it.next())?;
    let value = opt_field(line, "value", it.next())?;
    let x = float_list(line, "x", it.next())?;
    let reason = str_field(line, "reason", it.next())?;
    if it.next().is_some() {
        return Err(bad(line, "trailing fields"));
    }
    if x.len() != dim {
        return Err(bad(line, format!("point has {} coordinates, expected {dim}", x.len())));
    }
    let status = match (status.as_str(), value, reason) {
        ("queued", None, None) => Status::Queued,
        ("running", None, None) => Status::Running,
        ("completed", Some(v), None) if v.is_finite() => Status::Completed(v),
        ("failed", None, Some(why)) => Status::Failed(why),
        (s, _, _) => return Err(bad(line, format!("inconsistent record with status `{s}`"))),
    };
    if pending == status.is_resolved() {
        return Err(bad(line, "record status does not match its list"));
    }
    Ok((
        pending,
        EvaluationRecord {
            id,
            x,
            status,
            submit_time,
            complete_time,
            attempts,
            handle,
            iteration,
        },
    ))
}

pub fn from_text(text: &str) -> Result<(RunConfig, RunState)> {
    let mut lines = Lines {
        inner: text.lines().enumerate().peekable(),
        last: 0,
    };

    let (ln, header) = lines.next()?;
    let mut h = header.split(' ');
    if h.next() != Some(MAGIC) {
        return Err(bad(ln, "not a checkpoint file"));
    }
    let version = h.next().unwrap_or("");
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(Error::CheckpointVersion {
            found: version.to_string(),
            expected: FORMAT_VERSION,
        });
    }
    let hash = h.next().ok_or_else(|| bad(ln, "missing config hash"))?.to_string();
    let dim: usize = field(ln, "dim", h.next())?;

    let mut cfg_lines = Vec::new();
    let mut flat = FlatConfig::new();
    while lines.peek_tag() == Some("config") {
        let (ln, l) = lines.next()?;
        let body = &l["config ".len().min(l.len())..];
        let (k, v) = body
            .split_once(" = ")
            .ok_or_else(|| bad(ln, "malformed config line"))?;
        flat.set(k, v).map_err(|e| bad(ln, e.to_string()))?;
        cfg_lines.push(l.to_string());
    }
    if config_hash(&cfg_lines) != hash {
        return Err(bad(1, "config hash does not match the config lines"));
    }
    let config = flat
        .to_run_config(None)
        .map_err(|e| bad(1, format!("stored config is invalid: {e}")))?;
    if config.dim() != dim {
        return Err(bad(1, "header dimension does not match the stored bounds"));
    }

    let mut history = Vec::new();
    let mut pending = Vec::new();
    while lines.peek_tag() == Some("record") {
        let (ln, l) = lines.next()?;
        let (is_pending, r) = parse_record(ln, l, dim)?;
        if is_pending {
            pending.push(r);
        } else {
            history.push(r);
        }
    }

    let (ln, l) = lines.next()?;
    let mut k = l.split(' ');
    if k.next() != Some("kernel") {
        return Err(bad(ln, "expected a kernel line"));
    }
    let family: KernelFamily = k
        .next()
        .ok_or_else(|| bad(ln, "missing kernel family"))?
        .parse()
        .map_err(|e: Error| bad(ln, e.to_string()))?;
    let scales = float_list(ln, "length_scale", k.next())?;
    let gamma: f64 = field(ln, "gamma", k.next())?;
    let alpha: f64 = field(ln, "alpha", k.next())?;
    let kdim: usize = field(ln, "dim", k.next())?;
    let kernel = KernelSpec::new(family, 1.0)
        .and_then(|s| s.set_length_scale(&scales))
        .and_then(|s| s.with_gamma(gamma))
        .and_then(|s| s.with_alpha(alpha))
        .and_then(|s| s.with_dim(kdim))
        .map_err(|e| bad(ln, e.to_string()))?;

    let (ln, l) = lines.next()?;
    let mut r = l.split(' ');
    if r.next() != Some("rng") {
        return Err(bad(ln, "expected an rng line"));
    }
    let seed_hex = r.next().ok_or_else(|| bad(ln, "missing rng seed"))?;
    if seed_hex.len() != 64 {
        return Err(bad(ln, "rng seed must be 64 hex digits"));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
            .map_err(|_| bad(ln, "rng seed is not hex"))?;
    }
    let stream: u64 = field(ln, "stream", r.next())?;
    let word_pos: u128 = field(ln, "word_pos", r.next())?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let (ln, l) = lines.next()?;
    let mut c = l.split(' ');
    if c.next() != Some("counters") {
        return Err(bad(ln, "expected a counters line"));
    }
    let iteration: u64 = field(ln, "iteration", c.next())?;
    let next_id: u64 = field(ln, "next_id", c.next())?;
    let proposed: usize = field(ln, "proposed", c.next())?;
    let jitter: f64 = field(ln, "jitter", c.next())?;
    let elapsed: f64 = field(ln, "elapsed", c.next())?;
    let clock_time: f64 = field(ln, "clock", c.next())?;
    let finished: bool = field(ln, "finished", c.next())?;

    let (ln, l) = lines.next()?;
    let n: usize = match l.strip_prefix("end ") {
        Some(n) => field(ln, "end", Some(n))?,
        None => return Err(bad(ln, "expected the end marker")),
    };
    if n != history.len() + pending.len() {
        return Err(bad(ln, format!(
            "end marker announces {n} records, found {}",
            history.len() + pending.len()
        )));
    }
    if let Ok((ln, _)) = lines.next() {
        return Err(bad(ln, "content after the end marker"));
    }

    Ok((
        config,
        RunState {
            history,
            pending,
            iteration,
            rng,
            kernel,
            jitter,
            next_id,
            proposed,
            elapsed,
            clock_time,
            finished,
        },
    ))
}
