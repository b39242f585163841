//! Time sources. Times are seconds (or abstract time units) as `f64`.

use std::sync::Mutex;
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct RealClock {
    origin: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock {
            origin: Instant::now(),
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Simulated time: `sleep` advances the clock instantly.
#[derive(Debug, Default)]
pub struct VirtualClock {
    t: Mutex<f64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, dt: f64) {
        *self.t.lock().unwrap() += dt;
    }

    pub fn set(&self, t: f64) {
        *self.t.lock().unwrap() = t;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        *self.t.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d.as_secs_f64());
    }
}
