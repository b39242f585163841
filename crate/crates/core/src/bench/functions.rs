use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::space::Bounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchName {
    Rastrigin,
    Ackley,
    Rosenbrock,
    Griewangk,
}

impl BenchName {
    pub const ALL: [BenchName; 4] = [
        BenchName::Rastrigin,
        BenchName::Ackley,
        BenchName::Rosenbrock,
        BenchName::Griewangk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchName::Rastrigin => "rastrigin",
            BenchName::Ackley => "ackley",
            BenchName::Rosenbrock => "rosenbrock",
            BenchName::Griewangk => "griewangk",
        }
    }
}

impl fmt::Display for BenchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rastrigin" => Ok(BenchName::Rastrigin),
            "ackley" => Ok(BenchName::Ackley),
            "rosenbrock" => Ok(BenchName::Rosenbrock),
            "griewangk" | "griewank" => Ok(BenchName::Griewangk),
            other => Err(invalid(format!("unknown benchmark function `{other}`"))),
        }
    }
}

/// A standard d-dimensional test function with its usual search domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkFn {
    pub name: BenchName,
    pub dim: usize,
}

impl BenchmarkFn {
    pub fn new(name: BenchName, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("benchmark dimension must be at least 1"));
        }
        Ok(BenchmarkFn { name, dim })
    }

    pub fn domain(&self) -> Bounds {
        let (lo, hi) = match self.name {
            BenchName::Rastrigin => (-12.0, 12.0),
            BenchName::Ackley => (-32.768, 32.768),
            BenchName::Rosenbrock => (-5.0, 10.0),
            BenchName::Griewangk => (-600.0, 600.0),
        };
        Bounds::uniform(self.dim, lo, hi).expect("static bounds are valid")
    }

    pub fn true_optimum(&self) -> Vec<f64> {
        match self.name {
            BenchName::Rosenbrock => vec![1.0; self.dim],
            _ => vec![0.0; self.dim],
        }
    }

    pub fn true_value(&self) -> f64 {
        0.0
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "{} expects dimension {}, got {}",
                self.name,
                self.dim,
                x.len()
            )));
        }
        if !self.domain().contains(x) {
            return Err(invalid(format!("{x:?} lies outside the {} domain", self.name)));
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self.name {
            BenchName::Rastrigin => rastrigin(x),
            BenchName::Ackley => ackley(x),
            BenchName::Rosenbrock => rosenbrock(x),
            BenchName::Griewangk => griewangk(x),
        }
    }
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
            .sum::<f64>()
}

pub fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    let v = -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E;
    // exact zero at the optimum instead of a rounding residue
    if v.abs() < 1e-14 {
        0.0
    } else {
        v
    }
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

pub fn griewangk(x: &[f64]) -> f64 {
    let s: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4000.0;
    let p: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
        .product();
    1.0 + s - p
}

/// The one-dimensional analytic curves of the kriging comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrigingFn {
    /// `x + 0.5`
    Linear,
    /// `(x − 0.5)² + 1`
    Quadratic,
    /// `sin(3x² + (x − 8)² + 1)`
    SinQuadratic,
    /// `sin(((x − 6)/40)² + ((2x + 1)/10)³)`
    SinCubic,
}

impl KrigingFn {
    pub const ALL: [KrigingFn; 4] = [
        KrigingFn::Linear,
        KrigingFn::Quadratic,
        KrigingFn::SinQuadratic,
        KrigingFn::SinCubic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KrigingFn::Linear => "krig_linear",
            KrigingFn::Quadratic => "krig_quadratic",
            KrigingFn::SinQuadratic => "krig_sin_quadratic",
            KrigingFn::SinCubic => "krig_sin_cubic",
        }
    }

    pub fn domain(self) -> Bounds {
        let (lo, hi) = match self {
            KrigingFn::Linear | KrigingFn::Quadratic | KrigingFn::SinQuadratic => (0.0, 1.0),
            KrigingFn::SinCubic => (0.0, 10.0),
        };
        Bounds::uniform(1, lo, hi).expect("static bounds are valid")
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            KrigingFn::Linear => x + 0.5,
            KrigingFn::Quadratic => (x - 0.5).powi(2) + 1.0,
            KrigingFn::SinQuadratic => (3.0 * x * x + (x - 8.0).powi(2) + 1.0).sin(),
            KrigingFn::SinCubic => (((x - 6.0) / 40.0).powi(2) + ((2.0 * x + 1.0) / 10.0).powi(3)).sin(),
        }
    }
}

impl FromStr for KrigingFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KrigingFn::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| invalid(format!("unknown kriging function `{s}`")))
    }
}
