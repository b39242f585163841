//! Gaussian-process surrogate with an incrementally grown Cholesky factor.

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::CholeskyFactor;

/// Points closer than this (Euclidean, normalized units) count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

pub const DEFAULT_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Posterior variance clamped at zero.
    pub variance: f64,
    /// Variance before clamping, kept for diagnostics.
    pub raw_variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Immutable surrogate state. `fit`, `extend` and friends return new states.
#[derive(Debug, Clone)]
pub struct GpState {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kernel: KernelSpec,
    jitter: f64,
    chol: CholeskyFactor,
    weights: Vec<f64>,
}

fn check_points(points: &[Vec<f64>], dim: usize) -> Result<()> {
    for p in points {
        if p.len() != dim {
            return Err(invalid(format!(
                "point has dimension {}, expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

impl GpState {
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: KernelSpec, jitter: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(invalid("gp_fit needs at least one training point"));
        }
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(invalid(format!("jitter must be non-negative, got {jitter}")));
        }
        let empty = GpState {
            x: Vec::new(),
            y: Vec::new(),
            kernel,
            jitter,
            chol: CholeskyFactor::new(),
            weights: Vec::new(),
        };
        empty.extend(x, y)
    }

    /// Append new training data by growing the factor block-wise (O(N²k)).
    pub fn extend(&self, x_new: Vec<Vec<f64>>, y_new: Vec<f64>) -> Result<Self> {
        if x_new.len() != y_new.len() {
            return Err(invalid(format!(
                "{} points but {} values",
                x_new.len(),
                y_new.len()
            )));
        }
        if x_new.is_empty() {
            return Ok(self.clone());
        }
        let dim = self.x.first().unwrap_or(&x_new[0]).len();
        check_points(&x_new, dim)?;
        if y_new.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite training value"));
        }
        // validates anisotropic scale arity
        self.kernel.eval(&x_new[0], &x_new[0])?;

        let n0 = self.x.len();
        for (j, p) in x_new.iter().enumerate() {
            let mut existing = self.x.iter().chain(&x_new[..j]);
            if let Some(other) = existing.position(|q| distance(p, q) <= DUPLICATE_TOL) {
                return Err(Error::DuplicatePoint { index: n0 + j, other });
            }
        }

        let mut next = self.clone();
        next.x.reserve(x_new.len());
        for (p, v) in x_new.into_iter().zip(y_new) {
            let cross: Vec<f64> = next
                .x
                .iter()
                .map(|q| next.kernel.eval_unchecked(q, &p))
                .collect();
            let diag = next.kernel.eval_unchecked(&p, &p) + next.jitter;
            next.chol.push_row(&cross, diag)?;
            next.x.push(p);
            next.y.push(v);
        }
        next.weights = next.chol.solve(&next.y);
        Ok(next)
    }

    /// Same inputs and factor, new targets. Only the weights are re-solved.
    pub fn with_targets(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.x.len() {
            return Err(invalid(format!(
                "{} targets for {} points",
                y.len(),
                self.x.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite training value"));
        }
        let weights = self.chol.solve(&y);
        Ok(GpState {
            y,
            weights,
            ..self.clone()
        })
    }

    /// Full refactorization under a different kernel or jitter.
    pub fn refit(&self, kernel: KernelSpec, jitter: f64) -> Result<Self> {
        GpState::fit(self.x.clone(), self.y.clone(), kernel, jitter)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        check_points(std::slice::from_ref(&x.to_vec()), self.dim())?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> Prediction {
        let k: Vec<f64> = self
            .x
            .iter()
            .map(|q| self.kernel.eval_unchecked(q, x))
            .collect();
        let mean = k.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        let v = self.chol.solve_lower(&k);
        let raw = self.kernel.eval_unchecked(x, x) - v.iter().map(|a| a * a).sum::<f64>();
        Prediction {
            mean,
            variance: raw.max(0.0),
            raw_variance: raw,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Whether `x` lies within `tol` of a training input.
    pub fn contains_near(&self, x: &[f64], tol: f64) -> bool {
        self.x.iter().any(|q| distance(q, x) < tol)
    }
}

/// Dense Gram matrix `K_ij = k(x_i, x_j)`.
pub fn gram_matrix(kernel: &KernelSpec, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| x.iter().map(|b| kernel.eval_unchecked(a, b)).collect())
        .collect()
}
