//! Model-quality metric `log(yᵀK⁻¹y) + (1/N)·log det K` and length-scale
//! tuning by minimizing it.

use std::cell::RefCell;

use crate::acqopt::{minimize, MinimizeSpec};
use crate::error::{invalid, Error, Result};
use crate::gp::GpState;
use crate::kernel::KernelSpec;
use crate::space::Bounds;

#[derive(Debug, Clone, PartialEq)]
pub struct MleReport {
    pub value: f64,
    /// `log(yᵀK⁻¹y)`
    pub fit_term: f64,
    /// `(1/N)·Σ log λ_i(K)`, computed from the Cholesky diagonal.
    pub complexity_term: f64,
    pub length_scale: Vec<f64>,
}

pub fn mle_objective(
    x: &[Vec<f64>],
    y: &[f64],
    kernel: &KernelSpec,
    jitter: f64,
) -> Result<MleReport> {
    if x.len() < 2 {
        return Err(invalid("mle_objective needs at least two points"));
    }
    let gp = GpState::fit(x.to_vec(), y.to_vec(), kernel.clone(), jitter)?;
    let z = gp.factor().solve_lower(y);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    if !(quad > 0.0 && quad.is_finite()) {
        return Err(Error::NumericalDomain(format!(
            "yᵀK⁻¹y = {quad} is not positive"
        )));
    }
    let fit_term = quad.ln();
    let complexity_term = gp.factor().log_det() / x.len() as f64;
    Ok(MleReport {
        value: fit_term + complexity_term,
        fit_term,
        complexity_term,
        length_scale: kernel.length_scale().as_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub enabled: bool,
    /// Minimum number of points before tuning; `None` means `max(5, 2·d)`.
    pub gate_n: Option<usize>,
    pub scale_bounds: (f64, f64),
    pub budget: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            enabled: true,
            gate_n: None,
            scale_bounds: (1e-3, 1e1),
            budget: 40,
            grid_points: 16,
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn gate_for_dim(&self, dim: usize) -> usize {
        self.gate_n.unwrap_or_else(|| (2 * dim).max(5))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(invalid(format!(
                "scale bounds must satisfy 0 < lower < upper, got [{lo}, {hi}]"
            )));
        }
        if self.budget < 1 {
            return Err(invalid("tuning budget must be at least 1"));
        }
        Ok(())
    }
}

// Candidates whose factorization fails get this finite penalty so the
// minimizer can keep going.
const FAILED_FIT: f64 = 1e300;

/// Return the candidate spec with the smallest MLE among those examined;
/// the incumbent is always a candidate.
pub fn tune_length_scale(
    x: &[Vec<f64>],
    y: &[f64],
    kernel: &KernelSpec,
    jitter: f64,
    cfg: &TuneConfig,
) -> Result<KernelSpec> {
    cfg.validate()?;
    let Some(first) = x.first() else {
        return Ok(kernel.clone());
    };
    if x.len() < cfg.gate_for_dim(first.len()).max(2) {
        return Ok(kernel.clone());
    }

    let n_params = kernel.length_scale().len();
    let score = |scales: &[f64]| -> f64 {
        kernel
            .set_length_scale(scales)
            .and_then(|k| mle_objective(x, y, &k, jitter))
            .map(|r| r.value)
            .unwrap_or(FAILED_FIT)
    };

    let incumbent = kernel.length_scale().as_vec();
    let best = RefCell::new((incumbent.clone(), score(&incumbent)));
    let mut evals = 1usize;
    let consider = |scales: Vec<f64>, v: f64| {
        let mut b = best.borrow_mut();
        if v < b.1 {
            *b = (scales, v);
        }
    };

    let (lo, hi) = (cfg.scale_bounds.0.ln(), cfg.scale_bounds.1.ln());
    let grid_n = cfg.grid_points.min(cfg.budget.saturating_sub(1));
    for i in 0..grid_n {
        let t = if grid_n == 1 {
            0.5
        } else {
            i as f64 / (grid_n - 1) as f64
        };
        let scales = vec![(lo + t * (hi - lo)).exp(); n_params];
        let v = score(&scales);
        evals += 1;
        consider(scales, v);
    }

    let remaining = cfg.budget.saturating_sub(evals);
    if remaining >= n_params + 3 {
        let start: Vec<f64> = best.borrow().0.iter().map(|l| l.ln().clamp(lo, hi)).collect();
        let spec = MinimizeSpec {
            bounds: Bounds::uniform(n_params, lo, hi)?,
            n_starts: 1,
            // the incumbent start and the one space-filling start are
            // evaluated before refinement begins
            max_evals: remaining.max(2),
            tol: 1e-4,
            seed: cfg.seed,
        };
        let objective = |log_scales: &[f64]| {
            let scales: Vec<f64> = log_scales.iter().map(|v| v.exp()).collect();
            let v = score(&scales);
            consider(scales, v);
            v
        };
        minimize(objective, &spec, &[start])?;
    }

    let (scales, value) = best.into_inner();
    if value >= FAILED_FIT {
        return Ok(kernel.clone());
    }
    kernel.set_length_scale(&scales)
}
