//! Acquisition functions and batch in-fill selection.
//!
//! Every family is expressed as a quantity to minimize: LCB directly, PI and
//! EI negated, and the pure-exploration score as `−σ`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use crate::acqopt::{minimize_all, MinimizeSpec};
use crate::error::{invalid, Error, Result};
use crate::gp::{GpState, Prediction};

/// Upper clip for the κ fan of a batch.
pub const KAPPA_MAX: f64 = 10.0;

/// Minimum distance between in-fill points and known points (normalized).
pub const MIN_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquisitionFamily {
    Lcb,
    Pi,
    Ei,
    /// `−σ(x)`; used by kriging mode.
    MaxVariance,
}

impl fmt::Display for AcquisitionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcquisitionFamily::Lcb => "lcb",
            AcquisitionFamily::Pi => "pi",
            AcquisitionFamily::Ei => "ei",
            AcquisitionFamily::MaxVariance => "max_variance",
        })
    }
}

impl FromStr for AcquisitionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lcb" => Ok(AcquisitionFamily::Lcb),
            "pi" => Ok(AcquisitionFamily::Pi),
            "ei" => Ok(AcquisitionFamily::Ei),
            "max_variance" | "explore" => Ok(AcquisitionFamily::MaxVariance),
            other => Err(invalid(format!("unknown acquisition family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaSchedule {
    Constant(f64),
    /// `κ₀·decay^iteration`
    Annealing { kappa0: f64, decay: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSpec {
    pub family: AcquisitionFamily,
    pub schedule: KappaSchedule,
    /// Best completed cost so far, on the surrogate's target scale.
    pub f_min: f64,
}

impl AcquisitionSpec {
    pub fn new(family: AcquisitionFamily, schedule: KappaSchedule) -> Self {
        AcquisitionSpec {
            family,
            schedule,
            f_min: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.schedule {
            KappaSchedule::Constant(k) if !(k >= 0.0 && k.is_finite()) => {
                Err(invalid(format!("kappa must be non-negative, got {k}")))
            }
            KappaSchedule::Annealing { kappa0, decay }
                if !(kappa0 >= 0.0 && kappa0.is_finite() && decay > 0.0 && decay.is_finite()) =>
            {
                Err(invalid(format!(
                    "annealing needs kappa0 >= 0 and decay > 0, got {kappa0}, {decay}"
                )))
            }
            _ => Ok(()),
        }
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Probability that a draw from `N(mu, sigma²)` lies below `f_min`.
pub fn probability_of_improvement(mu: f64, sigma: f64, f_min: f64) -> f64 {
    if sigma > 0.0 {
        normal_cdf((f_min - mu) / sigma)
    } else {
        0.0
    }
}

/// `E[max(f_min − Y, 0)]` for `Y ~ N(mu, sigma²)`.
pub fn expected_improvement(mu: f64, sigma: f64, f_min: f64) -> f64 {
    if sigma > 0.0 {
        let z = (f_min - mu) / sigma;
        ((f_min - mu) * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
    } else {
        0.0
    }
}

pub fn acq_eval(spec: &AcquisitionSpec, pred: &Prediction, kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) {
        return Err(invalid(format!("kappa must be non-negative, got {kappa}")));
    }
    if !(pred.variance >= 0.0) {
        return Err(invalid("prediction variance must be non-negative"));
    }
    Ok(score(spec, pred, kappa))
}

#[inline]
fn score(spec: &AcquisitionSpec, pred: &Prediction, kappa: f64) -> f64 {
    let sigma = pred.variance.sqrt();
    match spec.family {
        AcquisitionFamily::Lcb => pred.mean - kappa * sigma,
        AcquisitionFamily::Pi => -probability_of_improvement(pred.mean, sigma, spec.f_min),
        AcquisitionFamily::Ei => -expected_improvement(pred.mean, sigma, spec.f_min),
        AcquisitionFamily::MaxVariance => -sigma,
    }
}

pub fn next_kappa(spec: &AcquisitionSpec, iteration: u64) -> f64 {
    match spec.schedule {
        KappaSchedule::Constant(k) => k,
        KappaSchedule::Annealing { kappa0, decay } => {
            kappa0 * decay.powi(iteration.min(i32::MAX as u64) as i32)
        }
    }
}

/// κ values for a batch of `k`: the base value alone for `k = 1`, otherwise
/// `base·{0.5, 1, 2, 4, …}` clipped to `[0, KAPPA_MAX]`.
pub fn kappa_fan(base: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![base.clamp(0.0, KAPPA_MAX)];
    }
    (0..k)
        .map(|i| (base * 2f64.powi(i as i32 - 1)).clamp(0.0, KAPPA_MAX))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfillBatch {
    pub points: Vec<Vec<f64>>,
    pub kappas: Vec<f64>,
}

fn far_from(p: &[f64], others: &[Vec<f64>]) -> bool {
    others.iter().all(|q| {
        p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= MIN_SEPARATION
    })
}

/// Choose `k` points by minimizing the acquisition once per κ of the fan.
///
/// `opt.bounds` is the search box in the surrogate's coordinates. Points are
/// kept at least [`MIN_SEPARATION`] from each other, from the training
/// inputs, and from `avoid` (typically points still being evaluated).
pub fn select_infill(
    state: &GpState,
    spec: &AcquisitionSpec,
    k: usize,
    iteration: u64,
    opt: &MinimizeSpec,
    avoid: &[Vec<f64>],
) -> Result<InfillBatch> {
    if k == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    spec.validate()?;
    if opt.bounds.dim() != state.dim() {
        return Err(invalid("search box dimension does not match surrogate"));
    }

    // best few training inputs act as incumbent starts
    let mut ranked: Vec<usize> = (0..state.len()).collect();
    ranked.sort_by(|&a, &b| state.targets()[a].total_cmp(&state.targets()[b]));
    let incumbents: Vec<Vec<f64>> = ranked
        .iter()
        .take(3)
        .map(|&i| state.inputs()[i].clone())
        .collect();

    let kappas = kappa_fan(next_kappa(spec, iteration), k);
    let mut taken: Vec<Vec<f64>> = state.inputs().to_vec();
    taken.extend(avoid.iter().cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut points = Vec::with_capacity(k);

    for (i, &kappa) in kappas.iter().enumerate() {
        let run = MinimizeSpec {
            seed: opt.seed.wrapping_add(i as u64),
            ..opt.clone()
        };
        let minima = minimize_all(
            |x: &[f64]| score(spec, &state.predict_unchecked(x), kappa),
            &run,
            &incumbents,
        )?;
        let chosen = minima
            .into_iter()
            .map(|m| m.point)
            .find(|p| far_from(p, &taken))
            .unwrap_or_else(|| loop {
                let u: Vec<f64> = (0..state.dim()).map(|_| rng.random::<f64>()).collect();
                let p = opt.bounds.from_unit(&u);
                if far_from(&p, &taken) {
                    break p;
                }
            });
        taken.push(chosen.clone());
        points.push(chosen);
    }
    Ok(InfillBatch { points, kappas })
}
