//! Multi-start bounded Nelder–Mead minimizer.
//!
//! Trial points are projected onto the box, so the objective is only ever
//! evaluated inside it. Starts come from a randomly shifted Halton sequence
//! (deterministic for a given seed) plus any caller-supplied incumbents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::space::Bounds;

#[derive(Debug, Clone)]
pub struct MinimizeSpec {
    pub bounds: Bounds,
    pub n_starts: usize,
    pub max_evals: usize,
    pub tol: f64,
    pub seed: u64,
}

impl MinimizeSpec {
    /// Defaults: `8·d` starts, 2000 evaluations, tolerance 1e-6.
    pub fn new(bounds: Bounds, seed: u64) -> Self {
        let d = bounds.dim();
        MinimizeSpec {
            bounds,
            n_starts: 8 * d,
            max_evals: 2000,
            tol: 1e-6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(invalid("n_starts must be at least 1"));
        }
        if self.max_evals < self.n_starts {
            return Err(invalid(format!(
                "max_evals ({}) must be at least n_starts ({})",
                self.max_evals, self.n_starts
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid("tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMin {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Best point found over all starts.
pub fn minimize<F>(f: F, spec: &MinimizeSpec, incumbents: &[Vec<f64>]) -> Result<LocalMin>
where
    F: Fn(&[f64]) -> f64,
{
    let all = minimize_all(f, spec, incumbents)?;
    Ok(all.into_iter().next().expect("at least one start"))
}

/// One local minimum per start, sorted by value (ties keep start order).
pub fn minimize_all<F>(f: F, spec: &MinimizeSpec, incumbents: &[Vec<f64>]) -> Result<Vec<LocalMin>>
where
    F: Fn(&[f64]) -> f64,
{
    spec.validate()?;
    let bounds = &spec.bounds;
    let d = bounds.dim();
    let mut counter = Counted { f: &f, evals: 0 };

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(incumbents.len() + spec.n_starts);
    for inc in incumbents {
        if inc.len() != d {
            return Err(invalid("incumbent dimension does not match bounds"));
        }
        let mut p = inc.clone();
        bounds.clip(&mut p);
        starts.push(p);
    }
    starts.extend(space_filling(bounds, spec.n_starts, spec.seed));

    let mut seeded: Vec<LocalMin> = Vec::with_capacity(starts.len());
    for p in starts {
        let value = counter.call(&p)?;
        seeded.push(LocalMin { point: p, value });
    }
    // refine the most promising starts first
    let mut order: Vec<usize> = (0..seeded.len()).collect();
    order.sort_by(|&a, &b| seeded[a].value.total_cmp(&seeded[b].value).then(a.cmp(&b)));

    let mut results = seeded.clone();
    let mut runs_left = order.len();
    for &idx in &order {
        let remaining = spec.max_evals.saturating_sub(counter.evals);
        let budget = remaining / runs_left.max(1);
        runs_left -= 1;
        if budget < d + 2 {
            continue;
        }
        let local = nelder_mead(&mut counter, bounds, &seeded[idx], budget, spec.tol)?;
        if local.value <= results[idx].value {
            results[idx] = local;
        }
    }
    results.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(results)
}

struct Counted<'a, F> {
    f: &'a F,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn call(&mut self, x: &[f64]) -> Result<f64> {
        self.evals += 1;
        let v = (self.f)(x);
        if !v.is_finite() {
            return Err(Error::ObjectiveEvaluation {
                point: x.to_vec(),
                value: v,
            });
        }
        Ok(v)
    }
}

/// `n` points of a Halton sequence under a seeded random shift, mapped into
/// the box.
pub fn space_filling(bounds: &Bounds, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let bases = first_primes(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    (1..=n as u64)
        .map(|i| {
            let u: Vec<f64> = bases
                .iter()
                .zip(&shift)
                .map(|(&b, s)| (radical_inverse(i, b) + s).fract())
                .collect();
            bounds.from_unit(&u)
        })
        .collect()
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

const MAX_RESTARTS: usize = 2;

fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &mut Counted<'_, F>,
    bounds: &Bounds,
    start: &LocalMin,
    budget: usize,
    tol: f64,
) -> Result<LocalMin> {
    let stop_at = f.evals + budget;
    let mut best = start.clone();
    let mut step_frac = 0.1;
    for _ in 0..=MAX_RESTARTS {
        if f.evals + bounds.dim() + 1 > stop_at {
            break;
        }
        let found = nelder_mead_once(f, bounds, &best, step_frac, stop_at, tol)?;
        let improved = found.value < best.value - tol * (1.0 + best.value.abs());
        if found.value <= best.value {
            best = found;
        }
        if !improved {
            break;
        }
        step_frac *= 0.5;
    }
    Ok(best)
}

fn nelder_mead_once<F: Fn(&[f64]) -> f64>(
    f: &mut Counted<'_, F>,
    bounds: &Bounds,
    start: &LocalMin,
    step_frac: f64,
    stop_at: usize,
    tol: f64,
) -> Result<LocalMin> {
    let d = bounds.dim();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.point.clone(), start.value));
    for i in 0..d {
        let mut p = start.point.clone();
        let step = step_frac * bounds.width(i);
        p[i] = if p[i] + step <= bounds.hi()[i] { p[i] + step } else { p[i] - step };
        bounds.clip(&mut p);
        let v = f.call(&p)?;
        simplex.push((p, v));
    }

    let trial = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        let mut p: Vec<f64> = c.iter().zip(w).map(|(ci, wi)| ci + t * (wi - ci)).collect();
        bounds.clip(&mut p);
        p
    };

    while f.evals < stop_at {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo_v, hi_v) = (simplex[0].1, simplex[d].1);
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .enumerate()
                    .map(|(i, (a, b))| (a - b).abs() / bounds.width(i))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if size <= tol && (hi_v - lo_v).abs() <= tol * (1.0 + lo_v.abs()) {
            break;
        }
        if size <= f64::EPSILON {
            break;
        }

        let mut centroid = vec![0.0; d];
        for (p, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / d as f64;
            }
        }
        let worst = simplex[d].0.clone();

        let xr = trial(&centroid, &worst, -1.0);
        let fr = f.call(&xr)?;
        if fr < simplex[0].1 {
            let xe = trial(&centroid, &worst, -2.0);
            let fe = if f.evals < stop_at { f.call(&xe)? } else { f64::INFINITY };
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[d].1 {
            let xc = trial(&centroid, &worst, -0.5);
            let fc = f.call(&xc)?;
            (xc, fc)
        } else {
            let xc = trial(&centroid, &worst, 0.5);
            let fc = f.call(&xc)?;
            (xc, fc)
        };
        if fc < simplex[d].1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            if f.evals >= stop_at {
                break;
            }
            let p = trial(&best, &vertex.0, 0.5);
            let v = f.call(&p)?;
            *vertex = (p, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (point, value) = simplex.swap_remove(0);
    Ok(LocalMin { point, value })
}
