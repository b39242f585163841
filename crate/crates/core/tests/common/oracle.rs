//! Dense reference computations built on nalgebra, independent of the
//! crate's packed factorization.

use asybo_core::kernel::{KernelFamily, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Closed-form kernel value written out from the family definitions.
pub fn kernel_value(k: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    let ls = k.length_scale().as_vec();
    let r2: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (p, q))| {
            let l = if ls.len() == 1 { ls[0] } else { ls[i] };
            ((p - q) / l).powi(2)
        })
        .sum();
    let r = r2.sqrt();
    match k.family() {
        KernelFamily::SquaredExponential => (-r2).exp(),
        KernelFamily::Matern32 => (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp(),
        KernelFamily::Matern52 => {
            (1.0 + 5f64.sqrt() * r + 5.0 * r2 / 3.0) * (-(5f64.sqrt()) * r).exp()
        }
        KernelFamily::Exponential => (-r).exp(),
        KernelFamily::GammaExponential => (-(r.powf(k.gamma()))).exp(),
        KernelFamily::RationalQuadratic => (1.0 + r2 / (2.0 * k.alpha())).powf(-k.alpha()),
        KernelFamily::PiecewisePolyD0 => {
            let j = (k.dim() / 2 + 1) as i32;
            (1.0 - r).max(0.0).powi(j)
        }
    }
}

pub fn gram(k: &KernelSpec, x: &[Vec<f64>], jitter: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        kernel_value(k, &x[i], &x[j]) + if i == j { jitter } else { 0.0 }
    })
}

/// Posterior `(mean, variance)` from an LU solve of the dense system.
pub fn predict(k: &KernelSpec, x: &[Vec<f64>], y: &[f64], jitter: f64, q: &[f64]) -> (f64, f64) {
    let lu = gram(k, x, jitter).lu();
    let ks = DVector::from_iterator(x.len(), x.iter().map(|p| kernel_value(k, p, q)));
    let w = lu.solve(&DVector::from_column_slice(y)).expect("nonsingular");
    let v = lu.solve(&ks).expect("nonsingular");
    (ks.dot(&w), kernel_value(k, q, q) - ks.dot(&v))
}

/// `log(yᵀK⁻¹y) + (1/N)·log det K` from dense LU.
pub fn mle(k: &KernelSpec, x: &[Vec<f64>], y: &[f64], jitter: f64) -> f64 {
    let m = gram(k, x, jitter);
    let lu = m.clone().lu();
    let yv = DVector::from_column_slice(y);
    let w = lu.solve(&yv).expect("nonsingular");
    let logdet = lu.determinant().abs().ln();
    yv.dot(&w).ln() + logdet / x.len() as f64
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Random points with pairwise Euclidean separation at least `sep`.
pub fn separated_points<R: Rng>(rng: &mut R, n: usize, dim: usize, sep: f64) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut tries = 0;
    while pts.len() < n {
        tries += 1;
        assert!(tries < 1_000_000, "cannot place {n} points {sep} apart");
        let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let ok = pts.iter().all(|q| {
            p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= sep
        });
        if ok {
            pts.push(p);
        }
    }
    pts
}

/// `∫_{-∞}^{upper} g(t)·φ((t − mu)/sigma)/sigma dt` by composite Simpson
/// over `[mu − 12σ, min(upper, mu + 12σ)]`.
pub fn gaussian_integral<G: Fn(f64) -> f64>(mu: f64, sigma: f64, upper: f64, g: G) -> f64 {
    let a = mu - 12.0 * sigma;
    let b = upper.min(mu + 12.0 * sigma);
    if b <= a {
        return 0.0;
    }
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |t: f64| {
        let z = (t - mu) / sigma;
        g(t) * (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}
