//! Stationary covariance functions.
//!
//! Every kernel is a function of the scaled distance `r = ‖(x − x′) ⊘ l‖`,
//! so anisotropic length scales reduce to the isotropic radial forms with
//! `l = 1` after scaling.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    SquaredExponential,
    Matern32,
    Matern52,
    Exponential,
    GammaExponential,
    RationalQuadratic,
    PiecewisePolyD0,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 7] = [
        KernelFamily::SquaredExponential,
        KernelFamily::Matern32,
        KernelFamily::Matern52,
        KernelFamily::Exponential,
        KernelFamily::GammaExponential,
        KernelFamily::RationalQuadratic,
        KernelFamily::PiecewisePolyD0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "squared_exponential",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Exponential => "exponential",
            KernelFamily::GammaExponential => "gamma_exponential",
            KernelFamily::RationalQuadratic => "rational_quadratic",
            KernelFamily::PiecewisePolyD0 => "piecewise_poly_d0",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fam = match s.trim().to_ascii_lowercase().as_str() {
            "se" | "squared_exponential" | "rbf" => KernelFamily::SquaredExponential,
            "matern32" | "matern_3_2" => KernelFamily::Matern32,
            "matern52" | "matern_5_2" => KernelFamily::Matern52,
            "exponential" | "exp" => KernelFamily::Exponential,
            "gamma_exponential" | "gamma_exp" => KernelFamily::GammaExponential,
            "rational_quadratic" | "rq" => KernelFamily::RationalQuadratic,
            "piecewise_poly_d0" | "pp0" => KernelFamily::PiecewisePolyD0,
            other => return Err(invalid(format!("unknown kernel family `{other}`"))),
        };
        Ok(fam)
    }
}

/// Length scale shared by all input dimensions, or one per dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum LengthScale {
    Isotropic(f64),
    Anisotropic(Vec<f64>),
}

impl LengthScale {
    pub fn from_slice(scales: &[f64]) -> Result<Self> {
        if scales.is_empty() {
            return Err(invalid("length scale must have at least one component"));
        }
        for &l in scales {
            if !(l.is_finite() && l > 0.0) {
                return Err(invalid(format!("length scale must be positive, got {l}")));
            }
        }
        Ok(if scales.len() == 1 {
            LengthScale::Isotropic(scales[0])
        } else {
            LengthScale::Anisotropic(scales.to_vec())
        })
    }

    pub fn as_vec(&self) -> Vec<f64> {
        match self {
            LengthScale::Isotropic(l) => vec![*l],
            LengthScale::Anisotropic(v) => v.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LengthScale::Isotropic(_) => 1,
            LengthScale::Anisotropic(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Kernel family plus its parameters. Immutable value; the setters return
/// new specs.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    length_scale: LengthScale,
    gamma: f64,
    alpha: f64,
    dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, length_scale: f64) -> Result<Self> {
        Ok(KernelSpec {
            family,
            length_scale: LengthScale::from_slice(&[length_scale])?,
            gamma: 1.0,
            alpha: 1.0,
            dim: 1,
        })
    }

    pub fn squared_exponential(length_scale: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, length_scale)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 2.0) {
            return Err(invalid(format!("gamma must lie in (0, 2], got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    /// Dimension `D` used by the compact-support polynomial exponent.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("kernel dim must be at least 1"));
        }
        self.dim = dim;
        Ok(self)
    }

    pub fn set_length_scale(&self, scales: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.length_scale = LengthScale::from_slice(scales)?;
        Ok(out)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn length_scale(&self) -> &LengthScale {
        &self.length_scale
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Exponent `j = ⌊D/2⌋ + q + 1` of the compact-support kernel, `q = 0`.
    pub fn pp_exponent(&self) -> i32 {
        (self.dim / 2) as i32 + 1
    }

    /// `k(x, x′)` with argument checking.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(invalid(format!(
                "point dimensions differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        if let LengthScale::Anisotropic(v) = &self.length_scale {
            if v.len() != a.len() {
                return Err(invalid(format!(
                    "kernel has {} length scales but points have dimension {}",
                    v.len(),
                    a.len()
                )));
            }
        }
        if a.iter().chain(b).any(|c| !c.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        Ok(self.eval_unchecked(a, b))
    }

    /// Hot-path evaluation; the caller guarantees matching, finite inputs.
    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.radial(self.scaled_distance(a, b))
    }

    #[inline]
    pub fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = match &self.length_scale {
            LengthScale::Isotropic(l) => {
                let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                s / (l * l)
            }
            LengthScale::Anisotropic(ls) => a
                .iter()
                .zip(b)
                .zip(ls)
                .map(|((p, q), l)| {
                    let d = (p - q) / l;
                    d * d
                })
                .sum(),
        };
        sq.sqrt()
    }

    /// The radial profile `k(r)` at unit length scale.
    pub fn radial(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => (-r * r).exp(),
            KernelFamily::Matern32 => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
            }
            KernelFamily::Exponential => (-r).exp(),
            KernelFamily::GammaExponential => (-r.powf(self.gamma)).exp(),
            KernelFamily::RationalQuadratic => {
                (1.0 + r * r / (2.0 * self.alpha)).powf(-self.alpha)
            }
            KernelFamily::PiecewisePolyD0 => {
                if r >= 1.0 {
                    0.0
                } else {
                    (1.0 - r).powi(self.pp_exponent())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_specs() -> Vec<KernelSpec> {
        KernelFamily::ALL
            .iter()
            .map(|&f| {
                KernelSpec::new(f, 0.7)
                    .unwrap()
                    .with_gamma(1.5)
                    .unwrap()
                    .with_alpha(2.0)
                    .unwrap()
                    .with_dim(3)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn se_identity_and_unit_distance() {
        let k = KernelSpec::squared_exponential(1.0).unwrap();
        assert_eq!(k.eval(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 1.0);
        let v = k.eval(&[0.0], &[1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn compact_support_vanishes() {
        let k = KernelSpec::new(KernelFamily::PiecewisePolyD0, 1.0)
            .unwrap()
            .with_dim(2)
            .unwrap();
        assert_eq!(k.eval(&[0.0, 0.0], &[1.5, 0.0]).unwrap(), 0.0);
        // j = 2 for D = 2
        let v = k.eval(&[0.0, 0.0], &[0.5, 0.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn matern32_matches_closed_form() {
        let k = KernelSpec::new(KernelFamily::Matern32, 1.0).unwrap();
        for &r in &[0.0, 0.1, 0.5, 1.0, 2.3, 7.0] {
            let oracle = (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp();
            let got = k.eval(&[0.0], &[r]).unwrap();
            assert!((got - oracle).abs() < 1e-12, "r={r}");
        }
    }

    #[test]
    fn matern52_rewrite_matches_reference_form() {
        let k = KernelSpec::new(KernelFamily::Matern52, 2.0).unwrap();
        for &d in &[0.0, 0.4, 1.0, 3.0] {
            let r: f64 = d / 2.0;
            let oracle = (1.0 + 5f64.sqrt() * r + 5.0 * r.powi(2) / 3.0) * (-(5f64.sqrt()) * r).exp();
            assert!((k.eval(&[d], &[0.0]).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn set_length_scale_replaces_field_only() {
        let k = KernelSpec::squared_exponential(1.0).unwrap();
        let k2 = k.set_length_scale(&[2.0]).unwrap();
        assert_eq!(k2.length_scale(), &LengthScale::Isotropic(2.0));
        assert_eq!(k.length_scale(), &LengthScale::Isotropic(1.0));
        assert!(k.set_length_scale(&[0.0]).is_err());
        assert!(k.set_length_scale(&[1.0, -1.0]).is_err());

        let m = KernelSpec::new(KernelFamily::Matern52, 1.0)
            .unwrap()
            .set_length_scale(&[1.0, 1.0])
            .unwrap();
        let m2 = m.set_length_scale(&[0.5, 3.0]).unwrap();
        assert_eq!(m2.length_scale(), &LengthScale::Anisotropic(vec![0.5, 3.0]));
        assert_eq!(m2.family(), KernelFamily::Matern52);
    }

    #[test]
    fn anisotropic_reduces_to_isotropic() {
        let iso = KernelSpec::squared_exponential(0.4).unwrap();
        let ani = iso.set_length_scale(&[0.4, 0.4]).unwrap();
        let a = [0.1, 0.9];
        let b = [0.5, 0.2];
        assert!((iso.eval(&a, &b).unwrap() - ani.eval(&a, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn parameter_validation() {
        let k = KernelSpec::new(KernelFamily::GammaExponential, 1.0).unwrap();
        assert!(k.clone().with_gamma(0.0).is_err());
        assert!(k.clone().with_gamma(2.5).is_err());
        assert!(k.clone().with_gamma(2.0).is_ok());
        assert!(k.clone().with_alpha(-1.0).is_err());
        assert!(k.with_dim(0).is_err());
        assert!(KernelSpec::squared_exponential(-0.1).is_err());
    }

    #[test]
    fn eval_rejects_bad_points() {
        let k = KernelSpec::squared_exponential(1.0).unwrap();
        assert!(k.eval(&[0.0, 1.0], &[0.0]).is_err());
        assert!(k.eval(&[f64::NAN], &[0.0]).is_err());
        let ani = k.set_length_scale(&[1.0, 2.0]).unwrap();
        assert!(ani.eval(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn family_names_roundtrip() {
        for f in KernelFamily::ALL {
            assert_eq!(f.name().parse::<KernelFamily>().unwrap(), f);
        }
        assert!("bessel".parse::<KernelFamily>().is_err());
    }

    #[test]
    fn normalized_at_zero() {
        for k in all_specs() {
            assert_eq!(k.eval(&[0.2, 0.4, 0.6], &[0.2, 0.4, 0.6]).unwrap(), 1.0, "{:?}", k.family());
        }
    }

    proptest! {
        #[test]
        fn symmetric(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3)) {
            for k in all_specs() {
                prop_assert_eq!(k.eval(&a, &b).unwrap(), k.eval(&b, &a).unwrap());
            }
        }

        #[test]
        fn bounded_in_unit_interval(r in 0.0f64..50.0) {
            for k in all_specs() {
                let v = k.radial(r);
                prop_assert!((0.0..=1.0).contains(&v), "{:?} r={} v={}", k.family(), r, v);
            }
        }

        #[test]
        fn monotone_in_radius(mut radii in prop::collection::vec(0.0f64..10.0, 2..20)) {
            radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for k in all_specs() {
                for w in radii.windows(2) {
                    prop_assert!(k.radial(w[1]) <= k.radial(w[0]) + 1e-15);
                }
            }
        }
    }
}
