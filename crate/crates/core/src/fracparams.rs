//! Fractional-order parameters, the sine eigenbasis of the Dirichlet Laplacian
//! on an interval, spectral norms and closed-form unconstrained solutions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FracError, Result};
use crate::quadrature::{integrate_adaptive, AdaptiveTol};

/// Euler Gamma function for `x > 0`.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(FracError::Domain(format!("gamma_fn needs x > 0, got {x}")));
    }
    Ok(statrs::function::gamma::gamma(x))
}

/// Parameters derived from the fractional order `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracParams {
    pub s: f64,
    /// Weight exponent `1 - 2s`.
    pub alpha: f64,
    /// Normalization `2^alpha Γ(1-s) / Γ(s)` of the Neumann data.
    pub d_s: f64,
    /// Smallest admissible grading exponent, `3 / (2s)` (strict bound).
    pub gamma_min: f64,
}

impl FracParams {
    pub fn new(s: f64) -> Result<Self> {
        make_params(s)
    }
}

pub fn make_params(s: f64) -> Result<FracParams> {
    if !(s > 0.0 && s < 1.0) {
        return Err(FracError::Domain(format!("fractional order must lie in (0,1), got {s}")));
    }
    let alpha = 1.0 - 2.0 * s;
    let d_s = 2f64.powf(alpha) * gamma_fn(1.0 - s)? / gamma_fn(s)?;
    Ok(FracParams {
        s,
        alpha,
        d_s,
        gamma_min: 3.0 / (2.0 * s),
    })
}

/// Dirichlet Laplacian eigenfunction `sqrt(2/L) sin(lπx/L)` on `(0, L)`.
#[derive(Debug, Clone, Copy)]
pub struct Eigenmode {
    pub index: usize,
    pub length: f64,
}

impl Eigenmode {
    pub fn wavenumber(&self) -> f64 {
        self.index as f64 * PI / self.length
    }

    pub fn eval(&self, x: f64) -> f64 {
        (2.0 / self.length).sqrt() * (self.wavenumber() * x).sin()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (2.0 / self.length).sqrt() * self.wavenumber() * (self.wavenumber() * x).cos()
    }
}

/// Eigenpair `(λ_l, φ_l)` of `-d²/dx²` with Dirichlet conditions on `(0, length)`.
pub fn eigenpair(l: usize, length: f64) -> Result<(f64, Eigenmode)> {
    if l == 0 || !(length > 0.0) {
        return Err(FracError::Domain(format!(
            "eigenpair needs l >= 1 and length > 0, got l={l}, length={length}"
        )));
    }
    let mode = Eigenmode { index: l, length };
    Ok((mode.wavenumber().powi(2), mode))
}

/// Coefficients against the orthonormal sine basis; `coeffs[l-1]` multiplies `φ_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    pub coeffs: Vec<f64>,
    pub domain_length: f64,
}

impl SpectralField {
    pub fn zeros(n_modes: usize, domain_length: f64) -> Self {
        Self {
            coeffs: vec![0.0; n_modes],
            domain_length,
        }
    }

    pub fn unit(l: usize, n_modes: usize, domain_length: f64) -> Self {
        let mut f = Self::zeros(n_modes, domain_length);
        f.coeffs[l - 1] = 1.0;
        f
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eigenvalue(&self, l: usize) -> f64 {
        (l as f64 * PI / self.domain_length).powi(2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k0 = PI / self.domain_length;
        let scale = (2.0 / self.domain_length).sqrt();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * ((i + 1) as f64 * k0 * x).sin())
            .sum::<f64>()
            * scale
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Zero-padded or truncated copy with `n_modes` coefficients.
    pub fn resized(&self, n_modes: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(n_modes, 0.0);
        Self {
            coeffs,
            domain_length: self.domain_length,
        }
    }

    /// `self - other`, zero-padding the shorter field.
    pub fn sub(&self, other: &Self) -> Self {
        let n = self.n_modes().max(other.n_modes());
        let coeffs = (0..n)
            .map(|i| self.coeffs.get(i).copied().unwrap_or(0.0) - other.coeffs.get(i).copied().unwrap_or(0.0))
            .collect();
        Self {
            coeffs,
            domain_length: self.domain_length,
        }
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (c, xc) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *c += a * xc;
        }
    }
}

/// `(Σ λ_l^s w_l²)^{1/2}`; negative `s` gives the dual norm.
pub fn hs_norm(field: &SpectralField, s: f64) -> f64 {
    field
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, w)| field.eigenvalue(i + 1).powf(s) * w * w)
        .sum::<f64>()
        .sqrt()
}

/// Discrete sine transform of nodal samples on a uniform grid of `(0, length)`
/// (endpoints included). Exact for fields in the span of the first
/// `samples.len() - 2` modes.
pub fn project_to_spectral(samples: &[f64], n_modes: usize, length: f64) -> Result<SpectralField> {
    if samples.len() < 3 {
        return Err(FracError::DimensionMismatch {
            what: "spectral projection samples",
            expected: 3,
            got: samples.len(),
        });
    }
    let n = samples.len() - 1;
    if n_modes > n - 1 {
        return Err(FracError::DimensionMismatch {
            what: "mode count (at most the number of interior nodes)",
            expected: n - 1,
            got: n_modes,
        });
    }
    let scale = samples.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if samples[0].abs() > 1e-12 * scale || samples[n].abs() > 1e-12 * scale {
        return Err(FracError::Domain("samples must vanish at both endpoints".into()));
    }
    let h = length / n as f64;
    let norm = (2.0 / length).sqrt() * h;
    let coeffs = (1..=n_modes)
        .map(|l| {
            let k = l as f64 * PI / n as f64;
            norm * (1..n).map(|j| samples[j] * (k * j as f64).sin()).sum::<f64>()
        })
        .collect();
    Ok(SpectralField {
        coeffs,
        domain_length: length,
    })
}

/// Exact `L²` projection onto the first `n_modes` sine modes of the continuous
/// piecewise linear function with the given interior nodal values on a
/// uniform grid of `(0, length)` (zero at both endpoints).
pub fn project_fe_trace(interior: &[f64], n_modes: usize, length: f64) -> SpectralField {
    let n = interior.len() + 1;
    let h = length / n as f64;
    let scale = (2.0 / length).sqrt();
    let coeffs = (1..=n_modes)
        .map(|l| {
            let k = l as f64 * PI / length;
            let kh = k * h;
            // ∫ hat_i sin(kx) = sin(k x_i) · 2(1 - cos kh) / (k² h)
            let factor = 4.0 * (0.5 * kh).sin().powi(2) / (k * kh);
            let sum: f64 = interior
                .iter()
                .enumerate()
                .map(|(i, u)| u * (k * (i + 1) as f64 * h).sin())
                .sum();
            scale * factor * sum
        })
        .collect();
    SpectralField {
        coeffs,
        domain_length: length,
    }
}

/// Mode-wise solution of the unconstrained evolution
/// `u_l(t) = e^{-λ_l^s t} u0_l + ∫_0^t e^{-λ_l^s (t-r)} f_l(r) dr`.
///
/// `forcing(l, r)` returns the coefficient of mode `l` (1-based) at time `r`.
pub fn linear_exact_solution(
    u0: &SpectralField,
    forcing: Option<&dyn Fn(usize, f64) -> f64>,
    s: f64,
    t: f64,
) -> Result<SpectralField> {
    if t < 0.0 {
        return Err(FracError::Domain(format!("time must be nonnegative, got {t}")));
    }
    let tol = AdaptiveTol {
        abs: 1e-14,
        rel: 1e-10,
        max_intervals: 4000,
    };
    let mut out = u0.clone();
    for (i, c) in out.coeffs.iter_mut().enumerate() {
        let l = i + 1;
        let rate = u0.eigenvalue(l).powf(s);
        let mut v = (-rate * t).exp() * *c;
        if let Some(f) = forcing {
            if t > 0.0 {
                v += integrate_adaptive(|r| (-rate * (t - r)).exp() * f(l, r), 0.0, t, tol)?;
            }
        }
        *c = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Arbitrary precision reference values (40 digits, truncated).
    const GAMMA_QUARTER: f64 = 3.625_609_908_221_908;
    const GAMMA_TABLE: [(f64, f64); 6] = [
        (0.05, 19.470_085_311_255_51),
        (0.1, 9.513_507_698_668_732),
        (0.75, 1.225_416_702_465_177_6),
        (1.5, 0.886_226_925_452_758),
        (7.3, 1_271.423_633_663_909_3),
        (29.5, 1.634_812_519_827_426_6e30),
    ];

    #[test]
    fn gamma_known_values() {
        assert_relative_eq!(gamma_fn(1.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(gamma_fn(0.5).unwrap(), PI.sqrt(), max_relative = 1e-13);
        assert_relative_eq!(gamma_fn(0.25).unwrap(), GAMMA_QUARTER, max_relative = 1e-12);
        for (x, g) in GAMMA_TABLE {
            assert_relative_eq!(gamma_fn(x).unwrap(), g, max_relative = 1e-12);
        }
    }

    #[test]
    fn gamma_rejects_nonpositive() {
        assert!(gamma_fn(0.0).is_err());
        assert!(gamma_fn(-0.5).is_err());
        assert!(gamma_fn(f64::NAN).is_err());
    }

    #[test]
    fn params_examples() {
        let p = make_params(0.5).unwrap();
        assert_eq!(p.alpha, 0.0);
        assert_relative_eq!(p.d_s, 1.0, epsilon = 1e-14);
        assert_eq!(p.gamma_min, 3.0);

        let p = make_params(0.75).unwrap();
        assert_eq!(p.alpha, -0.5);
        assert_eq!(p.gamma_min, 2.0);

        let p = make_params(0.25).unwrap();
        assert_relative_eq!(p.d_s, 0.477_988_797_486_125, max_relative = 1e-12);

        for bad in [0.0, 1.0, -0.1, 1.5] {
            assert!(make_params(bad).is_err());
        }
    }

    #[test]
    fn eigenpair_examples() {
        let (l1, _) = eigenpair(1, 1.0).unwrap();
        assert_relative_eq!(l1, PI * PI);
        let (l2, _) = eigenpair(2, 1.0).unwrap();
        assert_relative_eq!(l2, 4.0 * PI * PI);
        let (l3, mode) = eigenpair(1, 2.0).unwrap();
        assert_relative_eq!(l3, PI * PI / 4.0);
        let norm = integrate_adaptive(|x| mode.eval(x).powi(2), 0.0, 2.0, AdaptiveTol::default()).unwrap();
        assert_relative_eq!(norm, 1.0, max_relative = 1e-10);
        assert!(eigenpair(0, 1.0).is_err());
    }

    #[test]
    fn hs_norm_examples() {
        let e1 = SpectralField::unit(1, 4, 1.0);
        assert_relative_eq!(hs_norm(&e1, 0.5), PI.sqrt(), max_relative = 1e-14);
        let f = SpectralField {
            coeffs: vec![1.0, 1.0],
            domain_length: 1.0,
        };
        assert_relative_eq!(hs_norm(&f, 1.0), PI * 5f64.sqrt(), max_relative = 1e-14);
        let g = SpectralField {
            coeffs: vec![0.3, -1.2, 0.7],
            domain_length: 1.0,
        };
        assert_relative_eq!(hs_norm(&g, 0.0), g.l2_norm(), max_relative = 1e-15);
    }

    #[test]
    fn projection_examples() {
        let n = 63;
        let (_, m1) = eigenpair(1, 1.0).unwrap();
        let (_, m3) = eigenpair(3, 1.0).unwrap();
        let xs: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let mut samples: Vec<f64> = xs.iter().map(|&x| m1.eval(x)).collect();
        samples[0] = 0.0;
        samples[n] = 0.0;
        let p = project_to_spectral(&samples, 10, 1.0).unwrap();
        assert_relative_eq!(p.coeffs[0], 1.0, epsilon = 1e-10);
        assert!(p.coeffs[1..].iter().all(|c| c.abs() < 1e-10));

        let zero = project_to_spectral(&vec![0.0; n + 1], 10, 1.0).unwrap();
        assert!(zero.coeffs.iter().all(|&c| c == 0.0));

        let mut mixed: Vec<f64> = xs.iter().map(|&x| m1.eval(x) + 0.5 * m3.eval(x)).collect();
        mixed[n] = 0.0;
        let p = project_to_spectral(&mixed, 5, 1.0).unwrap();
        for (c, e) in p.coeffs.iter().zip([1.0, 0.0, 0.5, 0.0, 0.0]) {
            assert!((c - e).abs() < 1e-10);
        }

        assert!(project_to_spectral(&samples, 63, 1.0).is_err());
    }

    #[test]
    fn fe_trace_projection_matches_quadrature() {
        let interior = [0.3, -0.1, 0.7, 0.2, 0.5];
        let n = interior.len() + 1;
        let h = 1.0 / n as f64;
        let fe = |x: f64| {
            let j = ((x / h).floor() as usize).min(n - 1);
            let left = if j == 0 { 0.0 } else { interior[j - 1] };
            let right = if j + 1 == n { 0.0 } else { interior[j] };
            let t = x / h - j as f64;
            left * (1.0 - t) + right * t
        };
        let p = project_fe_trace(&interior, 8, 1.0);
        for l in 1..=8 {
            let (_, m) = eigenpair(l, 1.0).unwrap();
            let mut exact = 0.0;
            for j in 0..n {
                exact += integrate_adaptive(|x| fe(x) * m.eval(x), j as f64 * h, (j + 1) as f64 * h, AdaptiveTol::default())
                    .unwrap();
            }
            assert_relative_eq!(p.coeffs[l - 1], exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_solution_examples() {
        let e1 = SpectralField::unit(1, 3, 1.0);
        for t in [0.0, 0.1, 0.5] {
            let u = linear_exact_solution(&e1, None, 0.5, t).unwrap();
            assert_relative_eq!(u.coeffs[0], (-PI * t).exp(), max_relative = 1e-14);
        }
        let z = linear_exact_solution(&SpectralField::zeros(3, 1.0), None, 0.5, 0.3).unwrap();
        assert!(z.coeffs.iter().all(|&c| c == 0.0));

        let f = |l: usize, _r: f64| if l == 1 { 1.0 } else { 0.0 };
        let t = 0.7;
        let u = linear_exact_solution(&e1, Some(&f), 0.5, t).unwrap();
        let expect = (-PI * t).exp() + (1.0 - (-PI * t).exp()) / PI;
        assert_relative_eq!(u.coeffs[0], expect, max_relative = 1e-10);
        assert_eq!(u.coeffs[1], 0.0);
    }
}
