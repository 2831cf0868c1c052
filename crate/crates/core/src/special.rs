//! Modified Bessel function of the second kind and the α-harmonic profile
//! built from it.

use crate::error::{FracError, Result};
use crate::fracparams::gamma_fn;

/// `e^z K_nu(z)` for `z > 0` from `K_nu(z) = ∫_0^∞ exp(-z cosh t) cosh(nu t) dt`.
///
/// The integrand is analytic in the strip `|Im t| < π/2`, so the trapezoidal
/// rule converges geometrically with ratio `exp(-π²/h)`.
pub fn bessel_k_scaled(nu: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(FracError::Domain(format!("bessel_k needs z > 0, got {z}")));
    }
    let h = 0.1;
    let mut sum = 0.5; // t = 0 term, halved
    let mut k = 1usize;
    loop {
        let t = k as f64 * h;
        // exp(-z (cosh t - 1)) cosh(nu t), written to avoid overflow in cosh
        let expo = -z * 2.0 * (0.5 * t).sinh().powi(2);
        let term = (expo + nu.abs() * t).exp() * 0.5 * (1.0 + (-2.0 * nu.abs() * t).exp());
        sum += term;
        if term < 1e-18 * sum && expo < -40.0 {
            break;
        }
        k += 1;
        if k > 100_000 {
            return Err(FracError::NotConverged {
                solver: "bessel_k",
                iterations: k,
                residual: term,
            });
        }
    }
    Ok(h * sum)
}

/// `K_nu(z)`.
pub fn bessel_k(nu: f64, z: f64) -> Result<f64> {
    Ok(bessel_k_scaled(nu, z)? * (-z).exp())
}

/// Profile of the α-harmonic extension of a single Laplace eigenmode on the
/// semi-infinite cylinder: `ζ(y) = 2^{1-s}/Γ(s) (ωy)^s K_s(ωy)`, normalized
/// so that `ζ(0) = 1`, where `ω = sqrt(λ)`. Returns `(ζ(y), ζ'(y))`.
#[derive(Debug, Clone, Copy)]
pub struct ExtensionProfile {
    s: f64,
    omega: f64,
    norm: f64,
}

impl ExtensionProfile {
    pub fn new(s: f64, omega: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) || !(omega > 0.0) {
            return Err(FracError::Domain(format!(
                "extension profile needs s in (0,1) and omega > 0, got s={s}, omega={omega}"
            )));
        }
        Ok(Self {
            s,
            omega,
            norm: 2f64.powf(1.0 - s) / gamma_fn(s)?,
        })
    }

    pub fn value(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        let z = self.omega * y;
        let k = bessel_k(self.s, z).expect("z > 0");
        self.norm * z.powf(self.s) * k
    }

    pub fn derivative(&self, y: f64) -> f64 {
        let s = self.s;
        if y <= 0.0 {
            return match s.partial_cmp(&0.5) {
                Some(std::cmp::Ordering::Greater) => 0.0,
                Some(std::cmp::Ordering::Equal) => -self.omega,
                _ => f64::NEG_INFINITY,
            };
        }
        let z = self.omega * y;
        let k = bessel_k(1.0 - s, z).expect("z > 0");
        -self.norm * self.omega * z.powf(s) * k
    }
}
