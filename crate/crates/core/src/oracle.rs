//! Spectral reference solver for the evolution variational inequality on
//! the interval, independent of the extension machinery.
//!
//! Backward Euler in time, the fractional operator `h D Λ^s Dᵀ` on a uniform
//! physical grid (`D` the sine synthesis matrix), and the constraint
//! `u ≥ ψ` imposed at the grid points. Each step is a dense linear
//! complementarity problem solved by projected SOR.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, FracError, Result};
use crate::fracparams::{hs_norm, FracParams, SpectralField};
use crate::timestepper::{time_average_f, ForcingMode, ProblemData, SpectralTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub n_modes: usize,
    /// Number of grid cells; the unknowns live at the `n_phys - 1` interior points.
    pub n_phys: usize,
    /// Reference step; `None` means `T / 4096`.
    pub tau_ref: Option<f64>,
    pub psor_tol: f64,
    pub psor_max_iter: usize,
    pub omega: f64,
    pub mode: ForcingMode,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_modes: 256,
            n_phys: 1024,
            tau_ref: None,
            psor_tol: 1e-12,
            psor_max_iter: 10_000,
            omega: 1.0,
            mode: ForcingMode::Averaged,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 || self.n_phys < 2 * self.n_modes {
            return Err(FracError::Config(format!(
                "need 1 ≤ n_modes and n_phys ≥ 2 n_modes, got n_modes = {}, n_phys = {}",
                self.n_modes, self.n_phys
            )));
        }
        if !(self.psor_tol > 0.0) || !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(FracError::Config("psor_tol must be positive and omega in (0, 2)".into()));
        }
        if self.tau_ref.is_some_and(|t| !(t > 0.0)) {
            return Err(FracError::Config("tau_ref must be positive".into()));
        }
        Ok(())
    }
}

/// Sine synthesis matrix `D_{jl} = φ_l(x_j)` on the interior grid points.
fn synthesis(n_modes: usize, n_phys: usize, length: f64) -> DMatrix<f64> {
    let scale = (2.0 / length).sqrt();
    DMatrix::from_fn(n_phys - 1, n_modes, |j, l| {
        scale * ((l + 1) as f64 * (j + 1) as f64 * std::f64::consts::PI / n_phys as f64).sin()
    })
}

/// `h D Λ^s Dᵀ` on the `n_phys - 1` interior points of a uniform grid.
pub fn fractional_stiffness(n_modes: usize, n_phys: usize, s: f64, length: f64) -> Result<DMatrix<f64>> {
    if n_modes == 0 || n_modes > n_phys.saturating_sub(1) {
        return Err(FracError::Config(format!(
            "mode count {n_modes} must lie in [1, {}]",
            n_phys.saturating_sub(1)
        )));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(FracError::Domain(format!("order must lie in [0, 1], got {s}")));
    }
    let d = synthesis(n_modes, n_phys, length);
    let h = length / n_phys as f64;
    let k0 = std::f64::consts::PI / length;
    let mut scaled = d.clone();
    for (l, mut col) in scaled.column_iter_mut().enumerate() {
        col *= h * ((l + 1) as f64 * k0).powf(2.0 * s);
    }
    let f = &scaled * d.transpose();
    Ok(0.5 * (&f + f.transpose()))
}

/// Sine coefficients `h Dᵀ u` of grid values `u`.
fn analysis(d: &DMatrix<f64>, u: &[f64], h: f64, length: f64) -> SpectralField {
    let coeffs = d.tr_mul(&nalgebra::DVector::from_column_slice(u)) * h;
    SpectralField {
        coeffs: coeffs.as_slice().to_vec(),
        domain_length: length,
    }
}

/// Projected Gauss–Seidel/SOR on a dense symmetric matrix. Returns the sweep count.
fn psor_dense(
    s: &DMatrix<f64>,
    rhs: &[f64],
    lb: &[f64],
    u: &mut [f64],
    omega: f64,
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = rhs.len();
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        change = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n {
            // column i equals row i
            let col = s.column(i);
            let dot: f64 = col.as_slice().iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            let v = (u[i] + omega * (rhs[i] - dot) / s[(i, i)]).max(lb[i]);
            change = change.max((v - u[i]).abs());
            scale = scale.max(v.abs());
            u[i] = v;
        }
        if change <= tol * scale.max(1.0) {
            return Ok(it);
        }
    }
    Err(FracError::NotConverged {
        solver: "projected SOR",
        iterations: max_iter,
        residual: change,
    })
}

/// Output of [`spectral_vi_solve`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSolution {
    pub trajectory: SpectralTrajectory,
    /// Grid points `x_1..x_{N-1}`.
    pub grid: Vec<f64>,
    /// Grid values at the final time.
    pub final_values: Vec<f64>,
    /// Complementarity residual of `(I + τF) u - (u_prev + τ f) ⊥ u - ψ` per step.
    pub residuals: Vec<f64>,
    pub sweeps: Vec<usize>,
    /// `½ ‖u^k‖²_{H^s}` of the band-limited part, `k = 0..K`.
    pub energies: Vec<f64>,
    pub min_gap: f64,
}

pub fn spectral_vi_solve(problem: &ProblemData, config: &OracleConfig) -> Result<OracleSolution> {
    problem.validate()?;
    config.validate()?;
    FracParams::new(problem.s)?;
    let length = problem.length;
    let n = config.n_phys;
    let h = length / n as f64;
    let grid: Vec<f64> = (1..n).map(|j| j as f64 * h).collect();
    let steps = match config.tau_ref {
        Some(t) => (problem.t_final / t).round().max(1.0) as usize,
        None => 4096,
    };
    let tau = problem.t_final / steps as f64;

    let psi: Vec<f64> = grid.iter().map(|&x| (problem.psi)(x)).collect();
    let mut u: Vec<f64> = grid.iter().map(|&x| (problem.u0)(x)).collect();
    if let Some(j) = (0..u.len()).find(|&j| u[j] < psi[j] - 1e-12) {
        return Err(FracError::Infeasible(format!("initial datum below the obstacle at x = {}", grid[j])));
    }

    let d = synthesis(config.n_modes, n, length);
    let mut sys = fractional_stiffness(config.n_modes, n, problem.s, length)? * tau;
    for i in 0..sys.nrows() {
        sys[(i, i)] += 1.0;
    }
    let energy = |f: &SpectralField| 0.5 * hs_norm(f, problem.s).powi(2);

    let first = analysis(&d, &u, h, length);
    let mut energies = vec![energy(&first)];
    let mut times = vec![0.0];
    let mut fields = vec![first];
    let mut residuals = Vec::with_capacity(steps);
    let mut sweeps = Vec::with_capacity(steps);
    let mut min_gap = u.iter().zip(&psi).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);

    for k in 0..steps {
        let index = match config.mode {
            ForcingMode::Averaged => k,
            ForcingMode::RightLimit => k + 1,
        };
        let f = time_average_f(problem.forcing.as_ref(), &grid, index, tau, config.mode)?;
        let rhs: Vec<f64> = u.iter().zip(&f).map(|(a, b)| a + tau * b).collect();
        let it = psor_dense(&sys, &rhs, &psi, &mut u, config.omega, config.psor_tol, config.psor_max_iter)
            .map_err(|e| FracError::Step {
                step: k + 1,
                source: Box::new(e),
            })?;
        residuals.push(lcp_residual(&sys, &rhs, &psi, &u)?);
        sweeps.push(it);
        min_gap = u.iter().zip(&psi).map(|(a, b)| a - b).fold(min_gap, f64::min);
        let field = analysis(&d, &u, h, length);
        energies.push(energy(&field));
        fields.push(field);
        times.push(if k + 1 == steps { problem.t_final } else { (k + 1) as f64 * tau });
    }

    Ok(OracleSolution {
        trajectory: SpectralTrajectory::new(times, fields)?,
        grid,
        final_values: u,
        residuals,
        sweeps,
        energies,
        min_gap,
    })
}

/// `max_i max(|min(λ_i, g_i)|, (-λ_i)⁺, (-g_i)⁺)` with `λ = S u - rhs`, `g = u - lb`.
pub fn lcp_residual(s: &DMatrix<f64>, rhs: &[f64], lb: &[f64], u: &[f64]) -> Result<f64> {
    check_len("LCP right-hand side", s.nrows(), rhs.len())?;
    check_len("LCP iterate", s.nrows(), u.len())?;
    let su = s * nalgebra::DVector::from_column_slice(u);
    Ok((0..u.len())
        .map(|i| {
            let lam = su[i] - rhs[i];
            let g = u[i] - lb[i];
            lam.min(g).abs().max((-lam).max(0.0)).max((-g).max(0.0))
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracparams::linear_exact_solution;
    use std::f64::consts::PI;

    fn samples(l: usize, n: usize) -> Vec<f64> {
        (1..n).map(|j| 2f64.sqrt() * (l as f64 * PI * j as f64 / n as f64).sin()).collect()
    }

    #[test]
    fn eigen_relations() {
        let n = 64;
        for (s, l, lam) in [(1.0, 1, PI * PI), (0.5, 2, 2.0 * PI), (0.0, 5, 1.0)] {
            let f = fractional_stiffness(16, n, s, 1.0).unwrap();
            let v = samples(l, n);
            let fv = &f * nalgebra::DVector::from_column_slice(&v);
            for (a, b) in fv.iter().zip(&v) {
                assert!((a - lam * b).abs() < 1e-10 * lam.max(1.0));
            }
        }
        assert!(fractional_stiffness(64, 64, 0.5, 1.0).is_err());
    }

    #[test]
    fn inactive_obstacle_follows_linear_decay() {
        let s = 0.5;
        let prob = ProblemData::new(|_| -1e6, |x: f64| 2f64.sqrt() * (PI * x).sin(), 0.25, s);
        let u0 = SpectralField::unit(1, 1, 1.0);
        let exact = linear_exact_solution(&u0, None, s, 0.25).unwrap().coeffs[0];
        let mut errs = Vec::new();
        for steps in [64.0, 128.0] {
            let cfg = OracleConfig {
                n_modes: 8,
                n_phys: 32,
                tau_ref: Some(0.25 / steps),
                ..Default::default()
            };
            let sol = spectral_vi_solve(&prob, &cfg).unwrap();
            let c = sol.trajectory.fields.last().unwrap().coeffs[0];
            // backward Euler decay factor of the first mode
            let be = (1.0 + PI * 0.25 / steps).powf(-steps);
            assert!((c - be).abs() < 1e-10);
            errs.push((c - exact).abs());
        }
        assert!(errs[1] < 0.55 * errs[0]);
    }

    #[test]
    fn symmetric_data_stays_symmetric_and_energy_decays() {
        let psi = |x: f64| 0.3 - (x - 0.5).abs();
        let prob = ProblemData::new(psi, move |x: f64| psi(x).max(0.1 * (PI * x).sin()), 0.1, 0.5);
        let cfg = OracleConfig {
            n_modes: 32,
            n_phys: 64,
            tau_ref: Some(0.1 / 64.0),
            ..Default::default()
        };
        let sol = spectral_vi_solve(&prob, &cfg).unwrap();
        let u = &sol.final_values;
        let n = u.len();
        for j in 0..n {
            assert!((u[j] - u[n - 1 - j]).abs() < 1e-10);
        }
        assert!(sol.residuals.iter().all(|r| *r <= 1e-9));
        assert!(sol.min_gap >= -1e-14);
        assert!(sol.energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn resolutions_agree_more_closely_when_refined() {
        let psi = |x: f64| 0.3 - (x - 0.5).abs();
        let prob = ProblemData::new(psi, move |x: f64| psi(x).max(0.1 * (PI * x).sin()), 0.05, 0.5);
        let solve = |n_modes: usize| {
            let cfg = OracleConfig {
                n_modes,
                n_phys: 4 * n_modes,
                tau_ref: Some(0.05 / 32.0),
                ..Default::default()
            };
            spectral_vi_solve(&prob, &cfg).unwrap().trajectory.fields.last().unwrap().clone()
        };
        let fine = solve(128);
        let diffs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| solve(n).resized(128).sub(&fine).l2_norm())
            .collect();
        assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
    }

    #[test]
    fn config_validation() {
        assert!(OracleConfig {
            n_modes: 10,
            n_phys: 19,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OracleConfig::default().validate().is_ok());
    }
}
