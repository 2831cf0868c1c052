//! Bound-constrained symmetric positive definite quadratic problems
//!
//! `min ½ vᵀSv - rhsᵀv` subject to `v_i ≥ lb_i` for `i` in the constrained set,
//! solved by a primal-dual active set method, projected SOR or exhaustive
//! enumeration of active sets.

use std::collections::HashSet;

use crate::error::{check_len, FracError, Result};
use crate::sparse::{BandedCholesky, SparseSym};

/// Lower bound marking an unconstrained entry for [`psor_solve`].
pub const NO_BOUND: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone)]
pub struct StepSystem {
    pub matrix: SparseSym,
    pub rhs: Vec<f64>,
    /// Bound for each entry of `constrained`, in the same order.
    pub lower_bound: Vec<f64>,
    /// Strictly increasing unknown indices carrying a bound.
    pub constrained: Vec<usize>,
}

impl StepSystem {
    pub fn new(matrix: SparseSym, rhs: Vec<f64>, lower_bound: Vec<f64>, constrained: Vec<usize>) -> Result<Self> {
        check_len("right-hand side", matrix.dim(), rhs.len())?;
        check_len("lower bounds", constrained.len(), lower_bound.len())?;
        if constrained.windows(2).any(|w| w[0] >= w[1]) || constrained.last().is_some_and(|&c| c >= rhs.len()) {
            return Err(FracError::Domain("constrained indices must be increasing and in range".into()));
        }
        if lower_bound.iter().any(|b| b.is_nan() || *b == f64::INFINITY) {
            return Err(FracError::Domain("lower bounds must be finite or -inf".into()));
        }
        Ok(Self {
            matrix,
            rhs,
            lower_bound,
            constrained,
        })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn bound_map(&self) -> Vec<Option<f64>> {
        let mut b = vec![None; self.dim()];
        for (&c, &l) in self.constrained.iter().zip(&self.lower_bound) {
            b[c] = Some(l);
        }
        b
    }

    pub fn energy(&self, v: &[f64]) -> f64 {
        0.5 * self.matrix.quad_form(v) - self.rhs.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VISolution {
    pub v: Vec<f64>,
    /// Unknown indices held at their bound.
    pub active_set: Vec<usize>,
    /// `(S v - rhs)_i` for each constrained index, in constrained order.
    pub multiplier: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl VISolution {
    /// Wraps an iterate, recomputing the multiplier and reading the active
    /// set off the entries that sit exactly at their bound.
    pub fn from_iterate(sys: &StepSystem, v: Vec<f64>, iterations: usize, converged: bool) -> Self {
        let sv = sys.matrix.matvec(&v);
        let multiplier = sys.constrained.iter().map(|&c| sv[c] - sys.rhs[c]).collect();
        let active_set = sys
            .constrained
            .iter()
            .zip(&sys.lower_bound)
            .filter(|&(&c, &l)| v[c] == l)
            .map(|(&c, _)| c)
            .collect();
        Self {
            v,
            active_set,
            multiplier,
            iterations,
            converged,
        }
    }
}

/// `S = A + (1/τ) E M Eᵀ`, `rhs = E M (tr prev / τ + f)`, bounds on the
/// trace unknowns. The trace unknowns are the first `M.dim()` entries.
pub fn build_step_system(
    a: &SparseSym,
    m_tr: &SparseSym,
    tau: f64,
    prev_trace: &[f64],
    f_vec: &[f64],
    obstacle: &[f64],
) -> Result<StepSystem> {
    if !(tau > 0.0) {
        return Err(FracError::Domain(format!("time step must be positive, got {tau}")));
    }
    let nt = m_tr.dim();
    check_len("previous trace", nt, prev_trace.len())?;
    check_len("trace load", nt, f_vec.len())?;
    check_len("obstacle", nt, obstacle.len())?;
    if a.dim() < nt {
        return Err(FracError::DimensionMismatch {
            what: "stiffness dimension (at least the trace size)",
            expected: nt,
            got: a.dim(),
        });
    }
    let t: Vec<_> = a
        .triplets()
        .chain(m_tr.triplets().map(|(i, j, v)| (i, j, v / tau)))
        .collect();
    let matrix = SparseSym::from_triplets(a.dim(), &t)?;
    let load: Vec<f64> = prev_trace.iter().zip(f_vec).map(|(p, f)| p / tau + f).collect();
    let mut rhs = m_tr.matvec(&load);
    rhs.resize(a.dim(), 0.0);
    StepSystem::new(matrix, rhs, obstacle.to_vec(), (0..nt).collect())
}

/// Solves `S_II v_I = rhs_I - S_IA v_A` with `v_A` fixed.
fn solve_with_fixed(sys: &StepSystem, fixed: &[Option<f64>]) -> Result<Vec<f64>> {
    let n = sys.dim();
    let mut pos = vec![usize::MAX; n];
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    for (k, &i) in free.iter().enumerate() {
        pos[i] = k;
    }
    let mut v: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    if free.is_empty() {
        return Ok(v);
    }
    let mut t = Vec::new();
    let mut b = vec![0.0; free.len()];
    for (k, &i) in free.iter().enumerate() {
        b[k] = sys.rhs[i];
        for (j, s) in sys.matrix.row(i) {
            match fixed[j] {
                Some(val) => b[k] -= s * val,
                None => t.push((k, pos[j], s)),
            }
        }
    }
    let sub = SparseSym::from_triplets(free.len(), &t)?;
    let chol = BandedCholesky::factor(&sub)?;
    chol.solve_in_place(&mut b);
    for (k, &i) in free.iter().enumerate() {
        v[i] = b[k];
    }
    Ok(v)
}

fn fixed_from_active(sys: &StepSystem, active: &[bool]) -> Vec<Option<f64>> {
    let mut fixed = vec![None; sys.dim()];
    for (k, (&c, &l)) in sys.constrained.iter().zip(&sys.lower_bound).enumerate() {
        if active[k] {
            fixed[c] = Some(l);
        }
    }
    fixed
}

/// Primal-dual active set method from an empty initial active set.
pub fn pdas_solve(sys: &StepSystem, tol: f64) -> Result<VISolution> {
    pdas_solve_warm(sys, tol, &[])
}

/// Primal-dual active set method started from `initial_active` (unknown
/// indices). Falls back to a primal active set method if the iteration
/// revisits an active set, which can happen when `S` is not an M-matrix.
pub fn pdas_solve_warm(sys: &StepSystem, tol: f64, initial_active: &[usize]) -> Result<VISolution> {
    let nc = sys.constrained.len();
    let diag = sys.matrix.diagonal();
    let mut active = vec![false; nc];
    for &i in initial_active {
        if let Ok(k) = sys.constrained.binary_search(&i) {
            if sys.lower_bound[k] > NO_BOUND {
                active[k] = true;
            }
        }
    }
    let max_iter = 2 * nc + 50;
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    for it in 1..=max_iter {
        seen.insert(active.clone());
        let v = solve_with_fixed(sys, &fixed_from_active(sys, &active))?;
        let sv = sys.matrix.matvec(&v);
        let next: Vec<bool> = (0..nc)
            .map(|k| {
                let c = sys.constrained[k];
                let lb = sys.lower_bound[k];
                if lb == NO_BOUND {
                    return false;
                }
                let lambda = if active[k] { sv[c] - sys.rhs[c] } else { 0.0 };
                lambda + diag[c] * (lb - v[c]) > 0.0
            })
            .collect();
        if next == active {
            return Ok(finish(sys, v, &active, it));
        }
        if seen.contains(&next) {
            return primal_active_set(sys, tol, it);
        }
        active = next;
    }
    primal_active_set(sys, tol, max_iter)
}

fn finish(sys: &StepSystem, v: Vec<f64>, active: &[bool], iterations: usize) -> VISolution {
    let sv = sys.matrix.matvec(&v);
    let multiplier = sys
        .constrained
        .iter()
        .enumerate()
        .map(|(k, &c)| if active[k] { sv[c] - sys.rhs[c] } else { 0.0 })
        .collect();
    let active_set = sys
        .constrained
        .iter()
        .enumerate()
        .filter(|(k, _)| active[*k])
        .map(|(_, &c)| c)
        .collect();
    VISolution {
        v,
        active_set,
        multiplier,
        iterations,
        converged: true,
    }
}

/// Feasible primal active set method: a working set of bounds is kept,
/// blocked steps add a bound, a negative multiplier releases one.
fn primal_active_set(sys: &StepSystem, tol: f64, offset: usize) -> Result<VISolution> {
    let nc = sys.constrained.len();
    let mut working: Vec<bool> = sys.lower_bound.iter().map(|&l| l > NO_BOUND).collect();
    let mut v = solve_with_fixed(sys, &fixed_from_active(sys, &working))?;
    let max_iter = 4 * nc + 100;
    for it in 1..=max_iter {
        let trial = solve_with_fixed(sys, &fixed_from_active(sys, &working))?;
        // ratio test against bounds outside the working set
        let mut step = 1.0;
        let mut blocking = None;
        for k in 0..nc {
            if working[k] {
                continue;
            }
            let c = sys.constrained[k];
            let lb = sys.lower_bound[k];
            if trial[c] < lb && v[c] > trial[c] {
                let a = ((v[c] - lb) / (v[c] - trial[c])).max(0.0);
                if a < step {
                    step = a;
                    blocking = Some(k);
                }
            }
        }
        for (vi, ti) in v.iter_mut().zip(&trial) {
            *vi += step * (ti - *vi);
        }
        if let Some(k) = blocking {
            working[k] = true;
            v[sys.constrained[k]] = sys.lower_bound[k];
            continue;
        }
        let sv = sys.matrix.matvec(&v);
        let worst = (0..nc)
            .filter(|&k| working[k])
            .map(|k| (k, sv[sys.constrained[k]] - sys.rhs[sys.constrained[k]]))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((k, lam)) if lam < -tol * (1.0 + sys.rhs[sys.constrained[k]].abs()) => working[k] = false,
            _ => return Ok(finish(sys, v, &working, offset + it)),
        }
    }
    Err(FracError::NotConverged {
        solver: "primal active set",
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Projected SOR sweeps `v_i ← max(lb_i, v_i + ω (rhs - S v)_i / S_ii)`
/// until the largest update falls below `tol`.
pub fn psor_solve(sys: &StepSystem, omega: f64, tol: f64, max_iter: usize) -> Result<VISolution> {
    psor_solve_from(sys, omega, tol, max_iter, None)
}

pub fn psor_solve_from(
    sys: &StepSystem,
    omega: f64,
    tol: f64,
    max_iter: usize,
    initial: Option<&[f64]>,
) -> Result<VISolution> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(FracError::Domain(format!("relaxation factor must lie in (0,2), got {omega}")));
    }
    let n = sys.dim();
    let bounds = sys.bound_map();
    let diag = sys.matrix.diagonal();
    let mut v = match initial {
        Some(x) => {
            check_len("initial iterate", n, x.len())?;
            x.to_vec()
        }
        None => vec![0.0; n],
    };
    for (vi, b) in v.iter_mut().zip(&bounds) {
        if let Some(l) = b {
            *vi = vi.max(*l);
        }
    }
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        change = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n {
            let r: f64 = sys.rhs[i] - sys.matrix.row(i).map(|(j, s)| s * v[j]).sum::<f64>();
            let mut vi = v[i] + omega * r / diag[i];
            if let Some(l) = bounds[i] {
                vi = vi.max(l);
            }
            change = change.max((vi - v[i]).abs());
            scale = scale.max(vi.abs());
            v[i] = vi;
        }
        if change <= tol * scale.max(1.0) {
            return Ok(VISolution::from_iterate(sys, v, it, true));
        }
    }
    Err(FracError::NotConverged {
        solver: "projected SOR",
        iterations: max_iter,
        residual: change,
    })
}

/// Exhaustive search over all active sets (at most 12 bounds).
pub fn enumerate_active_sets(sys: &StepSystem) -> Result<VISolution> {
    let nc = sys.constrained.len();
    if nc > 12 {
        return Err(FracError::Domain(format!("enumeration limited to 12 bounds, got {nc}")));
    }
    let mut masks: Vec<u32> = (0..1u32 << nc).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let scale = sys.rhs.iter().fold(1.0f64, |m, r| m.max(r.abs()))
        + sys.lower_bound.iter().filter(|l| l.is_finite()).fold(0.0f64, |m, l| m.max(l.abs()));
    let tol = 1e-10 * scale;
    for mask in masks {
        let active: Vec<bool> = (0..nc).map(|k| mask >> k & 1 == 1).collect();
        if active.iter().zip(&sys.lower_bound).any(|(&a, &l)| a && l == NO_BOUND) {
            continue;
        }
        let v = solve_with_fixed(sys, &fixed_from_active(sys, &active))?;
        let sv = sys.matrix.matvec(&v);
        let ok = (0..nc).all(|k| {
            let c = sys.constrained[k];
            if active[k] {
                sv[c] - sys.rhs[c] >= -tol
            } else {
                v[c] >= sys.lower_bound[k] - tol
            }
        });
        if ok {
            return Ok(finish(sys, v, &active, 1 << nc));
        }
    }
    Err(FracError::Infeasible("no active set satisfies the optimality conditions".into()))
}

/// `max_i max(|min(λ_i, v_i - lb_i)|, (-λ_i)⁺, (lb_i - v_i)⁺)` over constrained entries.
pub fn complementarity_residual(sol: &VISolution, sys: &StepSystem) -> f64 {
    sys.constrained
        .iter()
        .zip(&sys.lower_bound)
        .zip(&sol.multiplier)
        .filter(|((_, &l), _)| l > NO_BOUND)
        .map(|((&c, &l), &lam)| {
            let gap = sol.v[c] - l;
            lam.min(gap).abs().max((-lam).max(0.0)).max((-gap).max(0.0))
        })
        .fold(0.0, f64::max)
}
