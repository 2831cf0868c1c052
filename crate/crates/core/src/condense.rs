//! Static condensation of the extension stiffness onto the trace unknowns.
//!
//! With the free unknowns split as `[trace; interior]`,
//! `DtN = A_tt - A_ti A_ii⁻¹ A_it` is the discrete Dirichlet-to-Neumann map and
//! `-A_ii⁻¹ A_it` the discrete α-harmonic extension.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_len, Result};
use crate::sparse::{BandedCholesky, SparseSym};

#[derive(Debug, Clone)]
pub struct TraceSchur {
    n_trace: usize,
    n_interior: usize,
    interior: BandedCholesky,
    // for each trace unknown, its couplings (interior index, value)
    coupling: Vec<Vec<(usize, f64)>>,
    dtn: DMatrix<f64>,
}

impl TraceSchur {
    pub fn new(a: &SparseSym, n_trace: usize) -> Result<Self> {
        let n = a.dim();
        let n_interior = n - n_trace;
        let interior = BandedCholesky::factor(&a.principal(n_trace..n))?;
        let coupling: Vec<Vec<(usize, f64)>> = (0..n_trace)
            .map(|t| {
                a.row(t)
                    .filter(|&(j, _)| j >= n_trace)
                    .map(|(j, v)| (j - n_trace, v))
                    .collect()
            })
            .collect();
        let att = a.block_dense(0..n_trace, 0..n_trace);
        let columns: Vec<Vec<f64>> = (0..n_trace)
            .into_par_iter()
            .map(|t| {
                let mut z = vec![0.0; n_interior];
                for &(j, v) in &coupling[t] {
                    z[j] = v;
                }
                interior.solve_in_place(&mut z);
                (0..n_trace)
                    .map(|r| att[(r, t)] - coupling[r].iter().map(|&(j, v)| v * z[j]).sum::<f64>())
                    .collect()
            })
            .collect();
        let mut dtn = DMatrix::from_fn(n_trace, n_trace, |r, c| columns[c][r]);
        // symmetrize away rounding differences
        let sym = 0.5 * (&dtn + dtn.transpose());
        dtn.copy_from(&sym);
        Ok(Self {
            n_trace,
            n_interior,
            interior,
            coupling,
            dtn,
        })
    }

    pub fn n_trace(&self) -> usize {
        self.n_trace
    }

    pub fn dtn(&self) -> &DMatrix<f64> {
        &self.dtn
    }

    /// Interior values `-A_ii⁻¹ A_it u` of the discrete extension of `u`.
    pub fn interior_of(&self, trace: &[f64]) -> Result<Vec<f64>> {
        check_len("trace vector", self.n_trace, trace.len())?;
        let mut z = vec![0.0; self.n_interior];
        for (t, u) in trace.iter().enumerate() {
            for &(j, v) in &self.coupling[t] {
                z[j] -= v * u;
            }
        }
        self.interior.solve_in_place(&mut z);
        Ok(z)
    }

    /// Full free-unknown vector `[u; -A_ii⁻¹ A_it u]`.
    pub fn extend(&self, trace: &[f64]) -> Result<Vec<f64>> {
        let mut v = trace.to_vec();
        v.extend(self.interior_of(trace)?);
        Ok(v)
    }
}
