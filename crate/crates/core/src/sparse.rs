//! Symmetric sparse matrices in compressed row form, a Jacobi-preconditioned
//! conjugate gradient solver and a banded Cholesky factorization.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{check_len, FracError, Result};

/// Symmetric matrix stored with both triangles in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseSym {
    /// Builds the matrix from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Both `(i, j)` and `(j, i)` must be supplied for off-diagonal entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(FracError::DimensionMismatch {
                    what: "triplet index",
                    expected: n,
                    got: i.max(j),
                });
            }
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            for &(j, v) in &scratch {
                match col_idx.last() {
                    Some(&last) if last == j && col_idx.len() > row_ptr[i] => {
                        *values.last_mut().expect("paired with col_idx") += v;
                    }
                    _ => {
                        col_idx.push(j);
                        values.push(v);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        let mut m = Self {
            n,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        };
        m.symmetric = m.check_symmetry(1e-14);
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_len("square matrix columns", n, a.ncols())?;
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(n, &t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    fn check_symmetry(&self, rel: f64) -> bool {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.triplets()
            .all(|(i, j, v)| (v - self.get(j, i)).abs() <= rel * scale)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.col_idx[r.clone()]
                .iter()
                .zip(&self.values[r])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.triplets().map(|(i, j, v)| x[i] * v * x[j]).sum()
    }

    /// `a · self + b · other`.
    pub fn linear_combination(&self, a: f64, other: &SparseSym, b: f64) -> Result<SparseSym> {
        check_len("matrix dimension", self.n, other.n)?;
        let t: Vec<_> = self
            .triplets()
            .map(|(i, j, v)| (i, j, a * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, b * v)))
            .collect();
        Self::from_triplets(self.n, &t)
    }

    /// Principal submatrix on the index range `r`.
    pub fn principal(&self, r: Range<usize>) -> SparseSym {
        let (lo, hi) = (r.start, r.end);
        let t: Vec<_> = r
            .clone()
            .flat_map(|i| {
                self.row(i)
                    .filter(move |&(j, _)| j >= lo && j < hi)
                    .map(move |(j, v)| (i - lo, j - lo, v))
            })
            .collect();
        Self::from_triplets(r.len(), &t).expect("indices within range")
    }

    /// Dense copy of the block `rows × cols`.
    pub fn block_dense(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(rows.len(), cols.len());
        for i in rows.clone() {
            for (j, v) in self.row(i) {
                if cols.contains(&j) {
                    b[(i - rows.start, j - cols.start)] = v;
                }
            }
        }
        b
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.block_dense(0..self.n, 0..self.n)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.triplets().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }

    /// Coordinate text format, one `row col value` line per stored entry.
    pub fn to_coo_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "% {} {} {}", self.n, self.n, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{i} {j} {v:.17e}");
        }
        s
    }

    pub fn write_coo(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_coo_string())?;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = b` to `‖b - A x‖ ≤ tol ‖b‖`.
pub fn cg_solve(a: &SparseSym, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let opts = CgOptions {
        rel_tol: tol,
        ..CgOptions::default()
    };
    Ok(pcg(a, b, None, opts)?.x)
}

/// Jacobi-preconditioned conjugate gradients from an optional initial guess.
pub fn pcg(a: &SparseSym, b: &[f64], x0: Option<&[f64]>, opts: CgOptions) -> Result<CgOutcome> {
    let n = a.dim();
    check_len("cg right-hand side", n, b.len())?;
    if !(opts.rel_tol > 0.0) {
        return Err(FracError::Domain("cg tolerance must be positive".into()));
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = match x0 {
        Some(g) => {
            check_len("cg initial guess", n, g.len())?;
            g.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = a.matvec(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let target = opts.rel_tol * bnorm;
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm2(&r);
    for it in 0..opts.max_iter {
        if res <= target {
            return Ok(CgOutcome {
                x,
                iterations: it,
                residual: res,
            });
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(FracError::NotConverged {
                solver: "conjugate gradients (matrix not positive definite)",
                iterations: it,
                residual: res / bnorm,
            });
        }
        let step = rz / pap;
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * ap[k];
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        res = norm2(&r);
    }
    if res <= target {
        return Ok(CgOutcome {
            x,
            iterations: opts.max_iter,
            residual: res,
        });
    }
    Err(FracError::NotConverged {
        solver: "conjugate gradients",
        iterations: opts.max_iter,
        residual: res / bnorm,
    })
}

/// Cholesky factor `L Lᵀ` of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i, i-bw ..= i], left-padded with zeros
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SparseSym) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut sum = band[i * w + (j + bw - i)];
                for k in k0..j {
                    sum -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(sum > 0.0) {
                        return Err(FracError::NotConverged {
                            solver: "banded Cholesky (matrix not positive definite)",
                            iterations: i,
                            residual: sum,
                        });
                    }
                    band[i * w + bw] = sum.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = sum / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut sum = b[i];
            for j in j0..i {
                sum -= self.band[i * w + (j + bw - i)] * b[j];
            }
            b[i] = sum / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut sum = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                sum -= self.band[k * w + (i + bw - k)] * b[k];
            }
            b[i] = sum / self.band[i * w + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
