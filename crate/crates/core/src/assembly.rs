//! `y^α`-weighted element matrices and global assembly of the truncated
//! extension form and of the trace mass.

use rayon::prelude::*;

use crate::error::{FracError, Result};
use crate::fracparams::FracParams;
use crate::mesh::{BaseMesh, TensorMesh};
use crate::sparse::SparseSym;

/// `∫_a^b y^{α+k} dy` in closed form.
pub fn weighted_moment(a: f64, b: f64, alpha: f64, k: u32) -> Result<f64> {
    if !(alpha > -1.0) {
        return Err(FracError::Domain(format!("weight exponent must exceed -1, got {alpha}")));
    }
    if !(a >= 0.0 && b > a) {
        return Err(FracError::Domain(format!("need 0 <= a < b, got a={a}, b={b}")));
    }
    let p = alpha + k as f64 + 1.0;
    let bp = b.powf(p);
    if a == 0.0 {
        return Ok(bp / p);
    }
    // b^p - a^p = -b^p expm1(p ln(a/b)), accurate when a is close to b
    Ok(-bp * (p * ((a - b) / b).ln_1p()).exp_m1() / p)
}

/// Local `Q1` matrix on `K × I`. Local node `2 iy + ix` sits at
/// `(x_{ix}, y_{iy})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementMatrix {
    pub values: [[f64; 4]; 4],
    /// (x cell, y cell)
    pub cell: (usize, usize),
}

/// Weighted 1D mass and stiffness on `(y0, y1)` for the two linear shape
/// functions, returned as `(mass, stiffness)`.
pub fn weighted_1d_matrices(y0: f64, y1: f64, alpha: f64) -> Result<([[f64; 2]; 2], [[f64; 2]; 2])> {
    let m0 = weighted_moment(y0, y1, alpha, 0)?;
    let m1 = weighted_moment(y0, y1, alpha, 1)?;
    let m2 = weighted_moment(y0, y1, alpha, 2)?;
    let h2 = (y1 - y0) * (y1 - y0);
    let a = (y1 * y1 * m0 - 2.0 * y1 * m1 + m2) / h2;
    let b = (-m2 + (y0 + y1) * m1 - y0 * y1 * m0) / h2;
    let c = (m2 - 2.0 * y0 * m1 + y0 * y0 * m0) / h2;
    let k = m0 / h2;
    Ok(([[a, b], [b, c]], [[k, -k], [-k, k]]))
}

/// `∫_{K×I} y^α ∇φ_a · ∇φ_b` for the bilinear basis, without the `1/d_s` factor.
pub fn local_stiffness(hx: f64, y0: f64, y1: f64, alpha: f64) -> Result<[[f64; 4]; 4]> {
    let (my, ky) = weighted_1d_matrices(y0, y1, alpha)?;
    let kx = [[1.0 / hx, -1.0 / hx], [-1.0 / hx, 1.0 / hx]];
    let mx = [[hx / 3.0, hx / 6.0], [hx / 6.0, hx / 3.0]];
    let mut out = [[0.0; 4]; 4];
    for (p, row) in out.iter_mut().enumerate() {
        let (ia, ja) = (p % 2, p / 2);
        for (q, v) in row.iter_mut().enumerate() {
            let (ib, jb) = (q % 2, q / 2);
            *v = kx[ia][ib] * my[ja][jb] + mx[ia][ib] * ky[ja][jb];
        }
    }
    Ok(out)
}

/// Element matrix for cell `(cx, cy)` of `mesh`.
pub fn element_stiffness(mesh: &TensorMesh, cx: usize, cy: usize, alpha: f64) -> Result<ElementMatrix> {
    let hx = mesh.base.nodes[cx + 1] - mesh.base.nodes[cx];
    let values = local_stiffness(hx, mesh.partition.nodes[cy], mesh.partition.nodes[cy + 1], alpha)?;
    Ok(ElementMatrix {
        values,
        cell: (cx, cy),
    })
}

fn local_mass(hx: f64, y0: f64, y1: f64, alpha: f64) -> Result<[[f64; 4]; 4]> {
    let (my, _) = weighted_1d_matrices(y0, y1, alpha)?;
    let mx = [[hx / 3.0, hx / 6.0], [hx / 6.0, hx / 3.0]];
    let mut out = [[0.0; 4]; 4];
    for (p, row) in out.iter_mut().enumerate() {
        for (q, v) in row.iter_mut().enumerate() {
            *v = mx[p % 2][q % 2] * my[p / 2][q / 2];
        }
    }
    Ok(out)
}

fn assemble_cells<F>(mesh: &TensorMesh, scale: f64, local: F) -> Result<SparseSym>
where
    F: Fn(f64, f64, f64) -> Result<[[f64; 4]; 4]> + Sync,
{
    let nx = mesh.nx();
    // one triplet list per y layer, concatenated in layer order
    let layers: Vec<Vec<(usize, usize, f64)>> = (0..mesh.ny())
        .into_par_iter()
        .map(|cy| -> Result<Vec<(usize, usize, f64)>> {
            let (y0, y1) = (mesh.partition.nodes[cy], mesh.partition.nodes[cy + 1]);
            let mut t = Vec::with_capacity(16 * nx);
            for cx in 0..nx {
                let hx = mesh.base.nodes[cx + 1] - mesh.base.nodes[cx];
                let ke = local(hx, y0, y1)?;
                let dofs: [Option<usize>; 4] =
                    std::array::from_fn(|p| mesh.free_index(cx + p % 2, cy + p / 2));
                for p in 0..4 {
                    let Some(gp) = dofs[p] else { continue };
                    for q in 0..4 {
                        if let Some(gq) = dofs[q] {
                            t.push((gp, gq, scale * ke[p][q]));
                        }
                    }
                }
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let triplets: Vec<_> = layers.into_iter().flatten().collect();
    SparseSym::from_triplets(mesh.n_free(), &triplets)
}

/// Matrix of `a_Y(V, W) = (1/d_s) ∫ y^α ∇V·∇W` on the free unknowns.
pub fn assemble_stiffness(mesh: &TensorMesh, params: &FracParams) -> Result<SparseSym> {
    let alpha = params.alpha;
    assemble_cells(mesh, 1.0 / params.d_s, |hx, y0, y1| local_stiffness(hx, y0, y1, alpha))
}

/// Matrix of `∫ y^α V W` on the free unknowns.
pub fn assemble_weighted_mass(mesh: &TensorMesh, params: &FracParams) -> Result<SparseSym> {
    let alpha = params.alpha;
    assemble_cells(mesh, 1.0, |hx, y0, y1| local_mass(hx, y0, y1, alpha))
}

/// `P1` mass matrix on the interior nodes of `base`.
pub fn assemble_trace_mass(base: &BaseMesh) -> SparseSym {
    let n = base.n_interior();
    let mut t = Vec::with_capacity(3 * n);
    for c in 0..base.n_cells {
        let h = base.nodes[c + 1] - base.nodes[c];
        let ends = [c.checked_sub(1), (c + 1 < base.n_cells).then_some(c)];
        for (a, ia) in ends.iter().enumerate() {
            let Some(ia) = ia else { continue };
            for (b, ib) in ends.iter().enumerate() {
                let Some(ib) = ib else { continue };
                t.push((*ia, *ib, if a == b { h / 3.0 } else { h / 6.0 }));
            }
        }
    }
    SparseSym::from_triplets(n, &t).expect("indices bounded by interior count")
}
