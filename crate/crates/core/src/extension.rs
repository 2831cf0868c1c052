//! Discrete α-harmonic extension, mollifiers and the positivity preserving
//! interpolation operators built from them.

use rayon::prelude::*;

use crate::assembly::assemble_stiffness;
use crate::error::{check_len, Result};
use crate::fracparams::FracParams;
use crate::mesh::{BaseMesh, GradedPartition, TensorMesh};
use crate::quadrature::GaussLegendre;
use crate::special::ExtensionProfile;
use crate::sparse::BandedCholesky;

/// Discrete α-harmonic extension of trace values `w` (one per interior
/// `Ω` node): `A V = 0` on the interior unknowns, `V = w` on the trace and
/// zero on the Dirichlet boundary. Returns the free-unknown vector.
pub fn harmonic_extension(w: &[f64], mesh: &TensorMesh, params: &FracParams) -> Result<Vec<f64>> {
    let nt = mesh.n_trace();
    check_len("trace values", nt, w.len())?;
    let a = assemble_stiffness(mesh, params)?;
    let n = a.dim();
    let chol = BandedCholesky::factor(&a.principal(nt..n))?;
    let mut rhs = vec![0.0; n - nt];
    for (t, wt) in w.iter().enumerate() {
        for (j, v) in a.row(t) {
            if j >= nt {
                rhs[j - nt] -= v * wt;
            }
        }
    }
    chol.solve_in_place(&mut rhs);
    let mut out = w.to_vec();
    out.extend(rhs);
    Ok(out)
}

/// `exp(-1/(1-t²))` on `(-1, 1)`, zero elsewhere.
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// `∫_{-1}^{1} bump`.
pub const BUMP_MASS: f64 = 0.443_993_816_168_079_4;

/// Smooth averaging kernels: `μ1` symmetric on `(-r, r)` and `μ2` supported
/// in `(0, r_Y)`, with discrete rules used for all mollified integrals.
#[derive(Debug, Clone)]
pub struct Mollifier {
    pub r: f64,
    pub r_y: f64,
    // (offset in units of h, weight), weights sum to one
    x_rule: Vec<(f64, f64)>,
    y_rule: Vec<(f64, f64)>,
}

const X_POINTS_PER_HALF: usize = 32;
const Y_POINTS: usize = 32;

pub fn make_mollifier(base: &BaseMesh, partition: &GradedPartition) -> Mollifier {
    // uniform base mesh: σ_Ω = 1
    let _ = base;
    Mollifier::new(1.0, 1.0 / partition.sigma())
}

impl Mollifier {
    pub fn new(r: f64, r_y: f64) -> Self {
        let g = GaussLegendre::new(X_POINTS_PER_HALF);
        let mut x_rule: Vec<(f64, f64)> = g
            .on_interval(-r, 0.0)
            .chain(g.on_interval(0.0, r))
            .map(|(t, w)| (t, w * bump(t / r)))
            .collect();
        normalize(&mut x_rule);
        let g = GaussLegendre::new(Y_POINTS);
        let mut y_rule: Vec<(f64, f64)> = g
            .on_interval(0.0, r_y)
            .map(|(t, w)| (t, w * bump(2.0 * t / r_y - 1.0)))
            .collect();
        normalize(&mut y_rule);
        Self {
            r,
            r_y,
            x_rule,
            y_rule,
        }
    }

    pub fn mu1(&self, t: f64) -> f64 {
        bump(t / self.r) / (self.r * BUMP_MASS)
    }

    pub fn mu2(&self, t: f64) -> f64 {
        bump(2.0 * t / self.r_y - 1.0) * 2.0 / (self.r_y * BUMP_MASS)
    }

    pub fn x_rule(&self) -> &[(f64, f64)] {
        &self.x_rule
    }

    pub fn y_rule(&self) -> &[(f64, f64)] {
        &self.y_rule
    }

    /// Weights `(a, b)` with `R(I_h u)_i = a u_i + b (u_{i-1} + u_{i+1})`.
    pub fn nodal_stencil(&self) -> (f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        for &(t, w) in &self.x_rule {
            a += w * (1.0 - t.abs());
            b += 0.5 * w * t.abs();
        }
        (a, b)
    }
}

fn normalize(rule: &mut [(f64, f64)]) {
    let s: f64 = rule.iter().map(|e| e.1).sum();
    for e in rule.iter_mut() {
        e.1 /= s;
    }
}

/// Mollified nodal values `∫ μ_{1,v'}(z) w(z) dz` at the interior nodes of `base`.
pub fn r_interp<F: Fn(f64) -> f64 + Sync>(w: F, base: &BaseMesh, moll: &Mollifier) -> Vec<f64> {
    base.interior_nodes()
        .iter()
        .map(|&v| moll.x_rule.iter().map(|&(t, q)| q * w(v + base.h * t)).sum())
        .collect()
}

/// [`r_interp`] applied to the piecewise linear function with the given
/// interior nodal values.
pub fn r_interp_nodal(u: &[f64], moll: &Mollifier) -> Vec<f64> {
    let (a, b) = moll.nodal_stencil();
    let n = u.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            a * u[i] + b * (left + right)
        })
        .collect()
}

/// A function on the cylinder with its gradient.
pub trait CylinderFunction: Sync {
    fn value(&self, x: f64, y: f64) -> f64;

    fn gradient(&self, x: f64, y: f64) -> [f64; 2];

    fn trace(&self, x: f64) -> f64 {
        self.value(x, 0.0)
    }

    /// Values and gradients at the points `(xs[k], y)`.
    fn sample_row(&self, xs: &[f64], y: f64, vals: &mut [f64], grads: &mut [[f64; 2]]) {
        for (k, &x) in xs.iter().enumerate() {
            vals[k] = self.value(x, y);
            grads[k] = self.gradient(x, y);
        }
    }
}

/// Cylinder function from a value closure and a gradient closure.
pub struct FnCylinder<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> CylinderFunction for FnCylinder<F, G>
where
    F: Fn(f64, f64) -> f64 + Sync,
    G: Fn(f64, f64) -> [f64; 2] + Sync,
{
    fn value(&self, x: f64, y: f64) -> f64 {
        (self.value)(x, y)
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        (self.gradient)(x, y)
    }
}

/// `sin(lπx/L) ζ(y)`: the α-harmonic extension of a single sine mode on the
/// semi-infinite cylinder.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicMode {
    k: f64,
    profile: ExtensionProfile,
}

impl HarmonicMode {
    pub fn new(s: f64, l: usize, length: f64) -> Result<Self> {
        let k = l as f64 * std::f64::consts::PI / length;
        Ok(Self {
            k,
            profile: ExtensionProfile::new(s, k)?,
        })
    }

    pub fn profile(&self) -> &ExtensionProfile {
        &self.profile
    }
}

impl CylinderFunction for HarmonicMode {
    fn value(&self, x: f64, y: f64) -> f64 {
        (self.k * x).sin() * self.profile.value(y)
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (s, c) = (self.k * x).sin_cos();
        [self.k * c * self.profile.value(y), s * self.profile.derivative(y)]
    }

    fn trace(&self, x: f64) -> f64 {
        (self.k * x).sin()
    }

    fn sample_row(&self, xs: &[f64], y: f64, vals: &mut [f64], grads: &mut [[f64; 2]]) {
        let z = self.profile.value(y);
        let dz = self.profile.derivative(y);
        for (k, &x) in xs.iter().enumerate() {
            let (s, c) = (self.k * x).sin_cos();
            vals[k] = s * z;
            grads[k] = [self.k * c * z, s * dz];
        }
    }
}

/// Piecewise bilinear field on a [`TensorMesh`], stored at all nodes.
#[derive(Debug, Clone)]
pub struct FeField<'a> {
    pub mesh: &'a TensorMesh,
    pub nodal: Vec<f64>,
}

impl<'a> FeField<'a> {
    pub fn from_free(mesh: &'a TensorMesh, free: &[f64]) -> Self {
        Self {
            mesh,
            nodal: mesh.expand(free),
        }
    }

    fn locate(nodes: &[f64], t: f64) -> (usize, f64) {
        let n = nodes.len() - 1;
        let c = nodes.partition_point(|&z| z <= t).clamp(1, n) - 1;
        let h = nodes[c + 1] - nodes[c];
        (c, ((t - nodes[c]) / h).clamp(0.0, 1.0))
    }

    fn corners(&self, x: f64, y: f64) -> ([f64; 4], f64, f64, f64, f64) {
        let m = self.mesh;
        let (cx, sx) = Self::locate(&m.base.nodes, x);
        let (cy, sy) = Self::locate(&m.partition.nodes, y);
        let v = |i: usize, j: usize| self.nodal[m.node_index(cx + i, cy + j)];
        let hx = m.base.nodes[cx + 1] - m.base.nodes[cx];
        let hy = m.partition.nodes[cy + 1] - m.partition.nodes[cy];
        ([v(0, 0), v(1, 0), v(0, 1), v(1, 1)], sx, sy, hx, hy)
    }
}

impl CylinderFunction for FeField<'_> {
    fn value(&self, x: f64, y: f64) -> f64 {
        let (c, sx, sy, _, _) = self.corners(x, y);
        (1.0 - sy) * ((1.0 - sx) * c[0] + sx * c[1]) + sy * ((1.0 - sx) * c[2] + sx * c[3])
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (c, sx, sy, hx, hy) = self.corners(x, y);
        [
            ((1.0 - sy) * (c[1] - c[0]) + sy * (c[3] - c[2])) / hx,
            ((1.0 - sx) * (c[2] - c[0]) + sx * (c[3] - c[1])) / hy,
        ]
    }
}

/// Local `y` size `h_{v''}` at node row `j < M`.
fn node_height(partition: &GradedPartition, j: usize) -> f64 {
    let above = partition.cell_width(j);
    if j == 0 {
        above
    } else {
        above.max(partition.cell_width(j - 1))
    }
}

/// Averaged Taylor interpolant: value at free node `v` is
/// `∫ [w(z) + ∇w(z)·(v - z)] μ_v(z) dz`. Returns the free-unknown vector.
pub fn l_interp(w: &dyn CylinderFunction, mesh: &TensorMesh, moll: &Mollifier) -> Vec<f64> {
    (0..mesh.n_free())
        .into_par_iter()
        .map(|f| {
            let (i, j) = mesh.free_to_node(f);
            l_node(w, mesh, moll, i, j)
        })
        .collect()
}

fn l_node(w: &dyn CylinderFunction, mesh: &TensorMesh, moll: &Mollifier, i: usize, j: usize) -> f64 {
    let (vx, vy) = mesh.node_coords(i, j);
    let h = mesh.base.h;
    let hv = node_height(&mesh.partition, j);
    let xs: Vec<f64> = moll.x_rule.iter().map(|&(t, _)| vx + h * t).collect();
    let mut vals = vec![0.0; xs.len()];
    let mut grads = vec![[0.0; 2]; xs.len()];
    let mut acc = 0.0;
    for &(u, p) in &moll.y_rule {
        let y = vy + hv * u;
        w.sample_row(&xs, y, &mut vals, &mut grads);
        let row: f64 = moll
            .x_rule
            .iter()
            .enumerate()
            .map(|(k, &(_, q))| q * (vals[k] + grads[k][0] * (vx - xs[k]) + grads[k][1] * (vy - y)))
            .sum();
        acc += p * row;
    }
    acc
}

/// Positivity preserving interpolant: trace nodes from [`r_interp`] of the
/// trace of `w`, all other free nodes from [`l_interp`].
pub fn pi_interp(w: &dyn CylinderFunction, mesh: &TensorMesh, moll: &Mollifier) -> Vec<f64> {
    let nt = mesh.n_trace();
    let mut out = r_interp(|x| w.trace(x), &mesh.base, moll);
    out.extend(
        (nt..mesh.n_free())
            .into_par_iter()
            .map(|f| {
                let (i, j) = mesh.free_to_node(f);
                l_node(w, mesh, moll, i, j)
            })
            .collect::<Vec<_>>(),
    );
    out
}

/// `‖∇(w - V)‖_{L²(y^α, C_Y)}` for a free-unknown vector `V` on `mesh`.
pub fn weighted_gradient_error(
    w: &dyn CylinderFunction,
    mesh: &TensorMesh,
    free: &[f64],
    params: &FracParams,
) -> f64 {
    let field = FeField::from_free(mesh, free);
    let alpha = params.alpha;
    let gx = GaussLegendre::new(6);
    let gy = GaussLegendre::new(8);
    let first = GaussLegendre::new(12);
    // per-layer sums collected first so the reduction order is fixed
    let layers: Vec<f64> = (0..mesh.ny())
        .into_par_iter()
        .map(|cy| {
            let (y0, y1) = (mesh.partition.nodes[cy], mesh.partition.nodes[cy + 1]);
            // (y, weight including y^α)
            let ypts: Vec<(f64, f64)> = if cy == 0 {
                let p = 1.0 / (alpha + 1.0);
                let scale = y1.powf(alpha + 1.0) / (alpha + 1.0);
                first.on_interval(0.0, 1.0).map(|(u, q)| (y1 * u.powf(p), scale * q)).collect()
            } else {
                gy.on_interval(y0, y1).map(|(y, q)| (y, q * y.powf(alpha))).collect()
            };
            let mut xs = Vec::with_capacity(mesh.nx() * gx.len());
            let mut xw = Vec::with_capacity(xs.capacity());
            for cx in 0..mesh.nx() {
                for (x, q) in gx.on_interval(mesh.base.nodes[cx], mesh.base.nodes[cx + 1]) {
                    xs.push(x);
                    xw.push(q);
                }
            }
            let mut vals = vec![0.0; xs.len()];
            let mut grads = vec![[0.0; 2]; xs.len()];
            let mut acc = 0.0;
            for &(y, qy) in &ypts {
                w.sample_row(&xs, y, &mut vals, &mut grads);
                for (k, &x) in xs.iter().enumerate() {
                    let g = field.gradient(x, y);
                    let (ex, ey) = (grads[k][0] - g[0], grads[k][1] - g[1]);
                    acc += qy * xw[k] * (ex * ex + ey * ey);
                }
            }
            acc
        })
        .collect();
    layers.iter().sum::<f64>().sqrt()
}

/// `‖w - u_h‖_{L²(Ω)}` for the piecewise linear `u_h` with interior nodal values `u`.
pub fn trace_l2_error<F: Fn(f64) -> f64>(w: F, base: &BaseMesh, u: &[f64]) -> f64 {
    let g = GaussLegendre::new(8);
    let n = base.n_cells;
    let nodal = |i: usize| if i == 0 || i == n { 0.0 } else { u[i - 1] };
    let mut acc = 0.0;
    for c in 0..n {
        let (x0, x1) = (base.nodes[c], base.nodes[c + 1]);
        for (x, q) in g.on_interval(x0, x1) {
            let t = (x - x0) / (x1 - x0);
            let uh = (1.0 - t) * nodal(c) + t * nodal(c + 1);
            acc += q * (w(x) - uh).powi(2);
        }
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracparams::make_params;
    use crate::mesh::{base_mesh, graded_partition, tensor_mesh};
    use crate::quadrature::{integrate_adaptive, AdaptiveTol};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn mesh(n: usize, s: f64, y: f64) -> (TensorMesh, FracParams) {
        let p = make_params(s).unwrap();
        let m = tensor_mesh(
            base_mesh(n, 1.0).unwrap(),
            graded_partition(y, n, 1.1 * p.gamma_min, &p).unwrap(),
        );
        (m, p)
    }

    #[test]
    fn bump_mass_constant() {
        let c = integrate_adaptive(bump, -1.0, 1.0, AdaptiveTol::default()).unwrap();
        assert_relative_eq!(c, BUMP_MASS, max_relative = 1e-12);
    }

    #[test]
    fn mollifier_moments() {
        let (m, _) = mesh(8, 0.5, 1.0);
        let moll = make_mollifier(&m.base, &m.partition);
        let tol = AdaptiveTol::default();
        let i0 = integrate_adaptive(|t| moll.mu1(t), -moll.r, moll.r, tol).unwrap();
        let i1 = integrate_adaptive(|t| t * moll.mu1(t), -moll.r, moll.r, tol).unwrap();
        let j0 = integrate_adaptive(|t| moll.mu2(t), 0.0, moll.r_y, tol).unwrap();
        assert!((i0 - 1.0).abs() < 1e-10);
        assert!(i1.abs() < 1e-12);
        assert!((j0 - 1.0).abs() < 1e-10);
        assert_eq!(moll.mu2(0.0), 0.0);
        assert_eq!(moll.mu2(-0.3), 0.0);
        assert!(moll.r_y <= 1.0 / m.partition.sigma() + 1e-15);
    }

    #[test]
    fn discrete_rule_approximates_continuous_kernel() {
        let moll = Mollifier::new(1.0, 0.5);
        let exact = integrate_adaptive(|t| t * t * moll.mu1(t), -1.0, 1.0, AdaptiveTol::default()).unwrap();
        let disc: f64 = moll.x_rule().iter().map(|&(t, w)| w * t * t).sum();
        assert_relative_eq!(disc, exact, max_relative = 1e-8);
    }

    #[test]
    fn r_reproduces_affine_and_constants() {
        let b = base_mesh(10, 1.0).unwrap();
        let moll = Mollifier::new(1.0, 0.5);
        for v in r_interp(|_| 2.5, &b, &moll) {
            assert!((v - 2.5).abs() < 1e-14);
        }
        for (v, x) in r_interp(|x| x, &b, &moll).iter().zip(b.interior_nodes()) {
            assert!((v - x).abs() < 1e-14);
        }
    }

    #[test]
    fn nodal_stencil_matches_piecewise_linear_input() {
        let b = base_mesh(7, 1.0).unwrap();
        let moll = Mollifier::new(1.0, 0.5);
        let u = [0.3, -0.2, 1.0, 0.0, 0.4, 0.9];
        let direct = r_interp(|x| trace_eval(&u, &b, x), &b, &moll);
        let stencil = r_interp_nodal(&u, &moll);
        for (a, c) in direct.iter().zip(&stencil) {
            assert!((a - c).abs() < 1e-14);
        }
        let (a, bb) = moll.nodal_stencil();
        assert_relative_eq!(a + 2.0 * bb, 1.0, epsilon = 1e-15);
    }

    fn trace_eval(u: &[f64], b: &BaseMesh, x: f64) -> f64 {
        let n = b.n_cells;
        let c = ((x / b.h).floor() as usize).min(n - 1);
        let t = x / b.h - c as f64;
        let nodal = |i: usize| if i == 0 || i == n { 0.0 } else { u[i - 1] };
        (1.0 - t) * nodal(c) + t * nodal(c + 1)
    }

    #[test]
    fn l_reproduces_affine() {
        let (m, _) = mesh(6, 0.6, 1.0);
        let moll = make_mollifier(&m.base, &m.partition);
        let w = FnCylinder {
            value: |x: f64, y: f64| x + 2.0 * y,
            gradient: |_, _| [1.0, 2.0],
        };
        let v = l_interp(&w, &m, &moll);
        for (f, val) in v.iter().enumerate() {
            let (i, j) = m.free_to_node(f);
            let (x, y) = m.node_coords(i, j);
            assert!((val - (x + 2.0 * y)).abs() < 1e-12);
        }
        let c = FnCylinder {
            value: |_, _| 3.0,
            gradient: |_, _| [0.0, 0.0],
        };
        assert!(l_interp(&c, &m, &moll).iter().all(|v| (v - 3.0).abs() < 1e-13));
    }

    #[test]
    fn pi_splits_trace_and_interior() {
        let (m, _) = mesh(6, 0.6, 1.0);
        let moll = make_mollifier(&m.base, &m.partition);
        let w = HarmonicMode::new(0.6, 1, 1.0).unwrap();
        let pi = pi_interp(&w, &m, &moll);
        let l = l_interp(&w, &m, &moll);
        let r = r_interp(|x| w.trace(x), &m.base, &moll);
        let nt = m.n_trace();
        assert_eq!(&pi[..nt], &r[..]);
        assert_eq!(&pi[nt..], &l[nt..]);
    }

    #[test]
    fn extension_of_zero_is_zero() {
        let (m, p) = mesh(5, 0.5, 1.0);
        let v = harmonic_extension(&vec![0.0; m.n_trace()], &m, &p).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn half_order_extension_converges_to_sinh_profile() {
        let yt = 1.0;
        let exact = |x: f64, y: f64| (PI * x).sin() * (PI * (yt - y)).sinh() / (PI * yt).sinh();
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let (m, p) = mesh(n, 0.5, yt);
            let w: Vec<f64> = m.base.interior_nodes().iter().map(|&x| (PI * x).sin()).collect();
            let v = harmonic_extension(&w, &m, &p).unwrap();
            let err = (0..m.n_free())
                .map(|f| {
                    let (i, j) = m.free_to_node(f);
                    let (x, y) = m.node_coords(i, j);
                    (v[f] - exact(x, y)).abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        assert!(errs[2] < 2e-3);
    }

    #[test]
    fn gradient_error_vanishes_for_discrete_fields() {
        let (m, p) = mesh(4, 0.75, 1.0);
        let free: Vec<f64> = (0..m.n_free()).map(|f| (f as f64 * 0.37).sin()).collect();
        let field = FeField::from_free(&m, &free);
        assert!(weighted_gradient_error(&field, &m, &free, &p) < 1e-12);
    }
}
