//! Graded partitions of `(0, Y)`, uniform meshes of `Ω = (0, L)` and their
//! tensor product with degree-of-freedom classification.

use serde::{Deserialize, Serialize};

use crate::error::{FracError, Result};
use crate::fracparams::FracParams;

/// Partition `0 = y_0 < … < y_M = Y` of the extension direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedPartition {
    pub y_max: f64,
    pub m: usize,
    pub gamma: f64,
    pub nodes: Vec<f64>,
}

/// `y_j = (j/M)^γ Y`; rejects `γ ≤ 3/(2s)`.
pub fn graded_partition(y_max: f64, m: usize, gamma: f64, params: &FracParams) -> Result<GradedPartition> {
    check_partition_args(y_max, m, gamma, params)?;
    let nodes = (0..=m)
        .map(|j| {
            if j == m {
                y_max
            } else {
                (j as f64 / m as f64).powf(gamma) * y_max
            }
        })
        .collect();
    Ok(GradedPartition {
        y_max,
        m,
        gamma,
        nodes,
    })
}

fn check_partition_args(y_max: f64, m: usize, gamma: f64, params: &FracParams) -> Result<()> {
    if !(y_max >= 1.0) || !y_max.is_finite() {
        return Err(FracError::Domain(format!("truncation height must be >= 1, got {y_max}")));
    }
    if m == 0 {
        return Err(FracError::Domain("partition needs at least one cell".into()));
    }
    if !(gamma > params.gamma_min) {
        return Err(FracError::Domain(format!(
            "grading exponent {gamma} must exceed 3/(2s) = {}",
            params.gamma_min
        )));
    }
    Ok(())
}

impl GradedPartition {
    /// Power-law grading with `m_graded` cells on `(0, 1)` followed by a
    /// uniform tail of width `1 / tail_per_unit` up to `y_max`.
    ///
    /// Partitions built this way for different integer heights share the
    /// same cells, so a shorter cylinder is a prefix of a taller one.
    pub fn graded_with_tail(
        y_max: f64,
        m_graded: usize,
        gamma: f64,
        tail_per_unit: usize,
        params: &FracParams,
    ) -> Result<Self> {
        check_partition_args(y_max, m_graded, gamma, params)?;
        if tail_per_unit == 0 {
            return Err(FracError::Domain("tail density must be positive".into()));
        }
        let mut nodes: Vec<f64> = (0..=m_graded)
            .map(|j| (j as f64 / m_graded as f64).powf(gamma))
            .collect();
        let ht = 1.0 / tail_per_unit as f64;
        let n_tail = ((y_max - 1.0) / ht - 1e-9).ceil().max(0.0) as usize;
        for k in 1..=n_tail {
            nodes.push((1.0 + k as f64 * ht).min(y_max));
        }
        *nodes.last_mut().expect("nonempty") = y_max;
        if nodes.len() >= 2 && nodes[nodes.len() - 1] - nodes[nodes.len() - 2] < 1e-12 {
            nodes.remove(nodes.len() - 2);
        }
        Ok(Self {
            y_max,
            m: nodes.len() - 1,
            gamma,
            nodes,
        })
    }

    pub fn cell_width(&self, j: usize) -> f64 {
        self.nodes[j + 1] - self.nodes[j]
    }

    /// Largest ratio of neighboring cell widths (either direction).
    pub fn sigma(&self) -> f64 {
        (0..self.m.saturating_sub(1))
            .map(|j| {
                let a = self.cell_width(j);
                let b = self.cell_width(j + 1);
                (b / a).max(a / b)
            })
            .fold(1.0, f64::max)
    }
}

/// Uniform partition of `(0, length)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMesh {
    pub n_cells: usize,
    pub length: f64,
    pub h: f64,
    pub nodes: Vec<f64>,
}

pub fn base_mesh(n_cells: usize, length: f64) -> Result<BaseMesh> {
    if n_cells < 2 {
        return Err(FracError::Domain(format!(
            "base mesh needs at least 2 cells (one interior node), got {n_cells}"
        )));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(FracError::Domain(format!("domain length must be positive, got {length}")));
    }
    let h = length / n_cells as f64;
    let nodes = (0..=n_cells)
        .map(|i| if i == n_cells { length } else { i as f64 * h })
        .collect();
    Ok(BaseMesh {
        n_cells,
        length,
        h,
        nodes,
    })
}

impl BaseMesh {
    pub fn n_interior(&self) -> usize {
        self.n_cells - 1
    }

    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[1..self.n_cells]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Interior,
    Trace,
    Dirichlet,
}

/// Tensor mesh of the truncated cylinder `Ω × (0, Y)` with `Q1` nodes.
///
/// Node `(i, j)` (x index `i`, y index `j`) has global number `j (n+1) + i`.
/// Free unknowns are the nodes with `0 < i < n` and `j < M`, numbered
/// `j (n-1) + i - 1`; the first `n-1` of them are the trace nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMesh {
    pub base: BaseMesh,
    pub partition: GradedPartition,
    pub dirichlet_set: Vec<usize>,
    pub trace_set: Vec<usize>,
    pub interior_set: Vec<usize>,
}

pub fn tensor_mesh(base: BaseMesh, partition: GradedPartition) -> TensorMesh {
    let nx = base.n_cells;
    let m = partition.m;
    let mut dirichlet_set = Vec::new();
    let mut trace_set = Vec::new();
    let mut interior_set = Vec::new();
    for j in 0..=m {
        for i in 0..=nx {
            let id = j * (nx + 1) + i;
            match classify(i, j, nx, m) {
                NodeKind::Dirichlet => dirichlet_set.push(id),
                NodeKind::Trace => trace_set.push(id),
                NodeKind::Interior => interior_set.push(id),
            }
        }
    }
    TensorMesh {
        base,
        partition,
        dirichlet_set,
        trace_set,
        interior_set,
    }
}

fn classify(i: usize, j: usize, nx: usize, m: usize) -> NodeKind {
    if i == 0 || i == nx || j == m {
        NodeKind::Dirichlet
    } else if j == 0 {
        NodeKind::Trace
    } else {
        NodeKind::Interior
    }
}

impl TensorMesh {
    pub fn nx(&self) -> usize {
        self.base.n_cells
    }

    pub fn ny(&self) -> usize {
        self.partition.m
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx() + 1) * (self.ny() + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn n_free(&self) -> usize {
        (self.nx() - 1) * self.ny()
    }

    pub fn n_trace(&self) -> usize {
        self.nx() - 1
    }

    pub fn node_kind(&self, i: usize, j: usize) -> NodeKind {
        classify(i, j, self.nx(), self.ny())
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx() + 1) + i
    }

    pub fn node_coords(&self, i: usize, j: usize) -> (f64, f64) {
        (self.base.nodes[i], self.partition.nodes[j])
    }

    pub fn free_index(&self, i: usize, j: usize) -> Option<usize> {
        (i > 0 && i < self.nx() && j < self.ny()).then(|| j * (self.nx() - 1) + i - 1)
    }

    pub fn free_to_node(&self, f: usize) -> (usize, usize) {
        let w = self.nx() - 1;
        (f % w + 1, f / w)
    }

    /// Scatters a free-DOF vector into a full nodal array (Dirichlet nodes zero).
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes()];
        for (f, v) in free.iter().enumerate() {
            let (i, j) = self.free_to_node(f);
            full[self.node_index(i, j)] = *v;
        }
        full
    }

    /// Trace part of a free-DOF vector.
    pub fn trace_of<'a>(&self, free: &'a [f64]) -> &'a [f64] {
        &free[..self.n_trace()]
    }

    /// True when every node line of `coarse` is a node line of `self`.
    pub fn refines(&self, coarse: &TensorMesh) -> bool {
        let contains = |fine: &[f64], c: &[f64]| {
            let scale = fine.last().copied().unwrap_or(1.0).abs().max(1.0);
            c.iter()
                .all(|y| fine.iter().any(|z| (z - y).abs() <= 1e-12 * scale))
        };
        (self.base.length - coarse.base.length).abs() <= 1e-12 * self.base.length
            && (self.partition.y_max - coarse.partition.y_max).abs() <= 1e-12 * self.partition.y_max
            && contains(&self.base.nodes, &coarse.base.nodes)
            && contains(&self.partition.nodes, &coarse.partition.nodes)
    }

    /// Like [`TensorMesh::refines`], but `self` may be taller: the
    /// partition of `coarse` must be a prefix of the nodes of `self`.
    pub fn nests(&self, coarse: &TensorMesh) -> bool {
        let scale = self.partition.y_max.max(1.0);
        let contains = |fine: &[f64], c: &[f64]| c.iter().all(|y| fine.iter().any(|z| (z - y).abs() <= 1e-12 * scale));
        (self.base.length - coarse.base.length).abs() <= 1e-12 * self.base.length
            && coarse.partition.y_max <= self.partition.y_max * (1.0 + 1e-12)
            && contains(&self.base.nodes, &coarse.base.nodes)
            && contains(&self.partition.nodes, &coarse.partition.nodes)
    }

    pub fn summary(&self) -> MeshSummary {
        MeshSummary {
            n_base_cells: self.nx(),
            m: self.ny(),
            n_cells: self.n_cells(),
            n_nodes: self.n_nodes(),
            n_free: self.n_free(),
            n_trace: self.n_trace(),
            gamma: self.partition.gamma,
            y_max: self.partition.y_max,
            h: self.base.h,
            sigma: self.partition.sigma(),
        }
    }
}

/// Compact JSON-exportable description of a [`TensorMesh`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub n_base_cells: usize,
    pub m: usize,
    pub n_cells: usize,
    pub n_nodes: usize,
    pub n_free: usize,
    pub n_trace: usize,
    pub gamma: f64,
    pub y_max: f64,
    pub h: f64,
    pub sigma: f64,
}

pub const DEFAULT_GRADING_MARGIN: f64 = 0.1;

/// `M = n_base_cells`, `γ = (1 + 0.1) · 3/(2s)`.
pub fn balanced_resolution(n_base_cells: usize, params: &FracParams) -> Result<(usize, f64)> {
    balanced_resolution_with_margin(n_base_cells, params, DEFAULT_GRADING_MARGIN)
}

pub fn balanced_resolution_with_margin(
    n_base_cells: usize,
    params: &FracParams,
    margin: f64,
) -> Result<(usize, f64)> {
    if n_base_cells < 2 {
        return Err(FracError::Domain(format!("need at least 2 base cells, got {n_base_cells}")));
    }
    Ok((n_base_cells, params.gamma_min * (1.0 + margin)))
}

/// Default truncation height `1 + |ln(target)|` for a target truncation error.
pub fn default_height(target_error: f64) -> f64 {
    1.0 + target_error.ln().abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracparams::make_params;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn partition_examples() {
        let p = make_params(0.9).unwrap();
        let g = graded_partition(1.0, 4, 2.0, &p).unwrap();
        assert_eq!(g.nodes, vec![0.0, 0.0625, 0.25, 0.5625, 1.0]);
        let g = graded_partition(2.0, 1, 5.0, &p).unwrap();
        assert_eq!(g.nodes, vec![0.0, 2.0]);
        let half = make_params(0.5).unwrap();
        assert!(graded_partition(1.0, 4, 2.0, &half).is_err());
        assert!(graded_partition(1.0, 4, 3.0, &half).is_err());
        assert!(graded_partition(0.5, 4, 4.0, &half).is_err());
        assert!(graded_partition(1.0, 0, 4.0, &half).is_err());
    }

    #[test]
    fn base_mesh_examples() {
        let b = base_mesh(4, 1.0).unwrap();
        assert_eq!(b.nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(base_mesh(2, 2.0).unwrap().h, 1.0);
        assert!(base_mesh(1, 1.0).is_err());
    }

    #[test]
    fn tensor_mesh_examples() {
        let p = make_params(0.5).unwrap();
        let m = tensor_mesh(base_mesh(4, 1.0).unwrap(), graded_partition(1.0, 4, 3.3, &p).unwrap());
        assert_eq!(m.n_cells(), 16);
        assert_eq!(m.n_nodes(), 25);
        assert_eq!(m.trace_set.len(), 3);
        for &d in &m.dirichlet_set {
            let (i, j) = (d % 5, d / 5);
            assert!(i == 0 || i == 4 || j == 4);
        }
        for j in 0..=4 {
            assert!(m.dirichlet_set.contains(&m.node_index(0, j)));
            assert!(m.dirichlet_set.contains(&m.node_index(4, j)));
        }
        for i in 0..=4 {
            assert!(m.dirichlet_set.contains(&m.node_index(i, 4)));
        }
        for &t in &m.trace_set {
            let (x, y) = m.node_coords(t % 5, t / 5);
            assert_eq!(y, 0.0);
            assert!(x > 0.0 && x < 1.0);
        }
        for f in 0..m.n_free() {
            let (i, j) = m.free_to_node(f);
            assert_eq!(m.free_index(i, j), Some(f));
            assert_ne!(m.node_kind(i, j), NodeKind::Dirichlet);
        }
        assert_eq!(m.free_index(0, 0), None);
    }

    #[test]
    fn balanced_examples() {
        let (m, g) = balanced_resolution(16, &make_params(0.5).unwrap()).unwrap();
        assert_eq!(m, 16);
        assert_relative_eq!(g, 3.3, epsilon = 1e-14);
        let (m, g) = balanced_resolution(8, &make_params(0.75).unwrap()).unwrap();
        assert_eq!(m, 8);
        assert_relative_eq!(g, 2.2, epsilon = 1e-14);
        let half = make_params(0.5).unwrap();
        let (m, g) = balanced_resolution_with_margin(8, &half, 0.0).unwrap();
        assert!(graded_partition(1.0, m, g, &half).is_err());
    }

    #[test]
    fn tail_partitions_are_prefixes() {
        let p = make_params(0.5).unwrap();
        let tall = GradedPartition::graded_with_tail(8.0, 8, 3.3, 4, &p).unwrap();
        for y in 1..=5 {
            let short = GradedPartition::graded_with_tail(y as f64, 8, 3.3, 4, &p).unwrap();
            assert_eq!(short.nodes[..], tall.nodes[..=short.m]);
            assert_eq!(*short.nodes.last().unwrap(), y as f64);
        }
    }

    #[test]
    fn doubling_refines() {
        let p = make_params(0.5).unwrap();
        let mk = |n: usize| tensor_mesh(base_mesh(n, 1.0).unwrap(), graded_partition(2.0, n, 3.3, &p).unwrap());
        assert!(mk(16).refines(&mk(8)));
        assert!(!mk(8).refines(&mk(16)));
        assert!(!mk(12).refines(&mk(8)));
    }

    #[test]
    fn summary_round_trips() {
        let p = make_params(0.5).unwrap();
        let m = tensor_mesh(base_mesh(6, 1.0).unwrap(), graded_partition(2.0, 5, 3.3, &p).unwrap());
        let s = m.summary();
        let back: MeshSummary = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
    }

    proptest! {
        #[test]
        fn partition_nodes_follow_power_law(y in 1.0f64..10.0, m in 1usize..60, s in 0.05f64..0.95, eps in 0.01f64..2.0) {
            let p = make_params(s).unwrap();
            let gamma = p.gamma_min + eps;
            let g = graded_partition(y, m, gamma, &p).unwrap();
            prop_assert_eq!(g.nodes[0], 0.0);
            prop_assert_eq!(g.nodes[m], y);
            for j in 0..m {
                prop_assert!(g.nodes[j + 1] > g.nodes[j]);
                let exact = (j as f64 / m as f64).powf(gamma) * y;
                prop_assert!((g.nodes[j] - exact).abs() <= 4.0 * f64::EPSILON * y);
            }
            prop_assert!(g.sigma() <= 2f64.powf(gamma) * (1.0 + 1e-12));
        }

        #[test]
        fn tensor_counts(nx in 2usize..40, m in 1usize..40) {
            let p = make_params(0.5).unwrap();
            let mesh = tensor_mesh(base_mesh(nx, 1.0).unwrap(), graded_partition(1.5, m, 3.3, &p).unwrap());
            prop_assert_eq!(mesh.n_cells(), nx * m);
            prop_assert_eq!(mesh.n_nodes(), (nx + 1) * (m + 1));
            prop_assert_eq!(mesh.trace_set.len(), nx - 1);
            prop_assert_eq!(mesh.interior_set.len(), (nx - 1) * (m - 1));
            prop_assert_eq!(mesh.dirichlet_set.len(), 2 * (m + 1) + nx - 1);
            prop_assert_eq!(mesh.trace_set.len() + mesh.interior_set.len(), mesh.n_free());
        }
    }
}
