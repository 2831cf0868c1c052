//! Backward Euler time stepping of the truncated extension problem, time
//! interpolants, energy diagnostics and the error functionals `E` and `ℰ`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_stiffness, assemble_trace_mass};
use crate::condense::TraceSchur;
use crate::error::{check_len, FracError, Result};
use crate::extension::{
    harmonic_extension, make_mollifier, pi_interp, r_interp_nodal, CylinderFunction, FeField, Mollifier,
};
use crate::fracparams::{hs_norm, project_fe_trace, FracParams, SpectralField};
use crate::mesh::{BaseMesh, TensorMesh};
use crate::quadrature::{integrate_adaptive, AdaptiveTol};
use crate::sparse::SparseSym;
use crate::vi::{complementarity_residual, pdas_solve_warm, StepSystem, VISolution};

pub type SpaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Forcing `f(x, t)` with the times where it may jump.
#[derive(Clone)]
pub struct Forcing {
    f: SpaceTimeFn,
    breakpoints: Vec<f64>,
}

impl Forcing {
    pub fn new<F: Fn(f64, f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self {
            f: Arc::new(f),
            breakpoints: Vec::new(),
        }
    }

    /// Times at which `f` may be discontinuous; `f` must be right-continuous there.
    pub fn with_breakpoints(mut self, mut breakpoints: Vec<f64>) -> Self {
        breakpoints.sort_by(f64::total_cmp);
        self.breakpoints = breakpoints;
        self
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        (self.f)(x, t)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Forcing").field("breakpoints", &self.breakpoints).finish_non_exhaustive()
    }
}

/// Obstacle, initial datum and forcing on `Ω = (0, length)`.
#[derive(Clone)]
pub struct ProblemData {
    pub psi: SpaceFn,
    pub u0: SpaceFn,
    pub forcing: Option<Forcing>,
    pub t_final: f64,
    pub s: f64,
    pub length: f64,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("forcing", &self.forcing)
            .field("t_final", &self.t_final)
            .field("s", &self.s)
            .field("length", &self.length)
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    pub fn new<P, U>(psi: P, u0: U, t_final: f64, s: f64) -> Self
    where
        P: Fn(f64) -> f64 + Send + Sync + 'static,
        U: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            psi: Arc::new(psi),
            u0: Arc::new(u0),
            forcing: None,
            t_final,
            s,
            length: 1.0,
        }
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn with_length(mut self, length: f64) -> Self {
        self.length = length;
        self
    }

    pub fn validate(&self) -> Result<()> {
        FracParams::new(self.s)?;
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(FracError::Domain(format!("final time must be positive, got {}", self.t_final)));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(FracError::Domain(format!("domain length must be positive, got {}", self.length)));
        }
        for x in [0.0, self.length] {
            if !((self.psi)(x) <= 0.0) {
                return Err(FracError::Infeasible(format!("obstacle must be nonpositive on the boundary, ψ({x}) > 0")));
            }
        }
        Ok(())
    }

    pub fn forcing_at(&self, x: f64, t: f64) -> f64 {
        self.forcing.as_ref().map_or(0.0, |f| f.eval(x, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingMode {
    /// `f^{k+1} = τ⁻¹ ∫_{t_k}^{t_{k+1}} f`.
    #[default]
    Averaged,
    /// `f^{k+1} = f(t_{k+1}⁺)`.
    RightLimit,
}

impl std::str::FromStr for ForcingMode {
    type Err = FracError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "averaged" => Ok(Self::Averaged),
            "right_limit" => Ok(Self::RightLimit),
            other => Err(FracError::Config(format!("unknown forcing mode `{other}`"))),
        }
    }
}

/// Nodal forcing for step index `k`.
///
/// `Averaged` returns `τ⁻¹ ∫_{t_k}^{t_{k+1}} f(x, t) dt`, split at the
/// forcing breakpoints. `RightLimit` returns the sample `f(x, t_k)` of the
/// right-continuous forcing. The stepper uses index `k` in averaged mode and
/// `k + 1` in right-limit mode for the step `t_k → t_{k+1}`.
pub fn time_average_f(
    forcing: Option<&Forcing>,
    nodes: &[f64],
    k: usize,
    tau: f64,
    mode: ForcingMode,
) -> Result<Vec<f64>> {
    let Some(f) = forcing else {
        return Ok(vec![0.0; nodes.len()]);
    };
    let t0 = k as f64 * tau;
    match mode {
        ForcingMode::RightLimit => Ok(nodes.iter().map(|&x| f.eval(x, t0)).collect()),
        ForcingMode::Averaged => {
            let t1 = t0 + tau;
            let mut cuts = vec![t0];
            cuts.extend(f.breakpoints().iter().copied().filter(|&b| b > t0 && b < t1));
            cuts.push(t1);
            let tol = AdaptiveTol {
                abs: 1e-14,
                rel: 1e-11,
                max_intervals: 2000,
            };
            nodes
                .iter()
                .map(|&x| {
                    let mut acc = 0.0;
                    for w in cuts.windows(2) {
                        acc += integrate_adaptive(|t| f.eval(x, t), w[0], w[1], tol)?;
                    }
                    Ok(acc / tau)
                })
                .collect()
        }
    }
}

fn nodal(g: &SpaceFn, base: &BaseMesh) -> Vec<f64> {
    base.interior_nodes().iter().map(|&x| g(x)).collect()
}

/// Trace lower bound `tr Π H_α ψ` at the interior base nodes.
///
/// The trace of `H_α I_h ψ` is `I_h ψ`, so only the mollification `R` is applied.
pub fn discrete_obstacle(problem: &ProblemData, base: &BaseMesh, moll: &Mollifier) -> Vec<f64> {
    r_interp_nodal(&nodal(&problem.psi, base), moll)
}

/// `V⁰ = Π H_α I_h u0` as a free-unknown vector.
pub fn init_state(problem: &ProblemData, mesh: &TensorMesh, moll: &Mollifier, params: &FracParams) -> Result<Vec<f64>> {
    let u0 = nodal(&problem.u0, &mesh.base);
    let psi = nodal(&problem.psi, &mesh.base);
    let scale = u0.iter().chain(&psi).fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some((i, _)) = u0.iter().zip(&psi).enumerate().find(|(_, (u, p))| **u < **p - 1e-12 * scale) {
        return Err(FracError::Infeasible(format!(
            "initial datum below the obstacle at x = {}",
            mesh.base.interior_nodes()[i]
        )));
    }
    let ext = harmonic_extension(&u0, mesh, params)?;
    let field = FeField::from_free(mesh, &ext);
    let mut v0 = pi_interp(&field, mesh, moll);
    // R applied to a piecewise linear trace is the exact nodal stencil
    let trace = r_interp_nodal(&u0, moll);
    v0[..trace.len()].copy_from_slice(&trace);
    Ok(v0)
}

/// Mesh, step count and forcing treatment of a run.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: TensorMesh,
    pub steps: usize,
    pub mode: ForcingMode,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub pdas_tol: f64,
    /// Keep every full cylinder state (needed by [`interp_eval`] and [`error_e`]).
    pub store_states: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            pdas_tol: 1e-12,
            store_states: true,
        }
    }
}

/// Operators of one backward Euler step on the trace unknowns.
#[derive(Debug, Clone)]
pub struct StepOperator {
    pub tau: f64,
    pub stiffness: SparseSym,
    pub trace_mass: SparseSym,
    pub schur: TraceSchur,
    /// `M_tr / τ + DtN`.
    pub condensed: SparseSym,
}

impl StepOperator {
    pub fn new(mesh: &TensorMesh, params: &FracParams, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(FracError::Domain(format!("time step must be positive, got {tau}")));
        }
        let stiffness = assemble_stiffness(mesh, params)?;
        let trace_mass = assemble_trace_mass(&mesh.base);
        let schur = TraceSchur::new(&stiffness, mesh.n_trace())?;
        let m: DMatrix<f64> = trace_mass.to_dense();
        let condensed = SparseSym::from_dense(&(schur.dtn() + m / tau))?;
        Ok(Self {
            tau,
            stiffness,
            trace_mass,
            schur,
            condensed,
        })
    }

    /// The step problem on the trace unknowns; interior unknowns are
    /// eliminated because they enter the step only through the extension.
    pub fn system(&self, prev_trace: &[f64], load: &[f64], obstacle: &[f64]) -> Result<StepSystem> {
        let nt = self.trace_mass.dim();
        check_len("previous trace", nt, prev_trace.len())?;
        check_len("trace load", nt, load.len())?;
        let b: Vec<f64> = prev_trace.iter().zip(load).map(|(p, f)| p / self.tau + f).collect();
        StepSystem::new(
            self.condensed.clone(),
            self.trace_mass.matvec(&b),
            obstacle.to_vec(),
            (0..nt).collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub trace: Vec<f64>,
    pub solution: VISolution,
    pub residual: f64,
}

/// One step `V^k → V^{k+1}`, warm-started from the active set `warm`.
pub fn step(
    op: &StepOperator,
    prev_trace: &[f64],
    load: &[f64],
    obstacle: &[f64],
    warm: &[usize],
    tol: f64,
) -> Result<StepOutcome> {
    let sys = op.system(prev_trace, load, obstacle)?;
    let solution = pdas_solve_warm(&sys, tol, warm)?;
    let residual = complementarity_residual(&solution, &sys);
    Ok(StepOutcome {
        trace: solution.v.clone(),
        solution,
        residual,
    })
}

/// A completed run. Index `k` of the per-step vectors refers to `V^{k}`
/// for `states`, `traces`, `grad_sq`, and to the step `t_{k} → t_{k+1}` for
/// the remaining per-step records.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mesh: TensorMesh,
    pub params: FracParams,
    pub t_final: f64,
    pub tau: f64,
    pub mode: ForcingMode,
    pub obstacle: Vec<f64>,
    /// Full free-unknown vectors `V^0..V^K`, when stored.
    pub states: Option<Vec<Vec<f64>>>,
    pub traces: Vec<Vec<f64>>,
    pub active_sets: Vec<Vec<usize>>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    /// `‖∇V^k‖²_{L²(y^α)}`, `k = 0..K`.
    pub grad_sq: Vec<f64>,
    /// `‖∇(V^{k+1} - V^k)‖²_{L²(y^α)}`.
    pub grad_incr_sq: Vec<f64>,
    /// `‖f^{k+1}‖²_{L²(Ω)}` of the loads actually used.
    pub load_sq: Vec<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.traces.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps() {
            self.t_final
        } else {
            k as f64 * self.tau
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(*r))
    }

    /// `min_k min_i (U^k_i - obstacle_i)`.
    pub fn min_gap(&self) -> f64 {
        self.traces
            .iter()
            .flat_map(|u| u.iter().zip(&self.obstacle).map(|(a, b)| a - b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn state(&self, k: usize) -> Result<&[f64]> {
        self.states
            .as_ref()
            .map(|s| s[k].as_slice())
            .ok_or_else(|| FracError::Incompatible("trajectory was run without stored states".into()))
    }

    /// Per-step CSV: `step,t,residual,active_size,u_1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "step,t,residual,active_size")?;
        for i in 1..=self.traces[0].len() {
            write!(w, ",u_{i}")?;
        }
        writeln!(w)?;
        for (k, u) in self.traces.iter().enumerate() {
            let (res, act) = if k == 0 {
                (0.0, 0)
            } else {
                (self.residuals[k - 1], self.active_sets[k - 1].len())
            };
            write!(w, "{k},{:.16e},{res:.16e},{act}", self.time(k))?;
            for v in u {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn run(problem: &ProblemData, disc: &Discretization) -> Result<Trajectory> {
    run_with(problem, disc, RunOptions::default())
}

pub fn run_with(problem: &ProblemData, disc: &Discretization, opts: RunOptions) -> Result<Trajectory> {
    problem.validate()?;
    let params = FracParams::new(problem.s)?;
    let mesh = &disc.mesh;
    if (mesh.base.length - problem.length).abs() > 1e-12 * problem.length {
        return Err(FracError::Incompatible(format!(
            "mesh length {} differs from domain length {}",
            mesh.base.length, problem.length
        )));
    }
    if disc.steps == 0 {
        return Err(FracError::Domain("at least one time step is required".into()));
    }
    let tau = problem.t_final / disc.steps as f64;
    let moll = make_mollifier(&mesh.base, &mesh.partition);
    let obstacle = discrete_obstacle(problem, &mesh.base, &moll);
    let v0 = init_state(problem, mesh, &moll, &params)?;
    let op = StepOperator::new(mesh, &params, tau)?;
    let nodes = mesh.base.interior_nodes();
    let forcing = problem.forcing.as_ref();
    let nt = mesh.n_trace();

    let energy = |v: &[f64]| params.d_s * op.stiffness.quad_form(v);
    let mut grad_sq = vec![energy(&v0)];
    let mut grad_incr_sq = Vec::with_capacity(disc.steps);
    let mut load_sq = Vec::with_capacity(disc.steps);
    let mut traces = vec![v0[..nt].to_vec()];
    let mut active_sets: Vec<Vec<usize>> = Vec::with_capacity(disc.steps);
    let mut residuals = Vec::with_capacity(disc.steps);
    let mut iterations = Vec::with_capacity(disc.steps);
    let mut prev_full = v0.clone();
    let mut states = opts.store_states.then(|| vec![v0]);

    for k in 0..disc.steps {
        let wrap = |e: FracError| FracError::Step {
            step: k + 1,
            source: Box::new(e),
        };
        let index = match disc.mode {
            ForcingMode::Averaged => k,
            ForcingMode::RightLimit => k + 1,
        };
        let load = time_average_f(forcing, nodes, index, tau, disc.mode).map_err(wrap)?;
        let warm = active_sets.last().map_or(&[][..], |a| a.as_slice());
        let out = step(&op, &traces[k], &load, &obstacle, warm, opts.pdas_tol).map_err(wrap)?;
        let full = op.schur.extend(&out.trace).map_err(wrap)?;
        let incr: Vec<f64> = full.iter().zip(&prev_full).map(|(a, b)| a - b).collect();
        grad_sq.push(energy(&full));
        grad_incr_sq.push(energy(&incr));
        load_sq.push(op.trace_mass.quad_form(&load));
        residuals.push(out.residual);
        iterations.push(out.solution.iterations);
        active_sets.push(out.solution.active_set);
        traces.push(out.trace);
        if let Some(st) = states.as_mut() {
            st.push(full.clone());
        }
        prev_full = full;
    }

    Ok(Trajectory {
        mesh: mesh.clone(),
        params,
        t_final: problem.t_final,
        tau,
        mode: disc.mode,
        obstacle,
        states,
        traces,
        active_sets,
        residuals,
        iterations,
        grad_sq,
        grad_incr_sq,
        load_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolant {
    /// Piecewise constant, `V^{k+1}` on `(t_k, t_{k+1}]`.
    Bar,
    /// Piecewise linear through the `V^k`.
    Hat,
}

/// Location of `t` on the grid `0 = t_0 < ... < t_K = T` as `(k, θ)` with
/// `t = (1-θ) t_k + θ t_{k+1}`, `θ ∈ (0, 1]` except `t = 0`.
fn locate_time(t: f64, tau: f64, steps: usize) -> (usize, f64) {
    if t <= 0.0 {
        return (0, 0.0);
    }
    let mut r = t / tau;
    if (r - r.round()).abs() < 1e-9 {
        r = r.round();
    }
    let k = (r.ceil() as usize).clamp(1, steps) - 1;
    (k, (r - k as f64).clamp(0.0, 1.0))
}

fn blend(a: &[f64], b: &[f64], theta: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - theta) * x + theta * y).collect()
}

fn check_time(t: f64, t_final: f64) -> Result<()> {
    if !(0.0..=t_final * (1.0 + 1e-14)).contains(&t) {
        return Err(FracError::Domain(format!("time {t} outside [0, {t_final}]")));
    }
    Ok(())
}

/// Bar or hat interpolant of the states at time `t`; `bar(0) = V^1`.
pub fn interp_eval(traj: &Trajectory, t: f64, kind: Interpolant) -> Result<Vec<f64>> {
    check_time(t, traj.t_final)?;
    let (k, theta) = locate_time(t, traj.tau, traj.steps());
    Ok(match kind {
        Interpolant::Bar => traj.state(k + 1)?.to_vec(),
        Interpolant::Hat => blend(traj.state(k)?, traj.state(k + 1)?, theta),
    })
}

/// Trace version of [`interp_eval`], available without stored states.
pub fn trace_interp_eval(traj: &Trajectory, t: f64, kind: Interpolant) -> Result<Vec<f64>> {
    check_time(t, traj.t_final)?;
    let (k, theta) = locate_time(t, traj.tau, traj.steps());
    Ok(match kind {
        Interpolant::Bar => traj.traces[k + 1].clone(),
        Interpolant::Hat => blend(&traj.traces[k], &traj.traces[k + 1], theta),
    })
}

/// Left- and right-hand sides of the a priori energy bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `Σ_k ‖tr(V^k - V^{k-1})‖²_{L²(Ω)}`.
    pub trace_increments: f64,
    /// `τ ‖∇V^K‖²_{L²(y^α)}`.
    pub final_gradient: f64,
    /// `τ Σ_k ‖∇(V^k - V^{k-1})‖²_{L²(y^α)}`.
    pub gradient_increments: f64,
    /// `τ [‖f‖²_{L²(0,T;L²)} + ‖∇V⁰‖²_{L²(y^α)}]`.
    pub data_bound: f64,
}

impl EnergyReport {
    /// The three left-hand quantities divided by the data bound (zero when the bound vanishes).
    pub fn ratios(&self) -> [f64; 3] {
        let d = self.data_bound;
        let r = |x: f64| if d > 0.0 { x / d } else { 0.0 };
        [r(self.trace_increments), r(self.final_gradient), r(self.gradient_increments)]
    }
}

pub fn energy_diagnostics(traj: &Trajectory) -> EnergyReport {
    let m = assemble_trace_mass(&traj.mesh.base);
    let trace_increments = traj
        .traces
        .windows(2)
        .map(|w| {
            let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            m.quad_form(&d)
        })
        .sum();
    let tau = traj.tau;
    let f_sq: f64 = tau * traj.load_sq.iter().sum::<f64>();
    EnergyReport {
        trace_increments,
        final_gradient: tau * traj.grad_sq.last().copied().unwrap_or(0.0),
        gradient_increments: tau * traj.grad_incr_sq.iter().sum::<f64>(),
        data_bound: tau * (f_sq + traj.grad_sq[0]),
    }
}

/// Time nodes of both grids merged, each interval paired with the coarse
/// step it belongs to.
fn merged_grid(coarse: &Trajectory, fine_times: &[f64]) -> Vec<(f64, f64, usize)> {
    let mut t: Vec<f64> = (0..=coarse.steps()).map(|k| coarse.time(k)).chain(fine_times.iter().copied()).collect();
    t.sort_by(f64::total_cmp);
    let eps = 1e-13 * coarse.t_final;
    t.dedup_by(|a, b| (*a - *b).abs() <= eps);
    t.windows(2)
        .map(|w| {
            let (k, _) = locate_time(0.5 * (w[0] + w[1]), coarse.tau, coarse.steps());
            (w[0], w[1], k)
        })
        .collect()
}

/// Sample times for `L∞` in time: step points and midpoints.
fn sample_times(traj: &Trajectory) -> Vec<f64> {
    let mut t = vec![0.0];
    for k in 0..traj.steps() {
        t.push(0.5 * (traj.time(k) + traj.time(k + 1)));
        t.push(traj.time(k + 1));
    }
    t
}

const GAUSS2: [(f64, f64); 2] = [(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];

/// Error functional `E` against a reference trajectory on the same or a
/// nested finer mesh, possibly on a taller cylinder (the trajectory is then
/// extended by zero above its height), with any time grid on `[0, T]`. Returns
/// `(‖tr(v - V̂)‖_{L∞(0,T;L²)}, ‖∇(v - V̄)‖_{L²(0,T;L²(y^α))})`, with the
/// reference taken piecewise linear in time in the first term and piecewise
/// constant in the second.
pub fn error_e(traj: &Trajectory, reference: &Trajectory) -> Result<(f64, f64)> {
    if !reference.mesh.nests(&traj.mesh) {
        return Err(FracError::Incompatible("reference mesh does not contain the trajectory mesh".into()));
    }
    if (reference.t_final - traj.t_final).abs() > 1e-12 * traj.t_final || reference.params.s != traj.params.s {
        return Err(FracError::Incompatible("final time or fractional order differ".into()));
    }
    let fine = &reference.mesh;
    let top = traj.mesh.partition.y_max * (1.0 + 1e-12);
    let prolong = |free: &[f64]| -> Vec<f64> {
        let field = FeField::from_free(&traj.mesh, free);
        (0..fine.n_free())
            .map(|f| {
                let (i, j) = fine.free_to_node(f);
                let (x, y) = fine.node_coords(i, j);
                if y > top {
                    0.0
                } else {
                    field.value(x, y)
                }
            })
            .collect()
    };
    let coarse: Vec<Vec<f64>> = (0..=traj.steps()).map(|k| traj.state(k).map(&prolong)).collect::<Result<_>>()?;
    let m = assemble_trace_mass(&fine.base);
    let a = assemble_stiffness(fine, &reference.params)?;
    let nt = fine.n_trace();

    let mut linf = 0.0f64;
    for t in sample_times(traj) {
        let (k, th) = locate_time(t, traj.tau, traj.steps());
        let v = blend(&coarse[k][..nt], &coarse[k + 1][..nt], th);
        let r = trace_interp_eval(reference, t, Interpolant::Hat)?;
        let d: Vec<f64> = r.iter().zip(&v).map(|(a, b)| a - b).collect();
        linf = linf.max(m.quad_form(&d).sqrt());
    }

    let ref_times: Vec<f64> = (0..=reference.steps()).map(|k| reference.time(k)).collect();
    let mut l2 = 0.0;
    for (t0, t1, k) in merged_grid(traj, &ref_times) {
        let (m, _) = locate_time(0.5 * (t0 + t1), reference.tau, reference.steps());
        let d: Vec<f64> = reference.state(m + 1)?.iter().zip(&coarse[k + 1]).map(|(a, b)| a - b).collect();
        l2 += (t1 - t0) * reference.params.d_s * a.quad_form(&d);
    }
    Ok((linf, l2.sqrt()))
}

/// Error functional `E` against an exact cylinder function `w(t)`.
/// The gradient term uses two Gauss points in time per step.
pub fn error_e_exact<W>(traj: &Trajectory, w: W) -> Result<(f64, f64)>
where
    W: Fn(f64) -> Box<dyn CylinderFunction>,
{
    let mut linf = 0.0f64;
    for t in sample_times(traj) {
        let u = trace_interp_eval(traj, t, Interpolant::Hat)?;
        let wt = w(t);
        linf = linf.max(crate::extension::trace_l2_error(|x| wt.trace(x), &traj.mesh.base, &u));
    }
    let mut l2 = 0.0;
    for k in 0..traj.steps() {
        let (t0, t1) = (traj.time(k), traj.time(k + 1));
        let v = traj.state(k + 1)?;
        for (g, q) in GAUSS2 {
            let e = crate::extension::weighted_gradient_error(w(t0 + g * (t1 - t0)).as_ref(), &traj.mesh, v, &traj.params);
            l2 += q * (t1 - t0) * e * e;
        }
    }
    Ok((linf, l2.sqrt()))
}

/// Error functional `ℰ` against an exact solution given by its sine
/// coefficients at any time; the `H^s` term uses eight Gauss points per step.
pub fn error_cal_e_exact<U>(traj: &Trajectory, u: U) -> Result<(f64, f64)>
where
    U: Fn(f64) -> SpectralField,
{
    let fe = SpectralTrajectory::from_trajectory(traj, traj.mesh.n_trace());
    let mut linf = 0.0f64;
    for t in sample_times(traj) {
        linf = linf.max(u(t).sub(&fe.eval(t)).l2_norm());
    }
    let rule = crate::quadrature::GaussLegendre::new(8);
    let mut l2 = 0.0;
    for k in 0..traj.steps() {
        for (t, w) in rule.on_interval(traj.time(k), traj.time(k + 1)) {
            l2 += w * hs_norm(&u(t).sub(&fe.fields[k + 1]), traj.params.s).powi(2);
        }
    }
    Ok((linf, l2.sqrt()))
}

/// A trajectory of sine-coefficient fields at increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTrajectory {
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
}

impl SpectralTrajectory {
    pub fn new(times: Vec<f64>, fields: Vec<SpectralField>) -> Result<Self> {
        check_len("spectral trajectory fields", times.len(), fields.len())?;
        if times.len() < 2 || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FracError::Domain("times must be increasing with at least two entries".into()));
        }
        let n = fields[0].n_modes();
        if fields.iter().any(|f| f.n_modes() != n) {
            return Err(FracError::Incompatible("fields differ in mode count".into()));
        }
        Ok(Self { times, fields })
    }

    /// Projection of the traces of a finite element run onto `n_modes` sine modes.
    pub fn from_trajectory(traj: &Trajectory, n_modes: usize) -> Self {
        let length = traj.mesh.base.length;
        Self {
            times: (0..=traj.steps()).map(|k| traj.time(k)).collect(),
            fields: traj.traces.iter().map(|u| project_fe_trace(u, n_modes, length)).collect(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.fields[0].n_modes()
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// Piecewise linear interpolant in time.
    pub fn eval(&self, t: f64) -> SpectralField {
        let k = self.times.partition_point(|&s| s < t).clamp(1, self.times.len() - 1) - 1;
        let th = ((t - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        let mut f = self.fields[k].clone();
        for c in f.coeffs.iter_mut() {
            *c *= 1.0 - th;
        }
        f.axpy(th, &self.fields[k + 1]);
        f
    }

    /// Piecewise constant interpolant: `fields[m+1]` on `(t_m, t_{m+1}]`.
    pub fn eval_bar(&self, t: f64) -> &SpectralField {
        &self.fields[self.times.partition_point(|&s| s < t).clamp(1, self.times.len() - 1)]
    }

    /// `t,c_1,...,c_N` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for l in 1..=self.n_modes() {
            write!(w, ",c_{l}")?;
        }
        writeln!(w)?;
        for (t, f) in self.times.iter().zip(&self.fields) {
            write!(w, "{t:.16e}")?;
            for c in &f.coeffs {
                write!(w, ",{c:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// `max_t ‖u(t)‖_{L²}` over the stored times.
    pub fn max_l2(&self) -> f64 {
        self.fields.iter().map(SpectralField::l2_norm).fold(0.0, f64::max)
    }
}

/// Error functional `ℰ` against a spectral reference (piecewise linear in
/// time in the first term, piecewise constant in the second). The finite element traces are projected exactly onto the
/// reference modes, so the reference needs at least as many modes as there
/// are trace nodes. Returns `(‖u - Û‖_{L∞(0,T;L²)}, ‖u - Ū‖_{L²(0,T;H^s)})`.
pub fn error_cal_e(traj: &Trajectory, reference: &SpectralTrajectory) -> Result<(f64, f64)> {
    let n = reference.n_modes();
    if n < traj.mesh.n_trace() {
        return Err(FracError::Incompatible(format!(
            "reference has {n} modes, fewer than the {} trace nodes",
            traj.mesh.n_trace()
        )));
    }
    if (reference.t_final() - traj.t_final).abs() > 1e-12 * traj.t_final || reference.times[0] != 0.0 {
        return Err(FracError::Incompatible("reference does not cover [0, T]".into()));
    }
    let fe = SpectralTrajectory::from_trajectory(traj, n);
    let s = traj.params.s;

    let mut linf = 0.0f64;
    for t in sample_times(traj) {
        let e = reference.eval(t).sub(&fe.eval(t));
        linf = linf.max(e.l2_norm());
    }
    let mut l2 = 0.0;
    for (t0, t1, k) in merged_grid(traj, &reference.times) {
        let e = reference.eval_bar(0.5 * (t0 + t1)).sub(&fe.fields[k + 1]);
        l2 += (t1 - t0) * hs_norm(&e, s).powi(2);
    }
    Ok((linf, l2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{base_mesh, graded_partition, tensor_mesh};
    use crate::sparse::cg_solve;
    use crate::vi::build_step_system;
    use std::f64::consts::PI;

    fn mesh(s: f64, n: usize, m: usize) -> TensorMesh {
        let p = FracParams::new(s).unwrap();
        tensor_mesh(base_mesh(n, 1.0).unwrap(), graded_partition(2.0, m, 1.05 * p.gamma_min, &p).unwrap())
    }

    #[test]
    fn forcing_averages() {
        let nodes = [0.25, 0.5];
        let c = Forcing::new(|_, _| 3.0);
        for mode in [ForcingMode::Averaged, ForcingMode::RightLimit] {
            let v = time_average_f(Some(&c), &nodes, 4, 0.1, mode).unwrap();
            assert!(v.iter().all(|x| (x - 3.0).abs() < 1e-14));
        }
        let lin = Forcing::new(|_, t| t);
        let avg = time_average_f(Some(&lin), &nodes, 0, 0.2, ForcingMode::Averaged).unwrap();
        assert!((avg[0] - 0.1).abs() < 1e-14);
        assert_eq!(time_average_f(Some(&lin), &nodes, 0, 0.2, ForcingMode::RightLimit).unwrap()[0], 0.0);
        let decay = Forcing::new(|x, t| (PI * x).sin() * (-t).exp());
        let avg = time_average_f(Some(&decay), &nodes, 0, 0.1, ForcingMode::Averaged).unwrap();
        for (x, v) in nodes.iter().zip(avg) {
            let expect = (PI * x).sin() * (1.0 - (-0.1f64).exp()) / 0.1;
            assert!((v - expect).abs() < 1e-12);
        }
        let jump = Forcing::new(|_, t| if t < 0.25 { 1.0 } else { -1.0 }).with_breakpoints(vec![0.25]);
        let avg = time_average_f(Some(&jump), &nodes, 1, 0.2, ForcingMode::Averaged).unwrap();
        assert!((avg[0] + 0.5).abs() < 1e-12);
        assert_eq!(time_average_f(None, &nodes, 0, 0.1, ForcingMode::Averaged).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let prob = ProblemData::new(|_| -1.0, |_| 0.0, 0.5, 0.5);
        let disc = Discretization {
            mesh: mesh(0.5, 8, 6),
            steps: 4,
            mode: ForcingMode::Averaged,
        };
        let traj = run(&prob, &disc).unwrap();
        assert!(traj.traces.iter().flatten().all(|v| *v == 0.0));
        let e = energy_diagnostics(&traj);
        assert_eq!(e.trace_increments + e.final_gradient + e.gradient_increments + e.data_bound, 0.0);
        assert_eq!(e.ratios(), [0.0; 3]);
    }

    #[test]
    fn obstacle_equal_to_initial_datum() {
        let psi = |x: f64| 0.2 - (x - 0.5).abs();
        let prob = ProblemData::new(psi, psi, 0.1, 0.6);
        let m = mesh(0.6, 10, 6);
        let moll = make_mollifier(&m.base, &m.partition);
        let v0 = init_state(&prob, &m, &moll, &prob_params(&prob)).unwrap();
        assert_eq!(&v0[..m.n_trace()], discrete_obstacle(&prob, &m.base, &moll).as_slice());
        let traj = run(
            &prob,
            &Discretization {
                mesh: m,
                steps: 5,
                mode: ForcingMode::Averaged,
            },
        )
        .unwrap();
        assert!(traj.min_gap() >= -1e-12);
        assert!(traj.max_residual() < 1e-10);
        assert!(traj.active_sets.iter().all(|a| !a.is_empty()));
    }

    fn prob_params(p: &ProblemData) -> FracParams {
        FracParams::new(p.s).unwrap()
    }

    #[test]
    fn infeasible_data_rejected() {
        let m = mesh(0.5, 8, 4);
        let disc = Discretization {
            mesh: m,
            steps: 2,
            mode: ForcingMode::Averaged,
        };
        let below = ProblemData::new(|_| -0.1, |x: f64| -0.2 * (PI * x).sin(), 0.1, 0.5);
        assert!(matches!(run(&below, &disc), Err(FracError::Infeasible(_))));
        let positive_boundary = ProblemData::new(|_| 0.1, |_| 0.2, 0.1, 0.5);
        assert!(matches!(run(&positive_boundary, &disc), Err(FracError::Infeasible(_))));
    }

    #[test]
    fn inactive_obstacle_matches_uncondensed_linear_solve() {
        let s = 0.4;
        let prob = ProblemData::new(|_| -1e6, |x: f64| (PI * x).sin() + 0.3 * (3.0 * PI * x).sin(), 0.2, s)
            .with_forcing(Forcing::new(|x, t| x * (1.0 - x) * (1.0 + t)));
        let m = mesh(s, 12, 8);
        let steps = 6;
        let traj = run(
            &prob,
            &Discretization {
                mesh: m.clone(),
                steps,
                mode: ForcingMode::Averaged,
            },
        )
        .unwrap();
        assert!(traj.active_sets.iter().all(|a| a.is_empty()));

        let p = FracParams::new(s).unwrap();
        let a = assemble_stiffness(&m, &p).unwrap();
        let mt = assemble_trace_mass(&m.base);
        let tau = 0.2 / steps as f64;
        let mut v = traj.state(0).unwrap().to_vec();
        for k in 0..steps {
            let load = time_average_f(prob.forcing.as_ref(), m.base.interior_nodes(), k, tau, ForcingMode::Averaged).unwrap();
            let lb = vec![-1e300; m.n_trace()];
            let sys = build_step_system(&a, &mt, tau, &v[..m.n_trace()], &load, &lb).unwrap();
            v = cg_solve(&sys.matrix, &sys.rhs, 1e-14).unwrap();
            let got = traj.state(k + 1).unwrap();
            let err = v.iter().zip(got).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "step {k}: {err}");
        }
    }

    #[test]
    fn interpolants() {
        let prob = ProblemData::new(|_| -1.0, |x: f64| (PI * x).sin(), 0.3, 0.5);
        let traj = run(
            &prob,
            &Discretization {
                mesh: mesh(0.5, 6, 4),
                steps: 3,
                mode: ForcingMode::Averaged,
            },
        )
        .unwrap();
        let st = traj.states.as_ref().unwrap();
        assert_eq!(interp_eval(&traj, 0.1, Interpolant::Hat).unwrap(), st[1]);
        assert_eq!(interp_eval(&traj, 0.0, Interpolant::Hat).unwrap(), st[0]);
        assert_eq!(interp_eval(&traj, 0.0, Interpolant::Bar).unwrap(), st[1]);
        assert_eq!(interp_eval(&traj, 0.1 + 1e-9, Interpolant::Bar).unwrap(), st[2]);
        assert_eq!(interp_eval(&traj, 0.1, Interpolant::Bar).unwrap(), st[1]);
        let mid = interp_eval(&traj, 0.15, Interpolant::Hat).unwrap();
        for ((m, a), b) in mid.iter().zip(&st[1]).zip(&st[2]) {
            assert!((m - 0.5 * (a + b)).abs() < 1e-15);
        }
        assert!(interp_eval(&traj, 0.31, Interpolant::Hat).is_err());
        assert!(interp_eval(&traj, -0.01, Interpolant::Hat).is_err());
    }

    #[test]
    fn error_functionals_closed_forms() {
        let s = 0.5;
        let prob = ProblemData::new(|_| -1.0, |x: f64| (PI * x).sin(), 0.5, s);
        let m = mesh(s, 8, 6);
        let traj = run(
            &prob,
            &Discretization {
                mesh: m.clone(),
                steps: 4,
                mode: ForcingMode::Averaged,
            },
        )
        .unwrap();
        assert_eq!(error_e(&traj, &traj).unwrap(), (0.0, 0.0));
        let spec = SpectralTrajectory::from_trajectory(&traj, m.n_trace());
        assert_eq!(error_cal_e(&traj, &spec).unwrap(), (0.0, 0.0));
        assert!(matches!(
            error_cal_e(&traj, &SpectralTrajectory::from_trajectory(&traj, 3)),
            Err(FracError::Incompatible(_))
        ));

        // constant shift of the trace by c on the interior nodes
        let mut shifted = traj.clone();
        let c = 0.01;
        for u in shifted.states.as_mut().unwrap().iter_mut() {
            u[..m.n_trace()].iter_mut().for_each(|v| *v += c);
        }
        let mt = assemble_trace_mass(&m.base);
        let ones = vec![c; m.n_trace()];
        let (linf, _) = error_e(&shifted, &traj).unwrap();
        assert!((linf - mt.quad_form(&ones).sqrt()).abs() < 1e-14);

        // zero trajectory against e^{-t} φ_1
        let zero = run(
            &ProblemData::new(|_| -1.0, |_| 0.0, 1.0, s),
            &Discretization {
                mesh: m.clone(),
                steps: 4,
                mode: ForcingMode::Averaged,
            },
        )
        .unwrap();
        let n = 20_001;
        let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let fields = times
            .iter()
            .map(|t| {
                let mut f = SpectralField::unit(1, m.n_trace(), 1.0);
                f.coeffs[0] = (-t).exp();
                f
            })
            .collect();
        let refr = SpectralTrajectory::new(times, fields).unwrap();
        let (linf, hs) = error_cal_e(&zero, &refr).unwrap();
        assert!((linf - 1.0).abs() < 1e-14);
        let dt = 1.0 / (n - 1) as f64;
        let discrete: f64 = (1..n).map(|i| dt * (-2.0 * i as f64 * dt).exp()).sum();
        assert!((hs - PI.powf(s) * discrete.sqrt()).abs() < 1e-12);
        let expect = PI.powf(s) * ((1.0 - (-2.0f64).exp()) / 2.0).sqrt();
        assert!((hs - expect).abs() < 1e-4 * expect);
    }

    #[test]
    fn single_step_energy_by_hand() {
        // 2 base cells, one trace node, one graded cell: every quantity is a scalar
        let s = 0.5;
        let m = mesh(s, 2, 2);
        let prob = ProblemData::new(|_| -1.0, |x: f64| 1.0 - (2.0 * x - 1.0).abs(), 0.25, s);
        let traj = run(
            &prob,
            &Discretization {
                mesh: m.clone(),
                steps: 1,
                mode: ForcingMode::Averaged,
            },
        )
        .unwrap();
        let p = FracParams::new(s).unwrap();
        let a = assemble_stiffness(&m, &p).unwrap().to_dense();
        let mt = assemble_trace_mass(&m.base).to_dense()[(0, 0)];
        let v0 = nalgebra::DVector::from_vec(traj.state(0).unwrap().to_vec());
        let mut s_mat = a.clone();
        s_mat[(0, 0)] += mt / 0.25;
        let mut rhs = nalgebra::DVector::zeros(v0.len());
        rhs[0] = mt * v0[0] / 0.25;
        let v1 = s_mat.cholesky().unwrap().solve(&rhs);
        let d = &v1 - &v0;
        let e = energy_diagnostics(&traj);
        let grad = |v: &nalgebra::DVector<f64>| p.d_s * (v.transpose() * &a * v)[(0, 0)];
        assert!((e.trace_increments - mt * d[0] * d[0]).abs() < 1e-13);
        assert!((e.final_gradient - 0.25 * grad(&v1)).abs() < 1e-13);
        assert!((e.gradient_increments - 0.25 * grad(&d)).abs() < 1e-13);
        assert!((e.data_bound - 0.25 * grad(&v0)).abs() < 1e-13);
    }

    #[test]
    fn trajectory_csv_shape() {
        let prob = ProblemData::new(|_| -1.0, |x: f64| (PI * x).sin(), 0.2, 0.5);
        let traj = run(
            &prob,
            &Discretization {
                mesh: mesh(0.5, 4, 3),
                steps: 2,
                mode: ForcingMode::RightLimit,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 7));
    }
}
