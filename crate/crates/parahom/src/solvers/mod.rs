//! Reference parabolic solvers: theta scheme (Crank-Nicolson) with a
//! conservative flux discretization, coefficients evaluated at face midpoints
//! and half-time levels. Covers the fine eps-problem, the homogenized
//! problem, and the backward dual problem via time reversal.

pub mod problem;

pub use problem::{AnalyticField, FieldTerm, ProblemData, SpaceFactor, SpaceKind, TimeFactor};

use crate::effective::EffectiveTensor;
use crate::error::{Error, Result};
use crate::fields::{CoefficientSpec, MacroGrid, MacroGridFn, MacroLinear, Mat};
use crate::linsolve::{CsrMatrix, LinearSolver, PreparedSolver};

/// Coefficient source for the stepper.
pub enum CoefficientHandle<'a> {
    /// `A(x, t; x/eps, t/eps^2)` evaluated exactly.
    Oscillatory { spec: &'a CoefficientSpec, eps: f64 },
    /// `Ahat(x, t)` interpolated from its sample grid.
    Effective(&'a EffectiveTensor),
}

/// Coefficient as seen by one forward march; the dual problem runs the
/// forward scheme on the time-reversed adjoint coefficient.
pub struct StepCoefficient<'a> {
    pub handle: CoefficientHandle<'a>,
    /// `Some(T)`: evaluate at `T - t` and transpose (dual problems).
    pub reversed_adjoint: Option<f64>,
}

impl<'a> StepCoefficient<'a> {
    pub fn forward(handle: CoefficientHandle<'a>) -> Self {
        StepCoefficient {
            handle,
            reversed_adjoint: None,
        }
    }

    pub fn dual(handle: CoefficientHandle<'a>, t_end: f64) -> Self {
        StepCoefficient {
            handle,
            reversed_adjoint: Some(t_end),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.handle {
            CoefficientHandle::Oscillatory { spec, .. } => spec.dim,
            CoefficientHandle::Effective(et) => et.dim,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match &self.handle {
            CoefficientHandle::Oscillatory { spec, .. } => spec.is_time_independent(),
            CoefficientHandle::Effective(et) => et.macro_grid.n_steps == 0,
        }
    }

    fn eval(&self, x: [f64; 2], t: f64) -> Mat {
        let tt = match self.reversed_adjoint {
            Some(t_end) => t_end - t,
            None => t,
        };
        let dim = self.dim();
        let mut m = match &self.handle {
            CoefficientHandle::Oscillatory { spec, eps } => {
                let y = [x[0] / eps, x[1] / eps];
                let y = [y[0] - y[0].floor(), y[1] - y[1].floor()];
                let tau = tt / (eps * eps);
                let tau = tau - tau.floor();
                spec.eval(&x[..dim], tt, &y[..dim], tau)
            }
            CoefficientHandle::Effective(et) => {
                let g = &et.macro_grid;
                let lin = MacroLinear::new(g, x, tt.clamp(0.0, g.t_end));
                let mut out = [[0.0; 2]; 2];
                for i in 0..dim {
                    for j in 0..dim {
                        let mut acc = 0.0;
                        for k in 0..lin.n {
                            acc += lin.weights[k] * et.per_node[lin.corners[k]][i][j];
                        }
                        out[i][j] = acc;
                    }
                }
                out
            }
        };
        if self.reversed_adjoint.is_some() {
            m = [[m[0][0], m[1][0]], [m[0][1], m[1][1]]];
        }
        m
    }
}

/// Stiffness matrix `K = -div(A grad .)` on the Dirichlet box at one time
/// level: face-midpoint coefficients, 3/5-point flux stencil plus averaged
/// tangential differences for the mixed entries. Boundary rows are zero (the
/// step matrix overwrites them with identity).
fn assemble_stiffness(grid: &MacroGrid, coeff: &StepCoefficient, t: f64) -> CsrMatrix {
    let dim = coeff.dim();
    let np = grid.nodes_per_axis();
    let n = grid.space_len();
    let h = grid.h();
    let inv_h2 = 1.0 / (h * h);
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (3 + 6 * (dim - 1)));

    let interior = |ix: [usize; 2]| !grid.is_space_boundary(ix);

    // iterate faces along each axis
    for k in 0..dim {
        let (outer_max, inner_max) = if dim == 1 { (1, grid.n_cells) } else { (np, grid.n_cells) };
        for outer in 0..outer_max {
            for inner in 0..inner_max {
                let p_ix = if dim == 1 {
                    [inner, 0]
                } else if k == 0 {
                    [inner, outer]
                } else {
                    [outer, inner]
                };
                let mut q_ix = p_ix;
                q_ix[k] += 1;
                let p = grid.space_idx(p_ix);
                let q = grid.space_idx(q_ix);
                let mut x_face = grid.x_of(p_ix);
                x_face[k] += 0.5 * h;
                let a = coeff.eval(x_face, t);

                // stencil of flux/h through this face
                let mut cols = [0usize; 6];
                let mut vals = [0.0f64; 6];
                let mut m = 0;
                cols[m] = q;
                vals[m] = a[k][k] * inv_h2;
                m += 1;
                cols[m] = p;
                vals[m] = -a[k][k] * inv_h2;
                m += 1;
                if dim == 2 {
                    let l = 1 - k;
                    let c = a[k][l] * 0.25 * inv_h2;
                    if c != 0.0 {
                        // averaged centered tangential difference; clamp at the
                        // box edge (values there are Dirichlet zeros anyway)
                        let mut add = |ix: [usize; 2], sign: f64| {
                            cols[m] = grid.space_idx(ix);
                            vals[m] = sign * c;
                            m += 1;
                        };
                        let mut up_p = p_ix;
                        let mut dn_p = p_ix;
                        let mut up_q = q_ix;
                        let mut dn_q = q_ix;
                        if p_ix[l] + 1 <= grid.n_cells && p_ix[l] >= 1 {
                            up_p[l] += 1;
                            dn_p[l] -= 1;
                            add(up_p, 1.0);
                            add(dn_p, -1.0);
                        }
                        if q_ix[l] + 1 <= grid.n_cells && q_ix[l] >= 1 {
                            up_q[l] += 1;
                            dn_q[l] -= 1;
                            add(up_q, 1.0);
                            add(dn_q, -1.0);
                        }
                    }
                }
                if interior(p_ix) {
                    for i in 0..m {
                        trip.push((p, cols[i], -vals[i]));
                    }
                }
                if interior(q_ix) {
                    for i in 0..m {
                        trip.push((q, cols[i], vals[i]));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

/// Step matrix `M = I/dt + theta K` on interior rows, identity on boundary rows.
fn step_matrix(grid: &MacroGrid, k: &CsrMatrix, theta: f64, dt: f64) -> CsrMatrix {
    let n = grid.space_len();
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(k.nnz() + n);
    for sp in 0..n {
        let ix = grid.space_coords(sp);
        if grid.is_space_boundary(ix) {
            trip.push((sp, sp, 1.0));
        } else {
            trip.push((sp, sp, 1.0 / dt));
            let (cols, vals) = k.row(sp);
            for (c, v) in cols.iter().zip(vals.iter()) {
                trip.push((sp, *c, theta * v));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepDiagnostics {
    pub max_iterations: usize,
    pub worst_residual: f64,
}

/// Pull-style theta-scheme marcher: one parabolic solve advanced slice by
/// slice, so several solves can run in lockstep with bounded memory.
pub struct ThetaMarcher<'a> {
    grid: MacroGrid,
    coeff: StepCoefficient<'a>,
    source: Box<dyn Fn([f64; 2], f64) -> f64 + 'a>,
    solver: &'a dyn LinearSolver,
    theta: f64,
    u: Vec<f64>,
    step: usize,
    cached: Option<(CsrMatrix, Box<dyn PreparedSolver>)>,
    ku: Vec<f64>,
    rhs: Vec<f64>,
    pub diagnostics: StepDiagnostics,
}

impl<'a> ThetaMarcher<'a> {
    pub fn new(
        grid: MacroGrid,
        coeff: StepCoefficient<'a>,
        initial: impl Fn([f64; 2]) -> f64,
        source: impl Fn([f64; 2], f64) -> f64 + 'a,
        solver: &'a dyn LinearSolver,
        theta: f64,
    ) -> Self {
        let n = grid.space_len();
        let mut u = vec![0.0; n];
        for sp in 0..n {
            let ix = grid.space_coords(sp);
            u[sp] = if grid.is_space_boundary(ix) {
                0.0
            } else {
                initial(grid.x_of(ix))
            };
        }
        ThetaMarcher {
            grid,
            coeff,
            source: Box::new(source),
            solver,
            theta,
            u,
            step: 0,
            cached: None,
            ku: vec![0.0; n],
            rhs: vec![0.0; n],
            diagnostics: StepDiagnostics::default(),
        }
    }

    #[inline]
    pub fn current(&self) -> &[f64] {
        &self.u
    }

    #[inline]
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn done(&self) -> bool {
        self.step >= self.grid.n_steps
    }

    /// Advance one step (no-op past the horizon).
    pub fn advance(&mut self) -> Result<()> {
        if self.done() {
            return Ok(());
        }
        let grid = &self.grid;
        let n = grid.space_len();
        let dt = grid.dt();
        let t_half = (self.step as f64 + 0.5) * dt;
        if self.cached.is_none() || !self.coeff.is_time_independent() {
            let k = assemble_stiffness(grid, &self.coeff, t_half);
            let m = step_matrix(grid, &k, self.theta, dt);
            let prepared = self
                .solver
                .prepare(&m)
                .map_err(|e| e.at(format!("step {}", self.step)))?;
            self.cached = Some((k, prepared));
        }
        let (k, prepared) = self.cached.as_ref().unwrap();
        k.matvec(&self.u, &mut self.ku);
        for sp in 0..n {
            let ix = grid.space_coords(sp);
            self.rhs[sp] = if grid.is_space_boundary(ix) {
                0.0
            } else {
                self.u[sp] / dt - (1.0 - self.theta) * self.ku[sp]
                    + (self.source)(grid.x_of(ix), t_half)
            };
        }
        let step = self.step;
        let (next, stats) = prepared.solve(&self.rhs, Some(&self.u)).map_err(|e| match e {
            Error::SolverDiverged { residual, .. } => Error::StepSolverDiverged { step, residual },
            other => other,
        })?;
        self.diagnostics.max_iterations = self.diagnostics.max_iterations.max(stats.iterations);
        self.diagnostics.worst_residual = self.diagnostics.worst_residual.max(stats.residual);
        self.u = next;
        self.step += 1;
        Ok(())
    }
}

/// March the theta scheme, handing each time slice (including the initial
/// one) to `sink` in order. The scheme is the one-leg midpoint form: both the
/// coefficient and the source are evaluated at `t_{n+1/2}`.
pub fn theta_march(
    grid: &MacroGrid,
    coeff: StepCoefficient<'_>,
    initial: &dyn Fn([f64; 2]) -> f64,
    source: &dyn Fn([f64; 2], f64) -> f64,
    solver: &dyn LinearSolver,
    theta: f64,
    mut sink: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<StepDiagnostics> {
    let mut marcher = ThetaMarcher::new(*grid, coeff, initial, source, solver, theta);
    sink(0, marcher.current())?;
    while !marcher.done() {
        marcher.advance()?;
        sink(marcher.step_index(), marcher.current())?;
    }
    Ok(marcher.diagnostics)
}

/// Materialized solution with per-run solver diagnostics.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub field: MacroGridFn,
    pub diagnostics: StepDiagnostics,
}

fn march_materialized(
    grid: &MacroGrid,
    coeff: StepCoefficient<'_>,
    data: &ProblemData,
    solver: &dyn LinearSolver,
    theta: f64,
) -> Result<DiscreteSolution> {
    let dim = coeff.dim();
    let mut field = MacroGridFn::zeros(*grid);
    let nsp = grid.space_len();
    let initial = |x: [f64; 2]| data.initial.eval(dim, x, 0.0);
    let source = |x: [f64; 2], t: f64| data.source.eval(dim, x, t);
    let values = &mut field.values;
    let diagnostics = theta_march(grid, coeff, &initial, &source, solver, theta, |it, slice| {
        values[it * nsp..(it + 1) * nsp].copy_from_slice(slice);
        Ok(())
    })?;
    Ok(DiscreteSolution { field, diagnostics })
}

/// Resolution guard for oscillatory runs: `h <= eps/16`, `dt <= eps^2/16`,
/// `eps <= sqrt(T)`.
pub fn check_fine_resolution(spec: &CoefficientSpec, eps: f64, grid: &MacroGrid) -> Result<()> {
    if !spec.has_micro_dependence() {
        return Ok(());
    }
    if eps > grid.t_end.sqrt() {
        return Err(Error::EpsilonTooLarge {
            eps,
            limit: grid.t_end.sqrt(),
            reason: "fine solve requires eps <= sqrt(T)".into(),
        });
    }
    let tol = 1e-12;
    if grid.h() > eps / 16.0 + tol {
        return Err(Error::UnderResolved {
            eps,
            detail: format!("h = {} > eps/16 = {}", grid.h(), eps / 16.0),
        });
    }
    if grid.dt() > eps * eps / 16.0 + tol {
        return Err(Error::UnderResolved {
            eps,
            detail: format!("dt = {} > eps^2/16 = {}", grid.dt(), eps * eps / 16.0),
        });
    }
    Ok(())
}

/// Fine eps-problem `d_t u + L_eps u = f`, `u = 0` on the lateral boundary,
/// `u = h` at `t = 0`.
pub fn solve_fine(
    spec: &CoefficientSpec,
    eps: f64,
    data: &ProblemData,
    grid: &MacroGrid,
    solver: &dyn LinearSolver,
) -> Result<DiscreteSolution> {
    check_fine_resolution(spec, eps, grid)?;
    data.validate(spec.dim)?;
    let coeff = StepCoefficient::forward(CoefficientHandle::Oscillatory { spec, eps });
    march_materialized(grid, coeff, data, solver, 0.5)
}

/// Homogenized problem with the effective tensor.
pub fn solve_homogenized(
    tensor: &EffectiveTensor,
    data: &ProblemData,
    grid: &MacroGrid,
    solver: &dyn LinearSolver,
) -> Result<DiscreteSolution> {
    data.validate(tensor.dim)?;
    let coeff = StepCoefficient::forward(CoefficientHandle::Effective(tensor));
    march_materialized(grid, coeff, data, solver, 0.5)
}

/// Dual problem `-d_t v + L* v = F`, `v(T) = 0`: solved by the time-reversal
/// substitution (forward march with the reversed adjoint coefficient and the
/// reversed source), then flipped back.
pub fn solve_dual(
    handle: CoefficientHandle<'_>,
    source: &AnalyticField,
    grid: &MacroGrid,
    solver: &dyn LinearSolver,
) -> Result<DiscreteSolution> {
    let t_end = grid.t_end;
    let coeff = StepCoefficient::dual(handle, t_end);
    let dim = coeff.dim();
    let mut field = MacroGridFn::zeros(*grid);
    let nsp = grid.space_len();
    let initial = |_x: [f64; 2]| 0.0;
    let src = |x: [f64; 2], s: f64| source.eval(dim, x, t_end - s);
    let values = &mut field.values;
    let nt = grid.time_len();
    let diagnostics = theta_march(grid, coeff, &initial, &src, solver, 0.5, |it, slice| {
        // slice `it` of the reversed problem is time `T - s`, i.e. index nt-1-it
        let dst = nt - 1 - it;
        values[dst * nsp..(dst + 1) * nsp].copy_from_slice(slice);
        Ok(())
    })?;
    Ok(DiscreteSolution { field, diagnostics })
}
