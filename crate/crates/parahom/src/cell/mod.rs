//! Periodic parabolic problems on the torus `T^{d+1}`: correctors, dual
//! correctors, and flux potentials. The tau direction is cyclic; these are
//! steady periodic-in-time problems, not initial-value marches. Zero mean is
//! enforced by a bordered (Lagrange multiplier) system.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{
    sample_cell, CoefficientSpec, FourVarGridFn, MacroGrid, Mat, TorusGrid, TorusGridFn,
};
use crate::linsolve::{CsrMatrix, LinearSolver, SolverOptions};

pub const MEAN_TOL: f64 = 1e-12;
pub const RHS_MEAN_TOL: f64 = 1e-8;

/// Discretization of the cyclic first derivative in micro time.
///
/// Centered differencing is skew-symmetric and second order, but on an even
/// number of tau levels it is blind to the alternating mode, which adds a
/// spurious kernel vector; even resolutions therefore fall back to the
/// first-order upwind stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauStencil {
    Absent,
    Centered,
    Upwind,
}

impl TauStencil {
    pub fn for_resolution(n_tau: usize) -> Self {
        match n_tau {
            1 => TauStencil::Absent,
            n if n % 2 == 1 => TauStencil::Centered,
            _ => TauStencil::Upwind,
        }
    }
}

/// Which cell problem to assemble.
pub enum CellProblem<'a> {
    /// `d_tau chi + L chi = -L(P_j)` with `L = -d_k (A_kl d_l .)`.
    Corrector { cell_a: &'a [Mat], direction: usize },
    /// `-d_tau chi* + L* chi* = -L*(P_j)`.
    DualCorrector { cell_a: &'a [Mat], direction: usize },
    /// `d_tau f - lap f = rhs` (heat operator, coefficient = identity).
    FluxPotential { rhs: &'a [f64] },
}

impl CellProblem<'_> {
    pub fn label(&self) -> String {
        match self {
            CellProblem::Corrector { direction, .. } => format!("corrector j={direction}"),
            CellProblem::DualCorrector { direction, .. } => {
                format!("dual corrector j={direction}")
            }
            CellProblem::FluxPotential { .. } => "flux potential".to_string(),
        }
    }
}

/// Assembled discrete cell operator together with its right-hand side.
/// `pure` is the (singular) operator without the mean constraint; the
/// bordered system appends one multiplier row and column.
pub struct CellSystem {
    pub torus: TorusGrid,
    pub dim: usize,
    pub pure: CsrMatrix,
    pub rhs: Vec<f64>,
    pub tau_stencil: TauStencil,
    pub label: String,
}

/// Solution of one cell problem with diagnostics.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub solution: TorusGridFn,
    pub residual: f64,
    pub mean: f64,
    pub iterations: usize,
    pub label: String,
}

struct FaceStencil {
    cols: [usize; 6],
    coeffs: [f64; 6],
    len: usize,
}

/// Flux `(A grad u)_k` across the face between `p` and its +1 neighbor `q`
/// along axis `k`, divided by h (so the divergence contribution is +/- the
/// stencil). Face coefficients are harmonic averages in 1D and arithmetic in
/// 2D; the tangential gradient at a face is the average of the two centered
/// node gradients.
fn face_flux(
    g: TorusGrid,
    dim: usize,
    cell_a: Option<&[Mat]>,
    iy: [usize; 2],
    it: usize,
    k: usize,
) -> FaceStencil {
    let n = g.n_y;
    let h = g.h_y();
    let p = g.idx(iy, it);
    let mut qy = iy;
    qy[k] = (iy[k] + 1) % n;
    let q = g.idx(qy, it);

    let a_kk = |node: usize| cell_a.map_or(1.0, |a| a[node][k][k]);
    let face_diag = if dim == 1 {
        let (ap, aq) = (a_kk(p), a_kk(q));
        2.0 * ap * aq / (ap + aq)
    } else {
        0.5 * (a_kk(p) + a_kk(q))
    };

    let mut st = FaceStencil {
        cols: [0; 6],
        coeffs: [0.0; 6],
        len: 0,
    };
    let mut push = |col: usize, val: f64| {
        st.cols[st.len] = col;
        st.coeffs[st.len] = val;
        st.len += 1;
    };

    // diagonal part: a_face * (u_q - u_p) / h^2
    push(q, face_diag / (h * h));
    push(p, -face_diag / (h * h));

    // mixed part (2D): a_kl-face * averaged centered d_l, l != k
    if dim == 2 {
        let l = 1 - k;
        let a_kl = |node: usize| cell_a.map_or(0.0, |a| a[node][k][l]);
        let face_mixed = 0.5 * (a_kl(p) + a_kl(q));
        if face_mixed != 0.0 {
            let c = face_mixed / (4.0 * h * h);
            let mut up_p = iy;
            up_p[l] = (iy[l] + 1) % n;
            let mut dn_p = iy;
            dn_p[l] = (iy[l] + n - 1) % n;
            let mut up_q = qy;
            up_q[l] = (qy[l] + 1) % n;
            let mut dn_q = qy;
            dn_q[l] = (qy[l] + n - 1) % n;
            push(g.idx(up_p, it), c);
            push(g.idx(dn_p, it), -c);
            push(g.idx(up_q, it), c);
            push(g.idx(dn_q, it), -c);
        }
    }
    st
}

/// Face value of the RHS flux component `A_{k j}` (or `A^T` for the dual),
/// averaged the same way as the operator stencil.
fn face_rhs_coeff(
    g: TorusGrid,
    dim: usize,
    cell_a: &[Mat],
    adjoint: bool,
    iy: [usize; 2],
    it: usize,
    k: usize,
    j: usize,
) -> f64 {
    let p = g.idx(iy, it);
    let mut qy = iy;
    qy[k] = (iy[k] + 1) % g.n_y;
    let q = g.idx(qy, it);
    let entry = |node: usize| {
        if adjoint {
            cell_a[node][j][k]
        } else {
            cell_a[node][k][j]
        }
    };
    if dim == 1 {
        let (ap, aq) = (entry(p), entry(q));
        2.0 * ap * aq / (ap + aq)
    } else {
        0.5 * (entry(p) + entry(q))
    }
}

/// Assemble the discrete cell problem. The RHS of the corrector kinds is the
/// discrete divergence of a face-valued coefficient column, so its mean is
/// zero to round-off by telescoping; the flux-potential RHS must be mean-zero
/// on input (compatibility), checked against `RHS_MEAN_TOL`.
pub fn assemble_cell_system(
    torus: TorusGrid,
    dim: usize,
    problem: CellProblem<'_>,
) -> Result<CellSystem> {
    let n = torus.len();
    let label = problem.label();
    let (cell_a, adjoint, direction, flux_rhs): (Option<&[Mat]>, bool, Option<usize>, Option<&[f64]>) =
        match &problem {
            CellProblem::Corrector { cell_a, direction } => {
                (Some(cell_a), false, Some(*direction), None)
            }
            CellProblem::DualCorrector { cell_a, direction } => {
                (Some(cell_a), true, Some(*direction), None)
            }
            CellProblem::FluxPotential { rhs } => (None, false, None, Some(rhs)),
        };
    if let Some(a) = cell_a {
        if a.len() != n {
            return Err(Error::GridMismatch(format!(
                "coefficient array has {} nodes, torus has {n}",
                a.len()
            )));
        }
    }

    let tau_stencil = TauStencil::for_resolution(torus.n_tau);
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(n * 8);
    let mut rhs = vec![0.0; n];

    // adjoint coefficient view for the operator: A^T
    let view_a: Option<Vec<Mat>> = cell_a.map(|a| {
        if adjoint {
            a.iter()
                .map(|m| [[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
                .collect()
        } else {
            a.to_vec()
        }
    });
    let op_a = view_a.as_deref();

    let h_tau = torus.h_tau();
    let tau_sign = if adjoint { -1.0 } else { 1.0 };

    for it in 0..torus.n_tau {
        for sp in 0..torus.space_len() {
            let (iy, _) = torus.coords(sp);
            let p = torus.idx(iy, it);

            // spatial fluxes through the + faces of this node
            for k in 0..dim {
                let st = face_flux(torus, dim, op_a, iy, it, k);
                let mut qy = iy;
                qy[k] = (iy[k] + 1) % torus.n_y;
                let q = torus.idx(qy, it);
                for m in 0..st.len {
                    // E = -div: row p gets -flux, row q gets +flux
                    trip.push((p, st.cols[m], -st.coeffs[m]));
                    trip.push((q, st.cols[m], st.coeffs[m]));
                }
                if let (Some(a), Some(j)) = (cell_a, direction) {
                    let f = face_rhs_coeff(torus, dim, a, adjoint, iy, it, k, j) / torus.h_y();
                    rhs[p] += f;
                    rhs[q] -= f;
                }
            }

            // cyclic tau derivative
            match tau_stencil {
                TauStencil::Absent => {}
                TauStencil::Centered => {
                    let up = torus.idx(iy, (it + 1) % torus.n_tau);
                    let dn = torus.idx(iy, (it + torus.n_tau - 1) % torus.n_tau);
                    let c = tau_sign * 0.5 / h_tau;
                    trip.push((p, up, c));
                    trip.push((p, dn, -c));
                }
                TauStencil::Upwind => {
                    let dn = torus.idx(iy, (it + torus.n_tau - 1) % torus.n_tau);
                    let c = tau_sign / h_tau;
                    trip.push((p, p, c));
                    trip.push((p, dn, -c));
                }
            }
        }
    }

    if let Some(b) = flux_rhs {
        if b.len() != n {
            return Err(Error::GridMismatch(format!(
                "flux-potential RHS has {} nodes, torus has {n}",
                b.len()
            )));
        }
        let mean = b.iter().sum::<f64>() / n as f64;
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        if mean.abs() > RHS_MEAN_TOL * scale.max(1.0) {
            return Err(Error::IncompatibleRhs {
                mean,
                tol: RHS_MEAN_TOL * scale.max(1.0),
            });
        }
        rhs.copy_from_slice(b);
    }

    Ok(CellSystem {
        torus,
        dim,
        pure: CsrMatrix::from_triplets(n, n, &trip),
        rhs,
        tau_stencil,
        label,
    })
}

impl CellSystem {
    /// Bordered system enforcing zero mean: one multiplier column of ones and
    /// one mean row.
    pub fn bordered(&self) -> (CsrMatrix, Vec<f64>) {
        let n = self.pure.n_rows;
        let mut trip = Vec::with_capacity(self.pure.nnz() + 2 * n);
        for r in 0..n {
            let (cols, vals) = self.pure.row(r);
            for (c, v) in cols.iter().zip(vals.iter()) {
                trip.push((r, *c, *v));
            }
            trip.push((r, n, 1.0));
            trip.push((n, r, 1.0 / n as f64));
        }
        let mut rhs = self.rhs.clone();
        rhs.push(0.0);
        (CsrMatrix::from_triplets(n + 1, n + 1, &trip), rhs)
    }

    /// Gauged system: the kernel of the pure operator is the constants, so
    /// pinning one node (identity row at node 0, zero datum) makes the system
    /// nonsingular without the dense border row that defeats fill-reducing
    /// orderings; the solution is the constrained one up to a constant, which
    /// the mean projection removes.
    pub fn pinned(&self) -> (CsrMatrix, Vec<f64>) {
        let n = self.pure.n_rows;
        let mut trip = Vec::with_capacity(self.pure.nnz() + 1);
        trip.push((0, 0, 1.0));
        for r in 1..n {
            let (cols, vals) = self.pure.row(r);
            for (c, v) in cols.iter().zip(vals.iter()) {
                trip.push((r, *c, *v));
            }
        }
        let mut rhs = self.rhs.clone();
        rhs[0] = 0.0;
        (CsrMatrix::from_triplets(n, n, &trip), rhs)
    }

    /// RHS mean (exactly zero by telescoping for the corrector kinds).
    pub fn rhs_mean(&self) -> f64 {
        self.rhs.iter().sum::<f64>() / self.rhs.len() as f64
    }
}

/// Solve an assembled cell system to `res_tol`, project the mean to zero, and
/// return the solution with diagnostics. The gauged (pinned) form goes to the
/// chosen strategy; a diverged Krylov solve falls back once to the sparse
/// direct factorization.
pub fn solve_cell(
    system: &CellSystem,
    solver: &dyn LinearSolver,
    res_tol: f64,
) -> Result<CellSolution> {
    let (gauged, rhs_g) = system.pinned();
    let (xb, stats) = match solver.solve(&gauged, &rhs_g, None) {
        Ok(out) => out,
        Err(Error::SolverDiverged { .. }) => {
            crate::linsolve::SparseLu.solve(&gauged, &rhs_g, None)?
        }
        Err(e) => return Err(e),
    };
    let n = system.pure.n_rows;
    let mut solution = TorusGridFn {
        grid: system.torus,
        values: xb[..n].to_vec(),
    };
    solution.project_zero_mean();
    // a right-hand side at round-off level (relative to the operator scale)
    // counts as zero: only then is the relative residual meaningful
    let mat_scale = system
        .pure
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let rhs_norm = system.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = system.pure.relative_residual(&solution.values, &system.rhs);
    if rhs_norm > 1e-13 * mat_scale && residual > res_tol.max(1e-12) * 100.0 {
        return Err(Error::SolverDiverged {
            iterations: stats.iterations,
            residual,
        });
    }
    let mean = solution.mean();
    debug_assert!(mean.abs() <= MEAN_TOL);
    Ok(CellSolution {
        solution,
        residual,
        mean,
        iterations: stats.iterations,
        label: system.label.clone(),
    })
}

/// A cell operator prepared for repeated right-hand sides: the flux-potential
/// heat operator is node-independent, so the study prepares it once per
/// torus grid and reuses it for every macro node and component.
pub struct PreparedCell {
    pub torus: TorusGrid,
    pure: CsrMatrix,
    prepared: Box<dyn crate::linsolve::PreparedSolver>,
    n: usize,
}

impl PreparedCell {
    pub fn new(system: &CellSystem, solver: &dyn LinearSolver) -> Result<Self> {
        let (gauged, _) = system.pinned();
        let prepared = solver.prepare(&gauged)?;
        Ok(PreparedCell {
            torus: system.torus,
            pure: system.pure.clone(),
            prepared,
            n: system.pure.n_rows,
        })
    }

    /// Solve with a replacement mean-zero right-hand side.
    pub fn solve_with_rhs(&self, rhs: &[f64], label: &str, res_tol: f64) -> Result<CellSolution> {
        let n = self.n;
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mean = rhs.iter().sum::<f64>() / n as f64;
        if mean.abs() > RHS_MEAN_TOL * scale.max(1.0) {
            return Err(Error::IncompatibleRhs {
                mean,
                tol: RHS_MEAN_TOL * scale.max(1.0),
            });
        }
        let mut rhs_b = rhs.to_vec();
        rhs_b[0] = 0.0; // gauge datum of the pinned node
        let (xb, stats) = self.prepared.solve(&rhs_b, None)?;
        let mut solution = TorusGridFn {
            grid: self.torus,
            values: xb[..n].to_vec(),
        };
        solution.project_zero_mean();
        let residual = self.pure.relative_residual(&solution.values, rhs);
        let mat_scale = self.pure.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm > 1e-13 * mat_scale && residual > res_tol.max(1e-12) * 100.0 {
            return Err(Error::SolverDiverged {
                iterations: stats.iterations,
                residual,
            });
        }
        let mean = solution.mean();
        Ok(CellSolution {
            solution,
            residual,
            mean,
            iterations: stats.iterations,
            label: label.to_string(),
        })
    }
}

/// Discrete energy identity residual: for centered tau stencils,
/// `u' (D_tau + E) u = u' rhs` and the tau term drops by skew-symmetry, so
/// `|u' E u - u' rhs|` measures solve error only.
pub fn energy_residual(system: &CellSystem, sol: &CellSolution) -> f64 {
    let n = system.pure.n_rows;
    let mut au = vec![0.0; n];
    system.pure.matvec(&sol.solution.values, &mut au);
    let quad: f64 = sol
        .solution
        .values
        .iter()
        .zip(au.iter())
        .map(|(u, a)| u * a)
        .sum();
    let rhs_u: f64 = sol
        .solution
        .values
        .iter()
        .zip(system.rhs.iter())
        .map(|(u, b)| u * b)
        .sum();
    (quad - rhs_u).abs()
}

/// Result of solving the corrector family over a macroscopic sample grid.
pub struct CorrectorField {
    /// chi_j (or the dual chi*_j) per direction j.
    pub chi: Vec<FourVarGridFn>,
    /// coefficient samples at every macro node, torus-node indexed.
    pub cell_a: Vec<Vec<Mat>>,
    pub torus: TorusGrid,
    pub macro_grid: MacroGrid,
    pub worst_residual: f64,
}

/// Independent cell solves at every node of the macroscopic sample grid
/// (parallel map, deterministic merge by node index).
pub fn solve_corrector_field(
    spec: &CoefficientSpec,
    macro_grid: MacroGrid,
    torus: TorusGrid,
    dual: bool,
    opts: &SolverOptions,
    solver: &dyn LinearSolver,
) -> Result<CorrectorField> {
    let d = spec.dim;
    let nodes = macro_grid.len();

    let per_node: Vec<Result<(Vec<Mat>, Vec<TorusGridFn>, f64)>> = (0..nodes)
        .into_par_iter()
        .map(|mn| {
            let it = mn / macro_grid.space_len();
            let sp = mn % macro_grid.space_len();
            let x = macro_grid.x_of(macro_grid.space_coords(sp));
            let t = macro_grid.t_of(it);
            let annotate = |e: Error| e.at(format!("macro node (x, t) = ({:?}, {t})", &x[..d]));
            let cell_a = sample_cell(spec, x, t, torus).map_err(annotate)?;
            let mut chis = Vec::with_capacity(d);
            let mut worst = 0.0f64;
            for j in 0..d {
                let problem = if dual {
                    CellProblem::DualCorrector {
                        cell_a: &cell_a,
                        direction: j,
                    }
                } else {
                    CellProblem::Corrector {
                        cell_a: &cell_a,
                        direction: j,
                    }
                };
                let system = assemble_cell_system(torus, d, problem).map_err(annotate)?;
                let sol = solve_cell(&system, solver, opts.res_tol).map_err(annotate)?;
                worst = worst.max(sol.residual);
                chis.push(sol.solution);
            }
            Ok((cell_a, chis, worst))
        })
        .collect();

    let mut chi: Vec<FourVarGridFn> = (0..d)
        .map(|_| FourVarGridFn::zeros(macro_grid, torus))
        .collect();
    let mut cell_a = Vec::with_capacity(nodes);
    let mut worst_residual = 0.0f64;
    for (mn, r) in per_node.into_iter().enumerate() {
        let (a, chis, worst) = r?;
        worst_residual = worst_residual.max(worst);
        for (j, c) in chis.into_iter().enumerate() {
            chi[j].cell_values_mut(mn).copy_from_slice(&c.values);
        }
        cell_a.push(a);
    }
    Ok(CorrectorField {
        chi,
        cell_a,
        torus,
        macro_grid,
        worst_residual,
    })
}

#[cfg(test)]
mod tests;
