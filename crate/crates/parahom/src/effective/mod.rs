//! Effective coefficients, the flux mismatch B, and flux correctors built in
//! the parabolic manner: potentials f solve heat equations on the torus and
//! the skew-symmetric family frak B comes from their derivatives.

use crate::cell::{assemble_cell_system, solve_cell, CellProblem, CorrectorField};
use crate::error::{Error, Result};
use crate::fields::{symmetric_min_eig, MacroGrid, Mat, TorusGrid, TorusGridFn};
use crate::linsolve::LinearSolver;

/// Effective tensor sampled on a macroscopic grid, with its ellipticity
/// certificate (smallest symmetric-part eigenvalue over all nodes).
#[derive(Debug, Clone)]
pub struct EffectiveTensor {
    pub dim: usize,
    pub macro_grid: MacroGrid,
    pub per_node: Vec<Mat>,
    pub min_sym_eig: f64,
}

impl EffectiveTensor {
    /// Spatially and temporally constant tensor.
    pub fn constant(dim: usize, mat: Mat) -> Self {
        let grid = MacroGrid::new(dim, 1, 0, 1.0);
        EffectiveTensor {
            dim,
            macro_grid: grid,
            per_node: vec![mat; grid.len()],
            min_sym_eig: symmetric_min_eig(&mat, dim),
        }
    }

    pub fn certify(&self, mu: f64, tol: f64) -> Result<()> {
        if self.min_sym_eig < mu - tol {
            return Err(Error::EllipticityViolation {
                context: "effective tensor".into(),
                eigenvalue: self.min_sym_eig,
                mu,
            });
        }
        Ok(())
    }
}

/// Effective matrix at one macro node: torus average of `A + A grad_y chi`
/// (uniform-grid mean = periodic trapezoid, exact for band-limited data).
/// `grad_y chi` uses centered periodic differences.
pub fn effective_tensor_at(
    dim: usize,
    torus: TorusGrid,
    cell_a: &[Mat],
    chi: &[&TorusGridFn],
) -> Result<Mat> {
    if chi.len() != dim {
        return Err(Error::GridMismatch(format!(
            "need {dim} corrector components, got {}",
            chi.len()
        )));
    }
    for c in chi {
        if c.grid != torus {
            return Err(Error::GridMismatch("corrector grid != coefficient grid".into()));
        }
    }
    let n = torus.len();
    let mut acc = [[0.0f64; 2]; 2];
    let dchi: Vec<[TorusGridFn; 2]> = chi
        .iter()
        .map(|c| {
            let d0 = c.d_y(0);
            let d1 = if dim == 2 { c.d_y(1) } else { TorusGridFn::zeros(torus) };
            [d0, d1]
        })
        .collect();
    for flat in 0..n {
        let a = &cell_a[flat];
        for i in 0..dim {
            for j in 0..dim {
                let mut v = a[i][j];
                for k in 0..dim {
                    v += a[i][k] * dchi[j][k].values[flat];
                }
                acc[i][j] += v;
            }
        }
    }
    let mut out = [[0.0f64; 2]; 2];
    for i in 0..dim {
        for j in 0..dim {
            out[i][j] = acc[i][j] / n as f64;
        }
    }
    Ok(out)
}

/// Effective tensor over a whole corrector field.
pub fn effective_tensor(field: &CorrectorField, dim: usize) -> Result<EffectiveTensor> {
    let mut per_node = Vec::with_capacity(field.macro_grid.len());
    let mut min_eig = f64::INFINITY;
    for mn in 0..field.macro_grid.len() {
        let chi_refs: Vec<TorusGridFn> = (0..dim)
            .map(|j| TorusGridFn {
                grid: field.torus,
                values: field.chi[j].cell_values(mn).to_vec(),
            })
            .collect();
        let refs: Vec<&TorusGridFn> = chi_refs.iter().collect();
        let a_hat = effective_tensor_at(dim, field.torus, &field.cell_a[mn], &refs)?;
        min_eig = min_eig.min(symmetric_min_eig(&a_hat, dim));
        per_node.push(a_hat);
    }
    Ok(EffectiveTensor {
        dim,
        macro_grid: field.macro_grid,
        per_node,
        min_sym_eig: min_eig,
    })
}

/// Maximum node-wise deviation between the transposed effective tensor of the
/// primal problem and the effective tensor of the dual problem.
pub fn adjoint_check(primal: &CorrectorField, dual: &CorrectorField) -> Result<f64> {
    let dim = primal.chi.len();
    if dual.chi.len() != dim || primal.macro_grid.len() != dual.macro_grid.len() {
        return Err(Error::GridMismatch("primal/dual field shapes differ".into()));
    }
    let a_hat = effective_tensor(primal, dim)?;
    // dual effective tensor: averages of A* + A* grad chi*
    let mut worst = 0.0f64;
    for mn in 0..primal.macro_grid.len() {
        let a_star: Vec<Mat> = primal.cell_a[mn]
            .iter()
            .map(|m| [[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
            .collect();
        let chi_star: Vec<TorusGridFn> = (0..dim)
            .map(|j| TorusGridFn {
                grid: dual.torus,
                values: dual.chi[j].cell_values(mn).to_vec(),
            })
            .collect();
        let refs: Vec<&TorusGridFn> = chi_star.iter().collect();
        let a_hat_star = effective_tensor_at(dim, dual.torus, &a_star, &refs)?;
        for i in 0..dim {
            for j in 0..dim {
                worst = worst.max((a_hat.per_node[mn][j][i] - a_hat_star[i][j]).abs());
            }
        }
    }
    Ok(worst)
}

/// Flux mismatch at one macro node: rows `i < d` are
/// `A_ij + A_ik d_k chi_j - Ahat_ij`; row `d` (the time row) is `-chi_j`.
/// Component index is `i_bar * d + j` with `i_bar in 0..=d`, `j in 0..d`.
#[derive(Debug, Clone)]
pub struct FluxMismatch {
    pub dim: usize,
    pub torus: TorusGrid,
    pub b: Vec<TorusGridFn>,
}

pub const B_MEAN_TOL: f64 = 1e-10;

impl FluxMismatch {
    #[inline]
    pub fn component(&self, i_bar: usize, j: usize) -> &TorusGridFn {
        &self.b[i_bar * self.dim + j]
    }
}

pub fn build_flux_mismatch(
    dim: usize,
    torus: TorusGrid,
    cell_a: &[Mat],
    chi: &[&TorusGridFn],
    a_hat: &Mat,
) -> Result<FluxMismatch> {
    let n = torus.len();
    if cell_a.len() != n {
        return Err(Error::GridMismatch("coefficient array / torus mismatch".into()));
    }
    let mut b = Vec::with_capacity((dim + 1) * dim);
    let dchi: Vec<[TorusGridFn; 2]> = chi
        .iter()
        .map(|c| {
            let d0 = c.d_y(0);
            let d1 = if dim == 2 { c.d_y(1) } else { TorusGridFn::zeros(torus) };
            [d0, d1]
        })
        .collect();
    for i_bar in 0..dim {
        for j in 0..dim {
            let mut g = TorusGridFn::zeros(torus);
            for flat in 0..n {
                let a = &cell_a[flat];
                let mut v = a[i_bar][j] - a_hat[i_bar][j];
                for k in 0..dim {
                    v += a[i_bar][k] * dchi[j][k].values[flat];
                }
                g.values[flat] = v;
            }
            let scale = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            let mean = g.mean();
            if mean.abs() > B_MEAN_TOL * scale {
                return Err(Error::MeanNotZero {
                    i_bar,
                    j,
                    mean,
                });
            }
            b.push(g);
        }
    }
    for j in 0..dim {
        let mut g = TorusGridFn::zeros(torus);
        for flat in 0..n {
            g.values[flat] = -chi[j].values[flat];
        }
        b.push(g);
    }
    Ok(FluxMismatch { dim, torus, b })
}

/// Skew-symmetric flux correctors `frak B_{kbar, ibar, j}` with their
/// underlying potentials `f_{ibar, j}`. Index layout:
/// `frak_b[(kbar * (d + 1) + ibar) * d + j]`, `f[i_bar * d + j]`.
#[derive(Debug, Clone)]
pub struct FluxCorrectorSet {
    pub dim: usize,
    pub torus: TorusGrid,
    pub frak_b: Vec<TorusGridFn>,
    pub f: Vec<TorusGridFn>,
}

impl FluxCorrectorSet {
    #[inline]
    pub fn index(&self, k_bar: usize, i_bar: usize, j: usize) -> usize {
        (k_bar * (self.dim + 1) + i_bar) * self.dim + j
    }

    #[inline]
    pub fn component(&self, k_bar: usize, i_bar: usize, j: usize) -> &TorusGridFn {
        &self.frak_b[self.index(k_bar, i_bar, j)]
    }

    pub fn potential(&self, i_bar: usize, j: usize) -> &TorusGridFn {
        &self.f[i_bar * self.dim + j]
    }
}

/// Solve the heat-operator potentials `d_tau f - lap f = B` and combine their
/// centered derivatives into the skew-symmetric family.
pub fn build_flux_correctors(
    b: &FluxMismatch,
    solver: &dyn LinearSolver,
    res_tol: f64,
) -> Result<FluxCorrectorSet> {
    let mut f = Vec::with_capacity((b.dim + 1) * b.dim);
    for i_bar in 0..=b.dim {
        for j in 0..b.dim {
            let rhs = b.component(i_bar, j);
            let system = assemble_cell_system(
                b.torus,
                b.dim,
                CellProblem::FluxPotential { rhs: &rhs.values },
            )?;
            let sol = solve_cell(&system, solver, res_tol)
                .map_err(|e| e.at(format!("flux potential ({i_bar}, {j})")))?;
            f.push(sol.solution);
        }
    }
    Ok(assemble_frak_b(b.dim, b.torus, f))
}

/// As `build_flux_correctors`, but reusing a prepared heat-operator solve
/// (the operator is identical across macro nodes and components).
pub fn build_flux_correctors_prepared(
    b: &FluxMismatch,
    prepared: &crate::cell::PreparedCell,
    res_tol: f64,
) -> Result<FluxCorrectorSet> {
    let mut f = Vec::with_capacity((b.dim + 1) * b.dim);
    for i_bar in 0..=b.dim {
        for j in 0..b.dim {
            let rhs = b.component(i_bar, j);
            let sol = prepared
                .solve_with_rhs(&rhs.values, "flux potential", res_tol)
                .map_err(|e| e.at(format!("flux potential ({i_bar}, {j})")))?;
            f.push(sol.solution);
        }
    }
    Ok(assemble_frak_b(b.dim, b.torus, f))
}

fn assemble_frak_b(dim: usize, torus: TorusGrid, f: Vec<TorusGridFn>) -> FluxCorrectorSet {
    let fset = |i_bar: usize, j: usize| -> &TorusGridFn { &f[i_bar * dim + j] };
    let total = (dim + 1) * (dim + 1) * dim;
    let mut frak_b: Vec<TorusGridFn> = vec![TorusGridFn::zeros(torus); total];
    let idx = |k_bar: usize, i_bar: usize, j: usize| (k_bar * (dim + 1) + i_bar) * dim + j;

    for j in 0..dim {
        // spatial-spatial block, antisymmetric by construction
        for k_bar in 0..dim {
            for i_bar in (k_bar + 1)..dim {
                let g1 = fset(k_bar, j).d_y(i_bar);
                let g2 = fset(i_bar, j).d_y(k_bar);
                let mut v = TorusGridFn::zeros(torus);
                for flat in 0..torus.len() {
                    v.values[flat] = g1.values[flat] - g2.values[flat];
                }
                let mut neg = TorusGridFn::zeros(torus);
                for flat in 0..torus.len() {
                    neg.values[flat] = -v.values[flat];
                }
                frak_b[idx(k_bar, i_bar, j)] = v;
                frak_b[idx(i_bar, k_bar, j)] = neg;
            }
        }
        // time row / column: f_{ibar j} + d_{ibar} f_{(d+1) j}
        for i_bar in 0..dim {
            let grad_last = fset(dim, j).d_y(i_bar);
            let mut v = TorusGridFn::zeros(torus);
            for flat in 0..torus.len() {
                v.values[flat] = fset(i_bar, j).values[flat] + grad_last.values[flat];
            }
            let mut neg = TorusGridFn::zeros(torus);
            for flat in 0..torus.len() {
                neg.values[flat] = -v.values[flat];
            }
            frak_b[idx(dim, i_bar, j)] = v;
            frak_b[idx(i_bar, dim, j)] = neg;
        }
        // (d+1, d+1) entry stays identically zero
    }

    FluxCorrectorSet {
        dim,
        torus,
        frak_b,
        f,
    }
}

/// Discrete residual of the defining identity
/// `d_k frak B_{k, ibar, j} + d_tau frak B_{d+1, ibar, j} = B_{ibar, j}`,
/// computed with the same centered stencils used to assemble `frak B`.
/// Returns the RMS residual per component `(i_bar, j)`.
pub fn flux_identity_residual(fset: &FluxCorrectorSet, b: &FluxMismatch) -> Result<Vec<f64>> {
    if fset.torus != b.torus || fset.dim != b.dim {
        return Err(Error::GridMismatch("flux corrector / mismatch grids differ".into()));
    }
    let dim = fset.dim;
    let torus = fset.torus;
    let mut out = Vec::with_capacity((dim + 1) * dim);
    for i_bar in 0..=dim {
        for j in 0..dim {
            let mut div = TorusGridFn::zeros(torus);
            for k in 0..dim {
                let d = fset.component(k, i_bar, j).d_y(k);
                for flat in 0..torus.len() {
                    div.values[flat] += d.values[flat];
                }
            }
            let dtau = fset.component(dim, i_bar, j).d_tau();
            let target = b.component(i_bar, j);
            let mut acc = 0.0;
            for flat in 0..torus.len() {
                let r = div.values[flat] + dtau.values[flat] - target.values[flat];
                acc += r * r;
            }
            out.push((acc / torus.len() as f64).sqrt());
        }
    }
    Ok(out)
}

/// Discrete residual of the potential constraint
/// `d_i f_{i j} + d_tau f_{(d+1) j} = 0` (RMS per direction j).
pub fn potential_constraint_residual(fset: &FluxCorrectorSet) -> Vec<f64> {
    let dim = fset.dim;
    let torus = fset.torus;
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut w = TorusGridFn::zeros(torus);
        for i in 0..dim {
            let d = fset.potential(i, j).d_y(i);
            for flat in 0..torus.len() {
                w.values[flat] += d.values[flat];
            }
        }
        let dtau = fset.potential(dim, j).d_tau();
        let mut acc = 0.0;
        for flat in 0..torus.len() {
            let r = w.values[flat] + dtau.values[flat];
            acc += r * r;
        }
        out.push((acc / torus.len() as f64).sqrt());
    }
    out
}

#[cfg(test)]
mod tests;
