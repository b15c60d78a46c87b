use crate::error::{Error, Result};
use crate::linsolve::csr::CsrMatrix;
use crate::linsolve::{LinearSolver, PreparedSolver, SolveStats};

/// Restarted BiCGStab with an ILU(0) preconditioner (Jacobi fallback when the
/// incomplete factorization hits a zero pivot).
pub struct BiCgStab {
    pub res_tol: f64,
    pub max_iters: usize,
}

impl Default for BiCgStab {
    fn default() -> Self {
        BiCgStab {
            res_tol: 1e-10,
            max_iters: 2000,
        }
    }
}

enum Precond {
    Ilu0 {
        lu: Vec<f64>,
        diag_ptr: Vec<usize>,
    },
    Jacobi(Vec<f64>),
}

struct BiCgStabPrepared {
    a: CsrMatrix,
    precond: Precond,
    res_tol: f64,
    max_iters: usize,
}

fn build_ilu0(a: &CsrMatrix) -> Option<(Vec<f64>, Vec<usize>)> {
    let n = a.n_rows;
    let mut lu = a.values.clone();
    let mut diag_ptr = vec![usize::MAX; n];
    for r in 0..n {
        for k in a.row_ptr[r]..a.row_ptr[r + 1] {
            if a.col_idx[k] == r {
                diag_ptr[r] = k;
            }
        }
        if diag_ptr[r] == usize::MAX {
            return None;
        }
    }
    // IKJ variant restricted to the sparsity pattern of A
    for i in 0..n {
        let row_lo = a.row_ptr[i];
        let row_hi = a.row_ptr[i + 1];
        for kk in row_lo..row_hi {
            let k = a.col_idx[kk];
            if k >= i {
                break;
            }
            let pivot = lu[diag_ptr[k]];
            if pivot == 0.0 {
                return None;
            }
            let m = lu[kk] / pivot;
            lu[kk] = m;
            if m == 0.0 {
                continue;
            }
            // subtract m * U(k, j) for j > k present in row i
            let krow_hi = a.row_ptr[k + 1];
            let mut jj = kk + 1;
            let mut pk = diag_ptr[k] + 1;
            while jj < row_hi && pk < krow_hi {
                let cj = a.col_idx[jj];
                let ck = a.col_idx[pk];
                if cj == ck {
                    lu[jj] -= m * lu[pk];
                    jj += 1;
                    pk += 1;
                } else if cj < ck {
                    jj += 1;
                } else {
                    pk += 1;
                }
            }
        }
        if lu[diag_ptr[i]] == 0.0 {
            return None;
        }
    }
    Some((lu, diag_ptr))
}

impl Precond {
    fn apply(&self, a: &CsrMatrix, v: &[f64], z: &mut [f64]) {
        match self {
            Precond::Jacobi(d) => {
                for ((zi, vi), di) in z.iter_mut().zip(v.iter()).zip(d.iter()) {
                    *zi = vi * di;
                }
            }
            Precond::Ilu0 { lu, diag_ptr } => {
                let n = a.n_rows;
                // forward solve L z = v (unit diagonal)
                for r in 0..n {
                    let mut acc = v[r];
                    for k in a.row_ptr[r]..diag_ptr[r] {
                        acc -= lu[k] * z[a.col_idx[k]];
                    }
                    z[r] = acc;
                }
                // backward solve U z = z
                for r in (0..n).rev() {
                    let mut acc = z[r];
                    for k in (diag_ptr[r] + 1)..a.row_ptr[r + 1] {
                        acc -= lu[k] * z[a.col_idx[k]];
                    }
                    z[r] = acc / lu[diag_ptr[r]];
                }
            }
        }
    }
}

impl LinearSolver for BiCgStab {
    fn name(&self) -> &'static str {
        "bicgstab"
    }

    fn prepare(&self, a: &CsrMatrix) -> Result<Box<dyn PreparedSolver>> {
        if a.n_rows != a.n_cols {
            return Err(Error::GridMismatch(format!(
                "bicgstab needs a square matrix, got {} x {}",
                a.n_rows, a.n_cols
            )));
        }
        let precond = match build_ilu0(a) {
            Some((lu, diag_ptr)) => Precond::Ilu0 { lu, diag_ptr },
            None => {
                let mut d = vec![1.0; a.n_rows];
                for r in 0..a.n_rows {
                    let (cols, vals) = a.row(r);
                    for (c, v) in cols.iter().zip(vals.iter()) {
                        if *c == r && *v != 0.0 {
                            d[r] = 1.0 / v;
                        }
                    }
                }
                Precond::Jacobi(d)
            }
        };
        Ok(Box::new(BiCgStabPrepared {
            a: a.clone(),
            precond,
            res_tol: self.res_tol,
            max_iters: self.max_iters,
        }))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl PreparedSolver for BiCgStabPrepared {
    fn solve(&self, b: &[f64], x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveStats)> {
        let a = &self.a;
        let n = a.n_rows;
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok((
                vec![0.0; n],
                SolveStats {
                    iterations: 0,
                    residual: 0.0,
                },
            ));
        }
        let mut x = match x0 {
            Some(x0) => x0.to_vec(),
            None => vec![0.0; n],
        };
        let mut r = vec![0.0; n];
        a.matvec(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b.iter()) {
            *ri = bi - *ri;
        }
        let r_hat = r.clone();
        let mut rho = 1.0;
        let mut alpha = 1.0;
        let mut omega = 1.0;
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut t = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut best = norm(&r) / b_norm;
        let mut iters = 0;

        while iters < self.max_iters {
            if best <= self.res_tol {
                break;
            }
            iters += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new.abs() < 1e-300 {
                break; // breakdown; report best residual below
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            self.precond.apply(a, &p, &mut y);
            a.matvec(&y, &mut v);
            let denom = dot(&r_hat, &v);
            if denom.abs() < 1e-300 {
                break;
            }
            alpha = rho / denom;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) / b_norm <= self.res_tol {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                best = a.relative_residual(&x, b);
                if best <= self.res_tol {
                    break;
                } else {
                    // rebuild r from scratch and continue
                    a.matvec(&x, &mut r);
                    for (ri, bi) in r.iter_mut().zip(b.iter()) {
                        *ri = bi - *ri;
                    }
                    continue;
                }
            }
            self.precond.apply(a, &s, &mut z);
            a.matvec(&z, &mut t);
            let tt = dot(&t, &t);
            if tt == 0.0 {
                break;
            }
            omega = dot(&t, &s) / tt;
            if omega == 0.0 {
                break;
            }
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            let rel = norm(&r) / b_norm;
            if rel < best {
                best = rel;
            }
        }

        let residual = a.relative_residual(&x, b);
        if residual > self.res_tol {
            return Err(Error::SolverDiverged {
                iterations: iters,
                residual,
            });
        }
        Ok((
            x,
            SolveStats {
                iterations: iters,
                residual,
            },
        ))
    }
}
