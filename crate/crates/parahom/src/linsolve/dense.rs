use crate::error::{Error, Result};
use crate::linsolve::csr::CsrMatrix;
use crate::linsolve::{LinearSolver, PreparedSolver, SolveStats};

/// Dense LU with partial pivoting. Quadratic storage: meant for small systems
/// and as the brute-force cross-check for the sparse strategies.
pub struct DenseLu {
    pub max_unknowns: usize,
}

impl Default for DenseLu {
    fn default() -> Self {
        DenseLu { max_unknowns: 4096 }
    }
}

struct DenseFactors {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    a: CsrMatrix,
}

impl LinearSolver for DenseLu {
    fn name(&self) -> &'static str {
        "dense-lu"
    }

    fn prepare(&self, a: &CsrMatrix) -> Result<Box<dyn PreparedSolver>> {
        let n = a.n_rows;
        if n != a.n_cols {
            return Err(Error::GridMismatch(format!(
                "dense-lu needs a square matrix, got {} x {}",
                a.n_rows, a.n_cols
            )));
        }
        if n > self.max_unknowns {
            return Err(Error::Config(format!(
                "dense-lu limited to {} unknowns, got {}",
                self.max_unknowns, n
            )));
        }
        let mut lu = a.to_dense();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[perm[k] * n + k].abs();
            for r in (k + 1)..n {
                let v = lu[perm[r] * n + k].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return Err(Error::SolverDiverged {
                    iterations: 0,
                    residual: f64::INFINITY,
                });
            }
            perm.swap(k, piv);
            let pk = perm[k];
            let pivot = lu[pk * n + k];
            for r in (k + 1)..n {
                let pr = perm[r];
                let m = lu[pr * n + k] / pivot;
                lu[pr * n + k] = m;
                if m != 0.0 {
                    for c in (k + 1)..n {
                        lu[pr * n + c] -= m * lu[pk * n + c];
                    }
                }
            }
        }
        Ok(Box::new(DenseFactors {
            n,
            lu,
            perm,
            a: a.clone(),
        }))
    }
}

impl PreparedSolver for DenseFactors {
    fn solve(&self, b: &[f64], _x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveStats)> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for r in 0..n {
            let pr = self.perm[r];
            let mut acc = b[pr];
            for c in 0..r {
                acc -= self.lu[pr * n + c] * y[c];
            }
            y[r] = acc;
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let pr = self.perm[r];
            let mut acc = y[r];
            for c in (r + 1)..n {
                acc -= self.lu[pr * n + c] * x[c];
            }
            x[r] = acc / self.lu[pr * n + r];
        }
        let residual = self.a.relative_residual(&x, b);
        Ok((
            x,
            SolveStats {
                iterations: 0,
                residual,
            },
        ))
    }
}

/// Direct tridiagonal elimination (Thomas algorithm), no pivoting. Valid for
/// the diagonally dominant step matrices of the theta scheme in one dimension.
pub struct Tridiag;

struct TridiagPrepared {
    a: CsrMatrix,
}

impl LinearSolver for Tridiag {
    fn name(&self) -> &'static str {
        "thomas"
    }

    fn prepare(&self, a: &CsrMatrix) -> Result<Box<dyn PreparedSolver>> {
        if !a.is_tridiagonal() {
            return Err(Error::GridMismatch(
                "thomas strategy requires a tridiagonal matrix".into(),
            ));
        }
        Ok(Box::new(TridiagPrepared { a: a.clone() }))
    }
}

impl PreparedSolver for TridiagPrepared {
    fn solve(&self, b: &[f64], _x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveStats)> {
        let a = &self.a;
        let n = a.n_rows;
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (c, v) in cols.iter().zip(vals.iter()) {
                if *c + 1 == r {
                    sub[r] = *v;
                } else if *c == r {
                    diag[r] = *v;
                } else {
                    sup[r] = *v;
                }
            }
        }
        let mut c_star = vec![0.0; n];
        let mut d_star = vec![0.0; n];
        if diag[0] == 0.0 {
            return Err(Error::SolverDiverged {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
        c_star[0] = sup[0] / diag[0];
        d_star[0] = b[0] / diag[0];
        for r in 1..n {
            let m = diag[r] - sub[r] * c_star[r - 1];
            if m == 0.0 {
                return Err(Error::SolverDiverged {
                    iterations: 0,
                    residual: f64::INFINITY,
                });
            }
            c_star[r] = sup[r] / m;
            d_star[r] = (b[r] - sub[r] * d_star[r - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d_star[n - 1];
        for r in (0..n - 1).rev() {
            x[r] = d_star[r] - c_star[r] * x[r + 1];
        }
        let residual = a.relative_residual(&x, b);
        Ok((
            x,
            SolveStats {
                iterations: 0,
                residual,
            },
        ))
    }
}
