use std::sync::Once;

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};
use crate::linsolve::csr::CsrMatrix;
use crate::linsolve::{LinearSolver, PreparedSolver, SolveStats};

static FAER_SEQ: Once = Once::new();

fn force_sequential() {
    // Byte-identical study reports require a deterministic factorization;
    // node-level parallelism is handled by rayon above this layer.
    FAER_SEQ.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
    });
}

/// Sparse direct LU factorization (faer).
pub struct SparseLu;

struct SparseLuPrepared {
    lu: Lu<usize, f64>,
    a: CsrMatrix,
}

impl LinearSolver for SparseLu {
    fn name(&self) -> &'static str {
        "sparse-lu"
    }

    fn prepare(&self, a: &CsrMatrix) -> Result<Box<dyn PreparedSolver>> {
        force_sequential();
        if a.n_rows != a.n_cols {
            return Err(Error::GridMismatch(format!(
                "sparse-lu needs a square matrix, got {} x {}",
                a.n_rows, a.n_cols
            )));
        }
        let mut trip = Vec::with_capacity(a.nnz());
        for r in 0..a.n_rows {
            let (cols, vals) = a.row(r);
            for (c, v) in cols.iter().zip(vals.iter()) {
                trip.push(Triplet::new(r, *c, *v));
            }
        }
        let mat = SparseColMat::try_new_from_triplets(a.n_rows, a.n_cols, &trip)
            .map_err(|e| Error::Config(format!("sparse matrix assembly failed: {e:?}")))?;
        let lu = mat.sp_lu().map_err(|_| Error::SolverDiverged {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        Ok(Box::new(SparseLuPrepared { lu, a: a.clone() }))
    }
}

impl PreparedSolver for SparseLuPrepared {
    fn solve(&self, b: &[f64], _x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveStats)> {
        let rhs = Col::<f64>::from_fn(b.len(), |i| b[i]);
        let sol = self.lu.solve(&rhs);
        let x: Vec<f64> = (0..b.len()).map(|i| sol[i]).collect();
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
