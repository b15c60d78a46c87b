/// Compressed sparse row matrix with sorted, deduplicated columns per row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Two-pass construction: count, scatter, per-row sort, in-place dedup.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, _, _) in triplets {
            debug_assert!(r < n_rows);
            counts[r + 1] += 1;
        }
        for r in 0..n_rows {
            counts[r + 1] += counts[r];
        }
        let mut col_idx = vec![0usize; triplets.len()];
        let mut values = vec![0.0f64; triplets.len()];
        let mut cursor = counts.clone();
        for &(r, c, v) in triplets {
            debug_assert!(c < n_cols);
            let k = cursor[r];
            col_idx[k] = c;
            values[k] = v;
            cursor[r] += 1;
        }
        // sort each row segment and merge duplicates in place
        let mut write = 0usize;
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..n_rows {
            let (lo, hi) = (counts[r], counts[r + 1]);
            scratch.clear();
            scratch.extend(col_idx[lo..hi].iter().copied().zip(values[lo..hi].iter().copied()));
            scratch.sort_unstable_by_key(|e| e.0);
            let mut k = 0;
            while k < scratch.len() {
                let c = scratch[k].0;
                let mut v = 0.0;
                while k < scratch.len() && scratch[k].0 == c {
                    v += scratch[k].1;
                    k += 1;
                }
                col_idx[write] = c;
                values[write] = v;
                write += 1;
            }
            row_ptr[r + 1] = write;
        }
        col_idx.truncate(write);
        values.truncate(write);
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Largest row population; bordered systems have one dense row.
    pub fn max_row_nnz(&self) -> usize {
        (0..self.n_rows)
            .map(|r| self.row_ptr[r + 1] - self.row_ptr[r])
            .max()
            .unwrap_or(0)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals.iter()) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
    }

    /// Relative residual ||Ax - b|| / ||b|| (absolute when b = 0).
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n_rows];
        self.matvec(x, &mut ax);
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, bb) in ax.iter().zip(b.iter()) {
            num += (a - bb) * (a - bb);
            den += bb * bb;
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }

    pub fn is_tridiagonal(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        for r in 0..self.n_rows {
            let (cols, _) = self.row(r);
            for &c in cols {
                if c + 1 < r || c > r + 1 {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows * self.n_cols];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals.iter()) {
                d[r * self.n_cols + *c] = *v;
            }
        }
        d
    }
}
