//! The corrected two-scale expansion
//! `w = u_eps - u_0 - eps [S(chi~ K(grad u_0))]^eps
//!                  - eps^2 [d_xk S(frakB~_{(d+1)kj} K(d_j u_0))]^eps`
//! evaluated slice by slice. The outer smoothing is a compact tap quadrature;
//! the composed micro coordinates `frac(x_i/eps)`, `frac(t_n/eps^2)` cycle
//! with periods `eps/h` and `eps^2/dt`, which the composed-field tables
//! exploit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{FourVarGridFn, MacroGrid, MacroGridFn, TorusLinear};
use crate::smoothing::{space_taps, time_taps, Cutoff, SmoothAxes, Smoother, SpaceTaps, Taps};

/// One-axis interpolation table: for each fine node, the lower sample cell
/// index and the interpolation weight toward the upper neighbor.
fn axis_table(fine_nodes: usize, fine_h: f64, sample_cells: usize, sample_h: f64) -> Vec<(usize, f64)> {
    (0..fine_nodes)
        .map(|i| {
            let pos = (i as f64 * fine_h) / sample_h;
            let cell = (pos.floor() as usize).min(sample_cells.saturating_sub(1));
            (cell, (pos - cell as f64).clamp(0.0, 1.0))
        })
        .collect()
}

/// Four-variable field resampled onto the micro lattice
/// `(alpha/c1, beta/c2)` visited by the composition on the fine grid.
/// Layout: `[sample macro node][beta][alpha2][alpha1]`.
pub struct ComposedField {
    pub sample_grid: MacroGrid,
    pub c1: usize,
    pub c2: usize,
    micro_len: usize,
    values: Vec<f64>,
}

impl ComposedField {
    pub fn new(f: &FourVarGridFn, c1: usize, c2: usize) -> Self {
        let dim = f.macro_grid.dim;
        let alpha_len = c1.pow(dim as u32);
        let micro_len = alpha_len * c2;
        let stencils: Vec<TorusLinear> = (0..micro_len)
            .map(|m| {
                let beta = m / alpha_len;
                let af = m % alpha_len;
                let a1 = af % c1;
                let a2 = af / c1;
                let y = [a1 as f64 / c1 as f64, a2 as f64 / c1 as f64];
                let tau = beta as f64 / c2 as f64;
                TorusLinear::new(f.torus, y, tau)
            })
            .collect();
        let tl = f.torus.len();
        let n_macro = f.macro_grid.len();
        let mut values = vec![0.0; n_macro * micro_len];
        values
            .par_chunks_mut(micro_len)
            .enumerate()
            .for_each(|(mn, chunk)| {
                let offset = mn * tl;
                for (m, v) in chunk.iter_mut().enumerate() {
                    *v = stencils[m].apply_offset(&f.values, offset);
                }
            });
        ComposedField {
            sample_grid: f.macro_grid,
            c1,
            c2,
            micro_len,
            values,
        }
    }

    #[inline]
    fn at(&self, macro_node: usize, micro: usize) -> f64 {
        self.values[macro_node * self.micro_len + micro]
    }
}

/// Evaluates the two corrector terms of `w` on fine-grid slices.
pub struct CorrectorEngine {
    pub eps: f64,
    pub fine: MacroGrid,
    dim: usize,
    chi: Vec<ComposedField>,
    /// `frakB_{(d+1) k j}` indexed `k * d + j`
    frakb: Vec<ComposedField>,
    st: Taps,
    sx: SpaceTaps,
    /// derivative taps per axis k: centered difference of the smooth taps,
    /// weights include the 1/(2h) factor
    gx: Vec<Vec<([isize; 2], f64)>>,
    /// per-axis fine-node -> sample-cell tables
    x_table: Vec<Vec<(usize, f64)>>,
    sample_steps_per_t: f64,
}

fn derivative_taps(sx: &SpaceTaps, axis: usize, h: f64) -> Vec<([isize; 2], f64)> {
    let inv2h = 0.5 / h;
    let mut g: Vec<([isize; 2], f64)> = Vec::with_capacity(2 * sx.offsets.len());
    for (o, w) in sx.offsets.iter().zip(sx.weights.iter()) {
        let mut lo = *o;
        let mut hi = *o;
        lo[axis] -= 1;
        hi[axis] += 1;
        g.push((lo, w * inv2h));
        g.push((hi, -w * inv2h));
    }
    g.sort_by_key(|e| (e.0[1], e.0[0]));
    let mut merged: Vec<([isize; 2], f64)> = Vec::with_capacity(g.len());
    for (o, w) in g {
        if let Some(last) = merged.last_mut() {
            if last.0 == o {
                last.1 += w;
                continue;
            }
        }
        merged.push((o, w));
    }
    merged.retain(|e| e.1 != 0.0);
    merged
}

impl CorrectorEngine {
    pub fn new(
        eps: f64,
        fine: MacroGrid,
        chi_smoothed: &[FourVarGridFn],
        frakb_smoothed: &[FourVarGridFn],
        taps_per_radius: usize,
    ) -> Result<Self> {
        let dim = fine.dim;
        if chi_smoothed.len() != dim || frakb_smoothed.len() != dim * dim {
            return Err(Error::GridMismatch(format!(
                "need {dim} chi fields and {} flux-corrector fields",
                dim * dim
            )));
        }
        let sample = chi_smoothed[0].macro_grid;
        for f in chi_smoothed.iter().chain(frakb_smoothed.iter()) {
            if f.macro_grid != sample {
                return Err(Error::GridMismatch("corrector sample grids differ".into()));
            }
        }
        if sample.h() > eps / 2.0 + 1e-12 {
            return Err(Error::UnderResolved {
                eps,
                detail: format!(
                    "cell-sample spacing {} exceeds eps/2 = {}",
                    sample.h(),
                    eps / 2.0
                ),
            });
        }
        // micro cycle lengths on the fine grid (exact for the grid policy
        // h = eps/c1, dt = eps^2/c2)
        let c1 = (eps / fine.h()).round() as usize;
        let c2 = (eps * eps / fine.dt()).round() as usize;
        if c1 == 0 || c2 == 0 {
            return Err(Error::UnderResolved {
                eps,
                detail: "fine grid coarser than the oscillation".into(),
            });
        }
        let chi = chi_smoothed.iter().map(|f| ComposedField::new(f, c1, c2)).collect();
        let frakb = frakb_smoothed.iter().map(|f| ComposedField::new(f, c1, c2)).collect();

        let st = time_taps(eps, fine.dt(), taps_per_radius)?;
        let sx = space_taps(dim, eps, fine.h(), taps_per_radius)?;
        let gx = (0..dim).map(|k| derivative_taps(&sx, k, fine.h())).collect();

        let x_table = (0..dim)
            .map(|_| axis_table(fine.nodes_per_axis(), fine.h(), sample.n_cells, sample.h()))
            .collect();
        let sample_steps_per_t = if sample.n_steps == 0 {
            0.0
        } else {
            sample.n_steps as f64 / sample.t_end
        };
        Ok(CorrectorEngine {
            eps,
            fine,
            dim,
            chi,
            frakb,
            st,
            sx,
            gx,
            x_table,
            sample_steps_per_t,
        })
    }

    /// Maximum time-tap reach in slices (ring-buffer sizing).
    pub fn time_reach(&self) -> usize {
        self.st.offsets.iter().map(|o| o.unsigned_abs()).max().unwrap_or(0)
    }

    #[inline]
    fn t_cell(&self, t: f64) -> (usize, f64) {
        let sample = &self.chi[0].sample_grid;
        if sample.n_steps == 0 {
            return (0, 0.0);
        }
        let pos = (t * self.sample_steps_per_t).clamp(0.0, sample.n_steps as f64);
        let cell = (pos.floor() as usize).min(sample.n_steps - 1);
        (cell, pos - cell as f64)
    }

    /// Corrector terms on output slice `n`: `eps*T1 + eps^2*T2` per node, to
    /// be subtracted from `u_eps - u_0`. `k_slice(m, j)` returns the
    /// `K_eps(d_j u_0)` slice at time index `m`, `None` meaning zero
    /// extension outside the horizon.
    pub fn terms_slice<'a>(
        &self,
        n: usize,
        k_slice: &(dyn Fn(isize, usize) -> Option<&'a [f64]> + Sync),
        out: &mut [f64],
    ) {
        let fine = &self.fine;
        let dim = self.dim;
        let np = fine.nodes_per_axis() as isize;
        let nsp = fine.space_len();
        debug_assert_eq!(out.len(), nsp);
        let c1 = self.chi[0].c1;
        let c2 = self.chi[0].c2;
        let beta = n % c2;
        let alpha_len = c1.pow(dim as u32);
        let sample = &self.chi[0].sample_grid;
        let s_np = sample.nodes_per_axis();
        let s_nsp = sample.space_len();

        struct TimeTap<'a> {
            w: f64,
            base0: usize,
            base1: usize,
            wt: f64,
            k: Vec<&'a [f64]>,
        }
        let mut taps_t: Vec<TimeTap<'a>> = Vec::with_capacity(self.st.offsets.len());
        for (o, w) in self.st.offsets.iter().zip(self.st.weights.iter()) {
            let m = n as isize - o;
            let mut k = Vec::with_capacity(dim);
            let mut ok = true;
            for j in 0..dim {
                match k_slice(m, j) {
                    Some(s) => k.push(s),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue; // zero extension in time
            }
            let t = m as f64 * fine.dt();
            let (t0, wt) = self.t_cell(t);
            let t1 = (t0 + 1).min(sample.n_steps);
            taps_t.push(TimeTap {
                w: *w,
                base0: t0 * s_nsp,
                base1: t1 * s_nsp,
                wt,
                k,
            });
        }

        let work = |sp: usize, out_v: &mut f64| {
            let ix = fine.space_coords(sp);
            let alpha1 = ix[0] % c1;
            let alpha2 = if dim == 2 { ix[1] % c1 } else { 0 };
            let micro = (beta * if dim == 2 { c1 } else { 1 } * c1)
                + alpha2 * c1
                + alpha1;
            debug_assert!(micro < alpha_len * c2);
            let mut acc1 = 0.0;
            let mut acc2 = 0.0;

            for t in &taps_t {
                // interpolate a composed field at fine node (jx0, jx1)
                let interp = |field: &ComposedField, jx0: isize, jx1: isize| -> f64 {
                    let (x0, wx) = self.x_table[0][jx0 as usize];
                    if dim == 1 {
                        let lo = t.base0 + x0;
                        let v_lo =
                            (1.0 - wx) * field.at(lo, micro) + wx * field.at(lo + 1, micro);
                        if t.wt == 0.0 {
                            v_lo
                        } else {
                            let hi = t.base1 + x0;
                            let v_hi =
                                (1.0 - wx) * field.at(hi, micro) + wx * field.at(hi + 1, micro);
                            (1.0 - t.wt) * v_lo + t.wt * v_hi
                        }
                    } else {
                        let (y0, wy) = self.x_table[1][jx1 as usize];
                        let corner = |base: usize| -> f64 {
                            let b = base + y0 * s_np + x0;
                            let v00 = field.at(b, micro);
                            let v01 = field.at(b + 1, micro);
                            let v10 = field.at(b + s_np, micro);
                            let v11 = field.at(b + s_np + 1, micro);
                            (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                                + wy * ((1.0 - wx) * v10 + wx * v11)
                        };
                        let v_lo = corner(t.base0);
                        if t.wt == 0.0 {
                            v_lo
                        } else {
                            (1.0 - t.wt) * v_lo + t.wt * corner(t.base1)
                        }
                    }
                };

                // first corrector term: smooth taps
                for (o, wz) in self.sx.offsets.iter().zip(self.sx.weights.iter()) {
                    let jx0 = ix[0] as isize - o[0];
                    if jx0 < 0 || jx0 >= np {
                        continue;
                    }
                    let jx1 = if dim == 2 {
                        let v = ix[1] as isize - o[1];
                        if v < 0 || v >= np {
                            continue;
                        }
                        v
                    } else {
                        0
                    };
                    let flat = (jx1 * np + jx0) as usize;
                    let wzt = t.w * wz;
                    for j in 0..dim {
                        let kv = t.k[j][flat];
                        if kv != 0.0 {
                            acc1 += wzt * interp(&self.chi[j], jx0, jx1) * kv;
                        }
                    }
                }

                // second corrector term: derivative taps per axis k
                for (k_axis, gtaps) in self.gx.iter().enumerate() {
                    for (o, gw) in gtaps {
                        let jx0 = ix[0] as isize - o[0];
                        if jx0 < 0 || jx0 >= np {
                            continue;
                        }
                        let jx1 = if dim == 2 {
                            let v = ix[1] as isize - o[1];
                            if v < 0 || v >= np {
                                continue;
                            }
                            v
                        } else {
                            0
                        };
                        let flat = (jx1 * np + jx0) as usize;
                        let gwt = t.w * gw;
                        for j in 0..dim {
                            let kv = t.k[j][flat];
                            if kv != 0.0 {
                                acc2 += gwt * interp(&self.frakb[k_axis * dim + j], jx0, jx1) * kv;
                            }
                        }
                    }
                }
            }
            *out_v = self.eps * acc1 + self.eps * self.eps * acc2;
        };

        if nsp >= 2048 {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(sp, v)| work(sp, v));
        } else {
            for (sp, v) in out.iter_mut().enumerate() {
                work(sp, v);
            }
        }
    }
}

/// Spatial gradient of one time slice: centered differences in the interior,
/// one-sided at the Dirichlet boundary.
pub fn slice_gradient(grid: &MacroGrid, slice: &[f64], out: &mut [Vec<f64>]) {
    let np = grid.nodes_per_axis();
    let h = grid.h();
    if grid.dim == 1 {
        let g = &mut out[0];
        for i in 0..np {
            g[i] = if i == 0 {
                (slice[1] - slice[0]) / h
            } else if i == np - 1 {
                (slice[np - 1] - slice[np - 2]) / h
            } else {
                (slice[i + 1] - slice[i - 1]) / (2.0 * h)
            };
        }
    } else {
        for axis in 0..2 {
            let g = &mut out[axis];
            for iy in 0..np {
                for ix in 0..np {
                    let sp = iy * np + ix;
                    let (i, max) = if axis == 0 { (ix, np - 1) } else { (iy, np - 1) };
                    let stride = if axis == 0 { 1 } else { np };
                    g[sp] = if i == 0 {
                        (slice[sp + stride] - slice[sp]) / h
                    } else if i == max {
                        (slice[sp] - slice[sp - stride]) / h
                    } else {
                        (slice[sp + stride] - slice[sp - stride]) / (2.0 * h)
                    };
                }
            }
        }
    }
}

/// Materialized `w_eps` for moderate grids: the corrector fields are already
/// smoothed four-variable functions on the cell-sample grid.
pub fn build_w_eps(
    u_eps: &MacroGridFn,
    u_0: &MacroGridFn,
    chi_smoothed: &[FourVarGridFn],
    frakb_smoothed: &[FourVarGridFn],
    eps: f64,
    smoother: &Smoother,
    cut: &Cutoff,
    taps_per_radius: usize,
) -> Result<MacroGridFn> {
    let grid = u_eps.grid;
    if u_0.grid != grid {
        return Err(Error::GridMismatch("u_eps and u_0 grids differ".into()));
    }
    if cut.grid != grid {
        return Err(Error::GridMismatch("cutoff grid differs".into()));
    }
    let dim = grid.dim;
    let nsp = grid.space_len();

    // K_eps(d_j u_0) = S_eps(d_j u_0) * eta, materialized per direction
    let mut grads: Vec<MacroGridFn> = (0..dim).map(|_| MacroGridFn::zeros(grid)).collect();
    let mut scratch: Vec<Vec<f64>> = (0..dim).map(|_| vec![0.0; nsp]).collect();
    for it in 0..grid.time_len() {
        slice_gradient(&grid, u_0.slice(it), &mut scratch);
        for j in 0..dim {
            grads[j].slice_mut(it).copy_from_slice(&scratch[j]);
        }
    }
    let mut k_fields = Vec::with_capacity(dim);
    for g in &grads {
        let mut sm = smoother.smooth(g, eps, SmoothAxes::Both)?;
        for it in 0..grid.time_len() {
            let e1 = cut.eta1[it];
            for (sp, v) in sm.slice_mut(it).iter_mut().enumerate() {
                *v *= e1 * cut.eta2[sp];
            }
        }
        k_fields.push(sm);
    }

    let engine = CorrectorEngine::new(eps, grid, chi_smoothed, frakb_smoothed, taps_per_radius)?;
    let mut w = MacroGridFn::zeros(grid);
    let mut terms = vec![0.0; nsp];
    for it in 0..grid.time_len() {
        let k_access = |m: isize, j: usize| -> Option<&[f64]> {
            if m < 0 || m as usize >= grid.time_len() {
                None
            } else {
                Some(k_fields[j].slice(m as usize))
            }
        };
        engine.terms_slice(it, &k_access, &mut terms);
        let dst = w.slice_mut(it);
        for sp in 0..nsp {
            dst[sp] = u_eps.slice(it)[sp] - u_0.slice(it)[sp] - terms[sp];
        }
    }
    Ok(w)
}
