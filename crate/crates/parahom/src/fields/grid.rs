use crate::error::{Error, Result};

/// Uniform periodic grid on the unit torus `T^{d+1}` with `n_y` points per
/// spatial axis and `n_tau` points on the time axis. Node `(iy, it)` sits at
/// `(iy/n_y, it/n_tau)`; indexing wraps in every axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    pub dim: usize,
    pub n_y: usize,
    pub n_tau: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n_y: usize, n_tau: usize) -> Self {
        assert!(dim >= 1 && dim <= 2);
        assert!(n_y >= 1 && n_tau >= 1);
        TorusGrid { dim, n_y, n_tau }
    }

    #[inline]
    pub fn space_len(&self) -> usize {
        self.n_y.pow(self.dim as u32)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.space_len() * self.n_tau
    }

    #[inline]
    pub fn h_y(&self) -> f64 {
        1.0 / self.n_y as f64
    }

    #[inline]
    pub fn h_tau(&self) -> f64 {
        1.0 / self.n_tau as f64
    }

    /// Flat index of `(iy, it)` with periodic wrap (indices may exceed the range).
    #[inline]
    pub fn idx(&self, iy: [usize; 2], it: usize) -> usize {
        let i0 = iy[0] % self.n_y;
        let sp = if self.dim == 2 {
            i0 + (iy[1] % self.n_y) * self.n_y
        } else {
            i0
        };
        (it % self.n_tau) * self.space_len() + sp
    }

    #[inline]
    pub fn wrap_y(&self, i: isize) -> usize {
        i.rem_euclid(self.n_y as isize) as usize
    }

    #[inline]
    pub fn wrap_tau(&self, i: isize) -> usize {
        i.rem_euclid(self.n_tau as isize) as usize
    }

    /// Inverse of `idx` for in-range nodes.
    #[inline]
    pub fn coords(&self, flat: usize) -> ([usize; 2], usize) {
        let sp = flat % self.space_len();
        let it = flat / self.space_len();
        if self.dim == 2 {
            ([sp % self.n_y, sp / self.n_y], it)
        } else {
            ([sp, 0], it)
        }
    }

    #[inline]
    pub fn node_pos(&self, flat: usize) -> ([f64; 2], f64) {
        let (iy, it) = self.coords(flat);
        (
            [iy[0] as f64 * self.h_y(), iy[1] as f64 * self.h_y()],
            it as f64 * self.h_tau(),
        )
    }
}

/// Scalar grid function on the torus.
#[derive(Debug, Clone)]
pub struct TorusGridFn {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl TorusGridFn {
    pub fn zeros(grid: TorusGrid) -> Self {
        TorusGridFn {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let (y, tau) = grid.node_pos(i);
                f(y, tau)
            })
            .collect();
        TorusGridFn { grid, values }
    }

    /// Grid mean; on the uniform periodic grid this is the trapezoid rule.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn project_zero_mean(&mut self) {
        let m = self.mean();
        for v in &mut self.values {
            *v -= m;
        }
    }

    /// Root mean square over the torus (discrete L^2 with unit measure).
    pub fn l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    /// Centered periodic derivative along spatial axis `axis`.
    pub fn d_y(&self, axis: usize) -> TorusGridFn {
        let g = self.grid;
        let inv2h = 0.5 / g.h_y();
        let mut out = TorusGridFn::zeros(g);
        for it in 0..g.n_tau {
            for flat_sp in 0..g.space_len() {
                let (iy, _) = g.coords(flat_sp);
                let mut up = iy;
                let mut dn = iy;
                up[axis] = (iy[axis] + 1) % g.n_y;
                dn[axis] = (iy[axis] + g.n_y - 1) % g.n_y;
                out.values[g.idx(iy, it)] =
                    (self.values[g.idx(up, it)] - self.values[g.idx(dn, it)]) * inv2h;
            }
        }
        out
    }

    /// Centered periodic derivative in micro time.
    pub fn d_tau(&self) -> TorusGridFn {
        let g = self.grid;
        let mut out = TorusGridFn::zeros(g);
        if g.n_tau == 1 {
            return out;
        }
        let inv2h = 0.5 / g.h_tau();
        for it in 0..g.n_tau {
            let up = (it + 1) % g.n_tau;
            let dn = (it + g.n_tau - 1) % g.n_tau;
            for sp in 0..g.space_len() {
                let (iy, _) = g.coords(sp);
                out.values[g.idx(iy, it)] =
                    (self.values[g.idx(iy, up)] - self.values[g.idx(iy, dn)]) * inv2h;
            }
        }
        out
    }

    /// Periodic multilinear interpolation at `(y, tau)` (any real arguments).
    pub fn interp(&self, y: [f64; 2], tau: f64) -> f64 {
        let g = self.grid;
        let lin = TorusLinear::new(g, y, tau);
        lin.apply(&self.values)
    }
}

/// Precomputed periodic multilinear interpolation stencil on a torus grid.
pub struct TorusLinear {
    corners: [usize; 8],
    weights: [f64; 8],
    n: usize,
}

impl TorusLinear {
    pub fn new(g: TorusGrid, y: [f64; 2], tau: f64) -> Self {
        let mut corners = [0usize; 8];
        let mut weights = [0.0f64; 8];

        let fy0 = (y[0] - y[0].floor()) * g.n_y as f64;
        let i0 = fy0.floor() as usize % g.n_y;
        let w0 = fy0 - fy0.floor();

        let (i1, w1) = if g.dim == 2 {
            let fy1 = (y[1] - y[1].floor()) * g.n_y as f64;
            (fy1.floor() as usize % g.n_y, fy1 - fy1.floor())
        } else {
            (0, 0.0)
        };

        let ftau = (tau - tau.floor()) * g.n_tau as f64;
        let it = ftau.floor() as usize % g.n_tau;
        let wt = if g.n_tau == 1 { 0.0 } else { ftau - ftau.floor() };

        let mut n = 0;
        let axes1 = if g.dim == 2 { 2 } else { 1 };
        let taus = if g.n_tau == 1 { 1 } else { 2 };
        for dt in 0..taus {
            for d1 in 0..axes1 {
                for d0 in 0..2 {
                    let iy = [
                        (i0 + d0) % g.n_y,
                        if g.dim == 2 { (i1 + d1) % g.n_y } else { 0 },
                    ];
                    let wy0 = if d0 == 0 { 1.0 - w0 } else { w0 };
                    let wy1 = if g.dim == 2 {
                        if d1 == 0 {
                            1.0 - w1
                        } else {
                            w1
                        }
                    } else {
                        1.0
                    };
                    let wtt = if taus == 1 {
                        1.0
                    } else if dt == 0 {
                        1.0 - wt
                    } else {
                        wt
                    };
                    corners[n] = g.idx(iy, it + dt);
                    weights[n] = wy0 * wy1 * wtt;
                    n += 1;
                }
            }
        }
        TorusLinear {
            corners,
            weights,
            n,
        }
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        let mut v = 0.0;
        for k in 0..self.n {
            v += self.weights[k] * values[self.corners[k]];
        }
        v
    }

    /// Apply on a strided slice of a larger array (used for four-variable fields).
    #[inline]
    pub fn apply_offset(&self, values: &[f64], offset: usize) -> f64 {
        let mut v = 0.0;
        for k in 0..self.n {
            v += self.weights[k] * values[offset + self.corners[k]];
        }
        v
    }
}

/// Uniform grid on the closed cylinder `[0,1]^d x [0, t_end]` with `n_cells`
/// cells per spatial axis and `n_steps` time steps. Boundary nodes are part
/// of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroGrid {
    pub dim: usize,
    pub n_cells: usize,
    pub n_steps: usize,
    pub t_end: f64,
}

impl MacroGrid {
    pub fn new(dim: usize, n_cells: usize, n_steps: usize, t_end: f64) -> Self {
        assert!(dim >= 1 && dim <= 2);
        assert!(n_cells >= 1 && t_end > 0.0);
        MacroGrid {
            dim,
            n_cells,
            n_steps,
            t_end,
        }
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps.max(1) as f64
    }

    #[inline]
    pub fn nodes_per_axis(&self) -> usize {
        self.n_cells + 1
    }

    #[inline]
    pub fn space_len(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    #[inline]
    pub fn time_len(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.space_len() * self.time_len()
    }

    #[inline]
    pub fn space_idx(&self, ix: [usize; 2]) -> usize {
        if self.dim == 2 {
            ix[0] + ix[1] * self.nodes_per_axis()
        } else {
            ix[0]
        }
    }

    #[inline]
    pub fn space_coords(&self, sp: usize) -> [usize; 2] {
        if self.dim == 2 {
            [sp % self.nodes_per_axis(), sp / self.nodes_per_axis()]
        } else {
            [sp, 0]
        }
    }

    #[inline]
    pub fn x_of(&self, ix: [usize; 2]) -> [f64; 2] {
        [ix[0] as f64 * self.h(), ix[1] as f64 * self.h()]
    }

    #[inline]
    pub fn t_of(&self, it: usize) -> f64 {
        it as f64 * self.dt()
    }

    pub fn is_space_boundary(&self, ix: [usize; 2]) -> bool {
        let n = self.n_cells;
        ix[0] == 0 || ix[0] == n || (self.dim == 2 && (ix[1] == 0 || ix[1] == n))
    }

    /// Distance from `x` to the boundary of the unit box (first `dim` coords).
    pub fn boundary_distance(&self, x: [f64; 2]) -> f64 {
        let mut d = x[0].min(1.0 - x[0]);
        if self.dim == 2 {
            d = d.min(x[1].min(1.0 - x[1]));
        }
        d
    }

    pub fn contains(&self, x: [f64; 2], t: f64) -> bool {
        let eps = 1e-12;
        let mut ok = x[0] >= -eps && x[0] <= 1.0 + eps && t >= -eps && t <= self.t_end + eps;
        if self.dim == 2 {
            ok = ok && x[1] >= -eps && x[1] <= 1.0 + eps;
        }
        ok
    }
}

/// Scalar grid function on a macroscopic space-time grid, stored time-major.
#[derive(Debug, Clone)]
pub struct MacroGridFn {
    pub grid: MacroGrid,
    pub values: Vec<f64>,
}

impl MacroGridFn {
    pub fn zeros(grid: MacroGrid) -> Self {
        MacroGridFn {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: MacroGrid, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let mut out = MacroGridFn::zeros(grid);
        for it in 0..grid.time_len() {
            let t = grid.t_of(it);
            for sp in 0..grid.space_len() {
                let x = grid.x_of(grid.space_coords(sp));
                out.values[it * grid.space_len() + sp] = f(x, t);
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, ix: [usize; 2], it: usize) -> f64 {
        self.values[it * self.grid.space_len() + self.grid.space_idx(ix)]
    }

    #[inline]
    pub fn slice(&self, it: usize) -> &[f64] {
        let n = self.grid.space_len();
        &self.values[it * n..(it + 1) * n]
    }

    #[inline]
    pub fn slice_mut(&mut self, it: usize) -> &mut [f64] {
        let n = self.grid.space_len();
        &mut self.values[it * n..(it + 1) * n]
    }

    /// Multilinear space-time interpolation; zero extension is NOT applied,
    /// points outside the cylinder are an error.
    pub fn interp(&self, x: [f64; 2], t: f64) -> Result<f64> {
        let g = self.grid;
        if !g.contains(x, t) {
            return Err(Error::OutOfDomain { x, t });
        }
        let st = MacroLinear::new(&g, x, t);
        Ok(st.apply(&self.values))
    }
}

/// Precomputed multilinear stencil on a macro grid (clamped to the hull).
pub struct MacroLinear {
    pub corners: [usize; 8],
    pub weights: [f64; 8],
    pub n: usize,
}

impl MacroLinear {
    pub fn new(g: &MacroGrid, x: [f64; 2], t: f64) -> Self {
        let np = g.nodes_per_axis();
        let clamp01 = |v: f64| v.max(0.0).min(1.0);

        let f0 = clamp01(x[0]) * g.n_cells as f64;
        let i0 = (f0.floor() as usize).min(g.n_cells - 1);
        let w0 = f0 - i0 as f64;

        let (i1, w1) = if g.dim == 2 {
            let f1 = clamp01(x[1]) * g.n_cells as f64;
            let i1 = (f1.floor() as usize).min(g.n_cells - 1);
            (i1, f1 - i1 as f64)
        } else {
            (0, 0.0)
        };

        let ft = (t / g.t_end).max(0.0).min(1.0) * g.n_steps as f64;
        let it = (ft.floor() as usize).min(g.n_steps.saturating_sub(1));
        let wt = if g.n_steps == 0 { 0.0 } else { ft - it as f64 };

        let mut corners = [0usize; 8];
        let mut weights = [0.0f64; 8];
        let mut n = 0;
        let axes1 = if g.dim == 2 { 2 } else { 1 };
        let sp_len = g.space_len();
        let taus = if g.n_steps == 0 { 1 } else { 2 };
        for dt in 0..taus {
            for d1 in 0..axes1 {
                for d0 in 0..2 {
                    let sp = (i0 + d0)
                        + if g.dim == 2 {
                            (i1 + d1) * np
                        } else {
                            0
                        };
                    let wy0 = if d0 == 0 { 1.0 - w0 } else { w0 };
                    let wy1 = if g.dim == 2 {
                        if d1 == 0 {
                            1.0 - w1
                        } else {
                            w1
                        }
                    } else {
                        1.0
                    };
                    let wtt = if g.n_steps == 0 {
                        1.0
                    } else if dt == 0 {
                        1.0 - wt
                    } else {
                        wt
                    };
                    corners[n] = (it + dt).min(g.n_steps) * sp_len + sp;
                    weights[n] = wy0 * wy1 * wtt;
                    n += 1;
                }
            }
        }
        MacroLinear {
            corners,
            weights,
            n,
        }
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        let mut v = 0.0;
        for k in 0..self.n {
            v += self.weights[k] * values[self.corners[k]];
        }
        v
    }
}

/// Four-variable grid function: one torus grid function per macroscopic node,
/// all sharing the same torus resolution. Storage is `[macro node][torus node]`.
#[derive(Debug, Clone)]
pub struct FourVarGridFn {
    pub macro_grid: MacroGrid,
    pub torus: TorusGrid,
    pub values: Vec<f64>,
}

impl FourVarGridFn {
    pub fn zeros(macro_grid: MacroGrid, torus: TorusGrid) -> Self {
        FourVarGridFn {
            macro_grid,
            torus,
            values: vec![0.0; macro_grid.len() * torus.len()],
        }
    }

    pub fn from_fn(
        macro_grid: MacroGrid,
        torus: TorusGrid,
        f: impl Fn([f64; 2], f64, [f64; 2], f64) -> f64,
    ) -> Self {
        let mut out = FourVarGridFn::zeros(macro_grid, torus);
        let tl = torus.len();
        for mn in 0..macro_grid.len() {
            let it = mn / macro_grid.space_len();
            let sp = mn % macro_grid.space_len();
            let x = macro_grid.x_of(macro_grid.space_coords(sp));
            let t = macro_grid.t_of(it);
            for k in 0..tl {
                let (y, tau) = torus.node_pos(k);
                out.values[mn * tl + k] = f(x, t, y, tau);
            }
        }
        out
    }

    #[inline]
    pub fn macro_offset(&self, macro_node: usize) -> usize {
        macro_node * self.torus.len()
    }

    pub fn cell_values(&self, macro_node: usize) -> &[f64] {
        let tl = self.torus.len();
        &self.values[macro_node * tl..(macro_node + 1) * tl]
    }

    pub fn cell_values_mut(&mut self, macro_node: usize) -> &mut [f64] {
        let tl = self.torus.len();
        &mut self.values[macro_node * tl..(macro_node + 1) * tl]
    }

    /// Full four-variable interpolation: multilinear across macro nodes,
    /// periodic multilinear on the torus.
    pub fn eval(&self, x: [f64; 2], t: f64, y: [f64; 2], tau: f64) -> Result<f64> {
        if !self.macro_grid.contains(x, t) {
            return Err(Error::OutOfDomain { x, t });
        }
        let ml = MacroLinear::new(&self.macro_grid, x, t);
        let tl = TorusLinear::new(self.torus, y, tau);
        let stride = self.torus.len();
        let mut v = 0.0;
        for k in 0..ml.n {
            v += ml.weights[k] * tl.apply_offset(&self.values, ml.corners[k] * stride);
        }
        Ok(v)
    }

    /// Centered periodic micro derivative along spatial axis `axis`, applied
    /// cell by cell.
    pub fn micro_d_y(&self, axis: usize) -> FourVarGridFn {
        let mut out = FourVarGridFn::zeros(self.macro_grid, self.torus);
        let g = self.torus;
        let inv2h = 0.5 / g.h_y();
        let tl = g.len();
        for mn in 0..self.macro_grid.len() {
            let src = &self.values[mn * tl..(mn + 1) * tl];
            let dst = &mut out.values[mn * tl..(mn + 1) * tl];
            for flat in 0..tl {
                let (iy, it) = g.coords(flat);
                let mut up = iy;
                let mut dn = iy;
                up[axis] = (iy[axis] + 1) % g.n_y;
                dn[axis] = (iy[axis] + g.n_y - 1) % g.n_y;
                dst[flat] = (src[g.idx(up, it)] - src[g.idx(dn, it)]) * inv2h;
            }
        }
        out
    }
}

/// Composition `phi^eps(x, t) = phi(x, t; x/eps, t/eps^2)` evaluated by
/// interpolation (macro multilinear, torus periodic multilinear).
pub fn composition_eval(phi: &FourVarGridFn, eps: f64, x: [f64; 2], t: f64) -> Result<f64> {
    assert!(eps > 0.0);
    let y = [x[0] / eps, x[1] / eps];
    let tau = t / (eps * eps);
    phi.eval(x, t, [y[0] - y[0].floor(), y[1] - y[1].floor()], tau - tau.floor())
}
