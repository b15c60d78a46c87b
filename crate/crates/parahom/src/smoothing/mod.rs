//! Macroscopic smoothing operators: convolution in `(x, t)` against rescaled
//! unit-mass bump kernels (width eps in space, eps^2 in time), derivative
//! kernels, the space-time cutoff eta_eps, and the composite K_eps.
//!
//! Discrete convolutions are direct sums over a compact tap stencil. Tap
//! weights are normalized to exact unit mass and exact symmetry, which makes
//! constant preservation, positivity, and odd-moment cancellation hold at
//! round-off level by construction.

pub mod scaling;

use crate::error::{Error, Result};
use crate::fields::{FourVarGridFn, MacroGrid, MacroGridFn};

/// Smooth bump shape on (-1/2, 1/2): `exp(-1/(1 - 4 s^2))`.
#[inline]
pub fn bump(s: f64) -> f64 {
    let q = 1.0 - 4.0 * s * s;
    if q <= 0.0 {
        0.0
    } else {
        (-1.0 / q).exp()
    }
}

/// Derivative of the bump shape.
#[inline]
pub fn bump_prime(s: f64) -> f64 {
    let q = 1.0 - 4.0 * s * s;
    if q <= 0.0 {
        0.0
    } else {
        -8.0 * s / (q * q) * (-1.0 / q).exp()
    }
}

/// Normalized mollifier pair: phi1 univariate on (-1/2, 1/2), phi2 radial on
/// the ball of radius 1/2, both nonnegative with unit mass.
#[derive(Debug, Clone)]
pub struct KernelPair {
    pub dim: usize,
    pub c1: f64,
    pub c2: f64,
}

impl KernelPair {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1 && dim <= 2);
        // numeric normalization; fine trapezoid is superalgebraic on bumps
        let n = 1 << 14;
        let h = 1.0 / n as f64;
        let mut m1 = 0.0;
        for k in 0..=n {
            let s = -0.5 + k as f64 * h;
            m1 += bump(s) * h;
        }
        let c1 = 1.0 / m1;
        let c2 = if dim == 1 {
            c1
        } else {
            let mut m2 = 0.0;
            for i in 0..=n {
                for j in 0..=n {
                    let z0 = -0.5 + i as f64 * h;
                    let z1 = -0.5 + j as f64 * h;
                    m2 += bump((z0 * z0 + z1 * z1).sqrt()) * h * h;
                }
            }
            1.0 / m2
        };
        KernelPair { dim, c1, c2 }
    }

    #[inline]
    pub fn phi1(&self, s: f64) -> f64 {
        self.c1 * bump(s)
    }

    #[inline]
    pub fn phi1_prime(&self, s: f64) -> f64 {
        self.c1 * bump_prime(s)
    }

    #[inline]
    pub fn phi2(&self, z: [f64; 2]) -> f64 {
        if self.dim == 1 {
            self.c2 * bump(z[0])
        } else {
            self.c2 * bump((z[0] * z[0] + z[1] * z[1]).sqrt())
        }
    }

    pub fn phi2_grad(&self, z: [f64; 2]) -> [f64; 2] {
        if self.dim == 1 {
            [self.c2 * bump_prime(z[0]), 0.0]
        } else {
            let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
            if r == 0.0 {
                return [0.0, 0.0];
            }
            let d = self.c2 * bump_prime(r) / r;
            [d * z[0], d * z[1]]
        }
    }
}

/// One-axis tap stencil: offsets in grid steps, weights with exact unit mass
/// and exact symmetry.
#[derive(Debug, Clone)]
pub struct Taps {
    pub offsets: Vec<isize>,
    pub weights: Vec<f64>,
    pub stride: usize,
}

fn normalize_symmetric(half: &[f64], stride: usize) -> Taps {
    // half[k] is the weight at offset +k*stride, k = 0.. (half[0] = center)
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    let mut total = half[0];
    for w in half.iter().skip(1) {
        total += 2.0 * w;
    }
    let k_max = half.len() - 1;
    for k in -(k_max as isize)..=(k_max as isize) {
        let w = half[k.unsigned_abs()];
        if w == 0.0 {
            continue;
        }
        offsets.push(k * stride as isize);
        weights.push(w / total);
    }
    Taps {
        offsets,
        weights,
        stride,
    }
}

/// Taps per axis for the spatial kernel `phi_{2,eps}` (radius eps/2) on a grid
/// of spacing `h`. `taps_per_radius` controls quadrature density; `usize::MAX`
/// means one tap per grid node.
pub fn space_axis_taps(eps: f64, h: f64, taps_per_radius: usize) -> Result<Taps> {
    if h > eps / 4.0 + 1e-14 {
        return Err(Error::UnderResolved {
            eps,
            detail: format!("spatial spacing h = {h} exceeds eps/4 = {}", eps / 4.0),
        });
    }
    let radius = eps / 2.0;
    let stride = if taps_per_radius == usize::MAX {
        1
    } else {
        ((radius / (taps_per_radius as f64 * h)).floor() as usize).max(1)
    };
    let step = stride as f64 * h;
    let k_max = (radius / step).ceil() as usize;
    let half: Vec<f64> = (0..=k_max).map(|k| bump(k as f64 * step / eps)).collect();
    Ok(normalize_symmetric(&half, stride))
}

/// Taps for the temporal kernel `phi_{1,eps}` (radius eps^2/2) on step `dt`.
pub fn time_taps(eps: f64, dt: f64, taps_per_radius: usize) -> Result<Taps> {
    let eps2 = eps * eps;
    if dt > eps2 / 4.0 + 1e-14 {
        return Err(Error::UnderResolved {
            eps,
            detail: format!("time step dt = {dt} exceeds eps^2/4 = {}", eps2 / 4.0),
        });
    }
    let radius = eps2 / 2.0;
    let stride = if taps_per_radius == usize::MAX {
        1
    } else {
        ((radius / (taps_per_radius as f64 * dt)).floor() as usize).max(1)
    };
    let step = stride as f64 * dt;
    let k_max = (radius / step).ceil() as usize;
    let half: Vec<f64> = (0..=k_max).map(|k| bump(k as f64 * step / eps2)).collect();
    Ok(normalize_symmetric(&half, stride))
}

/// 2D radial tap table (non-separable); 1D reduces to the axis taps.
#[derive(Debug, Clone)]
pub struct SpaceTaps {
    pub dim: usize,
    pub offsets: Vec<[isize; 2]>,
    pub weights: Vec<f64>,
}

pub fn space_taps(dim: usize, eps: f64, h: f64, taps_per_radius: usize) -> Result<SpaceTaps> {
    if dim == 1 {
        let t = space_axis_taps(eps, h, taps_per_radius)?;
        return Ok(SpaceTaps {
            dim,
            offsets: t.offsets.iter().map(|&o| [o, 0]).collect(),
            weights: t.weights,
        });
    }
    if h > eps / 4.0 + 1e-14 {
        return Err(Error::UnderResolved {
            eps,
            detail: format!("spatial spacing h = {h} exceeds eps/4 = {}", eps / 4.0),
        });
    }
    let radius = eps / 2.0;
    let stride = if taps_per_radius == usize::MAX {
        1
    } else {
        ((radius / (taps_per_radius as f64 * h)).floor() as usize).max(1)
    };
    let step = stride as f64 * h;
    let k_max = (radius / step).ceil() as isize;
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    let mut total = 0.0;
    for i in -k_max..=k_max {
        for j in -k_max..=k_max {
            let z = [i as f64 * step / eps, j as f64 * step / eps];
            let w = bump((z[0] * z[0] + z[1] * z[1]).sqrt());
            if w > 0.0 {
                offsets.push([i * stride as isize, j * stride as isize]);
                weights.push(w);
                total += w;
            }
        }
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(SpaceTaps {
        dim,
        offsets,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothAxes {
    Time,
    Space,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    /// Fields are zero outside the cylinder (the cutoff guards the collars).
    Zero,
    /// Periodic wrap, used by tests that need exact commutation identities.
    Periodic,
}

/// Smoothing operator with fixed kernel and discretization policy.
pub struct Smoother {
    pub kernels: KernelPair,
    pub taps_per_radius: usize,
    pub extension: Extension,
}

impl Smoother {
    pub fn new(dim: usize) -> Self {
        Smoother {
            kernels: KernelPair::new(dim),
            taps_per_radius: usize::MAX,
            extension: Extension::Zero,
        }
    }

    pub fn with_taps_per_radius(dim: usize, taps: usize) -> Self {
        Smoother {
            kernels: KernelPair::new(dim),
            taps_per_radius: taps,
            extension: Extension::Zero,
        }
    }

    fn conv_space_slice(
        &self,
        grid: &MacroGrid,
        input: &[f64],
        taps: &SpaceTaps,
        out: &mut [f64],
    ) {
        let np = grid.nodes_per_axis() as isize;
        if grid.dim == 1 {
            for i in 0..np {
                let mut acc = 0.0;
                for (o, w) in taps.offsets.iter().zip(taps.weights.iter()) {
                    let j = i - o[0];
                    let v = match self.extension {
                        Extension::Zero => {
                            if j < 0 || j >= np {
                                0.0
                            } else {
                                input[j as usize]
                            }
                        }
                        Extension::Periodic => input[j.rem_euclid(np - 1) as usize],
                    };
                    acc += w * v;
                }
                out[i as usize] = acc;
            }
        } else {
            for iy in 0..np {
                for ix in 0..np {
                    let mut acc = 0.0;
                    for (o, w) in taps.offsets.iter().zip(taps.weights.iter()) {
                        let jx = ix - o[0];
                        let jy = iy - o[1];
                        let v = match self.extension {
                            Extension::Zero => {
                                if jx < 0 || jx >= np || jy < 0 || jy >= np {
                                    0.0
                                } else {
                                    input[(jy * np + jx) as usize]
                                }
                            }
                            Extension::Periodic => {
                                let jx = jx.rem_euclid(np - 1);
                                let jy = jy.rem_euclid(np - 1);
                                input[(jy * np + jx) as usize]
                            }
                        };
                        acc += w * v;
                    }
                    out[(iy * np + ix) as usize] = acc;
                }
            }
        }
    }

    fn conv_time(&self, grid: &MacroGrid, values: &[f64], taps: &Taps, out: &mut [f64]) {
        let nt = grid.time_len() as isize;
        let nsp = grid.space_len();
        for it in 0..nt {
            let dst = &mut out[(it as usize) * nsp..(it as usize + 1) * nsp];
            dst.fill(0.0);
            for (o, w) in taps.offsets.iter().zip(taps.weights.iter()) {
                let jt = it - o;
                match self.extension {
                    Extension::Zero => {
                        if jt < 0 || jt >= nt {
                            continue;
                        }
                        let src = &values[(jt as usize) * nsp..(jt as usize + 1) * nsp];
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d += w * s;
                        }
                    }
                    Extension::Periodic => {
                        let jt = jt.rem_euclid(nt - 1) as usize;
                        let src = &values[jt * nsp..(jt + 1) * nsp];
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }

    /// `S_eps` on a macroscopic grid function, selected axes.
    pub fn smooth(&self, f: &MacroGridFn, eps: f64, axes: SmoothAxes) -> Result<MacroGridFn> {
        let g = f.grid;
        let mut cur = f.values.clone();
        if matches!(axes, SmoothAxes::Space | SmoothAxes::Both) {
            let taps = space_taps(g.dim, eps, g.h(), self.taps_per_radius)?;
            let mut out = vec![0.0; cur.len()];
            let nsp = g.space_len();
            for it in 0..g.time_len() {
                let (src, dst) = (
                    &cur[it * nsp..(it + 1) * nsp],
                    &mut out[it * nsp..(it + 1) * nsp],
                );
                self.conv_space_slice(&g, src, &taps, dst);
            }
            cur = out;
        }
        if matches!(axes, SmoothAxes::Time | SmoothAxes::Both) {
            let taps = time_taps(eps, g.dt(), self.taps_per_radius)?;
            let mut out = vec![0.0; cur.len()];
            self.conv_time(&g, &cur, &taps, &mut out);
            cur = out;
        }
        Ok(MacroGridFn { grid: g, values: cur })
    }

    /// `S_eps` on a four-variable field: convolution over the macro indices
    /// only, micro indices untouched, so micro derivatives commute exactly.
    pub fn smooth_four_var(
        &self,
        f: &FourVarGridFn,
        eps: f64,
        axes: SmoothAxes,
    ) -> Result<FourVarGridFn> {
        let mg = f.macro_grid;
        let tl = f.torus.len();
        let mut out = FourVarGridFn::zeros(mg, f.torus);
        // reshuffle: treat each torus node as an independent macro field
        let mut scratch_in = MacroGridFn::zeros(mg);
        for k in 0..tl {
            for mn in 0..mg.len() {
                scratch_in.values[mn] = f.values[mn * tl + k];
            }
            let sm = self.smooth(&scratch_in, eps, axes)?;
            for mn in 0..mg.len() {
                out.values[mn * tl + k] = sm.values[mn];
            }
        }
        Ok(out)
    }

    /// Gradient of the spatially smoothed field: centered difference of
    /// `S^x_eps f` (identical to convolution with the derivative kernel on a
    /// uniform grid). One component per spatial axis.
    pub fn grad_smooth_x(&self, f: &MacroGridFn, eps: f64) -> Result<Vec<MacroGridFn>> {
        let sm = self.smooth(f, eps, SmoothAxes::Space)?;
        Ok(centered_gradient(&sm, self.extension))
    }
}

/// Centered spatial differences with the given extension; one-sided stencils
/// are not used here because smoothing consumers stay off the collar.
pub fn centered_gradient(f: &MacroGridFn, ext: Extension) -> Vec<MacroGridFn> {
    let g = f.grid;
    let np = g.nodes_per_axis() as isize;
    let inv2h = 0.5 / g.h();
    let nsp = g.space_len();
    let mut out: Vec<MacroGridFn> = (0..g.dim).map(|_| MacroGridFn::zeros(g)).collect();
    let fetch = |slice: &[f64], ix: isize, iy: isize| -> f64 {
        match ext {
            Extension::Zero => {
                if ix < 0 || ix >= np || iy < 0 || iy >= np {
                    0.0
                } else {
                    slice[(iy * np + ix) as usize]
                }
            }
            Extension::Periodic => {
                let ix = ix.rem_euclid(np - 1);
                let iy = iy.rem_euclid(np - 1);
                slice[(iy * np + ix) as usize]
            }
        }
    };
    for it in 0..g.time_len() {
        let src = f.slice(it);
        for axis in 0..g.dim {
            let dst = &mut out[axis].values[it * nsp..(it + 1) * nsp];
            if g.dim == 1 {
                for i in 0..np {
                    dst[i as usize] = (fetch(src, i + 1, 0) - fetch(src, i - 1, 0)) * inv2h;
                }
            } else {
                for iy in 0..np {
                    for ix in 0..np {
                        let v = if axis == 0 {
                            fetch(src, ix + 1, iy) - fetch(src, ix - 1, iy)
                        } else {
                            fetch(src, ix, iy + 1) - fetch(src, ix, iy - 1)
                        };
                        dst[(iy * np + ix) as usize] = v * inv2h;
                    }
                }
            }
        }
    }
    out
}

/// C-infinity ramp: 0 for s <= 0, 1 for s >= 1.
#[inline]
pub fn ramp(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let g = (-1.0 / s).exp();
        let h = (-1.0 / (1.0 - s)).exp();
        g / (g + h)
    }
}

/// Space-time cutoff `eta_eps = eta_1(t) * eta_2(x)`: eta_1 vanishes outside
/// `(4 eps^2, T - 4 eps^2)` and is 1 on `(5 eps^2, T - 5 eps^2)`; eta_2
/// vanishes on the 4-eps boundary collar and is 1 past the 5-eps collar.
#[derive(Debug, Clone)]
pub struct Cutoff {
    pub eps: f64,
    pub grid: MacroGrid,
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
}

pub fn eta1_at(eps: f64, t_end: f64, t: f64) -> f64 {
    let e2 = eps * eps;
    ramp((t - 4.0 * e2) / e2) * ramp((t_end - t - 4.0 * e2) / e2)
}

pub fn eta2_at(dim: usize, eps: f64, x: [f64; 2]) -> f64 {
    let mut v = ramp((x[0] - 4.0 * eps) / eps) * ramp((1.0 - x[0] - 4.0 * eps) / eps);
    if dim == 2 {
        v *= ramp((x[1] - 4.0 * eps) / eps) * ramp((1.0 - x[1] - 4.0 * eps) / eps);
    }
    v
}

pub fn cutoff(eps: f64, grid: &MacroGrid) -> Result<Cutoff> {
    let sqrt_t = grid.t_end.sqrt();
    if eps > sqrt_t / 5.0 {
        return Err(Error::EpsilonTooLarge {
            eps,
            limit: sqrt_t / 5.0,
            reason: "temporal plateau of eta_1 would be empty".into(),
        });
    }
    let diam = if grid.dim == 2 { 2.0f64.sqrt() } else { 1.0 };
    if eps > diam / 10.0 {
        return Err(Error::EpsilonTooLarge {
            eps,
            limit: diam / 10.0,
            reason: "spatial plateau of eta_2 would be empty".into(),
        });
    }
    let eta1 = (0..grid.time_len())
        .map(|it| eta1_at(eps, grid.t_end, grid.t_of(it)))
        .collect();
    let eta2 = (0..grid.space_len())
        .map(|sp| eta2_at(grid.dim, eps, grid.x_of(grid.space_coords(sp))))
        .collect();
    Ok(Cutoff {
        eps,
        grid: *grid,
        eta1,
        eta2,
    })
}

impl Cutoff {
    #[inline]
    pub fn at(&self, sp: usize, it: usize) -> f64 {
        self.eta1[it] * self.eta2[sp]
    }
}

/// `K_eps(f) = S_eps(f) * eta_eps`.
pub fn k_eps(
    smoother: &Smoother,
    f: &MacroGridFn,
    eps: f64,
    cut: &Cutoff,
) -> Result<MacroGridFn> {
    if cut.grid != f.grid {
        return Err(Error::GridMismatch("cutoff grid != field grid".into()));
    }
    let mut sm = smoother.smooth(f, eps, SmoothAxes::Both)?;
    let nsp = f.grid.space_len();
    for it in 0..f.grid.time_len() {
        let e1 = cut.eta1[it];
        for (sp, v) in sm.values[it * nsp..(it + 1) * nsp].iter_mut().enumerate() {
            *v *= e1 * cut.eta2[sp];
        }
    }
    Ok(sm)
}
