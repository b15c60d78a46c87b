//! Per-eps pipeline and the full study driver. The fine and homogenized
//! solves march in lockstep with ring buffers, so memory stays proportional
//! to a few time slices regardless of the horizon.

use std::time::Instant;

use rayon::prelude::*;

use crate::cell::solve_corrector_field;
use crate::effective::{
    build_flux_correctors_prepared, build_flux_mismatch, effective_tensor, EffectiveTensor,
};
use crate::error::{Error, Result};
use crate::fields::{trapezoid_weight, CoefficientSpec, FourVarGridFn, MacroGrid, TorusGridFn};
use crate::linsolve::LinearSolver;
use crate::smoothing::{bump, cutoff, space_taps, time_taps, Cutoff};
use crate::solvers::{
    check_fine_resolution, CoefficientHandle, StepCoefficient, ThetaMarcher,
};
use crate::study::config::StudyConfig;
use crate::study::rates::fit_rate;
use crate::study::report::{ConvergenceReport, EpsRow, ExtraNorm, FailureNote, FloorGuardReport};
use crate::study::weps::{slice_gradient, CorrectorEngine};

/// Interpolated-kernel taps for coarse grids: the kernel integral is
/// quadratured at sub-grid positions and each quadrature point is split
/// linearly between its neighboring grid slices. Exact unit mass, exact
/// symmetry; degenerates gracefully when the kernel is narrower than the
/// grid spacing (the cell-sample grids are in exactly that regime).
fn interpolated_axis_taps(kernel_scale: f64, grid_h: f64, quad_per_radius: usize) -> Vec<(isize, f64)> {
    let q = quad_per_radius.max(2) as isize;
    let delta = 0.5 * kernel_scale / q as f64;
    let mut acc: Vec<(isize, f64)> = Vec::new();
    let mut push = |off: isize, w: f64| {
        if let Some(e) = acc.iter_mut().find(|e| e.0 == off) {
            e.1 += w;
        } else {
            acc.push((off, w));
        }
    };
    let mut total = 0.0;
    for k in -(q - 1)..=(q - 1) {
        let s = k as f64 * delta;
        let w = bump(s / kernel_scale);
        if w == 0.0 {
            continue;
        }
        total += w;
        let pos = s / grid_h;
        let lo = pos.floor();
        let theta = pos - lo;
        push(lo as isize, w * (1.0 - theta));
        if theta > 0.0 {
            push(lo as isize + 1, w * theta);
        }
    }
    let mut taps: Vec<(isize, f64)> = acc
        .into_iter()
        .map(|(o, w)| (o, w / total))
        .filter(|e| e.1 != 0.0)
        .collect();
    taps.sort_by_key(|e| e.0);
    taps
}

/// Radial 2D variant, splitting bilinearly over the coarse lattice.
fn interpolated_radial_taps(
    kernel_scale: f64,
    grid_h: f64,
    quad_per_radius: usize,
) -> Vec<([isize; 2], f64)> {
    let q = quad_per_radius.max(2) as isize;
    let delta = 0.5 * kernel_scale / q as f64;
    let mut acc: Vec<([isize; 2], f64)> = Vec::new();
    let mut push = |off: [isize; 2], w: f64| {
        if let Some(e) = acc.iter_mut().find(|e| e.0 == off) {
            e.1 += w;
        } else {
            acc.push((off, w));
        }
    };
    let mut total = 0.0;
    for k1 in -(q - 1)..=(q - 1) {
        for k0 in -(q - 1)..=(q - 1) {
            let z = [k0 as f64 * delta, k1 as f64 * delta];
            let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
            let w = bump(r / kernel_scale);
            if w == 0.0 {
                continue;
            }
            total += w;
            let pos = [z[0] / grid_h, z[1] / grid_h];
            let lo = [pos[0].floor(), pos[1].floor()];
            let th = [pos[0] - lo[0], pos[1] - lo[1]];
            let lo = [lo[0] as isize, lo[1] as isize];
            push(lo, w * (1.0 - th[0]) * (1.0 - th[1]));
            push([lo[0] + 1, lo[1]], w * th[0] * (1.0 - th[1]));
            push([lo[0], lo[1] + 1], w * (1.0 - th[0]) * th[1]);
            push([lo[0] + 1, lo[1] + 1], w * th[0] * th[1]);
        }
    }
    let mut taps: Vec<([isize; 2], f64)> = acc
        .into_iter()
        .map(|(o, w)| (o, w / total))
        .filter(|e| e.1 != 0.0)
        .collect();
    taps.sort_by_key(|e| (e.0[1], e.0[0]));
    taps
}

/// `S_eps` of a four-variable field on its (coarse) cell-sample grid, using
/// interpolated-kernel taps; zero extension in macro space and time.
pub fn smooth_sampled_field(f: &FourVarGridFn, eps: f64, quad_per_radius: usize) -> FourVarGridFn {
    let mg = f.macro_grid;
    let tl = f.torus.len();
    let nsp = mg.space_len();
    let mut out = f.clone();

    // spatial pass
    if mg.dim == 1 {
        let taps = interpolated_axis_taps(eps, mg.h(), quad_per_radius);
        let src = out.values.clone();
        let np = mg.nodes_per_axis() as isize;
        out.values
            .par_chunks_mut(tl)
            .enumerate()
            .for_each(|(mn, chunk)| {
                let it = mn / nsp;
                let i = (mn % nsp) as isize;
                chunk.fill(0.0);
                for (o, w) in &taps {
                    let j = i - o;
                    if j < 0 || j >= np {
                        continue;
                    }
                    let src_off = (it * nsp + j as usize) * tl;
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v += w * src[src_off + k];
                    }
                }
            });
    } else {
        let taps = interpolated_radial_taps(eps, mg.h(), quad_per_radius);
        let src = out.values.clone();
        let np = mg.nodes_per_axis() as isize;
        out.values
            .par_chunks_mut(tl)
            .enumerate()
            .for_each(|(mn, chunk)| {
                let it = mn / nsp;
                let sp = mn % nsp;
                let i0 = (sp % np as usize) as isize;
                let i1 = (sp / np as usize) as isize;
                chunk.fill(0.0);
                for (o, w) in &taps {
                    let j0 = i0 - o[0];
                    let j1 = i1 - o[1];
                    if j0 < 0 || j0 >= np || j1 < 0 || j1 >= np {
                        continue;
                    }
                    let src_off = (it * nsp + (j1 * np + j0) as usize) * tl;
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v += w * src[src_off + k];
                    }
                }
            });
    }

    // temporal pass (kernel width eps^2)
    if mg.n_steps > 0 {
        let taps = interpolated_axis_taps(eps * eps, mg.dt(), quad_per_radius);
        let src = out.values.clone();
        let nt = mg.time_len() as isize;
        out.values
            .par_chunks_mut(tl)
            .enumerate()
            .for_each(|(mn, chunk)| {
                let it = (mn / nsp) as isize;
                let sp = mn % nsp;
                chunk.fill(0.0);
                for (o, w) in &taps {
                    let jt = it - o;
                    if jt < 0 || jt >= nt {
                        continue;
                    }
                    let src_off = (jt as usize * nsp + sp) * tl;
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v += w * src[src_off + k];
                    }
                }
            });
    }
    out
}

/// Corrector data for one eps: effective tensor plus the smoothed chi and
/// (optionally) the smoothed flux-corrector components entering w.
pub struct CorrectorPackage {
    pub tensor: EffectiveTensor,
    pub chi_smoothed: Vec<FourVarGridFn>,
    /// `S_eps(frakB_{(d+1) k j})` indexed `k * d + j` (empty without w)
    pub frakb_smoothed: Vec<FourVarGridFn>,
    pub worst_cell_residual: f64,
}

pub fn build_corrector_package(
    spec: &CoefficientSpec,
    sample: MacroGrid,
    torus: crate::fields::TorusGrid,
    eps: f64,
    with_flux: bool,
    quad_per_radius: usize,
    opts: &crate::linsolve::SolverOptions,
    solver: &dyn LinearSolver,
) -> Result<CorrectorPackage> {
    let d = spec.dim;
    let field = solve_corrector_field(spec, sample, torus, false, opts, solver)?;
    let tensor = effective_tensor(&field, d)?;
    tensor.certify(spec.mu, 1e-8)?;

    let mut frakb_raw: Vec<FourVarGridFn> = Vec::new();
    if with_flux {
        frakb_raw = (0..d * d)
            .map(|_| FourVarGridFn::zeros(sample, torus))
            .collect();
        // the flux-potential heat operator does not depend on the macro node:
        // prepare it once and reuse across all nodes and components
        let zero_rhs = vec![0.0; torus.len()];
        let flux_system = crate::cell::assemble_cell_system(
            torus,
            d,
            crate::cell::CellProblem::FluxPotential { rhs: &zero_rhs },
        )?;
        let prepared_flux = crate::cell::PreparedCell::new(&flux_system, solver)?;

        let per_node: Vec<Result<Vec<TorusGridFn>>> = (0..sample.len())
            .into_par_iter()
            .map(|mn| {
                let chi_refs: Vec<TorusGridFn> = (0..d)
                    .map(|j| TorusGridFn {
                        grid: torus,
                        values: field.chi[j].cell_values(mn).to_vec(),
                    })
                    .collect();
                let refs: Vec<&TorusGridFn> = chi_refs.iter().collect();
                let b = build_flux_mismatch(
                    d,
                    torus,
                    &field.cell_a[mn],
                    &refs,
                    &tensor.per_node[mn],
                )?;
                let fset = build_flux_correctors_prepared(&b, &prepared_flux, opts.res_tol)?;
                let mut out = Vec::with_capacity(d * d);
                for k in 0..d {
                    for j in 0..d {
                        out.push(fset.component(d, k, j).clone());
                    }
                }
                Ok(out)
            })
            .collect();
        for (mn, r) in per_node.into_iter().enumerate() {
            let comps = r.map_err(|e| e.at(format!("flux correctors at macro node {mn}")))?;
            for (idx, c) in comps.into_iter().enumerate() {
                frakb_raw[idx].cell_values_mut(mn).copy_from_slice(&c.values);
            }
        }
    }

    let chi_smoothed = field
        .chi
        .iter()
        .map(|c| smooth_sampled_field(c, eps, quad_per_radius))
        .collect();
    let frakb_smoothed = frakb_raw
        .iter()
        .map(|c| smooth_sampled_field(c, eps, quad_per_radius))
        .collect();
    Ok(CorrectorPackage {
        tensor,
        chi_smoothed,
        frakb_smoothed,
        worst_cell_residual: field.worst_residual,
    })
}

/// Circular slice buffer keyed by absolute slice index.
struct Ring {
    slices: Vec<Vec<f64>>,
    head: isize, // highest absolute index stored, -1 when empty
}

impl Ring {
    fn new(len: usize, width: usize) -> Self {
        Ring {
            slices: vec![vec![0.0; width]; len.max(1)],
            head: -1,
        }
    }

    fn push(&mut self, idx: usize, data: &[f64]) {
        debug_assert_eq!(idx as isize, self.head + 1);
        self.head = idx as isize;
        let n = self.slices.len();
        self.slices[idx % n].copy_from_slice(data);
    }

    fn get(&self, idx: isize) -> Option<&[f64]> {
        let n = self.slices.len() as isize;
        if idx < 0 || idx > self.head || idx <= self.head - n {
            return None;
        }
        Some(&self.slices[(idx as usize) % self.slices.len()])
    }

    fn slot_mut(&mut self, idx: usize) -> &mut Vec<f64> {
        debug_assert_eq!(idx as isize, self.head + 1);
        self.head = idx as isize;
        let n = self.slices.len();
        &mut self.slices[idx % n]
    }
}

struct NormAccumulators {
    l2l2: f64,
    lp0: Option<f64>,
    w_h1: Option<f64>,
    layer: f64,
    extra: Vec<(f64, f64, f64)>, // (q, p, acc) finite q; q = inf uses max
}

/// Everything needed to run one eps of the study.
struct EpsRun<'a> {
    cfg: &'a StudyConfig,
    eps: f64,
    fine: MacroGrid,
    solver: &'a dyn LinearSolver,
}

impl<'a> EpsRun<'a> {
    fn space_weight(&self, sp: usize) -> f64 {
        let g = &self.fine;
        let ix = g.space_coords(sp);
        let mut w = trapezoid_weight(ix[0], g.n_cells, g.h());
        if g.dim == 2 {
            w *= trapezoid_weight(ix[1], g.n_cells, g.h());
        }
        w
    }

    fn execute(&self) -> Result<EpsRow> {
        let start = Instant::now();
        let cfg = self.cfg;
        let spec = &cfg.coefficient;
        let eps = self.eps;
        let d = cfg.dimension;
        let fine = self.fine;
        let nsp = fine.space_len();
        let t_end = cfg.problem.t_end;

        check_fine_resolution(spec, eps, &fine).map_err(|e| e.in_stage("validate", eps))?;

        // cutoff validity decides whether w is built at this eps
        let cut: Option<Cutoff> = if cfg.study.compute_w {
            cutoff(eps, &fine).ok()
        } else {
            None
        };

        // cell-sample grid: spacing eps/s in space, eps/s in time (the
        // corrector family varies on macroscopic scales only)
        let s = cfg.study.sample_per_eps as f64;
        let s_cells = ((s / eps).round() as usize).max(1);
        let s_steps = if spec.is_time_independent() {
            0
        } else {
            ((s * t_end / eps).round() as usize).max(1)
        };
        let sample = MacroGrid::new(d, s_cells, s_steps, t_end);
        let torus = crate::fields::TorusGrid::new(d, cfg.torus.n_y, cfg.torus.n_tau);

        let pkg = build_corrector_package(
            spec,
            sample,
            torus,
            eps,
            cut.is_some(),
            cfg.study.taps_per_radius.max(4),
            &cfg.solver.options(),
            self.solver,
        )
        .map_err(|e| e.in_stage("cell", eps))?;

        let engine = match &cut {
            Some(_) => Some(
                CorrectorEngine::new(
                    eps,
                    fine,
                    &pkg.chi_smoothed,
                    &pkg.frakb_smoothed,
                    cfg.study.taps_per_radius,
                )
                .map_err(|e| e.in_stage("w-eps", eps))?,
            ),
            None => None,
        };

        // marchers
        let init = |x: [f64; 2]| cfg.problem.initial.eval(d, x, 0.0);
        let src = |x: [f64; 2], t: f64| cfg.problem.source.eval(d, x, t);
        let mut u0m = ThetaMarcher::new(
            fine,
            StepCoefficient::forward(CoefficientHandle::Effective(&pkg.tensor)),
            init,
            src,
            self.solver,
            0.5,
        );
        let mut uem = ThetaMarcher::new(
            fine,
            StepCoefficient::forward(CoefficientHandle::Oscillatory { spec, eps }),
            init,
            src,
            self.solver,
            0.5,
        );

        // smoothing pipeline for K = S_eps(grad u_0) * eta
        let taps = cfg.study.taps_per_radius;
        let (w1, sx_taps, st_taps) = if cut.is_some() {
            let st = time_taps(eps, fine.dt(), taps).map_err(|e| e.in_stage("w-eps", eps))?;
            let sx = space_taps(d, eps, fine.h(), taps).map_err(|e| e.in_stage("w-eps", eps))?;
            let w1 = st.offsets.iter().map(|o| o.unsigned_abs()).max().unwrap_or(0);
            (w1, Some(sx), Some(st))
        } else {
            (0, None, None)
        };
        let w2 = engine.as_ref().map(|e| e.time_reach()).unwrap_or(0);
        let lookahead = w1 + w2;

        let mut u0_ring = Ring::new(lookahead + 1, nsp);
        let mut v_rings: Vec<Ring> = (0..d).map(|_| Ring::new(2 * w1 + 1, nsp)).collect();
        let mut k_rings: Vec<Ring> = (0..d).map(|_| Ring::new(2 * w2 + 1, nsp)).collect();
        let mut grad_scratch: Vec<Vec<f64>> = (0..d).map(|_| vec![0.0; nsp]).collect();

        // spatial collar mask for the layer norm (distance < 6 eps)
        let collar: Vec<bool> = (0..nsp)
            .map(|sp| fine.boundary_distance(fine.x_of(fine.space_coords(sp))) < 6.0 * eps)
            .collect();
        let space_w: Vec<f64> = (0..nsp).map(|sp| self.space_weight(sp)).collect();

        let mut acc = NormAccumulators {
            l2l2: 0.0,
            lp0: cfg.p0().map(|_| 0.0),
            w_h1: engine.as_ref().map(|_| 0.0),
            layer: 0.0,
            extra: cfg.study.norms.iter().map(|&(q, p)| (q, p, 0.0)).collect(),
        };
        let np = fine.nodes_per_axis();
        let h = fine.h();

        // advance u0 one slice: push the raw slice, the layer-norm
        // contribution, and the spatially smoothed gradient slice
        let push_u0 = |idx: usize,
                           u0m: &mut ThetaMarcher,
                           u0_ring: &mut Ring,
                           v_rings: &mut [Ring],
                           grad_scratch: &mut [Vec<f64>],
                           acc: &mut NormAccumulators|
         -> Result<()> {
            if idx > 0 {
                u0m.advance().map_err(|e| e.in_stage("homogenized", eps))?;
            }
            debug_assert_eq!(u0m.step_index(), idx);
            u0_ring.push(idx, u0m.current());
            slice_gradient(&fine, u0m.current(), grad_scratch);

            // layer-norm contribution
            let t = fine.t_of(idx);
            let wt = trapezoid_weight(idx, fine.n_steps, fine.dt());
            let temporal = t < 6.0 * eps * eps || t > t_end - 6.0 * eps * eps;
            let mut s = 0.0;
            for sp in 0..nsp {
                if temporal || collar[sp] {
                    let mut g2 = 0.0;
                    for gax in grad_scratch.iter() {
                        g2 += gax[sp] * gax[sp];
                    }
                    s += space_w[sp] * g2;
                }
            }
            acc.layer += wt * s;

            if let Some(sx) = &sx_taps {
                // spatial smoothing of the gradient slices
                for (j, ring) in v_rings.iter_mut().enumerate() {
                    let dst = ring.slot_mut(idx);
                    dst.fill(0.0);
                    for (sp, v) in dst.iter_mut().enumerate() {
                        let i0 = (sp % np) as isize;
                        let i1 = (sp / np) as isize;
                        let mut a = 0.0;
                        for (o, w) in sx.offsets.iter().zip(sx.weights.iter()) {
                            let j0 = i0 - o[0];
                            if j0 < 0 || j0 >= np as isize {
                                continue;
                            }
                            let j1 = if d == 2 {
                                let v1 = i1 - o[1];
                                if v1 < 0 || v1 >= np as isize {
                                    continue;
                                }
                                v1
                            } else {
                                0
                            };
                            a += w * grad_scratch[j][(j1 * np as isize + j0) as usize];
                        }
                        *v = a;
                    }
                }
            }
            Ok(())
        };

        // complete one K slice from the smoothed-gradient ring (pull-driven,
        // so the K ring never outruns the w evaluation)
        let complete_k = |mk: usize, v_rings: &[Ring], k_rings: &mut [Ring]| {
            let st = st_taps.as_ref().unwrap();
            let cutref = cut.as_ref().unwrap();
            let e1 = cutref.eta1[mk];
            for (j, kring) in k_rings.iter_mut().enumerate() {
                let dst = kring.slot_mut(mk);
                dst.fill(0.0);
                if e1 == 0.0 {
                    continue;
                }
                for (o, w) in st.offsets.iter().zip(st.weights.iter()) {
                    let Some(vsl) = v_rings[j].get(mk as isize - o) else { continue };
                    for (sp, v) in dst.iter_mut().enumerate() {
                        *v += w * vsl[sp];
                    }
                }
                for (sp, v) in dst.iter_mut().enumerate() {
                    *v *= e1 * cutref.eta2[sp];
                }
            }
        };

        // prime the pipeline
        let horizon = fine.n_steps;
        let mut u0_head = 0usize;
        let mut k_head: isize = -1;
        push_u0(
            0,
            &mut u0m,
            &mut u0_ring,
            &mut v_rings,
            &mut grad_scratch,
            &mut acc,
        )?;
        while u0_head < lookahead.min(horizon) {
            u0_head += 1;
            push_u0(
                u0_head,
                &mut u0m,
                &mut u0_ring,
                &mut v_rings,
                &mut grad_scratch,
                &mut acc,
            )?;
        }

        let mut diff = vec![0.0; nsp];
        let mut terms = vec![0.0; nsp];
        let mut w_slice = vec![0.0; nsp];
        let mut w_grad: Vec<Vec<f64>> = (0..d).map(|_| vec![0.0; nsp]).collect();
        let mut step_worst_residual = 0.0f64;

        for n in 0..=horizon {
            // keep u0 ahead
            while u0_head < (n + lookahead).min(horizon) {
                u0_head += 1;
                push_u0(
                    u0_head,
                    &mut u0m,
                    &mut u0_ring,
                    &mut v_rings,
                    &mut grad_scratch,
                    &mut acc,
                )?;
            }
            if engine.is_some() {
                let k_target = ((n + w2).min(horizon)) as isize;
                while k_head < k_target {
                    k_head += 1;
                    complete_k(k_head as usize, &v_rings, &mut k_rings);
                }
            }
            if n > 0 {
                uem.advance().map_err(|e| e.in_stage("fine", eps))?;
            }
            let ue = uem.current();
            let u0 = u0_ring.get(n as isize).expect("u0 ring underrun");
            let wt = trapezoid_weight(n, fine.n_steps, fine.dt());

            for sp in 0..nsp {
                diff[sp] = ue[sp] - u0[sp];
            }
            // L2L2
            let mut s2 = 0.0;
            for sp in 0..nsp {
                s2 += space_w[sp] * diff[sp] * diff[sp];
            }
            acc.l2l2 += wt * s2;
            // L2Lp0 (d = 2): inner L4
            if let Some(a) = acc.lp0.as_mut() {
                let mut s4 = 0.0;
                for sp in 0..nsp {
                    let v = diff[sp] * diff[sp];
                    s4 += space_w[sp] * v * v;
                }
                *a += wt * s4.sqrt();
            }
            // configured extra norms
            for (q, p, a) in acc.extra.iter_mut() {
                let inner = if p.is_infinite() {
                    diff.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                } else {
                    let mut sp_acc = 0.0;
                    for sp in 0..nsp {
                        sp_acc += space_w[sp] * diff[sp].abs().powf(*p);
                    }
                    sp_acc.powf(1.0 / *p)
                };
                if q.is_infinite() {
                    *a = a.max(inner);
                } else {
                    *a += wt * inner.powf(*q);
                }
            }
            // w slice
            if let Some(eng) = &engine {
                let k_access = |m: isize, j: usize| -> Option<&[f64]> {
                    if m < 0 || m > horizon as isize {
                        None
                    } else {
                        Some(k_rings[j].get(m).expect("K ring underrun"))
                    }
                };
                eng.terms_slice(n, &k_access, &mut terms);
                for sp in 0..nsp {
                    w_slice[sp] = diff[sp] - terms[sp];
                }
                slice_gradient(&fine, &w_slice, &mut w_grad);
                let mut sw = 0.0;
                for sp in 0..nsp {
                    let mut g2 = w_slice[sp] * w_slice[sp];
                    for gax in w_grad.iter() {
                        g2 += gax[sp] * gax[sp];
                    }
                    sw += space_w[sp] * g2;
                }
                *acc.w_h1.as_mut().unwrap() += wt * sw;
            }
            let _ = (np, h);
            step_worst_residual = step_worst_residual
                .max(uem.diagnostics.worst_residual)
                .max(u0m.diagnostics.worst_residual);
        }

        let extra_norms = acc
            .extra
            .iter()
            .map(|&(q, p, a)| ExtraNorm {
                q,
                p,
                value: if q.is_infinite() { a } else { a.powf(1.0 / q) },
            })
            .collect();

        Ok(EpsRow {
            eps,
            err_l2l2: acc.l2l2.sqrt(),
            err_l2lp0: acc.lp0.map(|a| a.sqrt()),
            w_l2h1: acc.w_h1.map(|a| a.sqrt()),
            layer_norm: acc.layer.sqrt(),
            h: fine.h(),
            dt: fine.dt(),
            n_y: cfg.torus.n_y,
            n_tau: cfg.torus.n_tau,
            wall_seconds: start.elapsed().as_secs_f64(),
            extra_norms,
            cell_worst_residual: pkg.worst_cell_residual,
            step_worst_residual,
            effective_min_eig: pkg.tensor.min_sym_eig,
        })
    }
}

fn fine_grid_for(cfg: &StudyConfig, eps: f64) -> MacroGrid {
    let n_cells = ((cfg.study.h_per_eps as f64 / eps).round() as usize).max(2);
    let n_steps = ((cfg.study.dt_per_eps_sq as f64 * cfg.problem.t_end / (eps * eps)).round()
        as usize)
        .max(1);
    MacroGrid::new(cfg.dimension, n_cells, n_steps, cfg.problem.t_end)
}

/// Discretization-floor guard: re-run the fine problem at the largest eps on
/// a halved grid and measure the L2L2 self-difference on the shared nodes.
fn floor_guard(cfg: &StudyConfig, eps: f64, solver: &dyn LinearSolver) -> Result<f64> {
    let coarse = fine_grid_for(cfg, eps);
    let half = MacroGrid::new(
        cfg.dimension,
        coarse.n_cells * 2,
        coarse.n_steps * 2,
        coarse.t_end,
    );
    let d = cfg.dimension;
    let spec = &cfg.coefficient;
    let init = |x: [f64; 2]| cfg.problem.initial.eval(d, x, 0.0);
    let src = |x: [f64; 2], t: f64| cfg.problem.source.eval(d, x, t);
    let mut mc = ThetaMarcher::new(
        coarse,
        StepCoefficient::forward(CoefficientHandle::Oscillatory { spec, eps }),
        init,
        src,
        solver,
        0.5,
    );
    let mut mh = ThetaMarcher::new(
        half,
        StepCoefficient::forward(CoefficientHandle::Oscillatory { spec, eps }),
        init,
        src,
        solver,
        0.5,
    );
    let np_half = half.nodes_per_axis();
    let mut acc = 0.0;
    for n in 0..=coarse.n_steps {
        if n > 0 {
            mc.advance()?;
            mh.advance()?;
            mh.advance()?;
        }
        let uc = mc.current();
        let uh = mh.current();
        let wt = trapezoid_weight(n, coarse.n_steps, coarse.dt());
        let mut s = 0.0;
        for sp in 0..coarse.space_len() {
            let ix = coarse.space_coords(sp);
            let hf = if d == 2 {
                2 * ix[1] * np_half + 2 * ix[0]
            } else {
                2 * ix[0]
            };
            let dv = uc[sp] - uh[hf];
            let mut w = trapezoid_weight(ix[0], coarse.n_cells, coarse.h());
            if d == 2 {
                w *= trapezoid_weight(ix[1], coarse.n_cells, coarse.h());
            }
            s += w * dv * dv;
        }
        acc += wt * s;
    }
    Ok(acc.sqrt())
}

/// Run the whole study: per-eps pipeline, rate fits, floor guard, reports.
pub fn run_study(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let solver = cfg.solver.make()?;
    let mut eps_sorted = cfg.study.epsilons.clone();
    eps_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut rows: Vec<EpsRow> = Vec::new();
    let mut failures: Vec<FailureNote> = Vec::new();
    for &eps in &eps_sorted {
        let run = EpsRun {
            cfg,
            eps,
            fine: fine_grid_for(cfg, eps),
            solver: solver.as_ref(),
        };
        match run.execute() {
            Ok(row) => rows.push(row),
            Err(e) => {
                let stage = match &e {
                    Error::Stage { stage, .. } => stage.to_string(),
                    _ => "unknown".to_string(),
                };
                failures.push(FailureNote {
                    eps,
                    stage,
                    message: e.to_string(),
                });
            }
        }
    }

    // floor guard at the largest eps
    let floor_report = if cfg.study.floor_guard && !rows.is_empty() {
        let eps_max = rows[0].eps;
        let floor = floor_guard(cfg, eps_max, solver.as_ref())
            .map_err(|e| e.in_stage("floor-guard", eps_max))?;
        let smallest = rows
            .iter()
            .map(|r| r.err_l2l2)
            .fold(f64::INFINITY, f64::min);
        Some(FloorGuardReport {
            eps: eps_max,
            floor,
            smallest_error: smallest,
            passed: floor <= 0.1 * smallest,
        })
    } else {
        None
    };
    let slopes_aborted = match &floor_report {
        Some(f) if !f.passed => Some(format!(
            "discretization floor {:.3e} exceeds 10% of the smallest error {:.3e}",
            f.floor, f.smallest_error
        )),
        _ => None,
    };

    let (fit_u_l2l2, fit_u_l2lp0, fit_w_l2h1, fit_layer) = if slopes_aborted.is_none() {
        let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
        let e2: Vec<f64> = rows.iter().map(|r| r.err_l2l2).collect();
        let fit_u = fit_rate(&eps, &e2).ok();
        let lp0: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.err_l2lp0.map(|v| (r.eps, v)))
            .collect();
        let fit_p0 = if lp0.len() >= 3 {
            fit_rate(
                &lp0.iter().map(|p| p.0).collect::<Vec<_>>(),
                &lp0.iter().map(|p| p.1).collect::<Vec<_>>(),
            )
            .ok()
        } else {
            None
        };
        let wr: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.w_l2h1.map(|v| (r.eps, v)))
            .collect();
        let fit_w = if wr.len() >= 3 {
            fit_rate(
                &wr.iter().map(|p| p.0).collect::<Vec<_>>(),
                &wr.iter().map(|p| p.1).collect::<Vec<_>>(),
            )
            .ok()
        } else {
            None
        };
        let lay: Vec<f64> = rows.iter().map(|r| r.layer_norm).collect();
        let fit_l = fit_rate(&eps, &lay).ok();
        (fit_u, fit_p0, fit_w, fit_l)
    } else {
        (None, None, None, None)
    };

    let monotone = rows.windows(2).all(|w| w[1].err_l2l2 <= w[0].err_l2l2);

    Ok(ConvergenceReport {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        dimension: cfg.dimension,
        rows,
        failures,
        fit_u_l2l2,
        fit_u_l2lp0,
        fit_w_l2h1,
        fit_layer,
        monotone_l2l2: monotone,
        floor_guard: floor_report,
        slopes_aborted,
        config: cfg.clone(),
    })
}

/// `||grad u||_{L^2(Omega x (0, delta^2))}` for a list of deltas, used by the
/// temporal boundary-layer scaling checks.
pub fn temporal_layer_norms(u: &crate::fields::MacroGridFn, deltas: &[f64]) -> Vec<f64> {
    let g = u.grid;
    let d = g.dim;
    let nsp = g.space_len();
    let mut grad: Vec<Vec<f64>> = (0..d).map(|_| vec![0.0; nsp]).collect();
    let mut acc = vec![0.0; deltas.len()];
    for it in 0..g.time_len() {
        let t = g.t_of(it);
        slice_gradient(&g, u.slice(it), &mut grad);
        let wt = trapezoid_weight(it, g.n_steps, g.dt());
        let mut s = 0.0;
        for sp in 0..nsp {
            let ix = g.space_coords(sp);
            let mut w = trapezoid_weight(ix[0], g.n_cells, g.h());
            if d == 2 {
                w *= trapezoid_weight(ix[1], g.n_cells, g.h());
            }
            let mut g2 = 0.0;
            for gax in grad.iter() {
                g2 += gax[sp] * gax[sp];
            }
            s += w * g2;
        }
        for (k, &delta) in deltas.iter().enumerate() {
            if t <= delta * delta {
                acc[k] += wt * s;
            }
        }
    }
    acc.iter().map(|a| a.sqrt()).collect()
}
