use crate::error::{Error, Result};
use crate::fields::grid::{MacroGrid, MacroGridFn};

/// Composite trapezoid weights along one axis with `n + 1` nodes and spacing `h`.
#[inline]
pub fn trapezoid_weight(i: usize, n: usize, h: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if i == 0 || i == n {
        0.5 * h
    } else {
        h
    }
}

fn check_exponent(e: f64) -> Result<()> {
    if e.is_nan() || e < 1.0 {
        return Err(Error::InvalidExponent { value: e });
    }
    Ok(())
}

/// Spatial L^p norm of one time slice by composite trapezoid quadrature
/// (grid-node max for p = inf).
pub fn space_lp(slice: &[f64], grid: &MacroGrid, p: f64) -> f64 {
    if p.is_infinite() {
        return slice.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    let n = grid.n_cells;
    let h = grid.h();
    let mut acc = 0.0;
    for (sp, &v) in slice.iter().enumerate() {
        let ix = grid.space_coords(sp);
        let mut w = trapezoid_weight(ix[0], n, h);
        if grid.dim == 2 {
            w *= trapezoid_weight(ix[1], n, h);
        }
        acc += w * v.abs().powf(p);
    }
    acc.powf(1.0 / p)
}

/// Mixed norm `|| ||u||_{L^p(Omega)} ||_{L^q(0, T)}`: inner spatial L^p per time
/// slice, outer temporal L^q, both by composite trapezoid; infinite exponents
/// are grid-node maxima.
pub fn mixed_norm(u: &MacroGridFn, q: f64, p: f64) -> Result<f64> {
    check_exponent(p)?;
    check_exponent(q)?;
    let g = &u.grid;
    let mut inner = Vec::with_capacity(g.time_len());
    for it in 0..g.time_len() {
        inner.push(space_lp(u.slice(it), g, p));
    }
    if q.is_infinite() {
        return Ok(inner.iter().fold(0.0f64, |m, v| m.max(*v)));
    }
    let dt = g.dt();
    let mut acc = 0.0;
    for (it, v) in inner.iter().enumerate() {
        acc += trapezoid_weight(it, g.n_steps, dt) * v.powf(q);
    }
    Ok(acc.powf(1.0 / q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::grid::MacroGrid;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_grid_1d(n: usize, steps: usize) -> MacroGrid {
        MacroGrid::new(1, n, steps, 1.0)
    }

    #[test]
    fn constant_field_has_unit_norm() {
        let g = unit_grid_1d(16, 16);
        let u = MacroGridFn::from_fn(g, |_, _| 1.0);
        for &(q, p) in &[(1.0, 1.0), (2.0, 2.0), (2.0, f64::INFINITY), (f64::INFINITY, 3.0)] {
            let n = mixed_norm(&u, q, p).unwrap();
            assert!((n - 1.0).abs() < 1e-12, "q={q} p={p}: {n}");
        }
    }

    #[test]
    fn time_linear_field_l2_linf() {
        // u(x, t) = t, q = 2, p = inf: (int_0^1 t^2 dt)^(1/2) = 1/sqrt(3).
        let g = unit_grid_1d(8, 256);
        let u = MacroGridFn::from_fn(g, |_, t| t);
        let n = mixed_norm(&u, 2.0, f64::INFINITY).unwrap();
        let oracle = independent_simpson(|t| t * t, 0.0, 1.0, 1 << 12).sqrt();
        assert!((oracle - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((n - oracle).abs() < 2e-5, "got {n}, oracle {oracle}");
    }

    #[test]
    fn sine_field_l2_l2() {
        // u(x, t) = sin(pi x): L^2 norm is sqrt(1/2).
        let g = unit_grid_1d(256, 4);
        let u = MacroGridFn::from_fn(g, |x, _| (std::f64::consts::PI * x[0]).sin());
        let n = mixed_norm(&u, 2.0, 2.0).unwrap();
        let oracle = independent_simpson(
            |x| (std::f64::consts::PI * x).sin().powi(2),
            0.0,
            1.0,
            1 << 12,
        )
        .sqrt();
        assert!((oracle - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((n - oracle).abs() < 1e-5, "got {n}, oracle {oracle}");
    }

    #[test]
    fn q_equals_p_is_plain_spacetime_norm() {
        let g = unit_grid_1d(12, 10);
        let u = MacroGridFn::from_fn(g, |x, t| (x[0] - 0.3) * (t + 0.2));
        let p = 3.0;
        let mixed = mixed_norm(&u, p, p).unwrap();
        // plain space-time trapezoid L^p
        let mut acc = 0.0;
        for it in 0..g.time_len() {
            let wt = trapezoid_weight(it, g.n_steps, g.dt());
            for (sp, &v) in u.slice(it).iter().enumerate() {
                let wx = trapezoid_weight(g.space_coords(sp)[0], g.n_cells, g.h());
                acc += wt * wx * v.abs().powf(p);
            }
        }
        assert!((mixed - acc.powf(1.0 / p)).abs() < 1e-13);
    }

    #[test]
    fn monotone_in_exponents_on_unit_cylinder() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = unit_grid_1d(20, 20);
        for _ in 0..10 {
            let a: f64 = rng.random_range(0.5..2.0);
            let b: f64 = rng.random_range(0.0..3.0);
            let u = MacroGridFn::from_fn(g, |x, t| {
                a * (std::f64::consts::PI * x[0] * b).sin() + (t - 0.4) * a
            });
            let exps = [1.0, 1.5, 2.0, 4.0, f64::INFINITY];
            for window in exps.windows(2) {
                let (lo, hi) = (window[0], window[1]);
                let n_lo_p = mixed_norm(&u, 2.0, lo).unwrap();
                let n_hi_p = mixed_norm(&u, 2.0, hi).unwrap();
                assert!(n_lo_p <= n_hi_p + 1e-10, "p: {lo} vs {hi}");
                let n_lo_q = mixed_norm(&u, lo, 2.0).unwrap();
                let n_hi_q = mixed_norm(&u, hi, 2.0).unwrap();
                assert!(n_lo_q <= n_hi_q + 1e-10, "q: {lo} vs {hi}");
            }
        }
    }

    #[test]
    fn rejects_bad_exponents() {
        let g = unit_grid_1d(4, 4);
        let u = MacroGridFn::zeros(g);
        assert!(mixed_norm(&u, 0.5, 2.0).is_err());
        assert!(mixed_norm(&u, 2.0, 0.0).is_err());
    }

    /// Independent composite Simpson oracle used to freeze expected values.
    pub fn independent_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + k as f64 * h);
        }
        acc * h / 3.0
    }
}
