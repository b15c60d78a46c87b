//! Scaling checks for the smoothing operators: each named case measures a
//! norm across an eps list and fits the log-log slope against the predicted
//! exponent. Cases are registered by name and selected from the CLI.

use crate::error::{Error, Result};
use crate::fields::{MacroGrid, MacroGridFn};
use crate::smoothing::{bump, SmoothAxes, Smoother};
use crate::study::rates::{fit_rate, RateFit};

pub struct ScalingReport {
    pub name: &'static str,
    pub description: String,
    pub predicted: f64,
    pub fit: RateFit,
    pub points: Vec<(f64, f64)>,
}

/// One registered analytic test family with a known norm scaling.
pub trait ScalingCase: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> String;
    fn predicted_exponent(&self) -> f64;
    /// Left-hand norm at one eps.
    fn measure(&self, eps: f64) -> Result<f64>;
    fn default_eps(&self) -> Vec<f64> {
        vec![1.0 / 12.0, 1.0 / 16.0, 1.0 / 24.0, 1.0 / 32.0, 1.0 / 48.0]
    }
}

/// Fit the measured norms against eps.
pub fn verify_scaling(case: &dyn ScalingCase, eps_list: &[f64]) -> Result<ScalingReport> {
    let mut points = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        points.push((eps, case.measure(eps)?));
    }
    let eps: Vec<f64> = points.iter().map(|p| p.0).collect();
    let norms: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = fit_rate(&eps, &norms)?;
    Ok(ScalingReport {
        name: case.name(),
        description: case.description(),
        predicted: case.predicted_exponent(),
        fit,
        points,
    })
}

pub fn scaling_cases() -> Vec<Box<dyn ScalingCase>> {
    vec![
        Box::new(SpikeSup::default()),
        Box::new(FixedSmooth::default()),
        Box::new(GradKink::default()),
    ]
}

pub fn find_case(name: &str) -> Result<Box<dyn ScalingCase>> {
    for c in scaling_cases() {
        if c.name() == name {
            return Ok(c);
        }
    }
    Err(Error::UnknownStrategy {
        name: name.to_string(),
        available: scaling_cases()
            .iter()
            .map(|c| c.name())
            .collect::<Vec<_>>()
            .join(", "),
    })
}

/// `f` a unit-mass spike of width delta much smaller than eps (1D):
/// `||S^x_eps f||_inf ~ eps^{-1} ||f||_1`, the (p, p1) = (1, inf) case of the
/// spatial smoothing estimate, exponent d/p1 - d/p = -1.
pub struct SpikeSup {
    pub n_cells: usize,
    pub delta: f64,
}

impl Default for SpikeSup {
    fn default() -> Self {
        SpikeSup {
            n_cells: 1 << 13,
            delta: 1.0 / 1024.0,
        }
    }
}

impl ScalingCase for SpikeSup {
    fn name(&self) -> &'static str {
        "spike-sup"
    }

    fn description(&self) -> String {
        format!(
            "sup norm of the mollified width-{} spike, (p, p1) = (1, inf)",
            self.delta
        )
    }

    fn predicted_exponent(&self) -> f64 {
        -1.0
    }

    fn measure(&self, eps: f64) -> Result<f64> {
        let grid = MacroGrid::new(1, self.n_cells, 1, 1.0);
        let h = grid.h();
        // unit-mass spike at the domain center (discrete mass normalized)
        let mut f = MacroGridFn::from_fn(grid, |x, _| bump((x[0] - 0.5) / self.delta));
        let nsp = grid.space_len();
        let mass: f64 = f.values[..nsp].iter().sum::<f64>() * h;
        for v in &mut f.values {
            *v /= mass;
        }
        let sm = Smoother::new(1);
        let out = sm.smooth(&f, eps, SmoothAxes::Space)?;
        Ok(out.values[..nsp].iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

/// Fixed smooth field with p1 = p: no eps gain, exponent 0.
#[derive(Default)]
pub struct FixedSmooth;

impl ScalingCase for FixedSmooth {
    fn name(&self) -> &'static str {
        "fixed-smooth"
    }

    fn description(&self) -> String {
        "L^2 norm of the smoothed fixed smooth field, p1 = p".into()
    }

    fn predicted_exponent(&self) -> f64 {
        0.0
    }

    fn measure(&self, eps: f64) -> Result<f64> {
        let grid = MacroGrid::new(1, 1 << 11, 1, 1.0);
        let f = MacroGridFn::from_fn(grid, |x, _| {
            (std::f64::consts::PI * x[0]).sin() * (1.0 + 0.3 * x[0])
        });
        let sm = Smoother::new(1);
        let out = sm.smooth(&f, eps, SmoothAxes::Space)?;
        // interior L^2, one-kernel-radius margin off the zero-extension collar
        Ok(interior_l2(&out, 0, eps))
    }
}

/// Manufactured `u = |x - 1/2|^{3/2}` (bounded Hessian in L^2, third
/// derivative not integrable): `||grad u - S_eps(grad u)||_{L^2}` scales like
/// eps^1, the q = p = 2 case with exponent 1 + d/p - d/q = 1.
pub struct GradKink {
    pub n_cells: usize,
    pub n_steps: usize,
}

impl Default for GradKink {
    fn default() -> Self {
        GradKink {
            n_cells: 1 << 13,
            n_steps: 64,
        }
    }
}

impl ScalingCase for GradKink {
    fn name(&self) -> &'static str {
        "grad-kink"
    }

    fn description(&self) -> String {
        "L^2 residual grad u - S_eps(grad u) for u = |x - 1/2|^{3/2}, q = p = 2".into()
    }

    fn predicted_exponent(&self) -> f64 {
        1.0
    }

    fn measure(&self, eps: f64) -> Result<f64> {
        let grid = MacroGrid::new(1, self.n_cells, self.n_steps, 1.0);
        // analytic gradient: 1.5 sign(x - 1/2) |x - 1/2|^{1/2}, constant in t
        let grad = MacroGridFn::from_fn(grid, |x, _| {
            let s = x[0] - 0.5;
            1.5 * s.signum() * s.abs().sqrt()
        });
        let sm = Smoother::new(1);
        let smoothed = sm.smooth(&grad, eps, SmoothAxes::Both)?;
        let mut diff = smoothed;
        for (d, g) in diff.values.iter_mut().zip(grad.values.iter()) {
            *d -= g;
        }
        Ok(interior_l2(&diff, 1, eps))
    }
}

/// Discrete L^2 over the cylinder deflated by one kernel radius in space and
/// `margin_t` kernel radii in time, keeping the zero-extension collar out of
/// the measured norm, as the interior estimates require.
fn interior_l2(f: &MacroGridFn, margin_t: usize, eps: f64) -> f64 {
    let g = f.grid;
    let h = g.h();
    let dt = g.dt();
    let x_lo = eps;
    let x_hi = 1.0 - eps;
    let t_lo = margin_t as f64 * eps * eps;
    let t_hi = g.t_end - t_lo;
    let mut acc = 0.0;
    let mut measure = 0.0;
    for it in 0..g.time_len() {
        let t = g.t_of(it);
        if t < t_lo || t > t_hi {
            continue;
        }
        for (sp, v) in f.slice(it).iter().enumerate() {
            let x = g.x_of(g.space_coords(sp));
            if x[0] < x_lo || x[0] > x_hi {
                continue;
            }
            acc += v * v * h * dt;
            measure += h * dt;
        }
    }
    debug_assert!(measure > 0.0);
    acc.sqrt()
}
