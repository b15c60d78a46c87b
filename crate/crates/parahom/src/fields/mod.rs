//! Four-variable coefficient fields, grid functions on the torus and on the
//! macroscopic cylinder, compositions `phi(x, t; x/eps, t/eps^2)`, and mixed
//! space-time norms.

pub mod grid;
pub mod norms;
pub mod spec;

pub use grid::{
    composition_eval, FourVarGridFn, MacroGrid, MacroGridFn, MacroLinear, TorusGrid, TorusGridFn,
    TorusLinear,
};
pub use norms::{mixed_norm, space_lp, trapezoid_weight};
pub use spec::{symmetric_min_eig, CoeffFactor, CoeffTerm, CoefficientSpec, Mat, TrigKind, TWO_PI};

use crate::error::Result;

/// Sample `A(x, t; ., .)` at every torus node; `(x, t)` act as parameters.
/// Fails with `EllipticityViolation` if any sampled symmetric part dips below mu.
pub fn sample_cell(
    spec: &CoefficientSpec,
    x: [f64; 2],
    t: f64,
    grid: TorusGrid,
) -> Result<Vec<Mat>> {
    let mut out = Vec::with_capacity(grid.len());
    for flat in 0..grid.len() {
        let (y, tau) = grid.node_pos(flat);
        let a = spec.eval(&x[..spec.dim], t, &y[..spec.dim], tau);
        spec.check_pointwise(&a, || {
            format!("(x, t; y, tau) = ({:?}, {}; {:?}, {})", &x[..spec.dim], t, &y[..spec.dim], tau)
        })?;
        out.push(a);
    }
    Ok(out)
}
