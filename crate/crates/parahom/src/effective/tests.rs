use super::*;
use crate::cell::solve_corrector_field;
use crate::fields::{
    sample_cell, CoeffFactor, CoeffTerm, CoefficientSpec, MacroGrid, TrigKind, TWO_PI,
};
use crate::linsolve::{make_solver, SolverOptions};
use crate::testutil::simpson;

fn auto_solver() -> Box<dyn LinearSolver> {
    make_solver("auto", &SolverOptions::default()).unwrap()
}

fn sin_y_spec() -> CoefficientSpec {
    CoefficientSpec::scalar(
        2.0,
        0.25,
        vec![CoeffTerm {
            row: 0,
            col: 0,
            amplitude: 1.0,
            factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0)],
        }],
    )
}

fn tau_dependent_spec() -> CoefficientSpec {
    // a(y, tau) = 2 + sin 2 pi y + 0.5 cos 2 pi tau
    CoefficientSpec::scalar(
        2.0,
        0.25,
        vec![
            CoeffTerm {
                row: 0,
                col: 0,
                amplitude: 1.0,
                factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0)],
            },
            CoeffTerm {
                row: 0,
                col: 0,
                amplitude: 0.5,
                factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Cos, vec![], 0.0, vec![], 1)],
            },
        ],
    )
}

/// Single-node pipeline: sample, solve correctors, effective matrix, flux
/// mismatch, flux correctors.
pub fn node_pipeline(
    spec: &CoefficientSpec,
    torus: TorusGrid,
) -> (Vec<Mat>, Vec<TorusGridFn>, Mat, FluxMismatch, FluxCorrectorSet) {
    let solver = auto_solver();
    let d = spec.dim;
    let cell_a = sample_cell(spec, [0.0; 2], 0.0, torus).unwrap();
    let mut chi = Vec::new();
    for j in 0..d {
        let system = assemble_cell_system(
            torus,
            d,
            CellProblem::Corrector {
                cell_a: &cell_a,
                direction: j,
            },
        )
        .unwrap();
        chi.push(solve_cell(&system, solver.as_ref(), 1e-10).unwrap().solution);
    }
    let refs: Vec<&TorusGridFn> = chi.iter().collect();
    let a_hat = effective_tensor_at(d, torus, &cell_a, &refs).unwrap();
    let b = build_flux_mismatch(d, torus, &cell_a, &refs, &a_hat).unwrap();
    let fset = build_flux_correctors(&b, solver.as_ref(), 1e-10).unwrap();
    (cell_a, chi, a_hat, b, fset)
}

#[test]
fn constant_coefficient_effective_is_itself() {
    let spec = CoefficientSpec::identity(2);
    let torus = TorusGrid::new(2, 8, 3);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let z0 = TorusGridFn::zeros(torus);
    let z1 = TorusGridFn::zeros(torus);
    let a_hat = effective_tensor_at(2, torus, &cell_a, &[&z0, &z1]).unwrap();
    assert_eq!(a_hat[0][0], 1.0);
    assert_eq!(a_hat[1][1], 1.0);
    assert_eq!(a_hat[0][1], 0.0);
}

#[test]
fn harmonic_mean_effective_value() {
    // independent quadrature oracle for ahat = 1 / int 1/a = sqrt(3)
    let oracle = 1.0 / simpson(|y| 1.0 / (2.0 + (TWO_PI * y).sin()), 0.0, 1.0, 1 << 14);
    let (_, _, a_hat, _, _) = node_pipeline(&sin_y_spec(), TorusGrid::new(1, 256, 8));
    assert!(
        (a_hat[0][0] - oracle).abs() < 1e-4,
        "ahat = {}, oracle = {oracle}",
        a_hat[0][0]
    );
}

#[test]
fn effective_order_at_least_two_in_ny() {
    let oracle = 3.0f64.sqrt();
    let errs: Vec<f64> = [32usize, 64, 128]
        .iter()
        .map(|&n| {
            let (_, _, a_hat, _, _) = node_pipeline(&sin_y_spec(), TorusGrid::new(1, n, 1));
            (a_hat[0][0] - oracle).abs()
        })
        .collect();
    let slope = crate::testutil::loglog_slope(&[1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0], &errs);
    assert!(slope >= 2.0 - 0.2, "ahat convergence order {slope}, errors {errs:?}");
}

#[test]
fn micro_time_only_coefficient_averages_arithmetically() {
    // a(tau) = 2 + cos 2 pi tau: chi = 0, so Ahat is the plain average = 2.
    let spec = CoefficientSpec::scalar(
        2.0,
        0.25,
        vec![CoeffTerm {
            row: 0,
            col: 0,
            amplitude: 1.0,
            factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Cos, vec![], 0.0, vec![], 1)],
        }],
    );
    let (_, _, a_hat, _, _) = node_pipeline(&spec, TorusGrid::new(1, 16, 8));
    assert!((a_hat[0][0] - 2.0).abs() < 1e-8, "ahat = {}", a_hat[0][0]);
}

#[test]
fn adjoint_identity_symmetric_time_independent() {
    let spec = sin_y_spec();
    let mg = MacroGrid::new(1, 2, 1, 1.0);
    let torus = TorusGrid::new(1, 64, 1);
    let opts = SolverOptions::default();
    let solver = auto_solver();
    let primal = solve_corrector_field(&spec, mg, torus, false, &opts, solver.as_ref()).unwrap();
    let dual = solve_corrector_field(&spec, mg, torus, true, &opts, solver.as_ref()).unwrap();
    let dev = adjoint_check(&primal, &dual).unwrap();
    assert!(dev <= 1e-8, "adjoint deviation {dev}");
}

#[test]
fn adjoint_identity_nonsymmetric_constant_2d() {
    let mut spec = CoefficientSpec::identity(2);
    spec.base = vec![vec![2.0, 0.3], vec![-0.2, 2.0]];
    spec.mu = 0.25;
    let mg = MacroGrid::new(2, 1, 1, 1.0);
    let torus = TorusGrid::new(2, 8, 3);
    let opts = SolverOptions::default();
    let solver = auto_solver();
    let primal = solve_corrector_field(&spec, mg, torus, false, &opts, solver.as_ref()).unwrap();
    let dual = solve_corrector_field(&spec, mg, torus, true, &opts, solver.as_ref()).unwrap();
    // constant coefficient: chi = chi* = 0, so the deviation is exactly zero
    let dev = adjoint_check(&primal, &dual).unwrap();
    assert!(dev <= 1e-12, "adjoint deviation {dev}");
}

#[test]
fn flux_mismatch_constant_coefficient_is_zero() {
    let spec = CoefficientSpec::identity(1);
    let torus = TorusGrid::new(1, 16, 4);
    let (_, _, _, b, _) = {
        let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
        let z = TorusGridFn::zeros(torus);
        let a_hat = effective_tensor_at(1, torus, &cell_a, &[&z]).unwrap();
        let b = build_flux_mismatch(1, torus, &cell_a, &[&z], &a_hat).unwrap();
        (cell_a, (), a_hat, b, ())
    };
    for comp in &b.b {
        assert!(comp.values.iter().all(|v| v.abs() < 1e-14));
    }
}

#[test]
fn one_d_flux_is_pointwise_constant() {
    // B_11 = a (1 + d_y chi) - ahat vanishes pointwise up to discretization.
    let (_, _, _, b, _) = node_pipeline(&sin_y_spec(), TorusGrid::new(1, 256, 1));
    let b11 = b.component(0, 0);
    let worst = b11.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 2e-3, "1D flux deviates from constant by {worst}");
    assert!(b11.mean().abs() < 1e-12);
}

#[test]
fn flux_correctors_zero_mismatch() {
    let torus = TorusGrid::new(1, 16, 5);
    let b = FluxMismatch {
        dim: 1,
        torus,
        b: vec![TorusGridFn::zeros(torus), TorusGridFn::zeros(torus)],
    };
    let fset = build_flux_correctors(&b, auto_solver().as_ref(), 1e-10).unwrap();
    for f in &fset.f {
        assert!(f.values.iter().all(|v| v.abs() < 1e-12));
    }
    for g in &fset.frak_b {
        assert!(g.values.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn skew_symmetry_is_exact() {
    let (_, _, _, _, fset) = node_pipeline(&tau_dependent_spec(), TorusGrid::new(1, 32, 31));
    let d = fset.dim;
    for k_bar in 0..=d {
        for i_bar in 0..=d {
            for j in 0..d {
                let a = fset.component(k_bar, i_bar, j);
                let b = fset.component(i_bar, k_bar, j);
                for flat in 0..fset.torus.len() {
                    assert_eq!(a.values[flat], -b.values[flat], "skew symmetry broken");
                }
            }
        }
    }
    // (d+1, d+1) component vanishes identically
    for j in 0..d {
        assert!(fset
            .component(d, d, j)
            .values
            .iter()
            .all(|v| *v == 0.0));
    }
}

#[test]
fn divergence_identity_second_order() {
    let coarse_t = node_pipeline(&tau_dependent_spec(), TorusGrid::new(1, 32, 31));
    let fine_t = node_pipeline(&tau_dependent_spec(), TorusGrid::new(1, 64, 63));
    let r_coarse = flux_identity_residual(&coarse_t.4, &coarse_t.3).unwrap();
    let r_fine = flux_identity_residual(&fine_t.4, &fine_t.3).unwrap();
    for (rc, rf) in r_coarse.iter().zip(r_fine.iter()) {
        let ratio = rc / rf.max(1e-300);
        assert!(ratio >= 3.5, "identity residual ratio {ratio} (coarse {rc}, fine {rf})");
    }
}

#[test]
fn potential_constraint_second_order() {
    let coarse = node_pipeline(&tau_dependent_spec(), TorusGrid::new(1, 32, 31));
    let fine = node_pipeline(&tau_dependent_spec(), TorusGrid::new(1, 64, 63));
    let rc = potential_constraint_residual(&coarse.4);
    let rf = potential_constraint_residual(&fine.4);
    for (c, f) in rc.iter().zip(rf.iter()) {
        let ratio = c / f.max(1e-300);
        assert!(ratio >= 3.5, "constraint residual ratio {ratio} ({c} -> {f})");
    }
}

#[test]
fn corrupted_corrector_trips_the_checker() {
    let (_, _, _, b, mut fset) = node_pipeline(&tau_dependent_spec(), TorusGrid::new(1, 64, 31));
    let baseline = flux_identity_residual(&fset, &b).unwrap();
    let idx = fset.index(1, 0, 0);
    fset.frak_b[idx].values[10] += 1.0;
    let corrupted = flux_identity_residual(&fset, &b).unwrap();
    assert!(
        corrupted[0] > baseline[0].max(1e-2),
        "corruption not detected: {corrupted:?} vs {baseline:?}"
    );
}
