use super::*;
use crate::fields::{CoeffFactor, CoeffTerm, TrigKind, TWO_PI};
use crate::linsolve::{make_solver, DenseLu, SolverOptions};
use crate::testutil::simpson;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn auto_solver() -> Box<dyn LinearSolver> {
    make_solver("auto", &SolverOptions::default()).unwrap()
}

fn sin_y_spec(base: f64, mu: f64) -> CoefficientSpec {
    CoefficientSpec::scalar(
        base,
        mu,
        vec![CoeffTerm {
            row: 0,
            col: 0,
            amplitude: 1.0,
            factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0)],
        }],
    )
}

fn constant_cell(torus: TorusGrid, value: f64) -> Vec<Mat> {
    vec![[[value, 0.0], [0.0, value]]; torus.len()]
}

#[test]
fn constant_coefficient_has_zero_rhs_and_zero_corrector() {
    let torus = TorusGrid::new(1, 16, 5);
    let cell_a = constant_cell(torus, 3.0);
    let system = assemble_cell_system(
        torus,
        1,
        CellProblem::Corrector {
            cell_a: &cell_a,
            direction: 0,
        },
    )
    .unwrap();
    assert!(system.rhs.iter().all(|v| v.abs() < 1e-14));
    let sol = solve_cell(&system, auto_solver().as_ref(), 1e-10).unwrap();
    assert!(sol.solution.values.iter().all(|v| v.abs() < 1e-12));
    assert!(sol.mean.abs() <= MEAN_TOL);
}

#[test]
fn rhs_mean_vanishes_by_telescoping() {
    let spec = sin_y_spec(2.0, 0.25);
    let torus = TorusGrid::new(1, 64, 4);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let system = assemble_cell_system(
        torus,
        1,
        CellProblem::Corrector {
            cell_a: &cell_a,
            direction: 0,
        },
    )
    .unwrap();
    assert!(system.rhs_mean().abs() < 1e-15);
}

#[test]
fn one_d_harmonic_mean_oracle() {
    // a(y) = 2 + sin(2 pi y): the corrector satisfies d_y chi = ahat/a - 1
    // with ahat = 1 / int_0^1 dy / a(y) = sqrt(3). The quadrature oracle is
    // independent Simpson integration.
    let inv_mean = simpson(|y| 1.0 / (2.0 + (TWO_PI * y).sin()), 0.0, 1.0, 1 << 14);
    let a_hat_oracle = 1.0 / inv_mean;
    assert!((a_hat_oracle - 3.0f64.sqrt()).abs() < 1e-12);

    let spec = sin_y_spec(2.0, 0.25);
    let torus = TorusGrid::new(1, 256, 8);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let system = assemble_cell_system(
        torus,
        1,
        CellProblem::Corrector {
            cell_a: &cell_a,
            direction: 0,
        },
    )
    .unwrap();
    let sol = solve_cell(&system, auto_solver().as_ref(), 1e-10).unwrap();
    assert!(sol.residual < 1e-10);
    assert!(sol.mean.abs() <= MEAN_TOL);

    let dchi = sol.solution.d_y(0);
    let mut worst = 0.0f64;
    for flat in 0..torus.len() {
        let (y, _) = torus.node_pos(flat);
        let a = 2.0 + (TWO_PI * y[0]).sin();
        let exact = a_hat_oracle / a - 1.0;
        worst = worst.max((dchi.values[flat] - exact).abs() / exact.abs().max(1.0));
    }
    assert!(worst <= 1e-3, "relative d_y chi error {worst}");
}

#[test]
fn purely_time_dependent_coefficient_gives_zero_corrector() {
    // a(tau) = 2 + cos(2 pi tau): the RHS -L(P_j) = -d_y a(tau) vanishes identically.
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
    let torus = TorusGrid::new(1, 32, 8);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let system = assemble_cell_system(
        torus,
        1,
        CellProblem::Corrector {
            cell_a: &cell_a,
            direction: 0,
        },
    )
    .unwrap();
    assert!(system.rhs.iter().all(|v| v.abs() < 1e-14));
    let sol = solve_cell(&system, auto_solver().as_ref(), 1e-10).unwrap();
    assert!(sol.solution.values.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn row_sums_annihilate_constants() {
    let spec = sin_y_spec(2.0, 0.25);
    let torus = TorusGrid::new(1, 16, 7);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let system = assemble_cell_system(
        torus,
        1,
        CellProblem::Corrector {
            cell_a: &cell_a,
            direction: 0,
        },
    )
    .unwrap();
    let ones = vec![1.0; torus.len()];
    let mut out = vec![0.0; torus.len()];
    system.pure.matvec(&ones, &mut out);
    assert!(out.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn brute_force_dense_equivalence_small_torus() {
    // random elliptic cellA on grids with <= 256 unknowns: the production
    // solve (auto -> sparse direct) must match an independent dense
    // factorization to 1e-10 relative accuracy.
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for (n_y, n_tau, dim) in [(4usize, 4usize, 1usize), (16, 16, 1), (6, 7, 2)] {
        let torus = TorusGrid::new(dim, n_y, n_tau);
        assert!(torus.len() <= 256 + 4);
        let cell_a: Vec<Mat> = (0..torus.len())
            .map(|_| {
                let d0 = rng.random_range(1.0..2.0);
                let d1 = rng.random_range(1.0..2.0);
                let off = rng.random_range(-0.4..0.4);
                [[d0, off], [off, d1]]
            })
            .collect();
        let system = assemble_cell_system(
            torus,
            dim,
            CellProblem::Corrector {
                cell_a: &cell_a,
                direction: 0,
            },
        )
        .unwrap();
        let auto = solve_cell(&system, auto_solver().as_ref(), 1e-10).unwrap();
        let dense = solve_cell(&system, &DenseLu { max_unknowns: 4096 }, 1e-10).unwrap();
        let scale = dense.solution.l2().max(1e-30);
        let diff: f64 = auto
            .solution
            .values
            .iter()
            .zip(dense.solution.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / (torus.len() as f64).sqrt();
        assert!(
            diff / scale < 1e-10,
            "sparse vs dense mismatch {} on {n_y}x{n_tau} d={dim}",
            diff / scale
        );
    }
}

#[test]
fn bordered_and_pinned_routes_agree() {
    // two algebraic routes to the constrained solution: the Lagrange bordered
    // system through a dense factorization, and the gauged (pinned) system
    // through the production path, both followed by the mean projection
    let spec = sin_y_spec(2.0, 0.25);
    let torus = TorusGrid::new(1, 24, 7);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let system = assemble_cell_system(
        torus,
        1,
        CellProblem::Corrector {
            cell_a: &cell_a,
            direction: 0,
        },
    )
    .unwrap();
    let (bordered, rhs_b) = system.bordered();
    let dense = DenseLu { max_unknowns: 4096 };
    let (xb, _) = dense.solve(&bordered, &rhs_b, None).unwrap();
    let mut via_border = TorusGridFn {
        grid: torus,
        values: xb[..torus.len()].to_vec(),
    };
    via_border.project_zero_mean();

    let via_pin = solve_cell(&system, auto_solver().as_ref(), 1e-10).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in via_border.values.iter().zip(via_pin.solution.values.iter()) {
        worst = worst.max((a - b).abs());
    }
    assert!(worst < 1e-10, "border vs pin mismatch {worst}");
}

#[test]
fn flux_potential_requires_mean_zero_rhs() {
    let torus = TorusGrid::new(1, 16, 4);
    let bad = vec![1.0; torus.len()];
    let out = assemble_cell_system(torus, 1, CellProblem::FluxPotential { rhs: &bad });
    assert!(matches!(out, Err(Error::IncompatibleRhs { .. })));

    let good = TorusGridFn::from_fn(torus, |y, _| (TWO_PI * y[0]).sin());
    let system =
        assemble_cell_system(torus, 1, CellProblem::FluxPotential { rhs: &good.values }).unwrap();
    let sol = solve_cell(&system, auto_solver().as_ref(), 1e-10).unwrap();
    assert!(sol.residual < 1e-10);
}

#[test]
fn flux_potential_heat_oracle() {
    // d_tau f - f'' = sin(2 pi y) cos(2 pi tau) has the exact solution
    // f = Re[ e^{2 pi i tau} * sin(2 pi y) / (2 pi i + 4 pi^2) ]; verify the
    // discrete solve against it on an odd tau grid (centered stencil).
    let torus = TorusGrid::new(1, 64, 65);
    let rhs = TorusGridFn::from_fn(torus, |y, tau| (TWO_PI * y[0]).sin() * (TWO_PI * tau).cos());
    let system =
        assemble_cell_system(torus, 1, CellProblem::FluxPotential { rhs: &rhs.values }).unwrap();
    assert_eq!(system.tau_stencil, TauStencil::Centered);
    let sol = solve_cell(&system, auto_solver().as_ref(), 1e-10).unwrap();

    // f = A sin(2 pi y) cos(2 pi tau) + B sin(2 pi y) sin(2 pi tau) with
    // (B, A) solving [[4 pi^2, 2 pi], [-2 pi, 4 pi^2]] (A, B) = (1, 0)
    let k = TWO_PI;
    let lap = k * k;
    let det = lap * lap + k * k;
    let a_coef = lap / det;
    let b_coef = k / det;
    let mut worst = 0.0f64;
    for flat in 0..torus.len() {
        let (y, tau) = torus.node_pos(flat);
        let exact = (k * y[0]).sin() * (a_coef * (k * tau).cos() + b_coef * (k * tau).sin());
        worst = worst.max((sol.solution.values[flat] - exact).abs());
    }
    assert!(worst < 5e-3, "heat oracle error {worst}");
}

#[test]
fn energy_identity_on_centered_grids() {
    let spec = sin_y_spec(2.0, 0.25);
    let torus = TorusGrid::new(1, 32, 9);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let system = assemble_cell_system(
        torus,
        1,
        CellProblem::Corrector {
            cell_a: &cell_a,
            direction: 0,
        },
    )
    .unwrap();
    assert_eq!(system.tau_stencil, TauStencil::Centered);
    let sol = solve_cell(&system, auto_solver().as_ref(), 1e-10).unwrap();
    let res = energy_residual(&system, &sol);
    let scale: f64 = sol.solution.values.iter().map(|v| v * v).sum::<f64>() * 4.0;
    assert!(res <= 1e-10 * scale.max(1.0), "energy residual {res}");
}

#[test]
fn dual_equals_primal_of_reversed_adjoint() {
    // chi*(y, tau) of A equals, after the flip tau -> -tau, the corrector of
    // A^T(y, -tau). Both paths go through the same assembler, so this is a
    // grid-exact consistency check of the dual machinery.
    let spec = CoefficientSpec::scalar(
        2.0,
        0.2,
        vec![CoeffTerm {
            row: 0,
            col: 0,
            amplitude: 1.0,
            factors: vec![
                CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0),
                CoeffFactor::trig(1.0, 0.3, TrigKind::Cos, vec![], 0.0, vec![], 1),
            ],
        }],
    );
    let torus = TorusGrid::new(1, 24, 9);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let dual_system = assemble_cell_system(
        torus,
        1,
        CellProblem::DualCorrector {
            cell_a: &cell_a,
            direction: 0,
        },
    )
    .unwrap();
    let dual = solve_cell(&dual_system, auto_solver().as_ref(), 1e-10).unwrap();

    // reversed coefficient: A^T(y, -tau) sampled nodewise
    let reversed: Vec<Mat> = (0..torus.len())
        .map(|flat| {
            let (iy, it) = torus.coords(flat);
            let flipped = torus.idx(iy, (torus.n_tau - it) % torus.n_tau);
            let m = cell_a[flipped];
            [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
        })
        .collect();
    let primal_system = assemble_cell_system(
        torus,
        1,
        CellProblem::Corrector {
            cell_a: &reversed,
            direction: 0,
        },
    )
    .unwrap();
    let primal = solve_cell(&primal_system, auto_solver().as_ref(), 1e-10).unwrap();

    let mut worst = 0.0f64;
    for flat in 0..torus.len() {
        let (iy, it) = torus.coords(flat);
        let flipped = torus.idx(iy, (torus.n_tau - it) % torus.n_tau);
        worst = worst.max((dual.solution.values[flat] - primal.solution.values[flipped]).abs());
    }
    assert!(worst < 1e-9, "dual/primal flip mismatch {worst}");
}

#[test]
fn corrector_field_constant_spec_is_zero() {
    let spec = CoefficientSpec::identity(1);
    let mg = MacroGrid::new(1, 2, 2, 1.0);
    let torus = TorusGrid::new(1, 8, 3);
    let field = solve_corrector_field(
        &spec,
        mg,
        torus,
        false,
        &SolverOptions::default(),
        auto_solver().as_ref(),
    )
    .unwrap();
    assert!(field.chi[0].values.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn corrector_field_x_scaling_divides_out() {
    // a(x; y) = (1 + x)(2 + sin 2 pi y): the (1 + x) factor scales both sides
    // of the cell problem, so d_y chi is identical at all macro nodes.
    let spec = CoefficientSpec::scalar(
        0.0,
        0.15,
        vec![CoeffTerm {
            row: 0,
            col: 0,
            amplitude: 1.0,
            factors: vec![
                CoeffFactor::affine(1.0, vec![1.0], 0.0),
                CoeffFactor::trig(2.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0),
            ],
        }],
    );
    let mg = MacroGrid::new(1, 2, 1, 1.0); // 3 macro x nodes, 2 time levels
    let torus = TorusGrid::new(1, 64, 1);
    let field = solve_corrector_field(
        &spec,
        mg,
        torus,
        false,
        &SolverOptions::default(),
        auto_solver().as_ref(),
    )
    .unwrap();
    let reference = field.chi[0].cell_values(0).to_vec();
    for mn in 1..mg.len() {
        for (a, b) in field.chi[0].cell_values(mn).iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-9, "chi varies across macro nodes");
        }
    }
}

#[test]
fn dual_correctors_match_primal_for_symmetric_time_independent() {
    let spec = sin_y_spec(2.0, 0.25);
    let mg = MacroGrid::new(1, 1, 1, 1.0);
    let torus = TorusGrid::new(1, 48, 1);
    let opts = SolverOptions::default();
    let primal =
        solve_corrector_field(&spec, mg, torus, false, &opts, auto_solver().as_ref()).unwrap();
    let dual =
        solve_corrector_field(&spec, mg, torus, true, &opts, auto_solver().as_ref()).unwrap();
    for (a, b) in primal.chi[0].values.iter().zip(dual.chi[0].values.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
}
