use parahom::cell::*;
use parahom::fields::*;
use parahom::linsolve::{make_solver, SolverOptions};
use std::time::Instant;

#[test]
#[ignore]
fn probe_cell_cost() {
    let spec = CoefficientSpec::scalar(
        2.0,
        0.25,
        vec![CoeffTerm {
            row: 0,
            col: 0,
            amplitude: 1.0,
            factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0)],
        }],
    );
    let torus = TorusGrid::new(1, 64, 33);
    let solver = make_solver("auto", &SolverOptions::default()).unwrap();

    let t0 = Instant::now();
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    eprintln!("sample: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let system = assemble_cell_system(torus, 1, CellProblem::Corrector { cell_a: &cell_a, direction: 0 }).unwrap();
    eprintln!("assemble: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let (bordered, _rhs) = system.bordered();
    eprintln!("border: {:?} (n = {}, nnz = {})", t0.elapsed(), bordered.n_rows, bordered.nnz());

    let t0 = Instant::now();
    let sol = solve_cell(&system, solver.as_ref(), 1e-10).unwrap();
    eprintln!("solve: {:?} (residual {:.2e})", t0.elapsed(), sol.residual);

    let t0 = Instant::now();
    for _ in 0..5 {
        let _ = solve_cell(&system, solver.as_ref(), 1e-10).unwrap();
    }
    eprintln!("5 more solves: {:?}", t0.elapsed());
}

#[test]
#[ignore]
fn probe_border_variants() {
    use parahom::linsolve::*;
    let spec = CoefficientSpec::scalar(
        2.0,
        0.25,
        vec![CoeffTerm {
            row: 0,
            col: 0,
            amplitude: 1.0,
            factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0)],
        }],
    );
    let torus = TorusGrid::new(1, 64, 33);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let system = assemble_cell_system(torus, 1, CellProblem::Corrector { cell_a: &cell_a, direction: 0 }).unwrap();
    let (bordered, rhs_b) = system.bordered();

    // BiCGStab on the bordered system
    let bi = BiCgStab { res_tol: 1e-12, max_iters: 4000 };
    let t0 = Instant::now();
    let out = bi.solve(&bordered, &rhs_b, None);
    match &out {
        Ok((_, stats)) => eprintln!("bicgstab bordered: {:?}, iters {}, res {:.2e}", t0.elapsed(), stats.iterations, stats.residual),
        Err(e) => eprintln!("bicgstab bordered FAILED after {:?}: {e}", t0.elapsed()),
    }

    // pinned variant: replace row 0 of the pure system with identity
    let n = system.pure.n_rows;
    let mut trip = Vec::new();
    for r in 0..n {
        let (cols, vals) = system.pure.row(r);
        if r == 0 {
            trip.push((0, 0, 1.0));
        } else {
            for (c, v) in cols.iter().zip(vals.iter()) {
                trip.push((r, *c, *v));
            }
        }
    }
    let pinned = CsrMatrix::from_triplets(n, n, &trip);
    let mut rhs_p = system.rhs.clone();
    rhs_p[0] = 0.0;
    let lu = SparseLu;
    let t0 = Instant::now();
    let (x, stats) = lu.solve(&pinned, &rhs_p, None).unwrap();
    eprintln!("sparse-lu pinned: {:?}, res {:.2e}", t0.elapsed(), stats.residual);
    let _ = x;

    // how long does faer spend on symbolic vs numeric? repeat prepare
    let t0 = Instant::now();
    let prep = lu.prepare(&pinned).unwrap();
    eprintln!("pinned prepare: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let _ = prep.solve(&rhs_p, None).unwrap();
    eprintln!("pinned back-solve: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let prep_b = lu.prepare(&bordered).unwrap();
    eprintln!("bordered prepare: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let _ = prep_b.solve(&rhs_b, None).unwrap();
    eprintln!("bordered back-solve: {:?}", t0.elapsed());
}

#[test]
#[ignore]
fn probe_iterations() {
    use parahom::linsolve::*;
    let spec = CoefficientSpec::scalar(
        2.0,
        0.25,
        vec![CoeffTerm {
            row: 0,
            col: 0,
            amplitude: 1.0,
            factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0)],
        }],
    );
    let torus = TorusGrid::new(1, 64, 33);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    let system = assemble_cell_system(torus, 1, CellProblem::Corrector { cell_a: &cell_a, direction: 0 }).unwrap();
    let (bordered, rhs_b) = system.bordered();
    let bi = BiCgStab { res_tol: 1e-10, max_iters: 4000 };
    let t0 = Instant::now();
    let prep = bi.prepare(&bordered).unwrap();
    eprintln!("ilu0 build: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let (_, stats) = prep.solve(&rhs_b, None).unwrap();
    eprintln!("solve: {:?}, iters {}, res {:.2e}", t0.elapsed(), stats.iterations, stats.residual);

    // heat-operator flux potential with tau-dependent rhs
    let rhs = TorusGridFn::from_fn(torus, |y, tau| (TWO_PI * y[0]).sin() * (TWO_PI * tau).cos());
    let fsys = assemble_cell_system(torus, 1, CellProblem::FluxPotential { rhs: &rhs.values }).unwrap();
    let (fb, frhs) = fsys.bordered();
    let t0 = Instant::now();
    let prep = bi.prepare(&fb).unwrap();
    eprintln!("flux ilu0 build: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let (_, stats) = prep.solve(&frhs, None).unwrap();
    eprintln!("flux solve: {:?}, iters {}, res {:.2e}", t0.elapsed(), stats.iterations, stats.residual);
}

#[test]
#[ignore]
fn probe_scaled_border() {
    use parahom::linsolve::*;
    let spec = CoefficientSpec::scalar(
        2.0, 0.25,
        vec![CoeffTerm { row: 0, col: 0, amplitude: 1.0,
            factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0)] }],
    );
    let torus = TorusGrid::new(1, 64, 33);
    let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
    for (name, make_rhs) in [("corrector", true), ("flux", false)] {
        let (pure, rhs): (CsrMatrix, Vec<f64>) = if make_rhs {
            let sys = assemble_cell_system(torus, 1, CellProblem::Corrector { cell_a: &cell_a, direction: 0 }).unwrap();
            (sys.pure.clone(), sys.rhs.clone())
        } else {
            let r = TorusGridFn::from_fn(torus, |y, tau| (TWO_PI * y[0]).sin() * (TWO_PI * tau).cos());
            let sys = assemble_cell_system(torus, 1, CellProblem::FluxPotential { rhs: &r.values }).unwrap();
            (sys.pure.clone(), sys.rhs.clone())
        };
        let n = pure.n_rows;
        let mut diag_scale = 0.0;
        for r in 0..n {
            let (cols, vals) = pure.row(r);
            for (c, v) in cols.iter().zip(vals.iter()) { if *c == r { diag_scale += v.abs(); } }
        }
        let sigma = diag_scale / n as f64;
        for corner in [0.0, -1.0] {
            let mut trip = Vec::new();
            for r in 0..n {
                let (cols, vals) = pure.row(r);
                for (c, v) in cols.iter().zip(vals.iter()) { trip.push((r, *c, *v)); }
                trip.push((r, n, sigma));
                trip.push((n, r, sigma / n as f64));
            }
            if corner != 0.0 { trip.push((n, n, corner * sigma)); }
            let b = CsrMatrix::from_triplets(n + 1, n + 1, &trip);
            let mut rhs_b = rhs.clone();
            rhs_b.push(0.0);
            let bi = BiCgStab { res_tol: 1e-10, max_iters: 4000 };
            let t0 = Instant::now();
            let out = bi.solve(&b, &rhs_b, None);
            match out {
                Ok((_, st)) => eprintln!("{name} corner={corner}: {:?} iters {} res {:.2e}", t0.elapsed(), st.iterations, st.residual),
                Err(e) => eprintln!("{name} corner={corner}: FAILED {e}"),
            }
        }
    }
}

#[test]
#[ignore]
fn probe_pure_projected() {
    use parahom::linsolve::*;
    let spec = CoefficientSpec::scalar(
        2.0, 0.25,
        vec![CoeffTerm { row: 0, col: 0, amplitude: 1.0,
            factors: vec![CoeffFactor::trig(0.0, 1.0, TrigKind::Sin, vec![], 0.0, vec![1], 0)] }],
    );
    for (ny, ntau) in [(64usize, 33usize), (128, 127), (256, 8)] {
        let torus = TorusGrid::new(1, ny, ntau);
        let cell_a = sample_cell(&spec, [0.0; 2], 0.0, torus).unwrap();
        for name in ["corrector", "flux"] {
            let (pure, rhs): (CsrMatrix, Vec<f64>) = if name == "corrector" {
                let sys = assemble_cell_system(torus, 1, CellProblem::Corrector { cell_a: &cell_a, direction: 0 }).unwrap();
                (sys.pure.clone(), sys.rhs.clone())
            } else {
                let r = TorusGridFn::from_fn(torus, |y, tau| {
                    (TWO_PI * y[0]).sin() * (TWO_PI * tau).cos() + 0.3 * (2.0 * TWO_PI * y[0]).cos()
                });
                let mut vals = r.values.clone();
                let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
                for v in &mut vals { *v -= m; }
                let sys = assemble_cell_system(torus, 1, CellProblem::FluxPotential { rhs: &vals }).unwrap();
                (sys.pure.clone(), sys.rhs.clone())
            };
            // shifted copy for the preconditioner
            let n = pure.n_rows;
            let mut diag_scale = 0.0;
            for r in 0..n {
                let (cols, vals) = pure.row(r);
                for (c, v) in cols.iter().zip(vals.iter()) { if *c == r { diag_scale += v.abs(); } }
            }
            let shift = 1e-8 * diag_scale / n as f64;
            let mut trip = Vec::new();
            for r in 0..n {
                let (cols, vals) = pure.row(r);
                for (c, v) in cols.iter().zip(vals.iter()) {
                    trip.push((r, *c, if *c == r { v + shift } else { *v }));
                }
            }
            let _shifted = CsrMatrix::from_triplets(n, n, &trip);
            // solve the singular consistent system directly with bicgstab
            let bi = BiCgStab { res_tol: 1e-10, max_iters: 4000 };
            let t0 = Instant::now();
            let out = bi.solve(&pure, &rhs, None);
            match out {
                Ok((x, st)) => {
                    let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
                    eprintln!("{ny}x{ntau} {name} pure: {:?} iters {} res {:.2e} mean {:.1e}", t0.elapsed(), st.iterations, st.residual, mean)
                }
                Err(e) => eprintln!("{ny}x{ntau} {name} pure: FAILED {e}"),
            }
        }
    }
}
