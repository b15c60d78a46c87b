use std::path::PathBuf;

use clap::{Parser, Subcommand};

use parahom::cell::{assemble_cell_system, energy_residual, solve_cell, CellProblem};
use parahom::effective::{
    adjoint_check, build_flux_correctors, build_flux_mismatch, effective_tensor,
    effective_tensor_at, flux_identity_residual, potential_constraint_residual,
};
use parahom::error::{Error, Result};
use parahom::fields::{sample_cell, MacroGrid, TorusGrid, TorusGridFn};
use parahom::linsolve::{make_solver, DenseLu, LinearSolver};
use parahom::smoothing::scaling::{find_case, scaling_cases, verify_scaling};
use parahom::solvers::{
    solve_dual, solve_fine, solve_homogenized, AnalyticField, CoefficientHandle, EffectiveTensorExt,
    ProblemData, TimeFactor,
};
use parahom::study::{run_study, StudyConfig};

#[derive(Parser)]
#[command(
    name = "parahom",
    about = "Parabolic homogenization toolkit: cell problems, effective coefficients, flux correctors, smoothing operators, corrected expansions, and convergence-rate studies",
    version
)]
struct Cli {
    /// study configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory for reports and dumps
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// dump solution fields alongside the diagnostics
    #[arg(long, global = true)]
    dump_fields: bool,
    /// seed for the randomized property checks
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one cell problem and print its diagnostics
    Cell {
        /// which problem: corrector | dual | flux
        #[arg(long, default_value = "corrector")]
        kind: String,
        /// corrector direction j (0-based)
        #[arg(long, default_value_t = 0)]
        direction: usize,
        /// macroscopic parameter point x (repeat for 2D)
        #[arg(long, num_args = 1.., default_values_t = [0.5])]
        x: Vec<f64>,
        /// macroscopic parameter time t
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        /// cross-check the solve against a dense factorization on a random
        /// elliptic coefficient sample (seeded)
        #[arg(long)]
        dense_check: bool,
    },
    /// Compute the effective tensor over the macroscopic sample grid (CSV)
    Effective {
        /// eps fixing the sample spacing (defaults to the first study eps)
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Build flux correctors at one macro point and print identity residuals
    Flux {
        #[arg(long, num_args = 1.., default_values_t = [0.5])]
        x: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
    /// Verify smoothing-operator scaling exponents against predictions
    SmoothCheck {
        /// registered case name, or "all"
        #[arg(long, default_value = "all")]
        case: String,
        /// eps values to fit over
        #[arg(long, num_args = 1..)]
        eps: Vec<f64>,
    },
    /// Run the full convergence study from the config
    Study,
    /// Manufactured-solution self-verification of the reference solvers
    Mms {
        /// grid refinement levels
        #[arg(long, num_args = 1.., default_values_t = [32, 64, 128])]
        levels: Vec<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<StudyConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs --config <file>".into()))?;
    StudyConfig::load(path)
}

fn dump_torus_csv(path: &std::path::Path, f: &TorusGridFn) -> Result<()> {
    let mut out = String::from("node,y0,y1,tau,value\n");
    for flat in 0..f.grid.len() {
        let (y, tau) = f.grid.node_pos(flat);
        out.push_str(&format!(
            "{flat},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            y[0], y[1], tau, f.values[flat]
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_cell(
    cli: &Cli,
    kind: &str,
    direction: usize,
    x: &[f64],
    t: f64,
    dense_check: bool,
) -> Result<()> {
    let cfg = load_config(cli)?;
    let torus = TorusGrid::new(cfg.dimension, cfg.torus.n_y, cfg.torus.n_tau);
    let solver = cfg.solver.make()?;
    let mut xp = [0.0; 2];
    for (k, v) in x.iter().take(2).enumerate() {
        xp[k] = *v;
    }
    let cell_a = sample_cell(&cfg.coefficient, xp, t, torus)?;
    let system = match kind {
        "corrector" => assemble_cell_system(
            torus,
            cfg.dimension,
            CellProblem::Corrector {
                cell_a: &cell_a,
                direction,
            },
        )?,
        "dual" => assemble_cell_system(
            torus,
            cfg.dimension,
            CellProblem::DualCorrector {
                cell_a: &cell_a,
                direction,
            },
        )?,
        "flux" => {
            // flux potential driven by the corrector mismatch row (direction j)
            let chi_sys = assemble_cell_system(
                torus,
                cfg.dimension,
                CellProblem::Corrector {
                    cell_a: &cell_a,
                    direction,
                },
            )?;
            let chi = solve_cell(&chi_sys, solver.as_ref(), cfg.solver.res_tol)?;
            let refs = [&chi.solution];
            let a_hat = effective_tensor_at(cfg.dimension, torus, &cell_a, &refs[..])?;
            let b = build_flux_mismatch(cfg.dimension, torus, &cell_a, &refs[..], &a_hat)?;
            assemble_cell_system(
                torus,
                cfg.dimension,
                CellProblem::FluxPotential {
                    rhs: &b.component(0, direction).values,
                },
            )?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown cell kind '{other}' (corrector | dual | flux)"
            )))
        }
    };
    let sol = solve_cell(&system, solver.as_ref(), cfg.solver.res_tol)?;
    println!("problem:      {}", sol.label);
    println!("unknowns:     {}", torus.len());
    println!("tau stencil:  {:?}", system.tau_stencil);
    println!("rhs mean:     {:.3e}", system.rhs_mean());
    println!("residual:     {:.3e}", sol.residual);
    println!("mean:         {:.3e}", sol.mean);
    println!("iterations:   {}", sol.iterations);
    println!("energy ident: {:.3e}", energy_residual(&system, &sol));

    if dense_check {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
        let small = TorusGrid::new(cfg.dimension, 4, 4);
        let rand_a: Vec<parahom::fields::Mat> = (0..small.len())
            .map(|_| {
                let d0 = rng.random_range(1.0..2.0);
                let d1 = rng.random_range(1.0..2.0);
                let off = rng.random_range(-0.3..0.3);
                [[d0, off], [off, d1]]
            })
            .collect();
        let sys = assemble_cell_system(
            small,
            cfg.dimension,
            CellProblem::Corrector {
                cell_a: &rand_a,
                direction: 0,
            },
        )?;
        let a = solve_cell(&sys, solver.as_ref(), cfg.solver.res_tol)?;
        let b = solve_cell(&sys, &DenseLu::default(), cfg.solver.res_tol)?;
        let worst = a
            .solution
            .values
            .iter()
            .zip(b.solution.values.iter())
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        println!("dense check:  max deviation {worst:.3e} (seed {})", cli.seed);
    }

    if cli.dump_fields {
        std::fs::create_dir_all(&cli.out)?;
        let path = cli.out.join("cell_solution.csv");
        dump_torus_csv(&path, &sol.solution)?;
        println!("dumped:       {}", path.display());
    }
    Ok(())
}

fn cmd_effective(cli: &Cli, eps: Option<f64>) -> Result<()> {
    let cfg = load_config(cli)?;
    let eps = eps.unwrap_or(cfg.study.epsilons[0]);
    let d = cfg.dimension;
    let torus = TorusGrid::new(d, cfg.torus.n_y, cfg.torus.n_tau);
    let s = cfg.study.sample_per_eps as f64;
    let s_cells = ((s / eps).round() as usize).max(1);
    let s_steps = if cfg.coefficient.is_time_independent() {
        0
    } else {
        ((s * cfg.problem.t_end / eps).round() as usize).max(1)
    };
    let sample = MacroGrid::new(d, s_cells, s_steps, cfg.problem.t_end);
    let solver = cfg.solver.make()?;
    let field = parahom::cell::solve_corrector_field(
        &cfg.coefficient,
        sample,
        torus,
        false,
        &cfg.solver.options(),
        solver.as_ref(),
    )?;
    let tensor = effective_tensor(&field, d)?;
    tensor.certify(cfg.coefficient.mu, 1e-8)?;

    std::fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("effective.csv");
    let mut out = String::from(if d == 2 {
        "x0,x1,t,A00,A01,A10,A11\n"
    } else {
        "x0,t,A00\n"
    });
    for mn in 0..sample.len() {
        let it = mn / sample.space_len();
        let sp = mn % sample.space_len();
        let x = sample.x_of(sample.space_coords(sp));
        let t = sample.t_of(it);
        let a = &tensor.per_node[mn];
        if d == 2 {
            out.push_str(&format!(
                "{:.8e},{:.8e},{:.8e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                x[0], x[1], t, a[0][0], a[0][1], a[1][0], a[1][1]
            ));
        } else {
            out.push_str(&format!("{:.8e},{:.8e},{:.12e}\n", x[0], t, a[0][0]));
        }
    }
    std::fs::write(&path, out)?;
    println!("effective tensor on {} nodes", sample.len());
    println!("min symmetric eigenvalue: {:.6e}", tensor.min_sym_eig);
    println!("written: {}", path.display());

    // adjoint identity report
    let dual = parahom::cell::solve_corrector_field(
        &cfg.coefficient,
        sample,
        torus,
        true,
        &cfg.solver.options(),
        solver.as_ref(),
    )?;
    let dev = adjoint_check(&field, &dual)?;
    println!("adjoint identity deviation: {dev:.3e}");
    Ok(())
}

fn cmd_flux(cli: &Cli, x: &[f64], t: f64) -> Result<()> {
    let cfg = load_config(cli)?;
    let d = cfg.dimension;
    let torus = TorusGrid::new(d, cfg.torus.n_y, cfg.torus.n_tau);
    let solver = cfg.solver.make()?;
    let mut xp = [0.0; 2];
    for (k, v) in x.iter().take(2).enumerate() {
        xp[k] = *v;
    }
    let cell_a = sample_cell(&cfg.coefficient, xp, t, torus)?;
    let mut chi = Vec::new();
    for j in 0..d {
        let sys = assemble_cell_system(
            torus,
            d,
            CellProblem::Corrector {
                cell_a: &cell_a,
                direction: j,
            },
        )?;
        chi.push(solve_cell(&sys, solver.as_ref(), cfg.solver.res_tol)?.solution);
    }
    let refs: Vec<&TorusGridFn> = chi.iter().collect();
    let a_hat = effective_tensor_at(d, torus, &cell_a, &refs)?;
    let b = build_flux_mismatch(d, torus, &cell_a, &refs, &a_hat)?;
    let fset = build_flux_correctors(&b, solver.as_ref(), cfg.solver.res_tol)?;
    let res = flux_identity_residual(&fset, &b)?;
    let constraint = potential_constraint_residual(&fset);

    println!("flux correctors at (x, t) = ({:?}, {t})", &xp[..d]);
    for i_bar in 0..=d {
        for j in 0..d {
            println!(
                "  divergence identity residual ({i_bar}, {j}): {:.6e}",
                res[i_bar * d + j]
            );
        }
    }
    for (j, c) in constraint.iter().enumerate() {
        println!("  potential constraint residual (j = {j}): {c:.6e}");
    }
    if cli.dump_fields {
        std::fs::create_dir_all(&cli.out)?;
        for k_bar in 0..=d {
            for i_bar in 0..=d {
                for j in 0..d {
                    let path = cli
                        .out
                        .join(format!("frakB_{k_bar}{i_bar}{j}.csv"));
                    dump_torus_csv(&path, fset.component(k_bar, i_bar, j))?;
                }
            }
        }
        println!("dumped frakB components to {}", cli.out.display());
    }
    Ok(())
}

fn cmd_smooth_check(case: &str, eps: &[f64]) -> Result<()> {
    let eps_list: Vec<f64> = if eps.is_empty() {
        vec![1.0 / 12.0, 1.0 / 16.0, 1.0 / 24.0, 1.0 / 32.0, 1.0 / 48.0]
    } else {
        eps.to_vec()
    };
    let cases = if case == "all" {
        scaling_cases()
    } else {
        vec![find_case(case)?]
    };
    println!("{:<14} {:>10} {:>10} {:>8}  description", "case", "fitted", "predicted", "r^2");
    for c in cases {
        let report = verify_scaling(c.as_ref(), &eps_list)?;
        println!(
            "{:<14} {:>10.4} {:>10.4} {:>8.5}  {}",
            report.name,
            report.fit.slope,
            report.predicted,
            report.fit.r_squared,
            report.description
        );
    }
    Ok(())
}

fn cmd_study(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let report = run_study(&cfg)?;
    let (csv, json) = report.write(&cli.out)?;
    for row in &report.rows {
        println!(
            "eps {:>9.6}: err_L2L2 {:.6e}  w_L2H1 {}  layer {:.6e}  [{:.1} s]",
            row.eps,
            row.err_l2l2,
            row.w_l2h1
                .map(|v| format!("{v:.6e}"))
                .unwrap_or_else(|| "-".into()),
            row.layer_norm,
            row.wall_seconds
        );
    }
    for f in &report.failures {
        println!("eps {:>9.6}: FAILED in stage {} ({})", f.eps, f.stage, f.message);
    }
    if let Some(fit) = &report.fit_u_l2l2 {
        println!(
            "slope ||u_eps - u_0||_L2L2: {:.4} (R^2 = {:.5}, {} pts)",
            fit.slope, fit.r_squared, fit.points
        );
    }
    if let Some(fit) = &report.fit_u_l2lp0 {
        println!(
            "slope ||u_eps - u_0||_L2Lp0: {:.4} (R^2 = {:.5}, {} pts)",
            fit.slope, fit.r_squared, fit.points
        );
    }
    if let Some(fit) = &report.fit_w_l2h1 {
        println!(
            "slope ||w||_L2H1: {:.4} (R^2 = {:.5}, {} pts)",
            fit.slope, fit.r_squared, fit.points
        );
    }
    if let Some(note) = &report.slopes_aborted {
        println!("slope fitting aborted: {note}");
    }
    if let Some(fg) = &report.floor_guard {
        println!(
            "floor guard at eps = {}: floor {:.3e} vs smallest error {:.3e} -> {}",
            fg.eps,
            fg.floor,
            fg.smallest_error,
            if fg.passed { "pass" } else { "FAIL" }
        );
    }
    println!("csv:  {}", csv.display());
    println!("json: {}", json.display());
    Ok(())
}

fn cmd_mms(levels: &[usize]) -> Result<()> {
    use std::f64::consts::PI;
    let solver: Box<dyn LinearSolver> =
        make_solver("auto", &parahom::linsolve::SolverOptions::default())?;
    let spec = parahom::fields::CoefficientSpec::identity(1);
    let tensor = parahom::effective::EffectiveTensor::constant(1, [[1.0, 0.0], [0.0, 1.0]]);
    let data = ProblemData {
        source: AnalyticField::sin_pi(
            1,
            PI * PI - 1.0,
            TimeFactor {
                exp_rate: -1.0,
                ..Default::default()
            },
        ),
        initial: AnalyticField::sin_pi(1, 1.0, TimeFactor::default()),
        t_end: 1.0,
    };
    let dual_src = AnalyticField::sin_pi(
        1,
        1.0,
        TimeFactor {
            poly: vec![1.0 + PI * PI, -PI * PI],
            ..Default::default()
        },
    );
    let exact = |x: f64, t: f64| (PI * x).sin() * (-t).exp();
    let exact_dual = |x: f64, t: f64| (PI * x).sin() * (1.0 - t);

    println!("{:>6} {:>12} {:>12} {:>12}", "N", "fine", "homogenized", "dual");
    let mut prev: Option<(f64, f64, f64)> = None;
    for &n in levels {
        let grid = MacroGrid::new(1, n, n, 1.0);
        let err = |sol: &parahom::solvers::DiscreteSolution, f: &dyn Fn(f64, f64) -> f64| {
            let mut acc = 0.0f64;
            for it in 0..grid.time_len() {
                for sp in 0..grid.space_len() {
                    let x = grid.x_of(grid.space_coords(sp))[0];
                    let e = sol.field.values[it * grid.space_len() + sp] - f(x, grid.t_of(it));
                    acc += e * e;
                }
            }
            (acc / grid.len() as f64).sqrt()
        };
        let fine = solve_fine(&spec, 0.25, &data, &grid, solver.as_ref())?;
        let homog = solve_homogenized(&tensor, &data, &grid, solver.as_ref())?;
        let dual = solve_dual(
            CoefficientHandle::Effective(&tensor),
            &dual_src,
            &grid,
            solver.as_ref(),
        )?;
        let e = (err(&fine, &exact), err(&homog, &exact), err(&dual, &exact_dual));
        print!("{:>6} {:>12.4e} {:>12.4e} {:>12.4e}", n, e.0, e.1, e.2);
        if let Some(p) = prev {
            print!(
                "   orders: {:.2} {:.2} {:.2}",
                (p.0 / e.0).log2(),
                (p.1 / e.1).log2(),
                (p.2 / e.2).log2()
            );
        }
        println!();
        prev = Some(e);
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .ok();
    }
    let result = match &cli.command {
        Command::Cell {
            kind,
            direction,
            x,
            t,
            dense_check,
        } => cmd_cell(&cli, kind, *direction, x, *t, *dense_check),
        Command::Effective { eps } => cmd_effective(&cli, *eps),
        Command::Flux { x, t } => cmd_flux(&cli, x, *t),
        Command::SmoothCheck { case, eps } => cmd_smooth_check(case, eps),
        Command::Study => cmd_study(&cli),
        Command::Mms { levels } => cmd_mms(levels),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
