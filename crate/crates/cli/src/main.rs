//! Command-line front end: configure a problem, run fits, solves and
//! studies, and emit machine-readable results.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde_json::json;

use config::{ConfigError, OrderSpec, RunConfig};
use delsarte::formal_powers::PhiPsiTable;
use delsarte::gencalc::{gamma2_gamma1, taylor_coefficients, TaylorKind};
use delsarte::kernel::{
    build_darboux_kernel, diagonal_diagnostics, fit_goursat_data, FitOptions,
    KernelApproximation,
};
use delsarte::oracle::KernelOracle;
use delsarte::potential::{build_particular_solution, ParticularSolution, Potential};
use delsarte::solver::{
    convergence_study, eval_c_s, find_eigenvalues, BoundaryCondition, SpectralProblem,
    SpectralSetup,
};
use delsarte::spps::spps_solve;
use delsarte::wave::{WaveBasis, WaveFamily};
use delsarte::Error;

#[derive(Parser)]
#[command(
    name = "delsarte",
    about = "Transmutation-kernel solver for 1-D Schrödinger/Sturm-Liouville problems",
    version
)]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,

    /// Output directory for result files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Run the invariant checks on the configured problem after the command.
    #[arg(long, global = true)]
    verify: bool,

    /// Override the grid node count.
    #[arg(long, global = true)]
    seed_grid: Option<usize>,

    /// Override the segment mode (half | full).
    #[arg(long, global = true)]
    mode: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the kernel and write coefficients plus diagnostics.
    Fit,
    /// Evaluate c_N and s_N for the configured omega list.
    Solve,
    /// Solve the configured spectral problem for eigenvalues.
    Eigs,
    /// Dump the approximate kernel on a lattice and compare to the oracle.
    Kernel,
    /// Compute Taylor-type expansion coefficients of the Goursat data.
    Taylor,
    /// Run the residual-decay study over a range of fit orders.
    Converge,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(RunError::Numerical(err)) => {
            eprintln!("numerical failure: {err}");
            ExitCode::from(2)
        }
        Err(RunError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(1)
        }
        Err(RunError::VerifyFailed(n)) => {
            eprintln!("verification failed ({n} checks)");
            ExitCode::from(2)
        }
    }
}

enum RunError {
    Config(String),
    Numerical(Error),
    Io(String),
    VerifyFailed(usize),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::InvalidInput(_) => RunError::Config(e.to_string()),
            other => RunError::Numerical(other),
        }
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(n) = cli.seed_grid {
        cfg.grid = Some(n);
    }
    if let Some(mode) = &cli.mode {
        cfg.mode = mode
            .parse()
            .map_err(|e: Error| RunError::Config(e.to_string()))?;
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| RunError::Io(format!("cannot create {}: {e}", cli.out.display())))?;
    let base_dir = cli
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let potential = cfg.build_potential(&base_dir)?;

    match cli.command {
        Command::Fit => cmd_fit(&cfg, &potential, &cli.out)?,
        Command::Solve => cmd_solve(&cfg, &potential, &cli.out)?,
        Command::Eigs => cmd_eigs(&cfg, &potential, &cli.out)?,
        Command::Kernel => cmd_kernel(&cfg, &potential, &cli.out)?,
        Command::Taylor => cmd_taylor(&cfg, &potential, &cli.out)?,
        Command::Converge => cmd_converge(&cfg, &potential, &cli.out)?,
    }
    if cli.verify {
        let failures = verify(&cfg, &potential)?;
        if failures > 0 {
            return Err(RunError::VerifyFailed(failures));
        }
    }
    Ok(())
}

struct Fitted {
    f: ParticularSolution,
    #[allow(dead_code)]
    basis: Arc<WaveBasis>,
    kernel: KernelApproximation,
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        reweight_rounds: if cfg.uniform_refit { 3 } else { 0 },
        ..FitOptions::default()
    }
}

/// Build tables and fit the kernel, growing the order when `N` is "auto".
fn fit_problem(cfg: &RunConfig, potential: &Potential) -> Result<Fitted, Error> {
    let f = build_particular_solution(potential, cfg.h)?;
    let opts = fit_options(cfg);
    let (order_cap, target) = match cfg.order {
        OrderSpec::Fixed(n) => (n, None),
        OrderSpec::Auto { target } => (24, Some(target)),
    };
    let table = PhiPsiTable::build(&f, 2 * order_cap + 1)?;
    let basis = Arc::new(WaveBasis::build(&table, order_cap, WaveFamily::Phi)?);
    let mut order = match cfg.order {
        OrderSpec::Fixed(n) => n,
        OrderSpec::Auto { .. } => 4,
    };
    loop {
        let kernel = fit_goursat_data(&basis, potential, f.h(), order, &opts)?;
        let done = match target {
            None => true,
            Some(t) => kernel.eps1().max(kernel.eps2()) < t || order >= order_cap,
        };
        if done {
            return Ok(Fitted { f, basis, kernel });
        }
        order = (order + 2).min(order_cap);
    }
}

fn meta(cfg: &RunConfig, kernel: Option<&KernelApproximation>) -> serde_json::Value {
    let mut m = json!({
        "config_hash": cfg.hash,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let Some(k) = kernel {
        m["eps1"] = json!(k.eps1());
        m["eps2"] = json!(k.eps2());
        m["error_bound"] = json!(k.error_bound());
        m["N"] = json!(k.order());
    }
    m
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| RunError::Io(format!("serialize: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| RunError::Io(format!("write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text)
        .map_err(|e| RunError::Io(format!("write {}: {e}", path.display())))
}

fn csv_header(cfg: &RunConfig, kernel: Option<&KernelApproximation>) -> String {
    let mut s = format!(
        "# config_hash={} version={}\n",
        cfg.hash,
        env!("CARGO_PKG_VERSION")
    );
    if let Some(k) = kernel {
        s.push_str(&format!(
            "# N={} eps1={:.6e} eps2={:.6e} error_bound={:.6e}\n",
            k.order(),
            k.eps1(),
            k.eps2(),
            k.error_bound()
        ));
    }
    s
}

fn cmd_fit(cfg: &RunConfig, potential: &Potential, out: &Path) -> Result<(), RunError> {
    let fitted = fit_problem(cfg, potential)?;
    let mut kernel_json = fitted.kernel.to_json();
    kernel_json["meta"] = meta(cfg, Some(&fitted.kernel));
    write_json(&out.join("kernel.json"), &kernel_json)?;

    let diag = diagonal_diagnostics(&fitted.kernel, potential, fitted.f.h())?;
    let mut diag_json = diag.to_json();
    diag_json["meta"] = meta(cfg, Some(&fitted.kernel));
    write_json(&out.join("diagnostics.json"), &diag_json)?;
    println!(
        "fit: N={} eps1={:.3e} eps2={:.3e} bound={:.3e}",
        fitted.kernel.order(),
        fitted.kernel.eps1(),
        fitted.kernel.eps2(),
        fitted.kernel.error_bound()
    );
    Ok(())
}

fn cmd_solve(cfg: &RunConfig, potential: &Potential, out: &Path) -> Result<(), RunError> {
    if cfg.omegas.is_empty() {
        return Err(RunError::Config(
            "'omegas' must be a non-empty list for the solve command".into(),
        ));
    }
    let fitted = fit_problem(cfg, potential)?;
    let grid = potential.grid();
    let mut text = csv_header(cfg, Some(&fitted.kernel));
    text.push_str("omega,x,re_c,im_c,re_s,im_s\n");
    for &omega in &cfg.omegas {
        let om = Complex64::new(omega, 0.0);
        for x in grid.nodes() {
            if x < 0.0 {
                continue;
            }
            let (c, s) = eval_c_s(&fitted.kernel, om, x)?;
            text.push_str(&format!(
                "{omega:.17e},{x:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                c.re, c.im, s.re, s.im
            ));
        }
    }
    write_text(&out.join("solutions.csv"), &text)?;
    println!("solve: wrote solutions.csv for {} omegas", cfg.omegas.len());
    Ok(())
}

fn cmd_eigs(cfg: &RunConfig, potential: &Potential, out: &Path) -> Result<(), RunError> {
    let bc_left = BoundaryCondition::new(cfg.bc_left.0, cfg.bc_left.1)?;
    let bc_right = BoundaryCondition::new(cfg.bc_right.0, cfg.bc_right.1)?;
    let order = match cfg.order {
        OrderSpec::Fixed(n) => n,
        OrderSpec::Auto { .. } => 12,
    };
    // h comes from the left boundary condition; Dirichlet-left problems use
    // the s-family with the non-vanishing fallback
    let setup =
        SpectralSetup::assemble(potential, bc_left.implied_h(), order, &fit_options(cfg))?;
    let problem = SpectralProblem {
        potential: potential.clone(),
        bc_left,
        bc_right,
        omega_range: cfg.omega_range,
        count: cfg.count,
        include_negative: cfg.include_negative,
    };
    let eigs = find_eigenvalues(&problem, &setup)?;

    let mut text = csv_header(cfg, Some(&setup.kernel));
    text.push_str("index,re_omega,im_omega,re_lambda,im_lambda,bc_residual\n");
    for e in &eigs {
        text.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.3e}\n",
            e.index, e.omega.re, e.omega.im, e.lambda.re, e.lambda.im, e.bc_residual
        ));
    }
    write_text(&out.join("eigs.csv"), &text)?;

    let eig_json = json!({
        "meta": meta(cfg, Some(&setup.kernel)),
        "eigenvalues": eigs.iter().map(|e| json!({
            "index": e.index,
            "omega": [e.omega.re, e.omega.im],
            "lambda": [e.lambda.re, e.lambda.im],
            "bc_residual": e.bc_residual,
        })).collect::<Vec<_>>(),
    });
    write_json(&out.join("eigs.json"), &eig_json)?;

    if cfg.dump_eigenfunctions {
        let grid = potential.grid();
        for e in &eigs {
            let mut text = csv_header(cfg, None);
            text.push_str("x,re_u,im_u\n");
            for (i, x) in grid.nodes().enumerate() {
                let v = e.eigenfunction.value(i);
                text.push_str(&format!("{x:.17e},{:.17e},{:.17e}\n", v.re, v.im));
            }
            write_text(
                &out.join(format!("eigenfunction_{:03}.csv", e.index)),
                &text,
            )?;
        }
    }
    println!("eigs: {} eigenvalues written", eigs.len());
    Ok(())
}

fn cmd_kernel(cfg: &RunConfig, potential: &Potential, out: &Path) -> Result<(), RunError> {
    let fitted = fit_problem(cfg, potential)?;
    let oracle = KernelOracle::build(potential, fitted.f.h(), cfg.oracle_lattice, 1e-13)?;

    let m = oracle.nodes_per_axis();
    let stride = ((m - 1) / cfg.kernel_lattice.max(2)).max(1);
    let mut sup = 0.0f64;
    let mut text = csv_header(cfg, Some(&fitted.kernel));
    text.push_str("x,t,re_kn,im_kn,re_oracle,im_oracle,abs_diff\n");
    for i in (0..m).step_by(stride) {
        for j in (0..m).step_by(stride) {
            if !oracle.in_exact_triangle(i, j) {
                continue;
            }
            let (x, t, kv) = oracle.k_at_indices(i, j);
            let kn = fitted.kernel.eval(x, t)?;
            let diff = (kn - kv).norm();
            sup = sup.max(diff);
            text.push_str(&format!(
                "{x:.12e},{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{diff:.6e}\n",
                kn.re, kn.im, kv.re, kv.im
            ));
        }
    }
    write_text(&out.join("kernel_lattice.csv"), &text)?;

    let mut kernel_json = fitted.kernel.to_json();
    kernel_json["meta"] = meta(cfg, Some(&fitted.kernel));
    write_json(&out.join("kernel.json"), &kernel_json)?;
    let summary = json!({
        "meta": meta(cfg, Some(&fitted.kernel)),
        "sup_error_vs_oracle": sup,
        "bound": fitted.kernel.error_bound(),
        "bound_satisfied": sup <= fitted.kernel.error_bound(),
        "oracle_iterations": oracle.iterations,
    });
    write_json(&out.join("diagnostics.json"), &summary)?;
    println!(
        "kernel: sup |K_N - oracle| = {sup:.3e}, bound {:.3e}",
        fitted.kernel.error_bound()
    );
    Ok(())
}

fn cmd_taylor(cfg: &RunConfig, potential: &Potential, out: &Path) -> Result<(), RunError> {
    let fitted = fit_problem(cfg, potential)?;
    let h = fitted.f.h();
    let big_q = potential.cumulative()?;
    let g1 = big_q.map(|v| 0.5 * h + 0.25 * v);
    let g2 = big_q.scale(Complex64::new(0.25, 0.0));
    let depth = cfg.taylor_depth;
    let alpha = taylor_coefficients(&g1, TaylorKind::C, depth, &fitted.f, potential.q())?;
    let beta = taylor_coefficients(&g2, TaylorKind::S, depth, &fitted.f, potential.q())?;

    // alpha_n / n! sits next to the fitted a_n for comparison
    let mut fact = 1.0f64;
    let mut alpha_over: Vec<serde_json::Value> = Vec::new();
    for (n, v) in alpha.values.iter().enumerate() {
        if n > 0 {
            fact *= n as f64;
        }
        alpha_over.push(json!([v.re / fact, v.im / fact]));
    }
    let result = json!({
        "meta": meta(cfg, Some(&fitted.kernel)),
        "alpha": alpha.to_json(),
        "beta": beta.to_json(),
        "alpha_over_factorial": alpha_over,
        "kernel": fitted.kernel.to_json(),
    });
    write_json(&out.join("taylor.json"), &result)?;
    println!("taylor: wrote coefficients to depth {depth}");
    Ok(())
}

fn cmd_converge(cfg: &RunConfig, potential: &Potential, out: &Path) -> Result<(), RunError> {
    let (lo, hi) = cfg.n_range;
    if hi < lo {
        return Err(RunError::Config("'n_range' must be increasing".into()));
    }
    let orders: Vec<usize> = (lo..=hi).collect();
    let h = cfg.h.unwrap_or(Complex64::ZERO);
    let study = convergence_study(potential, h, &orders, Some(cfg.oracle_lattice))?;
    let mut text = csv_header(cfg, None);
    text.push_str(&format!("# loglog_slope={:.6}\n", study.slope));
    text.push_str("N,eps1,eps2,sup_error\n");
    for row in &study.rows {
        text.push_str(&format!(
            "{},{:.6e},{:.6e},{}\n",
            row.order,
            row.eps1,
            row.eps2,
            row.sup_error
                .map(|s| format!("{s:.6e}"))
                .unwrap_or_default()
        ));
    }
    write_text(&out.join("study.csv"), &text)?;
    println!(
        "converge: orders {lo}..{hi}, log-log slope {:.3}",
        study.slope
    );
    Ok(())
}

/// Invariant checks on the configured problem: particular solution, SPPS
/// Wronskian, trace ladder, kernel diagnostics, derivative Wronskian.
/// Returns the failure count.
fn verify(cfg: &RunConfig, potential: &Potential) -> Result<usize, RunError> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        if ok {
            println!("verify {name}: PASS ({detail})");
        } else {
            println!("verify {name}: FAIL ({detail})");
            failures += 1;
        }
    };

    let f = build_particular_solution(potential, cfg.h)?;
    let second = f.f().differentiate()?.differentiate()?;
    let qf = potential.q().mul(f.f())?;
    let resid = second.max_diff(&qf)?;
    check(
        "particular-solution",
        resid <= 1e-5 && f.min_abs() > 1e-12,
        format!("residual {resid:.2e}, min|f| {:.2e}", f.min_abs()),
    );

    let table = PhiPsiTable::build(&f, 21)?;
    let spps = spps_solve(&table, Complex64::ONE, 1e-12)?;
    let w = spps.y1.mul(&spps.dy2)?.sub(&spps.dy1.mul(&spps.y2)?)?;
    let wdev = w
        .values()
        .iter()
        .map(|v| (v - Complex64::ONE).norm())
        .fold(0.0, f64::max);
    check("spps-wronskian", wdev <= 1e-7, format!("deviation {wdev:.2e}"));

    let basis = Arc::new(WaveBasis::build(&table, 8, WaveFamily::Phi)?);
    let ladder = {
        let lhs = gamma2_gamma1(basis.c(2), potential.q())?;
        let rhs = basis.s(1).scale(Complex64::new(2.0, 0.0));
        lhs.max_diff(&rhs)?
    };
    check(
        "trace-ladder",
        ladder <= 1e-6,
        format!("deviation {ladder:.2e}"),
    );

    let kernel = fit_goursat_data(&basis, potential, f.h(), 8, &fit_options(cfg))?;
    let diag = diagonal_diagnostics(&kernel, potential, f.h())?;
    let eps = kernel.eps1() + kernel.eps2();
    check(
        "kernel-diagonal",
        diag.dev_diag_value <= 1.5 * eps + 1e-12,
        format!("dev {:.2e} vs eps {eps:.2e}", diag.dev_diag_value),
    );

    let psi_basis = Arc::new(WaveBasis::build(&table, 8, WaveFamily::Psi)?);
    let darboux = build_darboux_kernel(&kernel, &psi_basis, potential, &f)?;
    let b = potential.half_width();
    let mut worst_w = 0.0f64;
    for &frac in &[0.3, 0.65, 1.0] {
        let x = frac * b;
        let om = Complex64::new(5.0, 0.0);
        let (c, s) = eval_c_s(&kernel, om, x)?;
        let (dc, ds) = delsarte::solver::eval_derivatives(&kernel, &darboux, &f, om, x)?;
        worst_w = worst_w.max((c * ds - dc * s - Complex64::ONE).norm());
    }
    check(
        "solution-wronskian",
        worst_w <= 1e3 * (eps + darboux.error_bound()) + 1e-9,
        format!("deviation {worst_w:.2e}"),
    );

    Ok(failures)
}
