//! Spectral solver: closed-form trigonometric moments, evaluation of the
//! approximate solutions `c_N(ω, x)` and `s_N(ω, x)` with their derivatives,
//! eigenvalue search by characteristic-function root bracketing, and
//! convergence-rate studies.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::formal_powers::PhiPsiTable;
use crate::grid::GridFunction;
use crate::kernel::{
    build_darboux_kernel, fit_goursat_data, DarbouxKernelApproximation, FitOptions,
    KernelApproximation,
};
use crate::oracle::KernelOracle;
use crate::potential::{build_particular_solution, Potential};
use crate::wave::{WaveBasis, WaveFamily};

/// `(∫_0^x t^k cos(ωt) dt, ∫_0^x t^k sin(ωt) dt)` for complex `ω`.
///
/// Three regimes keep every order accurate: a truncated power series for
/// small `|ωx|`, an upward integration-by-parts recurrence once `|ωx|`
/// dominates the order, and an inhomogeneous downward recurrence in between,
/// where the upward sweep would cancel catastrophically.
pub fn trig_moments(k: usize, omega: Complex64, x: f64) -> (Complex64, Complex64) {
    if omega == Complex64::ZERO {
        return (
            Complex64::new(x.powi(k as i32 + 1) / (k + 1) as f64, 0.0),
            Complex64::ZERO,
        );
    }
    let z = omega * x;
    let zn = z.norm();
    if zn < 0.5 {
        return series_moments(k, omega, x);
    }
    if zn >= (k + 1) as f64 {
        let (mut c, mut s) = base_moments(omega, x);
        let (sin_z, cos_z) = (z.sin(), z.cos());
        let mut xp = 1.0; // x^j
        for j in 1..=k {
            xp *= x;
            let jw = Complex64::new(j as f64, 0.0) / omega;
            let cj = xp * sin_z / omega - jw * s;
            let sj = -xp * cos_z / omega + jw * c;
            c = cj;
            s = sj;
        }
        (c, s)
    } else {
        downward_moments(k, omega, x)
    }
}

fn base_moments(omega: Complex64, x: f64) -> (Complex64, Complex64) {
    let z = omega * x;
    ((z).sin() / omega, (Complex64::ONE - z.cos()) / omega)
}

fn series_moments(k: usize, omega: Complex64, x: f64) -> (Complex64, Complex64) {
    let z2 = omega * omega * x * x;
    let xk1 = x.powi(k as i32 + 1);
    let mut c = Complex64::ZERO;
    let mut s = Complex64::ZERO;
    let mut even_term = Complex64::ONE; // z^{2j} / (2j)!
    let mut odd_term = Complex64::ONE; // z^{2j} / (2j+1)!
    for j in 0..15 {
        c += even_term / (k as f64 + 2.0 * j as f64 + 1.0);
        s += odd_term / (k as f64 + 2.0 * j as f64 + 2.0);
        let d = 2.0 * (j + 1) as f64;
        even_term *= -z2 / (d * (d - 1.0));
        odd_term *= -z2 / (d * (d + 1.0));
    }
    (c * xk1, s * omega * xk1 * x)
}

/// Inhomogeneous downward recurrence seeded with zeros far enough above `k`
/// that the seed error is damped below roundoff by the `|z|/j < 1` factors.
fn downward_moments(k: usize, omega: Complex64, x: f64) -> (Complex64, Complex64) {
    let z = omega * x;
    let zn = z.norm();
    let mut start = k + 8;
    let mut damping = 1.0f64;
    while damping < 1e20 && start < k + 400 {
        start += 1;
        damping *= start as f64 / zn;
    }
    let (sin_z, cos_z) = (z.sin(), z.cos());
    let mut c = Complex64::ZERO;
    let mut s = Complex64::ZERO;
    // x^{j} at j = start
    let mut xp = x.powi(start as i32);
    let mut j = start;
    while j > k {
        let inv = 1.0 / j as f64;
        let cj = (omega * s + xp * cos_z) * inv;
        let sj = (xp * sin_z - omega * c) * inv;
        c = cj;
        s = sj;
        xp /= x;
        j -= 1;
    }
    (c, s)
}

/// `c_N(ω, x)`: the approximate solution with `c(0) = 1`, `c'(0) = h`.
pub fn eval_c(kernel: &KernelApproximation, omega: Complex64, x: f64) -> Result<Complex64> {
    let coeffs = kernel.poly().t_poly_at(x)?;
    Ok(assemble_cos(&coeffs, omega, x))
}

/// `s_N(ω, x)`: the approximate solution with `s(0) = 0`, `s'(0) = 1`,
/// returned in the `ω`-divided form with the correct `ω -> 0` limit.
pub fn eval_s(kernel: &KernelApproximation, omega: Complex64, x: f64) -> Result<Complex64> {
    let coeffs = kernel.poly().t_poly_at(x)?;
    Ok(assemble_sin_over_omega(&coeffs, omega, x))
}

/// Both solutions from one coefficient assembly.
pub fn eval_c_s(
    kernel: &KernelApproximation,
    omega: Complex64,
    x: f64,
) -> Result<(Complex64, Complex64)> {
    let coeffs = kernel.poly().t_poly_at(x)?;
    Ok((
        assemble_cos(&coeffs, omega, x),
        assemble_sin_over_omega(&coeffs, omega, x),
    ))
}

fn assemble_cos(coeffs: &[Complex64], omega: Complex64, x: f64) -> Complex64 {
    let base = if omega == Complex64::ZERO {
        Complex64::ONE
    } else {
        (omega * x).cos()
    };
    let mut acc = base;
    for (k, &ck) in coeffs.iter().enumerate().step_by(2) {
        if ck != Complex64::ZERO {
            let (cm, _) = trig_moments(k, omega, x);
            acc += 2.0 * ck * cm;
        }
    }
    acc
}

fn assemble_sin_over_omega(coeffs: &[Complex64], omega: Complex64, x: f64) -> Complex64 {
    if omega == Complex64::ZERO {
        // lim sin(ωx)/ω = x and lim S_k/ω = x^{k+2}/(k+2)
        let mut acc = Complex64::new(x, 0.0);
        for (k, &ck) in coeffs.iter().enumerate().skip(1).step_by(2) {
            acc += 2.0 * ck * x.powi(k as i32 + 2) / (k as f64 + 2.0);
        }
        return acc;
    }
    let mut acc = (omega * x).sin();
    for (k, &ck) in coeffs.iter().enumerate().skip(1).step_by(2) {
        if ck != Complex64::ZERO {
            let (_, sm) = trig_moments(k, omega, x);
            acc += 2.0 * ck * sm;
        }
    }
    acc / omega
}

/// Apply the Darboux transmutation to `cos(ωt)` / `sin(ωt)` at one point via
/// the closed-form moments.
fn darboux_apply_cos(
    kd: &DarbouxKernelApproximation,
    omega: Complex64,
    x: f64,
) -> Result<Complex64> {
    let coeffs = kd.poly().t_poly_at(x)?;
    Ok(assemble_cos(&coeffs, omega, x))
}

fn darboux_apply_sin(
    kd: &DarbouxKernelApproximation,
    omega: Complex64,
    x: f64,
) -> Result<Complex64> {
    let coeffs = kd.poly().t_poly_at(x)?;
    if omega == Complex64::ZERO {
        return Ok(Complex64::ZERO);
    }
    let mut acc = (omega * x).sin();
    for (k, &ck) in coeffs.iter().enumerate().skip(1).step_by(2) {
        if ck != Complex64::ZERO {
            let (_, sm) = trig_moments(k, omega, x);
            acc += 2.0 * ck * sm;
        }
    }
    Ok(acc)
}

/// Derivatives `(c_N'(ω, x), s_N'(ω, x))` through the Darboux kernel:
/// `c' = (f'/f) c_N - ω T_D[sin ωt]` and `s' = (f'/f) s_N + T_D[cos ωt]`.
pub fn eval_derivatives(
    kernel: &KernelApproximation,
    darboux: &DarbouxKernelApproximation,
    f: &crate::potential::ParticularSolution,
    omega: Complex64,
    x: f64,
) -> Result<(Complex64, Complex64)> {
    let ratio = f.f_prime().eval_at(x)? / f.f().eval_at(x)?;
    let (c, s) = eval_c_s(kernel, omega, x)?;
    let td_sin = darboux_apply_sin(darboux, omega, x)?;
    let td_cos = darboux_apply_cos(darboux, omega, x)?;
    Ok((ratio * c - omega * td_sin, ratio * s + td_cos))
}

/// Boundary condition `u(x0) cos α + u'(x0) sin α = 0` stored as the
/// coefficient pair `(cos α, sin α)`.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryCondition {
    pub cos_coeff: f64,
    pub sin_coeff: f64,
}

impl BoundaryCondition {
    pub fn new(cos_coeff: f64, sin_coeff: f64) -> Result<Self> {
        if cos_coeff == 0.0 && sin_coeff == 0.0 {
            return Err(Error::Domain("boundary condition pair is zero".into()));
        }
        Ok(BoundaryCondition {
            cos_coeff,
            sin_coeff,
        })
    }

    pub fn dirichlet() -> Self {
        BoundaryCondition {
            cos_coeff: 1.0,
            sin_coeff: 0.0,
        }
    }

    pub fn neumann() -> Self {
        BoundaryCondition {
            cos_coeff: 0.0,
            sin_coeff: 1.0,
        }
    }

    /// `h = -cos α / sin α` when the left condition fixes it; `None` for a
    /// Dirichlet left end (where the `s`-family is used and `h` is free).
    pub fn implied_h(&self) -> Option<Complex64> {
        if self.sin_coeff != 0.0 {
            Some(Complex64::new(-self.cos_coeff / self.sin_coeff, 0.0))
        } else {
            None
        }
    }
}

/// A regular spectral problem on `[0, b]`.
#[derive(Debug, Clone)]
pub struct SpectralProblem {
    pub potential: Potential,
    pub bc_left: BoundaryCondition,
    pub bc_right: BoundaryCondition,
    /// Real `ω` interval scanned for eigenvalues (`λ = ω²`).
    pub omega_range: (f64, f64),
    /// Maximum number of eigenpairs returned.
    pub count: usize,
    /// Also scan the imaginary `ω` axis for negative eigenvalues.
    pub include_negative: bool,
}

/// One computed eigenpair.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub index: usize,
    pub omega: Complex64,
    pub lambda: Complex64,
    pub eigenfunction: GridFunction,
    pub bc_residual: f64,
}

/// Everything the solver assembles for one problem; building it is the
/// expensive step, after which evaluations at any `ω` are cheap.
pub struct SpectralSetup {
    pub potential: Potential,
    pub f: crate::potential::ParticularSolution,
    pub basis: std::sync::Arc<WaveBasis>,
    pub kernel: KernelApproximation,
    pub darboux: DarbouxKernelApproximation,
}

impl SpectralSetup {
    /// Build tables, traces, kernel fit and Darboux companion for a
    /// potential, with `h` coming from the left boundary condition (or the
    /// non-vanishing fallback for a Dirichlet left end).
    pub fn assemble(
        potential: &Potential,
        h_request: Option<Complex64>,
        order: usize,
        opts: &FitOptions,
    ) -> Result<SpectralSetup> {
        let f = build_particular_solution(potential, h_request)?;
        let table = PhiPsiTable::build(&f, 2 * order + 1)?;
        let basis = std::sync::Arc::new(WaveBasis::build(&table, order, WaveFamily::Phi)?);
        let psi_basis = std::sync::Arc::new(WaveBasis::build(&table, order, WaveFamily::Psi)?);
        let kernel = fit_goursat_data(&basis, potential, f.h(), order, opts)?;
        let darboux = build_darboux_kernel(&kernel, &psi_basis, potential, &f)?;
        Ok(SpectralSetup {
            potential: potential.clone(),
            f,
            basis,
            kernel,
            darboux,
        })
    }
}

/// Which solution family the characteristic function uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    C,
    S,
}

struct Characteristic<'a> {
    setup: &'a SpectralSetup,
    family: Family,
    bc_right: BoundaryCondition,
    b: f64,
    boundary_poly: Vec<Complex64>,
}

impl<'a> Characteristic<'a> {
    fn new(setup: &'a SpectralSetup, family: Family, bc_right: BoundaryCondition) -> Result<Self> {
        let b = setup.potential.half_width();
        let boundary_poly = setup.kernel.poly().t_poly_at(b)?;
        Ok(Characteristic {
            setup,
            family,
            bc_right,
            b,
            boundary_poly,
        })
    }

    /// `Φ(ω)` together with the normalization scale.
    fn eval(&self, omega: Complex64) -> Result<(Complex64, f64)> {
        let c = assemble_cos(&self.boundary_poly, omega, self.b);
        let s = assemble_sin_over_omega(&self.boundary_poly, omega, self.b);
        let u = match self.family {
            Family::C => c,
            Family::S => s,
        };
        let phi = if self.bc_right.sin_coeff == 0.0 {
            self.bc_right.cos_coeff * u
        } else {
            let (dc, ds) = eval_derivatives(
                &self.setup.kernel,
                &self.setup.darboux,
                &self.setup.f,
                omega,
                self.b,
            )?;
            let du = match self.family {
                Family::C => dc,
                Family::S => ds,
            };
            self.bc_right.cos_coeff * u + self.bc_right.sin_coeff * du
        };
        let scale = c.norm().max(s.norm()).max(1.0);
        Ok((phi, scale))
    }
}

const CHAR_TOL: f64 = 1e-12;
const SECANT_MAX_ITER: usize = 80;

/// Safeguarded secant refinement of a sign-change bracket of `Re Φ`,
/// falling back to bisection whenever the secant step leaves the bracket.
fn refine_root(
    chi: &Characteristic,
    mut lo: f64,
    mut hi: f64,
    mut f_lo: f64,
    mut f_hi: f64,
    make_omega: impl Fn(f64) -> Complex64,
) -> Result<(f64, Complex64, f64)> {
    let mut best = lo;
    for _ in 0..SECANT_MAX_ITER {
        let denom = f_hi - f_lo;
        let mut mid = if denom != 0.0 {
            hi - f_hi * (hi - lo) / denom
        } else {
            0.5 * (lo + hi)
        };
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let (phi, scale) = chi.eval(make_omega(mid))?;
        best = mid;
        if phi.re.abs() < CHAR_TOL * scale || (hi - lo) < 1e-15 * (1.0 + hi.abs()) {
            return Ok((mid, phi, scale));
        }
        if (phi.re < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = phi.re;
        } else {
            hi = mid;
            f_hi = phi.re;
        }
    }
    let (phi, scale) = chi.eval(make_omega(best))?;
    Ok((best, phi, scale))
}

fn scan_axis(
    chi: &Characteristic,
    range: (f64, f64),
    step: f64,
    make_omega: &dyn Fn(f64) -> Complex64,
) -> Result<Vec<(f64, Complex64, f64)>> {
    let (lo, hi) = range;
    if hi <= lo {
        return Ok(Vec::new());
    }
    let steps = ((hi - lo) / step).ceil() as usize + 1;
    let dt = (hi - lo) / steps as f64;
    let mut roots = Vec::new();
    let (mut prev_phi, _) = chi.eval(make_omega(lo))?;
    let mut prev_t = lo;
    for i in 1..=steps {
        let t = lo + i as f64 * dt;
        let (phi, _) = chi.eval(make_omega(t))?;
        if prev_phi.re == 0.0 {
            // exact zero on a scan node
            let (_, scale) = chi.eval(make_omega(prev_t))?;
            roots.push((prev_t, prev_phi, scale));
        } else if prev_phi.re * phi.re < 0.0 {
            roots.push(refine_root(chi, prev_t, t, prev_phi.re, phi.re, make_omega)?);
        }
        prev_phi = phi;
        prev_t = t;
    }
    Ok(roots)
}

/// Find eigenvalues of a regular problem by scanning the characteristic
/// function over real `ω` (step at most `π / (4b)`), refining brackets by
/// safeguarded secant iteration, and sampling eigenfunctions from the fitted
/// kernel. Negative eigenvalues (`λ = (iτ)² < 0`) are reached through the
/// imaginary axis when requested.
pub fn find_eigenvalues(
    problem: &SpectralProblem,
    setup: &SpectralSetup,
) -> Result<Vec<Eigenpair>> {
    let family = match problem.bc_left.implied_h() {
        Some(h) => {
            if (h - setup.f.h()).norm() > 1e-9 {
                return Err(Error::Domain(format!(
                    "setup was assembled with h = {}, but the left boundary \
                     condition implies h = {h}",
                    setup.f.h()
                )));
            }
            Family::C
        }
        None => Family::S,
    };
    let chi = Characteristic::new(setup, family, problem.bc_right)?;
    let b = setup.potential.half_width();
    let step = std::f64::consts::PI / (4.0 * b);

    let mut found: Vec<(Complex64, Complex64, f64)> = Vec::new(); // (omega, phi, scale)
    if problem.include_negative {
        let tau_max = setup.potential.max_abs_q().sqrt() + setup.f.h().norm() + 1.0;
        let make = |t: f64| Complex64::new(0.0, t);
        for (t, phi, scale) in scan_axis(&chi, (1e-8, tau_max), step, &make)? {
            found.push((Complex64::new(0.0, t), phi, scale));
        }
        found.reverse(); // most negative λ first
    }
    let make = |t: f64| Complex64::new(t, 0.0);
    for (t, phi, scale) in scan_axis(&chi, problem.omega_range, step, &make)? {
        found.push((Complex64::new(t, 0.0), phi, scale));
    }
    if found.is_empty() {
        return Err(Error::Domain(format!(
            "no eigenvalues found for ω in [{}, {}]",
            problem.omega_range.0, problem.omega_range.1
        )));
    }
    found.truncate(problem.count);

    // sample eigenfunctions on the grid via the node-wise polynomials
    let grid = setup.potential.grid().clone();
    let polys = setup.kernel.poly().node_poly_matrix();
    let mut out = Vec::with_capacity(found.len());
    for (index, (omega, phi, scale)) in found.into_iter().enumerate() {
        let mut values = Vec::with_capacity(grid.len());
        for (i, x) in grid.nodes().enumerate() {
            let v = match family {
                Family::C => assemble_cos(&polys[i], omega, x),
                Family::S => assemble_sin_over_omega(&polys[i], omega, x),
            };
            values.push(v);
        }
        let ef = GridFunction::new(grid.clone(), values)?;
        let norm = ef.max_norm();
        let ef = if norm > 0.0 {
            ef.scale(Complex64::new(1.0 / norm, 0.0))
        } else {
            ef
        };
        out.push(Eigenpair {
            index,
            omega,
            lambda: omega * omega,
            eigenfunction: ef,
            bc_residual: phi.norm() / scale,
        });
    }
    Ok(out)
}

/// Count characteristic-function zeros inside a rectangle of the complex
/// `ω` plane by the winding of `Φ` along its boundary (argument principle).
/// Exposed for complex spectra; the default solver path never calls it.
pub fn count_zeros_in_rectangle(
    setup: &SpectralSetup,
    bc_left: BoundaryCondition,
    bc_right: BoundaryCondition,
    corner_lo: Complex64,
    corner_hi: Complex64,
    samples_per_edge: usize,
) -> Result<usize> {
    let family = match bc_left.implied_h() {
        Some(_) => Family::C,
        None => Family::S,
    };
    let chi = Characteristic::new(setup, family, bc_right)?;
    let n = samples_per_edge.max(16);
    let (a, b) = (corner_lo, corner_hi);
    let corners = [
        a,
        Complex64::new(b.re, a.im),
        b,
        Complex64::new(a.re, b.im),
        a,
    ];
    let mut winding = 0.0f64;
    let mut prev_arg: Option<f64> = None;
    for e in 0..4 {
        for i in 0..n {
            let t = i as f64 / n as f64;
            let omega = corners[e] * (1.0 - t) + corners[e + 1] * t;
            let (phi, _) = chi.eval(omega)?;
            let arg = phi.arg();
            if let Some(p) = prev_arg {
                let mut d = arg - p;
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                winding += d;
            }
            prev_arg = Some(arg);
        }
    }
    Ok((winding / (2.0 * std::f64::consts::PI)).round().abs() as usize)
}

/// One row of a convergence study.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub order: usize,
    pub eps1: f64,
    pub eps2: f64,
    /// `max |K_N - oracle|` over the comparison lattice, when an oracle was
    /// requested.
    pub sup_error: Option<f64>,
}

/// Residual-decay study over a range of fit orders.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub rows: Vec<StudyRow>,
    /// Log–log slope of `max(eps1, eps2)` against `N` over all rows.
    pub slope: f64,
}

impl ConvergenceStudy {
    /// Pairwise log–log slopes between consecutive rows.
    pub fn pairwise_slopes(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| {
                let e0 = w[0].eps1.max(w[0].eps2).max(f64::MIN_POSITIVE);
                let e1 = w[1].eps1.max(w[1].eps2).max(f64::MIN_POSITIVE);
                (e1.ln() - e0.ln()) / ((w[1].order as f64).ln() - (w[0].order as f64).ln())
            })
            .collect()
    }
}

fn lsq_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Run kernel fits for every order in `orders`, recording the max-norm
/// residuals and, when `oracle_lattice` is set, the uniform distance to the
/// brute-force kernel on its lattice.
pub fn convergence_study(
    potential: &Potential,
    h: Complex64,
    orders: &[usize],
    oracle_lattice: Option<usize>,
) -> Result<ConvergenceStudy> {
    let max_order = *orders.iter().max().ok_or_else(|| {
        Error::Domain("convergence study needs at least one order".into())
    })?;
    let f = build_particular_solution(potential, Some(h))?;
    let table = PhiPsiTable::build(&f, 2 * max_order + 1)?;
    let basis = std::sync::Arc::new(WaveBasis::build(&table, max_order, WaveFamily::Phi)?);
    let oracle = match oracle_lattice {
        Some(lat) => Some(KernelOracle::build(potential, f.h(), lat, 1e-13)?),
        None => None,
    };

    let mut rows = Vec::with_capacity(orders.len());
    for &n in orders {
        let kernel = fit_goursat_data(&basis, potential, f.h(), n, &FitOptions::default())?;
        let sup_error = match &oracle {
            Some(orc) => {
                let m = orc.nodes_per_axis();
                let stride = (m / 128).max(1);
                let mut sup = 0.0f64;
                let origin = orc.origin();
                for i in (origin..m).step_by(stride) {
                    for j in (origin..m).step_by(stride) {
                        if !orc.in_exact_triangle(i, j) {
                            continue;
                        }
                        let (x, t, kv) = orc.k_at_indices(i, j);
                        sup = sup.max((kernel.eval(x, t)? - kv).norm());
                    }
                }
                Some(sup)
            }
            None => None,
        };
        rows.push(StudyRow {
            order: n,
            eps1: kernel.eps1(),
            eps2: kernel.eps2(),
            sup_error,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            (
                (r.order as f64).ln(),
                r.eps1.max(r.eps2).max(f64::MIN_POSITIVE).ln(),
            )
        })
        .collect();
    let slope = lsq_slope(&points);
    Ok(ConvergenceStudy { rows, slope })
}
