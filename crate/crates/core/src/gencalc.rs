//! Generalized derivatives and the Goursat-to-Goursat operators.
//!
//! `gamma1 g = f g' - f' g` and `gamma2 gamma1 g = (g' - g'(0) - ∫ q g)/2`
//! ladder the trace systems (`gamma2 gamma1 c_n = n s_{n-1}` and vice
//! versa); iterating them at the origin yields Taylor-type expansion
//! coefficients in the `c_n`/`s_n` systems. The operators `Γ±` and `G1`,
//! `G2` transport powers of `x` onto the traces and are inverted through a
//! dense discretization.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{cubic_stencil, Grid, GridFunction};
use crate::kernel::{horner, KernelApproximation};
use crate::potential::{ParticularSolution, SegmentMode};

/// `gamma1 g = f² (g/f)' = f g' - f' g`, with the derivative taken on the
/// grid.
pub fn gamma1(g: &GridFunction, f: &ParticularSolution) -> Result<GridFunction> {
    let dg = g.differentiate()?;
    f.f()
        .mul(&dg)?
        .sub(&f.f_prime().mul(g)?)
}

/// `gamma2 gamma1 g = (g'(x) - g'(0) - ∫_0^x q g)/2`, the composition in its
/// first-derivative form (no second differences enter).
pub fn gamma2_gamma1(g: &GridFunction, q: &GridFunction) -> Result<GridFunction> {
    let grid = g.grid().clone();
    let origin = grid.origin_index()?;
    let dg = g.differentiate()?;
    let d0 = dg.value(origin);
    let qg = q.mul(g)?.cumulative_from_node(origin);
    let half = Complex64::new(0.5, 0.0);
    dg.zip_map(&qg, |d, int| (d - d0 - int) * half)
}

/// The iterated unit derivatives `g_j = (2 gamma2 gamma1)^j [1]`.
#[derive(Debug)]
pub struct UnitDerivativeTable {
    g: Vec<GridFunction>,
}

impl UnitDerivativeTable {
    pub fn depth(&self) -> usize {
        self.g.len() - 1
    }

    pub fn get(&self, j: usize) -> &GridFunction {
        &self.g[j]
    }
}

/// Iterate `2 gamma2 gamma1` starting from the constant one.
pub fn unit_derivatives(q: &GridFunction, depth: usize) -> Result<UnitDerivativeTable> {
    let grid = q.grid().clone();
    let mut g = vec![GridFunction::one(&grid)];
    let two = Complex64::new(2.0, 0.0);
    for j in 0..depth {
        g.push(gamma2_gamma1(&g[j], q)?.scale(two));
    }
    Ok(UnitDerivativeTable { g })
}

/// Which expansion system the Taylor-type coefficients target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaylorKind {
    /// Expansion `F = Σ α_n c_n / n!`.
    C,
    /// Expansion `F = Σ β_n s_n / n!` (valid when `F(0) = 0`).
    S,
}

/// Expansion coefficients of a function in the `c`- or `s`-system.
#[derive(Debug, Clone)]
pub struct TaylorCoefficients {
    pub kind: TaylorKind,
    /// `alpha_0..alpha_N` for the `c`-system; `beta_1..beta_N` for the
    /// `s`-system with a structural zero in slot 0.
    pub values: Vec<Complex64>,
}

impl TaylorCoefficients {
    pub fn order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self.kind {
            TaylorKind::C => "c",
            TaylorKind::S => "s",
        };
        serde_json::json!({
            "kind": kind,
            "coefficients": self
                .values
                .iter()
                .map(|v| serde_json::json!([v.re, v.im]))
                .collect::<Vec<_>>(),
        })
    }
}

/// Truncated Taylor jets at the origin. The generalized-derivative
/// recursions only ever need point values at zero, and on jets they are
/// exact: `(gamma2 gamma1 g)' = (g'' - q g)/2`, so iterating never touches
/// grid differentiation (whose noise compounds catastrophically through the
/// levels).
mod jet {
    use super::Complex64;

    pub fn derivative(a: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; a.len()];
        for m in 1..a.len() {
            out[m - 1] = a[m] * m as f64;
        }
        out
    }

    pub fn integrate(a: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; a.len()];
        for m in 0..a.len() - 1 {
            out[m + 1] = a[m] / (m + 1) as f64;
        }
        out
    }

    pub fn mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; a.len()];
        for i in 0..a.len() {
            if a[i] == Complex64::ZERO {
                continue;
            }
            for j in 0..a.len() - i {
                out[i + j] += a[i] * b[j];
            }
        }
        out
    }

    /// `(g' - g'(0) - ∫ q g) / 2` on jets.
    pub fn gamma2_gamma1(g: &[Complex64], q: &[Complex64]) -> Vec<Complex64> {
        let d = derivative(g);
        let d0 = d[0];
        let int = integrate(&mul(q, g));
        let mut out = vec![Complex64::ZERO; g.len()];
        for m in 0..g.len() {
            out[m] = 0.5 * (d[m] - int[m]);
        }
        out[0] -= 0.5 * d0;
        out
    }

    pub fn gamma1_at_zero(g: &[Complex64], h: Complex64) -> Complex64 {
        g[1] - h * g[0]
    }
}

/// Extract the Taylor jet of a sampled function at the origin by a windowed
/// least-squares fit in a (shifted) Legendre basis, converted exactly to
/// monomial form. `degree + 1` coefficients are returned; `g^{(m)}(0) =
/// m! jet[m]`.
pub fn origin_jet(g: &GridFunction, degree: usize, window: f64) -> Result<Vec<Complex64>> {
    let grid = g.grid();
    let origin = grid.origin_index()?;
    let w = window.min(grid.right());
    let half_window = grid.left() <= 0.0 && -grid.left() < 1e-12; // half grid starts at 0
    let lo = if half_window {
        origin
    } else {
        grid.index_of(-w)
            .unwrap_or(0)
    };
    let hi = grid.index_of(w).unwrap_or(grid.len() - 1);
    let rows = hi - lo + 1;
    if rows < 2 * (degree + 1) {
        return Err(Error::Domain(format!(
            "window [{}, {w}] holds too few samples for a degree-{degree} jet",
            if half_window { 0.0 } else { -w }
        )));
    }
    // Legendre design matrix on the normalized coordinate
    let mut design = DMatrix::<Complex64>::zeros(rows, degree + 1);
    for (r, i) in (lo..=hi).enumerate() {
        let x = grid.node(i);
        let xi = if half_window {
            2.0 * x / w - 1.0 // [0, w] -> [-1, 1]
        } else {
            x / w
        };
        let mut p_prev = 1.0f64;
        let mut p_cur = xi;
        design[(r, 0)] = Complex64::ONE;
        if degree >= 1 {
            design[(r, 1)] = Complex64::new(p_cur, 0.0);
        }
        for k in 2..=degree {
            let p_next =
                ((2 * k - 1) as f64 * xi * p_cur - (k - 1) as f64 * p_prev) / k as f64;
            design[(r, k)] = Complex64::new(p_next, 0.0);
            p_prev = p_cur;
            p_cur = p_next;
        }
    }
    let y = nalgebra::DVector::<Complex64>::from_fn(rows, |r, _| g.value(lo + r));
    let qr = design.qr();
    let qty = qr.q().adjoint() * y;
    let legendre = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::IllConditioned { condition: f64::NAN })?;

    // exact Legendre -> monomial conversion in the normalized coordinate
    let mut mono = vec![Complex64::ZERO; degree + 1];
    let mut p_prev = vec![1.0f64]; // P_0
    let mut p_cur = vec![0.0, 1.0]; // P_1
    for k in 0..=degree {
        let poly: &[f64] = match k {
            0 => &p_prev,
            1 => &p_cur,
            _ => {
                let mut next = vec![0.0; k + 1];
                for (j, &c) in p_cur.iter().enumerate() {
                    next[j + 1] += (2 * k - 1) as f64 * c / k as f64;
                }
                for (j, &c) in p_prev.iter().enumerate() {
                    next[j] -= (k - 1) as f64 * c / k as f64;
                }
                p_prev = std::mem::replace(&mut p_cur, next);
                &p_cur
            }
        };
        for (j, &c) in poly.iter().enumerate() {
            mono[j] += legendre[k] * c;
        }
    }
    // normalized coordinate back to x: half windows used xi = 2x/w - 1
    let mut jet = vec![Complex64::ZERO; degree + 1];
    if half_window {
        // p(xi) with xi = 2x/w - 1: expand around xi0 = -1
        for m in 0..=degree {
            let mut acc = Complex64::ZERO;
            // d^m/dxi^m p at xi = -1, divided by m!
            for j in m..=degree {
                let mut binom = 1.0f64;
                for t in 0..m {
                    binom *= (j - t) as f64;
                }
                acc += mono[j] * binom * (-1.0f64).powi((j - m) as i32);
            }
            let scale = (2.0 / w).powi(m as i32) / factorial(m);
            jet[m] = acc * scale;
        }
    } else {
        for m in 0..=degree {
            jet[m] = mono[m] / w.powi(m as i32);
        }
    }
    Ok(jet)
}

fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product::<f64>().max(1.0)
}

/// Taylor-type coefficients of `F` in the chosen system, from the exact
/// recursion on generalized derivatives carried out in jet arithmetic at
/// the origin.
pub fn taylor_coefficients(
    big_f: &GridFunction,
    kind: TaylorKind,
    order: usize,
    f: &ParticularSolution,
    q: &GridFunction,
) -> Result<TaylorCoefficients> {
    let grid = big_f.grid().clone();
    let origin = grid.origin_index()?;
    let h = f.h();
    let f0 = big_f.value(origin);
    if kind == TaylorKind::S && f0.norm() > 1e-9 * (1.0 + big_f.max_norm()) {
        return Err(Error::Domain(format!(
            "s-system expansion needs F(0) = 0, got {f0}"
        )));
    }

    let fit_degree = order + 6;
    let window = grid.right().min(0.75 * grid.right()).min(1.0).max(
        // keep enough samples under the window on coarse grids
        (4.0 * (fit_degree + 1) as f64) * grid.step(),
    );
    let jet_len = fit_degree + 1;
    let mut jet_f = origin_jet(big_f, fit_degree, window)?;
    let mut jet_q = origin_jet(q, fit_degree, window)?;
    jet_f.truncate(jet_len);
    jet_q.truncate(jet_len);
    // pin the exact origin value (the fit only approximates it)
    jet_f[0] = f0;

    // gamma1 (gamma2 gamma1)^j at the origin, for F and for the constant 1
    let mut gamma_f = Vec::with_capacity(order);
    let mut gamma_unit = Vec::with_capacity(order);
    let mut iter_f = jet_f;
    let mut iter_unit = vec![Complex64::ZERO; jet_len];
    iter_unit[0] = Complex64::ONE;
    for j in 0..order {
        gamma_f.push(jet::gamma1_at_zero(&iter_f, h));
        gamma_unit.push(jet::gamma1_at_zero(&iter_unit, h));
        if j + 1 < order {
            iter_f = jet::gamma2_gamma1(&iter_f, &jet_q);
            iter_unit = jet::gamma2_gamma1(&iter_unit, &jet_q);
        }
    }

    let mut values = vec![Complex64::ZERO; order + 1];
    match kind {
        TaylorKind::C => {
            values[0] = f0;
            for j in 0..order {
                let mut v = gamma_f[j];
                let mut n = 2;
                while n <= j {
                    v += values[n] * gamma_unit[j - n];
                    n += 2;
                }
                values[j + 1] = v;
            }
        }
        TaylorKind::S => {
            for j in 0..order {
                let mut v = gamma_f[j];
                let mut n = 1;
                while n <= j {
                    v += values[n] * gamma_unit[j - n];
                    n += 2;
                }
                values[j + 1] = v;
            }
        }
    }
    Ok(TaylorCoefficients { kind, values })
}

/// Sign selecting one of the two shift operators `Γ±`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSign {
    Plus,
    Minus,
}

/// Which Goursat-to-Goursat operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GKind {
    G1,
    G2,
}

fn require_full_mode(kernel: &KernelApproximation) -> Result<Arc<Grid>> {
    if kernel.mode() != SegmentMode::Full {
        return Err(Error::Domain(
            "the shift operators need a full-mode kernel (symmetric segment)".into(),
        ));
    }
    Ok(kernel.basis().grid().clone())
}

/// Simpson weights over the symmetric index range of node `i`, oriented.
fn symmetric_weights(i: usize, origin: usize, h: f64) -> (usize, Vec<f64>) {
    let mirror = 2 * origin - i;
    let (lo, hi) = (i.min(mirror), i.max(mirror));
    let count = hi - lo + 1;
    let mut w = vec![0.0; count];
    if count == 1 {
        return (lo, w);
    }
    // count is odd: plain composite Simpson
    w[0] = 1.0;
    w[count - 1] = 1.0;
    for (k, wk) in w.iter_mut().enumerate().skip(1).take(count - 2) {
        *wk = if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    let sign = if i < origin { -1.0 } else { 1.0 };
    for wk in &mut w {
        *wk *= sign * h / 3.0;
    }
    (lo, w)
}

/// `Γ+ η(x) = η(x) + ∫_{-x}^x K_N(x,t) η((t+x)/2) dt` and
/// `Γ- η(x) = η(0) + ∫_{-x}^x K_N(x,t) η((t-x)/2) dt`, with the
/// half-argument values taken by the shared cubic interpolant.
pub fn apply_gamma(
    kernel: &KernelApproximation,
    sign: GammaSign,
    eta: &GridFunction,
) -> Result<GridFunction> {
    let grid = require_full_mode(kernel)?;
    Grid::same_grid(&grid, eta.grid())?;
    let origin = grid.origin_index()?;
    let h = grid.step();
    let eta0 = eta.value(origin);
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = grid.node(i);
        let coeffs = kernel.poly().t_poly_at_node(i);
        let (lo, w) = symmetric_weights(i, origin, h);
        let mut acc = match sign {
            GammaSign::Plus => eta.value(i),
            GammaSign::Minus => eta0,
        };
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            let t = grid.node(lo + k);
            let arg = match sign {
                GammaSign::Plus => 0.5 * (t + x),
                GammaSign::Minus => 0.5 * (t - x),
            };
            let kv = horner(&coeffs, Complex64::new(t, 0.0));
            acc += wk * kv * eta.eval_at(arg)?;
        }
        out.push(acc);
    }
    GridFunction::new(grid, out)
}

/// `G1 = Γ+ + Γ- - f δ` and `G2 = Γ+ - Γ- + δ` (`δ η = η(0)`); the delta
/// terms cancel in `G2`.
pub fn apply_g(
    kernel: &KernelApproximation,
    f: &ParticularSolution,
    kind: GKind,
    eta: &GridFunction,
) -> Result<GridFunction> {
    let plus = apply_gamma(kernel, GammaSign::Plus, eta)?;
    let minus = apply_gamma(kernel, GammaSign::Minus, eta)?;
    let origin = eta.grid().origin_index()?;
    let eta0 = eta.value(origin);
    match kind {
        GKind::G1 => {
            let sum = plus.add(&minus)?;
            sum.zip_map(f.f(), |s, fv| s - fv * eta0)
        }
        GKind::G2 => {
            let diff = plus.sub(&minus)?;
            Ok(diff.map(|v| v + eta0))
        }
    }
}

/// Dense discretization of `G1` or `G2` on the grid, factorized once so the
/// inverse problem is a direct solve with a residual certificate.
pub struct GOperator {
    kind: GKind,
    grid: Arc<Grid>,
    matrix: DMatrix<Complex64>,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    condition_estimate: f64,
}

impl GOperator {
    pub fn new(
        kernel: &KernelApproximation,
        f: &ParticularSolution,
        kind: GKind,
    ) -> Result<GOperator> {
        let grid = require_full_mode(kernel)?;
        Grid::same_grid(&grid, f.grid())?;
        let n = grid.len();
        let origin = grid.origin_index()?;
        let h = grid.step();
        let mut m = DMatrix::<Complex64>::zeros(n, n);

        for i in 0..n {
            let x = grid.node(i);
            let coeffs = kernel.poly().t_poly_at_node(i);
            // identity part: Γ+ contributes η(x)
            m[(i, i)] += Complex64::ONE;
            // δ parts at the origin column
            match kind {
                GKind::G1 => {
                    // Γ- gives +η(0), the -f δ term gives -f(x) η(0)
                    m[(i, origin)] += Complex64::ONE - f.f().value(i);
                }
                GKind::G2 => {
                    // Γ- η(0) cancels against +δ
                }
            }
            let (lo, w) = symmetric_weights(i, origin, h);
            for (k, &wk) in w.iter().enumerate() {
                if wk == 0.0 {
                    continue;
                }
                let t = grid.node(lo + k);
                let kv = horner(&coeffs, Complex64::new(t, 0.0));
                let factor_plus = wk * kv;
                let (start, sw) = cubic_stencil(&grid, 0.5 * (t + x));
                for (s, &sv) in sw.iter().enumerate() {
                    m[(i, start + s)] += factor_plus * sv;
                }
                let factor_minus = match kind {
                    GKind::G1 => factor_plus,
                    GKind::G2 => -factor_plus,
                };
                let (start, sw) = cubic_stencil(&grid, 0.5 * (t - x));
                for (s, &sv) in sw.iter().enumerate() {
                    m[(i, start + s)] += factor_minus * sv;
                }
            }
        }

        let lu = m.clone().lu();
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        let u = lu.u();
        for j in 0..n {
            let d = u[(j, j)].norm();
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        let condition_estimate = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
        if condition_estimate > 1e14 {
            return Err(Error::IllConditioned {
                condition: condition_estimate,
            });
        }
        Ok(GOperator {
            kind,
            grid,
            matrix: m,
            lu,
            condition_estimate,
        })
    }

    pub fn kind(&self) -> GKind {
        self.kind
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Apply the discretized operator.
    pub fn apply(&self, eta: &GridFunction) -> Result<GridFunction> {
        Grid::same_grid(&self.grid, eta.grid())?;
        let v = nalgebra::DVector::<Complex64>::from_column_slice(eta.values());
        let out = &self.matrix * v;
        GridFunction::new(self.grid.clone(), out.iter().copied().collect())
    }

    /// Solve `G result = eta`; returns the preimage and the residual
    /// `max |G result - eta|` as a certificate.
    pub fn invert(&self, eta: &GridFunction) -> Result<(GridFunction, f64)> {
        Grid::same_grid(&self.grid, eta.grid())?;
        let v = nalgebra::DVector::<Complex64>::from_column_slice(eta.values());
        let solved = self.lu.solve(&v).ok_or(Error::IllConditioned {
            condition: self.condition_estimate,
        })?;
        let residual_vec = &self.matrix * &solved - v;
        let residual = residual_vec.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let gf = GridFunction::new(self.grid.clone(), solved.iter().copied().collect())?;
        Ok((gf, residual))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formal_powers::PhiPsiTable;
    use crate::kernel::{fit_goursat_data, FitOptions};
    use crate::potential::{build_particular_solution, Potential, SegmentMode};
    use crate::wave::{WaveBasis, WaveFamily};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn half_setup(
        q: &str,
        h: f64,
        order: usize,
        nodes: usize,
    ) -> (Potential, ParticularSolution, Arc<WaveBasis>) {
        let p = Potential::parse(q, 1.0, SegmentMode::Half, nodes).unwrap();
        let f = build_particular_solution(&p, Some(c(h))).unwrap();
        let table = PhiPsiTable::build(&f, 2 * order + 1).unwrap();
        let basis = Arc::new(WaveBasis::build(&table, order, WaveFamily::Phi).unwrap());
        (p, f, basis)
    }

    #[test]
    fn gamma1_annihilates_f() {
        let (_, f, _) = half_setup("exp(x)", 0.3, 2, 1001);
        let g = gamma1(f.f(), &f).unwrap();
        assert!(g.max_norm() <= 1e-9);
    }

    #[test]
    fn gamma1_on_first_traces() {
        let (_, f, basis) = half_setup("exp(x)", 0.0, 6, 2001);
        // gamma1 c_1 = 1
        let g = gamma1(basis.c(1), &f).unwrap();
        let one = GridFunction::one(basis.grid());
        assert!(g.max_diff(&one).unwrap() <= 1e-8);
        // gamma1 s_1 = f²
        let g = gamma1(basis.s(1), &f).unwrap();
        let f2 = f.f().mul(f.f()).unwrap();
        assert!(g.max_diff(&f2).unwrap() <= 1e-8);
    }

    #[test]
    fn gamma2_gamma1_basics() {
        let (p, f, basis) = half_setup("exp(x)", 0.0, 6, 2001);
        // gamma2 gamma1 [1] = -Q/2
        let one = GridFunction::one(p.grid());
        let g = gamma2_gamma1(&one, p.q()).unwrap();
        let target = p.cumulative().unwrap().scale(c(-0.5));
        assert!(g.max_diff(&target).unwrap() <= 1e-10);
        // gamma2 gamma1 s_1 = f - 1
        let g = gamma2_gamma1(basis.s(1), p.q()).unwrap();
        let target = f.f().map(|v| v - Complex64::ONE);
        assert!(g.max_diff(&target).unwrap() <= 1e-9);
    }

    #[test]
    fn ladder_relations() {
        // gamma2 gamma1 c_n = n s_{n-1} and gamma2 gamma1 s_n = n c_{n-1}
        let (p, _, basis) = half_setup("exp(x)", 0.0, 7, 2001);
        for n in 1..=6usize {
            let lhs = gamma2_gamma1(basis.c(n), p.q()).unwrap();
            let rhs = basis.s(n - 1).scale(c(n as f64));
            assert!(
                lhs.max_diff(&rhs).unwrap() <= 1e-7,
                "c ladder n={n}: {:.3e}",
                lhs.max_diff(&rhs).unwrap()
            );
            if n >= 2 {
                let lhs = gamma2_gamma1(basis.s(n), p.q()).unwrap();
                let rhs = basis.c(n - 1).scale(c(n as f64));
                assert!(
                    lhs.max_diff(&rhs).unwrap() <= 1e-7,
                    "s ladder n={n}: {:.3e}",
                    lhs.max_diff(&rhs).unwrap()
                );
            }
        }
    }

    #[test]
    fn unit_derivative_closed_forms() {
        let p = Potential::parse("exp(x)", 1.0, SegmentMode::Half, 2001).unwrap();
        let table = unit_derivatives(p.q(), 2).unwrap();
        let big_q = p.cumulative().unwrap();
        // (2 gamma2 gamma1)[1] = -Q
        assert!(table.get(1).max_diff(&big_q.scale(c(-1.0))).unwrap() <= 1e-9);
        // (2 gamma2 gamma1)²[1] = -q + q(0) + Q²/2; for q ≡ 1, f = cosh
        // the definition gives x²/2, pinning the sign of the Q² term
        let expect = GridFunction::new(
            p.grid().clone(),
            p.grid()
                .nodes()
                .enumerate()
                .map(|(i, _)| {
                    -p.q().value(i) + p.q().value(0)
                        + 0.5 * big_q.value(i) * big_q.value(i)
                })
                .collect(),
        )
        .unwrap();
        assert!(table.get(2).max_diff(&expect).unwrap() <= 1e-8);
        let p1 = Potential::parse("1", 1.0, SegmentMode::Half, 1001).unwrap();
        let t1 = unit_derivatives(p1.q(), 2).unwrap();
        let half_x2 = GridFunction::from_real_fn(p1.grid(), |x| 0.5 * x * x).unwrap();
        assert!(t1.get(2).max_diff(&half_x2).unwrap() <= 1e-9);

        let p0 = Potential::parse("0", 1.0, SegmentMode::Half, 801).unwrap();
        let t0 = unit_derivatives(p0.q(), 3).unwrap();
        for j in 1..=3 {
            assert!(t0.get(j).max_norm() <= 1e-12);
        }
    }

    #[test]
    fn taylor_leading_coefficients() {
        // F1 = h/2 + Q/4: alpha_0 = h/2, alpha_1 = q(0)/4 - h²/2
        let h = 0.35f64;
        let (p, f, _) = half_setup("exp(x)", h, 2, 2001);
        let big_q = p.cumulative().unwrap();
        let g1 = big_q.map(|v| 0.5 * c(h) + 0.25 * v);
        let tc = taylor_coefficients(&g1, TaylorKind::C, 2, &f, p.q()).unwrap();
        assert!((tc.values[0] - 0.5 * c(h)).norm() <= 1e-12);
        let expect = 0.25 - 0.5 * h * h;
        assert!(
            (tc.values[1] - c(expect)).norm() <= 1e-8,
            "{} vs {expect}",
            tc.values[1]
        );

        // F2 = Q/4: beta_1 = q(0)/4
        let g2 = big_q.scale(c(0.25));
        let ts = taylor_coefficients(&g2, TaylorKind::S, 2, &f, p.q()).unwrap();
        assert!((ts.values[1] - c(0.25)).norm() <= 1e-8);

        // s-kind rejects F(0) != 0
        assert!(taylor_coefficients(&g1, TaylorKind::S, 2, &f, p.q()).is_err());

        // all-zero case
        let zero = GridFunction::zero(p.grid());
        let tz = taylor_coefficients(&zero, TaylorKind::C, 3, &f, p.q()).unwrap();
        for v in &tz.values {
            assert!(v.norm() <= 1e-12);
        }
    }

    fn full_setup(
        q: &str,
        h: f64,
        order: usize,
        nodes: usize,
    ) -> (
        Potential,
        ParticularSolution,
        Arc<WaveBasis>,
        KernelApproximation,
    ) {
        let p = Potential::parse(q, 1.0, SegmentMode::Full, nodes).unwrap();
        let f = build_particular_solution(&p, Some(c(h))).unwrap();
        let table = PhiPsiTable::build(&f, 2 * order + 1).unwrap();
        let basis = Arc::new(WaveBasis::build(&table, order, WaveFamily::Phi).unwrap());
        let k = fit_goursat_data(&basis, &p, f.h(), order, &FitOptions::default()).unwrap();
        (p, f, basis, k)
    }

    #[test]
    fn gamma_operators_trivial_kernel() {
        // q = 0, h = 0: K_N = 0, so Γ+ is the identity and Γ- freezes the
        // origin value
        let (p, _, _, k) = full_setup("0", 0.0, 2, 801);
        let eta = GridFunction::from_real_fn(p.grid(), |x| (2.0 * x).sin() + x * x).unwrap();
        let plus = apply_gamma(&k, GammaSign::Plus, &eta).unwrap();
        assert!(plus.max_diff(&eta).unwrap() <= 1e-12);
        let minus = apply_gamma(&k, GammaSign::Minus, &eta).unwrap();
        let origin = p.grid().origin_index().unwrap();
        for v in minus.values() {
            assert!((v - eta.value(origin)).norm() <= 1e-12);
        }
    }

    #[test]
    fn gamma_maps_powers_to_trace_combinations() {
        let (p, f, basis, k) = full_setup("sin(x)", 0.0, 8, 801);
        let tol = 10.0 * k.error_bound().max(1e-11);
        // Γ-[1] = c_0 = f
        let one = GridFunction::one(p.grid());
        let minus = apply_gamma(&k, GammaSign::Minus, &one).unwrap();
        assert!(minus.max_diff(f.f()).unwrap() <= tol);
        for n in 0..=5usize {
            let pow = GridFunction::from_real_fn(p.grid(), |x| x.powi(n as i32)).unwrap();
            let scale = c(2f64.powi(n as i32));
            let plus = apply_gamma(&k, GammaSign::Plus, &pow).unwrap().scale(scale);
            let minus = apply_gamma(&k, GammaSign::Minus, &pow).unwrap().scale(scale);
            let expect_p = basis.c(n).add(basis.s(n)).unwrap();
            let expect_m = basis.c(n).sub(basis.s(n)).unwrap();
            assert!(
                plus.max_diff(&expect_p).unwrap() <= tol * scale.norm(),
                "Γ+ x^{n}: {:.3e}",
                plus.max_diff(&expect_p).unwrap()
            );
            assert!(
                minus.max_diff(&expect_m).unwrap() <= tol * scale.norm(),
                "Γ- x^{n}: {:.3e}",
                minus.max_diff(&expect_m).unwrap()
            );
        }
    }

    #[test]
    fn g_operators_map_scaled_powers_to_traces() {
        let (p, f, basis, k) = full_setup("sin(x)", 0.0, 7, 801);
        let tol = 10.0 * k.error_bound().max(1e-11);
        // G1[1] = f and G2[1] = 1
        let one = GridFunction::one(p.grid());
        let g1_one = apply_g(&k, &f, GKind::G1, &one).unwrap();
        assert!(g1_one.max_diff(f.f()).unwrap() <= tol);
        let g2_one = apply_g(&k, &f, GKind::G2, &one).unwrap();
        assert!(g2_one.max_diff(&one).unwrap() <= tol);
        for n in 1..=5usize {
            let pow = GridFunction::from_real_fn(p.grid(), |x| {
                2f64.powi(n as i32 - 1) * x.powi(n as i32)
            })
            .unwrap();
            let g1 = apply_g(&k, &f, GKind::G1, &pow).unwrap();
            let g2 = apply_g(&k, &f, GKind::G2, &pow).unwrap();
            assert!(
                g1.max_diff(basis.c(n)).unwrap() <= tol * 2f64.powi(n as i32),
                "G1 n={n}"
            );
            assert!(
                g2.max_diff(basis.s(n)).unwrap() <= tol * 2f64.powi(n as i32),
                "G2 n={n}"
            );
        }
    }

    #[test]
    fn g_operator_matrix_agrees_and_inverts() {
        let (p, f, basis, k) = full_setup("cos(2*x)", 0.2, 6, 601);
        for kind in [GKind::G1, GKind::G2] {
            let op = GOperator::new(&k, &f, kind).unwrap();
            let eta =
                GridFunction::from_real_fn(p.grid(), |x| x * x * x - 0.5 * x + 0.25).unwrap();
            let direct = apply_g(&k, &f, kind, &eta).unwrap();
            let via_matrix = op.apply(&eta).unwrap();
            assert!(direct.max_diff(&via_matrix).unwrap() <= 1e-12);

            let (back, residual) = op.invert(&direct).unwrap();
            assert!(residual <= 1e-10);
            assert!(
                back.max_diff(&eta).unwrap() <= 1e-7,
                "round trip {kind:?}: {:.3e}",
                back.max_diff(&eta).unwrap()
            );
        }
        // G1 inverse maps traces back to scaled powers
        let op = GOperator::new(&k, &f, GKind::G1).unwrap();
        for n in 1..=4usize {
            let (back, _) = op.invert(basis.c(n)).unwrap();
            let pow = GridFunction::from_real_fn(p.grid(), |x| {
                2f64.powi(n as i32 - 1) * x.powi(n as i32)
            })
            .unwrap();
            let tol = 20.0 * k.error_bound().max(1e-10) * 2f64.powi(n as i32);
            assert!(
                back.max_diff(&pow).unwrap() <= tol,
                "G1^-1 c_{n}: {:.3e} vs {tol:.3e}",
                back.max_diff(&pow).unwrap()
            );
        }
    }
}
