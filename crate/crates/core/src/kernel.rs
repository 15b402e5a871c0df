//! Kernel approximation: the two one-dimensional least-squares problems on
//! the trace systems, the assembled approximate kernel (a polynomial in `t`
//! with sampled coefficients in `x`), the transmutation operator and its
//! inverse, the Darboux companion kernel, and a-posteriori diagnostics from
//! the characteristic-line identities.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{simpson_slice, GridFunction};
use crate::potential::{ParticularSolution, Potential, SegmentMode};
use crate::wave::{WaveBasis, WaveFamily};

/// Modified Bessel function of the first kind, order zero, by its power
/// series; arguments here are moderate (`b sqrt(M)` for desk-scale data).
pub fn bessel_i0(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=30 {
        term *= q / ((k * k) as f64);
        sum += term;
    }
    sum
}

/// Anything that can be evaluated as a kernel on the square; implemented by
/// the fitted kernels and the brute-force oracle so diagnostics can run
/// against either.
pub trait KernelEvaluator {
    fn kernel_value(&self, x: f64, t: f64) -> Result<Complex64>;
}

impl KernelEvaluator for crate::oracle::KernelOracle {
    fn kernel_value(&self, x: f64, t: f64) -> Result<Complex64> {
        self.eval(x, t)
    }
}

/// A finite combination of generalized wave polynomials, stored as the two
/// coefficient families: `even[n]` multiplies `u_{2n-1}` (even powers of
/// `t`; `even[0]` multiplies `u_0`), `odd[n]` multiplies `u_{2n}` (odd
/// powers). This shape covers both the kernel and its Darboux companion.
#[derive(Debug, Clone)]
pub struct WavePolySum {
    basis: Arc<WaveBasis>,
    order: usize,
    even: Vec<Complex64>,
    odd: Vec<Complex64>,
}

fn binomials(order: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
    for n in 0..=order {
        let mut row = vec![1.0; n + 1];
        for k in 1..=n {
            row[k] = row[k - 1] * (n - k + 1) as f64 / k as f64;
        }
        rows.push(row);
    }
    rows
}

impl WavePolySum {
    pub fn new(
        basis: Arc<WaveBasis>,
        even: Vec<Complex64>,
        odd: Vec<Complex64>,
    ) -> Result<WavePolySum> {
        let order = even.len() - 1;
        if odd.len() != order + 1 {
            return Err(Error::Domain(
                "coefficient families must have equal length".into(),
            ));
        }
        if basis.order() < order {
            return Err(Error::Domain(format!(
                "basis order {} below kernel order {order}",
                basis.order()
            )));
        }
        Ok(WavePolySum {
            basis,
            order,
            even,
            odd,
        })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn basis(&self) -> &Arc<WaveBasis> {
        &self.basis
    }

    fn family_values_at(&self, x: f64) -> Result<Vec<Complex64>> {
        let table = self.basis.table();
        let mut vals = Vec::with_capacity(self.order + 1);
        for j in 0..=self.order {
            let g = match self.basis.family() {
                WaveFamily::Phi => table.phi(j),
                WaveFamily::Psi => table.psi(j),
            };
            vals.push(g.eval_at(x)?);
        }
        Ok(vals)
    }

    fn family_values_at_node(&self, i: usize) -> Vec<Complex64> {
        let table = self.basis.table();
        (0..=self.order)
            .map(|j| match self.basis.family() {
                WaveFamily::Phi => table.phi(j).value(i),
                WaveFamily::Psi => table.psi(j).value(i),
            })
            .collect()
    }

    fn t_poly_from(&self, fam: &[Complex64]) -> Vec<Complex64> {
        let n_max = self.order;
        let binom = binomials(n_max);
        let mut coeffs = vec![Complex64::ZERO; n_max + 1];
        coeffs[0] = self.even[0] * fam[0];
        for n in 1..=n_max {
            for k in 0..=n {
                let c = if k % 2 == 0 {
                    self.even[n]
                } else {
                    self.odd[n]
                };
                coeffs[k] += c * binom[n][k] * fam[n - k];
            }
        }
        coeffs
    }

    /// Coefficients of `t -> K(x, t)` as a polynomial in `t` for a fixed
    /// abscissa; `x` may fall between grid nodes.
    pub fn t_poly_at(&self, x: f64) -> Result<Vec<Complex64>> {
        Ok(self.t_poly_from(&self.family_values_at(x)?))
    }

    /// Same, exactly at grid node `i`.
    pub fn t_poly_at_node(&self, i: usize) -> Vec<Complex64> {
        self.t_poly_from(&self.family_values_at_node(i))
    }

    /// The full node-by-coefficient matrix, row per grid node.
    pub fn node_poly_matrix(&self) -> Vec<Vec<Complex64>> {
        (0..self.basis.grid().len())
            .map(|i| self.t_poly_at_node(i))
            .collect()
    }

    pub fn eval(&self, x: f64, t: f64) -> Result<Complex64> {
        Ok(horner(&self.t_poly_at(x)?, Complex64::new(t, 0.0)))
    }
}

pub(crate) fn horner(coeffs: &[Complex64], t: Complex64) -> Complex64 {
    let mut acc = Complex64::ZERO;
    for &c in coeffs.iter().rev() {
        acc = acc * t + c;
    }
    acc
}

/// Even/odd split evaluation: `C(x,t) = K(x,t) + K(x,-t)` keeps the even
/// powers doubled, `S(x,t) = K(x,t) - K(x,-t)` the odd ones.
pub(crate) fn horner_parity(coeffs: &[Complex64], t: Complex64, even: bool) -> Complex64 {
    let start = if even { 0usize } else { 1 };
    if coeffs.len() <= start {
        return Complex64::ZERO;
    }
    let t2 = t * t;
    let mut acc = Complex64::ZERO;
    let mut k = start + (coeffs.len() - 1 - start) / 2 * 2;
    loop {
        acc = acc * t2 + 2.0 * coeffs[k];
        if k < 2 {
            break;
        }
        k -= 2;
    }
    if even {
        acc
    } else {
        acc * t
    }
}

/// Options for the Goursat-data fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Rounds of Lawson-style residual reweighting toward the uniform norm;
    /// zero keeps the plain least-squares solution.
    pub reweight_rounds: usize,
    /// Relative rank threshold below which the order is reduced.
    pub rank_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            reweight_rounds: 0,
            rank_threshold: 1e-13,
        }
    }
}

/// The fitted kernel approximation.
#[derive(Debug, Clone)]
pub struct KernelApproximation {
    poly: WavePolySum,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    eps1: f64,
    eps2: f64,
    mode: SegmentMode,
    h: Complex64,
    bound_constant: f64,
    condition_c: f64,
    condition_s: f64,
    reduced_from: Option<usize>,
}

struct LsqOutcome {
    coeffs: Vec<Complex64>,
    condition: f64,
}

/// Scaled-column QR least squares with optional Lawson reweighting. Returns
/// the coefficients and a condition estimate from the triangular factor, or
/// `None` on rank deficiency at the requested threshold.
fn solve_lsq(
    columns: &[&GridFunction],
    target: &GridFunction,
    opts: &FitOptions,
) -> Result<Option<LsqOutcome>> {
    let rows = target.grid().len();
    let cols = columns.len();
    let scales: Vec<f64> = columns
        .iter()
        .map(|c| {
            let n = c.max_norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let a = DMatrix::<Complex64>::from_fn(rows, cols, |i, j| columns[j].value(i) / scales[j]);
    let y = DVector::<Complex64>::from_fn(rows, |i, _| target.value(i));

    let mut weights = vec![1.0f64; rows];
    let mut result: Option<LsqOutcome> = None;
    for round in 0..=opts.reweight_rounds {
        let (aw, yw) = if round == 0 {
            (a.clone(), y.clone())
        } else {
            let mut aw = a.clone();
            let mut yw = y.clone();
            for i in 0..rows {
                let w = Complex64::new(weights[i], 0.0);
                for j in 0..cols {
                    aw[(i, j)] *= w;
                }
                yw[i] *= w;
            }
            (aw, yw)
        };
        let qr = aw.qr();
        let r = qr.r();
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for j in 0..cols {
            let d = r[(j, j)].norm();
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        if dmin <= opts.rank_threshold * dmax {
            return Ok(None);
        }
        let qty = qr.q().adjoint() * &yw;
        let solved = r
            .solve_upper_triangular(&qty)
            .ok_or(Error::IllConditioned {
                condition: dmax / dmin,
            })?;
        let coeffs: Vec<Complex64> = (0..cols).map(|j| solved[j] / scales[j]).collect();

        if round < opts.reweight_rounds {
            // Lawson update: bias the weights toward the current residual
            let mut rmax = 0.0f64;
            let mut resid = vec![0.0f64; rows];
            for i in 0..rows {
                let mut v = target.value(i);
                for (j, col) in columns.iter().enumerate() {
                    v -= coeffs[j] * col.value(i);
                }
                resid[i] = v.norm();
                rmax = rmax.max(resid[i]);
            }
            if rmax > 0.0 {
                for i in 0..rows {
                    weights[i] *= (resid[i] / rmax).sqrt().max(1e-6);
                }
                let wmax = weights.iter().cloned().fold(0.0, f64::max);
                for w in &mut weights {
                    *w /= wmax;
                }
            }
        }
        result = Some(LsqOutcome {
            coeffs,
            condition: dmax / dmin,
        });
    }
    Ok(result)
}

fn max_residual(
    columns: &[&GridFunction],
    coeffs: &[Complex64],
    target: &GridFunction,
) -> f64 {
    let rows = target.grid().len();
    let mut max = 0.0f64;
    for i in 0..rows {
        let mut v = target.value(i);
        for (j, col) in columns.iter().enumerate() {
            v -= coeffs[j] * col.value(i);
        }
        max = max.max(v.norm());
    }
    max
}

/// Solve the two approximation problems on the traces: `a_0..a_N` against
/// the columns `c_n` for the target `h/2 + Q/4`, and `b_1..b_N` against
/// `s_n` for `Q/4`. Residuals are recorded in the max norm over the fit
/// nodes. On rank deficiency the order is reduced and the reduction noted.
pub fn fit_goursat_data(
    basis: &Arc<WaveBasis>,
    potential: &Potential,
    h: Complex64,
    order: usize,
    opts: &FitOptions,
) -> Result<KernelApproximation> {
    if basis.family() != WaveFamily::Phi {
        return Err(Error::Domain(
            "the kernel fit needs a phi-family wave basis".into(),
        ));
    }
    crate::grid::Grid::same_grid(basis.grid(), potential.grid())?;
    if basis.order() < order {
        return Err(Error::Domain(format!(
            "basis order {} below requested fit order {order}",
            basis.order()
        )));
    }
    let big_q = potential.cumulative()?;
    let g1 = big_q.map(|v| 0.5 * h + 0.25 * v);
    let g2 = big_q.scale(Complex64::new(0.25, 0.0));

    let mut n = order;
    loop {
        let c_cols: Vec<&GridFunction> = (0..=n).map(|k| basis.c(k)).collect();
        let s_cols: Vec<&GridFunction> = (1..=n).map(|k| basis.s(k)).collect();
        let sol_c = solve_lsq(&c_cols, &g1, opts)?;
        let sol_s = if n >= 1 {
            solve_lsq(&s_cols, &g2, opts)?
        } else {
            Some(LsqOutcome {
                coeffs: vec![],
                condition: 1.0,
            })
        };
        match (sol_c, sol_s) {
            (Some(c), Some(s)) => {
                let eps1 = max_residual(&c_cols, &c.coeffs, &g1);
                let eps2 = if n >= 1 {
                    max_residual(&s_cols, &s.coeffs, &g2)
                } else {
                    g2.max_norm()
                };
                let a = c.coeffs;
                let mut b = vec![Complex64::ZERO; n + 1];
                b[1..].copy_from_slice(&s.coeffs);
                let bound_constant =
                    3.0 * bessel_i0(potential.half_width() * potential.max_abs_q().sqrt());
                let poly = WavePolySum::new(basis.clone(), a.clone(), b.clone())?;
                return Ok(KernelApproximation {
                    poly,
                    a,
                    b,
                    eps1,
                    eps2,
                    mode: potential.mode(),
                    h,
                    bound_constant,
                    condition_c: c.condition,
                    condition_s: s.condition,
                    reduced_from: (n != order).then_some(order),
                });
            }
            _ => {
                if n == 0 {
                    return Err(Error::IllConditioned {
                        condition: f64::INFINITY,
                    });
                }
                n -= 1;
            }
        }
    }
}

/// Even/odd extension used when transmuting half-segment data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    Even,
    Odd,
}

impl KernelApproximation {
    #[inline]
    pub fn order(&self) -> usize {
        self.poly.order()
    }

    /// Coefficients `a_0..a_N`.
    #[inline]
    pub fn a(&self) -> &[Complex64] {
        &self.a
    }

    /// Coefficients `b_1..b_N` (the leading slot is a structural zero).
    #[inline]
    pub fn b(&self) -> &[Complex64] {
        &self.b
    }

    #[inline]
    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    #[inline]
    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    #[inline]
    pub fn mode(&self) -> SegmentMode {
        self.mode
    }

    #[inline]
    pub fn h(&self) -> Complex64 {
        self.h
    }

    /// `3 I_0(b sqrt(max |q|))`: the half-segment uniform-error constant;
    /// multiplied by `eps1 + eps2` it bounds `|K - K_N|`.
    #[inline]
    pub fn bound_constant(&self) -> f64 {
        self.bound_constant
    }

    /// A-priori uniform error bound `3 I_0(b sqrt(M)) (eps1 + eps2)`.
    pub fn error_bound(&self) -> f64 {
        self.bound_constant * (self.eps1 + self.eps2)
    }

    pub fn condition_estimates(&self) -> (f64, f64) {
        (self.condition_c, self.condition_s)
    }

    pub fn reduced_from(&self) -> Option<usize> {
        self.reduced_from
    }

    #[inline]
    pub fn basis(&self) -> &Arc<WaveBasis> {
        self.poly.basis()
    }

    #[inline]
    pub fn poly(&self) -> &WavePolySum {
        &self.poly
    }

    /// `K_N(x, t)`.
    pub fn eval(&self, x: f64, t: f64) -> Result<Complex64> {
        self.poly.eval(x, t)
    }

    /// Transmutation `u(x) = v(x) + ∫_{-x}^x K_N(x,t) v(t) dt` on the
    /// symmetric segment.
    pub fn transmute(&self, v: &GridFunction) -> Result<GridFunction> {
        if self.mode != SegmentMode::Full {
            return Err(Error::Domain(
                "the symmetric-segment transmutation needs a full-mode kernel; \
                 use transmute_even/transmute_odd on the half segment"
                    .into(),
            ));
        }
        let grid = self.poly.basis().grid().clone();
        crate::grid::Grid::same_grid(&grid, v.grid())?;
        let origin = grid.origin_index()?;
        let h = grid.step();
        let mut out = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let coeffs = self.poly.t_poly_at_node(i);
            let mirror = 2 * origin - i;
            let (lo, hi) = (i.min(mirror), i.max(mirror));
            let samples: Vec<Complex64> = (lo..=hi)
                .map(|j| {
                    horner(&coeffs, Complex64::new(grid.node(j), 0.0)) * v.value(j)
                })
                .collect();
            let mut integral = simpson_slice(&samples, h);
            if i < origin {
                integral = -integral;
            }
            out.push(v.value(i) + integral);
        }
        GridFunction::new(grid, out)
    }

    fn transmute_parity(&self, v: &GridFunction, even: bool) -> Result<GridFunction> {
        let grid = self.poly.basis().grid().clone();
        crate::grid::Grid::same_grid(&grid, v.grid())?;
        let origin = grid.origin_index()?;
        let h = grid.step();
        let mut out = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let coeffs = self.poly.t_poly_at_node(i);
            let (lo, hi) = (i.min(origin), i.max(origin));
            let samples: Vec<Complex64> = (lo..=hi)
                .map(|j| {
                    horner_parity(&coeffs, Complex64::new(grid.node(j), 0.0), even) * v.value(j)
                })
                .collect();
            let mut integral = simpson_slice(&samples, h);
            if i < origin {
                integral = -integral;
            }
            out.push(v.value(i) + integral);
        }
        GridFunction::new(grid, out)
    }

    /// `T_c`: the transmutation acting on evenly extended data,
    /// `u(x) = v(x) + ∫_0^x (K_N(x,t) + K_N(x,-t)) v(t) dt`.
    pub fn transmute_even(&self, v: &GridFunction) -> Result<GridFunction> {
        self.transmute_parity(v, true)
    }

    /// `T_s`: the odd-extension companion with kernel
    /// `K_N(x,t) - K_N(x,-t)`.
    pub fn transmute_odd(&self, v: &GridFunction) -> Result<GridFunction> {
        self.transmute_parity(v, false)
    }

    /// Transmute a function given the extension of its negative-`t` part.
    pub fn transmute_extended(&self, v: &GridFunction, ext: Extension) -> Result<GridFunction> {
        match ext {
            Extension::Even => self.transmute_even(v),
            Extension::Odd => self.transmute_odd(v),
        }
    }

    /// Inverse transmutation `u(x) - ∫_{-x}^x K_N(t, x) u(t) dt`; the kernel
    /// is read with swapped arguments, which needs the full symmetric grid.
    pub fn inverse_transmute(&self, u: &GridFunction) -> Result<GridFunction> {
        if self.mode != SegmentMode::Full {
            return Err(Error::Domain(
                "the inverse transmutation needs full-square kernel evaluation \
                 (full mode)"
                    .into(),
            ));
        }
        let grid = self.poly.basis().grid().clone();
        crate::grid::Grid::same_grid(&grid, u.grid())?;
        let origin = grid.origin_index()?;
        let h = grid.step();
        let polys = self.poly.node_poly_matrix();
        let mut out = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let x = Complex64::new(grid.node(i), 0.0);
            let mirror = 2 * origin - i;
            let (lo, hi) = (i.min(mirror), i.max(mirror));
            let samples: Vec<Complex64> = (lo..=hi)
                .map(|j| horner(&polys[j], x) * u.value(j))
                .collect();
            let mut integral = simpson_slice(&samples, h);
            if i < origin {
                integral = -integral;
            }
            out.push(u.value(i) - integral);
        }
        GridFunction::new(grid, out)
    }

    /// Serialize the coefficient set (schema: `{N, h, mode, a, b, eps1,
    /// eps2}` with complex numbers as `[re, im]` pairs).
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        let cpx = |v: &Complex64| json!([v.re, v.im]);
        json!({
            "N": self.order(),
            "h": cpx(&self.h),
            "mode": self.mode.as_str(),
            "a": self.a.iter().map(cpx).collect::<Vec<_>>(),
            "b": self.b[1..].iter().map(cpx).collect::<Vec<_>>(),
            "eps1": self.eps1,
            "eps2": self.eps2,
        })
    }

    /// Rebuild a kernel from serialized coefficients and a compatible basis.
    pub fn from_json(value: &serde_json::Value, basis: &Arc<WaveBasis>) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("kernel JSON: {msg}"));
        let order = value["N"].as_u64().ok_or_else(|| bad("missing N"))? as usize;
        let cpx = |v: &serde_json::Value| -> Result<Complex64> {
            let re = v[0].as_f64().ok_or_else(|| bad("bad complex value"))?;
            let im = v[1].as_f64().ok_or_else(|| bad("bad complex value"))?;
            Ok(Complex64::new(re, im))
        };
        let h = cpx(&value["h"])?;
        let mode: SegmentMode = value["mode"]
            .as_str()
            .ok_or_else(|| bad("missing mode"))?
            .parse()?;
        let a_json = value["a"].as_array().ok_or_else(|| bad("missing a"))?;
        let b_json = value["b"].as_array().ok_or_else(|| bad("missing b"))?;
        if a_json.len() != order + 1 || b_json.len() != order {
            return Err(bad("coefficient counts do not match N"));
        }
        let a: Vec<Complex64> = a_json.iter().map(cpx).collect::<Result<_>>()?;
        let mut b = vec![Complex64::ZERO; order + 1];
        for (k, v) in b_json.iter().enumerate() {
            b[k + 1] = cpx(v)?;
        }
        let eps1 = value["eps1"].as_f64().ok_or_else(|| bad("missing eps1"))?;
        let eps2 = value["eps2"].as_f64().ok_or_else(|| bad("missing eps2"))?;
        let poly = WavePolySum::new(basis.clone(), a.clone(), b.clone())?;
        Ok(KernelApproximation {
            poly,
            a,
            b,
            eps1,
            eps2,
            mode,
            h,
            bound_constant: f64::NAN,
            condition_c: f64::NAN,
            condition_s: f64::NAN,
            reduced_from: None,
        })
    }
}

impl KernelEvaluator for KernelApproximation {
    fn kernel_value(&self, x: f64, t: f64) -> Result<Complex64> {
        self.eval(x, t)
    }
}

/// The approximate kernel of the transmutation for the Darboux-associated
/// potential `q_D = 2 (f'/f)^2 - q`, assembled from the same fit
/// coefficients with the families swapped and negated (`b_0 := a_0`).
#[derive(Debug, Clone)]
pub struct DarbouxKernelApproximation {
    poly: WavePolySum,
    q_d: GridFunction,
    error_bound: f64,
    h_d: Complex64,
}

pub fn build_darboux_kernel(
    kernel: &KernelApproximation,
    psi_basis: &Arc<WaveBasis>,
    potential: &Potential,
    f: &ParticularSolution,
) -> Result<DarbouxKernelApproximation> {
    if psi_basis.family() != WaveFamily::Psi {
        return Err(Error::Domain(
            "the Darboux kernel needs a psi-family wave basis".into(),
        ));
    }
    crate::grid::Grid::same_grid(psi_basis.grid(), potential.grid())?;
    let n = kernel.order();
    if psi_basis.order() < n {
        return Err(Error::Domain(format!(
            "psi basis order {} below kernel order {n}",
            psi_basis.order()
        )));
    }
    // K_{D,N} = -b_0 v_0 - sum b_n v_{2n-1} - sum a_n v_{2n}, b_0 := a_0
    let mut even = vec![Complex64::ZERO; n + 1];
    let mut odd = vec![Complex64::ZERO; n + 1];
    even[0] = -kernel.a()[0];
    for k in 1..=n {
        even[k] = -kernel.b()[k];
        odd[k] = -kernel.a()[k];
    }
    let poly = WavePolySum::new(psi_basis.clone(), even, odd)?;
    let q_d = f.darboux_potential(potential.q())?;

    let b = potential.half_width();
    let m_d = q_d.max_norm();
    let m1 = f.one_over_f().max_norm();
    let m2 = f.f_prime().max_norm();
    let c = 3.0 * bessel_i0(b * m_d.sqrt());
    let (e1, e2) = (kernel.eps1(), kernel.eps2());
    let error_bound = c * (e1 * m1 + (e1 + e2) * (2.0 * m1 * m2 * b + m1 + 1.0));

    Ok(DarbouxKernelApproximation {
        poly,
        q_d,
        error_bound,
        h_d: -kernel.h(),
    })
}

impl DarbouxKernelApproximation {
    #[inline]
    pub fn order(&self) -> usize {
        self.poly.order()
    }

    #[inline]
    pub fn poly(&self) -> &WavePolySum {
        &self.poly
    }

    /// The Darboux-associated potential.
    #[inline]
    pub fn q_d(&self) -> &GridFunction {
        &self.q_d
    }

    /// Uniform bound on `|K_D - K_{D,N}|` implied by the fit residuals.
    #[inline]
    pub fn error_bound(&self) -> f64 {
        self.error_bound
    }

    /// `h` of the Darboux operator: `(1/f)'(0) = -h`.
    #[inline]
    pub fn h_d(&self) -> Complex64 {
        self.h_d
    }

    pub fn eval(&self, x: f64, t: f64) -> Result<Complex64> {
        self.poly.eval(x, t)
    }
}

impl KernelEvaluator for DarbouxKernelApproximation {
    fn kernel_value(&self, x: f64, t: f64) -> Result<Complex64> {
        self.eval(x, t)
    }
}

/// Maximum deviations of the kernel's characteristic-line derivatives from
/// their closed forms; small values certify the fit a posteriori.
#[derive(Debug, Clone)]
pub struct DiagonalDiagnostics {
    /// `max |∂_1 K_N(x,x) - (q + h Q + Q²/2)/4|`
    pub dev_k1_diag: f64,
    /// `max |∂_2 K_N(x,x) - (q - h Q - Q²/2)/4|`
    pub dev_k2_diag: f64,
    /// `max` deviation of both partials from `q(0)/4 + h Q/4` on `t = -x`
    pub dev_antidiag: f64,
    /// `max |∂_1 K_N - ∂_2 K_N|` on `t = -x` (identically zero for the
    /// exact kernel)
    pub antidiag_skew: f64,
    /// `max |K_N(x,x) - (h/2 + Q/2)|`, the Goursat-data residual itself
    pub dev_diag_value: f64,
}

impl DiagonalDiagnostics {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "dev_k1_diag": self.dev_k1_diag,
            "dev_k2_diag": self.dev_k2_diag,
            "dev_antidiag": self.dev_antidiag,
            "antidiag_skew": self.antidiag_skew,
            "dev_diag_value": self.dev_diag_value,
        })
    }
}

/// Evaluate the diagonal identities for a fitted kernel: `∂_2` is computed
/// exactly from the `t`-polynomial, `∂_1` through the grid derivative of the
/// diagonal traces.
pub fn diagonal_diagnostics(
    kernel: &KernelApproximation,
    potential: &Potential,
    h: Complex64,
) -> Result<DiagonalDiagnostics> {
    let grid = potential.grid().clone();
    let q = potential.q();
    let big_q = potential.cumulative()?;
    let n = grid.len();

    let mut diag = Vec::with_capacity(n);
    let mut anti = Vec::with_capacity(n);
    let mut k2_diag = Vec::with_capacity(n);
    let mut k2_anti = Vec::with_capacity(n);
    for i in 0..n {
        let coeffs = kernel.poly.t_poly_at_node(i);
        let x = Complex64::new(grid.node(i), 0.0);
        diag.push(horner(&coeffs, x));
        anti.push(horner(&coeffs, -x));
        let deriv: Vec<Complex64> = coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * k as f64)
            .collect();
        k2_diag.push(horner(&deriv, x));
        k2_anti.push(horner(&deriv, -x));
    }
    let diag = GridFunction::new(grid.clone(), diag)?;
    let anti = GridFunction::new(grid.clone(), anti)?;
    let ddiag = diag.differentiate()?;
    let danti = anti.differentiate()?;

    let mut dev_k1_diag = 0.0f64;
    let mut dev_k2_diag = 0.0f64;
    let mut dev_antidiag = 0.0f64;
    let mut antidiag_skew = 0.0f64;
    let mut dev_diag_value = 0.0f64;
    let q0 = q.eval_at(0.0)?;
    for i in 0..n {
        let qq = q.value(i);
        let qc = big_q.value(i);
        // d/dx K(x,x) = K1 + K2, d/dx K(x,-x) = K1 - K2
        let k1_d = ddiag.value(i) - k2_diag[i];
        let k1_a = danti.value(i) + k2_anti[i];
        let target1 = 0.25 * (qq + h * qc + 0.5 * qc * qc);
        let target2 = 0.25 * (qq - h * qc - 0.5 * qc * qc);
        let target_a = 0.25 * q0 + 0.25 * h * qc;
        dev_k1_diag = dev_k1_diag.max((k1_d - target1).norm());
        dev_k2_diag = dev_k2_diag.max((k2_diag[i] - target2).norm());
        dev_antidiag = dev_antidiag
            .max((k1_a - target_a).norm())
            .max((k2_anti[i] - target_a).norm());
        antidiag_skew = antidiag_skew.max(danti.value(i).norm());
        dev_diag_value = dev_diag_value.max((diag.value(i) - (0.5 * h + 0.5 * qc)).norm());
    }
    Ok(DiagonalDiagnostics {
        dev_k1_diag,
        dev_k2_diag,
        dev_antidiag,
        antidiag_skew,
        dev_diag_value,
    })
}

/// Composite Simpson over `[lo, hi]` of a pointwise-evaluable integrand,
/// honoring orientation.
fn simpson_closed(
    f: &dyn Fn(f64) -> Result<Complex64>,
    lo: f64,
    hi: f64,
    samples: usize,
) -> Result<Complex64> {
    if lo == hi {
        return Ok(Complex64::ZERO);
    }
    let n = samples.max(5) | 1; // odd count
    let h = (hi - lo) / (n - 1) as f64;
    let values: Vec<Complex64> = (0..n)
        .map(|i| f(lo + i as f64 * h))
        .collect::<Result<_>>()?;
    Ok(simpson_slice(&values, h.abs()) * Complex64::new(h.signum(), 0.0))
}

/// The preimage traces `(k(x,x), k(x,-x))` of the kernel under the inverse
/// transmutation, computed by quadrature of the closed-form representation:
/// `k(x,x) = h/2 + Q(x)/2 - ∫_{-x}^x K²(t,x) dt` and
/// `k(x,-x) = h/2 - ∫_{-x}^x K(t,x) K(t,-x) dt`.
/// Needs full-square kernel evaluation.
pub fn preimage_diagnostics(
    kernel: &dyn KernelEvaluator,
    potential: &Potential,
    h: Complex64,
    x: f64,
) -> Result<(Complex64, Complex64)> {
    let big_q = potential.cumulative()?;
    let qx = big_q.eval_at(x)?;
    let samples = 257;
    let sq = simpson_closed(
        &|t| {
            let k = kernel.kernel_value(t, x)?;
            Ok(k * k)
        },
        -x,
        x,
        samples,
    )?;
    let cross = simpson_closed(
        &|t| Ok(kernel.kernel_value(t, x)? * kernel.kernel_value(t, -x)?),
        -x,
        x,
        samples,
    )?;
    Ok((0.5 * h + 0.5 * qx - sq, 0.5 * h - cross))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formal_powers::PhiPsiTable;
    use crate::oracle::KernelOracle;
    use crate::potential::build_particular_solution;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn setup(
        q: &str,
        b: f64,
        mode: SegmentMode,
        h: Complex64,
        order: usize,
        nodes: usize,
    ) -> (Potential, ParticularSolution, Arc<WaveBasis>) {
        let p = Potential::parse(q, b, mode, nodes).unwrap();
        let f = build_particular_solution(&p, Some(h)).unwrap();
        let table = PhiPsiTable::build(&f, 2 * order + 1).unwrap();
        let basis = Arc::new(WaveBasis::build(&table, order, WaveFamily::Phi).unwrap());
        (p, f, basis)
    }

    #[test]
    fn bessel_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) and I0(2) to published precision
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-13);
        assert!((bessel_i0(2.0) - 2.2795853023360673).abs() < 1e-13);
    }

    #[test]
    fn zero_potential_zero_h_is_trivial() {
        let (p, _, basis) = setup("0", 1.0, SegmentMode::Half, c(0.0), 4, 801);
        let k = fit_goursat_data(&basis, &p, c(0.0), 4, &FitOptions::default()).unwrap();
        assert_eq!(k.eps1(), 0.0);
        assert_eq!(k.eps2(), 0.0);
        for v in k.a() {
            assert!(v.norm() <= 1e-14);
        }
        for v in k.b() {
            assert!(v.norm() <= 1e-14);
        }
        assert!(k.eval(0.7, 0.3).unwrap().norm() <= 1e-13);
    }

    #[test]
    fn zero_potential_nonzero_h_recovers_closed_form() {
        // f = 1 + h x, g1 = h/2 = (h/2) c_0 - (h²/2) c_1 identically
        let h = c(1.0);
        let (p, _, basis) = setup("0", 1.0, SegmentMode::Half, h, 3, 801);
        let k = fit_goursat_data(&basis, &p, h, 3, &FitOptions::default()).unwrap();
        assert!((k.a()[0] - c(0.5)).norm() <= 1e-10);
        assert!((k.a()[1] + c(0.5)).norm() <= 1e-10);
        for v in &k.a()[2..] {
            assert!(v.norm() <= 1e-10);
        }
        for v in &k.b()[1..] {
            assert!(v.norm() <= 1e-10);
        }
        assert!(k.eps1() <= 1e-10 && k.eps2() <= 1e-10);
        // K_N is identically h/2 on the square
        for &(x, t) in &[(0.9, 0.4), (0.5, -0.5), (0.2, 0.1), (1.0, -0.9)] {
            assert!((k.eval(x, t).unwrap() - 0.5 * h).norm() <= 1e-10);
        }
    }

    #[test]
    fn residuals_decrease_with_order() {
        let (p, _, basis) = setup("1", 1.0, SegmentMode::Half, c(0.0), 8, 801);
        let mut prev = f64::INFINITY;
        for n in 1..=8 {
            let k = fit_goursat_data(&basis, &p, c(0.0), n, &FitOptions::default()).unwrap();
            let eps = k.eps1().max(k.eps2());
            assert!(eps < prev, "order {n}: {eps:.3e} !< {prev:.3e}");
            prev = eps;
        }
    }

    #[test]
    fn diagonal_traces_match_goursat_data() {
        let (p, _, basis) = setup("sin(x)", 1.0, SegmentMode::Half, c(0.25), 10, 1001);
        let k = fit_goursat_data(&basis, &p, c(0.25), 10, &FitOptions::default()).unwrap();
        let big_q = p.cumulative().unwrap();
        let tol = k.eps1() + k.eps2();
        for &i in &[50usize, 300, 700, 1000] {
            let x = p.grid().node(i);
            let diag = k.eval(x, x).unwrap();
            let expect = 0.5 * c(0.25) + 0.5 * big_q.value(i);
            assert!((diag - expect).norm() <= tol * 1.01 + 1e-14);
            let anti = k.eval(x, -x).unwrap();
            assert!((anti - 0.5 * c(0.25)).norm() <= tol * 1.01 + 1e-14);
        }
    }

    #[test]
    fn transmute_maps_one_to_f_and_powers_to_phi() {
        let (p, f, basis) = setup("exp(x)", 1.0, SegmentMode::Half, c(0.0), 10, 1001);
        let k = fit_goursat_data(&basis, &p, c(0.0), 10, &FitOptions::default()).unwrap();
        let bound = k.error_bound().max(1e-12);
        let grid = p.grid();

        let one = GridFunction::one(grid);
        let tf_one = k.transmute_even(&one).unwrap();
        assert!(tf_one.max_diff(f.f()).unwrap() <= bound * 2.0);

        let table = basis.table();
        for deg in 1..=5usize {
            let v = GridFunction::from_real_fn(grid, |x| x.powi(deg as i32)).unwrap();
            let tf = if deg % 2 == 0 {
                k.transmute_even(&v).unwrap()
            } else {
                k.transmute_odd(&v).unwrap()
            };
            // the quadrature itself carries the kernel error across [0, x]
            assert!(
                tf.max_diff(table.phi(deg)).unwrap() <= bound * 2.0 + 1e-10,
                "degree {deg}"
            );
        }
    }

    #[test]
    fn full_mode_transmute_and_inverse_roundtrip() {
        let (p, f, basis) = setup("sin(x)", 1.0, SegmentMode::Full, c(0.0), 10, 1201);
        let k = fit_goursat_data(&basis, &p, c(0.0), 10, &FitOptions::default()).unwrap();
        let grid = p.grid();
        let bound = k.error_bound().max(1e-12);

        let one = GridFunction::one(grid);
        let tf_one = k.transmute(&one).unwrap();
        assert!(tf_one.max_diff(f.f()).unwrap() <= 2.0 * bound);

        for deg in [2usize, 3] {
            let v = GridFunction::from_real_fn(grid, |x| x.powi(deg as i32)).unwrap();
            let round = k.inverse_transmute(&k.transmute(&v).unwrap()).unwrap();
            let err = round.max_diff(&v).unwrap();
            assert!(err <= 4.0 * bound * (1.0 + v.max_norm()) + 1e-9, "deg {deg}: {err:.3e}");
        }

        // inverse maps phi_k back to monomials
        let table = basis.table();
        for deg in 0..=4usize {
            let back = k.inverse_transmute(table.phi(deg)).unwrap();
            let mono = GridFunction::from_real_fn(grid, |x| x.powi(deg as i32)).unwrap();
            assert!(back.max_diff(&mono).unwrap() <= 4.0 * bound + 1e-9, "deg {deg}");
        }
    }

    #[test]
    fn half_mode_rejects_symmetric_only_operations() {
        let (p, _, basis) = setup("0", 1.0, SegmentMode::Half, c(0.0), 2, 801);
        let k = fit_goursat_data(&basis, &p, c(0.0), 2, &FitOptions::default()).unwrap();
        let v = GridFunction::one(p.grid());
        assert!(k.transmute(&v).is_err());
        assert!(k.inverse_transmute(&v).is_err());
    }

    #[test]
    fn darboux_kernel_trivial_and_potential() {
        // q = 0, h = 0: K_D vanishes identically
        let (p, f, basis) = setup("0", 1.0, SegmentMode::Half, c(0.0), 3, 801);
        let k = fit_goursat_data(&basis, &p, c(0.0), 3, &FitOptions::default()).unwrap();
        let psi_basis =
            Arc::new(WaveBasis::build(basis.table(), 3, WaveFamily::Psi).unwrap());
        let kd = build_darboux_kernel(&k, &psi_basis, &p, &f).unwrap();
        assert!(kd.eval(0.6, 0.4).unwrap().norm() <= 1e-13);

        // q = 0, h = 1: q_D = 2 h² / (1 + h x)²
        let h = c(1.0);
        let (p, f, basis) = setup("0", 1.0, SegmentMode::Half, h, 3, 801);
        let k = fit_goursat_data(&basis, &p, h, 3, &FitOptions::default()).unwrap();
        let psi_basis =
            Arc::new(WaveBasis::build(basis.table(), 3, WaveFamily::Psi).unwrap());
        let kd = build_darboux_kernel(&k, &psi_basis, &p, &f).unwrap();
        for (i, x) in p.grid().nodes().enumerate() {
            let expect = 2.0 / (1.0 + x) / (1.0 + x);
            assert!((kd.q_d().value(i) - c(expect)).norm() <= 1e-9);
        }
    }

    #[test]
    fn darboux_diagonal_identity() {
        let h = c(0.3);
        let (p, f, basis) = setup("exp(x)", 1.0, SegmentMode::Half, h, 10, 1001);
        let k = fit_goursat_data(&basis, &p, h, 10, &FitOptions::default()).unwrap();
        let psi_basis =
            Arc::new(WaveBasis::build(basis.table(), 10, WaveFamily::Psi).unwrap());
        let kd = build_darboux_kernel(&k, &psi_basis, &p, &f).unwrap();
        // K_{D,N}(x,x) ≈ -h/2 + (1/2) ∫_0^x q_D
        let qd_cum = kd.q_d().cumulative_integral(0.0).unwrap();
        for &i in &[100usize, 500, 900] {
            let x = p.grid().node(i);
            let lhs = kd.eval(x, x).unwrap();
            let rhs = -0.5 * h + 0.5 * qd_cum.value(i);
            assert!(
                (lhs - rhs).norm() <= kd.error_bound().max(1e-10) * 1.01,
                "x={x}: {:.3e} vs bound {:.3e}",
                (lhs - rhs).norm(),
                kd.error_bound()
            );
        }
    }

    #[test]
    fn diagnostics_trivial_and_constant() {
        let h = c(0.4);
        let (p, _, basis) = setup("0", 1.0, SegmentMode::Half, h, 3, 801);
        let k = fit_goursat_data(&basis, &p, h, 3, &FitOptions::default()).unwrap();
        let d = diagonal_diagnostics(&k, &p, h).unwrap();
        assert!(d.dev_k1_diag <= 1e-9);
        assert!(d.dev_k2_diag <= 1e-9);
        assert!(d.dev_antidiag <= 1e-9);
        assert!(d.antidiag_skew <= 1e-9);
        assert!(d.dev_diag_value <= 1e-12);

        // q ≡ c, h = 0: ∂1 K(x,x) = (c + c² x²/2)/4 within fit-scale error
        let (p, _, basis) = setup("2", 1.0, SegmentMode::Half, c(0.0), 10, 1001);
        let k = fit_goursat_data(&basis, &p, c(0.0), 10, &FitOptions::default()).unwrap();
        let d = diagonal_diagnostics(&k, &p, c(0.0)).unwrap();
        let scale = (k.eps1() + k.eps2()).max(1e-12);
        assert!(d.dev_k1_diag <= 1e4 * scale, "{:.3e} vs {:.3e}", d.dev_k1_diag, scale);
        assert!(d.antidiag_skew <= 1e4 * scale);
    }

    #[test]
    fn kernel_pde_residual() {
        let (p, _, basis) = setup("cos(x)", 1.0, SegmentMode::Half, c(0.5), 8, 1001);
        let k = fit_goursat_data(&basis, &p, c(0.5), 8, &FitOptions::default()).unwrap();
        let h = 1e-3;
        let second = |vals: [Complex64; 5]| {
            (-vals[0] + 16.0 * vals[1] - 30.0 * vals[2] + 16.0 * vals[3] - vals[4])
                / c(12.0 * h * h)
        };
        for &(x, t) in &[(0.5, 0.2), (0.8, -0.5)] {
            let kxx = second([
                k.eval(x - 2.0 * h, t).unwrap(),
                k.eval(x - h, t).unwrap(),
                k.eval(x, t).unwrap(),
                k.eval(x + h, t).unwrap(),
                k.eval(x + 2.0 * h, t).unwrap(),
            ]);
            let ktt = second([
                k.eval(x, t - 2.0 * h).unwrap(),
                k.eval(x, t - h).unwrap(),
                k.eval(x, t).unwrap(),
                k.eval(x, t + h).unwrap(),
                k.eval(x, t + 2.0 * h).unwrap(),
            ]);
            let residual = (kxx - c(x.cos()) * k.eval(x, t).unwrap() - ktt).norm();
            assert!(residual <= 1e-5, "({x},{t}): {residual:.3e}");
        }
    }

    #[test]
    fn error_bound_realized_against_oracle() {
        let (p, _, basis) = setup("sin(x)", 1.0, SegmentMode::Half, c(0.0), 6, 1001);
        let k = fit_goursat_data(&basis, &p, c(0.0), 6, &FitOptions::default()).unwrap();
        let oracle = KernelOracle::build(&p, c(0.0), 513, 1e-13).unwrap();
        let m = oracle.nodes_per_axis();
        let mut sup = 0.0f64;
        for i in (0..m).step_by(4) {
            for j in (0..m).step_by(4) {
                if !oracle.in_exact_triangle(i, j) {
                    continue;
                }
                let (x, t, kv) = oracle.k_at_indices(i, j);
                let diff = (k.eval(x, t).unwrap() - kv).norm();
                sup = sup.max(diff);
            }
        }
        assert!(
            sup < k.error_bound(),
            "sup {sup:.3e} vs bound {:.3e}",
            k.error_bound()
        );
    }

    #[test]
    fn preimage_traces() {
        // q = 0: K = h/2, k(x,x) = h/2 - h²x/2, and the two orientations
        // of the antidiagonal trace sum to h
        let h = c(0.8);
        let (p, _, basis) = setup("0", 1.0, SegmentMode::Full, h, 3, 801);
        let k = fit_goursat_data(&basis, &p, h, 3, &FitOptions::default()).unwrap();
        let (k00, k00m) = preimage_diagnostics(&k, &p, h, 0.0).unwrap();
        assert!((k00 - 0.5 * h).norm() <= 1e-10);
        assert!((k00m - 0.5 * h).norm() <= 1e-10);
        for &x in &[0.3, 0.7, 1.0] {
            let (kxx, kxmx) = preimage_diagnostics(&k, &p, h, x).unwrap();
            let expect = 0.5 * h - 0.5 * h * h * x;
            assert!((kxx - expect).norm() <= 1e-9, "x={x}");
            let (_, kmx) = preimage_diagnostics(&k, &p, h, -x).unwrap();
            assert!((kxmx + kmx - h).norm() <= 1e-9, "orientation sum at {x}");
        }
    }

    #[test]
    fn preimage_orientation_sum_for_oracle() {
        let p = Potential::parse("cos(x)", 1.0, SegmentMode::Full, 801).unwrap();
        let h = c(0.5);
        let oracle = KernelOracle::build(&p, h, 257, 1e-12).unwrap();
        for &x in &[0.25, 0.6, 0.9] {
            let (_, kxmx) = preimage_diagnostics(&oracle, &p, h, x).unwrap();
            let (_, kmx) = preimage_diagnostics(&oracle, &p, h, -x).unwrap();
            assert!((kxmx + kmx - h).norm() <= 1e-5, "x={x}");
        }
    }

    #[test]
    fn serialization_roundtrip() {
        let (p, _, basis) = setup("exp(x)", 1.0, SegmentMode::Half, c(0.25), 6, 801);
        let k = fit_goursat_data(&basis, &p, c(0.25), 6, &FitOptions::default()).unwrap();
        let json = k.to_json();
        let text = serde_json::to_string(&json).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let k2 = KernelApproximation::from_json(&parsed, &basis).unwrap();
        assert_eq!(k.order(), k2.order());
        for &(x, t) in &[(0.5, 0.25), (0.9, -0.7)] {
            assert!((k.eval(x, t).unwrap() - k2.eval(x, t).unwrap()).norm() <= 1e-15);
        }
    }
}
