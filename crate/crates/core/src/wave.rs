//! Generalized wave polynomials and their diagonal traces.
//!
//! The polynomials `u_n(x, t)` solve `(∂²_x - q) u = ∂²_t u` exactly; their
//! traces on `t = x` form the systems `c_n`, `s_n` in which the kernel fit is
//! posed. A psi-built basis provides the Darboux companions (`v_n` and the
//! tilde traces).

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::formal_powers::PhiPsiTable;
use crate::grid::{Grid, GridFunction};

/// Which family of formal powers the wave polynomials are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveFamily {
    /// `phi`-based: the polynomials `u_n` for the operator with parameter `f`.
    Phi,
    /// `psi`-based: the polynomials `v_n` of the Darboux-associated operator.
    Psi,
}

/// Binomial coefficient table used by the trace sums; exact in f64 for the
/// orders used here.
fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    acc
}

/// Trace systems `c_0..c_N`, `s_0..s_N` of the generalized wave polynomials,
/// with on-demand evaluation of the 2-D polynomials themselves.
#[derive(Debug)]
pub struct WaveBasis {
    table: Arc<PhiPsiTable>,
    family: WaveFamily,
    order: usize,
    c: Vec<GridFunction>,
    s: Vec<GridFunction>,
}

impl WaveBasis {
    /// Build the traces up to index `order`. Requires table depth >= order.
    pub fn build(table: &Arc<PhiPsiTable>, order: usize, family: WaveFamily) -> Result<WaveBasis> {
        table.require_depth(order)?;
        let grid = table.grid().clone();
        let xs: Vec<f64> = grid.nodes().collect();
        let pick = |k: usize| -> &GridFunction {
            match family {
                WaveFamily::Phi => table.phi(k),
                WaveFamily::Psi => table.psi(k),
            }
        };

        let mut c = Vec::with_capacity(order + 1);
        let mut s = Vec::with_capacity(order + 1);
        c.push(pick(0).clone());
        s.push(GridFunction::zero(&grid));
        for m in 1..=order {
            let mut cm = vec![Complex64::ZERO; grid.len()];
            let mut sm = vec![Complex64::ZERO; grid.len()];
            for k in 0..=m {
                let w = binomial(m, k);
                let fam = pick(m - k);
                let dst = if k % 2 == 0 { &mut cm } else { &mut sm };
                for (i, v) in dst.iter_mut().enumerate() {
                    *v += w * xs[i].powi(k as i32) * fam.value(i);
                }
            }
            c.push(GridFunction::new(grid.clone(), cm)?);
            s.push(GridFunction::new(grid.clone(), sm)?);
        }
        Ok(WaveBasis {
            table: table.clone(),
            family,
            order,
            c,
            s,
        })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn family(&self) -> WaveFamily {
        self.family
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        self.table.grid()
    }

    #[inline]
    pub fn table(&self) -> &Arc<PhiPsiTable> {
        &self.table
    }

    /// Trace `c_n` (or the Darboux `c~_n` for a psi basis).
    #[inline]
    pub fn c(&self, n: usize) -> &GridFunction {
        &self.c[n]
    }

    /// Trace `s_n`; `s_0` is identically zero.
    #[inline]
    pub fn s(&self, n: usize) -> &GridFunction {
        &self.s[n]
    }

    /// Max norms of the trace columns, used for column scaling in the fit.
    pub fn c_norms(&self) -> Vec<f64> {
        self.c.iter().map(|g| g.max_norm()).collect()
    }

    pub fn s_norms(&self) -> Vec<f64> {
        self.s.iter().map(|g| g.max_norm()).collect()
    }

    fn family_value_at(&self, k: usize, x: f64) -> Result<Complex64> {
        match self.family {
            WaveFamily::Phi => self.table.phi(k).eval_at(x),
            WaveFamily::Psi => self.table.psi(k).eval_at(x),
        }
    }

    /// Evaluate the wave polynomial `u_n(x, t)` (or `v_n` for a psi basis).
    ///
    /// `u_0 = phi_0(x)`, `u_{2m-1}` collects even powers of `t`, `u_{2m}` odd
    /// powers; `x` may fall between nodes (local cubic interpolation).
    pub fn eval_wave_poly(&self, n: usize, x: f64, t: f64) -> Result<Complex64> {
        if n > 2 * self.order {
            return Err(Error::Domain(format!(
                "wave polynomial index {n} exceeds 2N = {}",
                2 * self.order
            )));
        }
        if n == 0 {
            return self.family_value_at(0, x);
        }
        let m = n.div_ceil(2);
        let start = if n % 2 == 1 { 0 } else { 1 };
        let mut acc = Complex64::ZERO;
        let mut k = start;
        while k <= m {
            acc += binomial(m, k) * t.powi(k as i32) * self.family_value_at(m - k, x)?;
            k += 2;
        }
        Ok(acc)
    }
}
