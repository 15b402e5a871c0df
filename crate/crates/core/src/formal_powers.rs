//! Recursive-integral families generalizing the monomials `x^n` relative to a
//! particular solution `f`: the system `phi_k`/`psi_k` feeding the SPPS series
//! and the wave-polynomial traces, and the auxiliary powers `Y`/`Y~` tied to
//! the equation `y'' - q y = 2 lambda y'`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::potential::ParticularSolution;

/// The families `phi_0..phi_K` and `psi_0..psi_K` built from nested
/// integrals anchored at `x = 0`, with `phi_0 = f` and `psi_0 = 1/f`.
#[derive(Debug)]
pub struct PhiPsiTable {
    f: ParticularSolution,
    phi: Vec<GridFunction>,
    psi: Vec<GridFunction>,
    x_pows: Vec<GridFunction>,
    x_tilde_pows: Vec<GridFunction>,
}

impl PhiPsiTable {
    /// Build the table up to index `depth` (inclusive).
    pub fn build(f: &ParticularSolution, depth: usize) -> Result<Arc<PhiPsiTable>> {
        let grid = f.grid().clone();
        let origin = grid.origin_index()?;
        let f2 = f.f().mul(f.f())?;
        let inv_f2 = f2.map(|v| v.inv());
        let inv_f = f.one_over_f();

        let one = GridFunction::one(&grid);
        let mut x_pows = vec![one.clone()];
        let mut x_tilde_pows = vec![one];
        for n in 1..=depth {
            let k = Complex64::new(n as f64, 0.0);
            // X^{(n)} integrates against f^2 for even n, 1/f^2 for odd n;
            // the tilde family swaps the parity.
            let weight_x = if n % 2 == 0 { &f2 } else { &inv_f2 };
            let weight_xt = if n % 2 == 0 { &inv_f2 } else { &f2 };
            let next_x = x_pows[n - 1]
                .mul(weight_x)?
                .cumulative_from_node(origin)
                .scale(k);
            let next_xt = x_tilde_pows[n - 1]
                .mul(weight_xt)?
                .cumulative_from_node(origin)
                .scale(k);
            x_pows.push(next_x);
            x_tilde_pows.push(next_xt);
        }

        let mut phi = Vec::with_capacity(depth + 1);
        let mut psi = Vec::with_capacity(depth + 1);
        for k in 0..=depth {
            if k % 2 == 1 {
                phi.push(f.f().mul(&x_pows[k])?);
                psi.push(inv_f.mul(&x_tilde_pows[k])?);
            } else {
                phi.push(f.f().mul(&x_tilde_pows[k])?);
                psi.push(inv_f.mul(&x_pows[k])?);
            }
        }

        Ok(Arc::new(PhiPsiTable {
            f: f.clone(),
            phi,
            psi,
            x_pows,
            x_tilde_pows,
        }))
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.phi.len() - 1
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        self.f.grid()
    }

    #[inline]
    pub fn particular_solution(&self) -> &ParticularSolution {
        &self.f
    }

    #[inline]
    pub fn phi(&self, k: usize) -> &GridFunction {
        &self.phi[k]
    }

    #[inline]
    pub fn psi(&self, k: usize) -> &GridFunction {
        &self.psi[k]
    }

    pub fn recursive_integral(&self, n: usize) -> &GridFunction {
        &self.x_pows[n]
    }

    pub fn recursive_integral_tilde(&self, n: usize) -> &GridFunction {
        &self.x_tilde_pows[n]
    }

    pub fn require_depth(&self, needed: usize) -> Result<()> {
        if self.depth() < needed {
            Err(Error::Domain(format!(
                "table depth {} is insufficient, need {needed}",
                self.depth()
            )))
        } else {
            Ok(())
        }
    }
}

/// The formal powers `Y^{(0)}..Y^{(2N+1)}` and `Y~^{(0)}..Y~^{(2N)}` of the
/// auxiliary pencil equation, built by the alternating recursion in which the
/// derivative step `2 ∫ f (f g)'` is expanded by the product rule; the inner
/// derivative is known exactly from the previous even/odd step, so no grid
/// differentiation enters.
#[derive(Debug)]
pub struct YTable {
    y: Vec<GridFunction>,
    y_tilde: Vec<GridFunction>,
}

impl YTable {
    pub fn build(f: &ParticularSolution, order: usize) -> Result<YTable> {
        let grid = f.grid().clone();
        let origin = grid.origin_index()?;
        let ff = f.f();
        let ffp = ff.mul(f.f_prime())?;
        let inv_f2 = ff.mul(ff)?.map(|v| v.inv());

        let one = GridFunction::one(&grid);
        let mut y: Vec<GridFunction> = vec![one.clone()];
        let mut y_tilde: Vec<GridFunction> = vec![one];

        // derivative step: 2 ∫ f (f g_{n-1})' = 2 ∫ (f f' g_{n-1} + g_{n-2})
        // since g_{n-1}' = g_{n-2} / f^2 from the preceding quadrature step
        let two = Complex64::new(2.0, 0.0);
        for n in 1..=(2 * order + 1) {
            let next_y = if n % 2 == 0 {
                let integrand = ffp.mul(&y[n - 1])?.add(&y[n - 2])?;
                integrand.cumulative_from_node(origin).scale(two)
            } else {
                y[n - 1].mul(&inv_f2)?.cumulative_from_node(origin)
            };
            y.push(next_y);

            if n <= 2 * order {
                let next_yt = if n % 2 == 1 {
                    let mut integrand = ffp.mul(&y_tilde[n - 1])?;
                    if n >= 2 {
                        integrand = integrand.add(&y_tilde[n - 2])?;
                    }
                    integrand.cumulative_from_node(origin).scale(two)
                } else {
                    y_tilde[n - 1].mul(&inv_f2)?.cumulative_from_node(origin)
                };
                y_tilde.push(next_yt);
            }
        }
        Ok(YTable { y, y_tilde })
    }

    /// `Y^{(n)}`, available for `n <= 2N+1`.
    #[inline]
    pub fn y(&self, n: usize) -> &GridFunction {
        &self.y[n]
    }

    /// `Y~^{(n)}`, available for `n <= 2N`.
    #[inline]
    pub fn y_tilde(&self, n: usize) -> &GridFunction {
        &self.y_tilde[n]
    }

    pub fn order(&self) -> usize {
        (self.y.len() - 2) / 2
    }

    /// Sum the two pencil series `y1 = f Σ λ^n Y~^{(2n)}` and
    /// `y2 = f Σ λ^n Y^{(2n+1)}` over the available table depth.
    pub fn pencil_solutions(
        &self,
        f: &ParticularSolution,
        lambda: Complex64,
    ) -> Result<(GridFunction, GridFunction)> {
        let grid = f.grid();
        let mut s1 = GridFunction::zero(grid);
        let mut s2 = GridFunction::zero(grid);
        let mut pow = Complex64::ONE;
        for n in 0..=self.order() {
            s1 = s1.add(&self.y_tilde[2 * n].scale(pow))?;
            s2 = s2.add(&self.y[2 * n + 1].scale(pow))?;
            pow *= lambda;
        }
        Ok((f.f().mul(&s1)?, f.f().mul(&s2)?))
    }
}
