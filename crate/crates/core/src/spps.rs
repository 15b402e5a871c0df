//! Spectral parameter power series: solutions of `y'' - q y = lambda y`
//! summed termwise from the `phi_k` table, together with their first
//! derivatives.
//!
//! Sign convention: this module takes `lambda` directly. Problems phrased as
//! `u'' - q u + omega^2 u = 0` map onto it with `lambda = -omega^2`; that
//! translation happens in the spectral solver, nowhere else.

use num_complex::Complex64;

use crate::error::Result;
use crate::grid::GridFunction;
use crate::formal_powers::PhiPsiTable;

/// A truncated SPPS solution pair for one value of `lambda`.
///
/// `y1` has `y1(0) = 1`, `y1'(0) = h`; `y2` has `y2(0) = 0`, `y2'(0) = 1`.
#[derive(Debug, Clone)]
pub struct SppsSolution {
    pub lambda: Complex64,
    pub y1: GridFunction,
    pub y2: GridFunction,
    pub dy1: GridFunction,
    pub dy2: GridFunction,
    /// Number of series terms actually summed (per family).
    pub terms_used: usize,
    /// Max norm of the last added term; the a-posteriori tail indicator.
    pub tail_estimate: f64,
    /// False when the table was exhausted before the tolerance was met.
    pub converged: bool,
}

/// Sum the SPPS series until the newest term of both families falls below
/// `tol` in max norm, or the table depth is exhausted (in which case the
/// result carries `converged = false` and the tail estimate).
pub fn spps_solve(table: &PhiPsiTable, lambda: Complex64, tol: f64) -> Result<SppsSolution> {
    assert!(tol > 0.0, "tolerance must be positive");
    let f = table.particular_solution();
    let grid = table.grid();
    let ratio = f.f_prime().zip_map(f.f(), |d, v| d / v)?;

    let mut y1 = GridFunction::zero(grid);
    let mut y2 = GridFunction::zero(grid);
    let mut dy1 = GridFunction::zero(grid);
    let mut dy2 = GridFunction::zero(grid);

    let mut lambda_pow = Complex64::ONE;
    let mut fact_even = 1.0; // (2k)!
    let mut fact_odd = 1.0; // (2k+1)!
    let mut terms_used = 0;
    let mut tail = f64::INFINITY;
    let mut converged = false;

    let mut k = 0usize;
    loop {
        if 2 * k + 1 > table.depth() {
            break;
        }
        let c_even = lambda_pow / fact_even;
        let c_odd = lambda_pow / fact_odd;

        let t1 = table.phi(2 * k).scale(c_even);
        let t2 = table.phi(2 * k + 1).scale(c_odd);
        y1 = y1.add(&t1)?;
        y2 = y2.add(&t2)?;

        // derivative series: (f'/f) phi_m + m psi_{m-1}
        let d1 = if k == 0 {
            f.f_prime().clone()
        } else {
            ratio
                .mul(table.phi(2 * k))?
                .add(&table.psi(2 * k - 1).scale(Complex64::new(2.0 * k as f64, 0.0)))?
                .scale(c_even)
        };
        let d2 = ratio
            .mul(table.phi(2 * k + 1))?
            .add(&table.psi(2 * k).scale(Complex64::new((2 * k + 1) as f64, 0.0)))?
            .scale(c_odd);
        dy1 = dy1.add(&d1)?;
        dy2 = dy2.add(&d2)?;

        terms_used = k + 1;
        tail = t1.max_norm().max(t2.max_norm());
        if tail < tol {
            converged = true;
            break;
        }

        k += 1;
        lambda_pow *= lambda;
        fact_even *= (2 * k - 1) as f64 * (2 * k) as f64;
        fact_odd *= (2 * k) as f64 * (2 * k + 1) as f64;
    }

    Ok(SppsSolution {
        lambda,
        y1,
        y2,
        dy1,
        dy2,
        terms_used,
        tail_estimate: tail,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formal_powers::PhiPsiTable;
    use crate::potential::{build_particular_solution, Potential, SegmentMode};

    #[test]
    fn free_equation_gives_hyperbolics() {
        let p = Potential::parse("0", 1.0, SegmentMode::Half, 1001).unwrap();
        let f = build_particular_solution(&p, Some(Complex64::ZERO)).unwrap();
        let table = PhiPsiTable::build(&f, 25).unwrap();
        let tol = 1e-12;
        let sol = spps_solve(&table, Complex64::ONE, tol).unwrap();
        assert!(sol.converged);
        for (i, x) in table.grid().nodes().enumerate() {
            assert!((sol.y1.value(i) - Complex64::new(x.cosh(), 0.0)).norm() <= tol * 10.0);
            assert!((sol.y2.value(i) - Complex64::new(x.sinh(), 0.0)).norm() <= tol * 10.0);
        }
    }

    #[test]
    fn lambda_zero_collapses_to_f_and_phi1() {
        let p = Potential::parse("exp(x)", 1.0, SegmentMode::Half, 1001).unwrap();
        let f = build_particular_solution(&p, Some(Complex64::new(0.5, 0.0))).unwrap();
        let table = PhiPsiTable::build(&f, 9).unwrap();
        let sol = spps_solve(&table, Complex64::ZERO, 1e-14).unwrap();
        // only the k = 0 terms survive
        assert!(sol.y1.max_diff(f.f()).unwrap() == 0.0);
        assert!(sol.y2.max_diff(table.phi(1)).unwrap() == 0.0);
        assert!(sol.converged);
    }

    #[test]
    fn initial_values_and_wronskian() {
        let p = Potential::parse("exp(x)", 1.0, SegmentMode::Half, 2001).unwrap();
        let f = build_particular_solution(&p, Some(Complex64::new(-0.3, 0.0))).unwrap();
        let table = PhiPsiTable::build(&f, 31).unwrap();
        let lambda = Complex64::new(4.0, 0.0);
        let sol = spps_solve(&table, lambda, 1e-12).unwrap();
        assert!(sol.converged);
        assert!((sol.y1.value(0) - Complex64::ONE).norm() <= 1e-14);
        assert!((sol.dy1.value(0) - f.h()).norm() <= 1e-12);
        assert!(sol.y2.value(0).norm() <= 1e-14);
        assert!((sol.dy2.value(0) - Complex64::ONE).norm() <= 1e-12);
        // Abel: the Wronskian is identically 1
        let w = sol
            .y1
            .mul(&sol.dy2)
            .unwrap()
            .sub(&sol.dy1.mul(&sol.y2).unwrap())
            .unwrap();
        for v in w.values() {
            assert!((v - Complex64::ONE).norm() <= 1e-8);
        }
    }

    #[test]
    fn residual_of_spps_solution() {
        let p = Potential::parse("cos(2*x)", 1.0, SegmentMode::Half, 2001).unwrap();
        let f = build_particular_solution(&p, None).unwrap();
        let table = PhiPsiTable::build(&f, 29).unwrap();
        let lambda = Complex64::new(-2.0, 1.0);
        let sol = spps_solve(&table, lambda, 1e-11).unwrap();
        let second = sol.y1.differentiate().unwrap().differentiate().unwrap();
        let rhs = p.q().mul(&sol.y1).unwrap().add(&sol.y1.scale(lambda)).unwrap();
        let diff = second.sub(&rhs).unwrap();
        let interior_max = diff.values()[3..diff.values().len() - 3]
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(interior_max <= 1e-6, "residual {interior_max:.3e}");
    }

    #[test]
    fn exhausted_table_reports_tail() {
        let p = Potential::parse("1", 1.0, SegmentMode::Half, 501).unwrap();
        let f = build_particular_solution(&p, Some(Complex64::ZERO)).unwrap();
        let table = PhiPsiTable::build(&f, 5).unwrap();
        let sol = spps_solve(&table, Complex64::new(50.0, 0.0), 1e-14).unwrap();
        assert!(!sol.converged);
        assert!(sol.tail_estimate > 1e-14);
    }
}
