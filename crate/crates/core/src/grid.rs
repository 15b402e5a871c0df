//! Uniform-grid sampled functions with high-order cumulative integration,
//! differentiation and local interpolation.
//!
//! Every function in the calculus lives on one shared [`Grid`]; keeping all
//! tables aligned on the same nodes is what makes the deeply nested recursive
//! integrals cheap and consistent.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Number of nodes used per unit of segment length when no explicit grid
/// size is requested.
pub const DEFAULT_NODES_PER_UNIT: usize = 2001;

/// A uniform grid on `[a, b]` with an odd number of nodes.
///
/// The node count is kept odd so that composite Simpson quadrature applies on
/// every prefix via a half-step correction, and so that `0` is a node of the
/// symmetric segment `[-b, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    a: f64,
    b: f64,
    n: usize,
}

impl Grid {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Arc<Grid>> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::Domain(format!("invalid segment [{a}, {b}]")));
        }
        if n < 3 || n % 2 == 0 {
            return Err(Error::Domain(format!(
                "node count must be odd and at least 3, got {n}"
            )));
        }
        Ok(Arc::new(Grid { a, b, n }))
    }

    /// Grid over `[a, b]` with roughly `DEFAULT_NODES_PER_UNIT` nodes per unit
    /// length (rounded up to an odd count).
    pub fn with_default_resolution(a: f64, b: f64) -> Result<Arc<Grid>> {
        let span = b - a;
        let mut n = ((DEFAULT_NODES_PER_UNIT - 1) as f64 * span).round() as usize + 1;
        if n % 2 == 0 {
            n += 1;
        }
        Grid::new(a, b, n.max(3))
    }

    #[inline]
    pub fn left(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.b
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.b - self.a) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i < self.n);
        if i == self.n - 1 {
            self.b
        } else {
            self.a + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// Index of the node equal to `x`, if `x` lies on the grid (up to a tiny
    /// rounding slack).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let fi = (x - self.a) / self.step();
        let i = fi.round();
        if i < 0.0 || i as usize >= self.n {
            return None;
        }
        let i = i as usize;
        if (x - self.node(i)).abs() <= 1e-9 * self.step() {
            Some(i)
        } else {
            None
        }
    }

    /// Index of the node at `x = 0`; errors if `0` is not a grid node.
    pub fn origin_index(&self) -> Result<usize> {
        self.index_of(0.0)
            .ok_or_else(|| Error::Domain("grid does not contain x = 0 as a node".into()))
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-9 * self.step();
        x >= self.a - slack && x <= self.b + slack
    }

    pub fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
        if Arc::ptr_eq(a, b) || **a == **b {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "[{}, {}] x {} vs [{}, {}] x {}",
                a.a, a.b, a.n, b.a, b.b, b.n
            )))
        }
    }
}

/// A complex-valued function sampled on a [`Grid`]. Immutable once built; all
/// operations return fresh functions, so shared tables can be read from many
/// threads.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite {
                context: "grid function construction",
                x: f64::NAN,
            });
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values: Vec<Complex64> = grid.nodes().map(f).collect();
        GridFunction::new(grid.clone(), values)
    }

    pub fn from_real_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        GridFunction::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub fn constant(grid: &Arc<Grid>, value: Complex64) -> Self {
        GridFunction {
            grid: grid.clone(),
            values: vec![value; grid.len()],
        }
    }

    pub fn zero(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, Complex64::ZERO)
    }

    pub fn one(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, Complex64::ONE)
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, i: usize) -> Complex64 {
        self.values[i]
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn min_abs(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &GridFunction,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        Grid::same_grid(&self.grid, &other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(GridFunction {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &GridFunction) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| c * v)
    }

    /// Maximum pointwise deviation from another sampled function.
    pub fn max_diff(&self, other: &GridFunction) -> Result<f64> {
        Grid::same_grid(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Cumulative integral `F(x_i) = ∫_origin^{x_i} f`, with the origin given
    /// as a grid coordinate. `F(origin) = 0` exactly.
    pub fn cumulative_integral(&self, origin: f64) -> Result<Self> {
        let idx = self
            .grid
            .index_of(origin)
            .ok_or_else(|| Error::Domain(format!("integration origin {origin} is not a grid node")))?;
        Ok(self.cumulative_from_node(idx))
    }

    /// Cumulative integral anchored at node `origin`.
    pub fn cumulative_from_node(&self, origin: usize) -> Self {
        GridFunction {
            grid: self.grid.clone(),
            values: cumulative_from_index(&self.values, origin, self.grid.step()),
        }
    }

    /// Fourth-order finite-difference derivative: central five-point stencils
    /// at interior nodes, one-sided five-point stencils at the boundary.
    pub fn differentiate(&self) -> Result<Self> {
        let n = self.grid.len();
        if n < 5 {
            return Err(Error::Domain(format!(
                "differentiation needs at least 5 nodes, grid has {n}"
            )));
        }
        let h = self.grid.step();
        let v = &self.values;
        let mut d = vec![Complex64::ZERO; n];
        let inv12h = 1.0 / (12.0 * h);
        d[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) * inv12h;
        d[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) * inv12h;
        for i in 2..n - 2 {
            d[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) * inv12h;
        }
        d[n - 2] =
            (-v[n - 5] + 6.0 * v[n - 4] - 18.0 * v[n - 3] + 10.0 * v[n - 2] + 3.0 * v[n - 1])
                * inv12h;
        d[n - 1] =
            (3.0 * v[n - 5] - 16.0 * v[n - 4] + 36.0 * v[n - 3] - 48.0 * v[n - 2] + 25.0 * v[n - 1])
                * inv12h;
        Ok(GridFunction {
            grid: self.grid.clone(),
            values: d,
        })
    }

    /// Derivative value at `x = 0` via the same five-point stencils; used by
    /// the generalized-derivative recursions which need point values at the
    /// origin only.
    pub fn derivative_at_origin(&self) -> Result<Complex64> {
        let idx = self.grid.origin_index()?;
        let d = self.derivative_at_node(idx)?;
        Ok(d)
    }

    pub fn derivative_at_node(&self, i: usize) -> Result<Complex64> {
        let n = self.grid.len();
        if n < 5 {
            return Err(Error::Domain(format!(
                "differentiation needs at least 5 nodes, grid has {n}"
            )));
        }
        let h = self.grid.step();
        let v = &self.values;
        let inv12h = 1.0 / (12.0 * h);
        let d = if i >= 2 && i + 2 < n {
            (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) * inv12h
        } else if i == 0 {
            (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) * inv12h
        } else if i == 1 {
            (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) * inv12h
        } else if i == n - 2 {
            (-v[n - 5] + 6.0 * v[n - 4] - 18.0 * v[n - 3] + 10.0 * v[n - 2] + 3.0 * v[n - 1])
                * inv12h
        } else {
            (3.0 * v[n - 5] - 16.0 * v[n - 4] + 36.0 * v[n - 3] - 48.0 * v[n - 2]
                + 25.0 * v[n - 1])
                * inv12h
        };
        Ok(d)
    }

    /// Local cubic (four-point Lagrange) interpolation. Grid nodes reproduce
    /// the stored values bit-exactly.
    pub fn eval_at(&self, x: f64) -> Result<Complex64> {
        if !self.grid.contains(x) {
            return Err(Error::Domain(format!(
                "x = {x} outside grid span [{}, {}]",
                self.grid.left(),
                self.grid.right()
            )));
        }
        if let Some(i) = self.grid.index_of(x) {
            if x == self.grid.node(i) {
                return Ok(self.values[i]);
            }
        }
        let (start, w) = cubic_stencil(&self.grid, x);
        Ok(w[0] * self.values[start]
            + w[1] * self.values[start + 1]
            + w[2] * self.values[start + 2]
            + w[3] * self.values[start + 3])
    }

    /// Real parts of the samples (used by text output).
    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

/// Four-point Lagrange interpolation stencil for `x`: start index plus the
/// four weights. Shared by `eval_at` and the dense discretizations so both
/// paths see the exact same operator.
pub(crate) fn cubic_stencil(grid: &Grid, x: f64) -> (usize, [f64; 4]) {
    let h = grid.step();
    let n = grid.len();
    let fi = (x - grid.left()) / h;
    let cell = (fi.floor() as isize).clamp(0, n as isize - 2) as usize;
    let start = cell.saturating_sub(1).min(n - 4);
    let mut w = [0.0; 4];
    let xs = [
        grid.node(start),
        grid.node(start + 1),
        grid.node(start + 2),
        grid.node(start + 3),
    ];
    for j in 0..4 {
        let mut p = 1.0;
        for m in 0..4 {
            if m != j {
                p *= (x - xs[m]) / (xs[j] - xs[m]);
            }
        }
        w[j] = p;
    }
    (start, w)
}

/// Oriented cumulative integral of uniformly spaced samples anchored at
/// `origin`: a rightward sweep plus a sign-flipped sweep over the reversed
/// prefix.
pub(crate) fn cumulative_from_index(
    values: &[Complex64],
    origin: usize,
    h: f64,
) -> Vec<Complex64> {
    assert!(origin < values.len());
    let mut out = vec![Complex64::ZERO; values.len()];
    let right = cumulative_simpson(&values[origin..], h);
    out[origin..].copy_from_slice(&right);
    if origin > 0 {
        let rev: Vec<Complex64> = values[..=origin].iter().rev().copied().collect();
        let left = cumulative_simpson(&rev, h);
        for (m, v) in left.into_iter().enumerate() {
            out[origin - m] = -v;
        }
    }
    out
}

/// Cumulative Simpson integration of uniformly spaced samples with spacing
/// `h`, starting at zero. Odd prefixes use four-point Newton–Cotes half-step
/// rules whose pair sums collapse to the plain Simpson pair, so even
/// prefixes accumulate exactly the composite Simpson sums while odd prefixes
/// stay cubic-exact (a three-point half rule leaves an odd/even sawtooth
/// that finite differences of the result amplify).
pub(crate) fn cumulative_simpson(y: &[Complex64], h: f64) -> Vec<Complex64> {
    let n = y.len();
    let mut res = vec![Complex64::ZERO; n];
    if n == 1 {
        return res;
    }
    if n == 2 {
        res[1] = 0.5 * h * (y[0] + y[1]);
        return res;
    }
    if n == 3 {
        let c = h / 12.0;
        res[1] = c * (5.0 * y[0] + 8.0 * y[1] - y[2]);
        res[2] = res[1] + c * (-y[0] + 8.0 * y[1] + 5.0 * y[2]);
        return res;
    }
    let c = h / 24.0;
    for i in 1..(n + 1) / 2 {
        let k = 2 * i - 2;
        if k + 3 < n {
            // forward stencil on nodes k..k+3
            res[k + 1] = res[k] + c * (9.0 * y[k] + 19.0 * y[k + 1] - 5.0 * y[k + 2] + y[k + 3]);
            res[k + 2] =
                res[k + 1] + c * (-y[k] + 13.0 * y[k + 1] + 13.0 * y[k + 2] - y[k + 3]);
        } else {
            // last pair of an odd-length slice: backward stencil on k-1..k+2
            res[k + 1] = res[k]
                + c * (-y[k - 1] + 13.0 * y[k] + 13.0 * y[k + 1] - y[k + 2]);
            res[k + 2] =
                res[k + 1] + c * (y[k - 1] - 5.0 * y[k] + 19.0 * y[k + 1] + 9.0 * y[k + 2]);
        }
    }
    if n % 2 == 0 {
        res[n - 1] =
            res[n - 2] + c * (y[n - 4] - 5.0 * y[n - 3] + 19.0 * y[n - 2] + 9.0 * y[n - 1]);
    }
    res
}

/// Definite Simpson integral over a slice of uniformly spaced samples, with
/// the three-point correction when the interval count is odd.
pub(crate) fn simpson_slice(y: &[Complex64], h: f64) -> Complex64 {
    let n = y.len();
    match n {
        0 | 1 => Complex64::ZERO,
        2 => 0.5 * h * (y[0] + y[1]),
        3 => h / 3.0 * (y[0] + 4.0 * y[1] + y[2]),
        _ => {
            let intervals = n - 1;
            let mut sum = Complex64::ZERO;
            for i in 0..intervals / 2 {
                sum += y[2 * i] + 4.0 * y[2 * i + 1] + y[2 * i + 2];
            }
            sum *= h / 3.0;
            if intervals % 2 != 0 {
                sum += h / 24.0
                    * (y[n - 4] - 5.0 * y[n - 3] + 19.0 * y[n - 2] + 9.0 * y[n - 1]);
            }
            sum
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn cumulative_of_one_is_x() {
        let g = Grid::new(0.0, 1.0, 101).unwrap();
        let f = GridFunction::one(&g);
        let fint = f.cumulative_integral(0.0).unwrap();
        for (i, x) in g.nodes().enumerate() {
            assert!((fint.value(i) - c(x)).norm() <= 1e-15);
        }
    }

    #[test]
    fn cumulative_of_square_is_cube_over_three() {
        let g = Grid::new(0.0, 1.0, 101).unwrap();
        let f = GridFunction::from_real_fn(&g, |x| x * x).unwrap();
        let fint = f.cumulative_integral(0.0).unwrap();
        for (i, x) in g.nodes().enumerate() {
            assert!((fint.value(i) - c(x * x * x / 3.0)).norm() <= 1e-14);
        }
    }

    #[test]
    fn cumulative_of_exp() {
        let g = Grid::new(0.0, 1.0, 1001).unwrap();
        let f = GridFunction::from_real_fn(&g, f64::exp).unwrap();
        let fint = f.cumulative_integral(0.0).unwrap();
        for (i, x) in g.nodes().enumerate() {
            // analytic antiderivative e^x - 1
            assert!((fint.value(i) - c(x.exp() - 1.0)).norm() <= 1e-10);
        }
    }

    #[test]
    fn cumulative_from_interior_origin() {
        let g = Grid::new(-1.0, 1.0, 401).unwrap();
        let f = GridFunction::from_real_fn(&g, |x| x * x).unwrap();
        let fint = f.cumulative_integral(0.0).unwrap();
        let orig = g.origin_index().unwrap();
        assert_eq!(fint.value(orig), Complex64::ZERO);
        for (i, x) in g.nodes().enumerate() {
            assert!((fint.value(i) - c(x * x * x / 3.0)).norm() <= 1e-13);
        }
    }

    #[test]
    fn cumulative_origin_not_on_grid_errors() {
        let g = Grid::new(0.0, 1.0, 101).unwrap();
        let f = GridFunction::one(&g);
        assert!(f.cumulative_integral(0.0051).is_err());
    }

    #[test]
    fn derivative_of_quartic() {
        let g = Grid::new(0.0, 1.0, 201).unwrap();
        let f = GridFunction::from_real_fn(&g, |x| x.powi(4)).unwrap();
        let d = f.differentiate().unwrap();
        for (i, x) in g.nodes().enumerate() {
            assert!((d.value(i) - c(4.0 * x * x * x)).norm() <= 1e-10);
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = Grid::new(0.0, 1.0, 11).unwrap();
        let f = GridFunction::constant(&g, c(3.5));
        let d = f.differentiate().unwrap();
        assert!(d.max_norm() <= 1e-13);
    }

    #[test]
    fn derivative_of_sine() {
        let g = Grid::new(0.0, std::f64::consts::PI, 1001).unwrap();
        let f = GridFunction::from_real_fn(&g, f64::sin).unwrap();
        let d = f.differentiate().unwrap();
        for (i, x) in g.nodes().enumerate() {
            assert!((d.value(i) - c(x.cos())).norm() <= 1e-10);
        }
    }

    #[test]
    fn derivative_needs_five_nodes() {
        let g = Grid::new(0.0, 1.0, 3).unwrap();
        let f = GridFunction::one(&g);
        assert!(f.differentiate().is_err());
    }

    #[test]
    fn eval_at_nodes_is_bit_exact() {
        let g = Grid::new(0.0, 1.0, 101).unwrap();
        let f = GridFunction::from_real_fn(&g, |x| (3.0 * x).sin() + 0.25 * x).unwrap();
        for i in 0..g.len() {
            let x = g.node(i);
            assert_eq!(f.eval_at(x).unwrap(), f.value(i));
        }
    }

    #[test]
    fn eval_at_cubic_is_exact_between_nodes() {
        let g = Grid::new(0.0, 1.0, 101).unwrap();
        let f = GridFunction::from_real_fn(&g, |x| x * x * x).unwrap();
        let x = 0.5 * (g.node(7) + g.node(8));
        let v = f.eval_at(x).unwrap();
        assert!((v - c(x * x * x)).norm() <= 1e-14);
    }

    #[test]
    fn eval_at_exp_third() {
        let g = Grid::new(0.0, 1.0, 1001).unwrap();
        let f = GridFunction::from_real_fn(&g, f64::exp).unwrap();
        let v = f.eval_at(1.0 / 3.0).unwrap();
        assert!((v - c(1.3956124250860895)).norm() <= 1e-10);
    }

    #[test]
    fn eval_outside_span_errors() {
        let g = Grid::new(0.0, 1.0, 11).unwrap();
        let f = GridFunction::one(&g);
        assert!(f.eval_at(1.5).is_err());
        assert!(f.eval_at(-0.1).is_err());
    }

    #[test]
    fn derivative_inverts_cumulative_integral() {
        let g = Grid::new(0.0, 1.0, 1001).unwrap();
        let f = GridFunction::from_real_fn(&g, |x| (2.0 * x).cos() * x.exp()).unwrap();
        let fi = f.cumulative_integral(0.0).unwrap();
        let back = fi.differentiate().unwrap();
        assert!(back.max_diff(&f).unwrap() <= 1e-8);
    }
}
