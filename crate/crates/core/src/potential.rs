//! Potential ingestion and the non-vanishing particular solution `f` of
//! `f'' - q f = 0` with `f(0) = 1`, the parameter that anchors the whole
//! transmutation calculus.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::grid::{Grid, GridFunction};

/// Which segment the problem lives on: `[0, b]` (half) or `[-b, b]` (full).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    Half,
    Full,
}

impl SegmentMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentMode::Half => "half",
            SegmentMode::Full => "full",
        }
    }
}

impl std::str::FromStr for SegmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" => Ok(SegmentMode::Half),
            "full" => Ok(SegmentMode::Full),
            other => Err(Error::InvalidInput(format!(
                "mode must be 'half' or 'full', got '{other}'"
            ))),
        }
    }
}

/// The potential `q` sampled on the working grid.
#[derive(Debug, Clone)]
pub struct Potential {
    grid: Arc<Grid>,
    q: GridFunction,
    mode: SegmentMode,
    smoothness_hint: Option<u32>,
}

impl Potential {
    pub fn new(q: GridFunction, mode: SegmentMode) -> Result<Potential> {
        let grid = q.grid().clone();
        match mode {
            SegmentMode::Half if grid.left() != 0.0 => {
                return Err(Error::Domain(
                    "half-segment potentials must start at x = 0".into(),
                ))
            }
            SegmentMode::Full if grid.left() != -grid.right() => {
                return Err(Error::Domain(
                    "full-segment potentials must live on [-b, b]".into(),
                ))
            }
            _ => {}
        }
        Ok(Potential {
            grid,
            q,
            mode,
            smoothness_hint: None,
        })
    }

    /// Sample an expression in `x` on a fresh grid over the segment.
    pub fn parse(text: &str, b: f64, mode: SegmentMode, nodes: usize) -> Result<Potential> {
        let expr = Expression::parse(text)?;
        Potential::from_expression(&expr, b, mode, nodes)
    }

    pub fn from_expression(
        expr: &Expression,
        b: f64,
        mode: SegmentMode,
        nodes: usize,
    ) -> Result<Potential> {
        let grid = Self::segment_grid(b, mode, nodes)?;
        let mut values = Vec::with_capacity(grid.len());
        for x in grid.nodes() {
            values.push(Complex64::new(expr.eval_checked(x)?, 0.0));
        }
        Potential::new(GridFunction::new(grid, values)?, mode)
    }

    pub fn from_fn(
        f: impl Fn(f64) -> f64,
        b: f64,
        mode: SegmentMode,
        nodes: usize,
    ) -> Result<Potential> {
        let grid = Self::segment_grid(b, mode, nodes)?;
        Potential::new(GridFunction::from_real_fn(&grid, f)?, mode)
    }

    /// Load a two-column `x, q` table and resample it onto the working grid
    /// by local cubic interpolation. Comma or whitespace separated; `#` lines
    /// are skipped.
    pub fn from_csv_str(text: &str, b: f64, mode: SegmentMode, nodes: usize) -> Result<Potential> {
        let mut samples: Vec<(f64, f64)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty());
            let bad = |what: &str| {
                Error::InvalidInput(format!("CSV line {}: {what}: '{line}'", lineno + 1))
            };
            let x: f64 = parts
                .next()
                .ok_or_else(|| bad("missing x column"))?
                .parse()
                .map_err(|_| bad("bad x value"))?;
            let q: f64 = parts
                .next()
                .ok_or_else(|| bad("missing q column"))?
                .parse()
                .map_err(|_| bad("bad q value"))?;
            samples.push((x, q));
        }
        if samples.len() < 4 {
            return Err(Error::InvalidInput(
                "potential CSV needs at least 4 samples".into(),
            ));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let grid = Self::segment_grid(b, mode, nodes)?;
        if samples[0].0 > grid.left() + 1e-12 || samples.last().unwrap().0 < grid.right() - 1e-12 {
            return Err(Error::InvalidInput(format!(
                "CSV samples cover [{}, {}] but the grid needs [{}, {}]",
                samples[0].0,
                samples.last().unwrap().0,
                grid.left(),
                grid.right()
            )));
        }
        let values: Vec<Complex64> = grid
            .nodes()
            .map(|x| Complex64::new(interp_cubic(&samples, x), 0.0))
            .collect();
        Potential::new(GridFunction::new(grid, values)?, mode)
    }

    pub fn from_csv_path(
        path: &std::path::Path,
        b: f64,
        mode: SegmentMode,
        nodes: usize,
    ) -> Result<Potential> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Potential::from_csv_str(&text, b, mode, nodes)
    }

    fn segment_grid(b: f64, mode: SegmentMode, nodes: usize) -> Result<Arc<Grid>> {
        let a = match mode {
            SegmentMode::Half => 0.0,
            SegmentMode::Full => -b,
        };
        Grid::new(a, b, nodes)
    }

    pub fn with_smoothness_hint(mut self, p: u32) -> Self {
        self.smoothness_hint = Some(p);
        self
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    #[inline]
    pub fn q(&self) -> &GridFunction {
        &self.q
    }

    #[inline]
    pub fn mode(&self) -> SegmentMode {
        self.mode
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        self.grid.right()
    }

    pub fn smoothness_hint(&self) -> Option<u32> {
        self.smoothness_hint
    }

    /// `max |q|` over the grid, the `M` of the kernel error bounds.
    pub fn max_abs_q(&self) -> f64 {
        self.q.max_norm()
    }

    /// `Q(x) = ∫_0^x q(s) ds`, anchored at the origin in both modes.
    pub fn cumulative(&self) -> Result<GridFunction> {
        self.q.cumulative_integral(0.0)
    }
}

/// Local cubic interpolation on an ordered, possibly non-uniform table.
fn interp_cubic(samples: &[(f64, f64)], x: f64) -> f64 {
    let n = samples.len();
    // first index with xs[i] > x
    let upper = samples.partition_point(|&(xs, _)| xs <= x);
    let start = upper.saturating_sub(2).min(n - 4);
    let pts = &samples[start..start + 4];
    let mut acc = 0.0;
    for j in 0..4 {
        let mut w = 1.0;
        for m in 0..4 {
            if m != j {
                w *= (x - pts[m].0) / (pts[j].0 - pts[m].0);
            }
        }
        acc += w * pts[j].1;
    }
    acc
}

/// The non-vanishing particular solution `f` of `f'' = q f` with `f(0) = 1`,
/// together with its derivative and the parameter `h = f'(0)`.
#[derive(Debug, Clone)]
pub struct ParticularSolution {
    f: GridFunction,
    f_prime: GridFunction,
    h: Complex64,
    min_abs: f64,
}

impl ParticularSolution {
    #[inline]
    pub fn f(&self) -> &GridFunction {
        &self.f
    }

    #[inline]
    pub fn f_prime(&self) -> &GridFunction {
        &self.f_prime
    }

    #[inline]
    pub fn h(&self) -> Complex64 {
        self.h
    }

    #[inline]
    pub fn min_abs(&self) -> f64 {
        self.min_abs
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        self.f.grid()
    }

    pub fn one_over_f(&self) -> GridFunction {
        self.f.map(|v| v.inv())
    }

    /// The Darboux-associated potential `2 (f'/f)^2 - q`.
    pub fn darboux_potential(&self, q: &GridFunction) -> Result<GridFunction> {
        let ratio = self.f_prime.zip_map(&self.f, |d, f| d / f)?;
        ratio.zip_map(q, |r, qv| 2.0 * r * r - qv)
    }
}

const PICARD_TOL: f64 = 1e-13;
const PICARD_MAX_ITER: usize = 300;
const VANISH_THRESHOLD: f64 = 1e-12;

/// Solve the initial value problem `u'' = q u`, `u(0) = u0`, `u'(0) = du0`
/// by Picard iteration on the second-kind Volterra form
/// `u(x) = u0 + du0 x + ∫_0^x (x - s) q(s) u(s) ds`.
/// Returns the solution and its derivative `u' = du0 + ∫_0^x q u`.
fn picard_ivp(
    q: &GridFunction,
    u0: Complex64,
    du0: Complex64,
) -> Result<(GridFunction, GridFunction)> {
    let grid = q.grid();
    let origin = grid.origin_index()?;
    let ic = GridFunction::from_fn(grid, |x| u0 + du0 * x)?;
    let xs: Vec<f64> = grid.nodes().collect();

    let mut u = ic.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..PICARD_MAX_ITER {
        let g = q.mul(&u)?;
        let sg = GridFunction::new(
            grid.clone(),
            g.values()
                .iter()
                .zip(&xs)
                .map(|(&v, &x)| v * x)
                .collect(),
        )?;
        let int_g = g.cumulative_from_node(origin);
        let int_sg = sg.cumulative_from_node(origin);
        // ∫ (x - s) g(s) ds = x ∫ g - ∫ s g
        let mut next = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            next.push(ic.value(i) + xs[i] * int_g.value(i) - int_sg.value(i));
        }
        let next = GridFunction::new(grid.clone(), next)?;
        residual = next.max_diff(&u)?;
        u = next;
        if residual < PICARD_TOL {
            let du = q.mul(&u)?.cumulative_from_node(origin).map(|v| v + du0);
            return Ok((u, du));
        }
    }
    Err(Error::NonConvergence {
        what: "Picard iteration for the particular solution",
        iterations: PICARD_MAX_ITER,
        residual,
    })
}

/// Build the non-vanishing particular solution for a potential.
///
/// The two real-normalized solutions `f1` (`f1(0)=1, f1'(0)=0`) and `f2`
/// (`f2(0)=0, f2'(0)=1`) are combined as follows: with an explicit
/// `h_request` the combination `f1 + h f2` is used when it stays away from
/// zero; otherwise (or when that combination vanishes) the fallback
/// `f1 + i f2` is returned and the reported `h` is the one actually realized.
pub fn build_particular_solution(
    potential: &Potential,
    h_request: Option<Complex64>,
) -> Result<ParticularSolution> {
    let q = potential.q();
    let (f1, df1) = picard_ivp(q, Complex64::ONE, Complex64::ZERO)?;
    let (f2, df2) = picard_ivp(q, Complex64::ZERO, Complex64::ONE)?;

    let combine = |h: Complex64| -> Result<(GridFunction, GridFunction, f64)> {
        let f = f1.zip_map(&f2, |a, b| a + h * b)?;
        let df = df1.zip_map(&df2, |a, b| a + h * b)?;
        let min_abs = f.min_abs();
        Ok((f, df, min_abs))
    };

    // An essentially real combination can cross zero between nodes without
    // the node minimum dipping below the threshold; treat a sign change of
    // the real part as vanishing too.
    let admissible = |f: &GridFunction, min_abs: f64| -> bool {
        if min_abs <= VANISH_THRESHOLD {
            return false;
        }
        let max_im = f.values().iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        if max_im <= 1e-13 * f.max_norm() {
            let first = f.value(0).re;
            if f.values().iter().any(|v| v.re * first <= 0.0) {
                return false;
            }
        }
        true
    };

    if let Some(h) = h_request {
        let (f, df, min_abs) = combine(h)?;
        if admissible(&f, min_abs) {
            return Ok(ParticularSolution {
                f,
                f_prime: df,
                h,
                min_abs,
            });
        }
    }

    let i = Complex64::I;
    let (f, df, min_abs) = combine(i)?;
    if min_abs <= VANISH_THRESHOLD {
        return Err(Error::VanishingSolution { min_abs });
    }
    Ok(ParticularSolution {
        f,
        f_prime: df,
        h: i,
        min_abs,
    })
}
