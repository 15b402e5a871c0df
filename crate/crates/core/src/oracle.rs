//! Independent brute-force references: a successive-approximation solution of
//! the kernel integral equation in characteristic coordinates, and an
//! adaptive embedded Runge–Kutta integrator.
//!
//! Everything here deliberately avoids the wave-polynomial machinery so that
//! comparisons against the analytic approximations are genuine cross-checks.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{cumulative_from_index, GridFunction};
use crate::potential::{Potential, SegmentMode};

/// Brute-force transmutation kernel on a characteristic-coordinate lattice.
///
/// In the coordinates `u = (x+t)/2`, `v = (x-t)/2` the kernel satisfies
/// `H(u,v) = h/2 + Q(u)/2 + ∫_0^u ∫_0^v q(u'+v') H(u',v') dv' du'`,
/// which is solved by Picard iteration. The lattice covers the full
/// coordinate square with `q` clamped to its segment; inside the region
/// reachable from the origin rectangle (the triangle `u, v >= 0, u+v <= b`
/// in half mode, the diamond `|u|+|v| <= b` in full mode) the clamping is
/// never exercised, so the values there are exact up to quadrature.
#[derive(Debug)]
pub struct KernelOracle {
    h_param: Complex64,
    step: f64,
    u0: f64,
    nodes: usize,
    origin: usize,
    values: Vec<Complex64>,
    pub iterations: usize,
}

const ORACLE_MAX_ITER: usize = 400;

impl KernelOracle {
    /// Default lattice resolution (nodes per axis in half mode).
    pub const DEFAULT_LATTICE: usize = 513;

    /// Solve the Goursat integral equation for the kernel of the operator
    /// with parameter `h`. `lattice` is the number of nodes along each
    /// characteristic axis of `[0, b]`; full mode doubles the span keeping
    /// the same spacing. `tol` is the sup-norm Picard stopping threshold.
    pub fn build(potential: &Potential, h: Complex64, lattice: usize, tol: f64) -> Result<Self> {
        let b = potential.half_width();
        if lattice < 5 {
            return Err(Error::Domain("kernel oracle lattice too small".into()));
        }
        let m = lattice - 1;
        let step = b / m as f64;
        let (u0, nodes, origin) = match potential.mode() {
            SegmentMode::Half => (0.0, m + 1, 0usize),
            SegmentMode::Full => (-b, 2 * m + 1, m),
        };

        // q(u + v) depends on i + j only; clamp the argument to the segment
        let q = potential.q();
        let qa = q.grid().left();
        let qb = q.grid().right();
        let mut qsum = Vec::with_capacity(2 * nodes - 1);
        for k in 0..(2 * nodes - 1) {
            let s = (2.0 * u0 + k as f64 * step).clamp(qa, qb);
            qsum.push(q.eval_at(s)?);
        }

        // Goursat data h/2 + Q(u)/2 along v = 0
        let qu: Vec<Complex64> = (0..nodes).map(|i| qsum[i + origin]).collect();
        let big_q = cumulative_from_index(&qu, origin, step);
        let data: Vec<Complex64> = (0..nodes).map(|i| 0.5 * (h + big_q[i])).collect();

        let idx = |i: usize, j: usize| i * nodes + j;
        let mut cur: Vec<Complex64> = vec![Complex64::ZERO; nodes * nodes];
        for i in 0..nodes {
            for j in 0..nodes {
                cur[idx(i, j)] = data[i];
            }
        }

        let mut iterations = 0;
        let mut diff: f64;
        let mut next = vec![Complex64::ZERO; nodes * nodes];
        let mut row = vec![Complex64::ZERO; nodes];
        let mut col = vec![Complex64::ZERO; nodes];
        loop {
            iterations += 1;
            // next(i, .) = ∫_0^{v_j} q(u_i + v') H(u_i, v') dv' per row
            for i in 0..nodes {
                for j in 0..nodes {
                    row[j] = qsum[i + j] * cur[idx(i, j)];
                }
                let c = cumulative_from_index(&row, origin, step);
                next[i * nodes..(i + 1) * nodes].copy_from_slice(&c);
            }
            // next(i, j) = data(i) + ∫_0^{u_i} of that, columnwise
            diff = 0.0;
            for j in 0..nodes {
                for i in 0..nodes {
                    col[i] = next[idx(i, j)];
                }
                let c = cumulative_from_index(&col, origin, step);
                for i in 0..nodes {
                    let value = data[i] + c[i];
                    diff = diff.max((value - cur[idx(i, j)]).norm());
                    next[idx(i, j)] = value;
                }
            }
            std::mem::swap(&mut cur, &mut next);
            if diff < tol {
                break;
            }
            if iterations >= ORACLE_MAX_ITER {
                return Err(Error::NonConvergence {
                    what: "kernel oracle Picard iteration",
                    iterations,
                    residual: diff,
                });
            }
        }
        Ok(KernelOracle {
            h_param: h,
            step,
            u0,
            nodes,
            origin,
            values: cur,
            iterations,
        })
    }

    #[inline]
    pub fn h_param(&self) -> Complex64 {
        self.h_param
    }

    #[inline]
    pub fn lattice_step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn nodes_per_axis(&self) -> usize {
        self.nodes
    }

    /// Origin index of the characteristic lattice (`u = v = 0`).
    #[inline]
    pub fn origin(&self) -> usize {
        self.origin
    }

    #[inline]
    fn coord(&self, i: usize) -> f64 {
        self.u0 + i as f64 * self.step
    }

    /// Lattice value `H(u_i, v_j)`.
    #[inline]
    pub fn h_at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.nodes + j]
    }

    /// Whether the lattice point lies in the triangle `u, v >= 0`,
    /// `u + v <= b`, i.e. in the region `0 <= |t| <= x <= b` where the
    /// oracle is exact regardless of mode.
    #[inline]
    pub fn in_exact_triangle(&self, i: usize, j: usize) -> bool {
        i >= self.origin
            && j >= self.origin
            && (i - self.origin) + (j - self.origin) <= self.nodes - 1 - self.origin
    }

    /// Kernel value at the lattice point with characteristic indices
    /// `(i, j)`, i.e. at `x = u_i + v_j`, `t = u_i - v_j`.
    pub fn k_at_indices(&self, i: usize, j: usize) -> (f64, f64, Complex64) {
        (
            self.coord(i) + self.coord(j),
            self.coord(i) - self.coord(j),
            self.h_at(i, j),
        )
    }

    /// Bilinear kernel evaluation `K(x, t) = H((x+t)/2, (x-t)/2)`; this
    /// interpolation is the accuracy floor of oracle comparisons away from
    /// lattice points.
    pub fn eval(&self, x: f64, t: f64) -> Result<Complex64> {
        let u = 0.5 * (x + t);
        let v = 0.5 * (x - t);
        let fu = (u - self.u0) / self.step;
        let fv = (v - self.u0) / self.step;
        let max = (self.nodes - 1) as f64;
        if fu < -1e-9 || fu > max + 1e-9 || fv < -1e-9 || fv > max + 1e-9 {
            return Err(Error::Domain(format!(
                "kernel oracle evaluation outside lattice: x = {x}, t = {t}"
            )));
        }
        let iu = (fu.max(0.0).floor() as usize).min(self.nodes - 2);
        let iv = (fv.max(0.0).floor() as usize).min(self.nodes - 2);
        let du = fu - iu as f64;
        let dv = fv - iv as f64;
        let h00 = self.h_at(iu, iv);
        let h10 = self.h_at(iu + 1, iv);
        let h01 = self.h_at(iu, iv + 1);
        let h11 = self.h_at(iu + 1, iv + 1);
        Ok(h00 * ((1.0 - du) * (1.0 - dv))
            + h10 * (du * (1.0 - dv))
            + h01 * ((1.0 - du) * dv)
            + h11 * (du * dv))
    }

    /// Partial derivatives `(K_1, K_2)` on the diagonal `t = x` at the
    /// lattice abscissa `u_i`: in characteristic coordinates
    /// `K_1 = (H_u + H_v)/2`, `K_2 = (H_u - H_v)/2`, with stencils along
    /// lattice lines.
    pub fn diag_derivatives(&self, i: usize) -> Result<(Complex64, Complex64)> {
        let j0 = self.origin;
        let hu = self.stencil_u(i, j0)?;
        let hv = self.stencil_v(i, j0)?;
        Ok((0.5 * (hu + hv), 0.5 * (hu - hv)))
    }

    /// Partial derivatives `(K_1, K_2)` on the antidiagonal `t = -x`, where
    /// `u = 0` and `v = x` sits at lattice index `j`.
    pub fn antidiag_derivatives(&self, j: usize) -> Result<(Complex64, Complex64)> {
        let i0 = self.origin;
        let hu = self.stencil_u(i0, j)?;
        let hv = self.stencil_v(i0, j)?;
        Ok((0.5 * (hu + hv), 0.5 * (hu - hv)))
    }

    fn stencil_u(&self, i: usize, j: usize) -> Result<Complex64> {
        fd5(i, self.nodes, self.step, |k| self.h_at(k, j))
    }

    fn stencil_v(&self, i: usize, j: usize) -> Result<Complex64> {
        fd5(j, self.nodes, self.step, |k| self.h_at(i, k))
    }
}

/// Five-point fourth-order first derivative along one lattice line.
fn fd5(i: usize, n: usize, h: f64, g: impl Fn(usize) -> Complex64) -> Result<Complex64> {
    if n < 5 {
        return Err(Error::Domain("lattice too small for derivatives".into()));
    }
    let inv12h = 1.0 / (12.0 * h);
    let d = if i >= 2 && i + 2 < n {
        (g(i - 2) - 8.0 * g(i - 1) + 8.0 * g(i + 1) - g(i + 2)) * inv12h
    } else if i == 0 {
        (-25.0 * g(0) + 48.0 * g(1) - 36.0 * g(2) + 16.0 * g(3) - 3.0 * g(4)) * inv12h
    } else if i == 1 {
        (-3.0 * g(0) - 10.0 * g(1) + 18.0 * g(2) - 6.0 * g(3) + g(4)) * inv12h
    } else if i == n - 2 {
        (-g(n - 5) + 6.0 * g(n - 4) - 18.0 * g(n - 3) + 10.0 * g(n - 2) + 3.0 * g(n - 1)) * inv12h
    } else {
        (3.0 * g(n - 5) - 16.0 * g(n - 4) + 36.0 * g(n - 3) - 48.0 * g(n - 2) + 25.0 * g(n - 1))
            * inv12h
    };
    Ok(d)
}

/// Adaptive Dormand–Prince 5(4) integration of `u'' = (q(x) + lambda) u`
/// from the origin outward, resampled onto the working grid. Returns the
/// solution and its derivative.
pub fn ode_oracle(
    q: &GridFunction,
    lambda: Complex64,
    u0: Complex64,
    du0: Complex64,
    tol: f64,
) -> Result<(GridFunction, GridFunction)> {
    let grid = q.grid().clone();
    let origin = grid.origin_index()?;
    let n = grid.len();
    let mut u = vec![Complex64::ZERO; n];
    let mut du = vec![Complex64::ZERO; n];
    u[origin] = u0;
    du[origin] = du0;

    let rhs = |x: f64, y: State| -> Result<State> {
        let qv = q.eval_at(x.clamp(grid.left(), grid.right()))?;
        Ok([y[1], (qv + lambda) * y[0]])
    };

    // rightward then leftward sweep, each hitting the grid nodes exactly
    for dir in [1isize, -1isize] {
        let mut x = grid.node(origin);
        let mut y = [u0, du0];
        let mut i = origin as isize;
        loop {
            let next = i + dir;
            if next < 0 || next as usize >= n {
                break;
            }
            let target = grid.node(next as usize);
            y = integrate_to(&rhs, x, y, target, tol)?;
            x = target;
            u[next as usize] = y[0];
            du[next as usize] = y[1];
            i = next;
        }
    }

    Ok((
        GridFunction::new(grid.clone(), u)?,
        GridFunction::new(grid, du)?,
    ))
}

type State = [Complex64; 2];

fn integrate_to(
    rhs: &impl Fn(f64, State) -> Result<State>,
    mut x: f64,
    mut y: State,
    target: f64,
    tol: f64,
) -> Result<State> {
    let tol = tol.max(1e-14);
    let mut h = target - x;
    let span = h.abs();
    let mut steps = 0usize;
    while (target - x).abs() > 1e-15 * (1.0 + target.abs()) {
        steps += 1;
        if steps > 100_000 {
            return Err(Error::NonConvergence {
                what: "adaptive Runge-Kutta stepping",
                iterations: steps,
                residual: (target - x).abs(),
            });
        }
        if h.abs() > (target - x).abs() {
            h = target - x;
        }
        if h.abs() < 1e-15 * span.max(1.0) {
            return Err(Error::Domain("step size underflow in ode oracle".into()));
        }
        let (y5, err) = dopri_step(rhs, x, y, h)?;
        let scale = tol * (1.0 + y[0].norm().max(y[1].norm()));
        if err <= scale {
            x += h;
            y = y5;
            let grow = if err > 0.0 {
                0.9 * (scale / err).powf(0.2)
            } else {
                5.0
            };
            h *= grow.clamp(0.2, 5.0);
        } else {
            h *= (0.9 * (scale / err).powf(0.2)).clamp(0.1, 0.9);
        }
    }
    Ok(y)
}

fn dopri_step(
    rhs: &impl Fn(f64, State) -> Result<State>,
    x: f64,
    y: State,
    h: f64,
) -> Result<(State, f64)> {
    let add = |y: State, terms: &[(f64, State)]| -> State {
        let mut out = y;
        for &(c, k) in terms {
            out[0] += h * c * k[0];
            out[1] += h * c * k[1];
        }
        out
    };
    let k1 = rhs(x, y)?;
    let k2 = rhs(x + h / 5.0, add(y, &[(1.0 / 5.0, k1)]))?;
    let k3 = rhs(
        x + 3.0 * h / 10.0,
        add(y, &[(3.0 / 40.0, k1), (9.0 / 40.0, k2)]),
    )?;
    let k4 = rhs(
        x + 4.0 * h / 5.0,
        add(
            y,
            &[(44.0 / 45.0, k1), (-56.0 / 15.0, k2), (32.0 / 9.0, k3)],
        ),
    )?;
    let k5 = rhs(
        x + 8.0 * h / 9.0,
        add(
            y,
            &[
                (19372.0 / 6561.0, k1),
                (-25360.0 / 2187.0, k2),
                (64448.0 / 6561.0, k3),
                (-212.0 / 729.0, k4),
            ],
        ),
    )?;
    let k6 = rhs(
        x + h,
        add(
            y,
            &[
                (9017.0 / 3168.0, k1),
                (-355.0 / 33.0, k2),
                (46732.0 / 5247.0, k3),
                (49.0 / 176.0, k4),
                (-5103.0 / 18656.0, k5),
            ],
        ),
    )?;
    let y5 = add(
        y,
        &[
            (35.0 / 384.0, k1),
            (500.0 / 1113.0, k3),
            (125.0 / 192.0, k4),
            (-2187.0 / 6784.0, k5),
            (11.0 / 84.0, k6),
        ],
    );
    let k7 = rhs(x + h, y5)?;
    let y4 = add(
        y,
        &[
            (5179.0 / 57600.0, k1),
            (7571.0 / 16695.0, k3),
            (393.0 / 640.0, k4),
            (-92097.0 / 339200.0, k5),
            (187.0 / 2100.0, k6),
            (1.0 / 40.0, k7),
        ],
    );
    let err = ((y5[0] - y4[0]).norm_sqr() + (y5[1] - y4[1]).norm_sqr()).sqrt();
    Ok((y5, err))
}
