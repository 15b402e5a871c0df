//! Analytic transmutation-kernel toolkit for one-dimensional
//! Schrödinger/Sturm–Liouville equations.
//!
//! The library approximates the integral kernel of the Delsarte
//! transmutation operator by finite combinations of generalized wave
//! polynomials, which reduces solving `-u'' + q(x) u = ω² u` (and its
//! regular spectral problems) to two one-dimensional least-squares fits plus
//! closed-form trigonometric integrals. Around that core it provides the
//! full supporting calculus: formal powers, spectral parameter power series,
//! the trace systems `c_n`/`s_n`, generalized derivatives with Taylor-type
//! expansions, Goursat-to-Goursat operators, independent brute-force
//! oracles, and convergence diagnostics.

pub mod error;
pub mod expr;
pub mod formal_powers;
pub mod gencalc;
pub mod grid;
pub mod kernel;
pub mod oracle;
pub mod potential;
pub mod solver;
pub mod spps;
pub mod wave;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};
pub use potential::{build_particular_solution, ParticularSolution, Potential, SegmentMode};
