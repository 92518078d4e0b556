//! Symbolic machinery for perturbative quantization checks of polarized
//! AKSZ sigma models: exact graded power-series arithmetic, formal
//! exponential maps and the Grothendieck connection, Hamiltonian targets
//! on shifted cotangent bundles, a finite-dimensional BV toy calculus,
//! decorated Feynman-graph enumeration, and graph-level verifiers for the
//! master equations (CME, dCME, QME, mdQME) and the Maurer-Cartan equation
//! of the boundary operator.
//!
//! Everything is exact: coefficients live in Q(i)[h, h^-1], propagators and
//! torsion factors are carried as formal symbols, and every check reduces
//! to "this multiset of symbolic terms cancels".

#![forbid(unsafe_code)]

pub mod scalar;
pub mod graded;
pub mod formal;
pub mod target;
pub mod bv;
pub mod graph;
pub mod state;
pub mod report;
pub mod parse;

pub use scalar::{GaussRat, Scalar};
