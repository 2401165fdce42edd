//! Certified lower bounds for sparse polynomials through sums of
//! nonnegative circuit polynomials.
//!
//! The pipeline: represent the polynomial sparsely ([`poly`]), detect the
//! Newton-polytope vertices with small LPs ([`lp`]), build circuits over the
//! support ([`circuits`]), solve the dual bound problem over power-cone
//! intersections with a feasible-start barrier method ([`ipm`], [`cones`]),
//! generate violated circuits by pricing until none remain ([`bound`]), and
//! extract a machine-verifiable decomposition certificate. Random instance
//! generation and independent oracles live in [`instances`].

pub mod bound;
pub mod circuits;
pub mod cones;
pub mod instances;
pub mod ipm;
pub mod lp;
pub mod poly;

pub use bound::{BoundResult, CgReport, NoSoncBound, SolverConfig, SoncCertificate};
pub use circuits::{Circuit, CircuitPolyCoeffs};
pub use poly::{Exponent, SparsePolynomial};
