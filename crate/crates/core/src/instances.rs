//! Random test instances, a brute-force bound oracle, and multi-start local
//! minimization for optimality-gap reporting.
//!
//! Generated polynomials have a simplex Newton polytope: the constant term
//! and each `x_i^d` anchor gets a positive integer coefficient, and interior
//! componentwise-even exponents of total degree below `d` get nonzero
//! integer coefficients of either sign. Every instance therefore has a
//! finite lower bound, the vertex set is known in advance, and the bound
//! solver can start in phase two with one trivially computable circuit per
//! interior exponent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bound::{self, NoSoncBound, SolverConfig, SupportLayout};
use crate::circuits::{enumerate_circuits, CircuitError};
use crate::cones::{default_slater_theta, slater_point, PhaseMode};
use crate::ipm::{self, IpmOptions};
use crate::poly::{normalize, Exponent, SparsePolynomial};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("requested {requested} interior monomials but only {available} exist for n={n}, d={d}")]
    NotEnoughInteriorMonomials {
        requested: usize,
        available: usize,
        n: usize,
        d: u32,
    },
    #[error("degree must be a positive even integer, got {0}")]
    OddDegree(u32),
    #[error("instance construction produced an invalid polynomial: {0}")]
    Poly(#[from] crate::poly::PolyError),
    #[error(transparent)]
    Enumeration(#[from] CircuitError),
    #[error("oracle solve failed: {0}")]
    Bound(#[from] bound::BoundError),
}

/// Parameters of the random simplex-support generator.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub n: usize,
    /// Even total degree of the simplex anchors `x_i^d`.
    pub d: u32,
    /// Number of interior monomials to sample.
    pub term_count: usize,
    /// Inclusive coefficient range for the anchors (positive).
    pub vertex_coef_range: (i32, i32),
    /// Inclusive coefficient range for interior terms; zero is re-rolled.
    pub interior_coef_range: (i32, i32),
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(n: usize, d: u32, term_count: usize, seed: u64) -> Self {
        GeneratorSpec {
            n,
            d,
            term_count,
            vertex_coef_range: (1, 5),
            interior_coef_range: (-5, 5),
            seed,
        }
    }
}

/// All componentwise-even exponents of total degree `0 < |α| < d`, in
/// degree-lex order.
pub fn interior_even_exponents(n: usize, d: u32) -> Vec<Exponent> {
    let mut out = Vec::new();
    let half = ((d as i64 - 1) / 2) as u32;
    let mut current = vec![0u32; n];
    enumerate_bounded(&mut current, 0, half, &mut out);
    out.retain(|e| !e.is_origin());
    out.sort();
    out
}

fn enumerate_bounded(current: &mut Vec<u32>, pos: usize, budget: u32, out: &mut Vec<Exponent>) {
    if pos == current.len() {
        out.push(Exponent::new(current.iter().map(|&h| 2 * h).collect()));
        return;
    }
    for v in 0..=budget {
        current[pos] = v;
        enumerate_bounded(current, pos + 1, budget - v, out);
    }
    current[pos] = 0;
}

/// Deterministic instance generation.
///
/// Draw order is fixed: the constant coefficient, then each anchor
/// coefficient in axis order, then a partial Fisher–Yates sample of the
/// interior grid, then one coefficient per sampled exponent in selection
/// order. The ChaCha8 stream makes runs reproducible across platforms for
/// a fixed seed.
pub fn generate(spec: &GeneratorSpec) -> Result<SparsePolynomial, InstanceError> {
    if spec.d == 0 || spec.d % 2 != 0 {
        return Err(InstanceError::OddDegree(spec.d));
    }
    let candidates = interior_even_exponents(spec.n, spec.d);
    if spec.term_count > candidates.len() {
        return Err(InstanceError::NotEnoughInteriorMonomials {
            requested: spec.term_count,
            available: candidates.len(),
            n: spec.n,
            d: spec.d,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (vlo, vhi) = spec.vertex_coef_range;
    let mut raw: Vec<(Vec<u32>, f64)> = Vec::new();
    raw.push((vec![0; spec.n], f64::from(rng.gen_range(vlo..=vhi))));
    for i in 0..spec.n {
        let mut anchor = vec![0u32; spec.n];
        anchor[i] = spec.d;
        raw.push((anchor, f64::from(rng.gen_range(vlo..=vhi))));
    }
    let mut picked = candidates;
    picked.partial_shuffle(&mut rng, spec.term_count);
    let (ilo, ihi) = spec.interior_coef_range;
    for e in picked.into_iter().take(spec.term_count) {
        let coef = loop {
            let c = rng.gen_range(ilo..=ihi);
            if c != 0 {
                break c;
            }
        };
        raw.push((e.entries().to_vec(), f64::from(coef)));
    }
    Ok(normalize(&raw)?)
}

/// Independent bound oracle: solves the phase-two dual once with *every*
/// circuit supported on the polynomial. Only viable for small supports.
pub fn oracle_bound(p: &SparsePolynomial) -> Result<Result<f64, NoSoncBound>, InstanceError> {
    let layout = SupportLayout::new(p);
    let vertices = p.newton_vertices()?;
    match bound::initial_circuits(p, &layout, &vertices)? {
        Ok(_) => {}
        Err(no) => return Ok(Err(no)),
    }
    let all = enumerate_circuits(p, None)?;
    let prob = bound::assemble_dual(p, &layout, &all, PhaseMode::Phase2, &vertices)?;
    let theta = default_slater_theta(layout.exponents());
    let start = slater_point(layout.exponents(), PhaseMode::Phase2, theta);
    let opts = IpmOptions {
        gap_tol: 1e-9,
        ..IpmOptions::default()
    };
    let sol = ipm::solve_conic(&prob, &nalgebra::DVector::from_vec(start), &opts)
        .map_err(|e| bound::BoundError::Ipm { round: 0, source: e })?;
    // min fᵀy = −γ*, the bound itself.
    Ok(Ok(sol.objective))
}

/// Result of [`local_upper_bound`].
#[derive(Debug, Clone)]
pub struct LocalMinimum {
    pub value: f64,
    pub argmin: Vec<f64>,
    /// True when every restart diverged and the +∞ sentinel was returned.
    pub all_diverged: bool,
}

/// Multi-start gradient descent with backtracking line search, restarts
/// uniform in [−2, 2]^n. Divergent runs are discarded; ties in the final
/// value break to the lexicographically smallest argmin so the reduction
/// over restarts is deterministic.
pub fn local_upper_bound(p: &SparsePolynomial, starts: usize, seed: u64) -> LocalMinimum {
    assert!(starts >= 1);
    let n = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..starts {
        let start: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if let Some((value, argmin)) = descend(p, start) {
            let better = match &best {
                None => true,
                Some((bv, bx)) => {
                    value < bv - 1e-12 || ((value - bv).abs() <= 1e-12 && lex_less(&argmin, bx))
                }
            };
            if better {
                best = Some((value, argmin));
            }
        }
    }
    match best {
        Some((value, argmin)) => LocalMinimum {
            value,
            argmin,
            all_diverged: false,
        },
        None => LocalMinimum {
            value: f64::INFINITY,
            argmin: vec![f64::NAN; n],
            all_diverged: true,
        },
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn descend(p: &SparsePolynomial, mut z: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    let mut value = p.evaluate(&z);
    if !value.is_finite() {
        return None;
    }
    let mut step = 1.0f64;
    let mut converged = false;
    for _ in 0..5000 {
        let grad = p.gradient(&z);
        let grad_norm_sq: f64 = grad.iter().map(|g| g * g).sum();
        let grad_norm = grad_norm_sq.sqrt();
        if grad_norm <= 1e-10 * (1.0 + value.abs()) {
            converged = true;
            break;
        }
        // Armijo backtracking from the last accepted step size.
        step = (step * 4.0).min(1.0);
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = z.iter().zip(&grad).map(|(zi, gi)| zi - step * gi).collect();
            let cand_value = p.evaluate(&candidate);
            if cand_value.is_finite() && cand_value <= value - 1e-4 * step * grad_norm_sq {
                z = candidate;
                value = cand_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Line search exhausted at machine precision: stationary enough.
            converged = true;
            break;
        }
        if z.iter().any(|x| x.abs() > 1e6) || value < -1e12 {
            return None;
        }
    }
    // Runs that hit the iteration cap with a large gradient are drifting
    // along an unbounded direction; discard them like overt divergence.
    if converged {
        Some((value, z))
    } else {
        None
    }
}
