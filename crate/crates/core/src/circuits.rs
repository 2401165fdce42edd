//! Circuits: an affinely independent set of even outer exponents together
//! with an inner exponent that is a strictly positive convex combination of
//! them. The barycentric weights (the signature) are unique and determine
//! the nonnegativity condition for polynomials supported on the circuit.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::poly::{Exponent, SparsePolynomial};

/// Residual tolerance for the barycentric system.
pub const BARYCENTRIC_RESIDUAL_TOL: f64 = 1e-9;
/// Weights at or below this threshold do not count as strictly positive.
pub const WEIGHT_TOL: f64 = 1e-10;
/// Enumeration guard: exponential subset search beyond this support size is refused.
pub const MAX_ENUMERATION_SUPPORT: usize = 14;

#[derive(Debug, Error, PartialEq)]
pub enum CircuitError {
    #[error("outer exponents are not affinely independent")]
    NotAffinelyIndependent,
    #[error("inner exponent is not a strictly interior point of the outer exponents")]
    InnerNotInteriorPoint,
    #[error("outer exponent {0} has an odd entry")]
    OddOuterExponent(Exponent),
    #[error("exponent dimensions disagree")]
    DimensionMismatch,
    #[error("support of size {0} is too large to enumerate (limit {MAX_ENUMERATION_SUPPORT})")]
    SupportTooLargeForEnumeration(usize),
}

/// A validated circuit. Constructed only through [`make_circuit`], so the
/// signature invariants (positivity, unit sum, residual bound) always hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    outer: Vec<Exponent>,
    inner: Exponent,
    signature: Vec<f64>,
}

impl Circuit {
    /// Outer exponents in degree-lex order, matching the signature order.
    pub fn outer(&self) -> &[Exponent] {
        &self.outer
    }

    pub fn inner(&self) -> &Exponent {
        &self.inner
    }

    pub fn signature(&self) -> &[f64] {
        &self.signature
    }

    pub fn order(&self) -> usize {
        self.outer.len()
    }

    /// All exponents of the circuit: outer first, inner last.
    pub fn exponents(&self) -> impl Iterator<Item = &Exponent> {
        self.outer.iter().chain(std::iter::once(&self.inner))
    }

    /// Canonical identity used for duplicate elimination.
    pub fn key(&self) -> (Vec<Exponent>, Exponent) {
        (self.outer.clone(), self.inner.clone())
    }
}

/// Coefficients of a polynomial supported on a circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitPolyCoeffs {
    pub outer: Vec<f64>,
    pub inner: f64,
}

/// Solves the barycentric system for the inner exponent and validates every
/// circuit invariant. The outer set is sorted degree-lex first, so equal
/// sets always produce identical circuits.
pub fn make_circuit(outer: &[Exponent], inner: &Exponent) -> Result<Circuit, CircuitError> {
    if outer.is_empty() {
        return Err(CircuitError::InnerNotInteriorPoint);
    }
    let n = inner.dim();
    if outer.iter().any(|e| e.dim() != n) {
        return Err(CircuitError::DimensionMismatch);
    }
    let mut outer: Vec<Exponent> = outer.to_vec();
    outer.sort();
    outer.dedup();
    let r = outer.len();
    if r < 2 {
        return Err(CircuitError::InnerNotInteriorPoint);
    }
    if outer.iter().any(|e| e == inner) {
        return Err(CircuitError::InnerNotInteriorPoint);
    }
    if let Some(bad) = outer.iter().find(|e| !e.is_even()) {
        return Err(CircuitError::OddOuterExponent(bad.clone()));
    }

    // Stacked system [α_i; 1] λ = [β; 1].
    let mut m = DMatrix::zeros(n + 1, r);
    for (col, e) in outer.iter().enumerate() {
        for (row, &v) in e.entries().iter().enumerate() {
            m[(row, col)] = f64::from(v);
        }
        m[(n, col)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    for (row, &v) in inner.entries().iter().enumerate() {
        rhs[row] = f64::from(v);
    }
    rhs[n] = 1.0;

    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank_tol = max_sv * (n + 1).max(r) as f64 * f64::EPSILON * 16.0;
    if svd.rank(rank_tol) < r {
        return Err(CircuitError::NotAffinelyIndependent);
    }
    let lambda = svd
        .solve(&rhs, rank_tol)
        .map_err(|_| CircuitError::NotAffinelyIndependent)?;

    let residual = (&m * &lambda - &rhs).amax();
    if residual > BARYCENTRIC_RESIDUAL_TOL {
        return Err(CircuitError::InnerNotInteriorPoint);
    }
    if lambda.iter().any(|&l| l <= WEIGHT_TOL) {
        return Err(CircuitError::InnerNotInteriorPoint);
    }
    Ok(Circuit {
        outer,
        inner: inner.clone(),
        signature: lambda.iter().copied().collect(),
    })
}

/// Margin of the circuit-polynomial nonnegativity condition:
/// `Π (f_{α_i}/λ_i)^{λ_i} − |f_β|`, computed in log space.
///
/// `nonneg` is true when the margin is nonnegative, or when the inner
/// exponent is even and its coefficient nonnegative (the monomial-square
/// alternative). A nonpositive outer coefficient forces `nonneg = false`
/// with a `-∞` margin sentinel.
pub fn nonnegativity_margin(circuit: &Circuit, coeffs: &CircuitPolyCoeffs) -> (f64, bool) {
    assert_eq!(coeffs.outer.len(), circuit.order(), "coefficient arity mismatch");
    if coeffs.outer.iter().any(|&c| c <= 0.0) {
        return (f64::NEG_INFINITY, false);
    }
    let log_bound: f64 = circuit
        .signature()
        .iter()
        .zip(&coeffs.outer)
        .map(|(&l, &c)| l * (c / l).ln())
        .sum();
    let margin = log_bound.exp() - coeffs.inner.abs();
    let even_alternative = circuit.inner().is_even() && coeffs.inner >= 0.0;
    (margin, margin >= 0.0 || even_alternative)
}

/// Exhaustively enumerates the circuits supported on `p`: every subset of
/// the even support of size 2..=n+1 as outer candidates, every remaining
/// support point (or just `inner_only`) as the inner exponent.
pub fn enumerate_circuits(
    p: &SparsePolynomial,
    inner_only: Option<&Exponent>,
) -> Result<Vec<Circuit>, CircuitError> {
    if p.support_len() > MAX_ENUMERATION_SUPPORT {
        return Err(CircuitError::SupportTooLargeForEnumeration(p.support_len()));
    }
    let cls = p.classify_support();
    let even: Vec<Exponent> = cls.even.iter().cloned().collect();
    let inners: Vec<Exponent> = match inner_only {
        Some(b) => vec![b.clone()],
        None => p.support().cloned().collect(),
    };
    let max_size = (p.dim() + 1).min(even.len());
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for size in 2..=max_size {
        for subset in combinations(&even, size) {
            for inner in &inners {
                if subset.iter().any(|e| *e == inner) {
                    continue;
                }
                let outer: Vec<Exponent> = subset.iter().map(|e| (*e).clone()).collect();
                if let Ok(c) = make_circuit(&outer, inner) {
                    if seen.insert(c.key()) {
                        out.push(c);
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(out)
}

fn combinations<T>(items: &[T], size: usize) -> Vec<Vec<&T>> {
    let mut out = Vec::new();
    if size > items.len() {
        return out;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(idx.iter().map(|&i| &items[i]).collect());
        let mut i = size;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + items.len() - size {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::normalize;

    fn exp(entries: &[u32]) -> Exponent {
        Exponent::new(entries.to_vec())
    }

    #[test]
    fn circuit_c1_signature() {
        let c = make_circuit(
            &[exp(&[0, 0]), exp(&[2, 6]), exp(&[6, 2])],
            &exp(&[2, 2]),
        )
        .unwrap();
        let sig = c.signature();
        assert!((sig[0] - 0.5).abs() < 1e-12);
        assert!((sig[1] - 0.25).abs() < 1e-12);
        assert!((sig[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn circuit_c2_signature() {
        let c = make_circuit(&[exp(&[0, 2]), exp(&[6, 2])], &exp(&[2, 2])).unwrap();
        let sig = c.signature();
        assert!((sig[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((sig[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn inner_equal_to_outer_is_rejected() {
        let err = make_circuit(&[exp(&[0, 0]), exp(&[4, 0])], &exp(&[4, 0])).unwrap_err();
        assert_eq!(err, CircuitError::InnerNotInteriorPoint);
    }

    #[test]
    fn inner_outside_hull_is_rejected() {
        let err = make_circuit(&[exp(&[0]), exp(&[2])], &exp(&[4])).unwrap_err();
        assert_eq!(err, CircuitError::InnerNotInteriorPoint);
    }

    #[test]
    fn odd_outer_is_rejected() {
        let err = make_circuit(&[exp(&[0, 0]), exp(&[1, 1])], &exp(&[1, 0])).unwrap_err();
        assert!(matches!(err, CircuitError::OddOuterExponent(_)));
    }

    #[test]
    fn dependent_outers_are_rejected() {
        // Four points in the plane are never affinely independent.
        let err = make_circuit(
            &[exp(&[0, 0]), exp(&[2, 0]), exp(&[0, 2]), exp(&[2, 2])],
            &exp(&[1, 1]),
        )
        .unwrap_err();
        assert_eq!(err, CircuitError::NotAffinelyIndependent);
    }

    #[test]
    fn margin_of_tight_c1_coefficients_is_zero() {
        let c = make_circuit(
            &[exp(&[0, 0]), exp(&[2, 6]), exp(&[6, 2])],
            &exp(&[2, 2]),
        )
        .unwrap();
        let (margin, nonneg) = nonnegativity_margin(
            &c,
            &CircuitPolyCoeffs {
                outer: vec![0.125, 1.0, 1.0],
                inner: -1.0,
            },
        );
        assert!(margin.abs() < 1e-12, "margin {margin}");
        assert!(nonneg);
    }

    #[test]
    fn margin_of_c2_unit_coefficients() {
        let c = make_circuit(&[exp(&[0, 2]), exp(&[6, 2])], &exp(&[2, 2])).unwrap();
        let (margin, nonneg) = nonnegativity_margin(
            &c,
            &CircuitPolyCoeffs {
                outer: vec![1.0, 1.0],
                inner: -1.0,
            },
        );
        let expected = (1.5f64).powf(2.0 / 3.0) * (3.0f64).powf(1.0 / 3.0) - 1.0;
        assert!((margin - expected).abs() < 1e-12);
        assert!((margin - 0.8898815748423097).abs() < 1e-12);
        assert!(nonneg);
    }

    #[test]
    fn even_inner_with_positive_coefficient_is_nonneg_regardless_of_margin() {
        let c = make_circuit(&[exp(&[0, 2]), exp(&[6, 2])], &exp(&[2, 2])).unwrap();
        let (margin, nonneg) = nonnegativity_margin(
            &c,
            &CircuitPolyCoeffs {
                outer: vec![1.0, 1.0],
                inner: 5.0,
            },
        );
        assert!(margin < 0.0);
        assert!(nonneg);
    }

    #[test]
    fn nonpositive_outer_coefficient_is_never_nonneg() {
        let c = make_circuit(&[exp(&[0, 2]), exp(&[6, 2])], &exp(&[2, 2])).unwrap();
        let (margin, nonneg) = nonnegativity_margin(
            &c,
            &CircuitPolyCoeffs {
                outer: vec![0.0, 1.0],
                inner: -1.0,
            },
        );
        assert!(margin == f64::NEG_INFINITY);
        assert!(!nonneg);
    }

    /// The support of the 2^n-circuit construction: 0, the all-ones vector,
    /// and 2n·e_i, 4n·e_i on every axis.
    fn many_circuits_support(n: usize) -> SparsePolynomial {
        let mut raw: Vec<(Vec<u32>, f64)> = vec![(vec![0; n], 1.0), (vec![1; n], -1.0)];
        for i in 0..n {
            let mut lo = vec![0u32; n];
            let mut hi = vec![0u32; n];
            lo[i] = 2 * n as u32;
            hi[i] = 4 * n as u32;
            raw.push((lo, 1.0));
            raw.push((hi, 1.0));
        }
        normalize(&raw).unwrap()
    }

    #[test]
    fn enumerate_finds_two_to_the_n_circuits_with_all_ones_inner() {
        for n in 2..=3usize {
            let p = many_circuits_support(n);
            let inner = Exponent::new(vec![1; n]);
            let circuits = enumerate_circuits(&p, Some(&inner)).unwrap();
            assert_eq!(circuits.len(), 1 << n, "n = {n}");
            for c in &circuits {
                assert!(c.outer().iter().any(|e| e.is_origin()));
            }
        }
    }

    #[test]
    fn enumerate_empty_when_no_interior_point() {
        let p = normalize(&[(vec![0], 1.0), (vec![4], 1.0)]).unwrap();
        assert!(enumerate_circuits(&p, None).unwrap().is_empty());
    }

    #[test]
    fn enumerate_univariate_three_points() {
        let p = normalize(&[(vec![0], 1.0), (vec![2], -1.0), (vec![4], 1.0)]).unwrap();
        let circuits = enumerate_circuits(&p, None).unwrap();
        assert_eq!(circuits.len(), 1);
        let c = &circuits[0];
        assert_eq!(c.inner(), &exp(&[2]));
        assert_eq!(c.outer(), &[exp(&[0]), exp(&[4])]);
        assert!((c.signature()[0] - 0.5).abs() < 1e-12);
        assert!((c.signature()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn enumerate_guard_rejects_large_supports() {
        let raw: Vec<(Vec<u32>, f64)> = (0..16u32).map(|i| (vec![2 * i], 1.0)).collect();
        let p = normalize(&raw).unwrap();
        assert!(matches!(
            enumerate_circuits(&p, None),
            Err(CircuitError::SupportTooLargeForEnumeration(_))
        ));
    }

    #[test]
    fn signature_round_trips_on_random_circuits() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut built = 0;
        let mut attempts = 0;
        while built < 50 {
            attempts += 1;
            assert!(attempts < 10_000, "construction kept failing");
            let n = rng.gen_range(1..=4usize);
            let r = rng.gen_range(2..=(n + 1));
            // Integer weights k_i over scaled even base points K·γ_i keep the
            // barycenter β = Σ k_i γ_i on the lattice with known signature
            // λ_i = k_i / K.
            let weights: Vec<u32> = (0..r).map(|_| rng.gen_range(1..=4u32)).collect();
            let total: u32 = weights.iter().sum();
            let base: Vec<Vec<u32>> = (0..r)
                .map(|_| (0..n).map(|_| 2 * rng.gen_range(0..4u32)).collect())
                .collect();
            let outer: Vec<Exponent> = base
                .iter()
                .map(|g| Exponent::new(g.iter().map(|&x| total * x).collect()))
                .collect();
            let inner_entries: Vec<u32> = (0..n)
                .map(|j| base.iter().zip(&weights).map(|(g, &k)| k * g[j]).sum())
                .collect();
            let inner = Exponent::new(inner_entries);
            if outer.iter().any(|e| *e == inner) {
                continue;
            }
            let Ok(c) = make_circuit(&outer, &inner) else {
                continue;
            };
            // Recovered signature must be the k/K weights of the matching
            // outer points (make_circuit sorts them).
            for (e, &l) in c.outer().iter().zip(c.signature()) {
                let expected: f64 = outer
                    .iter()
                    .zip(&weights)
                    .filter(|(o, _)| *o == e)
                    .map(|(_, &k)| f64::from(k) / f64::from(total))
                    .sum();
                assert!(
                    (l - expected).abs() <= 1e-9,
                    "weight {l} vs expected {expected}"
                );
            }
            let sum: f64 = c.signature().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            built += 1;
        }
    }

    #[test]
    fn margin_scales_linearly_with_coefficients() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let c = make_circuit(
            &[exp(&[0, 0]), exp(&[2, 6]), exp(&[6, 2])],
            &exp(&[2, 2]),
        )
        .unwrap();
        for _ in 0..50 {
            let coeffs = CircuitPolyCoeffs {
                outer: (0..3).map(|_| rng.gen_range(0.1..4.0)).collect(),
                inner: rng.gen_range(-3.0..3.0),
            };
            let t: f64 = rng.gen_range(0.1..5.0);
            let scaled = CircuitPolyCoeffs {
                outer: coeffs.outer.iter().map(|&x| t * x).collect(),
                inner: t * coeffs.inner,
            };
            let (m1, _) = nonnegativity_margin(&c, &coeffs);
            let (m2, _) = nonnegativity_margin(&c, &scaled);
            assert!((m2 - t * m1).abs() <= 1e-9 * (1.0 + m2.abs()));
        }
    }

    #[test]
    fn nonnegative_margin_implies_pointwise_nonnegativity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let c = make_circuit(
            &[exp(&[0, 0]), exp(&[2, 6]), exp(&[6, 2])],
            &exp(&[2, 2]),
        )
        .unwrap();
        let mut positive_cases = 0;
        while positive_cases < 10 {
            let coeffs = CircuitPolyCoeffs {
                outer: (0..3).map(|_| rng.gen_range(0.1..3.0)).collect(),
                inner: rng.gen_range(-3.0..0.0),
            };
            let (margin, nonneg) = nonnegativity_margin(&c, &coeffs);
            if !nonneg || margin < 0.0 {
                continue;
            }
            positive_cases += 1;
            let raw: Vec<(Vec<u32>, f64)> = c
                .outer()
                .iter()
                .zip(&coeffs.outer)
                .map(|(e, &v)| (e.entries().to_vec(), v))
                .chain(std::iter::once((
                    c.inner().entries().to_vec(),
                    coeffs.inner,
                )))
                .collect();
            let p = normalize(&raw).unwrap();
            let scale: f64 = coeffs.outer.iter().sum::<f64>() + coeffs.inner.abs();
            for _ in 0..2000 {
                let z = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let v = p.evaluate(&z);
                assert!(v >= -1e-9 * scale, "negative value {v} at {z:?}");
            }
        }
    }

    #[test]
    fn enumerated_signatures_are_vertices_of_the_barycentric_polytope() {
        // Lemma-style consistency: the signature is the unique barycentric
        // solution on its (affinely independent) support, i.e. a basic
        // feasible solution of the combination polytope.
        let p = many_circuits_support(2);
        let inner = Exponent::new(vec![1, 1]);
        for c in enumerate_circuits(&p, Some(&inner)).unwrap() {
            let n = 2;
            let r = c.order();
            let mut m = DMatrix::zeros(n + 1, r);
            for (col, e) in c.outer().iter().enumerate() {
                for (row, &v) in e.entries().iter().enumerate() {
                    m[(row, col)] = f64::from(v);
                }
                m[(n, col)] = 1.0;
            }
            assert_eq!(m.rank(1e-9), r, "support columns must be independent");
            for &l in c.signature() {
                assert!(l > 0.0 && l < 1.0 + 1e-12);
            }
        }
    }
}
