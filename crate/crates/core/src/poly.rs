//! Sparse multivariate polynomials: support classification, Newton-polytope
//! vertices, and evaluation.
//!
//! Exponents are ordered degree-lexicographically throughout the crate, so
//! every map over the support iterates in a platform-independent order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LpProblem, LpStatus};

/// Largest admissible entry of an exponent vector.
pub const MAX_EXPONENT_ENTRY: u32 = i32::MAX as u32;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("duplicate exponent {0}")]
    DuplicateExponent(Exponent),
    #[error("exponent {exponent} has {found} entries, expected {expected}")]
    DimensionMismatch {
        exponent: Exponent,
        expected: usize,
        found: usize,
    },
    #[error("exponent entry {0} exceeds the supported range")]
    ExponentEntryTooLarge(u32),
    #[error("polynomial must have at least one term")]
    EmptyPolynomial,
    #[error("coefficient for {0} is not finite")]
    NonFiniteCoefficient(Exponent),
    #[error("linear program failed while detecting vertices: {0}")]
    LpNumericalFailure(#[from] lp::LpError),
}

/// A monomial exponent vector with degree-lexicographic ordering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Exponent(Vec<u32>);

impl Exponent {
    pub fn new(entries: Vec<u32>) -> Self {
        Exponent(entries)
    }

    /// The all-zero exponent of dimension `n`.
    pub fn origin(n: usize) -> Self {
        Exponent(vec![0; n])
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total_degree(&self) -> u64 {
        self.0.iter().map(|&e| u64::from(e)).sum()
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// True when every entry is even, i.e. the exponent lies in (2N)^n.
    pub fn is_even(&self) -> bool {
        self.0.iter().all(|&e| e % 2 == 0)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&e| f64::from(e)).collect()
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl Ord for Exponent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Exponent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A sparse polynomial in `n` unknowns, keyed by exponent.
///
/// The origin is always present after [`normalize`]; it is the only exponent
/// allowed to carry a zero coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePolynomial {
    n: usize,
    terms: BTreeMap<Exponent, f64>,
}

/// Partition of the support produced by [`SparsePolynomial::classify_support`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportClassification {
    pub even: BTreeSet<Exponent>,
    pub odd: BTreeSet<Exponent>,
    /// Even exponents whose coefficient is strictly positive.
    pub monomial_squares: BTreeSet<Exponent>,
}

/// Builds a polynomial from raw terms, materializing the origin.
///
/// Zero coefficients on non-origin exponents are dropped; a zero coefficient
/// on the origin is kept so the constant term is always addressable.
pub fn normalize(raw_terms: &[(Vec<u32>, f64)]) -> Result<SparsePolynomial, PolyError> {
    let Some((first, _)) = raw_terms.first() else {
        return Err(PolyError::EmptyPolynomial);
    };
    let n = first.len();
    if n == 0 {
        return Err(PolyError::EmptyPolynomial);
    }
    let mut terms = BTreeMap::new();
    for (entries, coef) in raw_terms {
        if entries.len() != n {
            return Err(PolyError::DimensionMismatch {
                exponent: Exponent::new(entries.clone()),
                expected: n,
                found: entries.len(),
            });
        }
        if let Some(&e) = entries.iter().find(|&&e| e > MAX_EXPONENT_ENTRY) {
            return Err(PolyError::ExponentEntryTooLarge(e));
        }
        let exp = Exponent::new(entries.clone());
        if !coef.is_finite() {
            return Err(PolyError::NonFiniteCoefficient(exp));
        }
        if terms.insert(exp.clone(), *coef).is_some() {
            return Err(PolyError::DuplicateExponent(exp));
        }
    }
    terms.retain(|exp, coef| *coef != 0.0 || exp.is_origin());
    terms.entry(Exponent::origin(n)).or_insert(0.0);
    Ok(SparsePolynomial { n, terms })
}

impl SparsePolynomial {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Support exponents in degree-lex order, origin first.
    pub fn support(&self) -> impl Iterator<Item = &Exponent> {
        self.terms.keys()
    }

    pub fn support_len(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, exp: &Exponent) -> f64 {
        self.terms.get(exp).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, f64)> {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn constant_coefficient(&self) -> f64 {
        self.coefficient(&Exponent::origin(self.n))
    }

    /// `1 + Σ|f_α|`, the coefficient scale used for relative tolerances.
    pub fn coefficient_scale(&self) -> f64 {
        1.0 + self.terms.values().map(|c| c.abs()).sum::<f64>()
    }

    /// Returns a copy with `shift` added to the constant coefficient.
    pub fn with_constant_shift(&self, shift: f64) -> SparsePolynomial {
        let mut out = self.clone();
        *out.terms.get_mut(&Exponent::origin(self.n)).expect("origin present") += shift;
        out
    }

    /// Splits the support into even/odd exponents and identifies monomial
    /// squares (even exponent, strictly positive coefficient).
    pub fn classify_support(&self) -> SupportClassification {
        let mut even = BTreeSet::new();
        let mut odd = BTreeSet::new();
        let mut monomial_squares = BTreeSet::new();
        for (exp, &coef) in &self.terms {
            if exp.is_even() {
                even.insert(exp.clone());
                if coef > 0.0 {
                    monomial_squares.insert(exp.clone());
                }
            } else {
                odd.insert(exp.clone());
            }
        }
        SupportClassification {
            even,
            odd,
            monomial_squares,
        }
    }

    /// Vertices of the Newton polytope, i.e. the support exponents that are
    /// extreme points of the convex hull of the support.
    ///
    /// Each point is tested by one small LP: `α` fails to be a vertex exactly
    /// when it is a convex combination of the remaining support points.
    pub fn newton_vertices(&self) -> Result<BTreeSet<Exponent>, PolyError> {
        let support: Vec<&Exponent> = self.terms.keys().collect();
        let mut vertices = BTreeSet::new();
        for (i, candidate) in support.iter().enumerate() {
            let others: Vec<&Exponent> = support
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, e)| *e)
                .collect();
            if others.is_empty() || !in_convex_hull(candidate, &others)? {
                vertices.insert((*candidate).clone());
            }
        }
        Ok(vertices)
    }

    /// Evaluates the polynomial at `z`, with the convention `0^0 = 1`.
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.n, "evaluation point has wrong dimension");
        self.terms
            .iter()
            .map(|(exp, &coef)| coef * monomial_value(exp, z))
            .sum()
    }

    /// Analytic gradient of the polynomial at `z`.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n, "evaluation point has wrong dimension");
        let mut grad = vec![0.0; self.n];
        for (exp, &coef) in &self.terms {
            for (i, &e) in exp.entries().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut partial = coef * f64::from(e);
                for (j, &ej) in exp.entries().iter().enumerate() {
                    let pow = if i == j { ej - 1 } else { ej };
                    partial *= z[j].powi(pow as i32);
                }
                grad[i] += partial;
            }
        }
        grad
    }
}

fn monomial_value(exp: &Exponent, z: &[f64]) -> f64 {
    exp.entries()
        .iter()
        .zip(z)
        .map(|(&e, &zi)| zi.powi(e as i32))
        .product()
}

/// LP feasibility test: is `point` a convex combination of `generators`?
fn in_convex_hull(point: &Exponent, generators: &[&Exponent]) -> Result<bool, PolyError> {
    let n = point.dim();
    let k = generators.len();
    let m = n + 1;
    let mut a = nalgebra::DMatrix::zeros(m, k);
    for (col, g) in generators.iter().enumerate() {
        for (row, &e) in g.entries().iter().enumerate() {
            a[(row, col)] = f64::from(e);
        }
        a[(n, col)] = 1.0;
    }
    let mut b = nalgebra::DVector::zeros(m);
    for (row, &e) in point.entries().iter().enumerate() {
        b[row] = f64::from(e);
    }
    b[n] = 1.0;
    let prob = LpProblem {
        a,
        b,
        c: nalgebra::DVector::zeros(k),
    };
    let result = lp::solve_lp(&prob, lp::DEFAULT_FEAS_TOL)?;
    Ok(result.status == LpStatus::Optimal)
}

/// JSON file format: `{"n": ..., "terms": [{"exp": [...], "coef": ...}, ...]}`.
#[derive(Debug, Serialize, Deserialize)]
struct PolyFile {
    n: usize,
    terms: Vec<PolyFileTerm>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolyFileTerm {
    exp: Vec<u32>,
    coef: f64,
}

#[derive(Debug, Error)]
pub enum PolyFormatError {
    #[error("invalid polynomial JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

pub fn from_json(text: &str) -> Result<SparsePolynomial, PolyFormatError> {
    let file: PolyFile = serde_json::from_str(text)?;
    for term in &file.terms {
        if term.exp.len() != file.n {
            return Err(PolyError::DimensionMismatch {
                exponent: Exponent::new(term.exp.clone()),
                expected: file.n,
                found: term.exp.len(),
            }
            .into());
        }
    }
    let raw: Vec<(Vec<u32>, f64)> = file.terms.into_iter().map(|t| (t.exp, t.coef)).collect();
    if raw.is_empty() {
        // An empty term list still denotes the zero polynomial in n unknowns.
        if file.n == 0 {
            return Err(PolyError::EmptyPolynomial.into());
        }
        return Ok(normalize(&[(vec![0; file.n], 0.0)])?);
    }
    Ok(normalize(&raw)?)
}

pub fn to_json(p: &SparsePolynomial) -> String {
    let file = PolyFile {
        n: p.dim(),
        terms: p
            .terms()
            .map(|(exp, coef)| PolyFileTerm {
                exp: exp.entries().to_vec(),
                coef,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("polynomial serialization cannot fail")
}
