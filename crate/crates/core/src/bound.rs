//! The bound driver: assembles the dual conic problems, generates circuits
//! by pricing until no power-cone inequality is violated, and extracts a
//! verified decomposition certificate from the dual multipliers.
//!
//! Two phases, as in two-phase simplex. Phase one decides whether `f + c`
//! decomposes at all for a configurable shift `c`, padding every
//! Newton-polytope vertex; its circuit set seeds phase two, which maximizes
//! the certified shift γ with only the constant term padded. A reported
//! bound is always `−γ` of a certificate that passed [`verify_certificate`];
//! dual objective values are surfaced only as diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuits::{self, make_circuit, nonnegativity_margin, Circuit, CircuitPolyCoeffs};
use crate::cones::{default_slater_theta, slater_point, ConeAtom, ConeKind, PhaseMode};
use crate::ipm::{self, ConicProblem, IpmOptions, IpmSolution};
use crate::lp::{self, LpProblem, LpStatus};
use crate::poly::{Exponent, SparsePolynomial};

/// Floor applied to dual components inside the pricing objective; the exact
/// objective is −∞ at zero, and the clamp keeps every circuit through a
/// zero component maximally attractive without destroying the LP.
pub const PRICING_LOG_FLOOR: f64 = 1e-12;

/// Coefficient mass below `droptol = 1e-7·scale` is folded into the
/// residual instead of kept as a certificate term.
const DROP_TOL_REL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("circuit exponent {0} is not on the support")]
    CircuitNotOnSupport(Exponent),
    #[error("linear programming failure: {0}")]
    Lp(#[from] lp::LpError),
    #[error("interior-point failure in round {round}: {source}")]
    Ipm {
        round: usize,
        #[source]
        source: ipm::IpmError,
    },
    #[error("vertex detection failed: {0}")]
    Poly(#[from] crate::poly::PolyError),
    #[error("certificate polish left residual {residual:.3e} above tolerance {tol:.3e}")]
    PolishFailed { residual: f64, tol: f64 },
}

/// Why no SONC bound exists (or could be established) for the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoSoncBound {
    /// A Newton-polytope vertex has an odd entry; its coefficient can never
    /// be matched by squares or outer terms.
    OddVertex(Exponent),
    /// A non-origin vertex carries a negative coefficient.
    NegativeVertexCoefficient(Exponent),
    /// No circuit with this inner exponent fits inside the vertex hull.
    UncoverableExponent(Exponent),
    /// Phase one terminated with a strictly positive existence optimum:
    /// `f + shift` has no decomposition, so no bound better than `−shift`
    /// can be certified.
    PhaseOneInfeasible { shift: f64, optimum: f64 },
}

impl std::fmt::Display for NoSoncBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoSoncBound::OddVertex(e) => write!(f, "odd exponent {e} is a Newton-polytope vertex"),
            NoSoncBound::NegativeVertexCoefficient(e) => {
                write!(f, "Newton-polytope vertex {e} has a negative coefficient")
            }
            NoSoncBound::UncoverableExponent(e) => {
                write!(f, "no circuit with inner exponent {e} fits in the vertex hull")
            }
            NoSoncBound::PhaseOneInfeasible { shift, optimum } => write!(
                f,
                "phase one optimum {optimum:.3e} > 0: f + {shift} has no decomposition"
            ),
        }
    }
}

/// A decomposition certificate: `f + γ = Σ_j p_j + Σ δ_α z^α` with every
/// `p_j` a nonnegative circuit polynomial and every `δ_α ≥ 0` on an even
/// exponent. The certified lower bound on `f` is `−γ`.
#[derive(Debug, Clone)]
pub struct SoncCertificate {
    pub gamma: f64,
    pub circuit_terms: Vec<(Circuit, CircuitPolyCoeffs)>,
    pub square_terms: BTreeMap<Exponent, f64>,
    /// ∞-norm of the coefficient identity residual after polishing.
    pub residual: f64,
}

impl SoncCertificate {
    pub fn bound(&self) -> f64 {
        -self.gamma
    }
}

/// Verification outcome; `valid` is the sole authority for reporting bounds.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub valid: bool,
    pub residual: f64,
    /// Smallest circuit-term margin (+∞ when there are none).
    pub min_margin: f64,
    pub details: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    NoViolatedCircuit,
    IterationCap,
}

/// Per-round diagnostics of the circuit-generation loop.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    pub rounds: Vec<CgRound>,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct CgRound {
    pub round: usize,
    pub phase: u8,
    pub circuits: usize,
    /// Dual objective of the round's solve (for phase two this is the
    /// running bound estimate `fᵀy`).
    pub bound: f64,
    pub gap: f64,
    pub millis: u128,
}

impl CgReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("round,phase,circuits,bound,gap,millis\n");
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.round, r.phase, r.circuits, r.bound, r.gap, r.millis
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub gap_tol: f64,
    /// Relative violation threshold for pricing.
    pub violation_tol: f64,
    pub max_rounds: usize,
    /// Shift used by the phase-one existence problem; defaults to
    /// `1 + Σ|f_α|`.
    pub phase1_shift: Option<f64>,
    pub skip_phase1: bool,
    pub max_newton_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gap_tol: 1e-8,
            violation_tol: 1e-8,
            max_rounds: 60,
            phase1_shift: None,
            skip_phase1: false,
            max_newton_iters: 400_000,
        }
    }
}

/// Successful output of [`sonc_bound`].
#[derive(Debug, Clone)]
pub struct BoundResult {
    pub bound: f64,
    pub certificate: SoncCertificate,
    pub report: CgReport,
    pub verification: VerifyReport,
}

/// Degree-lex layout of the support, shared by every assembled problem.
#[derive(Debug, Clone)]
pub struct SupportLayout {
    exps: Vec<Exponent>,
    index: BTreeMap<Exponent, usize>,
}

impl SupportLayout {
    pub fn new(p: &SparsePolynomial) -> Self {
        let exps: Vec<Exponent> = p.support().cloned().collect();
        let index = exps
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        SupportLayout { exps, index }
    }

    pub fn exponents(&self) -> &[Exponent] {
        &self.exps
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn position(&self, e: &Exponent) -> Option<usize> {
        self.index.get(e).copied()
    }
}

/// Builds the dual conic problem for a circuit set.
///
/// Variables are indexed by the support in degree-lex order. Every circuit
/// contributes one power-cone atom over (outer…, inner); every even
/// exponent gets a nonnegative ray. Phase two adds the single equality
/// `y_0 = 1`; phase one instead appends one slack per Newton-polytope
/// vertex with `y_v + s_v = 1` and rays on the slacks. The objective is
/// the minimization of `fᵀy` (the dual maximizes `−fᵀy`).
pub fn assemble_dual(
    p: &SparsePolynomial,
    layout: &SupportLayout,
    circuits: &[Circuit],
    mode: PhaseMode,
    vertices: &BTreeSet<Exponent>,
) -> Result<ConicProblem, BoundError> {
    let m = layout.len();
    let cls = p.classify_support();

    let mut atoms = Vec::new();
    for c in circuits {
        let mut indices = Vec::with_capacity(c.order() + 1);
        for e in c.exponents() {
            let idx = layout
                .position(e)
                .ok_or_else(|| BoundError::CircuitNotOnSupport(e.clone()))?;
            indices.push(idx);
        }
        atoms.push(ConeAtom::power(c.signature().to_vec(), indices));
    }
    for e in &cls.even {
        atoms.push(ConeAtom::ray(layout.position(e).expect("even exponent on support")));
    }

    match mode {
        PhaseMode::Phase2 => {
            let mut objective = DVector::zeros(m);
            for (i, e) in layout.exponents().iter().enumerate() {
                objective[i] = p.coefficient(e);
            }
            let mut eq = DMatrix::zeros(1, m);
            let origin = layout.position(&Exponent::origin(p.dim())).expect("origin on support");
            eq[(0, origin)] = 1.0;
            let rhs = DVector::from_element(1, 1.0);
            ConicProblem::new(objective, eq, rhs, atoms).map_err(|e| BoundError::Ipm {
                round: 0,
                source: e,
            })
        }
        PhaseMode::Phase1 => {
            let verts: Vec<&Exponent> = vertices.iter().collect();
            let dim = m + verts.len();
            let mut objective = DVector::zeros(dim);
            for (i, e) in layout.exponents().iter().enumerate() {
                objective[i] = p.coefficient(e);
            }
            let mut eq = DMatrix::zeros(verts.len(), dim);
            let rhs = DVector::from_element(verts.len(), 1.0);
            for (row, v) in verts.iter().enumerate() {
                let idx = layout.position(v).expect("vertex on support");
                eq[(row, idx)] = 1.0;
                eq[(row, m + row)] = 1.0;
                atoms.push(ConeAtom::ray(m + row));
            }
            ConicProblem::new(objective, eq, rhs, atoms).map_err(|e| BoundError::Ipm {
                round: 0,
                source: e,
            })
        }
    }
}

/// One initial circuit per exponent that is not a monomial square, with
/// outer exponents among the Newton-polytope vertices.
///
/// The origin is exempt: the bound problem's own shift pads it. The
/// barycentric LP minimizes the total non-origin weight, so circuits hug
/// the origin whenever the hull allows it.
pub fn initial_circuits(
    p: &SparsePolynomial,
    layout: &SupportLayout,
    vertices: &BTreeSet<Exponent>,
) -> Result<Result<Vec<Circuit>, NoSoncBound>, BoundError> {
    let origin = Exponent::origin(p.dim());
    for v in vertices {
        if *v == origin {
            continue;
        }
        if !v.is_even() {
            return Ok(Err(NoSoncBound::OddVertex(v.clone())));
        }
        if p.coefficient(v) < 0.0 {
            return Ok(Err(NoSoncBound::NegativeVertexCoefficient(v.clone())));
        }
    }

    let cls = p.classify_support();
    let vert_list: Vec<&Exponent> = vertices.iter().collect();
    let mut out = Vec::new();
    for e in layout.exponents() {
        if *e == origin || cls.monomial_squares.contains(e) {
            continue;
        }
        let candidates: Vec<&Exponent> = vert_list.iter().copied().filter(|v| *v != e).collect();
        let n = p.dim();
        let k = candidates.len();
        let mut a = DMatrix::zeros(n + 1, k);
        for (col, v) in candidates.iter().enumerate() {
            for (row, &x) in v.entries().iter().enumerate() {
                a[(row, col)] = f64::from(x);
            }
            a[(n, col)] = 1.0;
        }
        let mut b = DVector::zeros(n + 1);
        for (row, &x) in e.entries().iter().enumerate() {
            b[row] = f64::from(x);
        }
        b[n] = 1.0;
        let c = DVector::from_iterator(
            k,
            candidates.iter().map(|v| if v.is_origin() { 0.0 } else { 1.0 }),
        );
        let result = lp::solve_lp(&LpProblem { a, b, c }, lp::DEFAULT_FEAS_TOL)?;
        if result.status != LpStatus::Optimal {
            return Ok(Err(NoSoncBound::UncoverableExponent(e.clone())));
        }
        let outer: Vec<Exponent> = candidates
            .iter()
            .zip(result.x.iter())
            .filter(|(_, &l)| l > circuits::WEIGHT_TOL)
            .map(|(v, _)| (*v).clone())
            .collect();
        match make_circuit(&outer, e) {
            Ok(c) => out.push(c),
            Err(_) => return Ok(Err(NoSoncBound::UncoverableExponent(e.clone()))),
        }
    }
    Ok(Ok(out))
}

/// Pricing: the most violated power-cone inequality among circuits with
/// inner exponent `beta`, found as an optimal basic feasible solution of
/// the barycentric LP with objective `Σ λ_α log(y_α)`.
///
/// Returns the circuit and its violation `|y_β| − exp(v*)` when that
/// exceeds `violation_tol · max(1, |y_β|)`; `None` when the LP is
/// infeasible (β outside the candidate hull) or nothing is violated.
pub fn find_violated_circuit(
    p: &SparsePolynomial,
    layout: &SupportLayout,
    y: &[f64],
    beta: &Exponent,
    violation_tol: f64,
) -> Result<Option<(Circuit, f64)>, BoundError> {
    let cls = p.classify_support();
    let candidates: Vec<&Exponent> = cls.even.iter().filter(|e| *e != beta).collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let n = p.dim();
    let k = candidates.len();
    let mut a = DMatrix::zeros(n + 1, k);
    let mut c = DVector::zeros(k);
    for (col, e) in candidates.iter().enumerate() {
        for (row, &x) in e.entries().iter().enumerate() {
            a[(row, col)] = f64::from(x);
        }
        a[(n, col)] = 1.0;
        let yi = y[layout.position(e).expect("candidate on support")];
        c[col] = yi.max(PRICING_LOG_FLOOR).ln();
    }
    let mut b = DVector::zeros(n + 1);
    for (row, &x) in beta.entries().iter().enumerate() {
        b[row] = f64::from(x);
    }
    b[n] = 1.0;

    let result = lp::solve_lp(&LpProblem { a, b, c }, lp::DEFAULT_FEAS_TOL)?;
    if result.status != LpStatus::Optimal {
        return Ok(None);
    }
    let y_beta = y[layout.position(beta).expect("inner exponent on support")];
    let violation = y_beta.abs() - result.objective.exp();
    if violation <= violation_tol * y_beta.abs().max(1.0) {
        return Ok(None);
    }
    let outer: Vec<Exponent> = candidates
        .iter()
        .zip(result.x.iter())
        .filter(|(_, &l)| l > circuits::WEIGHT_TOL)
        .map(|(e, _)| (*e).clone())
        .collect();
    match make_circuit(&outer, beta) {
        Ok(circuit) => Ok(Some((circuit, violation))),
        // Numerically marginal basic solutions (weights straddling the
        // threshold) are skipped rather than escalated.
        Err(_) => Ok(None),
    }
}

fn solve_round(
    p: &SparsePolynomial,
    layout: &SupportLayout,
    circuit_set: &[Circuit],
    mode: PhaseMode,
    vertices: &BTreeSet<Exponent>,
    cfg: &SolverConfig,
    round: usize,
) -> Result<(ConicProblem, IpmSolution), BoundError> {
    let prob = assemble_dual(p, layout, circuit_set, mode, vertices)?;
    let theta = default_slater_theta(layout.exponents());
    let mut start: Vec<f64> = slater_point(layout.exponents(), mode, theta);
    if mode == PhaseMode::Phase1 {
        // Slack components of the vertex rows.
        for v in vertices {
            let idx = layout.position(v).expect("vertex on support");
            start.push(1.0 - start[idx]);
        }
    }
    let opts = IpmOptions {
        gap_tol: cfg.gap_tol,
        max_newton_iters: cfg.max_newton_iters,
        ..IpmOptions::default()
    };
    let sol = ipm::solve_conic(&prob, &DVector::from_vec(start), &opts)
        .map_err(|e| BoundError::Ipm { round, source: e })?;
    Ok((prob, sol))
}

fn price_all(
    p: &SparsePolynomial,
    layout: &SupportLayout,
    y: &[f64],
    vertices: &BTreeSet<Exponent>,
    existing: &BTreeSet<(Vec<Exponent>, Exponent)>,
    cfg: &SolverConfig,
) -> Result<Vec<Circuit>, BoundError> {
    let mut added = Vec::new();
    for beta in layout.exponents() {
        if vertices.contains(beta) {
            continue;
        }
        if let Some((circuit, _)) = find_violated_circuit(p, layout, y, beta, cfg.violation_tol)? {
            if !existing.contains(&circuit.key()) {
                added.push(circuit);
            }
        }
    }
    Ok(added)
}

/// Runs the full two-phase circuit-generation algorithm and returns a
/// verified bound.
pub fn sonc_bound(
    p: &SparsePolynomial,
    cfg: &SolverConfig,
) -> Result<Result<BoundResult, NoSoncBound>, BoundError> {
    let layout = SupportLayout::new(p);
    let vertices = p.newton_vertices()?;
    let scale = p.coefficient_scale();

    let initial = match initial_circuits(p, &layout, &vertices)? {
        Ok(cs) => cs,
        Err(no) => return Ok(Err(no)),
    };
    let mut circuit_set: Vec<Circuit> = initial;
    let mut keys: BTreeSet<(Vec<Exponent>, Exponent)> =
        circuit_set.iter().map(|c| c.key()).collect();

    let mut rounds: Vec<CgRound> = Vec::new();
    let mut phase1_iterations = 0usize;

    if !cfg.skip_phase1 {
        let shift = cfg.phase1_shift.unwrap_or_else(|| p.coefficient_scale());
        let shifted = p.with_constant_shift(shift);
        let feas_tol = 1e-7 * scale;
        loop {
            if phase1_iterations >= cfg.max_rounds {
                break;
            }
            phase1_iterations += 1;
            let clock = Instant::now();
            let (_, sol) = solve_round(
                &shifted,
                &layout,
                &circuit_set,
                PhaseMode::Phase1,
                &vertices,
                cfg,
                phase1_iterations,
            )?;
            // Existence optimum of the padded primal = −(min fᵀy) ≥ 0.
            let existence_opt = -sol.objective;
            rounds.push(CgRound {
                round: rounds.len() + 1,
                phase: 1,
                circuits: circuit_set.len(),
                bound: sol.objective,
                gap: sol.gap,
                millis: clock.elapsed().as_millis(),
            });
            log::info!(
                "phase 1 round {phase1_iterations}: {} circuits, existence optimum {existence_opt:.3e}",
                circuit_set.len()
            );
            if existence_opt <= feas_tol {
                break;
            }
            let y: Vec<f64> = sol.y.iter().take(layout.len()).copied().collect();
            let added = price_all(&shifted, &layout, &y, &vertices, &keys, cfg)?;
            if added.is_empty() {
                return Ok(Err(NoSoncBound::PhaseOneInfeasible {
                    shift,
                    optimum: existence_opt,
                }));
            }
            for c in added {
                keys.insert(c.key());
                circuit_set.push(c);
            }
        }
    }

    // Phase two: the bound problem proper.
    let mut phase2_iterations = 0usize;
    let mut termination = Termination::IterationCap;
    let mut last: Option<(ConicProblem, IpmSolution)> = None;
    while phase2_iterations < cfg.max_rounds {
        phase2_iterations += 1;
        let clock = Instant::now();
        let (prob, sol) = solve_round(
            p,
            &layout,
            &circuit_set,
            PhaseMode::Phase2,
            &vertices,
            cfg,
            phase2_iterations,
        )?;
        rounds.push(CgRound {
            round: rounds.len() + 1,
            phase: 2,
            circuits: circuit_set.len(),
            bound: sol.objective,
            gap: sol.gap,
            millis: clock.elapsed().as_millis(),
        });
        log::info!(
            "phase 2 round {phase2_iterations}: {} circuits, dual bound {:.9}",
            circuit_set.len(),
            sol.objective
        );
        let y: Vec<f64> = sol.y.iter().copied().collect();
        last = Some((prob, sol));
        let added = price_all(p, &layout, &y, &vertices, &keys, cfg)?;
        if added.is_empty() {
            termination = Termination::NoViolatedCircuit;
            break;
        }
        for c in added {
            keys.insert(c.key());
            circuit_set.push(c);
        }
    }

    let (prob, sol) = last.expect("phase two runs at least one round");
    let certificate = extract_certificate(&sol, &prob, &circuit_set, p)?;
    let verification = verify_certificate(p, &certificate, 1e-8 * scale);
    let report = CgReport {
        phase1_iterations,
        phase2_iterations,
        rounds,
        termination,
    };
    Ok(Ok(BoundResult {
        bound: certificate.bound(),
        certificate,
        report,
        verification,
    }))
}

/// Builds the decomposition certificate from the dual multipliers of a
/// converged phase-two solve.
///
/// Power-atom multipliers are the circuit coefficient vectors, ray
/// multipliers the square coefficients, and the equality multiplier
/// recovers γ (equal to −fᵀy up to the duality gap). Terms below the drop
/// tolerance are folded away, then a one-pass least-squares polish
/// distributes each coefficient row's residual over its surviving
/// contributors without leaving the cones.
pub fn extract_certificate(
    sol: &IpmSolution,
    prob: &ConicProblem,
    circuit_set: &[Circuit],
    p: &SparsePolynomial,
) -> Result<SoncCertificate, BoundError> {
    let mult = ipm::extract_multipliers(sol, prob).map_err(|e| BoundError::Ipm {
        round: 0,
        source: e,
    })?;
    let layout = SupportLayout::new(p);
    let scale = p.coefficient_scale();
    let drop_tol = DROP_TOL_REL * scale;
    let gamma = -mult.eq_multipliers[0];

    // Power atoms come first in assembly order, then the rays.
    let mut circuit_terms: Vec<(Circuit, CircuitPolyCoeffs)> = Vec::new();
    for (c, s) in circuit_set.iter().zip(&mult.atom_multipliers) {
        let coeffs = CircuitPolyCoeffs {
            outer: s.iter().take(c.order()).copied().collect(),
            inner: s[c.order()],
        };
        let mass = coeffs.outer.iter().map(|x| x.abs()).fold(0.0f64, f64::max);
        if mass.max(coeffs.inner.abs()) > drop_tol {
            circuit_terms.push((c.clone(), coeffs));
        }
    }
    let mut square_terms: BTreeMap<Exponent, f64> = BTreeMap::new();
    for (atom, s) in prob.atoms().iter().zip(&mult.atom_multipliers) {
        if atom.kind != ConeKind::NonnegativeRay {
            continue;
        }
        let idx = atom.indices[0];
        if idx >= layout.len() {
            continue;
        }
        if s[0] > drop_tol {
            square_terms.insert(layout.exponents()[idx].clone(), s[0]);
        }
    }

    polish(p, &layout, gamma, &mut circuit_terms, &mut square_terms);

    let residual = identity_residual(p, gamma, &circuit_terms, &square_terms);
    let tol = 1e-8 * scale;
    if residual > tol {
        return Err(BoundError::PolishFailed { residual, tol });
    }
    Ok(SoncCertificate {
        gamma,
        circuit_terms,
        square_terms,
        residual,
    })
}

/// Distributes each coefficient row's residual across its contributors.
/// Rows touch disjoint unknowns, so one pass is the exact least-squares
/// correction; square and outer slots are kept nonnegative, with any
/// remainder pushed to the sign-free inner slots.
fn polish(
    p: &SparsePolynomial,
    layout: &SupportLayout,
    gamma: f64,
    circuit_terms: &mut [(Circuit, CircuitPolyCoeffs)],
    square_terms: &mut BTreeMap<Exponent, f64>,
) {
    for e in layout.exponents() {
        let target = p.coefficient(e) + if e.is_origin() { gamma } else { 0.0 };
        let mut current = square_terms.get(e).copied().unwrap_or(0.0);
        let mut outer_slots: Vec<(usize, usize)> = Vec::new();
        let mut inner_slots: Vec<usize> = Vec::new();
        for (j, (c, coeffs)) in circuit_terms.iter().enumerate() {
            for (i, oe) in c.outer().iter().enumerate() {
                if oe == e {
                    current += coeffs.outer[i];
                    outer_slots.push((j, i));
                }
            }
            if c.inner() == e {
                current += coeffs.inner;
                inner_slots.push(j);
            }
        }
        let mut residual = target - current;
        if residual == 0.0 {
            continue;
        }
        // Prefer the square slot: it only needs to stay nonnegative.
        if let Some(v) = square_terms.get_mut(e) {
            let adjusted = (*v + residual).max(0.0);
            residual -= adjusted - *v;
            *v = adjusted;
        } else if e.is_even() && residual > 0.0 {
            square_terms.insert(e.clone(), residual);
            residual = 0.0;
        }
        if residual != 0.0 && !inner_slots.is_empty() {
            let share = residual / inner_slots.len() as f64;
            for &j in &inner_slots {
                circuit_terms[j].1.inner += share;
            }
            residual = 0.0;
        }
        if residual != 0.0 && !outer_slots.is_empty() {
            let share = residual / outer_slots.len() as f64;
            for &(j, i) in &outer_slots {
                circuit_terms[j].1.outer[i] = (circuit_terms[j].1.outer[i] + share).max(0.0);
            }
        }
        // Rows with no surviving contributor keep their (tiny) residual.
    }
    square_terms.retain(|_, v| *v != 0.0);
}

fn identity_residual(
    p: &SparsePolynomial,
    gamma: f64,
    circuit_terms: &[(Circuit, CircuitPolyCoeffs)],
    square_terms: &BTreeMap<Exponent, f64>,
) -> f64 {
    let mut sums: BTreeMap<Exponent, f64> = BTreeMap::new();
    for (c, coeffs) in circuit_terms {
        for (e, &v) in c.outer().iter().zip(&coeffs.outer) {
            *sums.entry(e.clone()).or_insert(0.0) += v;
        }
        *sums.entry(c.inner().clone()).or_insert(0.0) += coeffs.inner;
    }
    for (e, &v) in square_terms {
        *sums.entry(e.clone()).or_insert(0.0) += v;
    }
    let mut residual = 0.0f64;
    let origin = Exponent::origin(p.dim());
    let mut exponents: BTreeSet<Exponent> = sums.keys().cloned().collect();
    exponents.extend(p.support().cloned());
    for e in exponents {
        let target = p.coefficient(&e) + if e == origin { gamma } else { 0.0 };
        let got = sums.get(&e).copied().unwrap_or(0.0);
        residual = residual.max((target - got).abs());
    }
    residual
}

/// Independent re-check of a certificate: recomputes every signature from
/// the stored exponents, re-evaluates every nonnegativity margin, checks
/// square coefficients and the coefficientwise identity. Bounds are only
/// reported when this passes.
pub fn verify_certificate(
    p: &SparsePolynomial,
    cert: &SoncCertificate,
    tol: f64,
) -> VerifyReport {
    let mut details = Vec::new();
    let mut valid = true;
    let mut min_margin = f64::INFINITY;

    let mut rebuilt: Vec<(Circuit, CircuitPolyCoeffs)> = Vec::new();
    for (idx, (c, coeffs)) in cert.circuit_terms.iter().enumerate() {
        match make_circuit(c.outer(), c.inner()) {
            Ok(fresh) => {
                if coeffs.outer.iter().any(|&v| v < -tol) {
                    valid = false;
                    details.push(format!("circuit {idx}: negative outer coefficient"));
                }
                let clamped = CircuitPolyCoeffs {
                    outer: coeffs.outer.iter().map(|&v| v.max(f64::MIN_POSITIVE)).collect(),
                    inner: coeffs.inner,
                };
                let (margin, nonneg) = nonnegativity_margin(&fresh, &clamped);
                min_margin = min_margin.min(margin);
                if !nonneg && margin < -tol {
                    valid = false;
                    details.push(format!(
                        "circuit {idx} (inner {}): margin {margin:.3e} below -{tol:.3e}",
                        c.inner()
                    ));
                }
                rebuilt.push((fresh, coeffs.clone()));
            }
            Err(e) => {
                valid = false;
                details.push(format!("circuit {idx}: invalid circuit ({e})"));
            }
        }
    }

    for (e, &v) in &cert.square_terms {
        if !e.is_even() {
            valid = false;
            details.push(format!("square term on odd exponent {e}"));
        }
        if v < -tol {
            valid = false;
            details.push(format!("square term {e} has negative coefficient {v:.3e}"));
        }
    }

    let residual = identity_residual(p, cert.gamma, &rebuilt, &cert.square_terms);
    if residual > tol {
        valid = false;
        details.push(format!("identity residual {residual:.3e} above {tol:.3e}"));
    }

    VerifyReport {
        valid,
        residual,
        min_margin,
        details,
    }
}

/// JSON certificate schema.
#[derive(Debug, Serialize, Deserialize)]
pub struct CertificateFile {
    pub gamma: f64,
    pub bound: f64,
    pub circuits: Vec<CircuitFile>,
    pub squares: Vec<SquareFile>,
    pub residual: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CircuitFile {
    pub outer: Vec<Vec<u32>>,
    pub inner: Vec<u32>,
    pub lambda: Vec<f64>,
    pub coefs: CircuitCoefsFile,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CircuitCoefsFile {
    pub outer: Vec<f64>,
    pub inner: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SquareFile {
    pub exp: Vec<u32>,
    pub coef: f64,
}

impl SoncCertificate {
    pub fn to_file(&self) -> CertificateFile {
        CertificateFile {
            gamma: self.gamma,
            bound: self.bound(),
            circuits: self
                .circuit_terms
                .iter()
                .map(|(c, k)| CircuitFile {
                    outer: c.outer().iter().map(|e| e.entries().to_vec()).collect(),
                    inner: c.inner().entries().to_vec(),
                    lambda: c.signature().to_vec(),
                    coefs: CircuitCoefsFile {
                        outer: k.outer.clone(),
                        inner: k.inner,
                    },
                })
                .collect(),
            squares: self
                .square_terms
                .iter()
                .map(|(e, &v)| SquareFile {
                    exp: e.entries().to_vec(),
                    coef: v,
                })
                .collect(),
            residual: self.residual,
        }
    }

    /// Rebuilds a certificate from its file form, revalidating circuits.
    pub fn from_file(file: &CertificateFile) -> Result<Self, circuits::CircuitError> {
        let mut circuit_terms = Vec::new();
        for c in &file.circuits {
            let outer: Vec<Exponent> = c.outer.iter().map(|e| Exponent::new(e.clone())).collect();
            let inner = Exponent::new(c.inner.clone());
            let circuit = make_circuit(&outer, &inner)?;
            circuit_terms.push((
                circuit,
                CircuitPolyCoeffs {
                    outer: c.coefs.outer.clone(),
                    inner: c.coefs.inner,
                },
            ));
        }
        let square_terms = file
            .squares
            .iter()
            .map(|s| (Exponent::new(s.exp.clone()), s.coef))
            .collect();
        Ok(SoncCertificate {
            gamma: file.gamma,
            circuit_terms,
            square_terms,
            residual: file.residual,
        })
    }
}
