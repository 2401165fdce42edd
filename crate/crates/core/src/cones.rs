//! Generalized power cones, their duals, nonnegative rays, and the
//! logarithmically homogeneous barriers the interior-point solver runs on.
//!
//! The power cone with signature λ ∈ ]0,1[^r (Σλ_i = 1) is
//! `P_λ = {(v, z) : v ≥ 0, |z| ≤ Π v_i^{λ_i}}`; its dual replaces `v_i` by
//! `v_i/λ_i` inside the product. The barrier used for `P_λ` is
//!
//! ```text
//! F(v, z) = −log(Π v_i^{2λ_i} − z²) − Σ (1 − λ_i) log v_i,   ν = r + 1,
//! ```
//!
//! and the nonnegative ray carries `−log v` with ν = 1. Both are validated
//! by the property tests below (logarithmic homogeneity, ⟨−∇F, p⟩ = ν,
//! finite-difference agreement, and the dual map −∇F : int P_λ → int P*_λ)
//! rather than taken on faith. No barrier is provided for the dual power
//! cone: the solver only consumes primal barriers and reads dual
//! multipliers off the gradient map.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::poly::Exponent;

/// Entries below this magnitude are treated as exact zeros in membership
/// products.
pub const PRODUCT_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConeError {
    #[error("point is not strictly interior to the cone")]
    PointNotInterior,
    #[error("no barrier is provided for the dual power cone")]
    DualBarrierUnsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Power,
    DualPower,
    NonnegativeRay,
}

/// One cone constraint over a slice of a host vector. For power kinds the
/// last index is the z-slot; rays have a single index and no signature.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeAtom {
    pub kind: ConeKind,
    pub signature: Vec<f64>,
    pub indices: Vec<usize>,
}

impl ConeAtom {
    pub fn power(signature: Vec<f64>, indices: Vec<usize>) -> Self {
        Self::validated(ConeKind::Power, signature, indices)
    }

    pub fn dual_power(signature: Vec<f64>, indices: Vec<usize>) -> Self {
        Self::validated(ConeKind::DualPower, signature, indices)
    }

    pub fn ray(index: usize) -> Self {
        ConeAtom {
            kind: ConeKind::NonnegativeRay,
            signature: Vec::new(),
            indices: vec![index],
        }
    }

    fn validated(kind: ConeKind, signature: Vec<f64>, indices: Vec<usize>) -> Self {
        assert_eq!(
            indices.len(),
            signature.len() + 1,
            "power atom needs one index per outer slot plus the z-slot"
        );
        assert!(signature.iter().all(|&l| l > 0.0 && l < 1.0));
        let sum: f64 = signature.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "signature must sum to one");
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), indices.len(), "atom indices must be distinct");
        ConeAtom {
            kind,
            signature,
            indices,
        }
    }

    /// Barrier parameter ν of the atom.
    pub fn barrier_parameter(&self) -> f64 {
        match self.kind {
            ConeKind::Power | ConeKind::DualPower => self.signature.len() as f64 + 1.0,
            ConeKind::NonnegativeRay => 1.0,
        }
    }

    pub fn slice_len(&self) -> usize {
        self.indices.len()
    }

    /// Extracts this atom's subvector from a host vector.
    pub fn extract(&self, host: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| host[i]))
    }

    /// Membership test with tolerance `tol ≥ 0`; `tol = 0` is the exact cone.
    pub fn member(&self, point: &[f64], tol: f64) -> bool {
        assert_eq!(point.len(), self.slice_len());
        match self.kind {
            ConeKind::NonnegativeRay => point[0] >= -tol,
            ConeKind::Power => {
                let (v, z) = split(point);
                v.iter().all(|&vi| vi >= -tol)
                    && z.abs() <= weighted_product(v, &self.signature, 1.0) + tol
            }
            ConeKind::DualPower => {
                let (v, z) = split(point);
                v.iter().all(|&vi| vi >= -tol)
                    && z.abs() <= dual_weighted_product(v, &self.signature) + tol
            }
        }
    }

    /// Strict interior test (every inequality strict), used by the
    /// feasible-start solver.
    pub fn strictly_interior(&self, point: &[f64]) -> bool {
        assert_eq!(point.len(), self.slice_len());
        match self.kind {
            ConeKind::NonnegativeRay => point[0] > 0.0,
            ConeKind::Power => {
                let (v, z) = split(point);
                v.iter().all(|&vi| vi > 0.0)
                    && z.abs() < weighted_product(v, &self.signature, 1.0)
            }
            ConeKind::DualPower => {
                let (v, z) = split(point);
                v.iter().all(|&vi| vi > 0.0) && z.abs() < dual_weighted_product(v, &self.signature)
            }
        }
    }

    /// Barrier value, gradient and Hessian at a strictly interior point.
    pub fn barrier(&self, point: &[f64]) -> Result<BarrierEval, ConeError> {
        assert_eq!(point.len(), self.slice_len());
        match self.kind {
            ConeKind::DualPower => Err(ConeError::DualBarrierUnsupported),
            ConeKind::NonnegativeRay => {
                let v = point[0];
                if v <= 0.0 {
                    return Err(ConeError::PointNotInterior);
                }
                Ok(BarrierEval {
                    value: -v.ln(),
                    gradient: DVector::from_element(1, -1.0 / v),
                    hessian: DMatrix::from_element(1, 1, 1.0 / (v * v)),
                    nu: 1.0,
                })
            }
            ConeKind::Power => self.power_barrier(point),
        }
    }

    fn power_barrier(&self, point: &[f64]) -> Result<BarrierEval, ConeError> {
        let (v, z) = split(point);
        let r = v.len();
        if v.iter().any(|&vi| vi <= 0.0) {
            return Err(ConeError::PointNotInterior);
        }
        // P = Π v_i^{2λ_i}, computed in log space.
        let log_p: f64 = self
            .signature
            .iter()
            .zip(v)
            .map(|(&l, &vi)| 2.0 * l * vi.ln())
            .sum();
        let p = log_p.exp();
        let d = p - z * z;
        if !(d > 0.0) || !d.is_finite() {
            return Err(ConeError::PointNotInterior);
        }

        let value = -d.ln()
            - self
                .signature
                .iter()
                .zip(v)
                .map(|(&l, &vi)| (1.0 - l) * vi.ln())
                .sum::<f64>();

        // g_i = ∂P/∂v_i = 2 λ_i P / v_i.
        let gp: Vec<f64> = self
            .signature
            .iter()
            .zip(v)
            .map(|(&l, &vi)| 2.0 * l * p / vi)
            .collect();

        let dim = r + 1;
        let mut gradient = DVector::zeros(dim);
        for i in 0..r {
            gradient[i] = -gp[i] / d - (1.0 - self.signature[i]) / v[i];
        }
        gradient[r] = 2.0 * z / d;

        let mut hessian = DMatrix::zeros(dim, dim);
        for i in 0..r {
            for j in 0..r {
                let hp = if i == j {
                    2.0 * self.signature[i] * (2.0 * self.signature[i] - 1.0) * p / (v[i] * v[i])
                } else {
                    4.0 * self.signature[i] * self.signature[j] * p / (v[i] * v[j])
                };
                let mut h = -hp / d + gp[i] * gp[j] / (d * d);
                if i == j {
                    h += (1.0 - self.signature[i]) / (v[i] * v[i]);
                }
                hessian[(i, j)] = h;
            }
            let hz = -2.0 * z * gp[i] / (d * d);
            hessian[(i, r)] = hz;
            hessian[(r, i)] = hz;
        }
        hessian[(r, r)] = 2.0 / d + 4.0 * z * z / (d * d);

        Ok(BarrierEval {
            value,
            gradient,
            hessian,
            nu: self.barrier_parameter(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BarrierEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub nu: f64,
}

fn split(point: &[f64]) -> (&[f64], f64) {
    let (last, v) = point.split_last().expect("power atom slice is nonempty");
    (v, *last)
}

/// Π v_i^{w·λ_i} with entries below the floor treated as exact zeros.
fn weighted_product(v: &[f64], signature: &[f64], w: f64) -> f64 {
    let mut log_sum = 0.0;
    for (&l, &vi) in signature.iter().zip(v) {
        if vi < PRODUCT_FLOOR {
            return 0.0;
        }
        log_sum += w * l * vi.ln();
    }
    log_sum.exp()
}

fn dual_weighted_product(v: &[f64], signature: &[f64]) -> f64 {
    let mut log_sum = 0.0;
    for (&l, &vi) in signature.iter().zip(v) {
        if vi < PRODUCT_FLOOR {
            return 0.0;
        }
        log_sum += l * (vi / l).ln();
    }
    log_sum.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    /// Existence problem: every component strictly inside (0, 1).
    Phase1,
    /// Bound problem: the origin component is exactly 1.
    Phase2,
}

/// Default curvature parameter for [`slater_point`]: `1 / max(1, max ‖α‖²)`.
pub fn default_slater_theta(support: &[Exponent]) -> f64 {
    let max_q = support
        .iter()
        .map(|e| e.entries().iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>())
        .fold(0.0f64, f64::max);
    1.0 / max_q.max(1.0)
}

/// A strictly feasible dual point indexed by `support`.
///
/// Components are `exp(θ h(α))` with `h(α) = ‖α‖²` shifted per mode. Strict
/// convexity of the squared norm over the affinely independent outer set of
/// any circuit gives `Σ λ_i ‖α_i‖² > ‖β‖²`, hence the inner component lies
/// strictly below the power-cone product for every circuit on the support.
/// Phase 2 shifts so the origin maps to exactly 1; Phase 1 shifts so every
/// component is strictly inside (0, 1), leaving room for the `y_α ≤ 1`
/// vertex constraints.
pub fn slater_point(support: &[Exponent], mode: PhaseMode, theta: f64) -> Vec<f64> {
    assert!(theta > 0.0);
    let q: Vec<f64> = support
        .iter()
        .map(|e| e.entries().iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>())
        .collect();
    let max_q = q.iter().fold(0.0f64, |a, &b| a.max(b));
    match mode {
        PhaseMode::Phase2 => q.iter().map(|&qi| (theta * qi).exp()).collect(),
        PhaseMode::Phase1 => q
            .iter()
            .map(|&qi| (-theta * (max_q + 1.0 - qi)).exp())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn half_half() -> ConeAtom {
        ConeAtom::power(vec![0.5, 0.5], vec![0, 1, 2])
    }

    #[test]
    fn power_membership_boundary() {
        let atom = half_half();
        assert!(atom.member(&[1.0, 1.0, 1.0], 1e-12));
        assert!(!atom.strictly_interior(&[1.0, 1.0, 1.0]));
    }

    #[test]
    fn dual_membership_is_weaker_than_primal() {
        let atom = half_half();
        let dual = ConeAtom::dual_power(vec![0.5, 0.5], vec![0, 1, 2]);
        let point = [1.0, 1.0, 2.0];
        assert!(!atom.member(&point, 1e-12));
        // Π (v_i / λ_i)^{λ_i} = 2 exactly.
        assert!(dual.member(&point, 1e-12));
    }

    #[test]
    fn first_dual_solution_slice_is_inside_the_c2_cone() {
        let atom = ConeAtom::power(vec![2.0 / 3.0, 1.0 / 3.0], vec![0, 1, 2]);
        // Bound (1/4)^{2/3} (1/16)^{1/3} = 2^{-8/3} ≈ 0.157 ≥ 1/16.
        assert!(atom.member(&[0.25, 0.0625, 0.0625], 0.0));
    }

    #[test]
    fn nearly_zero_entries_zero_the_product() {
        let atom = half_half();
        assert!(atom.member(&[0.0, 4.0, 0.0], 0.0));
        assert!(!atom.member(&[0.0, 4.0, 0.1], 1e-3));
    }

    #[test]
    fn ray_barrier_at_one() {
        let atom = ConeAtom::ray(0);
        let eval = atom.barrier(&[1.0]).unwrap();
        assert_eq!(eval.value, 0.0);
        assert_eq!(eval.gradient[0], -1.0);
        assert_eq!(eval.hessian[(0, 0)], 1.0);
        assert_eq!(eval.nu, 1.0);
    }

    #[test]
    fn barrier_rejects_boundary_points() {
        let atom = half_half();
        assert_eq!(
            atom.barrier(&[1.0, 1.0, 1.0]).unwrap_err(),
            ConeError::PointNotInterior
        );
        assert_eq!(
            ConeAtom::ray(0).barrier(&[0.0]).unwrap_err(),
            ConeError::PointNotInterior
        );
    }

    #[test]
    fn dual_power_barrier_is_refused() {
        let atom = ConeAtom::dual_power(vec![0.5, 0.5], vec![0, 1, 2]);
        assert_eq!(
            atom.barrier(&[1.0, 1.0, 0.2]).unwrap_err(),
            ConeError::DualBarrierUnsupported
        );
    }

    fn random_signature(rng: &mut ChaCha8Rng, r: usize) -> Vec<f64> {
        let mut s: Vec<f64> = (0..r).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = s.iter().sum();
        s.iter_mut().for_each(|x| *x /= total);
        s
    }

    fn random_interior(rng: &mut ChaCha8Rng, atom: &ConeAtom) -> Vec<f64> {
        let r = atom.signature.len();
        loop {
            let v: Vec<f64> = (0..r).map(|_| rng.gen_range(0.2..3.0)).collect();
            let bound = weighted_product(&v, &atom.signature, 1.0);
            let z = rng.gen_range(-0.9..0.9) * bound;
            let mut point = v;
            point.push(z);
            if atom.strictly_interior(&point) {
                return point;
            }
        }
    }

    #[test]
    fn barrier_is_logarithmically_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for r in 2..=4usize {
            let atom = ConeAtom::power(random_signature(&mut rng, r), (0..=r).collect());
            let p = random_interior(&mut rng, &atom);
            let base = atom.barrier(&p).unwrap();
            for &t in &[0.5, 2.0, 10.0] {
                let scaled: Vec<f64> = p.iter().map(|&x| t * x).collect();
                let eval = atom.barrier(&scaled).unwrap();
                let expected = base.value - base.nu * t.ln();
                assert!(
                    (eval.value - expected).abs() <= 1e-10 * (1.0 + expected.abs()),
                    "LH failed at t = {t}"
                );
            }
        }
    }

    #[test]
    fn gradient_identity_holds_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let r = rng.gen_range(2..=5usize);
            let atom = ConeAtom::power(random_signature(&mut rng, r), (0..=r).collect());
            let p = random_interior(&mut rng, &atom);
            let eval = atom.barrier(&p).unwrap();
            let inner: f64 = eval
                .gradient
                .iter()
                .zip(&p)
                .map(|(&g, &x)| -g * x)
                .sum();
            assert!((inner - eval.nu).abs() <= 1e-8, "⟨-∇F, p⟩ = {inner}, ν = {}", eval.nu);
        }
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..25 {
            let r = rng.gen_range(2..=4usize);
            let atom = ConeAtom::power(random_signature(&mut rng, r), (0..=r).collect());
            let p = random_interior(&mut rng, &atom);
            let eval = atom.barrier(&p).unwrap();
            let dim = r + 1;
            for i in 0..dim {
                let h = 1e-6 * (1.0 + p[i].abs());
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[i] += h;
                pm[i] -= h;
                let fp = atom.barrier(&pp).unwrap();
                let fm = atom.barrier(&pm).unwrap();
                let fd = (fp.value - fm.value) / (2.0 * h);
                assert!(
                    (eval.gradient[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "gradient[{i}] = {} vs fd {}",
                    eval.gradient[i],
                    fd
                );
                for j in 0..dim {
                    let fd_h = (fp.gradient[j] - fm.gradient[j]) / (2.0 * h);
                    assert!(
                        (eval.hessian[(i, j)] - fd_h).abs()
                            <= 1e-5 * (1.0 + fd_h.abs()),
                        "hessian[({i},{j})] = {} vs fd {}",
                        eval.hessian[(i, j)],
                        fd_h
                    );
                }
            }
        }
    }

    #[test]
    fn negative_gradient_maps_into_the_dual_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let r = rng.gen_range(2..=5usize);
            let sig = random_signature(&mut rng, r);
            let atom = ConeAtom::power(sig.clone(), (0..=r).collect());
            let dual = ConeAtom::dual_power(sig, (0..=r).collect());
            let p = random_interior(&mut rng, &atom);
            let eval = atom.barrier(&p).unwrap();
            let s: Vec<f64> = eval.gradient.iter().map(|&g| -g).collect();
            assert!(dual.strictly_interior(&s), "-∇F left the dual interior");
        }
    }

    #[test]
    fn primal_dual_pairs_have_nonnegative_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..10_000 {
            let r = rng.gen_range(2..=4usize);
            let sig = random_signature(&mut rng, r);
            let atom = ConeAtom::power(sig.clone(), (0..=r).collect());
            let dual = ConeAtom::dual_power(sig.clone(), (0..=r).collect());
            let y = random_interior(&mut rng, &atom);
            // Random dual point: v free-positive, z up to the dual bound.
            let v: Vec<f64> = (0..r).map(|_| rng.gen_range(0.0..2.0)).collect();
            let bound = dual_weighted_product(&v, &sig);
            let z = rng.gen_range(-1.0..1.0) * bound;
            let mut s = v;
            s.push(z);
            debug_assert!(dual.member(&s, 1e-12));
            let dot: f64 = s.iter().zip(&y).map(|(&a, &b)| a * b).sum();
            assert!(dot >= -1e-12, "⟨s, y⟩ = {dot}");
        }
    }

    fn example_support() -> Vec<Exponent> {
        vec![
            Exponent::new(vec![0, 0]),
            Exponent::new(vec![0, 2]),
            Exponent::new(vec![2, 2]),
            Exponent::new(vec![2, 6]),
            Exponent::new(vec![6, 2]),
        ]
    }

    #[test]
    fn phase2_slater_fixes_the_origin_at_one() {
        let support = example_support();
        let y = slater_point(&support, PhaseMode::Phase2, default_slater_theta(&support));
        assert_eq!(y[0], 1.0);
        assert!(y.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn phase1_slater_stays_strictly_below_one() {
        let support = example_support();
        let y = slater_point(&support, PhaseMode::Phase1, default_slater_theta(&support));
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn slater_point_is_strictly_inside_every_circuit_cone() {
        use crate::circuits::enumerate_circuits;
        use crate::poly::normalize;
        let p = normalize(&[
            (vec![0, 0], 1.0),
            (vec![0, 2], 1.0),
            (vec![2, 2], -1.0),
            (vec![2, 6], 1.0),
            (vec![6, 2], 1.0),
        ])
        .unwrap();
        let support: Vec<Exponent> = p.support().cloned().collect();
        let theta = default_slater_theta(&support);
        for mode in [PhaseMode::Phase1, PhaseMode::Phase2] {
            let y = slater_point(&support, mode, theta);
            for c in enumerate_circuits(&p, None).unwrap() {
                let slice: Vec<f64> = c
                    .exponents()
                    .map(|e| y[support.iter().position(|s| s == e).unwrap()])
                    .collect();
                let atom = ConeAtom::power(c.signature().to_vec(), (0..slice.len()).collect());
                assert!(
                    atom.strictly_interior(&slice),
                    "{mode:?} slater point touches circuit {c:?}"
                );
            }
        }
    }
}
