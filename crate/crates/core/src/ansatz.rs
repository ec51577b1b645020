//! Searches for first integrals of the one-ball system within two finite ansatz families.
//!
//! Linear family: `F3 = x₁𝐌₁Γ₁ + x₂𝐌₂Γ₂ + x₃𝐌₃Γ₃`. Along the flow `Ḟ3` is a sum of nine
//! cubic monomials whose coefficients are linear in `x`; `F3` is an integral iff `x`
//! lies in the nullspace of the resulting 9×3 matrix.
//!
//! Exponential family (`B = C`): `F3 = (y₁F + y₂G + y₃) exp(y₄Φ)`, an integral iff
//!
//! ```text
//! (ε−1)(A−C)y₂ + y₁y₄ = 0,   D(ε−1)y₁ + y₂y₄ = 0,   −Cd(ε−1)y₁ + y₃y₄ = 0.
//! ```

use nalgebra::{SMatrix, Vector3};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{SphericalParams, Vec3};
use crate::invariants::relative_drift;
use crate::sampling::Sampler;
use crate::spherical::{derived_quantities, integrate, reduced_field, ReducedModel, ReducedState};

pub type AnsatzMatrix = SMatrix<f64, 9, 3>;

/// Monomial labels of the nine rows.
pub const ROW_LABELS: [&str; 9] = [
    "Γ1Ω2Ω3", "Ω1Γ2Ω3", "Ω1Ω2Γ3", "Γ1Γ2Ω3", "Γ1Ω2Γ3", "Ω1Γ2Γ3", "LΓ1Γ2Ω3", "LΓ1Ω2Γ3", "LΩ1Γ2Γ3",
];

/// One-ball constants `(A, B, C, D, d, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct OneBallConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub big_d: f64,
    pub small_d: f64,
    pub epsilon: f64,
}

impl OneBallConstants {
    /// Model whose unit spin coupling makes `c₁ = d`.
    pub fn model(&self) -> ReducedModel {
        ReducedModel::one_ball(Vec3::new(self.a, self.b, self.c), self.big_d, self.epsilon)
    }

    pub fn from_params(params: &SphericalParams, c1: f64) -> Result<Self> {
        if params.n_balls() != 1 {
            return Err(Error::usage("ansatz constants are defined for one ball"));
        }
        let model = params.model();
        Ok(OneBallConstants {
            a: model.inertia.x,
            b: model.inertia.y,
            c: model.inertia.z,
            big_d: model.balls[0].stiffness,
            small_d: model.small_d(&[c1]),
            epsilon: model.epsilon,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearAnsatzSystem {
    pub matrix: AnsatzMatrix,
    pub constants: OneBallConstants,
}

pub fn build_linear_system(k: &OneBallConstants) -> LinearAnsatzSystem {
    let OneBallConstants {
        a,
        b,
        c,
        big_d: dd,
        small_d: d,
        epsilon: e,
    } = *k;
    let p = d * (1.0 + e);
    let q = dd * (1.0 + e);
    #[rustfmt::skip]
    let matrix = AnsatzMatrix::from_row_slice(&[
        b - c,          -e * (b + dd),  e * (c + dd),
        e * (a + dd),   c - a,          -e * (c + dd),
        -e * (a + dd),  e * (b + dd),   a - b,
        p,              -p,             0.0,
        -p,             0.0,            p,
        0.0,            p,              -p,
        -q,             q,              0.0,
        q,              0.0,            -q,
        0.0,            -q,             q,
    ]);
    LinearAnsatzSystem {
        matrix,
        constants: *k,
    }
}

pub const NULLSPACE_DEFAULT_TOL: f64 = 1e-10;
pub const NULLSPACE_TOL_RANGE: (f64, f64) = (1e-14, 1e-6);

/// Orthonormal nullspace basis by singular-value thresholding at `tol × σ_max`.
/// Each vector has its first non-negligible component positive.
pub fn nullspace(system: &LinearAnsatzSystem, tol: f64) -> Result<Vec<Vec3>> {
    if !(tol >= NULLSPACE_TOL_RANGE.0 && tol <= NULLSPACE_TOL_RANGE.1) {
        return Err(Error::usage(format!(
            "nullspace tolerance {tol:e} outside [{:e}, {:e}]",
            NULLSPACE_TOL_RANGE.0, NULLSPACE_TOL_RANGE.1
        )));
    }
    let scale = system.matrix.amax();
    if scale == 0.0 {
        return Ok(vec![Vec3::x(), Vec3::y(), Vec3::z()]);
    }
    let normalized = system.matrix / scale;
    let svd = normalized.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let mut basis = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol * sigma_max {
            let row = v_t.row(i);
            let mut v = Vector3::new(row[0], row[1], row[2]).normalize();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v = -v;
                }
            }
            basis.push(v);
        }
    }
    Ok(basis)
}

/// `y₁..y₄` of one exponential branch; `y₁`, `y₄` are imaginary when `A < C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialAnsatz {
    pub y1: Complex64,
    pub y2: f64,
    pub y3: f64,
    pub y4: Complex64,
}

impl ExponentialAnsatz {
    /// Residuals of the three defining equations.
    pub fn residuals(&self, a: f64, c: f64, big_d: f64, small_d: f64, epsilon: f64) -> [Complex64; 3] {
        let em1 = epsilon - 1.0;
        [
            em1 * (a - c) * self.y2 + self.y1 * self.y4,
            big_d * em1 * self.y1 + self.y2 * self.y4,
            -c * small_d * em1 * self.y1 + self.y3 * self.y4,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialSolution {
    pub plus: ExponentialAnsatz,
    pub minus: ExponentialAnsatz,
    /// `A = C`: both branches collapse to `y₁ = y₄ = 0`.
    pub degenerate: bool,
}

/// Closed-form solution with the normalization `y₂ = D`.
pub fn solve_exponential(a: f64, c: f64, big_d: f64, small_d: f64, epsilon: f64) -> Result<ExponentialSolution> {
    if !(big_d > 0.0) {
        return Err(Error::domain(format!("D = {big_d} must be positive")));
    }
    let s = Complex64::new(big_d * (a - c), 0.0).sqrt();
    let branch = |sign: f64| ExponentialAnsatz {
        y1: sign * s,
        y2: big_d,
        y3: -small_d * c,
        y4: sign * (1.0 - epsilon) * s,
    };
    Ok(ExponentialSolution {
        plus: branch(1.0),
        minus: branch(-1.0),
        degenerate: a == c,
    })
}

/// `dF3/dt` of `Σ x_k 𝐌_k Γ_k` at a state by the chain rule through the field, with the
/// magnitude of its terms for normalization.
pub fn linear_integral_rate(model: &ReducedModel, state: &ReducedState, x: &Vec3) -> Result<(f64, f64)> {
    let rate = reduced_field(model, state)?;
    let q = derived_quantities(model, state);
    let g = state.gammas[0];
    let gd = rate.gamma_dots[0];
    let ball = model.balls[0];
    // 𝐌 = 𝐈Ω + s c Γ with 𝐈 = 𝕀 + D(𝟙 − Γ⊗Γ).
    let m_dot = q.modified_inertia * rate.omega_dot
        - ball.stiffness * (gd * g.dot(&state.omega) + g * gd.dot(&state.omega))
        + ball.spin * state.c[0] * gd;
    let m = q.total_momentum;
    let value: f64 = (0..3).map(|k| x[k] * (m_dot[k] * g[k] + m[k] * gd[k])).sum();
    let scale = x.norm() * (m_dot.norm() + m.norm() * gd.norm());
    Ok((value, scale))
}

/// Worst normalized `|Ḟ3|` of `Σ x_k 𝐌_k Γ_k` over the given states.
pub fn certify_pointwise(model: &ReducedModel, x: &Vec3, states: &[ReducedState]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in states {
        let (v, scale) = linear_integral_rate(model, s, x)?;
        worst = worst.max(if scale > 0.0 { v.abs() / scale } else { v.abs() });
    }
    Ok(worst)
}

/// Threshold below which a trajectory drift certifies a candidate.
pub const CERTIFY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certification {
    pub max_relative_drift: f64,
    pub certified: bool,
}

/// Integrate each initial state over `[0, t_span]` and report the worst relative drift
/// of `candidate`.
pub fn certify<F>(
    candidate: F,
    model: &ReducedModel,
    initial: &[ReducedState],
    t_span: f64,
    tol: f64,
) -> Result<Certification>
where
    F: Fn(&ReducedState) -> Result<f64>,
{
    let times = crate::ode::uniform_grid(t_span, 101);
    let mut worst: f64 = 0.0;
    for s0 in initial {
        let traj = integrate(model, s0, &times, tol)?;
        let mut values = Vec::with_capacity(traj.states.len());
        for s in &traj.states {
            let v = candidate(s)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "candidate integral".into(),
                    state: s.to_vec(),
                });
            }
            values.push(v);
        }
        worst = worst.max(relative_drift(&values, 0.0));
    }
    Ok(Certification {
        max_relative_drift: worst,
        certified: worst < CERTIFY_THRESHOLD,
    })
}

/// [`certify`] on `n_states` random states of a model with one ball.
pub fn certify_random<F>(
    candidate: F,
    model: &ReducedModel,
    n_states: usize,
    t_span: f64,
    seed: u64,
) -> Result<Certification>
where
    F: Fn(&ReducedState) -> Result<f64>,
{
    let mut sampler = Sampler::new(seed);
    let states = (0..n_states)
        .map(|_| {
            ReducedState::new(
                sampler.vector(1.0),
                (0..model.n_balls()).map(|_| sampler.unit_vector()).collect(),
                (0..model.n_balls()).map(|_| sampler.uniform(-1.0, 1.0)).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    certify(candidate, model, &states, t_span, 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Configuration;
    use crate::invariants::{eps_minus_one_weights, integral_case_eps_minus_one, integrals, linear_integral};
    use proptest::prelude::*;

    fn k(a: f64, b: f64, c: f64, big_d: f64, small_d: f64, epsilon: f64) -> OneBallConstants {
        OneBallConstants { a, b, c, big_d, small_d, epsilon }
    }

    fn monomials(s: &ReducedState) -> [f64; 9] {
        let (o, g) = (s.omega, s.gammas[0]);
        let l = o.dot(&g);
        [
            g.x * o.y * o.z,
            o.x * g.y * o.z,
            o.x * o.y * g.z,
            g.x * g.y * o.z,
            g.x * o.y * g.z,
            o.x * g.y * g.z,
            l * g.x * g.y * o.z,
            l * g.x * o.y * g.z,
            l * o.x * g.y * g.z,
        ]
    }

    /// `Ḟ3` from `𝐌̇ = 𝐌 × Ω` and `Γ̇ = εΓ × Ω`, expanded without the table.
    fn rate_from_momentum_law(kc: &OneBallConstants, s: &ReducedState, x: &Vec3) -> f64 {
        let (o, g) = (s.omega, s.gammas[0]);
        let m = Vec3::new(kc.a * o.x, kc.b * o.y, kc.c * o.z) + kc.big_d * (o - o.dot(&g) * g) + kc.small_d * g;
        let md = m.cross(&o);
        let gd = kc.epsilon * g.cross(&o);
        (0..3).map(|i| x[i] * (md[i] * g[i] + m[i] * gd[i])).sum()
    }

    fn random_state(s: &mut Sampler, d: f64) -> ReducedState {
        ReducedState::new(s.vector(1.0), vec![s.unit_vector()], vec![d]).unwrap()
    }

    #[test]
    fn eps_minus_one_kills_rows_four_to_nine() {
        let sys = build_linear_system(&k(2.0, 3.0, 4.0, 1.0, 0.7, -1.0));
        for r in 3..9 {
            assert!(sys.matrix.row(r).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn eps_one_has_uniform_solution() {
        let mut s = Sampler::new(41);
        for _ in 0..20 {
            let kc = k(s.uniform(0.5, 3.0), s.uniform(0.5, 3.0), s.uniform(0.5, 3.0), s.uniform(0.1, 2.0), s.uniform(-1.0, 1.0), 1.0);
            let sys = build_linear_system(&kc);
            assert!((sys.matrix * Vec3::new(1.0, 1.0, 1.0)).amax() < 1e-15);
        }
    }

    #[test]
    fn rows_for_one_third() {
        let sys = build_linear_system(&k(2.0, 3.0, 4.0, 1.0, 1.0, 1.0 / 3.0));
        let q = 4.0 / 3.0;
        let want = [[-q, q, 0.0], [q, 0.0, -q], [0.0, -q, q]];
        for (r, w) in want.iter().enumerate() {
            for (j, wj) in w.iter().enumerate() {
                assert!((sys.matrix[(6 + r, j)] - wj).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn table_matches_momentum_law_expansion() {
        let mut s = Sampler::new(42);
        for _ in 0..200 {
            let kc = k(s.uniform(0.5, 3.0), s.uniform(0.5, 3.0), s.uniform(0.5, 3.0), s.uniform(0.1, 2.0), s.uniform(-1.0, 1.0), s.uniform(-2.0, 2.0));
            let sys = build_linear_system(&kc);
            let x = s.vector(1.0);
            let st = random_state(&mut s, 0.0);
            let coeffs = sys.matrix * x;
            let table: f64 = monomials(&st).iter().zip(coeffs.iter()).map(|(m, c)| m * c).sum();
            let direct = rate_from_momentum_law(&kc, &st, &x);
            assert!((table - direct).abs() < 1e-13, "{table} vs {direct}");
        }
    }

    #[test]
    fn chain_rule_rate_matches_momentum_law() {
        let mut s = Sampler::new(43);
        for _ in 0..200 {
            let kc = k(s.uniform(0.5, 3.0), s.uniform(0.5, 3.0), s.uniform(0.5, 3.0), s.uniform(0.1, 2.0), s.uniform(-1.0, 1.0), s.uniform(-2.0, 2.0));
            let x = s.vector(1.0);
            let st = random_state(&mut s, kc.small_d);
            let (v, _) = linear_integral_rate(&kc.model(), &st, &x).unwrap();
            assert!((v - rate_from_momentum_law(&kc, &st, &x)).abs() < 1e-12);
        }
    }

    #[test]
    fn eps_minus_one_nullspace() {
        let sys = build_linear_system(&k(2.0, 3.0, 4.0, 1.0, 0.5, -1.0));
        let ns = nullspace(&sys, NULLSPACE_DEFAULT_TOL).unwrap();
        assert_eq!(ns.len(), 1);
        let want = Vec3::new(6.0, 4.0, 2.0).normalize();
        assert!((ns[0] - want).norm() < 1e-12);
    }

    #[test]
    fn generic_eps_has_empty_nullspace() {
        let sys = build_linear_system(&k(2.0, 3.0, 4.0, 1.0, 0.5, 0.3));
        assert!(nullspace(&sys, NULLSPACE_DEFAULT_TOL).unwrap().is_empty());
    }

    #[test]
    fn isotropic_sphere_keeps_uniform_vector() {
        let sys = build_linear_system(&k(2.0, 2.0, 2.0, 1.0, 0.5, 0.3));
        let ns = nullspace(&sys, NULLSPACE_DEFAULT_TOL).unwrap();
        let u = Vec3::new(1.0, 1.0, 1.0).normalize();
        assert!(ns.iter().any(|v| (v - u).norm() < 1e-12));
    }

    #[test]
    fn zero_matrix_has_full_nullspace() {
        let sys = build_linear_system(&k(1.0, 1.0, 1.0, 0.0, 0.0, 0.0));
        assert_eq!(nullspace(&sys, NULLSPACE_DEFAULT_TOL).unwrap().len(), 3);
    }

    #[test]
    fn nullspace_tolerance_range() {
        let sys = build_linear_system(&k(2.0, 3.0, 4.0, 1.0, 0.5, 0.3));
        assert!(matches!(nullspace(&sys, 1e-3), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn row_vanishing_pattern(
            a in 0.5f64..3.0, b in 0.5f64..3.0, c in 0.5f64..3.0,
            big_d in prop_oneof![Just(0.0), 0.1f64..2.0],
            small_d in prop_oneof![Just(0.0), -1.0f64..1.0],
            eps in prop_oneof![Just(-1.0), -2.0f64..2.0],
        ) {
            let sys = build_linear_system(&k(a, b, c, big_d, small_d, eps));
            let zero = |r: std::ops::Range<usize>| r.flat_map(|i| sys.matrix.row(i).iter().copied().collect::<Vec<_>>()).all(|v| v == 0.0);
            prop_assert_eq!(zero(3..6), small_d * (1.0 + eps) == 0.0);
            prop_assert_eq!(zero(6..9), big_d * (1.0 + eps) == 0.0);
        }

        #[test]
        fn nullspace_vectors_are_pointwise_integrals(
            a in 0.5f64..3.0, b in 0.5f64..3.0, c in 0.5f64..3.0,
            big_d in 0.1f64..2.0, small_d in -1.0f64..1.0,
            eps in prop_oneof![Just(-1.0), Just(1.0), -2.0f64..2.0],
            seed in 0u64..1000,
        ) {
            let kc = k(a, b, c, big_d, small_d, eps);
            let ns = nullspace(&build_linear_system(&kc), NULLSPACE_DEFAULT_TOL).unwrap();
            let mut s = Sampler::new(seed);
            let states: Vec<_> = (0..20).map(|_| random_state(&mut s, small_d)).collect();
            for x in ns {
                prop_assert!(certify_pointwise(&kc.model(), &x, &states).unwrap() < 1e-10);
            }
        }

        #[test]
        fn exponential_branches(
            a in 0.5f64..3.0, c in 0.5f64..3.0, big_d in 0.1f64..2.0,
            small_d in -1.0f64..1.0, eps in -2.0f64..2.0,
        ) {
            let sol = solve_exponential(a, c, big_d, small_d, eps).unwrap();
            for br in [sol.plus, sol.minus] {
                for r in br.residuals(a, c, big_d, small_d, eps) {
                    prop_assert!(r.norm() < 1e-12);
                }
            }
            let prod = sol.plus.y1 * sol.minus.y1;
            prop_assert!((prod + big_d * (a - c)).norm() < 1e-12);
            prop_assert_eq!(sol.plus.y4, -sol.minus.y4);
        }
    }

    #[test]
    fn exponential_reference_values() {
        let sol = solve_exponential(3.0, 1.0, 2.0, 0.0, 1.0 / 3.0).unwrap();
        assert_eq!(sol.plus.y1, Complex64::new(2.0, 0.0));
        assert!((sol.plus.y4.re - 4.0 / 3.0).abs() < 1e-15);
        assert!((sol.minus.y4.re + 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(sol.plus.y3, 0.0);
        assert!(!sol.degenerate);
        let flat = solve_exponential(2.0, 2.0, 1.0, 0.3, 0.5).unwrap();
        assert!(flat.degenerate);
        assert_eq!(flat.plus.y1, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn certification_separates_integrals_from_non_integrals() {
        let mut s = Sampler::new(44);
        let params = s.spherical_params(Configuration::III, 1).unwrap();
        let model = params.model();
        let f1 = |st: &ReducedState| Ok(integrals(&model, st)?.f1);
        assert!(certify_random(f1, &model, 3, 20.0, 1).unwrap().certified);

        let case3 = crate::geometry::SphericalParams::new(
            Configuration::III,
            1.0,
            1.5,
            Vec3::new(1.0, 2.0, 3.0),
            vec![crate::geometry::Ball::solid(1.0, 1.5)],
        )
        .unwrap();
        let m3 = case3.model();
        let f3 = |st: &ReducedState| integral_case_eps_minus_one(&m3, st);
        assert!(certify_random(f3, &m3, 3, 20.0, 2).unwrap().certified);

        let control = m3.clone().with_epsilon(1.0 / 3.0);
        let x = eps_minus_one_weights(&control.inertia, control.total_stiffness());
        let f3_control = |st: &ReducedState| Ok(linear_integral(&control, st, &x));
        let cert = certify_random(f3_control, &control, 3, 20.0, 3).unwrap();
        assert!(!cert.certified && cert.max_relative_drift > 1e-3, "{:e}", cert.max_relative_drift);
    }
}
