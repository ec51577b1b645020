//! First integrals and the invariant measure of the reduced spherical system.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::spherical::{derived_quantities, modified_inertia, reduced_field, ReducedModel, ReducedState};

/// Detection tolerance for `ε = −1`.
pub const EPSILON_TOLERANCE: f64 = 1e-12;
/// Detection tolerance for `B = C`, relative to `max(A, B, C)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

pub fn is_eps_minus_one(model: &ReducedModel) -> bool {
    (model.epsilon + 1.0).abs() <= EPSILON_TOLERANCE
}

pub fn is_bc_symmetric(model: &ReducedModel) -> bool {
    let i = model.inertia;
    (i.y - i.z).abs() <= SYMMETRY_TOLERANCE * i.max()
}

/// Sign choice in the exponential integrals `F3±`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// Both branches of the `B = C` integral. For `A < C` they are complex conjugates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BcPair {
    pub plus: Complex64,
    pub minus: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralReport {
    /// `½⟨M, Ω⟩`.
    pub f1: f64,
    /// `|M + N|²`.
    pub f2: f64,
    /// `⟨Γ_i, Γ_j⟩`, full symmetric matrix.
    pub f_ij: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    /// Linear integral of the `ε = −1` case.
    pub f3: Option<f64>,
    /// Exponential integrals of the `B = C` case.
    pub f3_bc: Option<BcPair>,
    /// `sqrt(det 𝐈)`.
    pub mu: f64,
}

/// A scalar first integral with the floor used for its relative drift.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
    pub floor: f64,
}

impl IntegralReport {
    /// Flat list of every conserved scalar. Complex integrals contribute real and
    /// imaginary parts; their drift is measured on the pair.
    pub fn named_values(&self) -> Vec<NamedValue> {
        let mut out = vec![
            NamedValue { name: "F1".into(), value: self.f1, floor: 0.0 },
            NamedValue { name: "F2".into(), value: self.f2, floor: 0.0 },
        ];
        let n = self.c.len();
        for i in 0..n {
            for j in i + 1..n {
                out.push(NamedValue {
                    name: format!("F{}{}", i + 1, j + 1),
                    value: self.f_ij[i][j],
                    floor: 1.0,
                });
            }
        }
        for (i, c) in self.c.iter().enumerate() {
            out.push(NamedValue { name: format!("c{}", i + 1), value: *c, floor: 1.0 });
        }
        if let Some(f3) = self.f3 {
            out.push(NamedValue { name: "F3".into(), value: f3, floor: 0.0 });
        }
        if let Some(bc) = self.f3_bc {
            for (name, z) in [("F3plus", bc.plus), ("F3minus", bc.minus)] {
                out.push(NamedValue { name: format!("{name}_re"), value: z.re, floor: 0.0 });
                out.push(NamedValue { name: format!("{name}_im"), value: z.im, floor: 0.0 });
            }
        }
        out
    }
}

/// `max_t |F(t) − F(0)| / max(|F(0)|, floor)`.
pub fn relative_drift(values: &[f64], floor: f64) -> f64 {
    let Some(&first) = values.first() else {
        return 0.0;
    };
    let scale = first.abs().max(floor);
    let worst = values.iter().map(|v| (v - first).abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Relative drift of a complex-valued integral.
pub fn relative_drift_complex(values: &[Complex64]) -> f64 {
    let Some(&first) = values.first() else {
        return 0.0;
    };
    let worst = values.iter().map(|v| (v - first).norm()).fold(0.0, f64::max);
    if first.norm() > 0.0 {
        worst / first.norm()
    } else {
        worst
    }
}

pub fn integrals(model: &ReducedModel, state: &ReducedState) -> Result<IntegralReport> {
    let q = derived_quantities(model, state);
    let n = state.n_balls();
    let f_ij = (0..n)
        .map(|i| (0..n).map(|j| state.gammas[i].dot(&state.gammas[j])).collect())
        .collect();
    let one = n == 1;
    Ok(IntegralReport {
        f1: 0.5 * q.momentum.dot(&state.omega),
        f2: q.total_momentum.norm_squared(),
        f_ij,
        c: state.c.clone(),
        f3: if one && is_eps_minus_one(model) {
            Some(integral_case_eps_minus_one(model, state)?)
        } else {
            None
        },
        f3_bc: if one && is_bc_symmetric(model) {
            Some(BcPair {
                plus: integral_case_bc(model, state, Branch::Plus)?,
                minus: integral_case_bc(model, state, Branch::Minus)?,
            })
        } else {
            None
        },
        mu: measure_density(model, &state.gammas)?,
    })
}

/// `sqrt(det 𝐈)`.
pub fn measure_density(model: &ReducedModel, gammas: &[Vec3]) -> Result<f64> {
    let det = modified_inertia(model, gammas).determinant();
    if !(det > 0.0) {
        return Err(Error::degenerate(format!(
            "modified inertia has non-positive determinant {det:e}"
        )));
    }
    Ok(det.sqrt())
}

fn require_one_ball(model: &ReducedModel, state: &ReducedState) -> Result<()> {
    if model.n_balls() != 1 || state.n_balls() != 1 {
        return Err(Error::usage("this integral is defined for one ball only"));
    }
    Ok(())
}

/// Coefficients `(B+C−A+D, A+C−B+D, A+B−C+D)` of the `ε = −1` integral.
pub fn eps_minus_one_weights(inertia: &Vec3, big_d: f64) -> Vec3 {
    let (a, b, c) = (inertia.x, inertia.y, inertia.z);
    Vec3::new(b + c - a + big_d, a + c - b + big_d, a + b - c + big_d)
}

/// `F3 = Σ x_k 𝐌_k Γ_k` with the weights of [`eps_minus_one_weights`].
pub fn integral_case_eps_minus_one(model: &ReducedModel, state: &ReducedState) -> Result<f64> {
    require_one_ball(model, state)?;
    if !is_eps_minus_one(model) {
        return Err(Error::usage(format!(
            "linear third integral requires ε = −1, got ε = {}",
            model.epsilon
        )));
    }
    Ok(linear_integral(model, state, &eps_minus_one_weights(&model.inertia, model.total_stiffness())))
}

/// `Σ x_k 𝐌_k Γ_k` for arbitrary weights.
pub fn linear_integral(model: &ReducedModel, state: &ReducedState, x: &Vec3) -> f64 {
    let q = derived_quantities(model, state);
    let m = q.total_momentum;
    let g = state.gammas[0];
    x.x * m.x * g.x + x.y * m.y * g.y + x.z * m.z * g.z
}

/// `Φ(Γ₁)` with `dΦ/dΓ₁ = 1/(ε sqrt(a + bΓ₁²))` and `Φ(0) = 0`.
pub fn phi_closed_form(a: f64, b: f64, epsilon: f64, gamma1: f64) -> Result<f64> {
    let rho2 = a + b * gamma1 * gamma1;
    if !(rho2 > 0.0) || !(a > 0.0) {
        return Err(Error::domain(format!(
            "ρ² = {rho2:e} must be positive (a = {a:e}, b = {b:e}, Γ₁ = {gamma1})"
        )));
    }
    if epsilon == 0.0 {
        return Err(Error::domain("ε = 0"));
    }
    let sa = a.sqrt();
    let phi = if b > 0.0 {
        let sb = b.sqrt();
        (sb * gamma1 / sa).asinh() / sb
    } else if b < 0.0 {
        let sb = (-b).sqrt();
        (sb * gamma1 / sa).clamp(-1.0, 1.0).asin() / sb
    } else {
        gamma1 / sa
    };
    Ok(phi / epsilon)
}

/// Constants of the `B = C` case.
fn bc_constants(model: &ReducedModel) -> (f64, f64, f64, f64) {
    let (a, c) = (model.inertia.x, model.inertia.z);
    let d = model.total_stiffness();
    (a, c, d, model.epsilon)
}

/// `Φ` for the constants of `model`: `a = C(A+D)`, `b = D(A−C)`.
pub fn phi_primitive(model: &ReducedModel, gamma1: f64) -> Result<f64> {
    let (a, c, d, eps) = bc_constants(model);
    phi_closed_form(c * (a + d), d * (a - c), eps, gamma1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetricAxisQuantities {
    /// `ρ(Γ₁) = sqrt(C(A+D) + D(A−C)Γ₁²)`.
    pub rho_gamma: f64,
    /// `ρ(Γ₁) Ω₁`.
    pub f: f64,
    /// `(A−C)Ω₁Γ₁ + C L`.
    pub g: f64,
    pub phi: f64,
}

pub fn symmetric_axis_quantities(
    model: &ReducedModel,
    state: &ReducedState,
) -> Result<SymmetricAxisQuantities> {
    require_one_ball(model, state)?;
    let (a, c, d, _) = bc_constants(model);
    let gamma = state.gammas[0];
    let omega = state.omega;
    let rho2 = c * (a + d) + d * (a - c) * gamma.x * gamma.x;
    if !(rho2 > 0.0) {
        return Err(Error::domain(format!("ρ(Γ₁)² = {rho2:e} is not positive")));
    }
    let rho = rho2.sqrt();
    Ok(SymmetricAxisQuantities {
        rho_gamma: rho,
        f: rho * omega.x,
        g: (a - c) * omega.x * gamma.x + c * omega.dot(&gamma),
        phi: phi_primitive(model, gamma.x)?,
    })
}

/// `F3± = (±sF + DG − dC) exp(±(1 − ε) s Φ)` with `s = sqrt(D(A − C))`, continued to
/// imaginary `s` when `A < C`.
pub fn integral_case_bc(model: &ReducedModel, state: &ReducedState, branch: Branch) -> Result<Complex64> {
    integral_case_bc_shifted(model, state, branch, 0.0)
}

/// As [`integral_case_bc`] with the primitive `Φ + phi_shift`.
pub fn integral_case_bc_shifted(
    model: &ReducedModel,
    state: &ReducedState,
    branch: Branch,
    phi_shift: f64,
) -> Result<Complex64> {
    require_one_ball(model, state)?;
    if !is_bc_symmetric(model) {
        return Err(Error::usage(format!(
            "exponential integral requires B = C, got B = {}, C = {}",
            model.inertia.y, model.inertia.z
        )));
    }
    let (a, c, big_d, eps) = bc_constants(model);
    let small_d = model.small_d(&state.c);
    let q = symmetric_axis_quantities(model, state)?;
    let s = Complex64::new(big_d * (a - c), 0.0).sqrt() * branch.sign();
    let prefactor = s * q.f + big_d * q.g - small_d * c;
    Ok(prefactor * (s * (1.0 - eps) * (q.phi + phi_shift)).exp())
}

/// Right-hand side variants of the `F3⁺F3⁻` product identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductVariant {
    /// `CD(C+D)⟨M,Ω⟩ − CD⟨𝐌,𝐌⟩ − C(C+D)d²`.
    MinusD2,
    /// `CD(C+D)⟨M,Ω⟩ − CD⟨𝐌,𝐌⟩ + C(C+D)d²`, which is what expanding the product gives.
    PlusD2,
}

pub fn bc_product_rhs(model: &ReducedModel, state: &ReducedState, variant: ProductVariant) -> Result<f64> {
    require_one_ball(model, state)?;
    let (_, c, big_d, _) = bc_constants(model);
    let q = derived_quantities(model, state);
    let small_d = model.small_d(&state.c);
    let sign = match variant {
        ProductVariant::MinusD2 => -1.0,
        ProductVariant::PlusD2 => 1.0,
    };
    Ok(c * big_d * (c + big_d) * q.momentum.dot(&state.omega)
        - c * big_d * q.total_momentum.norm_squared()
        + sign * c * (c + big_d) * small_d * small_d)
}

/// Finite-difference divergence check of the reduced field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureResidual {
    /// `div(μX)` in chart coordinates, with the area element of each `S²` factor.
    pub weighted: f64,
    /// `div(X)` with respect to the standard volume of `ℝ³ × (S²)ⁿ`.
    pub unweighted: f64,
    /// `μ` at the base point.
    pub mu: f64,
    /// `|X|` at the base point.
    pub field_scale: f64,
}

/// Gnomonic chart of `S²` centred at a unit vector.
struct Chart {
    center: Vec3,
    e1: Vec3,
    e2: Vec3,
}

impl Chart {
    fn new(center: Vec3) -> Self {
        let seed = if center.x.abs() < 0.6 { Vec3::x() } else { Vec3::y() };
        let e1 = (seed - seed.dot(&center) * center).normalize();
        let e2 = center.cross(&e1);
        Chart { center, e1, e2 }
    }

    fn point(&self, u: f64, v: f64) -> Vec3 {
        (self.center + u * self.e1 + v * self.e2).normalize()
    }

    /// Chart velocity of a curve through `g` with tangent `gd`.
    fn velocity(&self, g: &Vec3, gd: &Vec3) -> (f64, f64) {
        let w = g.dot(&self.center);
        let wd = gd.dot(&self.center);
        let du = (gd.dot(&self.e1) * w - g.dot(&self.e1) * wd) / (w * w);
        let dv = (gd.dot(&self.e2) * w - g.dot(&self.e2) * wd) / (w * w);
        (du, dv)
    }

    /// Area element of the round sphere in gnomonic coordinates.
    fn area(u: f64, v: f64) -> f64 {
        (1.0 + u * u + v * v).powf(-1.5)
    }
}

pub const MEASURE_STEP_RANGE: (f64, f64) = (1e-7, 1e-2);

/// Central-difference `div(μX)` over `(Ω, Γ_1..Γ_n)` in intrinsic charts.
pub fn verify_measure(model: &ReducedModel, state: &ReducedState, h: f64) -> Result<MeasureResidual> {
    if !(h >= MEASURE_STEP_RANGE.0 && h <= MEASURE_STEP_RANGE.1) {
        return Err(Error::usage(format!(
            "step h = {h:e} outside [{:e}, {:e}]",
            MEASURE_STEP_RANGE.0, MEASURE_STEP_RANGE.1
        )));
    }
    let n = state.n_balls();
    let charts: Vec<Chart> = state.gammas.iter().map(|g| Chart::new(*g)).collect();
    let dim = 3 + 2 * n;

    // Returns (μ·ΠJ·X, ΠJ·X) in chart coordinates at chart point z.
    let eval = |z: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut pt = state.clone();
        pt.omega = Vec3::new(z[0], z[1], z[2]);
        let mut area = 1.0;
        for (i, chart) in charts.iter().enumerate() {
            let (u, v) = (z[3 + 2 * i], z[4 + 2 * i]);
            pt.gammas[i] = chart.point(u, v);
            area *= Chart::area(u, v);
        }
        let rate = reduced_field(model, &pt)?;
        let mu = measure_density(model, &pt.gammas)?;
        let mut x = Vec::with_capacity(dim);
        x.extend_from_slice(rate.omega_dot.as_slice());
        for (i, chart) in charts.iter().enumerate() {
            let (du, dv) = chart.velocity(&pt.gammas[i], &rate.gamma_dots[i]);
            x.push(du);
            x.push(dv);
        }
        let weighted = x.iter().map(|v| mu * area * v).collect();
        let plain = x.iter().map(|v| area * v).collect();
        Ok((weighted, plain))
    };

    let mut base = vec![0.0; dim];
    base[..3].copy_from_slice(state.omega.as_slice());
    let mut weighted = 0.0;
    let mut unweighted = 0.0;
    for k in 0..dim {
        let mut zp = base.clone();
        let mut zm = base.clone();
        zp[k] += h;
        zm[k] -= h;
        let (wp, pp) = eval(&zp)?;
        let (wm, pm) = eval(&zm)?;
        weighted += (wp[k] - wm[k]) / (2.0 * h);
        unweighted += (pp[k] - pm[k]) / (2.0 * h);
    }
    let rate = reduced_field(model, state)?;
    let scale = rate
        .gamma_dots
        .iter()
        .fold(rate.omega_dot.norm_squared(), |acc, g| acc + g.norm_squared())
        .sqrt();
    Ok(MeasureResidual {
        weighted,
        unweighted,
        mu: measure_density(model, &state.gammas)?,
        field_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Configuration, Mat3};
    use crate::quadrature;
    use crate::sampling::Sampler;
    use crate::spherical::integrate;
    use proptest::prelude::*;

    fn bc_model(a: f64, c: f64, d: f64, eps: f64) -> ReducedModel {
        ReducedModel::one_ball(Vec3::new(a, c, c), d, eps)
    }

    #[test]
    fn rest_state_values() {
        let model = ReducedModel::one_ball(Vec3::new(1.0, 2.0, 3.0), 0.5, -1.0);
        let g = Vec3::new(0.0, 0.6, 0.8);
        let st = ReducedState::new(Vec3::zeros(), vec![g], vec![0.7]).unwrap();
        let rep = integrals(&model, &st).unwrap();
        assert_eq!(rep.f1, 0.0);
        assert!((rep.f2 - 0.49).abs() < 1e-15);
        let x = eps_minus_one_weights(&model.inertia, 0.5);
        let want = 0.7 * (x.x * g.x * g.x + x.y * g.y * g.y + x.z * g.z * g.z);
        assert!((rep.f3.unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn isotropic_weights_are_uniform() {
        let x = eps_minus_one_weights(&Vec3::new(2.0, 2.0, 2.0), 0.5);
        assert_eq!(x, Vec3::new(2.5, 2.5, 2.5));
    }

    #[test]
    fn f3_only_reported_in_its_case() {
        let model = ReducedModel::one_ball(Vec3::new(1.0, 2.0, 3.0), 0.5, 0.3);
        let st = ReducedState::new(Vec3::x(), vec![Vec3::z()], vec![0.1]).unwrap();
        let rep = integrals(&model, &st).unwrap();
        assert!(rep.f3.is_none() && rep.f3_bc.is_none());
        assert!(matches!(integral_case_eps_minus_one(&model, &st), Err(Error::Usage(_))));
        assert!(matches!(integral_case_bc(&model, &st, Branch::Plus), Err(Error::Usage(_))));
    }

    #[test]
    fn density_on_axis() {
        let model = ReducedModel::one_ball(Vec3::new(1.0, 2.0, 3.0), 0.5, 0.3);
        let mu = measure_density(&model, &[Vec3::z()]).unwrap();
        assert!((mu - (1.5f64 * 2.5 * 3.0).sqrt()).abs() < 1e-15);
    }

    fn cofactor_det(m: &Mat3) -> f64 {
        m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
            - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
            + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
    }

    #[test]
    fn density_matches_cofactor_expansion() {
        let mut s = Sampler::new(31);
        for _ in 0..100 {
            let p = s.spherical_params(Configuration::I, 3).unwrap();
            let st = s.reduced_state(&p).unwrap();
            let m = p.model();
            let det = cofactor_det(&modified_inertia(&m, &st.gammas));
            let mu = measure_density(&m, &st.gammas).unwrap();
            assert!((mu - det.sqrt()).abs() < 1e-12 * mu);
        }
    }

    #[test]
    fn bc_density_factorizes() {
        let mut s = Sampler::new(32);
        for _ in 0..100 {
            let model = bc_model(s.uniform(0.5, 3.0), s.uniform(0.5, 3.0), s.uniform(0.1, 2.0), 0.3);
            let g = s.unit_vector();
            let st = ReducedState::new(Vec3::zeros(), vec![g], vec![0.0]).unwrap();
            let (a, c, d, _) = bc_constants(&model);
            let q = symmetric_axis_quantities(&model, &st).unwrap();
            let want = (c + d).sqrt() * q.rho_gamma;
            assert!((measure_density(&model, &[g]).unwrap() - want).abs() < 1e-12 * want);
            assert!((q.rho_gamma - (c * (a + d) + d * (a - c) * g.x * g.x).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_vanishes_at_zero_and_is_linear_when_a_equals_c() {
        assert_eq!(phi_closed_form(2.0, 0.7, 0.3, 0.0).unwrap(), 0.0);
        assert_eq!(phi_closed_form(2.0, -0.7, 0.3, 0.0).unwrap(), 0.0);
        let model = bc_model(2.0, 2.0, 1.0, 0.5);
        let slope = 1.0 / (0.5 * (2.0f64 * 3.0).sqrt());
        for g in [-1.0, -0.3, 0.4, 1.0] {
            assert!((phi_primitive(&model, g).unwrap() - slope * g).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_rejects_nonpositive_rho() {
        assert!(matches!(phi_closed_form(1.0, -2.0, 0.3, 0.9), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn phi_derivative_matches_integrand(
            a in 0.5f64..5.0, b in -0.45f64..5.0, eps in prop_oneof![-2.0f64..-0.1, 0.1f64..2.0],
            g in -0.99f64..0.99,
        ) {
            let h = 1e-5;
            let fd = (phi_closed_form(a, b, eps, g + h).unwrap() - phi_closed_form(a, b, eps, g - h).unwrap()) / (2.0 * h);
            let want = 1.0 / (eps * (a + b * g * g).sqrt());
            prop_assert!((fd - want).abs() < 1e-9 * want.abs().max(1.0));
        }

        #[test]
        fn phi_agrees_with_quadrature(
            a in 0.5f64..5.0, b in -0.45f64..5.0, eps in prop_oneof![-2.0f64..-0.1, 0.1f64..2.0],
            g in -1.0f64..1.0,
        ) {
            let q = quadrature::integrate(|x| 1.0 / (eps * (a + b * x * x).sqrt()), 0.0, g, &Default::default()).unwrap();
            let phi = phi_closed_form(a, b, eps, g).unwrap();
            prop_assert!((phi - q.value).abs() < 1e-12 * phi.abs().max(1.0), "{} vs {}", phi, q.value);
        }
    }

    #[test]
    fn product_identity_plus_variant_holds_pointwise() {
        let mut s = Sampler::new(33);
        for _ in 0..200 {
            let model = bc_model(s.uniform(0.5, 3.0), s.uniform(0.5, 3.0), s.uniform(0.1, 2.0), s.uniform(-1.0, 1.0));
            let st = ReducedState::new(s.vector(1.0), vec![s.unit_vector()], vec![s.uniform(-1.0, 1.0)]).unwrap();
            let prod = integral_case_bc(&model, &st, Branch::Plus).unwrap()
                * integral_case_bc(&model, &st, Branch::Minus).unwrap();
            let rhs = bc_product_rhs(&model, &st, ProductVariant::PlusD2).unwrap();
            assert!(prod.im.abs() < 1e-10 * rhs.abs().max(1.0));
            assert!((prod.re - rhs).abs() < 1e-10 * rhs.abs().max(1.0), "{} vs {rhs}", prod.re);
        }
    }

    #[test]
    fn product_variants_coincide_without_spin() {
        let model = bc_model(2.0, 1.0, 0.5, 0.3);
        let st = ReducedState::new(Vec3::new(0.3, 0.2, -0.5), vec![Vec3::new(0.6, 0.0, 0.8)], vec![0.0]).unwrap();
        let a = bc_product_rhs(&model, &st, ProductVariant::MinusD2).unwrap();
        let b = bc_product_rhs(&model, &st, ProductVariant::PlusD2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bc_branches_are_conjugate_when_a_below_c() {
        let model = bc_model(1.0, 2.0, 0.5, 0.3);
        let st = ReducedState::new(Vec3::new(0.3, 0.2, -0.5), vec![Vec3::new(0.6, 0.0, 0.8)], vec![0.4]).unwrap();
        let p = integral_case_bc(&model, &st, Branch::Plus).unwrap();
        let m = integral_case_bc(&model, &st, Branch::Minus).unwrap();
        assert!((p - m.conj()).norm() < 1e-14);
        assert!(p.im != 0.0);
    }

    #[test]
    fn f_vanishes_on_the_equatorial_slice() {
        let model = bc_model(2.0, 1.0, 0.5, 0.3);
        let st = ReducedState::new(Vec3::new(0.0, 0.4, 0.3), vec![Vec3::new(0.0, 0.6, 0.8)], vec![0.2]).unwrap();
        let q = symmetric_axis_quantities(&model, &st).unwrap();
        assert_eq!(q.f, 0.0);
        assert_eq!(q.phi, 0.0);
        let want = 0.5 * q.g - 0.2;
        assert!((integral_case_bc(&model, &st, Branch::Plus).unwrap().re - want).abs() < 1e-15);
    }

    #[test]
    fn phi_shift_rescales_by_a_common_positive_factor() {
        let model = bc_model(2.0, 1.0, 0.5, 0.3);
        let mut s = Sampler::new(34);
        let shift = 0.37;
        let (a, c, d, eps) = bc_constants(&model);
        let factor = ((d * (a - c)).sqrt() * (1.0 - eps) * shift).exp();
        for _ in 0..20 {
            let st = ReducedState::new(s.vector(1.0), vec![s.unit_vector()], vec![s.uniform(-1.0, 1.0)]).unwrap();
            let base = integral_case_bc(&model, &st, Branch::Plus).unwrap();
            let shifted = integral_case_bc_shifted(&model, &st, Branch::Plus, shift).unwrap();
            assert!((shifted - base * factor).norm() < 1e-13 * shifted.norm().max(1.0));
        }
    }

    #[test]
    fn bc_integrals_are_conserved_for_both_signs_of_a_minus_c() {
        let mut s = Sampler::new(35);
        for (a, c) in [(2.5, 1.0), (1.0, 2.0)] {
            let model = bc_model(a, c, 0.8, 1.0 / 3.0);
            let st = ReducedState::new(s.vector(1.0), vec![s.unit_vector()], vec![0.4]).unwrap();
            let traj = integrate(&model, &st, &crate::ode::uniform_grid(20.0, 41), 1e-11).unwrap();
            for branch in [Branch::Plus, Branch::Minus] {
                let vals: Vec<Complex64> = traj
                    .states
                    .iter()
                    .map(|x| integral_case_bc(&model, x, branch).unwrap())
                    .collect();
                let drift = relative_drift_complex(&vals);
                assert!(drift < 1e-7, "A={a} C={c} {branch:?}: {drift:e}");
            }
        }
    }

    #[test]
    fn measure_step_range_enforced() {
        let model = ReducedModel::one_ball(Vec3::new(1.0, 2.0, 3.0), 0.5, 0.3);
        let st = ReducedState::new(Vec3::x(), vec![Vec3::z()], vec![0.1]).unwrap();
        assert!(matches!(verify_measure(&model, &st, 1e-1), Err(Error::Usage(_))));
    }

    #[test]
    fn weighted_divergence_vanishes_and_plain_does_not() {
        let mut s = Sampler::new(36);
        for config in Configuration::ALL {
            let p = s.spherical_params(config, 1).unwrap();
            let model = p.model();
            for _ in 0..10 {
                let st = s.reduced_state(&p).unwrap();
                let r = verify_measure(&model, &st, 1e-4).unwrap();
                assert!(r.weighted.abs() < 1e-6, "{config}: {:e}", r.weighted);
            }
        }
    }

    #[test]
    fn drift_helpers() {
        assert_eq!(relative_drift(&[2.0, 2.5, 1.0], 0.0), 0.5);
        assert_eq!(relative_drift(&[0.0, 1e-9], 1.0), 1e-9);
        assert_eq!(relative_drift(&[], 1.0), 0.0);
    }
}
