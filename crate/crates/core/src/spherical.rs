//! Reduced and full equations of motion of the spherical bearing.
//!
//! The reduced phase space is `ℝ³ × (S²)ⁿ` with coordinates `(Ω, Γ_1..Γ_n)`,
//! all expressed in the frame of the moving sphere. The spins `c_i = ⟨Ω_i, Γ_i⟩`
//! are first integrals and enter as fixed constants.
//!
//! The reduced flow is
//!
//! ```text
//! d/dt (M + N) = (M + N) × Ω,      Γ̇_i = ε Γ_i × Ω,
//! M = 𝐈Ω,   𝐈 = diag(A,B,C) + Σ D_i (𝟙 − Γ_i⊗Γ_i),   N = Σ s_i c_i Γ_i,
//! ```
//!
//! with `D_i = δ²(I_i + m_i r²)` and `s_i = δ I_i`. Expanding the time derivative
//! of `M + N` leaves one symmetric 3×3 solve per evaluation for `Ω̇`.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{hat, orthogonal_projector, Configuration, Mat3, SphericalParams, Vec3};
use crate::ode::{self, OdeSystem, Options};

/// Unit-length tolerance for ball directions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// `det 𝐈` below this fraction of `(A+D)(B+D)(C+D)` is treated as singular.
pub const SINGULARITY_RATIO: f64 = 1e-12;

/// Constants of one ball as they enter the reduced equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallCoupling {
    /// `D_i = δ²(I_i + m_i r²)`, weight of the projector in the modified inertia.
    pub stiffness: f64,
    /// `δ I_i`, so that the ball's contribution to `N` is `δ I_i c_i Γ_i`.
    pub spin: f64,
}

/// The reduced system depends on the geometry only through these numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    /// Principal moments `(A, B, C)` of the moving sphere.
    pub inertia: Vec3,
    pub epsilon: f64,
    pub balls: Vec<BallCoupling>,
}

impl ReducedModel {
    /// A one-ball model in the `(A, B, C, D, ε)` form, with unit spin coupling so that
    /// the ball constant `c₁` equals `d`.
    pub fn one_ball(inertia: Vec3, big_d: f64, epsilon: f64) -> Self {
        ReducedModel {
            inertia,
            epsilon,
            balls: vec![BallCoupling {
                stiffness: big_d,
                spin: 1.0,
            }],
        }
    }

    /// Same model with `ε` replaced by a formal value. `ε = 1` gives the
    /// support-ball system with fixed ball centres.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn n_balls(&self) -> usize {
        self.balls.len()
    }

    pub fn total_stiffness(&self) -> f64 {
        self.balls.iter().map(|b| b.stiffness).sum()
    }

    /// `(A+D)(B+D)(C+D)` with `D = Σ D_i`; the scale of `det 𝐈`.
    pub fn determinant_scale(&self) -> f64 {
        let d = self.total_stiffness();
        self.inertia.iter().map(|a| a + d).product()
    }

    /// `d = s₁ c₁` of the one-ball system.
    pub fn small_d(&self, c: &[f64]) -> f64 {
        self.balls
            .iter()
            .zip(c)
            .map(|(b, ci)| b.spin * ci)
            .sum()
    }
}

impl SphericalParams {
    pub fn model(&self) -> ReducedModel {
        let delta = self.delta();
        let r2 = self.ball_radius * self.ball_radius;
        ReducedModel {
            inertia: self.sphere_inertia,
            epsilon: self.epsilon(),
            balls: self
                .balls
                .iter()
                .map(|b| BallCoupling {
                    stiffness: delta * delta * (b.inertia + b.mass * r2),
                    spin: delta * b.inertia,
                })
                .collect(),
        }
    }
}

/// A point of the reduced phase space together with the ball spins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    /// Angular velocity of the moving sphere in its own frame.
    pub omega: Vec3,
    /// Unit directions to the ball centres.
    pub gammas: Vec<Vec3>,
    /// Ball spins `c_i = ⟨Ω_i, Γ_i⟩`.
    pub c: Vec<f64>,
}

impl ReducedState {
    pub fn new(omega: Vec3, gammas: Vec<Vec3>, c: Vec<f64>) -> Result<Self> {
        let state = ReducedState { omega, gammas, c };
        state.validate()?;
        Ok(state)
    }

    pub fn n_balls(&self) -> usize {
        self.gammas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.len() != self.c.len() {
            return Err(Error::usage(format!(
                "{} ball directions but {} spin constants",
                self.gammas.len(),
                self.c.len()
            )));
        }
        if !self.omega.iter().all(|v| v.is_finite()) || !self.c.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("state has non-finite components"));
        }
        for (i, g) in self.gammas.iter().enumerate() {
            let defect = (g.norm() - 1.0).abs();
            if !(defect <= UNIT_TOLERANCE) {
                return Err(Error::domain(format!(
                    "Γ_{} is not a unit vector (| |Γ| − 1 | = {defect:e})",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    fn check_against(&self, model: &ReducedModel) -> Result<()> {
        if self.n_balls() != model.n_balls() {
            return Err(Error::usage(format!(
                "state has {} balls, model has {}",
                self.n_balls(),
                model.n_balls()
            )));
        }
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(3 + 3 * self.n_balls());
        y.extend_from_slice(self.omega.as_slice());
        for g in &self.gammas {
            y.extend_from_slice(g.as_slice());
        }
        y
    }

    pub fn from_slice(y: &[f64], c: &[f64]) -> Self {
        ReducedState {
            omega: Vec3::from_column_slice(&y[0..3]),
            gammas: (0..c.len())
                .map(|i| Vec3::from_column_slice(&y[3 + 3 * i..6 + 3 * i]))
                .collect(),
            c: c.to_vec(),
        }
    }
}

/// Reject initial ball layouts in which two balls overlap (cases I and II).
pub fn check_separation(params: &SphericalParams, state: &ReducedState) -> Result<()> {
    if !matches!(params.config, Configuration::I | Configuration::II) || state.n_balls() < 2 {
        return Ok(());
    }
    let min = params.min_separation();
    for i in 0..state.n_balls() {
        for j in i + 1..state.n_balls() {
            let sep = (state.gammas[i] - state.gammas[j]).norm();
            if sep < min {
                return Err(Error::domain(format!(
                    "balls {} and {} overlap: |Γ_i − Γ_j| = {sep:.6} < 2r/(R ± r) = {min:.6}",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

/// `𝐈 = diag(A,B,C) + Σ D_i (𝟙 − Γ_i ⊗ Γ_i)`.
pub fn modified_inertia(model: &ReducedModel, gammas: &[Vec3]) -> Mat3 {
    let mut m = Mat3::from_diagonal(&model.inertia);
    for (b, g) in model.balls.iter().zip(gammas) {
        m += b.stiffness * orthogonal_projector(g);
    }
    m
}

/// Angular velocity of ball `i` in the sphere frame, from the rolling constraint
/// and its spin `c_i`: `Ω_i = c_i Γ_i + δ(Ω − ⟨Γ_i, Ω⟩Γ_i)`.
pub fn omega_ball(delta: f64, omega: &Vec3, gamma: &Vec3, c: f64) -> Vec3 {
    c * gamma + delta * (omega - gamma.dot(omega) * gamma)
}

/// Momenta and auxiliary scalars at a reduced state.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedQuantities {
    pub modified_inertia: Mat3,
    /// `M = 𝐈Ω`.
    pub momentum: Vec3,
    /// `N = Σ δ I_i c_i Γ_i`.
    pub spin_momentum: Vec3,
    /// `𝐌 = M + N`.
    pub total_momentum: Vec3,
    /// `D = Σ D_i` (for one ball, `δ²(I₁ + m₁r²)`).
    pub big_d: f64,
    /// `d = δ I₁ c₁`; one ball only.
    pub small_d: Option<f64>,
    /// `L = ⟨Ω, Γ⟩`; one ball only.
    pub l: Option<f64>,
}

pub fn derived_quantities(model: &ReducedModel, state: &ReducedState) -> DerivedQuantities {
    let inertia = modified_inertia(model, &state.gammas);
    let momentum = inertia * state.omega;
    let spin_momentum = model
        .balls
        .iter()
        .zip(&state.gammas)
        .zip(&state.c)
        .fold(Vec3::zeros(), |acc, ((b, g), c)| acc + b.spin * c * g);
    let one = state.n_balls() == 1;
    DerivedQuantities {
        modified_inertia: inertia,
        momentum,
        spin_momentum,
        total_momentum: momentum + spin_momentum,
        big_d: model.total_stiffness(),
        small_d: one.then(|| model.balls[0].spin * state.c[0]),
        l: one.then(|| state.omega.dot(&state.gammas[0])),
    }
}

/// Time derivative of a reduced state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRate {
    pub omega_dot: Vec3,
    pub gamma_dots: Vec<Vec3>,
}

/// Right-hand side of the reduced equations.
pub fn reduced_field(model: &ReducedModel, state: &ReducedState) -> Result<ReducedRate> {
    state.check_against(model)?;
    let omega = state.omega;
    let inertia = modified_inertia(model, &state.gammas);
    let det = inertia.determinant();
    if !(det > SINGULARITY_RATIO * model.determinant_scale()) {
        return Err(Error::degenerate(format!(
            "modified inertia is singular (det = {det:e})"
        )));
    }

    let gamma_dots: Vec<Vec3> = state
        .gammas
        .iter()
        .map(|g| model.epsilon * g.cross(&omega))
        .collect();

    // 𝐈Ω̇ = (M + N) × Ω − (d𝐈/dt) Ω − dN/dt, with (d𝐈/dt)Ω = −Σ D_i ⟨Γ_i, Ω⟩ Γ̇_i
    // because ⟨Γ̇_i, Ω⟩ = 0.
    let mut total = inertia * omega;
    let mut correction = Vec3::zeros();
    for (((b, g), gd), c) in model
        .balls
        .iter()
        .zip(&state.gammas)
        .zip(&gamma_dots)
        .zip(&state.c)
    {
        total += b.spin * c * g;
        correction += (b.stiffness * g.dot(&omega) - b.spin * c) * gd;
    }
    let rhs = total.cross(&omega) + correction;
    let omega_dot = inertia
        .cholesky()
        .ok_or_else(|| Error::degenerate("modified inertia is not positive definite"))?
        .solve(&rhs);
    Ok(ReducedRate {
        omega_dot,
        gamma_dots,
    })
}

/// Reduced state plus the attitudes of the sphere and of every ball.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub reduced: ReducedState,
    /// Maps the sphere frame to the fixed frame.
    pub g: Mat3,
    /// Maps each ball frame to the fixed frame.
    pub g_balls: Vec<Mat3>,
}

impl FullState {
    /// Attach identity attitudes to a reduced state.
    pub fn from_reduced(reduced: ReducedState) -> Self {
        let n = reduced.n_balls();
        FullState {
            reduced,
            g: Mat3::identity(),
            g_balls: vec![Mat3::identity(); n],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = self.reduced.to_vec();
        y.extend_from_slice(self.g.as_slice());
        for gi in &self.g_balls {
            y.extend_from_slice(gi.as_slice());
        }
        y
    }

    pub fn from_slice(y: &[f64], c: &[f64]) -> Self {
        let n = c.len();
        let reduced = ReducedState::from_slice(y, c);
        let base = 3 + 3 * n;
        FullState {
            reduced,
            g: Mat3::from_column_slice(&y[base..base + 9]),
            g_balls: (0..n)
                .map(|i| Mat3::from_column_slice(&y[base + 9 + 9 * i..base + 18 + 9 * i]))
                .collect(),
        }
    }

    /// Largest orthogonality or determinant defect among all attitudes.
    pub fn attitude_defect(&self) -> f64 {
        std::iter::once(&self.g)
            .chain(&self.g_balls)
            .map(crate::geometry::orthogonality_defect)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullRate {
    pub reduced: ReducedRate,
    pub g_dot: Mat3,
    pub g_ball_dots: Vec<Mat3>,
}

/// Full equations: the reduced flow plus `ġ = g Ω̂` and `ġ_i = ω̂_i g_i`, where
/// `ω_i = g Ω_i` is the ball's angular velocity in the fixed frame.
pub fn full_field(params: &SphericalParams, state: &FullState) -> Result<FullRate> {
    let model = params.model();
    full_field_with(&model, params.delta(), state)
}

fn full_field_with(model: &ReducedModel, delta: f64, state: &FullState) -> Result<FullRate> {
    let reduced = reduced_field(model, &state.reduced)?;
    let r = &state.reduced;
    let g_dot = state.g * hat(&r.omega);
    let g_ball_dots = r
        .gammas
        .iter()
        .zip(&r.c)
        .zip(&state.g_balls)
        .map(|((gamma, &c), gi)| {
            let spatial = state.g * omega_ball(delta, &r.omega, gamma, c);
            hat(&spatial) * gi
        })
        .collect();
    Ok(FullRate {
        reduced,
        g_dot,
        g_ball_dots,
    })
}

/// The reduced flow as an ODE on `ℝ^{3+3n}`, renormalizing `Γ_i` after each step.
pub struct ReducedFlow<'a> {
    pub model: &'a ReducedModel,
    pub c: &'a [f64],
}

impl OdeSystem for ReducedFlow<'_> {
    fn dim(&self) -> usize {
        3 + 3 * self.c.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let state = ReducedState::from_slice(y, self.c);
        let rate = reduced_field(self.model, &state)?;
        dy[0..3].copy_from_slice(rate.omega_dot.as_slice());
        for (i, gd) in rate.gamma_dots.iter().enumerate() {
            dy[3 + 3 * i..6 + 3 * i].copy_from_slice(gd.as_slice());
        }
        Ok(())
    }

    fn project(&self, y: &mut [f64]) -> f64 {
        normalize_blocks(&mut y[3..3 + 3 * self.c.len()])
    }
}

fn normalize_blocks(y: &mut [f64]) -> f64 {
    let mut defect: f64 = 0.0;
    for block in y.chunks_exact_mut(3) {
        let norm = (block[0] * block[0] + block[1] * block[1] + block[2] * block[2]).sqrt();
        defect = defect.max((norm - 1.0).abs());
        if norm > 0.0 {
            block.iter_mut().for_each(|v| *v /= norm);
        }
    }
    defect
}

struct FullFlow<'a> {
    model: &'a ReducedModel,
    delta: f64,
    c: &'a [f64],
}

impl OdeSystem for FullFlow<'_> {
    fn dim(&self) -> usize {
        let n = self.c.len();
        3 + 3 * n + 9 + 9 * n
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.c.len();
        let state = FullState::from_slice(y, self.c);
        let rate = full_field_with(self.model, self.delta, &state)?;
        dy[0..3].copy_from_slice(rate.reduced.omega_dot.as_slice());
        for (i, gd) in rate.reduced.gamma_dots.iter().enumerate() {
            dy[3 + 3 * i..6 + 3 * i].copy_from_slice(gd.as_slice());
        }
        let base = 3 + 3 * n;
        dy[base..base + 9].copy_from_slice(rate.g_dot.as_slice());
        for (i, gd) in rate.g_ball_dots.iter().enumerate() {
            dy[base + 9 + 9 * i..base + 18 + 9 * i].copy_from_slice(gd.as_slice());
        }
        Ok(())
    }

    fn project(&self, y: &mut [f64]) -> f64 {
        normalize_blocks(&mut y[3..3 + 3 * self.c.len()])
    }
}

/// Accepted tolerance range of the trajectory integrators.
pub const TOL_RANGE: (f64, f64) = (1e-13, 1e-3);

fn check_tol(tol: f64) -> Result<()> {
    if !(tol >= TOL_RANGE.0 && tol <= TOL_RANGE.1) {
        return Err(Error::usage(format!(
            "tolerance {tol:e} outside [{:e}, {:e}]",
            TOL_RANGE.0, TOL_RANGE.1
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub stats: ode::Stats,
}

/// Integrate the reduced flow and sample it at `times` (sorted, starting at or after 0).
pub fn integrate(
    model: &ReducedModel,
    state: &ReducedState,
    times: &[f64],
    tol: f64,
) -> Result<Trajectory<ReducedState>> {
    check_tol(tol)?;
    state.validate()?;
    state.check_against(model)?;
    let flow = ReducedFlow {
        model,
        c: &state.c,
    };
    let sol = ode::integrate(&flow, 0.0, &state.to_vec(), times, &Options::with_tol(tol))?;
    Ok(Trajectory {
        states: sol
            .states
            .iter()
            .map(|y| ReducedState::from_slice(y, &state.c))
            .collect(),
        times: sol.times,
        stats: sol.stats,
    })
}

/// Integrate the reduced flow together with the attitudes.
pub fn integrate_full(
    params: &SphericalParams,
    state: &FullState,
    times: &[f64],
    tol: f64,
) -> Result<Trajectory<FullState>> {
    check_tol(tol)?;
    state.reduced.validate()?;
    let model = params.model();
    state.reduced.check_against(&model)?;
    let flow = FullFlow {
        model: &model,
        delta: params.delta(),
        c: &state.reduced.c,
    };
    let sol = ode::integrate(&flow, 0.0, &state.to_vec(), times, &Options::with_tol(tol))?;
    Ok(Trajectory {
        states: sol
            .states
            .iter()
            .map(|y| FullState::from_slice(y, &state.reduced.c))
            .collect(),
        times: sol.times,
        stats: sol.stats,
    })
}
