//! The planar ball bearing: a heavy plane carried by `n` balls rolling on a fixed plane.
//!
//! Reduced phase space `𝒬 = {(v_x, v_y, v_φ, N₁, N₂, M) : δM > N₁² + N₂²}` with
//!
//! ```text
//! v̇ = 𝕀⁻¹𝐦,   ṅ = 𝕁v,
//! ```
//!
//! On a level set of `f₁, f₂, f₃` the system closes in `(v_φ, N₁, N₂)`. In polar
//! coordinates `N = A(cos θ, sin θ)` it integrates by quadratures:
//!
//! ```text
//! v_φ = d₆ / sqrt(d₅ + cA²),                    c = m(m+δ)/δ,
//! kA sin(θ−α) + β d₆ sqrt(d₅ + cA²) = d₇,       β = (m+2δ)δ / (2m(m+δ)²),
//! Ȧ = −k cos(θ−α).
//! ```

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::ode::{self, OdeSystem, Options};
use crate::quadrature;

/// Mass and inertia of one planar ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarBall {
    pub mass: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarParams {
    /// Mass `m` of the moving plane.
    pub plane_mass: f64,
    /// Inertia `I` of the moving plane about its normal through `O`.
    pub plane_inertia: f64,
    pub ball_radius: f64,
    pub balls: Vec<PlanarBall>,
}

impl PlanarParams {
    pub fn new(plane_mass: f64, plane_inertia: f64, ball_radius: f64, balls: Vec<PlanarBall>) -> Result<Self> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(plane_mass) || !positive(plane_inertia) || !positive(ball_radius) {
            return Err(Error::domain(format!(
                "plane mass, plane inertia and ball radius must be positive (m = {plane_mass}, I = {plane_inertia}, r = {ball_radius})"
            )));
        }
        if balls.is_empty() {
            return Err(Error::domain("at least one ball is required"));
        }
        for (i, b) in balls.iter().enumerate() {
            if !positive(b.mass) || !positive(b.inertia) {
                return Err(Error::domain(format!(
                    "ball {i}: mass and inertia must be positive (m = {}, I = {})",
                    b.mass, b.inertia
                )));
            }
        }
        Ok(PlanarParams {
            plane_mass,
            plane_inertia,
            ball_radius,
            balls,
        })
    }

    /// `δ_i = (m_i r² + I_i) / (4r²)`.
    pub fn deltas(&self) -> Vec<f64> {
        let r2 = self.ball_radius * self.ball_radius;
        self.balls
            .iter()
            .map(|b| (b.mass * r2 + b.inertia) / (4.0 * r2))
            .collect()
    }

    pub fn delta(&self) -> f64 {
        self.deltas().iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarState {
    /// `(v_x, v_y, v_φ)`.
    pub v: Vec3,
    /// `(N₁, N₂, M)`.
    pub n: Vec3,
}

impl PlanarState {
    /// State from velocities and the contact points `OB_i` in the plane frame.
    pub fn from_contacts(params: &PlanarParams, v: Vec3, contacts: &[Vector2<f64>]) -> Result<Self> {
        if contacts.len() != params.balls.len() {
            return Err(Error::usage(format!(
                "{} contact points for {} balls",
                contacts.len(),
                params.balls.len()
            )));
        }
        let mut n = Vec3::zeros();
        for (d, p) in params.deltas().iter().zip(contacts) {
            n.x += d * p.x;
            n.y += d * p.y;
            n.z += d * p.norm_squared();
        }
        let state = PlanarState { v, n };
        check_in_q(params, &state)?;
        Ok(state)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.v.x, self.v.y, self.v.z, self.n.x, self.n.y, self.n.z]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        PlanarState {
            v: Vec3::new(y[0], y[1], y[2]),
            n: Vec3::new(y[3], y[4], y[5]),
        }
    }
}

/// `f₃ = δM − (N₁² + N₂²)`.
fn f3(delta: f64, n: &Vec3) -> f64 {
    delta * n.z - n.x * n.x - n.y * n.y
}

/// Relative margin for membership in `𝒬`.
const Q_MARGIN: f64 = 1e-12;

fn check_in_q(params: &PlanarParams, state: &PlanarState) -> Result<()> {
    let value = f3(params.delta(), &state.n);
    // One ball, or all balls at one point, gives f₃ = 0 up to rounding.
    if !(value > Q_MARGIN * params.delta() * state.n.z.abs()) {
        return Err(Error::domain(format!(
            "state outside 𝒬: δM − (N₁² + N₂²) = {value:e} must be > 0"
        )));
    }
    Ok(())
}

pub fn planar_inertia(params: &PlanarParams, n: &Vec3) -> Mat3 {
    let md = params.plane_mass + params.delta();
    Mat3::new(
        md, 0.0, -n.y, //
        0.0, md, n.x, //
        -n.y, n.x, params.plane_inertia + n.z,
    )
}

/// `det 𝕀 = (m+δ)((m+δ)I + mM + δM − N₁² − N₂²)`.
pub fn planar_det(params: &PlanarParams, n: &Vec3) -> f64 {
    let m = params.plane_mass;
    let delta = params.delta();
    (m + delta) * ((m + delta) * params.plane_inertia + m * n.z + f3(delta, n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarRate {
    pub v_dot: Vec3,
    pub n_dot: Vec3,
}

pub fn planar_field(params: &PlanarParams, state: &PlanarState) -> Result<PlanarRate> {
    check_in_q(params, state)?;
    let delta = params.delta();
    let (v, n) = (state.v, state.n);
    let m_vec = 0.5
        * Vec3::new(
            n.x * v.z * v.z - delta * v.z * v.y,
            n.y * v.z * v.z + delta * v.z * v.x,
            v.z * (n.x * v.x + n.y * v.y),
        );
    let j = -0.5
        * Mat3::new(
            delta, 0.0, n.y, //
            0.0, delta, -n.x, //
            2.0 * n.x, 2.0 * n.y, 0.0,
        );
    let inertia = planar_inertia(params, &n);
    let v_dot = inertia
        .cholesky()
        .ok_or_else(|| Error::degenerate("planar inertia is not positive definite"))?
        .solve(&m_vec);
    Ok(PlanarRate {
        v_dot,
        n_dot: j * v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanarIntegrals {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
}

impl PlanarIntegrals {
    pub fn as_array(&self) -> [f64; 4] {
        [self.f1, self.f2, self.f3, self.f4]
    }
}

pub fn planar_integrals(params: &PlanarParams, state: &PlanarState) -> PlanarIntegrals {
    let md = params.plane_mass + params.delta();
    let (v, n) = (state.v, state.n);
    PlanarIntegrals {
        f1: md * v.x - v.z * n.y,
        f2: md * v.y + v.z * n.x,
        f3: f3(params.delta(), &n),
        f4: 0.5 * (params.plane_inertia + n.z) * v.z * v.z
            + 0.5 * md * (v.x * v.x + v.y * v.y)
            + v.z * (n.x * v.y - n.y * v.x),
    }
}

struct PlanarFlow<'a> {
    params: &'a PlanarParams,
}

impl OdeSystem for PlanarFlow<'_> {
    fn dim(&self) -> usize {
        6
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let rate = planar_field(self.params, &PlanarState::from_slice(y))?;
        dy[..3].copy_from_slice(rate.v_dot.as_slice());
        dy[3..].copy_from_slice(rate.n_dot.as_slice());
        Ok(())
    }
}

pub fn integrate_planar(
    params: &PlanarParams,
    state: &PlanarState,
    times: &[f64],
    tol: f64,
) -> Result<Vec<PlanarState>> {
    check_in_q(params, state)?;
    let sol = ode::integrate(&PlanarFlow { params }, 0.0, &state.to_array(), times, &Options::with_tol(tol))?;
    Ok(sol.states.iter().map(|y| PlanarState::from_slice(y)).collect())
}

/// Finite-difference divergence over `(v, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanarMeasureResidual {
    /// `div(sqrt(det 𝕀) X)`.
    pub weighted: f64,
    /// `div(X)`.
    pub unweighted: f64,
}

pub fn verify_planar_measure(params: &PlanarParams, state: &PlanarState, h: f64) -> Result<PlanarMeasureResidual> {
    let (lo, hi) = crate::invariants::MEASURE_STEP_RANGE;
    if !(h >= lo && h <= hi) {
        return Err(Error::usage(format!("step h = {h:e} outside [{lo:e}, {hi:e}]")));
    }
    let base = state.to_array();
    let eval = |y: &[f64; 6], k: usize| -> Result<(f64, f64)> {
        let s = PlanarState::from_slice(y);
        let rate = planar_field(params, &s)?;
        let x = if k < 3 { rate.v_dot[k] } else { rate.n_dot[k - 3] };
        Ok((planar_det(params, &s.n).sqrt() * x, x))
    };
    let (mut weighted, mut unweighted) = (0.0, 0.0);
    for k in 0..6 {
        let (mut yp, mut ym) = (base, base);
        yp[k] += h;
        ym[k] -= h;
        let (wp, pp) = eval(&yp, k)?;
        let (wm, pm) = eval(&ym, k)?;
        weighted += (wp - wm) / (2.0 * h);
        unweighted += (pp - pm) / (2.0 * h);
    }
    Ok(PlanarMeasureResidual {
        weighted,
        unweighted,
    })
}

/// Constants of one level set `f₁ = d₁, f₂ = d₂, f₃ = d₃` and of the orbit on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetData {
    pub plane_mass: f64,
    pub plane_inertia: f64,
    pub delta: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// `(m+δ)²(Iδ + d₃)/δ`, so that `det 𝕀 = d₅ + cA²`.
    pub d5: f64,
    /// `v_φ sqrt(d₅ + cA²)`, signed like `v_φ`.
    pub d6: f64,
    /// Value of `kA sin(θ−α) + β d₆ sqrt(d₅ + cA²)`.
    pub d7: f64,
    /// Phase with `(d₁, d₂) = sqrt(d₁² + d₂²)(cos α, sin α)`.
    pub alpha: f64,
    /// `δ sqrt(d₁² + d₂²) / (2(m+δ))`.
    pub k: f64,
}

impl LevelSetData {
    /// `c = m(m+δ)/δ`.
    pub fn c(&self) -> f64 {
        self.plane_mass * (self.plane_mass + self.delta) / self.delta
    }

    /// `(m+2δ)/(2(m+δ))`, the rotation rate factor in the level equations.
    pub fn rotation_factor(&self) -> f64 {
        let (m, d) = (self.plane_mass, self.delta);
        (m + 2.0 * d) / (2.0 * (m + d))
    }

    /// `(m+2δ)δ / (2m(m+δ)²)`.
    pub fn potential_factor(&self) -> f64 {
        let (m, d) = (self.plane_mass, self.delta);
        (m + 2.0 * d) * d / (2.0 * m * (m + d) * (m + d))
    }

    /// `d₅ + cA²`.
    pub fn det(&self, a: f64) -> f64 {
        self.d5 + self.c() * a * a
    }

    /// `β d₆ sqrt(d₅ + cA²)`.
    pub fn potential(&self, a: f64) -> f64 {
        self.potential_factor() * self.d6 * self.det(a).sqrt()
    }

    /// `(m(m+δ)/δ) v_φ²A² + d₅ v_φ²`, constant and equal to `d₆²`.
    pub fn modified_energy(&self, v_phi: f64, a: f64) -> f64 {
        v_phi * v_phi * self.det(a)
    }

    /// Full state on this level set.
    pub fn reconstruct(&self, s: &LevelState) -> PlanarState {
        let md = self.plane_mass + self.delta;
        PlanarState {
            v: Vec3::new(
                (self.d1 + s.v_phi * s.n2) / md,
                (self.d2 - s.v_phi * s.n1) / md,
                s.v_phi,
            ),
            n: Vec3::new(s.n1, s.n2, (self.d3 + s.n1 * s.n1 + s.n2 * s.n2) / self.delta),
        }
    }
}

/// Point `(v_φ, N₁, N₂)` of the three-dimensional level system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelState {
    pub v_phi: f64,
    pub n1: f64,
    pub n2: f64,
}

impl LevelState {
    pub fn radius(&self) -> f64 {
        self.n1.hypot(self.n2)
    }

    pub fn angle(&self) -> f64 {
        self.n2.atan2(self.n1)
    }
}

pub fn reduce_to_level_set(params: &PlanarParams, state: &PlanarState) -> Result<(LevelSetData, LevelState)> {
    check_in_q(params, state)?;
    let f = planar_integrals(params, state);
    let m = params.plane_mass;
    let delta = params.delta();
    let i = params.plane_inertia;
    let d5 = (m + delta) * (m + delta) * (i * delta + f.f3) / delta;
    let level_state = LevelState {
        v_phi: state.v.z,
        n1: state.n.x,
        n2: state.n.y,
    };
    let mut level = LevelSetData {
        plane_mass: m,
        plane_inertia: i,
        delta,
        d1: f.f1,
        d2: f.f2,
        d3: f.f3,
        d5,
        d6: 0.0,
        d7: 0.0,
        alpha: f.f2.atan2(f.f1),
        k: delta * f.f1.hypot(f.f2) / (2.0 * (m + delta)),
    };
    let a0 = level_state.radius();
    level.d6 = state.v.z * level.det(a0).sqrt();
    level.d7 = level.k * a0 * (level_state.angle() - level.alpha).sin() + level.potential(a0);
    Ok((level, level_state))
}

/// `det 𝕀` on the level set written through `N₁, N₂` and `d₃`.
fn level_det(level: &LevelSetData, s: &LevelState) -> f64 {
    let (m, d) = (level.plane_mass, level.delta);
    let a2 = s.n1 * s.n1 + s.n2 * s.n2;
    (m + d) * ((m + d) * level.plane_inertia + m / d * a2 + m * level.d3 / d + level.d3)
}

/// Right-hand side of the closed system in `(v_φ, N₁, N₂)`.
pub fn level_field(level: &LevelSetData, s: &LevelState) -> LevelState {
    let (m, d) = (level.plane_mass, level.delta);
    let rot = level.rotation_factor();
    let drift = d / (2.0 * (m + d));
    LevelState {
        v_phi: m * s.v_phi * (s.n1 * level.d1 + s.n2 * level.d2) / (2.0 * level_det(level, s)),
        n1: -rot * s.n2 * s.v_phi - drift * level.d1,
        n2: rot * s.n1 * s.v_phi - drift * level.d2,
    }
}

struct LevelFlow<'a> {
    level: &'a LevelSetData,
}

impl OdeSystem for LevelFlow<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let r = level_field(self.level, &LevelState { v_phi: y[0], n1: y[1], n2: y[2] });
        dy.copy_from_slice(&[r.v_phi, r.n1, r.n2]);
        Ok(())
    }
}

/// Direct integration of the level system, sampled at `times`.
pub fn integrate_level(level: &LevelSetData, initial: &LevelState, times: &[f64], tol: f64) -> Result<Vec<LevelState>> {
    let y0 = [initial.v_phi, initial.n1, initial.n2];
    let sol = ode::integrate(&LevelFlow { level }, 0.0, &y0, times, &Options::with_tol(tol))?;
    Ok(sol
        .states
        .iter()
        .map(|y| LevelState { v_phi: y[0], n1: y[1], n2: y[2] })
        .collect())
}

/// `v_φ(A) = d₆ / sqrt(d₅ + cA²)`.
pub fn v_phi_of_a(level: &LevelSetData, a: f64) -> Result<f64> {
    let det = level.det(a);
    if !(det > 0.0) {
        return Err(Error::domain(format!("d₅ + cA² = {det:e} must be positive")));
    }
    Ok(level.d6 / det.sqrt())
}

/// Branch of `θ(A)`: `Rising` while `A` increases (`cos(θ−α) < 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ThetaBranch {
    Rising,
    Falling,
}

/// `sin(θ − α) = (d₇ − β d₆ sqrt(d₅ + cA²)) / (kA)`.
pub fn sine_of_a(level: &LevelSetData, a: f64) -> Result<f64> {
    if level.k == 0.0 {
        return Err(Error::degenerate("k = 0: A is constant and θ(A) is undefined"));
    }
    if !(a > 0.0) {
        return Err(Error::domain(format!("A = {a} must be positive")));
    }
    Ok((level.d7 - level.potential(a)) / (level.k * a))
}

/// `θ(A)` on the given branch, in `(α − π, α + π]` up to `2π`.
pub fn theta_of_a(level: &LevelSetData, a: f64, branch: ThetaBranch) -> Result<f64> {
    let s = sine_of_a(level, a)?;
    if s.abs() > 1.0 + 1e-12 {
        return Err(Error::domain(format!(
            "A = {a} is not reached by this orbit (sin(θ − α) = {s})"
        )));
    }
    let base = s.clamp(-1.0, 1.0).asin();
    Ok(level.alpha
        + match branch {
            ThetaBranch::Rising => std::f64::consts::PI - base,
            ThetaBranch::Falling => base,
        })
}

/// The factors of `(kA)²(1 − sin²(θ−α)) = p₋(A) p₊(A)` with `p∓ = kA ∓ (d₇ − S(A))`,
/// `S(A) = β d₆ sqrt(d₅ + cA²)`, and their first three derivatives.
#[derive(Debug, Clone, Copy)]
struct Factor {
    sign: f64,
}

impl Factor {
    const MINUS: Factor = Factor { sign: 1.0 };
    const PLUS: Factor = Factor { sign: -1.0 };

    /// `[p, p', p'', p''']` at `a`; `p = kA − σ(d₇ − S)` with `σ = ±1`.
    fn jet(&self, level: &LevelSetData, a: f64) -> [f64; 4] {
        let c = level.c();
        let b = level.potential_factor() * level.d6;
        let q = level.det(a);
        let sq = q.sqrt();
        let s0 = b * sq;
        let s1 = b * c * a / sq;
        let s2 = b * c * level.d5 / (q * sq);
        let s3 = -3.0 * b * c * c * level.d5 * a / (q * q * sq);
        [
            level.k * a - self.sign * (level.d7 - s0),
            level.k + self.sign * s1,
            self.sign * s2,
            self.sign * s3,
        ]
    }

    fn value(&self, level: &LevelSetData, a: f64) -> f64 {
        level.k * a - self.sign * (level.d7 - level.potential(a))
    }
}

/// Relative distance below which a root quotient switches to its Taylor expansion.
const TAYLOR_WINDOW: f64 = 1e-4;

/// Radial range `[a, b]` of an orbit and the factor vanishing at each end.
#[derive(Debug, Clone, Copy)]
struct Turning {
    lower: f64,
    upper: f64,
    lower_factor: Factor,
    upper_factor: Factor,
}

fn admissibility(level: &LevelSetData, a: f64) -> f64 {
    Factor::MINUS.value(level, a).min(Factor::PLUS.value(level, a))
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    // Invariant: f(lo) < 0 ≤ f(hi) or the reverse; keeps the sign of f(lo).
    let flo = f(lo) < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo.min(hi) && mid < lo.max(hi)) {
            break;
        }
        if (f(mid) < 0.0) == flo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest doubling of the search bracket before an orbit is declared unbounded.
const MAX_DOUBLINGS: usize = 60;

/// Grid points when locating the sign change nearest to the initial radius.
const SCAN_POINTS: usize = 64;

fn turning_points(level: &LevelSetData, a0: f64) -> Result<Turning> {
    let g = |a: f64| admissibility(level, a);
    if !(a0 > 0.0) {
        return Err(Error::degenerate("orbit starts at A = 0"));
    }
    let scale = level.k * a0 + level.d7.abs();
    if g(a0) < -1e-12 * scale {
        return Err(Error::domain(format!(
            "initial radius A = {a0} violates |sin(θ−α)| ≤ 1"
        )));
    }
    if !(g(0.0) < 0.0) {
        return Err(Error::degenerate("orbit passes through A = 0"));
    }
    // Scan outward from `a0` so the bracket holds the turning point nearest to it.
    let scan = |from: f64, to: f64| -> (f64, f64) {
        let mut prev = from;
        for j in 1..=SCAN_POINTS {
            let a = from + (to - from) * j as f64 / SCAN_POINTS as f64;
            if g(a) < 0.0 {
                return (prev, a);
            }
            prev = a;
        }
        (prev, to)
    };
    let (inside, outside) = scan(a0, 0.0);
    let lower = bisect(g, outside, inside);
    let mut from = a0;
    let mut hi = 2.0 * a0;
    let mut doublings = 0;
    while g(hi) >= 0.0 {
        from = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::domain(
                "orbit is unbounded in A: no upper turning point".to_string(),
            ));
        }
    }
    let (inside, outside) = scan(from, hi);
    let upper = bisect(g, outside, inside);
    let pick = |a: f64| {
        if Factor::MINUS.value(level, a).abs() <= Factor::PLUS.value(level, a).abs() {
            Factor::MINUS
        } else {
            Factor::PLUS
        }
    };
    if !(upper - lower > 1e-9 * upper) {
        return Err(Error::degenerate(format!(
            "A is (nearly) constant on this orbit: [{lower}, {upper}]"
        )));
    }
    Ok(Turning {
        lower,
        upper,
        lower_factor: pick(lower),
        upper_factor: pick(upper),
    })
}

/// Explicit quadrature solution of one orbit of the level system.
#[derive(Debug, Clone)]
pub struct OrbitQuadrature {
    pub level: LevelSetData,
    pub lower: f64,
    pub upper: f64,
    /// Time for `A` to go from `lower` to `upper` and back.
    pub period: f64,
    turning: Turning,
    u0: f64,
    /// `T(u)` at `u_j = 2πj/N`, `T(0) = 0`.
    table: Vec<f64>,
}

const TABLE_SIZE: usize = 64;

impl OrbitQuadrature {
    pub fn new(level: &LevelSetData, initial: &LevelState) -> Result<Self> {
        if level.k == 0.0 {
            return Err(Error::degenerate("k = 0: A is constant; use direct integration"));
        }
        let a0 = initial.radius();
        let turning = turning_points(level, a0)?;
        let (lo, hi) = (turning.lower, turning.upper);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let cos_u = ((mid - a0) / half).clamp(-1.0, 1.0);
        let principal = cos_u.acos();
        let rising = (initial.angle() - level.alpha).cos() < 0.0;
        let u0 = if rising || principal == 0.0 {
            principal
        } else {
            2.0 * std::f64::consts::PI - principal
        };
        let mut orbit = OrbitQuadrature {
            level: *level,
            lower: lo,
            upper: hi,
            period: 0.0,
            turning,
            u0,
            table: vec![0.0; TABLE_SIZE + 1],
        };
        let step = 2.0 * std::f64::consts::PI / TABLE_SIZE as f64;
        for j in 0..TABLE_SIZE {
            let piece = orbit.time_between(j as f64 * step, (j + 1) as f64 * step)?;
            orbit.table[j + 1] = orbit.table[j] + piece;
        }
        orbit.period = orbit.table[TABLE_SIZE];
        Ok(orbit)
    }

    pub fn radius_at(&self, u: f64) -> f64 {
        let mid = 0.5 * (self.lower + self.upper);
        let half = 0.5 * (self.upper - self.lower);
        mid - half * u.cos()
    }

    /// `p(A)` divided by the endpoint factors `(A − a)` and/or `(b − A)` it vanishes at.
    fn quotient(&self, f: Factor, a: f64) -> f64 {
        let (lo, hi) = (self.turning.lower, self.turning.upper);
        let at_lo = same(f, self.turning.lower_factor);
        let at_hi = same(f, self.turning.upper_factor);
        let window = TAYLOR_WINDOW * (hi - lo);
        let taylor = |e: f64, x: f64| {
            let j = f.jet(&self.level, e);
            let h = x - e;
            j[1] + h * (j[2] / 2.0 + h * j[3] / 6.0)
        };
        let div_lo = |x: f64| {
            if x - lo < window {
                taylor(lo, x)
            } else {
                f.value(&self.level, x) / (x - lo)
            }
        };
        let div_hi = |x: f64| {
            // p / (b − x)
            if hi - x < window {
                -taylor(hi, x)
            } else {
                f.value(&self.level, x) / (hi - x)
            }
        };
        match (at_lo, at_hi) {
            (true, true) => {
                if a - lo < hi - a {
                    div_lo(a) / (hi - a)
                } else {
                    div_hi(a) / (a - lo)
                }
            }
            (true, false) => div_lo(a),
            (false, true) => div_hi(a),
            (false, false) => f.value(&self.level, a),
        }
    }

    /// `g(A) = (1 − sin²(θ−α)) / ((A − a)(b − A))`, smooth and positive on `[a, b]`.
    fn g(&self, a: f64) -> f64 {
        let ka = self.level.k * a;
        self.quotient(Factor::MINUS, a) * self.quotient(Factor::PLUS, a) / (ka * ka)
    }

    /// `du/dt = k sqrt(g(A(u)))`.
    fn u_rate(&self, u: f64) -> f64 {
        self.level.k * self.g(self.radius_at(u)).max(0.0).sqrt()
    }

    fn time_between(&self, u1: f64, u2: f64) -> Result<f64> {
        let est = quadrature::integrate(|u| 1.0 / self.u_rate(u), u1, u2, &quadrature::Options::default())?;
        Ok(est.value)
    }

    /// `T(u)` for any real `u`, extended with period `2π ↦ period`.
    fn time_of_u(&self, u: f64) -> Result<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        let turns = (u / two_pi).floor();
        let r = u - turns * two_pi;
        let step = two_pi / TABLE_SIZE as f64;
        let j = ((r / step).floor() as usize).min(TABLE_SIZE - 1);
        Ok(turns * self.period + self.table[j] + self.time_between(j as f64 * step, r)?)
    }

    /// Chart parameter `u` at time `t` (with `u(0) = u₀`).
    pub fn u_at(&self, t: f64) -> Result<f64> {
        let target = t + self.time_of_u(self.u0)?;
        let two_pi = 2.0 * std::f64::consts::PI;
        let omega = two_pi / self.period;
        // Bracket from the mean rate; T(u) − ωu is bounded by one period.
        let mut lo = target * omega - two_pi;
        let mut hi = target * omega + two_pi;
        let mut u = target * omega;
        for _ in 0..200 {
            let err = self.time_of_u(u)? - target;
            if err.abs() <= 1e-14 * self.period.max(target.abs()) || hi - lo < 1e-15 * u.abs().max(1.0) {
                break;
            }
            if err > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let newton = u - err * self.u_rate(u);
            u = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        Ok(u)
    }

    /// `(A, θ, v_φ)` at time `t`.
    pub fn sample(&self, t: f64) -> Result<QuadraturePoint> {
        let u = self.u_at(t)?;
        let a = self.radius_at(u);
        let two_pi = 2.0 * std::f64::consts::PI;
        let branch = if u.rem_euclid(two_pi) < std::f64::consts::PI {
            ThetaBranch::Rising
        } else {
            ThetaBranch::Falling
        };
        let s = sine_of_a(&self.level, a)?.clamp(-1.0, 1.0);
        let theta = self.level.alpha
            + match branch {
                ThetaBranch::Rising => std::f64::consts::PI - s.asin(),
                ThetaBranch::Falling => s.asin(),
            };
        Ok(QuadraturePoint {
            t,
            a,
            theta: wrap_angle(theta),
            v_phi: v_phi_of_a(&self.level, a)?,
        })
    }
}

fn same(a: Factor, b: Factor) -> bool {
    a.sign == b.sign
}

/// Angle in `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = x.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraturePoint {
    pub t: f64,
    pub a: f64,
    pub theta: f64,
    pub v_phi: f64,
}

impl QuadraturePoint {
    pub fn level_state(&self) -> LevelState {
        LevelState {
            v_phi: self.v_phi,
            n1: self.a * self.theta.cos(),
            n2: self.a * self.theta.sin(),
        }
    }
}

/// Quadrature solution of the level system through `initial`, sampled on `times`.
pub fn quadrature_solution(level: &LevelSetData, initial: &LevelState, times: &[f64]) -> Result<Vec<QuadraturePoint>> {
    let orbit = OrbitQuadrature::new(level, initial)?;
    times.iter().map(|&t| orbit.sample(t)).collect()
}

/// Deviation between the quadrature and direct integration of the level system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureComparison {
    pub period: f64,
    pub lower_turning_point: f64,
    pub upper_turning_point: f64,
    pub max_a_deviation: f64,
    /// Angular deviation modulo `2π`.
    pub max_theta_deviation: f64,
    pub max_v_phi_deviation: f64,
    /// Worst `|F − d₆²| / d₆²` along the quadrature output.
    pub energy_drift_quadrature: f64,
    /// Same along the direct integration.
    pub energy_drift_ode: f64,
}

pub fn compare_quadrature(
    level: &LevelSetData,
    initial: &LevelState,
    times: &[f64],
    tol: f64,
) -> Result<QuadratureComparison> {
    let orbit = OrbitQuadrature::new(level, initial)?;
    let quad: Vec<QuadraturePoint> = times.iter().map(|&t| orbit.sample(t)).collect::<Result<_>>()?;
    let direct = integrate_level(level, initial, times, tol)?;
    let f_ref = level.d6 * level.d6;
    let rel = |f: f64| {
        if f_ref > 0.0 {
            (f - f_ref).abs() / f_ref
        } else {
            f.abs()
        }
    };
    let mut cmp = QuadratureComparison {
        period: orbit.period,
        lower_turning_point: orbit.lower,
        upper_turning_point: orbit.upper,
        max_a_deviation: 0.0,
        max_theta_deviation: 0.0,
        max_v_phi_deviation: 0.0,
        energy_drift_quadrature: 0.0,
        energy_drift_ode: 0.0,
    };
    for (q, d) in quad.iter().zip(&direct) {
        cmp.max_a_deviation = cmp.max_a_deviation.max((q.a - d.radius()).abs());
        cmp.max_theta_deviation = cmp.max_theta_deviation.max(wrap_angle(q.theta - d.angle()).abs());
        cmp.max_v_phi_deviation = cmp.max_v_phi_deviation.max((q.v_phi - d.v_phi).abs());
        cmp.energy_drift_quadrature = cmp.energy_drift_quadrature.max(rel(level.modified_energy(q.v_phi, q.a)));
        cmp.energy_drift_ode = cmp.energy_drift_ode.max(rel(level.modified_energy(d.v_phi, d.radius())));
    }
    Ok(cmp)
}
