//! Newton–Euler equations of the sphere and the balls with explicit contact forces.
//!
//! Every body is written in the frame of the moving sphere. The unknowns at one
//! instant are `Ω̇` and, per ball, `(Ω̇_i, V̇_i, F_{A_i}, F_{B_i})`. They are fixed by
//! the balance laws together with the time derivatives of the rolling constraints
//!
//! ```text
//! V_i = σ r Ω_i × Γ_i,      Ω_i × Γ_i = δ Ω × Γ_i,
//! ```
//!
//! and by the gauge `⟨Γ_i, F_{B_i}⟩ = 0`: only the sum of the two normal contact
//! forces on a ball is determined. Ball directions move by `Γ̇_i = V_i/ℓ + Γ_i × Ω`,
//! so nothing here uses the reduced constants `ε`, `D_i` or the modified inertia.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{hat, Mat3, SphericalParams, Vec3};
use crate::ode::{self, OdeSystem, Options};
use crate::spherical::{omega_ball, ReducedState, Trajectory};

/// Pivot ratio below which the force system is reported as singular.
const PIVOT_RATIO: f64 = 1e-13;

/// Reduced state extended by the ball spins and centre velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub omega: Vec3,
    pub gammas: Vec<Vec3>,
    /// Ball angular velocities in the sphere frame.
    pub omega_balls: Vec<Vec3>,
    /// Ball centre velocities in the sphere frame.
    pub velocities: Vec<Vec3>,
}

impl ExtendedState {
    /// Lift a reduced state onto the constraint manifold.
    pub fn from_reduced(params: &SphericalParams, state: &ReducedState) -> Self {
        let sigma = params.config.sign();
        let r = params.ball_radius;
        let omega_balls: Vec<Vec3> = state
            .gammas
            .iter()
            .zip(&state.c)
            .map(|(g, &c)| omega_ball(params.delta(), &state.omega, g, c))
            .collect();
        let velocities = omega_balls
            .iter()
            .zip(&state.gammas)
            .map(|(w, g)| sigma * r * w.cross(g))
            .collect();
        ExtendedState {
            omega: state.omega,
            gammas: state.gammas.clone(),
            omega_balls,
            velocities,
        }
    }

    /// Spin constants `⟨Ω_i, Γ_i⟩`.
    pub fn spins(&self) -> Vec<f64> {
        self.omega_balls
            .iter()
            .zip(&self.gammas)
            .map(|(w, g)| w.dot(g))
            .collect()
    }

    pub fn to_reduced(&self) -> ReducedState {
        ReducedState {
            omega: self.omega,
            gammas: self.gammas.clone(),
            c: self.spins(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(3 + 9 * self.gammas.len());
        y.extend_from_slice(self.omega.as_slice());
        for i in 0..self.gammas.len() {
            y.extend_from_slice(self.gammas[i].as_slice());
            y.extend_from_slice(self.omega_balls[i].as_slice());
            y.extend_from_slice(self.velocities[i].as_slice());
        }
        y
    }

    pub fn from_slice(y: &[f64]) -> Self {
        let n = (y.len() - 3) / 9;
        let block = |i: usize, k: usize| Vec3::from_column_slice(&y[3 + 9 * i + 3 * k..6 + 9 * i + 3 * k]);
        ExtendedState {
            omega: Vec3::from_column_slice(&y[0..3]),
            gammas: (0..n).map(|i| block(i, 0)).collect(),
            omega_balls: (0..n).map(|i| block(i, 1)).collect(),
            velocities: (0..n).map(|i| block(i, 2)).collect(),
        }
    }
}

/// Largest violation of the rolling constraints at an extended state.
pub fn constraint_residual(params: &SphericalParams, state: &ExtendedState) -> f64 {
    let sigma = params.config.sign();
    let r = params.ball_radius;
    let delta = params.delta();
    let mut worst: f64 = 0.0;
    for i in 0..state.gammas.len() {
        let g = &state.gammas[i];
        let w = &state.omega_balls[i];
        let contact = state.velocities[i] - sigma * r * w.cross(g);
        let spin = w.cross(g) - delta * state.omega.cross(g);
        worst = worst.max(contact.amax()).max(spin.amax());
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRate {
    pub omega_dot: Vec3,
    pub gamma_dots: Vec<Vec3>,
    pub omega_ball_dots: Vec<Vec3>,
    pub velocity_dots: Vec<Vec3>,
    /// Force of the fixed sphere on each ball.
    pub forces_a: Vec<Vec3>,
    /// Force of the moving sphere on each ball, tangential by the gauge.
    pub forces_b: Vec<Vec3>,
}

/// Two unit vectors spanning the plane orthogonal to `g`.
fn tangent_basis(g: &Vec3) -> (Vec3, Vec3) {
    let seed = if g.x.abs() < 0.6 { Vec3::x() } else { Vec3::y() };
    let e1 = (seed - seed.dot(g) * g).normalize();
    (e1, g.cross(&e1))
}

fn put(a: &mut DMatrix<f64>, row: usize, col: usize, m: &Mat3) {
    a.view_mut((row, col), (3, 3)).copy_from(m);
}

/// Accelerations and contact forces from the Newton–Euler equations.
pub fn oracle_field(params: &SphericalParams, state: &ExtendedState) -> Result<OracleRate> {
    let n = state.gammas.len();
    if n != params.n_balls() {
        return Err(Error::usage(format!(
            "state has {n} balls, parameters have {}",
            params.n_balls()
        )));
    }
    let sigma = params.config.sign();
    let r = params.ball_radius;
    let delta = params.delta();
    let ell = params.geometry.center_distance;
    let inertia = Mat3::from_diagonal(&params.sphere_inertia);
    let omega = state.omega;

    let gamma_dots: Vec<Vec3> = (0..n)
        .map(|i| state.velocities[i] / ell + state.gammas[i].cross(&omega))
        .collect();

    // Column layout: Ω̇ | per ball [Ω̇_i, V̇_i, F_A, F_B].
    let dim = 3 + 12 * n;
    let col = |i: usize, k: usize| 3 + 12 * i + 3 * k;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    let eye = Mat3::identity();

    put(&mut a, 0, 0, &inertia);
    b.rows_mut(0, 3).copy_from(&(inertia * omega).cross(&omega));

    for i in 0..n {
        let ball = params.balls[i];
        let g = state.gammas[i];
        let gd = gamma_dots[i];
        let w = state.omega_balls[i];
        let v = state.velocities[i];
        let hg = hat(&g);
        let row = 3 + 12 * i;

        // Sphere: 𝕀Ω̇ + σ 2rδ Γ_i × F_B = 𝕀Ω × Ω.
        put(&mut a, 0, col(i, 3), &(sigma * 2.0 * r * delta * hg));

        // Ball rotation: I_i Ω̇_i − σ r Γ_i × (F_B − F_A) = I_i Ω_i × Ω.
        put(&mut a, row, col(i, 0), &(ball.inertia * eye));
        put(&mut a, row, col(i, 2), &(sigma * r * hg));
        put(&mut a, row, col(i, 3), &(-sigma * r * hg));
        b.rows_mut(row, 3).copy_from(&(ball.inertia * w.cross(&omega)));

        // Ball translation: m_i V̇_i − F_B − F_A = m_i V_i × Ω.
        put(&mut a, row + 3, col(i, 1), &(ball.mass * eye));
        put(&mut a, row + 3, col(i, 2), &(-eye));
        put(&mut a, row + 3, col(i, 3), &(-eye));
        b.rows_mut(row + 3, 3).copy_from(&(ball.mass * v.cross(&omega)));

        // Contact point A at rest: V̇_i + σ r Γ_i × Ω̇_i = σ r Ω_i × Γ̇_i.
        put(&mut a, row + 6, col(i, 1), &eye);
        put(&mut a, row + 6, col(i, 0), &(sigma * r * hg));
        b.rows_mut(row + 6, 3).copy_from(&(sigma * r * w.cross(&gd)));

        // Contact point B: −Γ_i × Ω̇_i + δ Γ_i × Ω̇ = δ Ω × Γ̇_i − Ω_i × Γ̇_i, tangential part.
        let rhs = delta * omega.cross(&gd) - w.cross(&gd);
        let (e1, e2) = tangent_basis(&g);
        for (k, e) in [e1, e2].iter().enumerate() {
            let lhs_ball = -(hg.transpose() * e);
            let lhs_sphere = delta * (hg.transpose() * e);
            for j in 0..3 {
                a[(row + 9 + k, col(i, 0) + j)] = lhs_ball[j];
                a[(row + 9 + k, j)] = lhs_sphere[j];
            }
            b[row + 9 + k] = e.dot(&rhs);
        }

        // Gauge: ⟨Γ_i, F_B⟩ = 0.
        for j in 0..3 {
            a[(row + 11, col(i, 3) + j)] = g[j];
        }
    }

    let lu = a.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let max_pivot = diag.amax();
    let min_pivot = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min_pivot > PIVOT_RATIO * max_pivot) {
        return Err(Error::degenerate(format!(
            "force system is singular (pivot ratio {:e})",
            min_pivot / max_pivot
        )));
    }
    let z = lu
        .solve(&b)
        .ok_or_else(|| Error::degenerate("force system is singular"))?;

    let block = |start: usize| Vec3::new(z[start], z[start + 1], z[start + 2]);
    Ok(OracleRate {
        omega_dot: block(0),
        gamma_dots,
        omega_ball_dots: (0..n).map(|i| block(col(i, 0))).collect(),
        velocity_dots: (0..n).map(|i| block(col(i, 1))).collect(),
        forces_a: (0..n).map(|i| block(col(i, 2))).collect(),
        forces_b: (0..n).map(|i| block(col(i, 3))).collect(),
    })
}

struct OracleFlow<'a> {
    params: &'a SphericalParams,
}

impl OdeSystem for OracleFlow<'_> {
    fn dim(&self) -> usize {
        3 + 9 * self.params.n_balls()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let rate = oracle_field(self.params, &ExtendedState::from_slice(y))?;
        dy[0..3].copy_from_slice(rate.omega_dot.as_slice());
        for i in 0..rate.gamma_dots.len() {
            let base = 3 + 9 * i;
            dy[base..base + 3].copy_from_slice(rate.gamma_dots[i].as_slice());
            dy[base + 3..base + 6].copy_from_slice(rate.omega_ball_dots[i].as_slice());
            dy[base + 6..base + 9].copy_from_slice(rate.velocity_dots[i].as_slice());
        }
        Ok(())
    }

    /// Re-impose the rolling constraints, keeping `Γ_i` directions and the spins
    /// `⟨Ω_i, Γ_i⟩`. Without it the constraint defect grows exponentially in
    /// configuration III.
    fn project(&self, y: &mut [f64]) -> f64 {
        let mut state = ExtendedState::from_slice(y);
        for g in state.gammas.iter_mut() {
            *g = g.normalize();
        }
        let lifted = ExtendedState::from_reduced(self.params, &state.to_reduced());
        let mut defect: f64 = 0.0;
        for (before, after) in y.iter().zip(lifted.to_vec()) {
            defect = defect.max((before - after).abs());
        }
        y.copy_from_slice(&lifted.to_vec());
        defect
    }
}

/// Integrate the Newton–Euler system; the ball spins evolve freely here, and
/// each accepted step is projected back onto the constraints.
pub fn integrate_extended(
    params: &SphericalParams,
    state: &ExtendedState,
    times: &[f64],
    tol: f64,
) -> Result<Trajectory<ExtendedState>> {
    let flow = OracleFlow { params };
    let sol = ode::integrate(&flow, 0.0, &state.to_vec(), times, &Options::with_tol(tol))?;
    Ok(Trajectory {
        states: sol.states.iter().map(|y| ExtendedState::from_slice(y)).collect(),
        times: sol.times,
        stats: sol.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Configuration;
    use crate::sampling::Sampler;
    use crate::spherical::reduced_field;

    #[test]
    fn lifted_state_satisfies_constraints() {
        let mut s = Sampler::new(7);
        for config in Configuration::ALL {
            let p = s.spherical_params(config, 1).unwrap();
            let st = s.reduced_state(&p).unwrap();
            let ext = ExtendedState::from_reduced(&p, &st);
            assert!(constraint_residual(&p, &ext) < 1e-14);
            let c = ext.spins();
            assert!((c[0] - st.c[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn equilibrium_has_no_tangential_forces() {
        let mut s = Sampler::new(8);
        let p = s.spherical_params(Configuration::I, 2).unwrap();
        let mut st = s.reduced_state(&p).unwrap();
        st.omega = Vec3::zeros();
        let ext = ExtendedState::from_reduced(&p, &st);
        let rate = oracle_field(&p, &ext).unwrap();
        assert!(rate.omega_dot.norm() < 1e-14);
        for (g, (fa, fb)) in st.gammas.iter().zip(rate.forces_a.iter().zip(&rate.forces_b)) {
            assert!((fa - fa.dot(g) * g).norm() < 1e-14);
            assert!((fb - fb.dot(g) * g).norm() < 1e-14);
        }
    }

    #[test]
    fn agrees_with_reduced_field_in_every_configuration() {
        let mut s = Sampler::new(9);
        for config in Configuration::ALL {
            let max = config.max_balls().unwrap_or(2);
            for n in 1..=max {
                let p = s.spherical_params(config, n).unwrap();
                let model = p.model();
                for _ in 0..20 {
                    let st = s.reduced_state(&p).unwrap();
                    let want = oracle_field(&p, &ExtendedState::from_reduced(&p, &st)).unwrap();
                    let got = reduced_field(&model, &st).unwrap();
                    let scale = want.omega_dot.norm().max(1e-300);
                    assert!(
                        (got.omega_dot - want.omega_dot).norm() < 1e-9 * scale,
                        "{config} n={n}: {} vs {}",
                        got.omega_dot,
                        want.omega_dot
                    );
                    for (a, b) in got.gamma_dots.iter().zip(&want.gamma_dots) {
                        assert!((a - b).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn spins_are_conserved_by_the_force_balance() {
        let mut s = Sampler::new(10);
        let p = s.spherical_params(Configuration::II, 2).unwrap();
        let st = s.reduced_state(&p).unwrap();
        let ext = ExtendedState::from_reduced(&p, &st);
        let rate = oracle_field(&p, &ext).unwrap();
        for i in 0..2 {
            let dc = rate.omega_ball_dots[i].dot(&ext.gammas[i])
                + ext.omega_balls[i].dot(&rate.gamma_dots[i]);
            assert!(dc.abs() < 1e-12, "{dc:e}");
        }
    }
}
