//! Seeded random parameters and states for tests, sweeps and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Ball, Configuration, Mat3, SphericalParams, Vec3};
use crate::planar::{PlanarBall, PlanarParams, PlanarState};
use crate::spherical::{check_separation, ReducedState};

/// Rejection attempts when placing non-overlapping balls.
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    /// Uniform in the cube `[−scale, scale]³`.
    pub fn vector(&mut self, scale: f64) -> Vec3 {
        Vec3::new(
            self.uniform(-scale, scale),
            self.uniform(-scale, scale),
            self.uniform(-scale, scale),
        )
    }

    /// Uniform on the unit sphere.
    pub fn unit_vector(&mut self) -> Vec3 {
        loop {
            let v = self.vector(1.0);
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    /// Rotation from a random unit quaternion.
    pub fn rotation(&mut self) -> Mat3 {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            self.uniform(-1.0, 1.0),
            self.uniform(-1.0, 1.0),
            self.uniform(-1.0, 1.0),
            self.uniform(-1.0, 1.0),
        ));
        *q.to_rotation_matrix().matrix()
    }

    /// Random admissible radii for `config` with `R ∈ [1, 2]`.
    pub fn radii(&mut self, config: Configuration) -> (f64, f64) {
        let big_r = self.uniform(1.0, 2.0);
        let ratio = match config {
            Configuration::I => self.uniform(0.1, 0.4),
            Configuration::II => self.uniform(0.1, 0.3),
            Configuration::III => self.uniform(1.1, 2.0),
            Configuration::IV => self.uniform(0.6, 0.9),
        };
        (big_r, ratio * big_r)
    }

    /// Random O(1)-scaled parameters with `n` solid balls.
    pub fn spherical_params(&mut self, config: Configuration, n: usize) -> Result<SphericalParams> {
        let (big_r, r) = self.radii(config);
        let inertia = Vec3::new(
            self.uniform(1.0, 3.0),
            self.uniform(1.0, 3.0),
            self.uniform(1.0, 3.0),
        );
        let balls = (0..n)
            .map(|_| {
                let mass = self.uniform(0.5, 2.0) / (r * r).max(1.0);
                Ball::new(mass, self.uniform(0.3, 0.7) * mass * r * r)
            })
            .collect();
        SphericalParams::new(config, big_r, r, inertia, balls)
    }

    /// Random feasible state with `|Ω| ≲ 1` and `|c_i| ≤ 1`.
    pub fn reduced_state(&mut self, params: &SphericalParams) -> Result<ReducedState> {
        let n = params.n_balls();
        let omega = self.vector(1.0);
        let c: Vec<f64> = (0..n).map(|_| self.uniform(-1.0, 1.0)).collect();
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let gammas: Vec<Vec3> = (0..n).map(|_| self.unit_vector()).collect();
            let state = ReducedState::new(omega, gammas, c.clone())?;
            if check_separation(params, &state).is_ok() {
                return Ok(state);
            }
        }
        Err(Error::domain(format!(
            "could not place {n} non-overlapping balls of radius {}",
            params.ball_radius
        )))
    }

    /// Random planar bearing with `n ≥ 2` solid balls of radius in `[0.2, 0.5]`.
    pub fn planar_params(&mut self, n: usize) -> Result<PlanarParams> {
        let r = self.uniform(0.2, 0.5);
        let balls = (0..n)
            .map(|_| {
                let mass = self.uniform(0.5, 2.0);
                PlanarBall {
                    mass,
                    inertia: 0.4 * mass * r * r,
                }
            })
            .collect();
        PlanarParams::new(self.uniform(0.5, 3.0), self.uniform(0.5, 3.0), r, balls)
    }

    /// Random state in `𝒬` from contact points in the unit disc and `|v| ≲ scale`.
    pub fn planar_state(&mut self, params: &PlanarParams, scale: f64) -> Result<PlanarState> {
        let contacts: Vec<_> = (0..params.balls.len())
            .map(|_| {
                let rad = self.uniform(0.0, 1.0).sqrt();
                let ang = self.uniform(0.0, 2.0 * std::f64::consts::PI);
                nalgebra::Vector2::new(rad * ang.cos(), rad * ang.sin())
            })
            .collect();
        PlanarState::from_contacts(params, self.vector(scale), &contacts)
    }

    /// Seed for a derived stream, for reproducible parallel work.
    pub fn next_seed(&mut self) -> u64 {
        self.rng.gen()
    }
}
