//! Rotation-algebra primitives and the geometry of the four bearing configurations.
//!
//! Vectors and matrices are plain `nalgebra` types. `hat`/`vee` implement the
//! identification of `so(3)` with `(ℝ³, ×)`, so that `hat(v) * w == v.cross(&w)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Largest tolerated entry of `S + Sᵀ` for a matrix accepted by [`vee`].
pub const SKEW_TOLERANCE: f64 = 1e-12;

/// Skew-symmetric matrix of `v`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]; rejects matrices that are not skew within [`SKEW_TOLERANCE`].
pub fn vee(s: &Mat3) -> Result<Vec3> {
    let asym = (s + s.transpose()).amax();
    if !(asym <= SKEW_TOLERANCE) {
        return Err(Error::usage(format!(
            "vee: matrix is not skew-symmetric (max |S + Sᵀ| = {asym:e})"
        )));
    }
    Ok(Vec3::new(
        0.5 * (s[(2, 1)] - s[(1, 2)]),
        0.5 * (s[(0, 2)] - s[(2, 0)]),
        0.5 * (s[(1, 0)] - s[(0, 1)]),
    ))
}

/// Projection onto the plane orthogonal to the unit vector `u`.
pub fn orthogonal_projector(u: &Vec3) -> Mat3 {
    Mat3::identity() - u * u.transpose()
}

/// Largest deviation of `gᵀg` from the identity, together with `|det g − 1|`.
pub fn orthogonality_defect(g: &Mat3) -> f64 {
    let gram = (g.transpose() * g - Mat3::identity()).amax();
    gram.max((g.determinant() - 1.0).abs())
}

/// Which of the four bearing layouts is being modelled.
///
/// I: balls between the fixed sphere and an enclosing moving sphere.
/// II: balls inside the fixed sphere, carrying a moving sphere inside them.
/// III: one spherical shell around the fixed sphere, inside the moving sphere.
/// IV: one spherical shell inside the fixed sphere, around the moving sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Configuration {
    I,
    II,
    III,
    IV,
}

impl Configuration {
    pub const ALL: [Configuration; 4] = [
        Configuration::I,
        Configuration::II,
        Configuration::III,
        Configuration::IV,
    ];

    /// `+1` for I and III, `−1` for II and IV.
    pub fn sign(self) -> f64 {
        match self {
            Configuration::I | Configuration::III => 1.0,
            Configuration::II | Configuration::IV => -1.0,
        }
    }

    /// Cases III and IV are only defined for a single ball.
    pub fn max_balls(self) -> Option<usize> {
        match self {
            Configuration::I | Configuration::II => None,
            Configuration::III | Configuration::IV => Some(1),
        }
    }
}

impl std::fmt::Display for Configuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Configuration::I => "I",
            Configuration::II => "II",
            Configuration::III => "III",
            Configuration::IV => "IV",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "1" => Ok(Configuration::I),
            "II" | "2" => Ok(Configuration::II),
            "III" | "3" => Ok(Configuration::III),
            "IV" | "4" => Ok(Configuration::IV),
            other => Err(Error::usage(format!("unknown configuration '{other}'"))),
        }
    }
}

/// Dimensionless constants derived from the radii of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedGeometry {
    /// Rate factor in `Γ̇ = εΓ × Ω`.
    pub epsilon: f64,
    /// Ratio between the ball and sphere tangential spins, `Ω_i × Γ_i = δ Ω × Γ_i`.
    pub delta: f64,
    /// Radius of the moving sphere.
    pub moving_radius: f64,
    /// Distance `|OO_i|` from the common centre to a ball centre.
    pub center_distance: f64,
}

/// Derive `(ε, δ, ρ)` for radii `fixed_radius = R` and `ball_radius = r`.
pub fn derive_params(
    config: Configuration,
    fixed_radius: f64,
    ball_radius: f64,
) -> Result<DerivedGeometry> {
    let (big_r, r) = (fixed_radius, ball_radius);
    if !(big_r > 0.0 && big_r.is_finite()) {
        return Err(Error::domain(format!("fixed radius R = {big_r} must be > 0")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::domain(format!("ball radius r = {r} must be > 0")));
    }
    let geometry = match config {
        Configuration::I => DerivedGeometry {
            epsilon: big_r / (2.0 * big_r + 2.0 * r),
            delta: (big_r + 2.0 * r) / (2.0 * r),
            moving_radius: big_r + 2.0 * r,
            center_distance: big_r + r,
        },
        Configuration::II => {
            let rho = big_r - 2.0 * r;
            if !(rho > 0.0) {
                return Err(Error::domain(format!(
                    "case II requires ρ = R − 2r > 0 (R = {big_r}, r = {r})"
                )));
            }
            DerivedGeometry {
                epsilon: big_r / (2.0 * big_r - 2.0 * r),
                delta: -rho / (2.0 * r),
                moving_radius: rho,
                center_distance: big_r - r,
            }
        }
        Configuration::III | Configuration::IV => {
            let rho = 2.0 * r - big_r;
            if !(rho > 0.0) {
                return Err(Error::domain(format!(
                    "case {config} requires ρ = 2r − R > 0 (R = {big_r}, r = {r})"
                )));
            }
            if config == Configuration::III && !(rho > big_r) {
                return Err(Error::domain(format!(
                    "case III requires ρ = 2r − R > R (R = {big_r}, r = {r})"
                )));
            }
            if config == Configuration::IV && !(rho < big_r) {
                return Err(Error::domain(format!(
                    "case IV requires ρ = 2r − R < R (R = {big_r}, r = {r})"
                )));
            }
            DerivedGeometry {
                epsilon: big_r / (2.0 * big_r - 2.0 * r),
                delta: rho / (2.0 * r),
                moving_radius: rho,
                center_distance: (r - big_r).abs(),
            }
        }
    };
    Ok(geometry)
}

/// Mass and scalar moment of inertia of one ball (or shell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub mass: f64,
    pub inertia: f64,
}

impl Ball {
    pub fn new(mass: f64, inertia: f64) -> Self {
        Ball { mass, inertia }
    }

    /// Homogeneous solid ball: `I = 2/5 m r²`.
    pub fn solid(mass: f64, radius: f64) -> Self {
        Ball::new(mass, 0.4 * mass * radius * radius)
    }

    /// Thin spherical shell: `I = 2/3 m r²`.
    pub fn shell(mass: f64, radius: f64) -> Self {
        Ball::new(mass, 2.0 / 3.0 * mass * radius * radius)
    }
}

/// Full parameter set of a spherical bearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalParams {
    pub config: Configuration,
    pub fixed_radius: f64,
    pub ball_radius: f64,
    /// Principal moments `(A, B, C)` of the moving sphere.
    pub sphere_inertia: Vec3,
    pub balls: Vec<Ball>,
    pub geometry: DerivedGeometry,
}

impl SphericalParams {
    pub fn new(
        config: Configuration,
        fixed_radius: f64,
        ball_radius: f64,
        sphere_inertia: Vec3,
        balls: Vec<Ball>,
    ) -> Result<Self> {
        let geometry = derive_params(config, fixed_radius, ball_radius)?;
        if balls.is_empty() {
            return Err(Error::domain("at least one ball is required"));
        }
        if let Some(max) = config.max_balls() {
            if balls.len() > max {
                return Err(Error::domain(format!(
                    "case {config} is defined for n = 1 only (got n = {})",
                    balls.len()
                )));
            }
        }
        if sphere_inertia.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::domain(format!(
                "sphere inertias must be positive, got {:?}",
                sphere_inertia.as_slice()
            )));
        }
        for (i, b) in balls.iter().enumerate() {
            if !(b.mass > 0.0 && b.mass.is_finite()) || !(b.inertia > 0.0 && b.inertia.is_finite())
            {
                return Err(Error::domain(format!(
                    "ball {i}: mass and inertia must be positive (m = {}, I = {})",
                    b.mass, b.inertia
                )));
            }
        }
        Ok(SphericalParams {
            config,
            fixed_radius,
            ball_radius,
            sphere_inertia,
            balls,
            geometry,
        })
    }

    pub fn n_balls(&self) -> usize {
        self.balls.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.geometry.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.geometry.delta
    }

    /// Minimal admissible `|Γ_i − Γ_j|` keeping balls `i` and `j` apart.
    pub fn min_separation(&self) -> f64 {
        2.0 * self.ball_radius / self.geometry.center_distance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hat_of_zero_is_zero() {
        assert_eq!(hat(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn hat_acts_as_cross_product() {
        let e3 = Vec3::z();
        assert_eq!(hat(&e3) * Vec3::x(), Vec3::y());
    }

    #[test]
    fn vee_roundtrip_literal() {
        assert_eq!(vee(&hat(&Vec3::new(1.0, 2.0, 3.0))).unwrap(), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn vee_rejects_symmetric_part() {
        let mut s = hat(&Vec3::new(1.0, 2.0, 3.0));
        s[(0, 1)] += 1e-9;
        assert!(matches!(vee(&s), Err(Error::Usage(_))));
    }

    #[test]
    fn case_one_parameters() {
        let g = derive_params(Configuration::I, 2.0, 1.0).unwrap();
        assert!((g.epsilon - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.delta, 2.0);
        assert_eq!(g.moving_radius, 4.0);
    }

    #[test]
    fn case_three_parameters() {
        let g = derive_params(Configuration::III, 1.0, 1.5).unwrap();
        assert_eq!(g.epsilon, -1.0);
        assert!((g.delta - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.moving_radius, 2.0);
    }

    #[test]
    fn case_two_parameters_sign() {
        let g = derive_params(Configuration::II, 5.0, 1.0).unwrap();
        assert!((g.epsilon - 5.0 / 8.0).abs() < 1e-15);
        assert!((g.delta + 1.5).abs() < 1e-15);
        assert_eq!(g.moving_radius, 3.0);
        assert_eq!(g.center_distance, 4.0);
    }

    #[test]
    fn case_two_rejects_thick_balls() {
        let err = derive_params(Configuration::II, 1.0, 1.0).unwrap_err();
        match err {
            Error::Domain(msg) => assert!(msg.contains("R − 2r > 0"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cases_three_and_four_split_on_rho() {
        assert!(derive_params(Configuration::III, 1.0, 0.8).is_err());
        assert!(derive_params(Configuration::IV, 1.0, 0.8).is_ok());
        assert!(derive_params(Configuration::IV, 1.0, 1.2).is_err());
        assert!(derive_params(Configuration::IV, 1.0, 0.5).is_err());
        assert!(derive_params(Configuration::III, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_ball_cases_reject_extra_balls() {
        let balls = vec![Ball::shell(1.0, 1.5); 2];
        let err =
            SphericalParams::new(Configuration::III, 1.0, 1.5, Vec3::new(1.0, 2.0, 3.0), balls)
                .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    proptest! {
        #[test]
        fn vee_inverts_hat(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
            let v = Vec3::new(x, y, z);
            let s = hat(&v);
            prop_assert!((s + s.transpose()).amax() == 0.0);
            prop_assert_eq!(vee(&s).unwrap(), v);
        }

        #[test]
        fn hat_is_lie_algebra_morphism(
            a in prop::array::uniform3(-3.0..3.0f64),
            b in prop::array::uniform3(-3.0..3.0f64),
        ) {
            let (a, b) = (Vec3::from(a), Vec3::from(b));
            let lhs = hat(&a.cross(&b));
            let rhs = hat(&a) * hat(&b) - hat(&b) * hat(&a);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn shell_ratio_three_halves_gives_minus_one(big_r in 1e-3..1e3f64, k in -8i32..8) {
            // exact whenever 3R/2 is representable, otherwise within rounding of r
            let dyadic = 2f64.powi(k);
            let g = derive_params(Configuration::III, dyadic, 1.5 * dyadic).unwrap();
            prop_assert_eq!(g.epsilon, -1.0);
            let g = derive_params(Configuration::III, big_r, 1.5 * big_r).unwrap();
            prop_assert!((g.epsilon + 1.0).abs() <= 4.0 * f64::EPSILON);
        }

        #[test]
        fn epsilon_never_vanishes(big_r in 0.1..10.0f64, ratio in 0.01..3.0f64) {
            for config in Configuration::ALL {
                if let Ok(g) = derive_params(config, big_r, ratio * big_r) {
                    prop_assert!(g.epsilon != 0.0 && g.epsilon.is_finite());
                }
            }
        }
    }
}
