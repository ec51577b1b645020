//! Scenario documents. Field names carry their units; quantities are SI.

use std::path::Path;

use bearings::ansatz::OneBallConstants;
use bearings::planar::{PlanarBall, PlanarParams, PlanarState};
use bearings::sampling::Sampler;
use bearings::spherical::{check_separation, ReducedState};
use bearings::{Ball, Configuration, SphericalParams, Vec3};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Spherical,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Drift of every first integral of the system.
    Integrals,
    /// Drift of the third integral of the integrable one-ball cases only.
    #[serde(rename = "F3", alias = "f3")]
    F3,
    Measure,
    Ansatz,
    QuadratureCompare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunControls {
    pub t_final_s: f64,
    pub tol: f64,
    pub samples: usize,
    /// Random states drawn for the measure and ansatz checks.
    pub random_states: usize,
    /// Finite-difference step of the measure check.
    pub measure_step: f64,
}

impl Default for RunControls {
    fn default() -> Self {
        RunControls {
            t_final_s: 100.0,
            tol: 1e-10,
            samples: 201,
            random_states: 10,
            measure_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Relative drift of F1, F2, F_ij, c_i (spherical) or f1..f4 (planar).
    pub integral_drift: f64,
    /// Relative drift of the third integral in the integrable cases.
    pub third_integral_drift: f64,
    pub measure_residual: f64,
    /// Largest |A| deviation between quadrature and direct integration.
    pub quadrature_deviation: f64,
    /// Relative deviation of `v_φ²(d₅ + cA²)` from `d₆²` along both planar solutions.
    pub energy_drift: f64,
    /// Relative drift below which an ansatz candidate is certified.
    pub ansatz_drift: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            integral_drift: 1e-8,
            third_integral_drift: 1e-7,
            measure_residual: 1e-6,
            quadrature_deviation: 1e-6,
            energy_drift: 1e-8,
            ansatz_drift: bearings::ansatz::CERTIFY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub mass_kg: f64,
    /// Defaults to a homogeneous solid ball.
    pub inertia_kg_m2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphericalInitial {
    pub omega_rad_per_s: [f64; 3],
    /// Unit vectors from the common centre to each ball centre, in the sphere frame.
    pub gammas: Vec<[f64; 3]>,
    /// Spin constants `⟨Ω_i, Γ_i⟩`.
    pub spins_rad_per_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphericalSpec {
    pub configuration: Configuration,
    pub fixed_radius_m: f64,
    pub ball_radius_m: f64,
    pub sphere_inertia_kg_m2: [f64; 3],
    pub balls: Vec<BallSpec>,
    /// Random when absent.
    pub initial: Option<SphericalInitial>,
    /// Also integrate the attitudes of the sphere and the balls.
    #[serde(default)]
    pub attitudes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarInitial {
    pub v_x_m_per_s: f64,
    pub v_y_m_per_s: f64,
    pub v_phi_rad_per_s: f64,
    /// Contact points `OB_i` in the frame of the moving plane.
    pub contacts_m: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarSpec {
    pub plane_mass_kg: f64,
    pub plane_inertia_kg_m2: f64,
    pub ball_radius_m: f64,
    pub balls: Vec<BallSpec>,
    pub initial: Option<PlanarInitial>,
}

/// One-ball constants given directly, so that `ε` can be swept on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzSpec {
    pub a_kg_m2: f64,
    pub b_kg_m2: f64,
    pub c_kg_m2: f64,
    pub big_d_kg_m2: f64,
    pub small_d_kg_m2_per_s: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// JSON pointer to a numeric field of this document, e.g. `/ansatz/epsilon`.
    pub pointer: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Subcommand run at every grid point.
    pub command: String,
    /// Cartesian product of the axes.
    pub axes: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub system: SystemKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub run: RunControls,
    pub spherical: Option<SphericalSpec>,
    pub planar: Option<PlanarSpec>,
    pub ansatz: Option<AnsatzSpec>,
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub sweep: Option<SweepSpec>,
}

/// Flag overrides of the run controls.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub t_final: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

pub fn read_document(path: &Path) -> CliResult<serde_json::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::parse(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

impl Overrides {
    /// Write the flag values into a scenario document, adding an empty `run` block if needed.
    pub fn apply(&self, doc: &mut serde_json::Value) -> CliResult<()> {
        if let Some(obj) = doc.as_object_mut() {
            obj.entry("run").or_insert_with(|| serde_json::json!({}));
        }
        if let Some(tol) = self.tol {
            set_numeric(doc, "/run/tol", tol)?;
        }
        if let Some(t) = self.t_final {
            set_numeric(doc, "/run/t_final_s", t)?;
        }
        if let Some(n) = self.samples {
            set_field(doc, "/run/samples", serde_json::Value::from(n))?;
        }
        if let Some(seed) = self.seed {
            set_field(doc, "/seed", serde_json::Value::from(seed))?;
        }
        Ok(())
    }
}

pub fn from_document(doc: serde_json::Value) -> CliResult<Scenario> {
    let scenario: Scenario = serde_json::from_value(doc).map_err(|e| Failure::parse(format!("scenario: {e}")))?;
    scenario.validate_controls()?;
    Ok(scenario)
}

impl Scenario {
    fn validate_controls(&self) -> CliResult<()> {
        let r = &self.run;
        if !(r.t_final_s > 0.0 && r.t_final_s.is_finite()) {
            return Err(Failure::validation(format!("run.t_final_s = {} must be positive", r.t_final_s)));
        }
        let (lo, hi) = bearings::spherical::TOL_RANGE;
        if !(r.tol >= lo && r.tol <= hi) {
            return Err(Failure::validation(format!("run.tol = {:e} outside [{lo:e}, {hi:e}]", r.tol)));
        }
        if r.samples < 2 {
            return Err(Failure::validation(format!("run.samples = {} must be at least 2", r.samples)));
        }
        let (lo, hi) = bearings::invariants::MEASURE_STEP_RANGE;
        if !(r.measure_step >= lo && r.measure_step <= hi) {
            return Err(Failure::validation(format!(
                "run.measure_step = {:e} outside [{lo:e}, {hi:e}]",
                r.measure_step
            )));
        }
        Ok(())
    }

    pub fn spherical_spec(&self) -> CliResult<&SphericalSpec> {
        self.spherical
            .as_ref()
            .ok_or_else(|| Failure::validation("scenario has no 'spherical' block"))
    }

    pub fn planar_spec(&self) -> CliResult<&PlanarSpec> {
        self.planar.as_ref().ok_or_else(|| Failure::validation("scenario has no 'planar' block"))
    }

    pub fn require_system(&self, kind: SystemKind, command: &str) -> CliResult<()> {
        if self.system != kind {
            return Err(Failure::validation(format!(
                "{command} needs a {kind:?} scenario, got {:?}",
                self.system
            )));
        }
        Ok(())
    }
}

impl SphericalSpec {
    pub fn params(&self) -> CliResult<SphericalParams> {
        let r = self.ball_radius_m;
        let balls = self
            .balls
            .iter()
            .map(|b| match b.inertia_kg_m2 {
                Some(i) => Ball::new(b.mass_kg, i),
                None => Ball::solid(b.mass_kg, r),
            })
            .collect();
        SphericalParams::new(
            self.configuration,
            self.fixed_radius_m,
            r,
            Vec3::from(self.sphere_inertia_kg_m2),
            balls,
        )
        .map_err(Failure::invalid)
    }

    /// The given initial state, or a random one from `sampler`.
    pub fn initial_state(&self, params: &SphericalParams, sampler: &mut Sampler) -> CliResult<ReducedState> {
        let state = match &self.initial {
            Some(init) => {
                if init.gammas.len() != params.n_balls() || init.spins_rad_per_s.len() != params.n_balls() {
                    return Err(Failure::validation(format!(
                        "initial state lists {} directions and {} spins for {} balls",
                        init.gammas.len(),
                        init.spins_rad_per_s.len(),
                        params.n_balls()
                    )));
                }
                ReducedState::new(
                    Vec3::from(init.omega_rad_per_s),
                    init.gammas.iter().map(|g| Vec3::from(*g)).collect(),
                    init.spins_rad_per_s.clone(),
                )
                .map_err(Failure::invalid)?
            }
            None => sampler.reduced_state(params).map_err(Failure::invalid)?,
        };
        check_separation(params, &state).map_err(Failure::invalid)?;
        Ok(state)
    }
}

impl PlanarSpec {
    pub fn params(&self) -> CliResult<PlanarParams> {
        let r = self.ball_radius_m;
        let balls = self
            .balls
            .iter()
            .map(|b| PlanarBall {
                mass: b.mass_kg,
                inertia: b.inertia_kg_m2.unwrap_or(0.4 * b.mass_kg * r * r),
            })
            .collect();
        PlanarParams::new(self.plane_mass_kg, self.plane_inertia_kg_m2, r, balls).map_err(Failure::invalid)
    }

    pub fn initial_state(&self, params: &PlanarParams, sampler: &mut Sampler) -> CliResult<PlanarState> {
        match &self.initial {
            Some(init) => {
                let contacts: Vec<Vector2<f64>> = init.contacts_m.iter().map(|p| Vector2::new(p[0], p[1])).collect();
                let v = Vec3::new(init.v_x_m_per_s, init.v_y_m_per_s, init.v_phi_rad_per_s);
                PlanarState::from_contacts(params, v, &contacts).map_err(Failure::invalid)
            }
            None => sampler.planar_state(params, 1.0).map_err(Failure::invalid),
        }
    }
}

impl AnsatzSpec {
    pub fn constants(&self) -> CliResult<OneBallConstants> {
        let k = OneBallConstants {
            a: self.a_kg_m2,
            b: self.b_kg_m2,
            c: self.c_kg_m2,
            big_d: self.big_d_kg_m2,
            small_d: self.small_d_kg_m2_per_s,
            epsilon: self.epsilon,
        };
        let all = [k.a, k.b, k.c, k.big_d, k.small_d, k.epsilon];
        if all.iter().any(|v| !v.is_finite()) || !(k.a > 0.0 && k.b > 0.0 && k.c > 0.0 && k.big_d > 0.0) {
            return Err(Failure::validation(format!(
                "ansatz constants need finite values and positive A, B, C, D: {all:?}"
            )));
        }
        if k.epsilon == 0.0 {
            return Err(Failure::validation("ansatz epsilon must be nonzero"));
        }
        Ok(k)
    }
}

/// Set the numeric field at `pointer`, creating it if its parent object exists.
pub fn set_numeric(doc: &mut serde_json::Value, pointer: &str, value: f64) -> CliResult<()> {
    if let Some(slot) = doc.pointer(pointer) {
        if !slot.is_number() {
            return Err(Failure::validation(format!("pointer '{pointer}' names a non-numeric field")));
        }
    }
    let number = serde_json::Number::from_f64(value)
        .ok_or_else(|| Failure::validation(format!("value {value} for '{pointer}' is not finite")))?;
    set_field(doc, pointer, serde_json::Value::Number(number))
}

fn set_field(doc: &mut serde_json::Value, pointer: &str, value: serde_json::Value) -> CliResult<()> {
    if let Some(slot) = doc.pointer_mut(pointer) {
        *slot = value;
        return Ok(());
    }
    let missing = || Failure::validation(format!("pointer '{pointer}' does not name a field"));
    let (parent, key) = pointer.rsplit_once('/').ok_or_else(missing)?;
    let parent = if parent.is_empty() { Some(doc) } else { doc.pointer_mut(parent) };
    let obj = parent.and_then(serde_json::Value::as_object_mut).ok_or_else(missing)?;
    obj.insert(key.replace("~1", "/").replace("~0", "~"), value);
    Ok(())
}
