use crate::collision::AngularKernel;
use crate::error::{Error, Result};
use crate::geometry::LevelSetDomain;
use crate::math::Vec3;
use crate::wall::WallModel;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How the stored `f` relates to `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// `F = μ + √μ f`
    #[default]
    Perturbation,
    /// `F = √μ f`
    SqrtMu,
}

/// Electrostatic boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldBoundary {
    /// `∂φ/∂n = 0`, neutralized by a constant background.
    #[default]
    Insulator,
    /// `φ = 0`
    Conductor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionModel {
    /// Linearization about μ.
    #[default]
    Linearized,
    /// Linear part plus the quadratic term.
    Full,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionConfig {
    pub model: CollisionModel,
    pub kappa: f64,
    pub angular: AngularKernel,
    /// Gauss nodes per half-interval of `cos θ`.
    pub n_omega: usize,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        CollisionConfig {
            model: CollisionModel::Linearized,
            kappa: 1.0,
            angular: AngularKernel::HardSphere,
            n_omega: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Intervals across the largest extent of the domain.
    pub x_resolution: usize,
    /// Velocity nodes per axis.
    pub v_points: usize,
    pub v_max: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            x_resolution: 8,
            v_points: 8,
            v_max: 4.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_end: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { dt: 0.025, t_end: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    /// `F = μ`
    #[default]
    Equilibrium,
    /// `F = μ + a e^{−|x−x₀|²/(2w_x²)} μ_{w_v}(v − v₀)` per species, where
    /// `μ_{w_v}` is the normalized Gaussian of variance `w_v²`.
    GaussianBump {
        x0: [f64; 3],
        #[serde(default)]
        v0: [f64; 3],
        /// One amplitude per species.
        amplitude: Vec<f64>,
        #[serde(default = "default_width_x")]
        width_x: f64,
        #[serde(default = "unit")]
        width_v: f64,
    },
    /// CSV with header `species,cell,vnode,f`; omitted entries are at equilibrium.
    Table { path: String },
}

fn default_width_x() -> f64 {
    0.3
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    /// Velocity weight `e^{ϑ|v|²}`.
    pub vartheta: f64,
    /// ε of the exit-time weight; the domain default when absent.
    pub epsilon: Option<f64>,
    pub beta: f64,
    pub p: f64,
    /// Exponent offset of the mixed norm and of the twin-run distance.
    pub delta: f64,
    pub varpi: f64,
    /// The weighted Sobolev norm is refreshed every this many steps.
    pub w1p_every: usize,
    /// Phase-space samples of the `ν_ϖ` margin.
    pub margin_samples: usize,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            vartheta: 0.125,
            epsilon: None,
            beta: 0.55,
            p: 4.0,
            delta: 0.1,
            varpi: 1.0,
            w1p_every: 10,
            margin_samples: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatibilityAction {
    #[default]
    Warn,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompatibilityConfig {
    pub tolerance: f64,
    pub action: CompatibilityAction,
}

impl Default for CompatibilityConfig {
    fn default() -> Self {
        CompatibilityConfig {
            tolerance: 1e-6,
            action: CompatibilityAction::Warn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<String>,
    /// Write field and density snapshots at the end of a run.
    pub snapshots: bool,
    pub verbosity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    /// `unit_ball`, `ball(r)` or `ellipsoid(a,b,c)`.
    pub domain: String,
    pub species: usize,
    pub representation: Representation,
    pub boundary: FieldBoundary,
    pub wall: WallModel,
    pub collision: CollisionConfig,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub initial: InitialDatum,
    pub norms: NormConfig,
    pub compatibility: CompatibilityConfig,
    pub seed: u64,
    pub output: OutputConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            domain: "unit_ball".into(),
            species: 1,
            representation: Representation::Perturbation,
            boundary: FieldBoundary::Insulator,
            wall: WallModel::Diffuse,
            collision: CollisionConfig::default(),
            mesh: MeshConfig::default(),
            time: TimeConfig::default(),
            initial: InitialDatum::Equilibrium,
            norms: NormConfig::default(),
            compatibility: CompatibilityConfig::default(),
            seed: 0,
            output: OutputConfig::default(),
        }
    }
}

fn open_range(name: &str, x: f64, lo: f64, hi: f64, out: &mut Vec<String>) {
    if !(x > lo && x < hi) {
        out.push(format!("{name} = {x} outside ({lo}, {hi})"));
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::ScenarioParse {
            line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn domain(&self) -> Result<LevelSetDomain> {
        LevelSetDomain::from_preset(&self.domain)
    }

    /// Every range violation, each naming the parameter and its admissible range.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.domain() {
            out.push(format!("domain: {e}"));
        }
        if !(1..=2).contains(&self.species) {
            out.push(format!("species = {} must be 1 or 2", self.species));
        }
        out.extend(self.wall.violations().into_iter().map(|v| format!("wall.{v}")));
        if let WallModel::CercignaniLampis { t_wall, .. } = self.wall {
            if t_wall != 1.0 {
                out.push(format!("wall.t_wall = {t_wall} must equal 1 in the simulator"));
            }
        }
        let c = &self.collision;
        if !(0.0..=1.0).contains(&c.kappa) {
            out.push(format!("collision.kappa = {} outside [0, 1]", c.kappa));
        }
        if let AngularKernel::Constant { value } = c.angular {
            if !(value >= 0.0) {
                out.push(format!("collision.angular.value = {value} must be nonnegative"));
            }
        }
        if c.n_omega < 2 {
            out.push(format!("collision.n_omega = {} must be at least 2", c.n_omega));
        }
        let m = &self.mesh;
        if m.x_resolution < 4 {
            out.push(format!("mesh.x_resolution = {} must be at least 4", m.x_resolution));
        }
        if m.v_points < 2 {
            out.push(format!("mesh.v_points = {} must be at least 2", m.v_points));
        }
        if !(m.v_max > 0.0) {
            out.push(format!("mesh.v_max = {} must be positive", m.v_max));
        }
        if !(self.time.dt > 0.0) {
            out.push(format!("time.dt = {} must be positive", self.time.dt));
        }
        if !(self.time.t_end >= 0.0) {
            out.push(format!("time.t_end = {} must be nonnegative", self.time.t_end));
        }
        let n = &self.norms;
        open_range("norms.vartheta", n.vartheta, 0.0, 0.25, &mut out);
        if let Some(eps) = n.epsilon {
            if !(eps > 0.0) {
                out.push(format!("norms.epsilon = {eps} must be positive"));
            }
        }
        open_range("norms.p", n.p, 3.0, 6.0, &mut out);
        let lo = 1.0 - 2.0 / n.p;
        if n.p.is_finite() {
            open_range("norms.beta", n.beta, lo, 2.0 / 3.0, &mut out);
        }
        open_range("norms.delta", n.delta, 0.0, 1.0, &mut out);
        if !(n.varpi >= 0.0) {
            out.push(format!("norms.varpi = {} must be nonnegative", n.varpi));
        }
        if n.w1p_every == 0 {
            out.push("norms.w1p_every must be at least 1".into());
        }
        if !(self.compatibility.tolerance >= 0.0) {
            out.push(format!(
                "compatibility.tolerance = {} must be nonnegative",
                self.compatibility.tolerance
            ));
        }
        if let InitialDatum::GaussianBump {
            amplitude,
            width_x,
            width_v,
            x0,
            v0,
        } = &self.initial
        {
            if amplitude.len() != self.species {
                out.push(format!(
                    "initial.amplitude has {} entries for {} species",
                    amplitude.len(),
                    self.species
                ));
            }
            if amplitude.iter().any(|a| !a.is_finite()) {
                out.push("initial.amplitude must be finite".into());
            }
            if !(*width_x > 0.0) || !(*width_v > 0.0) {
                out.push(format!("initial widths ({width_x}, {width_v}) must be positive"));
            }
            if !Vec3(*x0).is_finite() || !Vec3(*v0).is_finite() {
                out.push("initial.x0 and initial.v0 must be finite".into());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ScenarioRange { violations: v })
        }
    }
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Scenario::from_toml_str(&text)
}
