//! Benchmark scenarios: configuration, registry, setup and the time loop.
//!
//! A configuration is JSON. Its `scenario` key picks a registry entry whose
//! defaults are deep-merged under the user's keys; `null` deletes a default.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::boundary::{conforming_face_nodes, BoundaryKind, BoundaryMethod, BoundarySpec, Region};
use crate::error::{Error, Result};
use crate::grid::{grid_enclosing, Grid};
use crate::io::{write_fdm_csv, write_metrics_json, write_snapshot_csv, write_vtk, MetricsRecord};
use crate::metrics::{fit_convergence_rate, l2_error, rmse, sample_reference_at_particles, Frame};
use crate::oracles::{
    fdm_ring, fdm_sphere, fdm_square, rod_temperature_constant_flux, rod_temperature_convective,
    FdmConfig, FdmSolution, RodParams,
};
use crate::particles::{
    generate_annulus_points, generate_box_points, generate_fan_points, generate_sphere_points,
    generate_square_points, ParticleSet, SquareLayout,
};
use crate::solver::{MaterialParams, Motion, SolverOptions, SolverState};
use crate::Vec3;

pub const SCENARIOS: [&str; 12] = [
    "rod-constant",
    "rod-constant-nc",
    "rod-convective",
    "rod-convective-nc",
    "ring-constant",
    "ring-convective",
    "sphere-ppc8",
    "sphere-ppc27",
    "square-rotated",
    "square-diamond",
    "square-spinning",
    "fan",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Geometry {
    /// Strip `[x0, x0 + length] × [0, h]` with its flux end at
    /// `x0 = −shift · h`.
    Rod {
        length: f64,
        shift: f64,
    },
    Ring {
        r_inner: f64,
        r_outer: f64,
        center: [f64; 2],
    },
    Sphere {
        radius: f64,
        center: Vec3,
    },
    Square {
        side: f64,
        center: [f64; 2],
        angle_deg: f64,
        layout: Layout,
    },
    Fan {
        center: [f64; 2],
        hub_radius: f64,
        outer_radius: f64,
        blades: usize,
        blade_width_deg: f64,
    },
    /// Points read from a snapshot CSV.
    Points {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    RotatedLattice,
    GridAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    /// Particles per cell; must be a perfect square (2D) or cube (3D).
    pub ppc: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub dt: Option<f64>,
    /// `Δt = cfl_factor · h² / α`.
    #[serde(default)]
    pub cfl_factor: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcKindName {
    ConstantFlux,
    Convective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    pub kind: BcKindName,
    #[serde(default)]
    pub q_s: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default, rename = "T_a")]
    pub ambient: Option<f64>,
    pub method: BoundaryMethod,
    pub eta: f64,
    #[serde(default)]
    pub h_p: Option<f64>,
    #[serde(default)]
    pub region: Option<Region>,
}

impl BcConfig {
    pub fn boundary_kind(&self) -> Result<BoundaryKind> {
        match self.kind {
            BcKindName::ConstantFlux => match self.q_s {
                Some(q_s) => Ok(BoundaryKind::ConstantFlux { q_s }),
                None => Err(Error::invalid("bc.q_s is required for constant_flux")),
            },
            BcKindName::Convective => match (self.gamma, self.ambient) {
                (Some(gamma), Some(ambient)) => Ok(BoundaryKind::Convective { gamma, ambient }),
                _ => Err(Error::invalid(
                    "bc.gamma and bc.T_a are required for convective",
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Reference {
    #[default]
    None,
    /// Closed-form semi-infinite rod; points further than `eval_length`
    /// from the flux end are left out when set.
    RodAnalytic {
        #[serde(default)]
        eval_length: Option<f64>,
    },
    FdmRing {
        dr: f64,
    },
    FdmSphere {
        dr: f64,
    },
    FdmSquare {
        dx: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Vtk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "csv_only")]
    pub formats: Vec<Format>,
    /// Keep snapshot fields in memory on the returned result.
    #[serde(default = "yes")]
    pub keep_fields: bool,
}

fn yes() -> bool {
    true
}

fn csv_only() -> Vec<Format> {
    vec![Format::Csv]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            formats: vec![Format::Csv],
            keep_fields: true,
        }
    }
}

/// Prescribed temperature on every node of the plane `x_axis = coord`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletPlane {
    pub axis: usize,
    pub coord: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub dim: usize,
    pub geometry: Geometry,
    pub material: MaterialParams,
    pub initial_temperature: f64,
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub bc: Option<BcConfig>,
    #[serde(default)]
    pub motion: Motion,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub output: OutputConfig,
    /// Points whose nearest particle at t = 0 is tracked every step.
    #[serde(default)]
    pub probes: Vec<Vec3>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub dirichlet: Vec<DirichletPlane>,
    /// Temperature field compared with the reference.
    #[serde(default)]
    pub compare_field: CompareField,
}

/// Which temperature stands for the simulation at a material point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareField {
    /// Nodal temperature interpolated to the point, `Σ_I S_Ip T_I`.
    #[default]
    Grid,
    /// The particle's own temperature.
    Particle,
}

pub fn list_scenarios() -> &'static [&'static str] {
    &SCENARIOS
}

fn unknown(name: &str) -> Error {
    Error::UnknownScenario {
        name: name.to_string(),
        available: SCENARIOS.iter().map(|s| s.to_string()).collect(),
    }
}

/// Registry defaults for `name` as JSON.
pub fn scenario_defaults(name: &str) -> Result<Value> {
    let unit = json!({"rho": 1.0, "c": 1.0, "kappa": 1.0});
    let constant = json!({"kind": "constant_flux", "q_s": 1.0, "method": "vhfm", "eta": 0.55});
    let heating =
        json!({"kind": "convective", "gamma": 1.0, "T_a": 1.0, "method": "vhfm", "eta": 0.55});
    let cooling =
        json!({"kind": "convective", "gamma": 1.0, "T_a": 0.0, "method": "vhfm", "eta": 0.55});
    let rod = |shift: f64, bc: &Value, t_end: f64, snaps: Value| {
        json!({
            "dim": 2,
            "geometry": {"type": "rod", "length": 20.0, "shift": shift},
            "material": unit,
            "initial_temperature": 0.0,
            "grid": {"h": 0.1, "ppc": 4},
            "time": {"dt": 1e-3, "t_end": t_end, "snapshots": snaps},
            "bc": bc,
            "reference": {"type": "rod-analytic"},
        })
    };
    let ring = |bc: &Value| {
        json!({
            "dim": 2,
            "geometry": {"type": "ring", "r_inner": 1.0, "r_outer": 5.0, "center": [0.0, 0.0]},
            "material": unit,
            "initial_temperature": 0.0,
            "grid": {"h": 0.1, "ppc": 4},
            "time": {"dt": 1e-3, "t_end": 10.0, "snapshots": [0.1, 1.0, 2.5, 10.0]},
            "bc": bc,
            "reference": {"type": "fdm-ring", "dr": 0.01},
            "probes": [[3.0, 0.0, 0.0]],
        })
    };
    let sphere = |ppc: u32| {
        json!({
            "dim": 3,
            "geometry": {"type": "sphere", "radius": 5.0, "center": [0.0, 0.0, 0.0]},
            "material": unit,
            "initial_temperature": 100.0,
            "grid": {"h": 0.2, "ppc": ppc},
            "time": {"dt": 0.01, "t_end": 10.0, "snapshots": [0.5, 1.0, 2.0, 5.0, 10.0]},
            "bc": cooling,
            "reference": {"type": "fdm-sphere", "dr": 0.02},
            "probes": [[0.0, 0.0, 0.0]],
        })
    };
    let square = |angle: f64, layout: &str, omega: f64| {
        let motion = if omega == 0.0 {
            json!({"type": "none"})
        } else {
            json!({"type": "rotation", "center": [2.5, 2.5], "omega_rps": omega})
        };
        json!({
            "dim": 2,
            "geometry": {"type": "square", "side": 5.0, "center": [2.5, 2.5],
                         "angle_deg": angle, "layout": layout},
            "material": unit,
            "initial_temperature": 0.0,
            "grid": {"h": 0.2, "ppc": 4},
            "time": {"dt": 0.01, "t_end": 5.0, "snapshots": [1.0, 5.0]},
            "bc": heating,
            "motion": motion,
            "reference": {"type": "fdm-square", "dx": 0.05},
            "probes": [[2.5, 2.5, 0.0]],
        })
    };
    let mut v = match name {
        "rod-constant" => rod(0.0, &constant, 1.0, json!([0.1, 0.5, 1.0])),
        "rod-constant-nc" => rod(0.5, &constant, 1.0, json!([0.1, 0.5, 1.0])),
        "rod-convective" => rod(0.0, &heating, 2.5, json!([0.1, 0.5, 2.5])),
        "rod-convective-nc" => rod(0.5, &heating, 2.5, json!([0.1, 0.5, 2.5])),
        "ring-constant" => ring(&constant),
        "ring-convective" => ring(&heating),
        "sphere-ppc8" => sphere(8),
        "sphere-ppc27" => sphere(27),
        "square-rotated" => square(15.0, "rotated-lattice", 0.0),
        "square-diamond" => square(45.0, "grid-aligned", 0.0),
        "square-spinning" => square(0.0, "rotated-lattice", 0.25),
        "fan" => json!({
            "dim": 2,
            "geometry": {"type": "fan", "center": [0.0, 0.0], "hub_radius": 0.6,
                         "outer_radius": 2.5, "blades": 4, "blade_width_deg": 40.0},
            "material": unit,
            "initial_temperature": 100.0,
            "grid": {"h": 0.1, "ppc": 4},
            "time": {"dt": 5e-3, "t_end": 3.0, "snapshots": [0.5, 1.0, 3.0]},
            "bc": cooling,
            "motion": {"type": "rotation", "center": [0.0, 0.0], "omega_rps": 1.0},
            "probes": [[0.0, 0.0, 0.0]],
        }),
        _ => return Err(unknown(name)),
    };
    v["scenario"] = json!(name);
    Ok(v)
}

/// Recursive object merge; `null` in `over` removes the key.
pub fn merge_json(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                if v.is_null() {
                    b.remove(&k);
                } else {
                    merge_json(b.entry(k).or_insert(Value::Null), v);
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Builds a configuration from user JSON layered over the registry
/// defaults named by its `scenario` key. A user `dt` replaces a default
/// `cfl_factor` and vice versa.
pub fn config_from_value(user: Value) -> Result<ScenarioConfig> {
    let name = user
        .get("scenario")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Config(vec!["`scenario` must name a registered scenario".into()]))?
        .to_string();
    let mut base = scenario_defaults(&name)?;
    if let Some(t) = user.get("time") {
        let drop = if t.get("dt").is_some() {
            Some("cfl_factor")
        } else if t.get("cfl_factor").is_some() {
            Some("dt")
        } else {
            None
        };
        if let (Some(k), Some(obj)) = (drop, base["time"].as_object_mut()) {
            obj.remove(k);
        }
    }
    merge_json(&mut base, user);
    let cfg: ScenarioConfig =
        serde_json::from_value(base).map_err(|e| Error::Config(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn named_config(name: &str) -> Result<ScenarioConfig> {
    config_from_value(json!({ "scenario": name }))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text)?;
    config_from_value(v)
}

fn per_axis(ppc: u32, dim: usize) -> Option<u32> {
    let n = (ppc as f64).powf(1.0 / dim as f64).round() as u32;
    (n >= 1 && n.pow(dim as u32) == ppc).then_some(n)
}

impl ScenarioConfig {
    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.dim == 2 || self.dim == 3) {
            errs.push(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if let Err(e) = self.material.validate() {
            errs.push(format!("material: {e}"));
        }
        if !self.initial_temperature.is_finite() {
            errs.push("initial_temperature must be finite".into());
        }
        if !(self.grid.h > 0.0) {
            errs.push(format!("grid.h must be positive, got {}", self.grid.h));
        }
        if (self.dim == 2 || self.dim == 3) && per_axis(self.grid.ppc, self.dim).is_none() {
            errs.push(format!(
                "grid.ppc = {} is not a perfect {} power",
                self.grid.ppc,
                if self.dim == 2 { "square" } else { "cube" }
            ));
        }
        let t = &self.time;
        match (t.dt, t.cfl_factor) {
            (Some(_), Some(_)) | (None, None) => {
                errs.push("time needs exactly one of dt and cfl_factor".into())
            }
            (Some(dt), None) if !(dt > 0.0) => {
                errs.push(format!("time.dt must be positive, got {dt}"))
            }
            (None, Some(f)) if !(f > 0.0) => {
                errs.push(format!("time.cfl_factor must be positive, got {f}"))
            }
            _ => {}
        }
        if !(t.t_end > 0.0) {
            errs.push(format!("time.t_end must be positive, got {}", t.t_end));
        }
        for &s in &t.snapshots {
            if !(s >= 0.0 && s <= t.t_end * (1.0 + 1e-12)) {
                errs.push(format!("snapshot time {s} lies outside [0, {}]", t.t_end));
            }
        }
        if t.snapshots.windows(2).any(|w| w[0] >= w[1]) {
            errs.push("snapshot times must increase strictly".into());
        }
        let geometry_dim = match &self.geometry {
            Geometry::Sphere { .. } => Some(3),
            Geometry::Points { .. } => None,
            _ => Some(2),
        };
        if let Some(d) = geometry_dim {
            if d != self.dim {
                errs.push(format!("geometry is {d}D but dim is {}", self.dim));
            }
        }
        match &self.geometry {
            Geometry::Rod { length, shift } => {
                if !(*length > 0.0) {
                    errs.push("geometry.length must be positive".into());
                }
                if !(0.0..1.0).contains(shift) {
                    errs.push(format!("geometry.shift must lie in [0, 1), got {shift}"));
                }
            }
            Geometry::Ring {
                r_inner, r_outer, ..
            } => {
                if !(*r_inner > 0.0 && r_inner < r_outer) {
                    errs.push("geometry needs 0 < r_inner < r_outer".into());
                }
            }
            Geometry::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    errs.push("geometry.radius must be positive".into());
                }
            }
            Geometry::Square { side, .. } => {
                if !(*side > 0.0) {
                    errs.push("geometry.side must be positive".into());
                }
            }
            Geometry::Fan {
                hub_radius,
                outer_radius,
                blades,
                blade_width_deg,
                ..
            } => {
                if !(*hub_radius > 0.0 && hub_radius < outer_radius) {
                    errs.push("geometry needs 0 < hub_radius < outer_radius".into());
                }
                if *blades == 0
                    || !(*blade_width_deg > 0.0 && blade_width_deg * (*blades as f64) < 360.0)
                {
                    errs.push(
                        "geometry needs at least one blade and blades that do not overlap".into(),
                    );
                }
            }
            Geometry::Points { .. } => {}
        }
        if let Some(bc) = &self.bc {
            match bc.boundary_kind() {
                Ok(kind) => {
                    let mut spec = BoundarySpec::new(kind, bc.method);
                    spec.eta = bc.eta;
                    spec.h_p = bc.h_p;
                    if let Err(e) = spec.validate() {
                        errs.push(format!("bc: {e}"));
                    }
                }
                Err(e) => errs.push(e.to_string()),
            }
            if bc.method == BoundaryMethod::Node
                && !matches!(self.geometry, Geometry::Rod { shift, .. } if shift == 0.0)
            {
                errs.push(
                    "bc.method `node` needs a grid-aligned flux face (conforming rod)".into(),
                );
            }
        }
        if let Motion::Rotation { omega_rps, .. } = self.motion {
            if self.dim != 2 {
                errs.push("rotation is only supported in 2D".into());
            }
            if !omega_rps.is_finite() {
                errs.push("motion.omega_rps must be finite".into());
            }
        }
        if !(self.solver.safety > 0.0) {
            errs.push("solver.safety must be positive".into());
        }
        for d in &self.dirichlet {
            if d.axis >= self.dim {
                errs.push(format!("dirichlet axis {} out of range", d.axis));
            }
        }
        let ref_ok = match (&self.reference, &self.geometry) {
            (Reference::None, _) => true,
            (Reference::RodAnalytic { .. }, Geometry::Rod { .. }) => self.bc.is_some(),
            (Reference::FdmRing { dr }, Geometry::Ring { .. }) => *dr > 0.0 && self.bc.is_some(),
            (Reference::FdmSphere { dr }, Geometry::Sphere { .. }) => {
                *dr > 0.0 && self.bc.is_some()
            }
            (Reference::FdmSquare { dx }, Geometry::Square { .. }) => {
                *dx > 0.0 && self.bc.is_some()
            }
            _ => false,
        };
        if !ref_ok {
            errs.push(
                "reference does not fit the geometry, lacks a bc, or has a nonpositive spacing"
                    .into(),
            );
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn spacing(&self) -> f64 {
        self.grid.h / per_axis(self.grid.ppc, self.dim).unwrap_or(1) as f64
    }

    pub fn time_step(&self) -> f64 {
        match (self.time.dt, self.time.cfl_factor) {
            (Some(dt), _) => dt,
            (None, Some(f)) => f * self.grid.h * self.grid.h / self.material.diffusivity(),
            (None, None) => f64::NAN,
        }
    }

    pub fn boundary_spec(&self) -> Result<Option<BoundarySpec>> {
        let Some(bc) = &self.bc else { return Ok(None) };
        let mut spec = BoundarySpec::new(bc.boundary_kind()?, bc.method);
        spec.eta = bc.eta;
        spec.h_p = match (bc.method, bc.h_p) {
            (BoundaryMethod::Particle, None) => Some(self.spacing()),
            (_, h_p) => h_p,
        };
        spec.region = bc.region;
        if spec.region.is_none() {
            if let Geometry::Rod { length, shift } = self.geometry {
                let x0 = -shift * self.grid.h;
                spec.region = Some(Region {
                    lo: [f64::NEG_INFINITY; 3],
                    hi: [x0 + 0.5 * length, f64::INFINITY, f64::INFINITY],
                });
            }
        }
        Ok(Some(spec))
    }

    /// Coordinate of the rod's flux end.
    pub fn rod_origin(&self) -> Option<f64> {
        match self.geometry {
            Geometry::Rod { shift, .. } => Some(-shift * self.grid.h),
            _ => None,
        }
    }

    /// Total rotation of the body at time `t`, in radians.
    pub fn body_angle(&self, t: f64) -> f64 {
        let fixed = match self.geometry {
            Geometry::Square { angle_deg, .. } => angle_deg.to_radians(),
            _ => 0.0,
        };
        match self.motion {
            Motion::Rotation { omega_rps, .. } => fixed + 2.0 * PI * omega_rps * t,
            Motion::None => fixed,
        }
    }

    pub fn method_tag(&self) -> &'static str {
        self.bc.as_ref().map_or("none", |b| b.method.as_str())
    }
}

fn build_particles(cfg: &ScenarioConfig) -> Result<ParticleSet> {
    let s = cfg.spacing();
    let h = cfg.grid.h;
    let mut p = match &cfg.geometry {
        Geometry::Rod { length, shift } => {
            let x0 = -shift * h;
            generate_box_points(&[x0, 0.0], &[x0 + length, h], s)?
        }
        Geometry::Ring {
            r_inner,
            r_outer,
            center,
        } => generate_annulus_points(*center, *r_inner, *r_outer, s)?,
        Geometry::Sphere { radius, center } => generate_sphere_points(*center, *radius, s)?,
        Geometry::Square {
            side,
            center,
            angle_deg,
            layout,
        } => {
            let layout = match layout {
                Layout::RotatedLattice => SquareLayout::RotatedLattice,
                Layout::GridAligned => SquareLayout::GridAligned,
            };
            generate_square_points(*center, *side, angle_deg.to_radians(), s, layout)?
        }
        Geometry::Fan {
            center,
            hub_radius,
            outer_radius,
            blades,
            blade_width_deg,
        } => generate_fan_points(
            *center,
            *hub_radius,
            *outer_radius,
            *blades,
            blade_width_deg.to_radians(),
            s,
        )?,
        Geometry::Points { path } => {
            let p = crate::io::load_points_from_csv(path)?;
            if p.dim() != cfg.dim && !(cfg.dim == 3 && p.dim() == 2) {
                return Err(Error::Config(vec![format!(
                    "points file is {}D but dim is {}",
                    p.dim(),
                    cfg.dim
                )]));
            }
            let mut q = ParticleSet::new(cfg.dim);
            for i in 0..p.len() {
                q.push(p.position[i], p.volume[i]);
            }
            q.id = p.id.clone();
            q
        }
    };
    if p.is_empty() {
        return Err(Error::Config(vec!["geometry produced no particles".into()]));
    }
    let m = cfg.material;
    p.set_material(m.rho, m.c, m.kappa);
    p.set_temperature(cfg.initial_temperature);
    Ok(p)
}

fn build_grid_for(cfg: &ScenarioConfig, p: &ParticleSet) -> Result<Grid> {
    let h = cfg.grid.h;
    if let Geometry::Rod { length, shift } = cfg.geometry {
        let x0 = -shift * h;
        let lo = (x0 / h).floor() - 2.0;
        let hi = ((x0 + length) / h).ceil() + 2.0;
        return Grid::new(&[lo * h, 0.0], &[(hi - lo) * h, h], h, 2);
    }
    let (mut lo, mut hi) = p.bounds();
    if let Motion::Rotation { center, .. } = cfg.motion {
        let r = p
            .position
            .iter()
            .map(|x| (x[0] - center[0]).hypot(x[1] - center[1]))
            .fold(0.0, f64::max);
        lo = [center[0] - r, center[1] - r, 0.0];
        hi = [center[0] + r, center[1] + r, 0.0];
    }
    grid_enclosing(&lo, &hi, h, cfg.dim, 2)
}

/// Grid, particles and boundary set up but not advanced.
pub fn build_state(cfg: &ScenarioConfig) -> Result<SolverState> {
    cfg.validate()?;
    let particles = build_particles(cfg)?;
    let grid = build_grid_for(cfg, &particles)?;
    let mut state = SolverState::new(grid, particles, cfg.solver)?;
    state.motion = cfg.motion;
    if let Some(spec) = cfg.boundary_spec()? {
        if spec.method == BoundaryMethod::Node {
            let x0 = cfg.rod_origin().expect("validated");
            state.boundary_nodes = conforming_face_nodes(&state.grid, 0, x0)?;
        }
        state = state.with_boundary(spec)?;
    }
    for d in &cfg.dirichlet {
        for n in state.nodes_on_plane(d.axis, d.coord) {
            state.dirichlet.push((n, d.value));
        }
    }
    Ok(state)
}

/// Reference solution for the configured oracle, computed once per run.
pub enum ReferenceField {
    None,
    Rod {
        origin: f64,
        kind: BoundaryKind,
        params: RodParams,
        eval_length: Option<f64>,
    },
    Fdm {
        solution: FdmSolution,
        anchor: Vec3,
    },
}

fn fdm_step(bound: f64) -> f64 {
    0.8 * bound
}

pub fn build_reference(cfg: &ScenarioConfig) -> Result<ReferenceField> {
    let kind = match &cfg.bc {
        Some(bc) => bc.boundary_kind()?,
        None => return Ok(ReferenceField::None),
    };
    let alpha = cfg.material.diffusivity();
    let times: Vec<f64> = cfg.time.snapshots.clone();
    let fdm = |dt: f64| FdmConfig {
        material: cfg.material,
        initial: cfg.initial_temperature,
        bc: kind,
        dt,
        times: times.clone(),
    };
    Ok(match (&cfg.reference, &cfg.geometry) {
        (Reference::None, _) => ReferenceField::None,
        (Reference::RodAnalytic { eval_length }, _) => ReferenceField::Rod {
            origin: cfg.rod_origin().expect("validated"),
            kind,
            params: RodParams {
                initial: cfg.initial_temperature,
                kappa: cfg.material.kappa,
                alpha,
            },
            eval_length: *eval_length,
        },
        (
            Reference::FdmRing { dr },
            Geometry::Ring {
                r_inner,
                r_outer,
                center,
            },
        ) => ReferenceField::Fdm {
            solution: fdm_ring(
                *r_inner,
                *r_outer,
                *dr,
                &fdm(fdm_step(0.5 * dr * dr / alpha)),
            )?,
            anchor: [center[0], center[1], 0.0],
        },
        (Reference::FdmSphere { dr }, Geometry::Sphere { radius, center }) => ReferenceField::Fdm {
            solution: fdm_sphere(*radius, *dr, &fdm(fdm_step(dr * dr / (6.0 * alpha))))?,
            anchor: *center,
        },
        (Reference::FdmSquare { dx }, Geometry::Square { side, center, .. }) => {
            ReferenceField::Fdm {
                solution: fdm_square(*side, *dx, &fdm(fdm_step(dx * dx / (4.0 * alpha))))?,
                anchor: [center[0] - 0.5 * side, center[1] - 0.5 * side, 0.0],
            }
        }
        _ => {
            return Err(Error::Config(vec![
                "reference does not fit the geometry".into()
            ]))
        }
    })
}

/// Error of a particle field against the reference at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub time: f64,
    pub method: String,
    pub h: f64,
    pub rmse: f64,
    pub l2: f64,
    /// RMSE of the raw particle temperatures.
    pub particle_rmse: f64,
    /// `sim − ref` at every compared particle.
    pub errors: Vec<f64>,
    pub relative: Vec<Option<f64>>,
    /// Particles outside the reference domain or the evaluation window.
    pub excluded_points: usize,
}

/// Reference values paired with simulated ones; `None` without a reference.
fn paired_values(
    cfg: &ScenarioConfig,
    reference: &ReferenceField,
    positions: &[Vec3],
    values: &[f64],
    t: f64,
) -> Result<Option<(Vec<f64>, Vec<f64>, usize)>> {
    let paired = match reference {
        ReferenceField::None => return Ok(None),
        ReferenceField::Rod {
            origin,
            kind,
            params,
            eval_length,
        } => {
            let mut sim = Vec::new();
            let mut refs = Vec::new();
            let mut excluded = 0;
            for (x, &temp) in positions.iter().zip(values) {
                let d = x[0] - origin;
                if eval_length.is_some_and(|l| d > l) {
                    excluded += 1;
                    continue;
                }
                let r = match *kind {
                    BoundaryKind::ConstantFlux { q_s } => {
                        rod_temperature_constant_flux(d, t, q_s, params)
                    }
                    BoundaryKind::Convective { gamma, ambient } => {
                        rod_temperature_convective(d, t, ambient, gamma, params)
                    }
                };
                sim.push(temp);
                refs.push(r);
            }
            (sim, refs, excluded)
        }
        ReferenceField::Fdm { solution, anchor } => {
            let k = solution
                .snapshot_index(t)
                .ok_or_else(|| Error::invalid(format!("reference has no snapshot at t = {t}")))?;
            let frame = match (cfg.body_angle(t), &cfg.geometry) {
                (a, Geometry::Square { center, .. }) if a != 0.0 => Frame::InverseRotation {
                    center: *center,
                    angle: a,
                },
                _ => Frame::Identity,
            };
            let sampled = sample_reference_at_particles(solution, k, positions, *anchor, frame);
            let (sim, refs) = sampled.pairs(values);
            (sim, refs, sampled.excluded)
        }
    };
    if paired.0.is_empty() {
        return Err(Error::invalid(
            "no particle lies inside the reference domain",
        ));
    }
    Ok(Some(paired))
}

/// Compares the solver state with the reference at `t`.
///
/// Expects a fresh nodal projection. The primary error uses the field
/// selected by `compare_field`; `particle_rmse` always uses the raw particle
/// temperatures.
pub fn evaluate_reference(
    cfg: &ScenarioConfig,
    reference: &ReferenceField,
    state: &SolverState,
    t: f64,
) -> Result<Option<ErrorReport>> {
    let p = &state.particles;
    let Some((psim, pref, _)) = paired_values(cfg, reference, &p.position, &p.temperature, t)?
    else {
        return Ok(None);
    };
    let particle_rmse = rmse(&psim, &pref)?;
    let (sim, refs, excluded) = match cfg.compare_field {
        CompareField::Particle => paired_values(cfg, reference, &p.position, &p.temperature, t)?,
        CompareField::Grid => {
            let interpolated = state.grid_temperature_at_particles();
            paired_values(cfg, reference, &p.position, &interpolated, t)?
        }
    }
    .expect("reference present");
    let l2 = l2_error(&sim, &refs)?;
    Ok(Some(ErrorReport {
        time: t,
        method: cfg.method_tag().to_string(),
        h: cfg.grid.h,
        rmse: l2.l2,
        l2: l2.l2,
        particle_rmse,
        errors: sim.iter().zip(&refs).map(|(s, r)| s - r).collect(),
        relative: l2.relative,
        excluded_points: excluded,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    /// Empty unless `output.keep_fields`.
    pub position: Vec<Vec3>,
    pub temperature: Vec<f64>,
}

pub struct RunResult {
    pub config: ScenarioConfig,
    pub dt: f64,
    /// Solver after the final step.
    pub state: SolverState,
    pub snapshots: Vec<Snapshot>,
    pub reports: Vec<ErrorReport>,
    /// Particle tracked by each probe.
    pub probe_particles: Vec<usize>,
    /// `(t, temperature per probe)` at t = 0 and after every step.
    pub probe_history: Vec<(f64, Vec<f64>)>,
    /// Surface-node count of every step.
    pub surface_history: Vec<usize>,
    /// Boundary heat input of every step, W.
    pub power_history: Vec<f64>,
    /// Particle temperature `(min, max)` at t = 0 and after every step.
    pub temperature_range: Vec<(f64, f64)>,
    pub runtime_seconds: f64,
}

impl RunResult {
    pub fn report_at(&self, t: f64) -> Option<&ErrorReport> {
        self.reports
            .iter()
            .find(|r| (r.time - t).abs() <= 1e-9 * t.max(1.0))
    }
}

fn nearest_particle(p: &ParticleSet, x: &Vec3) -> usize {
    let d2 = |y: &Vec3| (0..3).map(|k| (y[k] - x[k]).powi(2)).sum::<f64>();
    (0..p.len())
        .min_by(|&a, &b| d2(&p.position[a]).total_cmp(&d2(&p.position[b])))
        .unwrap_or(0)
}

fn range(t: &[f64]) -> (f64, f64) {
    t.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn write_outputs(cfg: &ScenarioConfig, dir: &Path, k: usize, state: &SolverState) -> Result<()> {
    for f in &cfg.output.formats {
        match f {
            Format::Csv => {
                write_snapshot_csv(&state.particles, &dir.join(format!("snapshot_{k:03}.csv")))?
            }
            Format::Vtk => write_vtk(&state.particles, &dir.join(format!("snapshot_{k:03}.vtk")))?,
        }
    }
    Ok(())
}

/// Runs the scenario to `t_end`, landing exactly on each snapshot time.
///
/// With `output.dir` set, writes `snapshot_NNN.{csv,vtk}`, one
/// `metrics_NNN.json` per reference comparison, the reference fields as
/// `reference_NNN.csv` and `history.csv` with the boundary power and probe temperatures.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult> {
    let start = Instant::now();
    let mut state = build_state(cfg)?;
    let reference = build_reference(cfg)?;
    let dt = cfg.time_step();
    let dir = cfg.output.dir.clone();
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let probe_particles: Vec<usize> = cfg
        .probes
        .iter()
        .map(|x| nearest_particle(&state.particles, x))
        .collect();
    let probe_values = |s: &SolverState| {
        probe_particles
            .iter()
            .map(|&i| s.particles.temperature[i])
            .collect()
    };
    let mut probe_history = vec![(0.0, probe_values(&state))];
    let mut temperature_range = vec![range(&state.particles.temperature)];
    let mut surface_history = Vec::new();
    let mut power_history = Vec::new();
    let mut snapshots = Vec::new();
    let mut reports = Vec::new();

    let mut targets: Vec<f64> = cfg.time.snapshots.clone();
    if targets
        .last()
        .is_none_or(|&t| t < cfg.time.t_end * (1.0 - 1e-12))
    {
        targets.push(cfg.time.t_end);
    }
    let mut k = 0;
    for (ti, &target) in targets.iter().enumerate() {
        while target - state.time > 1e-6 * dt {
            state.step(dt.min(target - state.time))?;
            surface_history.push(state.diagnostics.surface_nodes);
            power_history.push(state.diagnostics.boundary_power);
            temperature_range.push(range(&state.particles.temperature));
            probe_history.push((state.time, probe_values(&state)));
        }
        if ti >= cfg.time.snapshots.len() {
            break;
        }
        let t = target;
        state.prepare_geometry()?;
        state.project_temperature();
        state.particle_heat_flux();
        snapshots.push(Snapshot {
            time: t,
            position: if cfg.output.keep_fields {
                state.particles.position.clone()
            } else {
                Vec::new()
            },
            temperature: if cfg.output.keep_fields {
                state.particles.temperature.clone()
            } else {
                Vec::new()
            },
        });
        let report = evaluate_reference(cfg, &reference, &state, t)?;
        if let Some(d) = &dir {
            write_outputs(cfg, d, k, &state)?;
            if let ReferenceField::Fdm { solution, .. } = &reference {
                if let Some(j) = solution.snapshot_index(t) {
                    write_fdm_csv(solution, j, &d.join(format!("reference_{k:03}.csv")))?;
                }
            }
            if let Some(r) = &report {
                let rec = MetricsRecord {
                    scenario: cfg.scenario.clone(),
                    method: r.method.clone(),
                    h: cfg.grid.h,
                    ppc: cfg.grid.ppc,
                    dt,
                    time: t,
                    rmse: Some(r.rmse),
                    l2: Some(r.l2),
                    excluded_points: r.excluded_points,
                    runtime_seconds: start.elapsed().as_secs_f64(),
                };
                write_metrics_json(&rec, &d.join(format!("metrics_{k:03}.json")))?;
            }
        }
        if let Some(r) = report {
            reports.push(r);
        }
        k += 1;
    }

    if let Some(d) = &dir {
        let mut text = String::from("time,boundary_power");
        for i in 0..probe_particles.len() {
            text.push_str(&format!(",probe{i}"));
        }
        text.push('\n');
        for (j, (t, v)) in probe_history.iter().enumerate() {
            let power = j.checked_sub(1).map_or(0.0, |i| power_history[i]);
            text.push_str(&format!("{t:.16e},{power:.16e}"));
            for x in v {
                text.push_str(&format!(",{x:.16e}"));
            }
            text.push('\n');
        }
        let path = d.join("history.csv");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }

    Ok(RunResult {
        config: cfg.clone(),
        dt,
        state,
        snapshots,
        reports,
        probe_particles,
        probe_history,
        surface_history,
        power_history,
        temperature_range,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Error at `time` for each mesh size, with `Δt = cfl_factor · h² / α`.
pub fn convergence_study(
    name: &str,
    meshes: &[f64],
    cfl_factor: f64,
    time: f64,
) -> Result<(Vec<(f64, f64)>, f64)> {
    let mut pairs = Vec::new();
    for &h in meshes {
        let cfg = config_from_value(json!({
            "scenario": name,
            "grid": {"h": h},
            "time": {"cfl_factor": cfl_factor, "t_end": time, "snapshots": [time]},
            "output": {"formats": [], "keep_fields": false},
        }))?;
        let run = run_scenario(&cfg)?;
        let r = run
            .report_at(time)
            .ok_or_else(|| Error::invalid(format!("scenario `{name}` has no reference")))?;
        log::info!("{name}: h = {h}, error = {:.4e}", r.rmse);
        pairs.push((h, r.rmse));
    }
    let slope = fit_convergence_rate(&pairs)?;
    Ok((pairs, slope))
}

/// Runs the scenario once per boundary method.
pub fn compare_methods(name: &str, methods: &[BoundaryMethod]) -> Result<Vec<RunResult>> {
    methods
        .iter()
        .map(|m| {
            let cfg = config_from_value(json!({
                "scenario": name,
                "bc": {"method": m.as_str()},
                "output": {"formats": [], "keep_fields": false},
            }))?;
            run_scenario(&cfg)
        })
        .collect()
}
