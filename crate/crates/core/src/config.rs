//! TOML run configuration.
//!
//! Every key is optional. Omitted keys take the value of the selected
//! scenario preset, so an empty file (apart from `schema_version`) runs the
//! open-field preset. Angles are in degrees here and radians everywhere
//! else. [`Config::resolved`] writes back a fully populated config, which
//! is what output manifests record.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capture::{CameraIntrinsics, NoiseModel};
use crate::costs::{FormationSpec, SphericalDiscretization};
use crate::error::{Error, Result};
use crate::formation::PlannerParams;
use crate::local_planner::LocalParams;
use crate::simulator::{
    ActorPreset, ActorSpec, BoxSpec, Scenario, TrackerParams, WorldSpec, YawMode, NOISE_LEVELS, ROBOT_SWEEP,
    TILT_SWEEP_DEG,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    OpenField,
    Mound,
    Trees,
}

impl Preset {
    pub fn scenario(self) -> Scenario {
        match self {
            Preset::OpenField => Scenario::open_field(),
            Preset::Mound => Scenario::mound(),
            Preset::Trees => Scenario::trees(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capture_rate_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub central_rate_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_rate_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yaw_mode: Option<YawMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execution_noise_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    /// `open`, `boxes` or `grid_file`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voxel_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BoxSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupancy_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<ActorPreset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed_mps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sway_amplitude_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sway_period_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_interval_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilt_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_yaw_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_occlusion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_obstacle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_formation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yaw_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilt_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilt_min_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilt_max_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbor_radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occlusion_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_clearance_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lift_step_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lift_tilt_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_halvings: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clearance_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_occlusion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_obstacle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_formation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_separation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occlusion_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation_noise_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_sigma_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose_position_sigma_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose_rotation_sigma_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miss_base_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miss_tilt_gain_per_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub swap_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occlusion_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_levels_m: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilts_deg: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robots: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub scenario: ScenarioSection,
    pub world: WorldSection,
    pub actor: ActorSection,
    pub formation: FormationSection,
    pub planner: PlannerSection,
    pub local: LocalSection,
    pub tracker: TrackerSection,
    pub camera: CameraSection,
    pub noise: NoiseSection,
    pub safety: SafetySection,
    pub experiment: ExperimentSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: Default::default(),
            world: Default::default(),
            actor: Default::default(),
            formation: Default::default(),
            planner: Default::default(),
            local: Default::default(),
            tracker: Default::default(),
            camera: Default::default(),
            noise: Default::default(),
            safety: Default::default(),
            experiment: Default::default(),
        }
    }
}

/// Sweep settings resolved from the `[experiment]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub seeds: Vec<u64>,
    pub noise_levels: Vec<f64>,
    pub tilts_deg: Vec<f64>,
    pub robots: Vec<usize>,
}

fn invalid(field: &str, message: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("{field}: {message}"))
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be non-negative, got {v}")))
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config {
            path: String::new(),
            message: e.to_string(),
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { message, .. } => Error::Config {
                path: path.display().to_string(),
                message,
            },
            Error::InvalidParameter(message) => Error::Config {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Builds the run scenario: preset defaults overlaid with every key
    /// present in the file, validated.
    pub fn scenario(&self) -> Result<Scenario> {
        let sc = &self.scenario;
        let mut s = sc.preset.unwrap_or_default().scenario();
        if let Some(v) = &sc.name {
            s.name = v.clone();
        }
        if let Some(v) = sc.duration_s {
            s.duration = positive("scenario.duration_s", v)?;
        }
        if let Some(v) = sc.capture_rate_hz {
            s.capture_rate = positive("scenario.capture_rate_hz", v)?;
        }
        if let Some(v) = sc.central_rate_hz {
            s.central_rate = positive("scenario.central_rate_hz", v)?;
        }
        if let Some(v) = sc.local_rate_hz {
            s.local_rate = positive("scenario.local_rate_hz", v)?;
        }
        if let Some(v) = sc.seed {
            s.seed = v;
        }
        if let Some(v) = sc.yaw_mode {
            s.yaw_mode = v;
        }
        if let Some(v) = sc.execution_noise_m {
            s.execution_noise = non_negative("scenario.execution_noise_m", v)?;
        }

        self.apply_world(&mut s)?;

        let a = &self.actor;
        let actor = &mut s.actor;
        if let Some(v) = a.preset {
            actor.preset = v;
        }
        if let Some(v) = &a.waypoints {
            if v.is_empty() {
                return Err(invalid("actor.waypoints", "needs at least one point"));
            }
            actor.waypoints = v.clone();
        }
        if let Some(v) = a.speed_mps {
            actor.speed = non_negative("actor.speed_mps", v)?;
        }
        if let Some(v) = a.closed {
            actor.closed = v;
        }
        if let Some(v) = a.sway_amplitude_m {
            actor.sway_amplitude = non_negative("actor.sway_amplitude_m", v)?;
        }
        if let Some(v) = a.sway_period_s {
            actor.sway_period = positive("actor.sway_period_s", v)?;
        }
        if let Some(v) = a.jump_interval_s {
            actor.jump_interval = positive("actor.jump_interval_s", v)?;
        }

        let f = &self.formation;
        let base = s.formation;
        let n = f.n.unwrap_or(base.n);
        if n < 2 {
            return Err(invalid("formation.n", format!("needs at least 2 drones, got {n}")));
        }
        let rho = positive("formation.rho_m", f.rho_m.unwrap_or(base.rho_form))?;
        let tilt = f.tilt_deg.map_or(base.phi_form, f64::to_radians);
        if !(0.0..90.0).contains(&tilt.to_degrees()) {
            return Err(invalid("formation.tilt_deg", "must lie in [0, 90)"));
        }
        let r_max = match f.r_max_m {
            Some(v) => v,
            None if f.rho_m.is_some() => 1.2 * rho,
            None => base.r_max,
        };
        let weights = (
            f.lambda_occlusion.unwrap_or(base.lambda_occlusion),
            f.lambda_obstacle.unwrap_or(base.lambda_obstacle),
            f.lambda_formation.unwrap_or(base.lambda_formation),
        );
        s.formation = FormationSpec::new(n, rho, tilt)
            .map_err(|e| invalid("formation", e))?
            .with_weights(weights.0, weights.1, weights.2)
            .map_err(|e| invalid("formation", e))?
            .with_r_max(r_max)
            .map_err(|e| invalid("formation.r_max_m", e))?;
        if let Some(v) = f.initial_yaw_deg {
            s.initial_yaw = v.to_radians();
        }

        self.apply_planner(&mut s.planner)?;
        self.apply_local(&mut s.local, &s.formation)?;

        let t = &self.tracker;
        s.tracker = TrackerParams {
            accel_sigma: positive("tracker.accel_sigma", t.accel_sigma.unwrap_or(s.tracker.accel_sigma))?,
            obs_sigma: positive("tracker.obs_sigma", t.obs_sigma.unwrap_or(s.tracker.obs_sigma))?,
            observation_noise: non_negative(
                "tracker.observation_noise_m",
                t.observation_noise_m.unwrap_or(s.tracker.observation_noise),
            )?,
        };

        let c = &self.camera;
        let i = s.intrinsics;
        s.intrinsics = CameraIntrinsics {
            fx: c.fx.unwrap_or(i.fx),
            fy: c.fy.unwrap_or(i.fy),
            cx: c.cx.unwrap_or(i.cx),
            cy: c.cy.unwrap_or(i.cy),
            width: c.width.unwrap_or(i.width),
            height: c.height.unwrap_or(i.height),
        };
        s.intrinsics.validate().map_err(|e| invalid("camera", e))?;

        let nz = &self.noise;
        let d = s.noise;
        s.noise = NoiseModel {
            pixel_sigma: nz.pixel_sigma_px.unwrap_or(d.pixel_sigma),
            pose_position_sigma: nz.pose_position_sigma_m.unwrap_or(d.pose_position_sigma),
            pose_rotation_sigma: nz.pose_rotation_sigma_deg.map_or(d.pose_rotation_sigma, f64::to_radians),
            miss_base_rate: nz.miss_base_rate.unwrap_or(d.miss_base_rate),
            miss_tilt_gain: nz.miss_tilt_gain_per_rad.unwrap_or(d.miss_tilt_gain),
            swap_rate: nz.swap_rate.unwrap_or(d.swap_rate),
            occlusion_threshold: nz.occlusion_threshold.unwrap_or(d.occlusion_threshold),
            rng_seed: s.seed,
        };
        s.noise.validate().map_err(|e| invalid("noise", e))?;

        if let Some(v) = self.safety.margin_m {
            s.safety_margin = non_negative("safety.margin_m", v)?;
        }
        s.validate()?;
        Ok(s)
    }

    fn apply_world(&self, s: &mut Scenario) -> Result<()> {
        let w = &self.world;
        if let Some(v) = w.occupancy_threshold {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid("world.occupancy_threshold", "must lie in [0, 1]"));
            }
            s.occupancy_threshold = v;
        }
        let kind = match &w.kind {
            Some(k) => k.as_str(),
            None => {
                if w.origin.is_some() || w.voxel_size.is_some() || w.dims.is_some() || w.boxes.is_some() || w.path.is_some() {
                    return Err(invalid("world.kind", "required when other world keys are set"));
                }
                return Ok(());
            }
        };
        s.world = match kind {
            "open" => WorldSpec::Open,
            "boxes" => {
                let (origin, voxel_size, dims) = match &s.world {
                    WorldSpec::Boxes {
                        origin,
                        voxel_size,
                        dims,
                        ..
                    } => (*origin, *voxel_size, *dims),
                    _ => ([-30.0, -20.0, 0.0], 0.5, [120, 80, 40]),
                };
                WorldSpec::Boxes {
                    origin: w.origin.unwrap_or(origin),
                    voxel_size: positive("world.voxel_size", w.voxel_size.unwrap_or(voxel_size))?,
                    dims: w.dims.unwrap_or(dims),
                    boxes: w.boxes.clone().unwrap_or_default(),
                }
            }
            "grid_file" => {
                let path = w.path.clone().ok_or_else(|| invalid("world.path", "required for kind = \"grid_file\""))?;
                if !path.exists() {
                    return Err(invalid("world.path", format!("{} does not exist", path.display())));
                }
                WorldSpec::GridFile { path }
            }
            other => {
                return Err(invalid(
                    "world.kind",
                    format!("unknown kind {other:?}, expected \"open\", \"boxes\" or \"grid_file\""),
                ))
            }
        };
        Ok(())
    }

    fn apply_planner(&self, p: &mut PlannerParams) -> Result<()> {
        let c = &self.planner;
        if let Some(v) = c.horizon_s {
            p.horizon = positive("planner.horizon_s", v)?;
        }
        if let Some(v) = c.step_s {
            p.step = positive("planner.step_s", v)?;
        }
        if p.horizon < p.step {
            return Err(invalid("planner.horizon_s", "must be at least one step"));
        }
        let d: SphericalDiscretization = p.disc;
        p.disc = SphericalDiscretization {
            yaw_cells: c.yaw_cells.unwrap_or(d.yaw_cells),
            tilt_cells: c.tilt_cells.unwrap_or(d.tilt_cells),
            range_cells: c.range_cells.unwrap_or(d.range_cells),
            samples: c.samples.unwrap_or(d.samples),
            phi_min: c.tilt_min_deg.map_or(d.phi_min, f64::to_radians),
            phi_max: c.tilt_max_deg.map_or(d.phi_max, f64::to_radians),
        };
        p.disc.validate().map_err(|e| invalid("planner", e))?;
        if let Some(v) = c.neighbor_radius {
            if v == 0 {
                return Err(invalid("planner.neighbor_radius", "must be at least 1"));
            }
            p.neighbor_radius = v;
        }
        if let Some(v) = c.occlusion_samples {
            if v == 0 {
                return Err(invalid("planner.occlusion_samples", "must be at least 1"));
            }
            p.occlusion_samples = v;
        }
        if let Some(v) = c.target_clearance_m {
            p.target_clearance = non_negative("planner.target_clearance_m", v)?;
        }
        if let Some(v) = c.lift_step_deg {
            p.lift_step = positive("planner.lift_step_deg", v)?.to_radians();
        }
        if let Some(v) = c.max_lift_tilt_deg {
            p.max_lift_tilt = v.to_radians();
        }
        Ok(())
    }

    fn apply_local(&self, l: &mut LocalParams, formation: &FormationSpec) -> Result<()> {
        let c = &self.local;
        l.lambda_occlusion = formation.lambda_occlusion;
        l.lambda_obstacle = formation.lambda_obstacle;
        l.lambda_formation = formation.lambda_formation;
        if let Some(v) = c.dt_s {
            l.dt = positive("local.dt_s", v)?;
        }
        if let Some(v) = c.eta {
            l.eta = positive("local.eta", v)?;
        }
        if let Some(v) = c.max_iters {
            l.max_iters = v;
        }
        if let Some(v) = c.max_halvings {
            l.max_halvings = v;
        }
        if let Some(v) = c.rel_tol {
            l.rel_tol = non_negative("local.rel_tol", v)?;
        }
        if let Some(v) = c.clearance_m {
            l.clearance = non_negative("local.clearance_m", v)?;
        }
        if let Some(v) = c.separation_m {
            l.separation = non_negative("local.separation_m", v)?;
        }
        if let Some(v) = c.lambda_occlusion {
            l.lambda_occlusion = non_negative("local.lambda_occlusion", v)?;
        }
        if let Some(v) = c.lambda_obstacle {
            l.lambda_obstacle = non_negative("local.lambda_obstacle", v)?;
        }
        if let Some(v) = c.lambda_formation {
            l.lambda_formation = non_negative("local.lambda_formation", v)?;
        }
        if let Some(v) = c.lambda_separation {
            l.lambda_separation = non_negative("local.lambda_separation", v)?;
        }
        if let Some(v) = c.occlusion_samples {
            l.occlusion_samples = v.max(1);
        }
        l.validate().map_err(|e| invalid("local", e))
    }

    pub fn experiment(&self) -> Result<ExperimentSettings> {
        let e = &self.experiment;
        let seeds = e.seeds.clone().unwrap_or_else(|| (1..=5).collect());
        if seeds.is_empty() {
            return Err(invalid("experiment.seeds", "needs at least one seed"));
        }
        let noise_levels = e.noise_levels_m.clone().unwrap_or_else(|| NOISE_LEVELS.to_vec());
        for &v in &noise_levels {
            non_negative("experiment.noise_levels_m", v)?;
        }
        let robots = e.robots.clone().unwrap_or_else(|| ROBOT_SWEEP.to_vec());
        if robots.iter().any(|&n| n < 2) {
            return Err(invalid("experiment.robots", "every team needs at least 2 drones"));
        }
        Ok(ExperimentSettings {
            seeds,
            noise_levels,
            tilts_deg: e.tilts_deg.clone().unwrap_or_else(|| TILT_SWEEP_DEG.to_vec()),
            robots,
        })
    }

    /// A config with every key filled in from the resolved scenario and
    /// experiment settings. Loading it reproduces the same run.
    pub fn resolved(&self) -> Result<Config> {
        let s = self.scenario()?;
        let x = self.experiment()?;
        let (kind, origin, voxel_size, dims, boxes, path) = match &s.world {
            WorldSpec::Open => ("open", None, None, None, None, None),
            WorldSpec::Boxes {
                origin,
                voxel_size,
                dims,
                boxes,
            } => ("boxes", Some(*origin), Some(*voxel_size), Some(*dims), Some(boxes.clone()), None),
            WorldSpec::GridFile { path } => ("grid_file", None, None, None, None, Some(path.clone())),
        };
        Ok(Config {
            schema_version: SCHEMA_VERSION,
            scenario: ScenarioSection {
                preset: Some(self.scenario.preset.unwrap_or_default()),
                name: Some(s.name.clone()),
                duration_s: Some(s.duration),
                capture_rate_hz: Some(s.capture_rate),
                central_rate_hz: Some(s.central_rate),
                local_rate_hz: Some(s.local_rate),
                seed: Some(s.seed),
                yaw_mode: Some(s.yaw_mode),
                execution_noise_m: Some(s.execution_noise),
            },
            world: WorldSection {
                kind: Some(kind.into()),
                origin,
                voxel_size,
                dims,
                boxes,
                path,
                occupancy_threshold: Some(s.occupancy_threshold),
            },
            actor: actor_section(&s.actor),
            formation: FormationSection {
                n: Some(s.formation.n),
                rho_m: Some(s.formation.rho_form),
                tilt_deg: Some(s.formation.phi_form.to_degrees()),
                initial_yaw_deg: Some(s.initial_yaw.to_degrees()),
                r_max_m: Some(s.formation.r_max),
                lambda_occlusion: Some(s.formation.lambda_occlusion),
                lambda_obstacle: Some(s.formation.lambda_obstacle),
                lambda_formation: Some(s.formation.lambda_formation),
            },
            planner: PlannerSection {
                horizon_s: Some(s.planner.horizon),
                step_s: Some(s.planner.step),
                yaw_cells: Some(s.planner.disc.yaw_cells),
                tilt_cells: Some(s.planner.disc.tilt_cells),
                range_cells: Some(s.planner.disc.range_cells),
                samples: Some(s.planner.disc.samples),
                tilt_min_deg: Some(s.planner.disc.phi_min.to_degrees()),
                tilt_max_deg: Some(s.planner.disc.phi_max.to_degrees()),
                neighbor_radius: Some(s.planner.neighbor_radius),
                occlusion_samples: Some(s.planner.occlusion_samples),
                target_clearance_m: Some(s.planner.target_clearance),
                lift_step_deg: Some(s.planner.lift_step.to_degrees()),
                max_lift_tilt_deg: Some(s.planner.max_lift_tilt.to_degrees()),
            },
            local: LocalSection {
                dt_s: Some(s.local.dt),
                eta: Some(s.local.eta),
                max_iters: Some(s.local.max_iters),
                max_halvings: Some(s.local.max_halvings),
                rel_tol: Some(s.local.rel_tol),
                clearance_m: Some(s.local.clearance),
                separation_m: Some(s.local.separation),
                lambda_occlusion: Some(s.local.lambda_occlusion),
                lambda_obstacle: Some(s.local.lambda_obstacle),
                lambda_formation: Some(s.local.lambda_formation),
                lambda_separation: Some(s.local.lambda_separation),
                occlusion_samples: Some(s.local.occlusion_samples),
            },
            tracker: TrackerSection {
                accel_sigma: Some(s.tracker.accel_sigma),
                obs_sigma: Some(s.tracker.obs_sigma),
                observation_noise_m: Some(s.tracker.observation_noise),
            },
            camera: CameraSection {
                fx: Some(s.intrinsics.fx),
                fy: Some(s.intrinsics.fy),
                cx: Some(s.intrinsics.cx),
                cy: Some(s.intrinsics.cy),
                width: Some(s.intrinsics.width),
                height: Some(s.intrinsics.height),
            },
            noise: NoiseSection {
                pixel_sigma_px: Some(s.noise.pixel_sigma),
                pose_position_sigma_m: Some(s.noise.pose_position_sigma),
                pose_rotation_sigma_deg: Some(s.noise.pose_rotation_sigma.to_degrees()),
                miss_base_rate: Some(s.noise.miss_base_rate),
                miss_tilt_gain_per_rad: Some(s.noise.miss_tilt_gain),
                swap_rate: Some(s.noise.swap_rate),
                occlusion_threshold: Some(s.noise.occlusion_threshold),
            },
            safety: SafetySection {
                margin_m: Some(s.safety_margin),
            },
            experiment: ExperimentSection {
                seeds: Some(x.seeds),
                noise_levels_m: Some(x.noise_levels),
                tilts_deg: Some(x.tilts_deg),
                robots: Some(x.robots),
            },
        })
    }
}

fn actor_section(a: &ActorSpec) -> ActorSection {
    ActorSection {
        preset: Some(a.preset),
        waypoints: Some(a.waypoints.clone()),
        speed_mps: Some(a.speed),
        closed: Some(a.closed),
        sway_amplitude_m: Some(a.sway_amplitude),
        sway_period_s: Some(a.sway_period),
        jump_interval_s: Some(a.jump_interval),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_open_field_preset() {
        let cfg = Config::from_toml("schema_version = 1\n").unwrap();
        let mut expected = Scenario::open_field();
        expected.noise.rng_seed = expected.seed;
        assert_eq!(cfg.scenario().unwrap(), expected);
    }

    #[test]
    fn degrees_are_converted_once() {
        let cfg = Config::from_toml("schema_version = 1\n[formation]\ntilt_deg = 30.0\ninitial_yaw_deg = 90.0\n").unwrap();
        let s = cfg.scenario().unwrap();
        assert!((s.formation.phi_form - 30f64.to_radians()).abs() < 1e-15);
        assert!((s.initial_yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(Config::from_toml("schema_version = 1\n[formation]\nnn = 3\n").is_err());
        assert!(Config::from_toml("schema_version = 1\nbogus = 3\n").is_err());
        assert!(Config::from_toml("schema_version = 2\n").is_err());
        let err = Config::from_toml("schema_version = 1\n[formation]\nn = 1\n").unwrap().scenario().unwrap_err();
        assert!(err.to_string().contains("formation.n"), "{err}");
        let err = Config::from_toml("schema_version = 1\n[noise]\nswap_rate = 2.0\n").unwrap().scenario().unwrap_err();
        assert!(err.to_string().contains("noise"), "{err}");
        let err = Config::from_toml("schema_version = 1\n[world]\nkind = \"lava\"\n").unwrap().scenario().unwrap_err();
        assert!(err.to_string().contains("world.kind"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = "schema_version = 1\n[scenario]\npreset = \"mound\"\nseed = 9\n[formation]\nn = 3\n[experiment]\nseeds = [4, 5]\n";
        let cfg = Config::from_toml(text).unwrap();
        let resolved = cfg.resolved().unwrap();
        let again = Config::from_toml(&resolved.to_toml()).unwrap();
        assert_eq!(again.scenario().unwrap(), cfg.scenario().unwrap());
        assert_eq!(again.experiment().unwrap(), cfg.experiment().unwrap());
        assert_eq!(again.resolved().unwrap(), resolved);
    }

    #[test]
    fn box_worlds_can_be_declared() {
        let text = r#"
schema_version = 1
[world]
kind = "boxes"
origin = [-10.0, -10.0, 0.0]
voxel_size = 0.5
dims = [40, 40, 20]
boxes = [{ min = [0.0, 0.0, 0.0], max = [1.0, 1.0, 5.0] }]
"#;
        let s = Config::from_toml(text).unwrap().scenario().unwrap();
        let world = s.world.build(s.occupancy_threshold).unwrap();
        assert!(world.grid.occupied_count(0.5) > 0);
    }
}
