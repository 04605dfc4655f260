//! Closed-loop scenario engine and the experiment sweeps.
//!
//! A run has two stages. The flight closes the loop track → plan → refine
//! → execute at the configured rates and records the drone poses. The
//! capture stage then runs the synthetic detector on every frame and
//! reconstructs offline. Sweeps fly once per cell and seed and reuse the
//! flight for every noise level.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{
    perturb_camera_pose, reconstruct_sequence, recon_error, simulate_detections, stream_rng, CameraIntrinsics,
    CameraView, CaptureFrame, NoiseModel, ReconError, Skeleton, SkeletonSequence, StreamPurpose, PELVIS_HEIGHT,
};
use crate::costs::FormationSpec;
use crate::error::{Error, Result};
use crate::forecast::{ActorTracker, DEFAULT_ACCEL_SIGMA, DEFAULT_OBS_SIGMA};
use crate::formation::{plan, plan_fixed_yaw, FormationPlan, PlannerParams};
use crate::geometry::{wrap_angle, Pose, Vec3};
use crate::local_planner::{refine, upsample_plan, FineTrajectory, LocalParams};
use crate::world::{OccupancyGrid, WorldModel, DEFAULT_OCCUPANCY_THRESHOLD};

/// Axis-aligned obstacle block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    #[serde(default = "one")]
    pub occupancy: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldSpec {
    /// No obstacles anywhere.
    Open,
    Boxes {
        origin: [f64; 3],
        voxel_size: f64,
        dims: [usize; 3],
        boxes: Vec<BoxSpec>,
    },
    GridFile {
        path: PathBuf,
    },
}

impl WorldSpec {
    pub fn build(&self, occupancy_threshold: f64) -> Result<WorldModel> {
        match self {
            WorldSpec::Open => Ok(WorldModel::empty()),
            WorldSpec::Boxes {
                origin,
                voxel_size,
                dims,
                boxes,
            } => {
                let mut g = OccupancyGrid::new(Vec3::from(*origin), *voxel_size, *dims)?;
                for b in boxes {
                    if !(0.0..=1.0).contains(&b.occupancy) {
                        return Err(Error::InvalidParameter(format!(
                            "box occupancy must lie in [0, 1], got {}",
                            b.occupancy
                        )));
                    }
                    g.add_box(Vec3::from(b.min), Vec3::from(b.max), b.occupancy);
                }
                WorldModel::new(g, occupancy_threshold)
            }
            WorldSpec::GridFile { path } => WorldModel::new(OccupancyGrid::load(path)?, occupancy_threshold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorPreset {
    /// Piecewise-linear waypoint follower.
    Walker,
    /// Walker with random velocity jumps inside the waypoints' bounding box.
    Soccer,
    /// Stands at the first waypoint.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub preset: ActorPreset,
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    /// Loop back to the first waypoint after the last one.
    pub closed: bool,
    pub sway_amplitude: f64,
    pub sway_period: f64,
    pub jump_interval: f64,
}

impl Default for ActorSpec {
    fn default() -> Self {
        Self {
            preset: ActorPreset::Walker,
            waypoints: vec![[-10.0, -6.0], [10.0, -6.0], [10.0, 6.0], [-10.0, 6.0]],
            speed: 1.5,
            closed: true,
            sway_amplitude: 0.0,
            sway_period: 4.0,
            jump_interval: 3.0,
        }
    }
}

impl ActorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidParameter("actor needs at least one waypoint".into()));
        }
        if !(self.speed >= 0.0) || !(self.sway_period > 0.0) || !(self.jump_interval > 0.0) {
            return Err(Error::InvalidParameter(
                "actor speed must be non-negative and periods positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ground-truth actor state at one capture frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorSample {
    pub t: f64,
    pub root: Vec3,
    pub heading: f64,
    pub phase: f64,
}

const STRIDE: f64 = 1.4;
const ARM_LEG_SWING: f64 = 0.4;

fn polyline_point(points: &[Vec3], closed: bool, s: f64) -> (Vec3, Vec3) {
    if points.len() == 1 {
        return (points[0], Vec3::x());
    }
    let mut segs: Vec<(Vec3, Vec3)> = points.windows(2).map(|w| (w[0], w[1])).collect();
    if closed {
        segs.push((points[points.len() - 1], points[0]));
    }
    let total: f64 = segs.iter().map(|(a, b)| (b - a).norm()).sum();
    if total == 0.0 {
        return (points[0], Vec3::x());
    }
    let mut s = if closed { s.rem_euclid(total) } else { s.clamp(0.0, total) };
    for (a, b) in &segs {
        let len = (b - a).norm();
        if s <= len && len > 0.0 {
            let dir = (b - a) / len;
            return (a + dir * s, dir);
        }
        s -= len;
    }
    let (a, b) = segs[segs.len() - 1];
    (b, (b - a).normalize())
}

/// Ground-truth actor motion sampled at `t_k = k·dt`.
pub fn actor_motion(spec: &ActorSpec, frames: usize, dt: f64, seed: u64) -> Result<Vec<ActorSample>> {
    spec.validate()?;
    let pts: Vec<Vec3> = spec.waypoints.iter().map(|w| Vec3::new(w[0], w[1], PELVIS_HEIGHT)).collect();
    let mut out = Vec::with_capacity(frames);
    match spec.preset {
        ActorPreset::Static => {
            for k in 0..frames {
                out.push(ActorSample {
                    t: k as f64 * dt,
                    root: pts[0],
                    heading: 0.0,
                    phase: 0.0,
                });
            }
        }
        ActorPreset::Walker => {
            for k in 0..frames {
                let t = k as f64 * dt;
                let (p, dir) = polyline_point(&pts, spec.closed, spec.speed * t);
                let lateral = Vec3::new(-dir.y, dir.x, 0.0);
                let sway = spec.sway_amplitude * (2.0 * PI * t / spec.sway_period).sin();
                out.push(ActorSample {
                    t,
                    root: p + lateral * sway,
                    heading: dir.y.atan2(dir.x),
                    phase: 2.0 * PI * spec.speed * t / STRIDE,
                });
            }
        }
        ActorPreset::Soccer => {
            let (lo, hi) = pts.iter().fold((pts[0], pts[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
            let mut rng = stream_rng(seed, StreamPurpose::Actor, 0, 0);
            let mut pos = pts[0];
            let mut heading = 0.0f64;
            let mut speed = spec.speed;
            let mut next_jump = 0.0;
            let mut walked = 0.0;
            for k in 0..frames {
                let t = k as f64 * dt;
                if t >= next_jump {
                    heading = rng.random_range(-PI..PI);
                    speed = spec.speed * rng.random_range(0.5..1.5);
                    next_jump += spec.jump_interval;
                }
                out.push(ActorSample {
                    t,
                    root: pos,
                    heading,
                    phase: 2.0 * PI * walked / STRIDE,
                });
                let mut next = pos + Vec3::new(heading.cos(), heading.sin(), 0.0) * speed * dt;
                for a in 0..2 {
                    if next[a] < lo[a] || next[a] > hi[a] {
                        heading = if a == 0 { PI - heading } else { -heading };
                        next[a] = next[a].clamp(lo[a], hi[a]);
                    }
                }
                walked += (next - pos).norm();
                pos = next;
            }
        }
    }
    Ok(out)
}

impl ActorSample {
    pub fn skeleton(&self, moving: bool) -> Skeleton {
        Skeleton::walking(self.root, self.heading, self.phase, if moving { ARM_LEG_SWING } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawMode {
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    pub accel_sigma: f64,
    pub obs_sigma: f64,
    /// Std of the Gaussian noise added to the actor position the tracker
    /// receives.
    pub observation_noise: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            accel_sigma: DEFAULT_ACCEL_SIGMA,
            obs_sigma: DEFAULT_OBS_SIGMA,
            observation_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub world: WorldSpec,
    pub occupancy_threshold: f64,
    pub actor: ActorSpec,
    pub formation: FormationSpec,
    pub initial_yaw: f64,
    pub yaw_mode: YawMode,
    pub planner: PlannerParams,
    pub local: LocalParams,
    pub tracker: TrackerParams,
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseModel,
    pub duration: f64,
    pub capture_rate: f64,
    pub central_rate: f64,
    pub local_rate: f64,
    pub safety_margin: f64,
    pub execution_noise: f64,
    pub seed: u64,
}

impl Scenario {
    /// Open field, actor walking a 20 m × 12 m loop, two drones at 10 m
    /// and 15° tilt, 75 s at 10 Hz.
    pub fn open_field() -> Self {
        Self {
            name: "open_field".into(),
            world: WorldSpec::Open,
            occupancy_threshold: DEFAULT_OCCUPANCY_THRESHOLD,
            actor: ActorSpec::default(),
            formation: FormationSpec::new(2, 10.0, 15f64.to_radians()).expect("static formation is valid"),
            initial_yaw: 0.0,
            yaw_mode: YawMode::Adaptive,
            planner: PlannerParams::default(),
            local: LocalParams::default(),
            tracker: TrackerParams::default(),
            intrinsics: CameraIntrinsics::default(),
            noise: NoiseModel::default(),
            duration: 75.0,
            capture_rate: 10.0,
            central_rate: 10.0,
            local_rate: 5.0,
            safety_margin: 1.0,
            execution_noise: 0.0,
            seed: 0,
        }
    }

    /// Actor walking straight past a 6 m high mound that sits where the
    /// second drone of the default formation would fly.
    pub fn mound() -> Self {
        Self {
            name: "mound".into(),
            world: WorldSpec::Boxes {
                origin: [-30.0, -20.0, 0.0],
                voxel_size: 0.5,
                dims: [120, 80, 40],
                boxes: vec![BoxSpec {
                    min: [-8.0, 6.0, 0.0],
                    max: [8.0, 18.0, 6.0],
                    occupancy: 1.0,
                }],
            },
            actor: ActorSpec {
                waypoints: vec![[-22.0, 0.0], [22.0, 0.0]],
                closed: false,
                ..ActorSpec::default()
            },
            duration: 28.0,
            ..Self::open_field()
        }
    }

    /// Actor walking past a row of tree trunks on the formation's side.
    pub fn trees() -> Self {
        let trunk = |x: f64, y: f64| BoxSpec {
            min: [x - 0.75, y - 0.75, 0.0],
            max: [x + 0.75, y + 0.75, 14.0],
            occupancy: 1.0,
        };
        Self {
            name: "trees".into(),
            world: WorldSpec::Boxes {
                origin: [-30.0, -20.0, 0.0],
                voxel_size: 0.5,
                dims: [120, 80, 32],
                boxes: (-3..=3).map(|i| trunk(4.0 * i as f64, 9.5)).collect(),
            },
            actor: ActorSpec {
                waypoints: vec![[-22.0, 0.0], [22.0, 0.0]],
                closed: false,
                ..ActorSpec::default()
            },
            duration: 28.0,
            ..Self::open_field()
        }
    }

    pub fn frames(&self) -> usize {
        (self.duration * self.capture_rate).round() as usize
    }

    fn every(&self, rate: f64) -> usize {
        ((self.capture_rate / rate).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("duration", self.duration),
            ("capture_rate", self.capture_rate),
            ("central_rate", self.central_rate),
            ("local_rate", self.local_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.safety_margin >= 0.0) || !(self.execution_noise >= 0.0) {
            return Err(Error::InvalidParameter(
                "safety margin and execution noise must be non-negative".into(),
            ));
        }
        self.actor.validate()?;
        self.local.validate()?;
        self.noise.validate()?;
        self.intrinsics.validate()?;
        self.planner.disc.validate()?;
        Ok(())
    }
}

/// Everything recorded for one frame of flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightFrame {
    pub frame: usize,
    pub t: f64,
    pub actor: ActorSample,
    pub skeleton: Skeleton,
    pub poses: Vec<Pose>,
    pub formation_yaw: f64,
    /// First yaw cell of the most recent central plan.
    pub planned_cell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flight {
    pub frames: Vec<FlightFrame>,
    pub min_clearance: f64,
    pub degraded_refines: usize,
}

impl Flight {
    /// Tilt of every executed camera, in radians.
    pub fn tilts(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().flat_map(|f| f.poses.iter().map(|p| p.camera_tilt))
    }

    pub fn mean_tilt(&self) -> f64 {
        let (s, n) = self.tilts().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    pub fn max_tilt(&self) -> f64 {
        self.tilts().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn planned_cells(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.planned_cell).collect()
    }
}

fn central_plan(s: &Scenario, world: &WorldModel, tracker: &ActorTracker, yaw: f64, t: f64) -> Result<FormationPlan> {
    let state = tracker
        .state()
        .ok_or_else(|| Error::InvalidParameter("tracker has no state".into()))?;
    match s.yaw_mode {
        YawMode::Adaptive => plan(world, state, &s.formation, yaw, t, &s.planner),
        YawMode::Fixed => plan_fixed_yaw(world, state, &s.formation, yaw, t, &s.planner),
    }
}

fn resample(traj: &FineTrajectory, timestamps: &[f64]) -> Result<FineTrajectory> {
    FineTrajectory::new(timestamps.to_vec(), timestamps.iter().map(|&t| traj.position_at(t)).collect())
}

/// Closed-loop flight: tracking, central planning, local refinement and
/// execution. Aborts with [`Error::SafetyViolation`] when an executed
/// position comes closer than the safety margin to an obstacle.
pub fn fly(s: &Scenario, world: &WorldModel) -> Result<Flight> {
    s.validate()?;
    let n = s.formation.n;
    let frames = s.frames();
    let dt = 1.0 / s.capture_rate;
    let central_every = s.every(s.central_rate);
    let local_every = s.every(s.local_rate);
    let actor = actor_motion(&s.actor, frames, dt, s.seed)?;
    let moving = s.actor.preset != ActorPreset::Static && s.actor.speed > 0.0;

    let mut tracker = ActorTracker::new(s.tracker.accel_sigma, s.tracker.obs_sigma);
    let mut yaw = s.initial_yaw;
    let mut current: Option<FormationPlan> = None;
    let mut refined: Vec<Option<FineTrajectory>> = vec![None; n];
    let mut positions: Vec<Vec3> = Vec::new();
    let mut out = Vec::with_capacity(frames);
    let mut min_clearance = f64::INFINITY;
    let mut degraded = 0;

    for (k, sample) in actor.iter().enumerate() {
        let t = sample.t;
        let mut obs = sample.root;
        if s.tracker.observation_noise > 0.0 {
            let mut rng = stream_rng(s.seed, StreamPurpose::Tracking, 0, k);
            for a in 0..3 {
                obs[a] += s.tracker.observation_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        tracker.observe(t, &obs)?;

        if k % central_every == 0 || current.is_none() {
            let p = central_plan(s, world, &tracker, yaw, t)?;
            if positions.is_empty() {
                positions = p.targets.waypoints.iter().map(|w| w[0]).collect();
            }
            current = Some(p);
        }
        let plan_now = current.as_ref().expect("plan computed above");

        if k % local_every == 0 {
            for i in 0..n {
                let target = upsample_plan(plan_now, i, s.local.dt)?;
                let init = match &refined[i] {
                    Some(prev) => resample(prev, &target.timestamps)?,
                    None => target.clone().with_start(positions[i]),
                };
                let peers = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| match &refined[j] {
                        Some(r) => resample(r, &target.timestamps),
                        None => upsample_plan(plan_now, j, s.local.dt),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let r = refine(&init, world, &plan_now.actor_path, &target, &peers, &s.local)?;
                degraded += usize::from(r.degraded);
                refined[i] = Some(r.trajectory);
            }
        }

        for (i, pos) in positions.iter_mut().enumerate() {
            let traj = refined[i].as_ref().expect("refined at frame 0");
            let mut p = traj.position_at(t);
            if s.execution_noise > 0.0 {
                let mut rng = stream_rng(s.seed, StreamPurpose::Execution, i, k);
                for a in 0..3 {
                    p[a] += s.execution_noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let clearance = world.clearance(&p);
            min_clearance = min_clearance.min(clearance);
            if clearance < s.safety_margin {
                return Err(Error::SafetyViolation {
                    frame: k,
                    drone: i,
                    clearance,
                });
            }
            *pos = p;
        }

        out.push(FlightFrame {
            frame: k,
            t,
            actor: *sample,
            skeleton: sample.skeleton(moving),
            poses: positions.iter().map(|p| Pose::looking_at(*p, &sample.root)).collect(),
            formation_yaw: yaw,
            planned_cell: plan_now.cells.first().copied().unwrap_or(plan_now.start_cell),
        });

        if s.yaw_mode == YawMode::Adaptive {
            let goal = plan_now.theta_sequence.get(1).copied().unwrap_or(yaw);
            let frac = (dt / s.planner.step).min(1.0);
            yaw = wrap_angle(yaw + wrap_angle(goal - yaw) * frac);
        }
    }
    Ok(Flight {
        frames: out,
        min_clearance,
        degraded_refines: degraded,
    })
}

/// One planning cycle at the start of the scenario: the tracker sees the
/// first two actor samples, then the central plan and one round of local
/// refinement run from the planned start positions.
pub fn plan_once(s: &Scenario, world: &WorldModel) -> Result<(FormationPlan, Vec<FineTrajectory>)> {
    s.validate()?;
    let dt = 1.0 / s.capture_rate;
    let actor = actor_motion(&s.actor, s.frames().clamp(1, 2), dt, s.seed)?;
    let mut tracker = ActorTracker::new(s.tracker.accel_sigma, s.tracker.obs_sigma);
    for sample in &actor {
        tracker.observe(sample.t, &sample.root)?;
    }
    let t = actor.last().map_or(0.0, |a| a.t);
    let p = central_plan(s, world, &tracker, s.initial_yaw, t)?;
    let n = s.formation.n;
    let targets = (0..n)
        .map(|i| upsample_plan(&p, i, s.local.dt))
        .collect::<Result<Vec<_>>>()?;
    let mut refined: Vec<FineTrajectory> = targets.clone();
    for i in 0..n {
        let peers: Vec<FineTrajectory> = (0..n).filter(|&j| j != i).map(|j| refined[j].clone()).collect();
        let r = refine(&targets[i], world, &p.actor_path, &targets[i], &peers, &s.local)?;
        refined[i] = r.trajectory;
    }
    Ok((p, refined))
}

/// Runs the detector for every camera of every frame. Detections come from
/// the true poses; the recorded poses carry the pose noise.
pub fn capture_flight(flight: &Flight, world: &WorldModel, intrinsics: &CameraIntrinsics, noise: &NoiseModel) -> Vec<CaptureFrame> {
    flight
        .frames
        .par_iter()
        .map(|f| CaptureFrame {
            frame: f.frame,
            views: f
                .poses
                .iter()
                .enumerate()
                .map(|(c, pose)| {
                    let mut det_rng = stream_rng(noise.rng_seed, StreamPurpose::Detection, c, f.frame);
                    let detection = simulate_detections(&f.skeleton, pose, intrinsics, world, noise, &mut det_rng);
                    let mut pose_rng = stream_rng(noise.rng_seed, StreamPurpose::PoseNoise, c, f.frame);
                    CameraView {
                        camera: c,
                        timestamp: f.t,
                        pose: perturb_camera_pose(pose, noise, &mut pose_rng),
                        intrinsics: *intrinsics,
                        detection,
                    }
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureResult {
    pub capture: Vec<CaptureFrame>,
    pub reconstruction: SkeletonSequence,
    pub error: ReconError,
}

pub fn capture_and_reconstruct(
    flight: &Flight,
    world: &WorldModel,
    intrinsics: &CameraIntrinsics,
    noise: &NoiseModel,
) -> Result<CaptureResult> {
    let capture = capture_flight(flight, world, intrinsics, noise);
    let reconstruction = reconstruct_sequence(&capture)?;
    let gt: Vec<Vec<Vec3>> = flight.frames.iter().map(|f| f.skeleton.joints.clone()).collect();
    let error = recon_error(&reconstruction.joints(), &gt)?;
    Ok(CaptureResult {
        capture,
        reconstruction,
        error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub flight: Flight,
    pub result: CaptureResult,
}

pub fn run_scenario(s: &Scenario) -> Result<RunTrace> {
    let world = s.world.build(s.occupancy_threshold)?;
    let flight = fly(s, &world)?;
    let result = capture_and_reconstruct(&flight, &world, &s.intrinsics, &s.noise)?;
    Ok(RunTrace { flight, result })
}

/// One (cell, noise level, seed) sample of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub total_e_recon: f64,
    pub mean_mpjpe: f64,
    pub mean_tilt_deg: f64,
    pub min_clearance: f64,
}

/// Mean and sample std of the per-seed MPJPE for one (cell, noise level).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub param: f64,
    pub noise_sigma: f64,
    pub mean_mpjpe: f64,
    pub std_mpjpe: f64,
    pub mean_e_recon: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, param: f64, noise_sigma: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.param == param && c.noise_sigma == noise_sigma)
    }
}

fn summarize(rows: Vec<SweepRow>, params: &[f64], noise_levels: &[f64]) -> SweepResult {
    let mut cells = Vec::new();
    for &p in params {
        for &sigma in noise_levels {
            let xs: Vec<&SweepRow> = rows.iter().filter(|r| r.param == p && r.noise_sigma == sigma).collect();
            let m = xs.len() as f64;
            let mean = xs.iter().map(|r| r.mean_mpjpe).sum::<f64>() / m;
            let var = if xs.len() > 1 {
                xs.iter().map(|r| (r.mean_mpjpe - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            cells.push(SweepCell {
                param: p,
                noise_sigma: sigma,
                mean_mpjpe: mean,
                std_mpjpe: var.sqrt(),
                mean_e_recon: xs.iter().map(|r| r.total_e_recon).sum::<f64>() / m,
                seeds: xs.len(),
            });
        }
    }
    SweepResult { rows, cells }
}

fn sweep(
    base: &Scenario,
    params: &[f64],
    noise_levels: &[f64],
    seeds: &[u64],
    configure: impl Fn(&Scenario, f64) -> Result<Scenario> + Sync,
) -> Result<SweepResult> {
    let world = base.world.build(base.occupancy_threshold)?;
    let jobs: Vec<(f64, u64)> = params.iter().flat_map(|&p| seeds.iter().map(move |&s| (p, s))).collect();
    let rows: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let mut s = configure(base, p)?;
            s.seed = seed;
            let flight = fly(&s, &world)?;
            let tilt = flight.mean_tilt().to_degrees();
            noise_levels
                .iter()
                .map(|&sigma| {
                    let noise = NoiseModel {
                        pose_position_sigma: sigma,
                        rng_seed: seed,
                        ..s.noise
                    };
                    let r = capture_and_reconstruct(&flight, &world, &s.intrinsics, &noise)?;
                    Ok(SweepRow {
                        param: p,
                        noise_sigma: sigma,
                        seed,
                        total_e_recon: r.error.total,
                        mean_mpjpe: r.error.mean_mpjpe,
                        mean_tilt_deg: tilt,
                        min_clearance: flight.min_clearance,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(summarize(rows.into_iter().flatten().collect(), params, noise_levels))
}

pub const TILT_SWEEP_DEG: [f64; 5] = [0.0, 15.0, 30.0, 45.0, 60.0];
pub const ROBOT_SWEEP: [usize; 4] = [2, 3, 4, 5];
pub const NOISE_LEVELS: [f64; 4] = [0.0, 0.1, 0.25, 0.5];

/// Formation tilt sweep; `param` of every row is the tilt in degrees.
pub fn experiment_tilt_sweep(base: &Scenario, tilts_deg: &[f64], noise_levels: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    sweep(base, tilts_deg, noise_levels, seeds, |b, tilt| {
        let mut s = b.clone();
        s.formation.phi_form = tilt.to_radians();
        Ok(s)
    })
}

/// Team size sweep at the base tilt; `param` is the drone count.
pub fn experiment_robot_sweep(base: &Scenario, ns: &[usize], noise_levels: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    let params: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    sweep(base, &params, noise_levels, seeds, |b, n| {
        let mut s = b.clone();
        let f = &b.formation;
        s.formation = FormationSpec::new(n as usize, f.rho_form, f.phi_form)?
            .with_weights(f.lambda_occlusion, f.lambda_obstacle, f.lambda_formation)?
            .with_r_max(f.r_max)?;
        Ok(s)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub total_e_recon: f64,
    pub mean_mpjpe: f64,
    pub mean_tilt_deg: f64,
    pub max_tilt_deg: f64,
    pub min_clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedVsAdaptive {
    pub seeds: Vec<u64>,
    pub adaptive: ModeResult,
    pub fixed: ModeResult,
}

/// Same scenario flown with adaptive yaw and with the yaw frozen at its
/// initial value; results are averaged over `seeds`.
pub fn run_fixed_vs_adaptive(base: &Scenario, seeds: &[u64]) -> Result<FixedVsAdaptive> {
    let world = base.world.build(base.occupancy_threshold)?;
    let run = |mode: YawMode| -> Result<ModeResult> {
        let per_seed: Vec<ModeResult> = seeds
            .par_iter()
            .map(|&seed| {
                let mut s = base.clone();
                s.yaw_mode = mode;
                s.seed = seed;
                s.noise.rng_seed = seed;
                let flight = fly(&s, &world)?;
                let r = capture_and_reconstruct(&flight, &world, &s.intrinsics, &s.noise)?;
                Ok(ModeResult {
                    total_e_recon: r.error.total,
                    mean_mpjpe: r.error.mean_mpjpe,
                    mean_tilt_deg: flight.mean_tilt().to_degrees(),
                    max_tilt_deg: flight.max_tilt().to_degrees(),
                    min_clearance: flight.min_clearance,
                })
            })
            .collect::<Result<_>>()?;
        let m = per_seed.len().max(1) as f64;
        Ok(ModeResult {
            total_e_recon: per_seed.iter().map(|r| r.total_e_recon).sum::<f64>() / m,
            mean_mpjpe: per_seed.iter().map(|r| r.mean_mpjpe).sum::<f64>() / m,
            mean_tilt_deg: per_seed.iter().map(|r| r.mean_tilt_deg).sum::<f64>() / m,
            max_tilt_deg: per_seed.iter().map(|r| r.max_tilt_deg).fold(f64::NEG_INFINITY, f64::max),
            min_clearance: per_seed.iter().map(|r| r.min_clearance).fold(f64::INFINITY, f64::min),
        })
    };
    Ok(FixedVsAdaptive {
        seeds: seeds.to_vec(),
        adaptive: run(YawMode::Adaptive)?,
        fixed: run(YawMode::Fixed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn short(mut s: Scenario, duration: f64) -> Scenario {
        s.duration = duration;
        s
    }

    #[test]
    fn walker_follows_the_loop() {
        let spec = ActorSpec::default();
        let m = actor_motion(&spec, 200, 0.1, 0).unwrap();
        assert_eq!(m.len(), 200);
        assert_abs_diff_eq!(m[0].root, Vec3::new(-10.0, -6.0, PELVIS_HEIGHT), epsilon = 1e-12);
        // 15 m along the first edge after 10 s
        assert_abs_diff_eq!(m[100].root, Vec3::new(5.0, -6.0, PELVIS_HEIGHT), epsilon = 1e-9);
        for w in m.windows(2) {
            assert!((w[1].root - w[0].root).norm() <= 0.15 + 1e-9);
        }
        let looped = actor_motion(&spec, 1000, 0.1, 0).unwrap();
        // perimeter 64 m, back at the start after 64/1.5 s
        let k = (64.0 / 1.5 / 0.1f64).round() as usize;
        assert!((looped[k].root - looped[0].root).norm() < 0.2);
    }

    #[test]
    fn soccer_actor_stays_in_bounds_and_is_seeded() {
        let spec = ActorSpec {
            preset: ActorPreset::Soccer,
            ..ActorSpec::default()
        };
        let a = actor_motion(&spec, 500, 0.1, 3).unwrap();
        let b = actor_motion(&spec, 500, 0.1, 3).unwrap();
        let c = actor_motion(&spec, 500, 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|s| s.root.x.abs() <= 10.0 + 1e-9 && s.root.y.abs() <= 6.0 + 1e-9));
    }

    #[test]
    fn static_actor_free_world_is_near_exact() {
        let mut s = short(Scenario::open_field(), 10.0);
        s.actor.preset = ActorPreset::Static;
        s.noise = NoiseModel::noiseless();
        let r = run_scenario(&s).unwrap();
        assert_eq!(r.flight.frames.len(), 100);
        assert!(r.result.error.mean_mpjpe < 0.05, "mpjpe {}", r.result.error.mean_mpjpe);
        let tilt = r.flight.mean_tilt().to_degrees();
        assert!((tilt - 15.0).abs() < 2.0, "tilt {tilt}");
    }

    #[test]
    fn runs_are_deterministic() {
        let s = short(Scenario::open_field(), 6.0);
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pose_noise_does_not_touch_planning() {
        let s = short(Scenario::open_field(), 4.0);
        let world = s.world.build(0.5).unwrap();
        let mut noisy = s.clone();
        noisy.noise.pose_position_sigma = 0.5;
        assert_eq!(fly(&s, &world).unwrap(), fly(&noisy, &world).unwrap());
    }

    #[test]
    fn formation_rotates_past_trees() {
        let s = Scenario::trees();
        let world = s.world.build(0.5).unwrap();
        let flight = fly(&s, &world).unwrap();
        let cells = flight.planned_cells();
        let first = cells[0];
        assert!(cells.iter().any(|&c| c != first), "yaw never changed: {cells:?}");
        assert!(flight.min_clearance >= s.safety_margin);
    }

    #[test]
    fn safety_violation_aborts() {
        let mut s = short(Scenario::mound(), 12.0);
        s.yaw_mode = YawMode::Fixed;
        s.safety_margin = 50.0;
        let world = s.world.build(0.5).unwrap();
        assert!(matches!(fly(&s, &world), Err(Error::SafetyViolation { frame: 0, .. })));
    }

    #[test]
    fn scenario_validation() {
        let mut s = Scenario::open_field();
        s.duration = 0.0;
        assert!(s.validate().is_err());
        let mut s = Scenario::open_field();
        s.actor.waypoints.clear();
        assert!(s.validate().is_err());
        assert_eq!(Scenario::open_field().frames(), 750);
    }
}
