//! Synthetic multi-view capture: pinhole projection, a parametric keypoint
//! detector, linear triangulation and reconstruction error.
//!
//! Skeletons use the 17-joint COCO layout:
//!
//! | idx | joint          | idx | joint          |
//! |-----|----------------|-----|----------------|
//! | 0   | nose           | 9   | left wrist     |
//! | 1   | left eye       | 10  | right wrist    |
//! | 2   | right eye      | 11  | left hip       |
//! | 3   | left ear       | 12  | right hip      |
//! | 4   | right ear      | 13  | left knee      |
//! | 5   | left shoulder  | 14  | right knee     |
//! | 6   | right shoulder | 15  | left ankle     |
//! | 7   | left elbow     | 16  | right ankle    |
//! | 8   | right elbow    |     |                |

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Rotation3, Vector4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{segment_occlusion, DEFAULT_OCCLUSION_SAMPLES};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::world::WorldModel;

pub const JOINT_COUNT: usize = 17;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Left/right joint pairs the detector may confuse.
pub const LEFT_RIGHT_PAIRS: [(usize, usize); 8] = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)];

pub const BONES: [(usize, usize); 16] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

/// Pelvis height of the default body above the ground.
pub const PELVIS_HEIGHT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got {} and {}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx <= self.width as f64 && self.cy >= 0.0 && self.cy <= self.height as f64) {
            return Err(Error::InvalidParameter("principal point outside the image".into()));
        }
        Ok(())
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// 3D joint positions of one body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Vec3>,
}

impl Skeleton {
    /// Default body with its pelvis at `root`, facing `heading`, at gait
    /// phase `phase` (radians). Phase 0 is the neutral stance.
    pub fn walking(root: Vec3, heading: f64, phase: f64, swing: f64) -> Self {
        let leg = swing * phase.sin();
        let arm = -0.8 * swing * phase.sin();
        let knee_bend = 0.25 * swing * (phase.cos().max(0.0));
        // body frame: x forward, y left, z up, origin at the pelvis
        let pitch = |a: f64, v: Vec3| Rotation3::from_axis_angle(&Vec3::y_axis(), -a) * v;
        let mut body = vec![Vec3::zeros(); JOINT_COUNT];
        body[0] = Vec3::new(0.10, 0.0, 0.70);
        for (side, s) in [(0usize, 1.0), (1usize, -1.0)] {
            let sway = if side == 0 { 1.0 } else { -1.0 };
            body[1 + side] = Vec3::new(0.08, s * 0.035, 0.74);
            body[3 + side] = Vec3::new(0.0, s * 0.075, 0.72);
            let shoulder = Vec3::new(0.0, s * 0.19, 0.50);
            let elbow = shoulder + pitch(sway * arm, Vec3::new(0.0, s * 0.02, -0.28));
            let wrist = elbow + pitch(sway * arm + 0.2 * swing, Vec3::new(0.0, s * 0.01, -0.25));
            body[5 + side] = shoulder;
            body[7 + side] = elbow;
            body[9 + side] = wrist;
            let hip = Vec3::new(0.0, s * 0.10, 0.0);
            let thigh = sway * leg;
            let knee = hip + pitch(thigh, Vec3::new(0.0, 0.0, -0.47));
            let shin = thigh - if side == 0 { knee_bend } else { 0.25 * swing * (-phase.cos()).max(0.0) };
            body[11 + side] = hip;
            body[13 + side] = knee;
            body[15 + side] = knee + pitch(shin, Vec3::new(0.0, 0.0, -0.45));
        }
        let yaw = Rotation3::from_axis_angle(&Vec3::z_axis(), heading);
        Self {
            joints: body.into_iter().map(|p| root + yaw * p).collect(),
        }
    }

    pub fn standing(root: Vec3, heading: f64) -> Self {
        Self::walking(root, heading, 0.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn bone_lengths(&self) -> Vec<f64> {
        BONES
            .iter()
            .filter(|(a, b)| *a < self.joints.len() && *b < self.joints.len())
            .map(|&(a, b)| (self.joints[a] - self.joints[b]).norm())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDetection {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    pub visible: bool,
}

impl JointDetection {
    const MISSING: Self = Self {
        u: 0.0,
        v: 0.0,
        confidence: 0.0,
        visible: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub joints: Vec<JointDetection>,
}

impl Detection2D {
    pub fn visible_count(&self) -> usize {
        self.joints.iter().filter(|j| j.visible).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub pixel_sigma: f64,
    pub pose_position_sigma: f64,
    pub pose_rotation_sigma: f64,
    pub miss_base_rate: f64,
    pub miss_tilt_gain: f64,
    pub swap_rate: f64,
    pub occlusion_threshold: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pixel_sigma: 2.0,
            pose_position_sigma: 0.0,
            pose_rotation_sigma: 0.0,
            miss_base_rate: 0.02,
            miss_tilt_gain: 0.10,
            swap_rate: 0.05,
            occlusion_threshold: 0.5,
            rng_seed: 0,
        }
    }
}

impl NoiseModel {
    /// No detector noise at all: exact projections, no misses or swaps.
    pub fn noiseless() -> Self {
        Self {
            pixel_sigma: 0.0,
            miss_base_rate: 0.0,
            miss_tilt_gain: 0.0,
            swap_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("pixel_sigma", self.pixel_sigma),
            ("pose_position_sigma", self.pose_position_sigma),
            ("pose_rotation_sigma", self.pose_rotation_sigma),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be a finite non-negative number, got {value}")));
            }
        }
        for (name, value) in [
            ("miss_base_rate", self.miss_base_rate),
            ("miss_tilt_gain", self.miss_tilt_gain),
            ("swap_rate", self.swap_rate),
            ("occlusion_threshold", self.occlusion_threshold),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {value}")));
            }
        }
        Ok(())
    }

    pub fn miss_probability(&self, tilt: f64) -> f64 {
        (self.miss_base_rate + self.miss_tilt_gain * tilt.abs()).clamp(0.0, 1.0)
    }

    pub fn swap_probability(&self, tilt: f64) -> f64 {
        (self.swap_rate * tilt.abs() / (std::f64::consts::PI / 3.0)).clamp(0.0, 1.0)
    }
}

/// Purposes of the independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Detection = 1,
    PoseNoise = 2,
    Execution = 3,
    Actor = 4,
    Tracking = 5,
}

/// Deterministic generator for one (purpose, camera, frame) triple.
pub fn stream_rng(seed: u64, purpose: StreamPurpose, camera: usize, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ ((camera as u64) << 40) ^ frame as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64 },
    BehindCamera,
}

pub fn project(pose: &Pose, intr: &CameraIntrinsics, p: &Vec3) -> Projection {
    let c = pose.world_to_camera() * (p - pose.position);
    if c.z <= 0.0 {
        return Projection::BehindCamera;
    }
    Projection::Pixel {
        u: intr.fx * c.x / c.z + intr.cx,
        v: intr.fy * c.y / c.z + intr.cy,
    }
}

/// Runs the synthetic detector on one view. Every joint consumes the same
/// number of random draws whether or not it ends up visible, so streams
/// stay aligned across scenarios.
pub fn simulate_detections(
    gt: &Skeleton,
    pose: &Pose,
    intr: &CameraIntrinsics,
    world: &WorldModel,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Detection2D {
    let tilt = pose.camera_tilt;
    let p_miss = noise.miss_probability(tilt);
    let mut joints: Vec<JointDetection> = gt
        .joints
        .iter()
        .map(|x| {
            let du: f64 = rng.sample(StandardNormal);
            let dv: f64 = rng.sample(StandardNormal);
            let miss = rng.random::<f64>() < p_miss;
            let Projection::Pixel { u, v } = project(pose, intr, x) else {
                return JointDetection::MISSING;
            };
            if !intr.in_image(u, v) {
                return JointDetection::MISSING;
            }
            let occ = segment_occlusion(&world.grid, &pose.position, x, DEFAULT_OCCLUSION_SAMPLES);
            if occ > noise.occlusion_threshold || miss {
                return JointDetection::MISSING;
            }
            let (u, v) = (u + noise.pixel_sigma * du, v + noise.pixel_sigma * dv);
            if !intr.in_image(u, v) {
                return JointDetection::MISSING;
            }
            JointDetection {
                u,
                v,
                confidence: 1.0 - occ,
                visible: true,
            }
        })
        .collect();
    let p_swap = noise.swap_probability(tilt);
    for &(l, r) in &LEFT_RIGHT_PAIRS {
        let swap = rng.random::<f64>() < p_swap;
        if swap && r < joints.len() {
            joints.swap(l, r);
        }
    }
    Detection2D { joints }
}

/// Adds Gaussian noise to the camera position, heading and tilt.
pub fn perturb_camera_pose(pose: &Pose, noise: &NoiseModel, rng: &mut impl Rng) -> Pose {
    let mut d = [0.0f64; 5];
    for x in &mut d {
        *x = rng.sample(StandardNormal);
    }
    let sp = noise.pose_position_sigma;
    let sr = noise.pose_rotation_sigma;
    Pose::new(
        pose.position + Vec3::new(d[0], d[1], d[2]) * sp,
        pose.psi + sr * d[3],
        pose.camera_tilt + sr * d[4],
    )
}

/// One camera's observation of one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub u: f64,
    pub v: f64,
}

/// Homogeneous DLT triangulation in normalized camera coordinates.
pub fn triangulate(observations: &[Observation]) -> Result<Vec3> {
    let m = observations.len();
    if m < 2 {
        return Err(Error::TooFewViews(m));
    }
    let centroid = observations.iter().map(|o| o.pose.position).sum::<Vec3>() / m as f64;
    let mut rays = Vec::with_capacity(m);
    let mut a = DMatrix::<f64>::zeros(2 * m, 4);
    for (i, o) in observations.iter().enumerate() {
        let r: Matrix3<f64> = o.pose.world_to_camera();
        let x = (o.u - o.intrinsics.cx) / o.intrinsics.fx;
        let y = (o.v - o.intrinsics.cy) / o.intrinsics.fy;
        rays.push((r.transpose() * Vec3::new(x, y, 1.0)).normalize());
        let t = -(r * (o.pose.position - centroid));
        let row = |k: usize| Vector4::new(r[(k, 0)], r[(k, 1)], r[(k, 2)], t[k]);
        let (p1, p2, p3) = (row(0), row(1), row(2));
        let e1 = p3 * x - p1;
        let e2 = p3 * y - p2;
        for c in 0..4 {
            a[(2 * i, c)] = e1[c];
            a[(2 * i + 1, c)] = e2[c];
        }
    }
    let parallel = rays
        .iter()
        .enumerate()
        .all(|(i, di)| rays[i + 1..].iter().all(|dj| di.cross(dj).norm() < 1e-6));
    let spread = observations
        .iter()
        .map(|o| (o.pose.position - centroid).norm())
        .fold(0.0, f64::max);
    if parallel || spread < 1e-9 {
        return Err(Error::DegenerateBaseline);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateBaseline)?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::DegenerateBaseline)?;
    let h = v_t.row(k);
    if h[3].abs() < 1e-12 * h.norm() {
        return Err(Error::DegenerateBaseline);
    }
    Ok(Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]) + centroid)
}

/// One camera's data for one capture frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub camera: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub detection: Detection2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureFrame {
    pub frame: usize,
    pub views: Vec<CameraView>,
}

impl CaptureFrame {
    pub fn timestamp(&self) -> f64 {
        self.views.first().map_or(0.0, |v| v.timestamp)
    }

    fn check_synchronized(&self) -> Result<()> {
        let t = self.timestamp();
        let mut ids: Vec<usize> = self.views.iter().map(|v| v.camera).collect();
        ids.sort_unstable();
        ids.dedup();
        if self.views.iter().any(|v| v.timestamp != t) || ids.len() != self.views.len() {
            return Err(Error::Unsynchronized(self.views.iter().map(|v| v.timestamp).collect()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedFrame {
    pub frame: usize,
    pub timestamp: f64,
    pub joints: Vec<Vec3>,
    /// Joints copied from the previous frame for lack of views.
    pub carried: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    pub frames: Vec<ReconstructedFrame>,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn carried_count(&self) -> usize {
        self.frames.iter().flat_map(|f| &f.carried).filter(|&&c| c).count()
    }

    pub fn joints(&self) -> Vec<Vec<Vec3>> {
        self.frames.iter().map(|f| f.joints.clone()).collect()
    }
}

fn triangulate_frame(frame: &CaptureFrame, joints: usize) -> Vec<Option<Vec3>> {
    (0..joints)
        .map(|j| {
            let obs: Vec<Observation> = frame
                .views
                .iter()
                .filter_map(|view| {
                    let d = view.detection.joints.get(j)?;
                    d.visible.then_some(Observation {
                        pose: view.pose,
                        intrinsics: view.intrinsics,
                        u: d.u,
                        v: d.v,
                    })
                })
                .collect();
            triangulate(&obs).ok()
        })
        .collect()
}

/// Triangulates every frame; joints seen by fewer than two cameras (or
/// with degenerate geometry) repeat their previous value and are flagged.
pub fn reconstruct_sequence(frames: &[CaptureFrame]) -> Result<SkeletonSequence> {
    for f in frames {
        f.check_synchronized()?;
    }
    let joints = frames
        .iter()
        .flat_map(|f| f.views.iter().map(|v| v.detection.joints.len()))
        .max()
        .unwrap_or(0);
    let raw: Vec<Vec<Option<Vec3>>> = frames.par_iter().map(|f| triangulate_frame(f, joints)).collect();
    let mut out = Vec::with_capacity(frames.len());
    let mut prev: Option<Vec<Vec3>> = None;
    for (f, row) in frames.iter().zip(raw) {
        let fallback = match &prev {
            Some(p) => p.clone(),
            None => {
                let found: Vec<Vec3> = row.iter().flatten().copied().collect();
                let mean = if found.is_empty() {
                    Vec3::zeros()
                } else {
                    found.iter().sum::<Vec3>() / found.len() as f64
                };
                vec![mean; joints]
            }
        };
        let carried: Vec<bool> = row.iter().map(Option::is_none).collect();
        let pts: Vec<Vec3> = row.iter().zip(&fallback).map(|(r, fb)| r.unwrap_or(*fb)).collect();
        prev = Some(pts.clone());
        out.push(ReconstructedFrame {
            frame: f.frame,
            timestamp: f.timestamp(),
            joints: pts,
            carried,
        });
    }
    Ok(SkeletonSequence { frames: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconError {
    /// Sum over frames of squared joint-matrix Frobenius distances.
    pub total: f64,
    pub per_frame_mpjpe: Vec<f64>,
    pub mean_mpjpe: f64,
}

pub fn recon_error(est: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<ReconError> {
    if est.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimated frames for {} ground-truth frames",
            est.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    let mut per_frame = Vec::with_capacity(est.len());
    for (t, (e, g)) in est.iter().zip(gt).enumerate() {
        if e.len() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "frame {t}: {} estimated joints for {} ground-truth joints",
                e.len(),
                g.len()
            )));
        }
        let mut sq = 0.0;
        let mut dist = 0.0;
        for (a, b) in e.iter().zip(g) {
            let d = (a - b).norm_squared();
            sq += d;
            dist += d.sqrt();
        }
        total += sq;
        per_frame.push(if e.is_empty() { 0.0 } else { dist / e.len() as f64 });
    }
    let mean_mpjpe = if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().sum::<f64>() / per_frame.len() as f64
    };
    Ok(ReconError {
        total,
        per_frame_mpjpe: per_frame,
        mean_mpjpe,
    })
}

/// One line of the capture log: a single camera's view of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub frame: usize,
    pub timestamp: f64,
    pub camera: usize,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub joints: Vec<JointDetection>,
}

pub fn capture_records(frames: &[CaptureFrame]) -> Vec<CaptureRecord> {
    frames
        .iter()
        .flat_map(|f| {
            f.views.iter().map(|v| CaptureRecord {
                frame: f.frame,
                timestamp: v.timestamp,
                camera: v.camera,
                pose: v.pose,
                intrinsics: v.intrinsics,
                joints: v.detection.joints.clone(),
            })
        })
        .collect()
}

/// Groups records by frame index, keeping file order within a frame.
pub fn frames_from_records(records: Vec<CaptureRecord>) -> Vec<CaptureFrame> {
    let mut by_frame: BTreeMap<usize, Vec<CameraView>> = BTreeMap::new();
    for r in records {
        by_frame.entry(r.frame).or_default().push(CameraView {
            camera: r.camera,
            timestamp: r.timestamp,
            pose: r.pose,
            intrinsics: r.intrinsics,
            detection: Detection2D { joints: r.joints },
        });
    }
    by_frame
        .into_iter()
        .map(|(frame, views)| CaptureFrame { frame, views })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Ground-truth line of `ground_truth.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub frame: usize,
    pub timestamp: f64,
    pub joints: Vec<Vec3>,
}
