//! Per-drone trajectory refinement by covariant gradient descent.
//!
//! Each drone refines its own fine trajectory against the formation target,
//! the world and the latest trajectories received from its peers. The
//! first waypoint is the drone's current position and is never moved.

use nalgebra::{DMatrix, Dyn, Cholesky};
use serde::{Deserialize, Serialize};

use crate::costs::{
    path_smoothness, segment_occlusion, segment_occlusion_with_gradient, DEFAULT_LAMBDA_FORMATION,
    DEFAULT_LAMBDA_OBSTACLE, DEFAULT_LAMBDA_OCCLUSION, DEFAULT_OCCLUSION_SAMPLES,
};
use crate::error::{Error, Result};
use crate::forecast::{horizon_steps, interpolate_track, ActorPath};
use crate::formation::FormationPlan;
use crate::geometry::{Pose, Vec3};
use crate::world::WorldModel;

pub const DEFAULT_FINE_STEP: f64 = 0.5;

/// Waypoints on a uniform fine time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTrajectory {
    pub timestamps: Vec<f64>,
    pub waypoints: Vec<Vec3>,
}

impl FineTrajectory {
    pub fn new(timestamps: Vec<f64>, waypoints: Vec<Vec3>) -> Result<Self> {
        if timestamps.len() != waypoints.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} timestamps for {} waypoints",
                timestamps.len(),
                waypoints.len()
            )));
        }
        if timestamps.len() < 2 {
            return Err(Error::InvalidParameter("fine trajectory needs at least two points".into()));
        }
        let dt = timestamps[1] - timestamps[0];
        if !(dt > 0.0) {
            return Err(Error::NonPositiveTimeStep(dt));
        }
        if timestamps.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
            return Err(Error::InvalidParameter("fine timestamps must be uniform".into()));
        }
        Ok(Self { timestamps, waypoints })
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.timestamps[1] - self.timestamps[0]
    }

    pub fn position_at(&self, t: f64) -> Vec3 {
        interpolate_track(&self.timestamps, &self.waypoints, t)
    }

    /// Same trajectory with the first waypoint replaced.
    pub fn with_start(mut self, start: Vec3) -> Self {
        self.waypoints[0] = start;
        self
    }

    /// Camera poses pointed at the actor at every waypoint.
    pub fn poses(&self, actor_path: &ActorPath) -> Vec<Pose> {
        self.waypoints
            .iter()
            .zip(&self.timestamps)
            .map(|(p, &t)| Pose::looking_at(*p, &actor_path.position_at(t)))
            .collect()
    }
}

/// Linearly resamples a coarse waypoint track at spacing `dt`. The last
/// coarse point is reproduced exactly.
pub fn upsample(timestamps: &[f64], points: &[Vec3], dt: f64) -> Result<FineTrajectory> {
    if timestamps.len() != points.len() || timestamps.is_empty() {
        return Err(Error::ShapeMismatch("coarse track is empty or ragged".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::NonPositiveTimeStep(dt));
    }
    let t0 = timestamps[0];
    let span = timestamps[timestamps.len() - 1] - t0;
    let n = horizon_steps(span, dt).max(2);
    let fine_t: Vec<f64> = (0..n).map(|k| t0 + k as f64 * dt).collect();
    let mut fine_p: Vec<Vec3> = fine_t.iter().map(|&t| interpolate_track(timestamps, points, t)).collect();
    fine_p[0] = points[0];
    if ((n - 1) as f64 * dt - span).abs() < 1e-9 {
        fine_p[n - 1] = points[points.len() - 1];
    }
    FineTrajectory::new(fine_t, fine_p)
}

pub fn upsample_plan(plan: &FormationPlan, drone: usize, dt_fine: f64) -> Result<FineTrajectory> {
    let track = plan
        .targets
        .waypoints
        .get(drone)
        .ok_or_else(|| Error::InvalidParameter(format!("plan has no drone {drone}")))?;
    upsample(&plan.targets.timestamps, track, dt_fine)
}

/// `Σ_t Σ_peer max(0, d_min − ‖ξ_t − p_t‖)²` over the shared grid.
pub fn separation_cost(traj: &FineTrajectory, peers: &[FineTrajectory], d_min: f64) -> Result<f64> {
    check_peers(traj, peers)?;
    Ok(separation_value(&traj.waypoints, peers, d_min))
}

fn check_peers(traj: &FineTrajectory, peers: &[FineTrajectory]) -> Result<()> {
    if peers.iter().any(|p| p.len() != traj.len()) {
        return Err(Error::ShapeMismatch("peer forecast is on a different grid".into()));
    }
    Ok(())
}

fn separation_value(points: &[Vec3], peers: &[FineTrajectory], d_min: f64) -> f64 {
    peers
        .iter()
        .flat_map(|peer| {
            points.iter().zip(&peer.waypoints).map(|(p, q)| {
                let h = (d_min - (p - q).norm()).max(0.0);
                h * h
            })
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    pub dt: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    pub rel_tol: f64,
    pub clearance: f64,
    pub separation: f64,
    pub lambda_occlusion: f64,
    pub lambda_obstacle: f64,
    pub lambda_formation: f64,
    pub lambda_separation: f64,
    pub occlusion_samples: usize,
}

impl Default for LocalParams {
    fn default() -> Self {
        Self {
            dt: DEFAULT_FINE_STEP,
            eta: 10.0,
            max_iters: 50,
            max_halvings: 8,
            rel_tol: 1e-4,
            clearance: 2.0,
            separation: 3.0,
            lambda_occlusion: DEFAULT_LAMBDA_OCCLUSION,
            lambda_obstacle: DEFAULT_LAMBDA_OBSTACLE,
            lambda_formation: DEFAULT_LAMBDA_FORMATION,
            lambda_separation: 100.0,
            occlusion_samples: DEFAULT_OCCLUSION_SAMPLES,
        }
    }
}

impl LocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::NonPositiveTimeStep(self.dt));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {}", self.eta)));
        }
        for (name, value) in [
            ("lambda_occlusion", self.lambda_occlusion),
            ("lambda_obstacle", self.lambda_obstacle),
            ("lambda_formation", self.lambda_formation),
            ("lambda_separation", self.lambda_separation),
            ("clearance", self.clearance),
            ("separation", self.separation),
        ] {
            if !(value >= 0.0) {
                return Err(Error::NegativeWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Objective terms at one trajectory, weights not applied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalCost {
    pub smoothness: f64,
    pub occlusion: f64,
    pub obstacle: f64,
    pub formation: f64,
    pub separation: f64,
    pub total: f64,
}

/// Everything the objective depends on besides the trajectory itself.
pub struct LocalProblem<'a> {
    pub world: &'a WorldModel,
    pub actor: Vec<Vec3>,
    pub target: &'a FineTrajectory,
    pub peers: &'a [FineTrajectory],
    pub params: LocalParams,
}

impl<'a> LocalProblem<'a> {
    pub fn new(
        world: &'a WorldModel,
        actor_path: &ActorPath,
        target: &'a FineTrajectory,
        peers: &'a [FineTrajectory],
        params: LocalParams,
    ) -> Result<Self> {
        params.validate()?;
        check_peers(target, peers)?;
        Ok(Self {
            world,
            actor: target.timestamps.iter().map(|&t| actor_path.position_at(t)).collect(),
            target,
            peers,
            params,
        })
    }

    fn dt(&self) -> f64 {
        self.target.dt()
    }

    pub fn cost(&self, points: &[Vec3]) -> LocalCost {
        let p = &self.params;
        let smoothness = path_smoothness(points, self.dt());
        let mut occlusion = 0.0;
        let mut obstacle = 0.0;
        let mut formation = 0.0;
        for (t, x) in points.iter().enumerate() {
            occlusion += segment_occlusion(&self.world.grid, x, &self.actor[t], p.occlusion_samples);
            let h = (p.clearance - self.world.clearance(x)).max(0.0);
            obstacle += h * h;
            formation += (x - self.target.waypoints[t]).norm_squared();
        }
        let separation = separation_value(points, self.peers, p.separation);
        LocalCost {
            smoothness,
            occlusion,
            obstacle,
            formation,
            separation,
            total: smoothness
                + p.lambda_occlusion * occlusion
                + p.lambda_obstacle * obstacle
                + p.lambda_formation * formation
                + p.lambda_separation * separation,
        }
    }

    /// Gradients of the individual terms; the entry for the fixed first
    /// waypoint is zero.
    pub fn term_gradients(&self, points: &[Vec3]) -> [Vec<Vec3>; 5] {
        let p = &self.params;
        let n = points.len();
        let inv_dt4 = 1.0 / self.dt().powi(4);
        let mut smooth = vec![Vec3::zeros(); n];
        for t in 1..n.saturating_sub(1) {
            let r = (points[t + 1] - 2.0 * points[t] + points[t - 1]) * (2.0 * inv_dt4);
            smooth[t - 1] += r;
            smooth[t] -= 2.0 * r;
            smooth[t + 1] += r;
        }
        let mut occ = vec![Vec3::zeros(); n];
        let mut obs = vec![Vec3::zeros(); n];
        let mut form = vec![Vec3::zeros(); n];
        let mut sep = vec![Vec3::zeros(); n];
        for t in 1..n {
            let x = points[t];
            occ[t] = segment_occlusion_with_gradient(&self.world.grid, &x, &self.actor[t], p.occlusion_samples).1;
            let (d, g) = self.world.sdf.distance_and_gradient(&x);
            let h = (p.clearance - d).max(0.0);
            obs[t] = -2.0 * h * g;
            form[t] = 2.0 * (x - self.target.waypoints[t]);
            for peer in self.peers {
                let diff = x - peer.waypoints[t];
                let dist = diff.norm();
                let h = (p.separation - dist).max(0.0);
                if h > 0.0 && dist > 0.0 {
                    sep[t] -= 2.0 * h * diff / dist;
                }
            }
        }
        smooth[0] = Vec3::zeros();
        [smooth, occ, obs, form, sep]
    }

    pub fn gradient(&self, points: &[Vec3]) -> Vec<Vec3> {
        let p = &self.params;
        let [smooth, occ, obs, form, sep] = self.term_gradients(points);
        (0..points.len())
            .map(|t| {
                smooth[t]
                    + p.lambda_occlusion * occ[t]
                    + p.lambda_obstacle * obs[t]
                    + p.lambda_formation * form[t]
                    + p.lambda_separation * sep[t]
            })
            .collect()
    }

    /// Metric over the free waypoints: the second-difference operator with
    /// the start pinned, plus the Gauss-Newton curvature of the tracking
    /// term and of every hinge term active at `points`.
    pub fn metric(&self, points: &[Vec3]) -> DMatrix<f64> {
        let p = &self.params;
        let free = points.len() - 1;
        let mut k = DMatrix::<f64>::zeros(free, free);
        for j in 0..free {
            k[(j, j)] = 1.0;
            if j >= 1 {
                k[(j, j - 1)] = -2.0;
            }
            if j >= 2 {
                k[(j, j - 2)] = 1.0;
            }
        }
        let mut a = k.transpose() * &k * (2.0 / self.dt().powi(4));
        for j in 0..free {
            let x = points[j + 1];
            let mut diag = 2.0 * p.lambda_formation;
            if self.world.clearance(&x) < p.clearance {
                diag += 2.0 * p.lambda_obstacle;
            }
            let close = self
                .peers
                .iter()
                .filter(|peer| (x - peer.waypoints[j + 1]).norm() < p.separation)
                .count();
            diag += 2.0 * p.lambda_separation * close as f64;
            a[(j, j)] += diag;
        }
        a
    }

    fn metric_factor(&self, points: &[Vec3]) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.metric(points))
            .ok_or_else(|| Error::InvalidParameter("smoothness metric is not positive definite".into()))
    }
}

fn preconditioned_direction(chol: &Cholesky<f64, Dyn>, grad: &[Vec3]) -> Vec<Vec3> {
    let free = grad.len() - 1;
    let mut rhs = DMatrix::<f64>::zeros(free, 3);
    for j in 0..free {
        for axis in 0..3 {
            rhs[(j, axis)] = grad[j + 1][axis];
        }
    }
    let sol = chol.solve(&rhs);
    let mut out = vec![Vec3::zeros(); grad.len()];
    for j in 0..free {
        out[j + 1] = Vec3::new(sol[(j, 0)], sol[(j, 1)], sol[(j, 2)]);
    }
    out
}

fn step(points: &[Vec3], dir: &[Vec3], scale: f64) -> Vec<Vec3> {
    points.iter().zip(dir).map(|(p, d)| p - d * scale).collect()
}

/// One unsafeguarded covariant update `ξ − (1/η)·A⁻¹·∇U`.
pub fn covariant_step(problem: &LocalProblem, points: &[Vec3]) -> Result<Vec<Vec3>> {
    let chol = problem.metric_factor(points)?;
    let dir = preconditioned_direction(&chol, &problem.gradient(points));
    Ok(step(points, &dir, 1.0 / problem.params.eta))
}

/// One plain gradient update `ξ − (1/η)·∇U` with the start held fixed.
pub fn plain_step(problem: &LocalProblem, points: &[Vec3]) -> Vec<Vec3> {
    let mut g = problem.gradient(points);
    g[0] = Vec3::zeros();
    step(points, &g, 1.0 / problem.params.eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub trajectory: FineTrajectory,
    pub iterations: usize,
    pub initial: LocalCost,
    pub final_cost: LocalCost,
    /// Total cost after every accepted iterate, starting with the input.
    pub history: Vec<f64>,
    /// Set when the line search could not find a decrease.
    pub degraded: bool,
}

/// Covariant gradient descent with a halving line search; returns the best
/// trajectory found.
pub fn refine(
    traj: &FineTrajectory,
    world: &WorldModel,
    actor_path: &ActorPath,
    target: &FineTrajectory,
    peers: &[FineTrajectory],
    params: &LocalParams,
) -> Result<RefineResult> {
    if traj.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "trajectory has {} points, target {}",
            traj.len(),
            target.len()
        )));
    }
    let problem = LocalProblem::new(world, actor_path, target, peers, *params)?;
    let mut points = traj.waypoints.clone();
    let initial = problem.cost(&points);
    let mut current = initial;
    let mut history = vec![initial.total];
    let mut degraded = false;
    let mut iterations = 0;
    if points.len() >= 2 {
        for _ in 0..params.max_iters {
            let grad = problem.gradient(&points);
            if grad.iter().all(|g| g.norm_squared() == 0.0) {
                break;
            }
            let chol = problem.metric_factor(&points)?;
            let dir = preconditioned_direction(&chol, &grad);
            let mut scale = 1.0 / params.eta;
            let mut accepted = None;
            for _ in 0..=params.max_halvings {
                let candidate = step(&points, &dir, scale);
                let c = problem.cost(&candidate);
                if c.total < current.total {
                    accepted = Some((candidate, c));
                    break;
                }
                scale *= 0.5;
            }
            let Some((candidate, c)) = accepted else {
                degraded = true;
                break;
            };
            iterations += 1;
            let change = (current.total - c.total) / current.total.abs().max(f64::MIN_POSITIVE);
            points = candidate;
            current = c;
            history.push(c.total);
            if change < params.rel_tol {
                break;
            }
        }
    }
    if degraded {
        log::debug!("local refine stopped without a descent step after {iterations} iterations");
    }
    Ok(RefineResult {
        trajectory: FineTrajectory::new(traj.timestamps.clone(), points)?,
        iterations,
        initial,
        final_cost: current,
        history,
        degraded,
    })
}

/// True when `p` lies within `tol` of a plane through voxel centres, where
/// trilinear interpolation has a kink.
pub fn near_interpolation_kink(world: &WorldModel, p: &Vec3, tol: f64) -> bool {
    [world.grid.lattice(), world.sdf.lattice()].iter().any(|lat| {
        (0..3).any(|a| {
            let u = (p[a] - lat.origin[a]) / lat.voxel_size - 0.5;
            (u - u.round()).abs() * lat.voxel_size < tol
        })
    })
}
