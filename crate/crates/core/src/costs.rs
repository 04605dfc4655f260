//! Cost functionals over formation trajectories: formation keeping, obstacle
//! volume in the actor-centered spherical grid, line-of-sight occlusion and
//! smoothness, plus their weighted combination.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ActorPath;
use crate::geometry::{spherical_to_world, wrap_angle, SphericalCoord, Vec3};
use crate::world::{OccupancyGrid, WorldModel};

pub const DEFAULT_LAMBDA_OCCLUSION: f64 = 5.0;
pub const DEFAULT_LAMBDA_OBSTACLE: f64 = 10.0;
pub const DEFAULT_LAMBDA_FORMATION: f64 = 1.0;
pub const DEFAULT_OCCLUSION_SAMPLES: usize = 32;

/// Yaw spacing between neighbouring drones of an `n`-drone formation.
pub fn formation_spacing(n: usize) -> f64 {
    if n == 2 {
        FRAC_PI_2
    } else {
        TAU / n as f64
    }
}

/// Shape of the camera formation and the weights of the cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormationSpec {
    pub n: usize,
    pub rho_form: f64,
    pub phi_form: f64,
    pub delta_theta: f64,
    pub lambda_occlusion: f64,
    pub lambda_obstacle: f64,
    pub lambda_formation: f64,
    pub r_max: f64,
}

impl FormationSpec {
    pub fn new(n: usize, rho_form: f64, phi_form: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "formation needs at least 2 drones, got {n}"
            )));
        }
        if !(rho_form > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "formation radius must be positive, got {rho_form}"
            )));
        }
        Ok(Self {
            n,
            rho_form,
            phi_form,
            delta_theta: formation_spacing(n),
            lambda_occlusion: DEFAULT_LAMBDA_OCCLUSION,
            lambda_obstacle: DEFAULT_LAMBDA_OBSTACLE,
            lambda_formation: DEFAULT_LAMBDA_FORMATION,
            r_max: 1.2 * rho_form,
        })
    }

    pub fn with_weights(mut self, occlusion: f64, obstacle: f64, formation: f64) -> Result<Self> {
        check_weight("lambda_occlusion", occlusion)?;
        check_weight("lambda_obstacle", obstacle)?;
        check_weight("lambda_formation", formation)?;
        self.lambda_occlusion = occlusion;
        self.lambda_obstacle = obstacle;
        self.lambda_formation = formation;
        Ok(self)
    }

    pub fn with_r_max(mut self, r_max: f64) -> Result<Self> {
        if !(r_max >= self.rho_form) {
            return Err(Error::InvalidParameter(format!(
                "r_max ({r_max}) must be at least rho_form ({})",
                self.rho_form
            )));
        }
        self.r_max = r_max;
        Ok(self)
    }

    /// Yaw offset of drone `i` relative to the formation yaw.
    pub fn yaw_offset(&self, i: usize) -> f64 {
        i as f64 * self.delta_theta
    }

    pub fn drone_coord(&self, i: usize, theta_form: f64) -> SphericalCoord {
        SphericalCoord::new(self.rho_form, theta_form + self.yaw_offset(i), self.phi_form)
    }
}

fn check_weight(name: &'static str, value: f64) -> Result<()> {
    if value < 0.0 || !value.is_finite() {
        return Err(Error::NegativeWeight { name, value });
    }
    Ok(())
}

/// Per-drone waypoints on a shared time grid, with headings pointed at the
/// actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub timestamps: Vec<f64>,
    pub waypoints: Vec<Vec<Vec3>>,
    pub headings: Vec<Vec<f64>>,
}

impl TrajectorySet {
    pub fn new(timestamps: Vec<f64>, waypoints: Vec<Vec<Vec3>>, actor_path: &ActorPath) -> Result<Self> {
        if waypoints.iter().any(|w| w.len() != timestamps.len()) {
            return Err(Error::ShapeMismatch(
                "every drone needs one waypoint per timestamp".into(),
            ));
        }
        let headings = waypoints
            .iter()
            .map(|drone| {
                drone
                    .iter()
                    .zip(&timestamps)
                    .map(|(p, &t)| {
                        let d = actor_path.position_at(t) - p;
                        wrap_angle(d.y.atan2(d.x))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            timestamps,
            waypoints,
            headings,
        })
    }

    pub fn drones(&self) -> usize {
        self.waypoints.len()
    }

    pub fn steps(&self) -> usize {
        self.timestamps.len()
    }

    fn check_same_shape(&self, other: &TrajectorySet) -> Result<()> {
        if self.drones() != other.drones() || self.steps() != other.steps() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} trajectory set vs {}x{}",
                self.drones(),
                self.steps(),
                other.drones(),
                other.steps()
            )));
        }
        Ok(())
    }
}

/// Ideal formation positions for each drone given a formation yaw per step.
pub fn formation_targets(actor_path: &ActorPath, spec: &FormationSpec, theta_form: &[f64]) -> Result<TrajectorySet> {
    if theta_form.len() != actor_path.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} formation yaws for {} actor waypoints",
            theta_form.len(),
            actor_path.len()
        )));
    }
    let waypoints = (0..spec.n)
        .map(|i| {
            actor_path
                .positions
                .iter()
                .zip(theta_form)
                .map(|(a, &theta)| spherical_to_world(a, &spec.drone_coord(i, theta)))
                .collect()
        })
        .collect();
    TrajectorySet::new(actor_path.timestamps.clone(), waypoints, actor_path)
}

/// Sum of (unsquared) distances between each waypoint and its target.
pub fn cost_formation(traj: &TrajectorySet, targets: &TrajectorySet) -> Result<f64> {
    traj.check_same_shape(targets)?;
    Ok(traj
        .waypoints
        .iter()
        .zip(&targets.waypoints)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).norm()))
        .sum())
}

/// Discretization of the actor-centered spherical domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalDiscretization {
    pub yaw_cells: usize,
    pub tilt_cells: usize,
    pub range_cells: usize,
    /// Stratified samples per cell along (yaw, tilt, range); their product
    /// is the sample count `K`.
    pub samples: [usize; 3],
    pub phi_min: f64,
    pub phi_max: f64,
}

impl Default for SphericalDiscretization {
    fn default() -> Self {
        Self {
            yaw_cells: 8,
            tilt_cells: 4,
            range_cells: 8,
            samples: [4, 2, 1],
            phi_min: 0.0,
            phi_max: FRAC_PI_2,
        }
    }
}

impl SphericalDiscretization {
    pub fn validate(&self) -> Result<()> {
        if self.yaw_cells < 4 {
            return Err(Error::InvalidParameter(format!(
                "need at least 4 yaw cells, got {}",
                self.yaw_cells
            )));
        }
        if self.tilt_cells == 0 || self.range_cells == 0 || self.samples.contains(&0) {
            return Err(Error::InvalidParameter(
                "tilt/range cells and samples must be positive".into(),
            ));
        }
        if !(self.phi_max > self.phi_min) {
            return Err(Error::InvalidParameter("phi_max must exceed phi_min".into()));
        }
        Ok(())
    }

    pub fn yaw_step(&self) -> f64 {
        TAU / self.yaw_cells as f64
    }

    pub fn tilt_step(&self) -> f64 {
        (self.phi_max - self.phi_min) / self.tilt_cells as f64
    }

    /// Yaw at the center of cell `k`.
    pub fn yaw_of_cell(&self, k: usize) -> f64 {
        -PI + k as f64 * self.yaw_step()
    }

    /// Yaw cell whose center is nearest to `theta`.
    pub fn yaw_cell(&self, theta: f64) -> usize {
        let u = (wrap_angle(theta) + PI) / self.yaw_step();
        (u.round() as usize) % self.yaw_cells
    }

    pub fn tilt_cell(&self, phi: f64) -> usize {
        let u = ((phi - self.phi_min) / self.tilt_step()).floor();
        (u.max(0.0) as usize).min(self.tilt_cells - 1)
    }

    /// `(lo, hi)` bounds of yaw cell `k`.
    pub fn yaw_bounds(&self, k: usize) -> (f64, f64) {
        let c = self.yaw_of_cell(k);
        (c - 0.5 * self.yaw_step(), c + 0.5 * self.yaw_step())
    }

    pub fn tilt_bounds(&self, j: usize) -> (f64, f64) {
        let lo = self.phi_min + j as f64 * self.tilt_step();
        (lo, lo + self.tilt_step())
    }
}

/// Exact volume of a spherical-shell sector `∫∫∫ ρ² cos φ dρ dθ dφ`.
pub fn sector_volume(rho: (f64, f64), theta: (f64, f64), phi: (f64, f64)) -> f64 {
    (rho.1.powi(3) - rho.0.powi(3)) / 3.0 * (theta.1 - theta.0) * (phi.1.sin() - phi.0.sin())
}

/// Time-dependent occupancy in spherical cells around the forecast actor.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalCostGrid {
    pub timestamps: Vec<f64>,
    pub centers: Vec<Vec3>,
    pub disc: SphericalDiscretization,
    pub r_max: f64,
    values: Vec<f64>,
}

impl SphericalCostGrid {
    pub fn steps(&self) -> usize {
        self.timestamps.len()
    }

    fn index(&self, t: usize, yaw: usize, tilt: usize, range: usize) -> usize {
        ((t * self.disc.yaw_cells + yaw) * self.disc.tilt_cells + tilt) * self.disc.range_cells + range
    }

    pub fn value(&self, t: usize, yaw: usize, tilt: usize, range: usize) -> f64 {
        self.values[self.index(t, yaw, tilt, range)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range_step(&self) -> f64 {
        self.r_max / self.disc.range_cells as f64
    }

    pub fn range_bounds(&self, r: usize) -> (f64, f64) {
        let lo = r as f64 * self.range_step();
        (lo, lo + self.range_step())
    }

    pub fn cell_volume(&self, yaw: usize, tilt: usize, range: usize) -> f64 {
        sector_volume(
            self.range_bounds(range),
            self.disc.yaw_bounds(yaw),
            self.disc.tilt_bounds(tilt),
        )
    }

    /// Occupancy-weighted volume of the radial column at `(yaw, tilt)` from
    /// the actor out to `r_max`.
    pub fn column_volume(&self, t: usize, yaw: usize, tilt: usize) -> f64 {
        (0..self.disc.range_cells)
            .map(|r| self.value(t, yaw, tilt, r) * self.cell_volume(yaw, tilt, r))
            .sum()
    }

    /// Column cost for a drone at world position `p` at step `t`.
    pub fn column_cost_at(&self, t: usize, p: &Vec3) -> f64 {
        let d = p - self.centers[t];
        let theta = d.y.atan2(d.x);
        let phi = d.z.atan2(d.x.hypot(d.y));
        self.column_volume(t, self.disc.yaw_cell(theta), self.disc.tilt_cell(phi))
    }
}

/// Samples the Cartesian occupancy into the spherical grid around each
/// forecast actor position. Each cell holds the mean of `K` stratified
/// samples.
pub fn build_spherical_grid(
    world: &WorldModel,
    actor_path: &ActorPath,
    spec: &FormationSpec,
    disc: &SphericalDiscretization,
) -> Result<SphericalCostGrid> {
    disc.validate()?;
    let r_max = spec.r_max;
    let [sy, st, sr] = disc.samples;
    let k_samples = (sy * st * sr) as f64;
    let dr = r_max / disc.range_cells as f64;
    let per_step = disc.yaw_cells * disc.tilt_cells * disc.range_cells;
    let mut values = Vec::with_capacity(actor_path.len() * per_step);
    for center in &actor_path.positions {
        for yaw in 0..disc.yaw_cells {
            let (t0, t1) = disc.yaw_bounds(yaw);
            for tilt in 0..disc.tilt_cells {
                let (p0, p1) = disc.tilt_bounds(tilt);
                for range in 0..disc.range_cells {
                    let r0 = range as f64 * dr;
                    let mut acc = 0.0;
                    for a in 0..sy {
                        let theta = t0 + (a as f64 + 0.5) / sy as f64 * (t1 - t0);
                        for b in 0..st {
                            let phi = p0 + (b as f64 + 0.5) / st as f64 * (p1 - p0);
                            for c in 0..sr {
                                let rho = r0 + (c as f64 + 0.5) / sr as f64 * dr;
                                let q = spherical_to_world(center, &SphericalCoord { rho, theta, phi });
                                acc += world.grid.occupancy_at(&q);
                            }
                        }
                    }
                    values.push(acc / k_samples);
                }
            }
        }
    }
    Ok(SphericalCostGrid {
        timestamps: actor_path.timestamps.clone(),
        centers: actor_path.positions.clone(),
        disc: *disc,
        r_max,
        values,
    })
}

/// Radial-column obstacle volume summed over drones and steps.
pub fn cost_obstacle(grid: &SphericalCostGrid, traj: &TrajectorySet, _spec: &FormationSpec) -> Result<f64> {
    if traj.steps() != grid.steps() {
        return Err(Error::ShapeMismatch(format!(
            "trajectory has {} steps, spherical grid {}",
            traj.steps(),
            grid.steps()
        )));
    }
    Ok(traj
        .waypoints
        .iter()
        .map(|drone| {
            drone
                .iter()
                .enumerate()
                .map(|(t, p)| grid.column_cost_at(t, p))
                .sum::<f64>()
        })
        .sum())
}

/// Midpoint-rule mean occupancy along the segment `actor → drone`.
pub fn segment_occlusion(grid: &OccupancyGrid, drone: &Vec3, actor: &Vec3, n_quad: usize) -> f64 {
    let n = n_quad.max(1);
    let mut acc = 0.0;
    for j in 0..n {
        let tau = (j as f64 + 0.5) / n as f64;
        acc += grid.occupancy_at(&(drone * tau + actor * (1.0 - tau)));
    }
    acc / n as f64
}

/// [`segment_occlusion`] and its gradient with respect to the drone end.
pub fn segment_occlusion_with_gradient(grid: &OccupancyGrid, drone: &Vec3, actor: &Vec3, n_quad: usize) -> (f64, Vec3) {
    let n = n_quad.max(1);
    let mut acc = 0.0;
    let mut grad = Vec3::zeros();
    for j in 0..n {
        let tau = (j as f64 + 0.5) / n as f64;
        let (v, g) = grid.occupancy_and_gradient(&(drone * tau + actor * (1.0 - tau)));
        acc += v;
        grad += g * tau;
    }
    (acc / n as f64, grad / n as f64)
}

pub fn cost_occlusion(world: &WorldModel, traj: &TrajectorySet, actor_path: &ActorPath, n_quad: usize) -> Result<f64> {
    if traj.steps() != actor_path.len() {
        return Err(Error::ShapeMismatch(format!(
            "trajectory has {} steps, actor path {}",
            traj.steps(),
            actor_path.len()
        )));
    }
    Ok(traj
        .waypoints
        .iter()
        .map(|drone| {
            drone
                .iter()
                .zip(&actor_path.positions)
                .map(|(p, a)| segment_occlusion(&world.grid, p, a, n_quad))
                .sum::<f64>()
        })
        .sum())
}

/// Smoothness cost; `short_horizon` is set when fewer than 3 waypoints make
/// the second difference undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessCost {
    pub value: f64,
    pub short_horizon: bool,
}

/// Sum of squared second differences divided by `dt⁴` for one waypoint
/// sequence.
pub fn path_smoothness(points: &[Vec3], dt: f64) -> f64 {
    let inv_dt4 = 1.0 / dt.powi(4);
    points
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).norm_squared() * inv_dt4)
        .sum()
}

pub fn cost_smoothness(traj: &TrajectorySet) -> SmoothnessCost {
    if traj.steps() < 3 {
        log::warn!("smoothness cost needs at least 3 waypoints, got {}", traj.steps());
        return SmoothnessCost {
            value: 0.0,
            short_horizon: true,
        };
    }
    let dt = traj.timestamps[1] - traj.timestamps[0];
    SmoothnessCost {
        value: traj.waypoints.iter().map(|w| path_smoothness(w, dt)).sum(),
        short_horizon: false,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostComponents {
    pub smoothness: f64,
    pub occlusion: f64,
    pub obstacle: f64,
    pub formation: f64,
}

/// `J = J_smooth + λ1·J_occ + λ2·J_obs + λ3·J_form`.
pub fn total_cost(c: &CostComponents, spec: &FormationSpec) -> Result<f64> {
    check_weight("lambda_occlusion", spec.lambda_occlusion)?;
    check_weight("lambda_obstacle", spec.lambda_obstacle)?;
    check_weight("lambda_formation", spec.lambda_formation)?;
    for (name, v) in [
        ("smoothness", c.smoothness),
        ("occlusion", c.occlusion),
        ("obstacle", c.obstacle),
        ("formation", c.formation),
    ] {
        if v < 0.0 {
            return Err(Error::InvalidParameter(format!("{name} cost is negative ({v})")));
        }
    }
    Ok(c.smoothness
        + spec.lambda_occlusion * c.occlusion
        + spec.lambda_obstacle * c.obstacle
        + spec.lambda_formation * c.formation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn static_path(len: usize) -> ActorPath {
        ActorPath::stationary(Vec3::zeros(), len, 1.0)
    }

    fn spec2() -> FormationSpec {
        FormationSpec::new(2, 10.0, 0.0).unwrap()
    }

    #[test]
    fn spacing_follows_drone_count() {
        assert_abs_diff_eq!(formation_spacing(2), FRAC_PI_2);
        let s4 = FormationSpec::new(4, 10.0, 0.0).unwrap();
        let offsets: Vec<f64> = (0..4).map(|i| s4.yaw_offset(i)).collect();
        assert_abs_diff_eq!(offsets[..], [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2][..], epsilon = 1e-12);
        assert!(FormationSpec::new(1, 10.0, 0.0).is_err());
        assert!(FormationSpec::new(2, 0.0, 0.0).is_err());
        assert!(spec2().with_r_max(5.0).is_err());
    }

    #[test]
    fn targets_for_static_actor() {
        let path = static_path(4);
        let t = formation_targets(&path, &spec2(), &[0.0; 4]).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(t.waypoints[0][k], Vec3::new(10.0, 0.0, 0.0), epsilon = 1e-12);
            assert_abs_diff_eq!(t.waypoints[1][k], Vec3::new(0.0, 10.0, 0.0), epsilon = 1e-12);
            assert_abs_diff_eq!(t.headings[0][k], -PI, epsilon = 1e-12);
            assert_abs_diff_eq!(t.headings[1][k], -FRAC_PI_2, epsilon = 1e-12);
        }
        assert!(formation_targets(&path, &spec2(), &[0.0; 3]).is_err());
    }

    #[test]
    fn headings_point_at_actor() {
        let path = ActorPath::new(vec![0.0, 1.0, 2.0], vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 1.0, 0.0)]).unwrap();
        let t = formation_targets(&path, &FormationSpec::new(3, 8.0, 0.3).unwrap(), &[0.1, 0.5, -2.0]).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                let d = path.positions[k] - t.waypoints[i][k];
                let err = wrap_angle(d.y.atan2(d.x) - t.headings[i][k]).abs();
                assert!(err < 1e-9);
            }
        }
    }

    fn naive_formation(a: &TrajectorySet, b: &TrajectorySet) -> f64 {
        let mut total = 0.0;
        for t in 0..a.steps() {
            for i in 0..a.drones() {
                let d = a.waypoints[i][t] - b.waypoints[i][t];
                total += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
            }
        }
        total
    }

    #[test]
    fn formation_cost_examples() {
        let path = static_path(5);
        let targets = formation_targets(&path, &spec2(), &[0.3; 5]).unwrap();
        assert_eq!(cost_formation(&targets, &targets).unwrap(), 0.0);
        let mut moved = targets.clone();
        moved.waypoints[1][2] += Vec3::new(0.0, 0.0, 1.0);
        assert_abs_diff_eq!(cost_formation(&moved, &targets).unwrap(), 1.0, epsilon = 1e-12);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut random = targets.clone();
        for drone in &mut random.waypoints {
            for p in drone {
                *p += Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            }
        }
        let fast = cost_formation(&random, &targets).unwrap();
        assert!((fast - naive_formation(&random, &targets)).abs() <= 1e-12);

        let short = formation_targets(&static_path(4), &spec2(), &[0.3; 4]).unwrap();
        assert!(cost_formation(&short, &targets).is_err());
    }

    fn world_with(f: impl Fn(&mut OccupancyGrid)) -> WorldModel {
        let mut g = OccupancyGrid::new(Vec3::new(-20.0, -20.0, -2.0), 0.5, [80, 80, 28]).unwrap();
        f(&mut g);
        WorldModel::new(g, 0.5).unwrap()
    }

    #[test]
    fn spherical_grid_empty_and_full() {
        let disc = SphericalDiscretization::default();
        let path = static_path(3);
        let empty = build_spherical_grid(&world_with(|_| {}), &path, &spec2(), &disc).unwrap();
        assert!(empty.values().iter().all(|&v| v == 0.0));
        let full = build_spherical_grid(
            &world_with(|g| g.add_box(Vec3::new(-50.0, -50.0, -50.0), Vec3::new(50.0, 50.0, 50.0), 1.0)),
            &path,
            &spec2(),
            &disc,
        )
        .unwrap();
        assert!(full.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(full.values().len(), 3 * 8 * 4 * 8);
    }

    #[test]
    fn obstacle_column_due_north_shows_up_in_grid() {
        // a 2 m wide column centered 8 m north of the actor
        let world = world_with(|g| g.add_box(Vec3::new(-1.0, 7.0, -2.0), Vec3::new(1.0, 9.0, 12.0), 1.0));
        let disc = SphericalDiscretization::default();
        let grid = build_spherical_grid(&world, &static_path(1), &spec2(), &disc).unwrap();
        let north = disc.yaw_cell(FRAC_PI_2);
        let south = disc.yaw_cell(-FRAC_PI_2);
        let (_, range_cell) = (0..disc.range_cells)
            .map(|r| (grid.value(0, north, 0, r), r))
            .fold((f64::MIN, 0), |a, b| if b.0 > a.0 { b } else { a });
        let (r0, r1) = grid.range_bounds(range_cell);
        assert!(r0 <= 8.0 + 1.0 && r1 >= 8.0 - 1.0, "peak at [{r0}, {r1}]");

        // dense-sampling oracle for the peak cell
        let (t0, t1) = disc.yaw_bounds(north);
        let (p0, p1) = disc.tilt_bounds(0);
        let m = 24;
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let s = SphericalCoord {
                        theta: t0 + (a as f64 + 0.5) / m as f64 * (t1 - t0),
                        phi: p0 + (b as f64 + 0.5) / m as f64 * (p1 - p0),
                        rho: r0 + (c as f64 + 0.5) / m as f64 * (r1 - r0),
                    };
                    acc += world.occupancy_at(&spherical_to_world(&Vec3::zeros(), &s));
                }
            }
        }
        let dense = acc / (m * m * m) as f64;
        let peak = grid.value(0, north, 0, range_cell);
        assert!(peak > 0.0);
        assert!((peak - dense).abs() < 0.2, "stratified {peak} vs dense {dense}");
        for r in 0..disc.range_cells {
            for tilt in 0..disc.tilt_cells {
                assert_eq!(grid.value(0, south, tilt, r), 0.0);
            }
        }
    }

    #[test]
    fn obstacle_cost_matches_sector_volume() {
        // fill exactly one radial cell: yaw cell 4 (θ≈0), tilt cell 0, range cell 6
        let disc = SphericalDiscretization::default();
        let spec = spec2().with_r_max(12.0).unwrap();
        let path = static_path(1);
        let mut grid = build_spherical_grid(&world_with(|_| {}), &path, &spec, &disc).unwrap();
        let yaw = disc.yaw_cell(0.0);
        let idx = grid.index(0, yaw, 0, 6);
        grid.values[idx] = 1.0;
        let traj = TrajectorySet::new(path.timestamps.clone(), vec![vec![Vec3::new(10.0, 0.0, 1.0)]], &path).unwrap();
        let cost = cost_obstacle(&grid, &traj, &spec).unwrap();
        let (r0, r1) = grid.range_bounds(6);
        let (t0, t1) = disc.yaw_bounds(yaw);
        let (p0, p1) = disc.tilt_bounds(0);
        // closed form: (r1³−r0³)/3 · Δθ · (sin φ1 − sin φ0)
        let analytic = (r1.powi(3) - r0.powi(3)) / 3.0 * (t1 - t0) * (p1.sin() - p0.sin());
        assert!((cost - analytic).abs() <= 0.02 * analytic);

        let empty = build_spherical_grid(&world_with(|_| {}), &path, &spec, &disc).unwrap();
        assert_eq!(cost_obstacle(&empty, &traj, &spec).unwrap(), 0.0);
    }

    #[test]
    fn obstacle_cost_is_linear_in_occupancy() {
        let disc = SphericalDiscretization::default();
        let path = static_path(2);
        let half = world_with(|g| g.add_box(Vec3::new(6.0, -3.0, -2.0), Vec3::new(12.0, 3.0, 6.0), 0.25));
        let full = world_with(|g| g.add_box(Vec3::new(6.0, -3.0, -2.0), Vec3::new(12.0, 3.0, 6.0), 0.5));
        let targets = formation_targets(&path, &spec2(), &[0.0, 0.0]).unwrap();
        let a = cost_obstacle(&build_spherical_grid(&half, &path, &spec2(), &disc).unwrap(), &targets, &spec2()).unwrap();
        let b = cost_obstacle(&build_spherical_grid(&full, &path, &spec2(), &disc).unwrap(), &targets, &spec2()).unwrap();
        assert!(a > 0.0);
        assert!((b - 2.0 * a).abs() <= 1e-9 * b);
    }

    fn slab_world() -> WorldModel {
        // occupancy-1 slab covering x in [2.5, 7.5] for the whole y/z range
        let mut g = OccupancyGrid::new(Vec3::new(-5.0, -5.0, -5.0), 0.25, [80, 40, 40]).unwrap();
        g.add_box(Vec3::new(2.5, -10.0, -10.0), Vec3::new(7.5, 10.0, 10.0), 1.0);
        WorldModel::new(g, 0.5).unwrap()
    }

    #[test]
    fn occlusion_slab_integral() {
        let world = slab_world();
        let path = static_path(1);
        let traj = TrajectorySet::new(vec![0.0], vec![vec![Vec3::new(10.0, 0.0, 0.0)]], &path).unwrap();
        for n_quad in [8usize, 16, 32, 64] {
            let c = cost_occlusion(&world, &traj, &path, n_quad).unwrap();
            assert!((c - 0.5).abs() <= 1.0 / n_quad as f64, "N={n_quad}: {c}");
            let c2 = cost_occlusion(&world, &traj, &path, 2 * n_quad).unwrap();
            assert!((c - c2).abs() < 1.0 / n_quad as f64);
        }
        let free = cost_occlusion(&world_with(|_| {}), &traj, &path, 32).unwrap();
        assert_eq!(free, 0.0);
    }

    #[test]
    fn occlusion_is_endpoint_symmetric() {
        let world = slab_world();
        let a = Vec3::new(-1.0, 0.3, 0.2);
        let b = Vec3::new(9.1, -0.7, 1.4);
        let ab = segment_occlusion(&world.grid, &a, &b, 32);
        let ba = segment_occlusion(&world.grid, &b, &a, 32);
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn occlusion_gradient_matches_differences() {
        let mut g = OccupancyGrid::new(Vec3::new(-5.0, -5.0, -5.0), 0.5, [30, 20, 20]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for i in 0..30 {
            for j in 0..20 {
                for k in 0..20 {
                    g.set(i, j, k, rng.random_range(0.0..1.0));
                }
            }
        }
        let h = 1e-6;
        let actor = Vec3::new(0.1, 0.2, 0.3);
        for _ in 0..10 {
            let p = Vec3::new(rng.random_range(3.0..8.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (_, grad) = segment_occlusion_with_gradient(&g, &p, &actor, 32);
            for a in 0..3 {
                let mut e = Vec3::zeros();
                e[a] = h;
                let fd = (segment_occlusion(&g, &(p + e), &actor, 32) - segment_occlusion(&g, &(p - e), &actor, 32)) / (2.0 * h);
                assert!((fd - grad[a]).abs() <= 1e-3 * fd.abs().max(1e-3));
            }
        }
    }

    fn naive_smoothness(points: &[Vec3], dt: f64) -> f64 {
        let mut total = 0.0;
        for t in 1..points.len() - 1 {
            let mut sq = 0.0;
            for a in 0..3 {
                let acc = points[t + 1][a] - 2.0 * points[t][a] + points[t - 1][a];
                sq += acc * acc;
            }
            total += sq / (dt * dt * dt * dt);
        }
        total
    }

    #[test]
    fn smoothness_examples() {
        let path = static_path(6);
        let line: Vec<Vec3> = (0..6).map(|k| Vec3::new(k as f64, 2.0 * k as f64, 0.5)).collect();
        let traj = TrajectorySet::new(path.timestamps.clone(), vec![line.clone()], &path).unwrap();
        assert_abs_diff_eq!(cost_smoothness(&traj).value, 0.0, epsilon = 1e-20);

        let mut kinked = line.clone();
        kinked[3].z += 1.0;
        let traj = TrajectorySet::new(path.timestamps.clone(), vec![kinked.clone()], &path).unwrap();
        let c = cost_smoothness(&traj).value;
        // second differences at t=2,3,4 are 1, -2, 1
        assert_abs_diff_eq!(c, 6.0, epsilon = 1e-12);
        assert!((c - naive_smoothness(&kinked, 1.0)).abs() <= 1e-12);

        let shifted: Vec<Vec3> = kinked.iter().map(|p| p + Vec3::new(100.0, -3.0, 7.0)).collect();
        let traj2 = TrajectorySet::new(path.timestamps.clone(), vec![shifted], &path).unwrap();
        assert!((cost_smoothness(&traj2).value - c).abs() < 1e-9);

        let short = TrajectorySet::new(vec![0.0, 1.0], vec![vec![Vec3::zeros(), Vec3::x()]], &static_path(2)).unwrap();
        let s = cost_smoothness(&short);
        assert!(s.short_horizon);
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn smoothness_matches_naive_on_random_input() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Vec3> = (0..21)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..5.0)))
            .collect();
        assert!((path_smoothness(&pts, 0.5) - naive_smoothness(&pts, 0.5)).abs() <= 1e-12 * naive_smoothness(&pts, 0.5).max(1.0));
    }

    #[test]
    fn total_cost_examples() {
        let spec = spec2().with_weights(1.0, 1.0, 1.0).unwrap();
        assert_eq!(total_cost(&CostComponents::default(), &spec).unwrap(), 0.0);
        let c = CostComponents {
            smoothness: 1.0,
            occlusion: 2.0,
            obstacle: 3.0,
            formation: 4.0,
        };
        assert_eq!(total_cost(&c, &spec).unwrap(), 10.0);
        let base = total_cost(&c, &spec2()).unwrap() - c.smoothness;
        let scaled = spec2().with_weights(15.0, 30.0, 3.0).unwrap();
        assert_abs_diff_eq!(total_cost(&c, &scaled).unwrap() - c.smoothness, 3.0 * base, epsilon = 1e-12);
        assert!(spec2().with_weights(-1.0, 1.0, 1.0).is_err());
        let mut bad = spec2();
        bad.lambda_obstacle = -0.5;
        assert!(matches!(total_cost(&c, &bad), Err(Error::NegativeWeight { .. })));
    }
}
