//! Centralized formation-yaw planning.
//!
//! The formation shape is fixed; only its yaw about the actor is chosen per
//! planning step. Each step has `D` discrete yaws, and a step may move the
//! formation by at most `neighbor_radius` cells. A backward Bellman pass
//! fills the cost-to-go table and a forward pass reads off the yaw sequence
//! starting at the current formation yaw.

use serde::{Deserialize, Serialize};

use crate::costs::{
    build_spherical_grid, formation_targets, segment_occlusion, FormationSpec, SphericalCostGrid,
    SphericalDiscretization, TrajectorySet, DEFAULT_OCCLUSION_SAMPLES,
};
use crate::error::{Error, Result};
use crate::forecast::{forecast_path_from, ActorPath, ActorState};
use crate::geometry::{spherical_to_world, SphericalCoord, Vec3};
use crate::world::WorldModel;

/// Cost map `C` and cost-to-go `V` over `T × D` formation-yaw states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawStateSpace {
    steps: usize,
    yaw_cells: usize,
    neighbor_radius: usize,
    cost: Vec<f64>,
    cost_to_go: Vec<f64>,
}

impl YawStateSpace {
    /// Builds a state space from per-step cost rows; `V` starts zeroed.
    pub fn from_rows(rows: &[Vec<f64>], neighbor_radius: usize) -> Result<Self> {
        let steps = rows.len();
        let yaw_cells = rows.first().map_or(0, Vec::len);
        if steps == 0 || yaw_cells == 0 {
            return Err(Error::InvalidParameter("cost map must be non-empty".into()));
        }
        if rows.iter().any(|r| r.len() != yaw_cells) {
            return Err(Error::ShapeMismatch("cost map rows differ in length".into()));
        }
        if neighbor_radius == 0 {
            return Err(Error::InvalidParameter("neighbor radius must be at least 1".into()));
        }
        if rows.iter().flatten().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidParameter("costs must be finite and non-negative".into()));
        }
        Ok(Self {
            steps,
            yaw_cells,
            neighbor_radius,
            cost: rows.concat(),
            cost_to_go: vec![0.0; steps * yaw_cells],
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn yaw_cells(&self) -> usize {
        self.yaw_cells
    }

    pub fn neighbor_radius(&self) -> usize {
        self.neighbor_radius
    }

    pub fn cost(&self, t: usize, k: usize) -> f64 {
        self.cost[t * self.yaw_cells + k]
    }

    pub fn cost_to_go(&self, t: usize, k: usize) -> f64 {
        self.cost_to_go[t * self.yaw_cells + k]
    }

    pub fn cost_row(&self, t: usize) -> &[f64] {
        &self.cost[t * self.yaw_cells..(t + 1) * self.yaw_cells]
    }

    pub fn cost_to_go_row(&self, t: usize) -> &[f64] {
        &self.cost_to_go[t * self.yaw_cells..(t + 1) * self.yaw_cells]
    }

    /// Yaw of cell `k`: `-π + k·2π/D`.
    pub fn yaw_of_cell(&self, k: usize) -> f64 {
        -std::f64::consts::PI + k as f64 * std::f64::consts::TAU / self.yaw_cells as f64
    }

    /// Cell whose yaw is nearest to `theta`.
    pub fn cell_of_yaw(&self, theta: f64) -> usize {
        let step = std::f64::consts::TAU / self.yaw_cells as f64;
        let u = (crate::geometry::wrap_angle(theta) + std::f64::consts::PI) / step;
        (u.round() as usize) % self.yaw_cells
    }

    /// Modular index distance between two yaw cells.
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let d = a.abs_diff(b);
        d.min(self.yaw_cells - d)
    }

    /// Cells reachable from `k` in one step, ordered by (distance, index).
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.yaw_cells)
            .filter(|&c| self.cell_distance(k, c) <= self.neighbor_radius)
            .collect();
        out.sort_by_key(|&c| (self.cell_distance(k, c), c));
        out
    }
}

/// Fills `V` with `V[T-1] = C[T-1]` and
/// `V[t][k] = C[t][k] + min_{k' ∈ N(k)} V[t+1][k']`.
pub fn backward_pass(space: &YawStateSpace) -> YawStateSpace {
    let mut out = space.clone();
    let d = out.yaw_cells;
    let last = out.steps - 1;
    for k in 0..d {
        out.cost_to_go[last * d + k] = out.cost[last * d + k];
    }
    for t in (0..last).rev() {
        for k in 0..d {
            let best = out
                .neighbors(k)
                .into_iter()
                .map(|c| out.cost_to_go[(t + 1) * d + c])
                .fold(f64::INFINITY, f64::min);
            out.cost_to_go[t * d + k] = out.cost[t * d + k] + best;
        }
    }
    out
}

/// Yaw-cell sequence chosen by the forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawSequence {
    pub start_cell: usize,
    pub cells: Vec<usize>,
}

/// Greedy descent of `V` from the cell nearest `theta0`. Ties prefer the
/// smallest yaw change, then the smallest index.
pub fn forward_pass(space: &YawStateSpace, theta0: f64) -> YawSequence {
    let start_cell = space.cell_of_yaw(theta0);
    let mut prev = start_cell;
    let mut cells = Vec::with_capacity(space.steps);
    for t in 0..space.steps {
        let mut best = prev;
        let mut best_v = f64::INFINITY;
        // neighbors() is already ordered by the tie-break rule
        for c in space.neighbors(prev) {
            let v = space.cost_to_go(t, c);
            if v < best_v {
                best_v = v;
                best = c;
            }
        }
        cells.push(best);
        prev = best;
    }
    YawSequence { start_cell, cells }
}

/// Path cost accumulated from the last step backwards, the same order the
/// backward pass sums in.
pub fn accumulated_cost(space: &YawStateSpace, cells: &[usize]) -> f64 {
    cells
        .iter()
        .enumerate()
        .rev()
        .fold(None, |acc: Option<f64>, (t, &k)| {
            Some(match acc {
                None => space.cost(t, k),
                Some(rest) => space.cost(t, k) + rest,
            })
        })
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub horizon: f64,
    pub step: f64,
    pub disc: SphericalDiscretization,
    pub neighbor_radius: usize,
    pub occlusion_samples: usize,
    /// Minimum clearance of a formation target; blocked targets are raised
    /// in tilt until they reach it.
    pub target_clearance: f64,
    pub lift_step: f64,
    pub max_lift_tilt: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            step: 2.0,
            disc: SphericalDiscretization::default(),
            neighbor_radius: 1,
            occlusion_samples: DEFAULT_OCCLUSION_SAMPLES,
            target_clearance: 3.0,
            lift_step: 2.5f64.to_radians(),
            max_lift_tilt: 85f64.to_radians(),
        }
    }
}

/// Raises a formation slot in tilt (keeping range and yaw) until the point
/// has at least `clearance` to the nearest obstacle.
pub fn lift_to_clearance(world: &WorldModel, actor: &Vec3, coord: &SphericalCoord, params: &PlannerParams) -> Vec3 {
    let mut phi = coord.phi;
    loop {
        let p = spherical_to_world(actor, &SphericalCoord::new(coord.rho, coord.theta, phi));
        if world.clearance(&p) >= params.target_clearance || phi >= params.max_lift_tilt {
            return p;
        }
        phi = (phi + params.lift_step).min(params.max_lift_tilt);
    }
}

/// Fills the cost map: for each step and yaw cell the whole formation is
/// placed at that yaw and charged for occlusion, obstacle volume and the
/// distance its targets must be lifted to stay clear.
pub fn build_cost_map(
    grid: &SphericalCostGrid,
    world: &WorldModel,
    actor_path: &ActorPath,
    spec: &FormationSpec,
    params: &PlannerParams,
) -> Result<YawStateSpace> {
    if grid.steps() != actor_path.len() {
        return Err(Error::ShapeMismatch(format!(
            "spherical grid has {} steps, actor path {}",
            grid.steps(),
            actor_path.len()
        )));
    }
    let d = grid.disc.yaw_cells;
    let rows: Vec<Vec<f64>> = actor_path
        .positions
        .iter()
        .enumerate()
        .map(|(t, actor)| {
            (0..d)
                .map(|k| {
                    let theta = grid.disc.yaw_of_cell(k);
                    let mut occlusion = 0.0;
                    let mut obstacle = 0.0;
                    let mut deviation = 0.0;
                    for i in 0..spec.n {
                        let coord = spec.drone_coord(i, theta);
                        let ideal = spherical_to_world(actor, &coord);
                        let placed = lift_to_clearance(world, actor, &coord, params);
                        occlusion += segment_occlusion(&world.grid, &placed, actor, params.occlusion_samples);
                        obstacle += grid.column_cost_at(t, &ideal);
                        deviation += (placed - ideal).norm();
                    }
                    spec.lambda_occlusion * occlusion + spec.lambda_obstacle * obstacle + spec.lambda_formation * deviation
                })
                .collect()
        })
        .collect();
    YawStateSpace::from_rows(&rows, params.neighbor_radius)
}

/// Output of one centralized planning cycle. Index 0 of `theta_sequence`,
/// `actor_path` and `targets` is the current time; the remaining entries
/// are the planned steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationPlan {
    pub start_yaw: f64,
    pub start_cell: usize,
    pub cells: Vec<usize>,
    pub theta_sequence: Vec<f64>,
    pub actor_path: ActorPath,
    pub targets: TrajectorySet,
    pub space: Option<YawStateSpace>,
}

impl FormationPlan {
    pub fn steps(&self) -> usize {
        self.cells.len()
    }
}

fn lifted_targets(
    world: &WorldModel,
    actor_path: &ActorPath,
    spec: &FormationSpec,
    theta_sequence: &[f64],
    params: &PlannerParams,
) -> Result<TrajectorySet> {
    let ideal = formation_targets(actor_path, spec, theta_sequence)?;
    let waypoints = (0..spec.n)
        .map(|i| {
            actor_path
                .positions
                .iter()
                .zip(theta_sequence)
                .map(|(a, &theta)| lift_to_clearance(world, a, &spec.drone_coord(i, theta), params))
                .collect()
        })
        .collect();
    TrajectorySet::new(ideal.timestamps, waypoints, actor_path)
}

fn forecast(state: &ActorState, t0: f64, params: &PlannerParams) -> Result<ActorPath> {
    let path = forecast_path_from(state, t0, params.horizon, params.step)?;
    if path.len() < 2 {
        return Err(Error::InvalidParameter(
            "planning horizon must cover at least one step".into(),
        ));
    }
    Ok(path)
}

/// One full planning cycle: forecast, spherical grid, cost map, backward
/// and forward passes.
pub fn plan(
    world: &WorldModel,
    actor_state: &ActorState,
    spec: &FormationSpec,
    theta0: f64,
    t0: f64,
    params: &PlannerParams,
) -> Result<FormationPlan> {
    let path = forecast(actor_state, t0, params)?;
    let planned = ActorPath {
        timestamps: path.timestamps[1..].to_vec(),
        positions: path.positions[1..].to_vec(),
    };
    let grid = build_spherical_grid(world, &planned, spec, &params.disc)?;
    let space = backward_pass(&build_cost_map(&grid, world, &planned, spec, params)?);
    let seq = forward_pass(&space, theta0);
    let mut theta_sequence = Vec::with_capacity(seq.cells.len() + 1);
    theta_sequence.push(theta0);
    theta_sequence.extend(seq.cells.iter().map(|&k| space.yaw_of_cell(k)));
    let targets = lifted_targets(world, &path, spec, &theta_sequence, params)?;
    Ok(FormationPlan {
        start_yaw: theta0,
        start_cell: seq.start_cell,
        cells: seq.cells,
        theta_sequence,
        actor_path: path,
        targets,
        space: Some(space),
    })
}

/// Baseline that keeps the formation yaw frozen at `theta0`; obstacles are
/// only avoided by lifting targets in altitude.
pub fn plan_fixed_yaw(
    world: &WorldModel,
    actor_state: &ActorState,
    spec: &FormationSpec,
    theta0: f64,
    t0: f64,
    params: &PlannerParams,
) -> Result<FormationPlan> {
    let path = forecast(actor_state, t0, params)?;
    let d = params.disc.yaw_cells;
    let step = std::f64::consts::TAU / d as f64;
    let cell = ((crate::geometry::wrap_angle(theta0) + std::f64::consts::PI) / step).round() as usize % d;
    let theta_sequence = vec![theta0; path.len()];
    let targets = lifted_targets(world, &path, spec, &theta_sequence, params)?;
    Ok(FormationPlan {
        start_yaw: theta0,
        start_cell: cell,
        cells: vec![cell; path.len() - 1],
        theta_sequence,
        actor_path: path,
        targets,
        space: None,
    })
}

/// One JSON-lines record of the planner trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTraceRecord {
    pub t: f64,
    pub cell: usize,
    pub yaw: f64,
    pub cost: Vec<f64>,
    pub cost_to_go: Vec<f64>,
}

pub fn trace_records(plan: &FormationPlan) -> Vec<PlanTraceRecord> {
    let Some(space) = &plan.space else {
        return Vec::new();
    };
    plan.cells
        .iter()
        .enumerate()
        .map(|(t, &cell)| PlanTraceRecord {
            t: plan.actor_path.timestamps[t + 1],
            cell,
            yaw: space.yaw_of_cell(cell),
            cost: space.cost_row(t).to_vec(),
            cost_to_go: space.cost_to_go_row(t).to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::OccupancyGrid;
    use nalgebra::Matrix6;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Every neighbor-feasible path starting from `start` (or from any cell
    /// when `start` is None), with its cost summed back to front.
    fn enumerate_paths(space: &YawStateSpace, start: Option<usize>) -> Vec<(Vec<usize>, f64)> {
        fn rec(space: &YawStateSpace, t: usize, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
            if t == space.steps() {
                let mut total: Option<f64> = None;
                for (s, &k) in path.iter().enumerate().rev() {
                    total = Some(match total {
                        None => space.cost(s, k),
                        Some(rest) => space.cost(s, k) + rest,
                    });
                }
                out.push((path.clone(), total.unwrap()));
                return;
            }
            let prev = *path.last().unwrap();
            for c in 0..space.yaw_cells() {
                if space.cell_distance(prev, c) <= space.neighbor_radius() {
                    path.push(c);
                    rec(space, t + 1, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        match start {
            Some(s) => {
                for c in 0..space.yaw_cells() {
                    if space.cell_distance(s, c) <= space.neighbor_radius() {
                        rec(space, 1, &mut vec![c], &mut out);
                    }
                }
            }
            None => {
                for c in 0..space.yaw_cells() {
                    rec(space, 1, &mut vec![c], &mut out);
                }
            }
        }
        out
    }

    #[test]
    fn backward_pass_examples() {
        let one = backward_pass(&YawStateSpace::from_rows(&[vec![3.0, 1.0, 2.0, 5.0]], 1).unwrap());
        assert_eq!(one.cost_to_go_row(0), one.cost_row(0));
        let zero = backward_pass(&YawStateSpace::from_rows(&vec![vec![0.0; 8]; 5], 1).unwrap());
        assert!(zero.cost_to_go.iter().all(|&v| v == 0.0));

        let space = backward_pass(&YawStateSpace::from_rows(&[vec![1.0, 5.0, 2.0], vec![4.0, 0.0, 3.0]], 1).unwrap());
        assert_eq!(space.cost_to_go_row(0), &[1.0, 5.0, 2.0]);
        assert_eq!(space.cost_to_go_row(1), &[4.0, 0.0, 3.0]);
        let paths = enumerate_paths(&space, None);
        assert_eq!(paths.len(), 9);
        let best = paths.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert_eq!(best, 1.0);
    }

    #[test]
    fn forward_pass_examples() {
        let space = backward_pass(&YawStateSpace::from_rows(&[vec![1.0, 5.0, 2.0], vec![4.0, 0.0, 3.0]], 1).unwrap());
        let seq = forward_pass(&space, space.yaw_of_cell(0));
        assert_eq!(seq.cells, vec![0, 1]);
        let best = enumerate_paths(&space, Some(0))
            .into_iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0, seq.cells);

        let flat = backward_pass(&YawStateSpace::from_rows(&vec![vec![0.0; 8]; 5], 1).unwrap());
        let seq = forward_pass(&flat, 0.8);
        assert_eq!(seq.start_cell, 5);
        assert!(seq.cells.iter().all(|&c| c == 5));
    }

    #[test]
    fn ties_prefer_small_rotation_then_low_index() {
        // cells 2 and 4 tie; both are one step from 3, so the lower index wins
        let space = backward_pass(&YawStateSpace::from_rows(&[vec![9.0, 9.0, 1.0, 5.0, 1.0, 9.0, 9.0, 9.0]], 1).unwrap());
        assert_eq!(forward_pass(&space, space.yaw_of_cell(3)).cells, vec![2]);
        let space = backward_pass(&YawStateSpace::from_rows(&[vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]], 1).unwrap());
        assert_eq!(forward_pass(&space, space.yaw_of_cell(3)).cells, vec![3]);
    }

    #[test]
    fn snapping_and_wraparound() {
        let space = YawStateSpace::from_rows(&vec![vec![0.0; 8]; 2], 1).unwrap();
        assert_eq!(space.cell_of_yaw(-PI), 0);
        assert_eq!(space.cell_of_yaw(PI - 0.1), 0);
        assert_eq!(space.cell_of_yaw(0.0), 4);
        assert_eq!(space.cell_of_yaw(FRAC_PI_2), 6);
        assert_eq!(space.neighbors(0), vec![0, 1, 7]);
        assert_eq!(space.cell_distance(7, 0), 1);
    }

    #[test]
    fn rejects_malformed_maps() {
        assert!(YawStateSpace::from_rows(&[], 1).is_err());
        assert!(YawStateSpace::from_rows(&[vec![1.0, 2.0], vec![1.0]], 1).is_err());
        assert!(YawStateSpace::from_rows(&[vec![1.0, -2.0]], 1).is_err());
        assert!(YawStateSpace::from_rows(&[vec![1.0, 2.0]], 0).is_err());
    }

    fn random_space(rng: &mut impl Rng, d: usize, t: usize) -> YawStateSpace {
        let rows: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        backward_pass(&YawStateSpace::from_rows(&rows, 1).unwrap())
    }

    #[test]
    fn dp_matches_exhaustive_search() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for d in 3..=8 {
            for t in 1..=6 {
                for _ in 0..5 {
                    let space = random_space(&mut rng, d, t);
                    let global = enumerate_paths(&space, None).into_iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                    let best_v = space.cost_to_go_row(0).iter().copied().fold(f64::INFINITY, f64::min);
                    assert_eq!(global, best_v);

                    let theta0 = rng.random_range(-PI..PI);
                    let seq = forward_pass(&space, theta0);
                    let constrained = enumerate_paths(&space, Some(seq.start_cell))
                        .into_iter()
                        .map(|p| p.1)
                        .fold(f64::INFINITY, f64::min);
                    assert_eq!(accumulated_cost(&space, &seq.cells), constrained);
                    let mut prev = seq.start_cell;
                    for &c in &seq.cells {
                        assert!(space.cell_distance(prev, c) <= 1);
                        prev = c;
                    }
                }
            }
        }
    }

    #[test]
    fn cost_to_go_is_a_fixed_point() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let space = random_space(&mut rng, 8, 6);
        for t in 0..5 {
            for k in 0..8 {
                let min_next = space.neighbors(k).into_iter().map(|c| space.cost_to_go(t + 1, c)).fold(f64::INFINITY, f64::min);
                assert_eq!(space.cost_to_go(t, k), space.cost(t, k) + min_next);
            }
        }
    }

    fn static_actor() -> ActorState {
        ActorState::new(Vec3::new(0.0, 0.0, 1.0), Vec3::zeros(), Matrix6::identity())
    }

    fn column_world() -> WorldModel {
        // 2 m wide column 10 m north of the origin
        let mut g = OccupancyGrid::new(Vec3::new(-16.0, -16.0, 0.0), 0.5, [64, 64, 32]).unwrap();
        g.add_box(Vec3::new(-1.0, 9.0, 0.0), Vec3::new(1.0, 11.0, 16.0), 1.0);
        WorldModel::new(g, 0.5).unwrap()
    }

    #[test]
    fn empty_world_cost_map_is_rotationally_symmetric() {
        let spec = FormationSpec::new(2, 10.0, 15f64.to_radians()).unwrap();
        let params = PlannerParams::default();
        let p = plan(&WorldModel::empty(), &static_actor(), &spec, 0.3, 0.0, &params).unwrap();
        let space = p.space.as_ref().unwrap();
        for t in 0..space.steps() {
            let row = space.cost_row(t);
            assert!(row.iter().all(|&c| c == row[0]));
        }
        assert_eq!(p.steps(), 5);
        assert_eq!(p.targets.steps(), 6);
        assert!(p.cells.iter().all(|&c| c == p.start_cell));
    }

    #[test]
    fn column_north_is_avoided() {
        let spec = FormationSpec::new(2, 10.0, 15f64.to_radians()).unwrap();
        let params = PlannerParams::default();
        let world = column_world();
        let p = plan(&world, &static_actor(), &spec, 0.0, 0.0, &params).unwrap();
        let space = p.space.as_ref().unwrap();
        let disc = &params.disc;
        // oracle: which yaw cells put some drone straight into the column
        let blocked: Vec<bool> = (0..8)
            .map(|k| {
                (0..spec.n).any(|i| {
                    let coord = spec.drone_coord(i, disc.yaw_of_cell(k));
                    let target = spherical_to_world(&Vec3::new(0.0, 0.0, 1.0), &coord);
                    world.clearance(&target) < 1.0
                })
            })
            .collect();
        assert!(blocked.iter().any(|&b| b));
        for t in 0..space.steps() {
            let row = space.cost_row(t);
            let argmin = (0..8).min_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!(!blocked[argmin], "step {t} picked blocked cell {argmin}: {row:?}");
        }
        // starting with drone 2 in the column, the formation rotates away
        assert!(p.cells.iter().any(|&c| c != p.start_cell));
    }

    #[test]
    fn obstacle_weight_scales_its_contribution() {
        let world = column_world();
        let params = PlannerParams::default();
        let base = FormationSpec::new(2, 10.0, 15f64.to_radians()).unwrap();
        let a = base.with_weights(0.0, 10.0, 0.0).unwrap();
        let b = base.with_weights(0.0, 20.0, 0.0).unwrap();
        let pa = plan(&world, &static_actor(), &a, 0.0, 0.0, &params).unwrap();
        let pb = plan(&world, &static_actor(), &b, 0.0, 0.0, &params).unwrap();
        let (sa, sb) = (pa.space.unwrap(), pb.space.unwrap());
        for t in 0..sa.steps() {
            for k in 0..8 {
                assert_eq!(sb.cost(t, k), 2.0 * sa.cost(t, k));
            }
        }
    }

    #[test]
    fn lift_clears_blocked_targets() {
        let world = column_world();
        let params = PlannerParams::default();
        let actor = Vec3::new(0.0, 0.0, 1.0);
        let coord = SphericalCoord::new(10.0, FRAC_PI_2, 0.2);
        let p = lift_to_clearance(&world, &actor, &coord, &params);
        assert!(world.clearance(&p) >= params.target_clearance || p.z > 9.0);
        let free = SphericalCoord::new(10.0, -FRAC_PI_2, 0.2);
        assert_eq!(lift_to_clearance(&world, &actor, &free, &params), spherical_to_world(&actor, &free));
    }

    #[test]
    fn plans_are_deterministic_and_traceable() {
        let spec = FormationSpec::new(3, 10.0, 0.3).unwrap();
        let params = PlannerParams::default();
        let a = plan(&column_world(), &static_actor(), &spec, 1.0, 4.0, &params).unwrap();
        let b = plan(&column_world(), &static_actor(), &spec, 1.0, 4.0, &params).unwrap();
        assert_eq!(a, b);
        let trace = trace_records(&a);
        assert_eq!(trace.len(), 5);
        assert_eq!(trace[0].t, 6.0);
        assert_eq!(trace[4].cost.len(), 8);
        let fixed = plan_fixed_yaw(&column_world(), &static_actor(), &spec, 1.0, 4.0, &params).unwrap();
        assert!(fixed.theta_sequence.iter().all(|&y| y == 1.0));
        assert!(trace_records(&fixed).is_empty());
    }
}
