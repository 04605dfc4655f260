//! Constant-velocity Kalman filter for the actor and its trajectory forecast.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const DEFAULT_ACCEL_SIGMA: f64 = 1.0;
pub const DEFAULT_OBS_SIGMA: f64 = 0.3;

/// Actor position/velocity estimate with a 6×6 covariance ordered
/// `[x, y, z, vx, vy, vz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub covariance: Matrix6<f64>,
}

impl ActorState {
    pub fn new(position: Vec3, velocity: Vec3, covariance: Matrix6<f64>) -> Self {
        Self {
            position,
            velocity,
            covariance,
        }
    }

    /// State initialised from a single position fix, velocity unknown.
    pub fn from_observation(position: Vec3, position_var: f64, velocity_var: f64) -> Self {
        let mut covariance = Matrix6::zeros();
        for a in 0..3 {
            covariance[(a, a)] = position_var;
            covariance[(a + 3, a + 3)] = velocity_var;
        }
        Self::new(position, Vec3::zeros(), covariance)
    }

    fn mean(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }

    fn from_mean(mean: &Vector6<f64>, covariance: Matrix6<f64>) -> Self {
        Self {
            position: Vec3::new(mean[0], mean[1], mean[2]),
            velocity: Vec3::new(mean[3], mean[4], mean[5]),
            covariance: symmetrize(covariance),
        }
    }
}

fn symmetrize(m: Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Propagates the state by `dt` seconds under white (piecewise-constant)
/// acceleration noise with variance `accel_var` per axis.
pub fn kf_predict(state: &ActorState, dt: f64, accel_var: f64) -> Result<ActorState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveTimeStep(dt));
    }
    let mut f = Matrix6::identity();
    for a in 0..3 {
        f[(a, a + 3)] = dt;
    }
    let q_pp = dt.powi(4) / 4.0 * accel_var;
    let q_pv = dt.powi(3) / 2.0 * accel_var;
    let q_vv = dt * dt * accel_var;
    let mut q = Matrix6::zeros();
    for a in 0..3 {
        q[(a, a)] = q_pp;
        q[(a, a + 3)] = q_pv;
        q[(a + 3, a)] = q_pv;
        q[(a + 3, a + 3)] = q_vv;
    }
    let mean = f * state.mean();
    let cov = f * state.covariance * f.transpose() + q;
    Ok(ActorState::from_mean(&mean, cov))
}

/// Position measurement update with isotropic variance `obs_var`.
/// Uses the Joseph form so the covariance stays symmetric PSD.
pub fn kf_update(state: &ActorState, observation: &Vec3, obs_var: f64) -> Result<ActorState> {
    if !(obs_var > 0.0) {
        return Err(Error::NonPositiveNoise(obs_var));
    }
    if !observation.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteObservation(*observation));
    }
    let h = Matrix3x6::<f64>::identity();
    let p = &state.covariance;
    let innovation = observation - state.position;
    let s = h * p * h.transpose() + Matrix3::identity() * obs_var;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("singular innovation covariance".into()))?;
    let k = p * h.transpose() * s_inv;
    let mean = state.mean() + k * innovation;
    let i_kh = Matrix6::identity() - k * h;
    let cov = i_kh * p * i_kh.transpose() + k * (Matrix3::identity() * obs_var) * k.transpose();
    Ok(ActorState::from_mean(&mean, cov))
}

/// Forecast actor trajectory on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorPath {
    pub timestamps: Vec<f64>,
    pub positions: Vec<Vec3>,
}

impl ActorPath {
    pub fn new(timestamps: Vec<f64>, positions: Vec<Vec3>) -> Result<Self> {
        if timestamps.len() != positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} timestamps but {} positions",
                timestamps.len(),
                positions.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "actor path timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            timestamps,
            positions,
        })
    }

    /// Path that stays at one position for `len` steps of `dt`.
    pub fn stationary(position: Vec3, len: usize, dt: f64) -> Self {
        Self {
            timestamps: (0..len).map(|k| k as f64 * dt).collect(),
            positions: vec![position; len],
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Linear interpolation, clamped at both ends.
    pub fn position_at(&self, t: f64) -> Vec3 {
        interpolate_track(&self.timestamps, &self.positions, t)
    }
}

pub(crate) fn interpolate_track(timestamps: &[f64], positions: &[Vec3], t: f64) -> Vec3 {
    match timestamps.len() {
        0 => Vec3::zeros(),
        1 => positions[0],
        n => {
            if t <= timestamps[0] {
                return positions[0];
            }
            if t >= timestamps[n - 1] {
                return positions[n - 1];
            }
            let hi = timestamps.partition_point(|&s| s <= t).min(n - 1);
            let lo = hi - 1;
            let w = (t - timestamps[lo]) / (timestamps[hi] - timestamps[lo]);
            positions[lo] * (1.0 - w) + positions[hi] * w
        }
    }
}

/// Number of grid points in `[0, horizon]` at spacing `dt`, tolerant to
/// floating point noise in the ratio.
pub fn horizon_steps(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) + 1e-9).floor() as usize + 1
}

/// Constant-velocity extrapolation of the mean state at `t0 + k·dt`.
pub fn forecast_path_from(state: &ActorState, t0: f64, horizon: f64, dt: f64) -> Result<ActorPath> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveTimeStep(dt));
    }
    if !(horizon >= dt) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} shorter than step {dt}"
        )));
    }
    let steps = horizon_steps(horizon, dt);
    let timestamps: Vec<f64> = (0..steps).map(|k| t0 + k as f64 * dt).collect();
    let positions = (0..steps)
        .map(|k| state.position + state.velocity * (k as f64 * dt))
        .collect();
    Ok(ActorPath {
        timestamps,
        positions,
    })
}

pub fn forecast_path(state: &ActorState, horizon: f64, dt: f64) -> Result<ActorPath> {
    forecast_path_from(state, 0.0, horizon, dt)
}

/// Stateful tracker wrapping the filter with fixed noise parameters.
#[derive(Debug, Clone)]
pub struct ActorTracker {
    pub accel_sigma: f64,
    pub obs_sigma: f64,
    state: Option<ActorState>,
    last_time: f64,
}

impl Default for ActorTracker {
    fn default() -> Self {
        Self::new(DEFAULT_ACCEL_SIGMA, DEFAULT_OBS_SIGMA)
    }
}

impl ActorTracker {
    pub fn new(accel_sigma: f64, obs_sigma: f64) -> Self {
        Self {
            accel_sigma,
            obs_sigma,
            state: None,
            last_time: 0.0,
        }
    }

    pub fn state(&self) -> Option<&ActorState> {
        self.state.as_ref()
    }

    pub fn observe(&mut self, t: f64, observation: &Vec3) -> Result<&ActorState> {
        let obs_var = self.obs_sigma * self.obs_sigma;
        let next = match &self.state {
            None => ActorState::from_observation(*observation, obs_var, 4.0),
            Some(s) => {
                let dt = t - self.last_time;
                let predicted = if dt > 0.0 {
                    kf_predict(s, dt, self.accel_sigma * self.accel_sigma)?
                } else {
                    s.clone()
                };
                kf_update(&predicted, observation, obs_var)?
            }
        };
        self.last_time = t;
        Ok(self.state.insert(next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn min_eigen(m: &Matrix6<f64>) -> f64 {
        m.symmetric_eigenvalues().min()
    }

    fn moving(pos: Vec3, vel: Vec3) -> ActorState {
        ActorState::new(pos, vel, Matrix6::identity())
    }

    #[test]
    fn predict_examples() {
        let s = kf_predict(&moving(Vec3::zeros(), Vec3::x()), 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(s.position, Vec3::x(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.velocity, Vec3::x(), epsilon = 1e-15);
        let still = kf_predict(&moving(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()), 7.5, 1.0).unwrap();
        assert_eq!(still.position, Vec3::new(1.0, 2.0, 3.0));
        let start = moving(Vec3::zeros(), Vec3::x());
        let next = kf_predict(&start, 0.5, 0.2).unwrap();
        assert!(next.covariance.trace() > start.covariance.trace());
        assert!(kf_predict(&start, 0.0, 1.0).is_err());
        assert!(kf_predict(&start, -1.0, 1.0).is_err());
    }

    #[test]
    fn update_examples() {
        let prior = moving(Vec3::zeros(), Vec3::zeros());
        let obs = Vec3::new(1.0, -2.0, 0.5);
        let tight = kf_update(&prior, &obs, 1e-12).unwrap();
        assert_abs_diff_eq!(tight.position, obs, epsilon = 1e-9);

        let same = kf_update(&prior, &Vec3::zeros(), 1.0).unwrap();
        assert_eq!(same.position, Vec3::zeros());
        assert!(same.covariance.trace() < prior.covariance.trace());
        // prior var 1, obs var 1 => posterior var 1/2
        assert_abs_diff_eq!(same.covariance[(0, 0)], 0.5, epsilon = 1e-12);

        assert!(kf_update(&prior, &Vec3::new(f64::NAN, 0.0, 0.0), 1.0).is_err());
        assert!(kf_update(&prior, &obs, 0.0).is_err());
    }

    #[test]
    fn update_shrinks_position_block() {
        let mut prior = moving(Vec3::zeros(), Vec3::x());
        prior.covariance[(0, 3)] = 0.3;
        prior.covariance[(3, 0)] = 0.3;
        let post = kf_update(&prior, &Vec3::new(0.2, 0.1, 0.0), 0.09).unwrap();
        let diff = prior.covariance.fixed_view::<3, 3>(0, 0) - post.covariance.fixed_view::<3, 3>(0, 0);
        assert!(diff.symmetric_eigenvalues().min() >= -1e-12);
    }

    #[test]
    fn forecast_examples() {
        let path = forecast_path(&moving(Vec3::zeros(), Vec3::x()), 10.0, 2.0).unwrap();
        assert_eq!(path.len(), 6);
        for (k, p) in path.positions.iter().enumerate() {
            assert_abs_diff_eq!(*p, Vec3::new(2.0 * k as f64, 0.0, 0.0), epsilon = 1e-12);
            assert_eq!(path.timestamps[k], 2.0 * k as f64);
        }
        let still = forecast_path(&moving(Vec3::new(3.0, 3.0, 1.0), Vec3::zeros()), 10.0, 0.5).unwrap();
        assert_eq!(still.len(), 21);
        assert!(still.positions.iter().all(|p| *p == Vec3::new(3.0, 3.0, 1.0)));
        assert!(forecast_path(&moving(Vec3::zeros(), Vec3::x()), 1.0, 2.0).is_err());
    }

    #[test]
    fn forecast_timestamps_follow_grid() {
        let path = forecast_path_from(&moving(Vec3::zeros(), Vec3::x()), 3.3, 10.0, 2.0).unwrap();
        for (k, t) in path.timestamps.iter().enumerate() {
            assert_eq!(*t, 3.3 + k as f64 * 2.0);
        }
    }

    #[test]
    fn noiseless_linear_walker_is_recovered() {
        let mut tracker = ActorTracker::new(0.0, 1e-4);
        let truth = |t: f64| Vec3::new(1.0 + 1.5 * t, -2.0 + 0.5 * t, 1.0);
        let mut errors = Vec::new();
        for k in 0..10 {
            let t = k as f64 * 0.1;
            let s = tracker.observe(t, &truth(t)).unwrap();
            errors.push((s.position - truth(t)).norm() + (s.velocity - Vec3::new(1.5, 0.5, 0.0)).norm());
        }
        for w in errors[1..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "error not monotone: {errors:?}");
        }
        let state = tracker.state().unwrap();
        let path = forecast_path_from(state, 0.9, 10.0, 2.0).unwrap();
        for (t, p) in path.timestamps.iter().zip(&path.positions) {
            assert!((p - truth(*t)).norm() < 1e-6, "at {t}: {p:?}");
        }
    }

    #[test]
    fn covariance_stays_psd_under_long_sequences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut s = moving(Vec3::zeros(), Vec3::zeros());
        for _ in 0..500 {
            s = kf_predict(&s, rng.random_range(0.01..2.0), rng.random_range(0.0..3.0)).unwrap();
            let obs = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
            s = kf_update(&s, &obs, rng.random_range(1e-6..1.0)).unwrap();
            let asym = (s.covariance - s.covariance.transpose()).abs().max();
            assert!(asym <= 1e-9);
            assert!(min_eigen(&s.covariance) >= -1e-9);
        }
    }

    #[test]
    fn default_tracker_follows_walker() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, DEFAULT_OBS_SIGMA).unwrap();
        let mut tracker = ActorTracker::default();
        let mut worst: f64 = 0.0;
        for k in 0..300 {
            let t = k as f64 * 0.1;
            let truth = Vec3::new(1.5 * t, 0.0, 1.0);
            let obs = truth + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            let s = tracker.observe(t, &obs).unwrap();
            if k > 20 {
                worst = worst.max((s.position - truth).norm());
            }
        }
        assert!(worst < 0.5, "worst tracking error {worst}");
    }
}
