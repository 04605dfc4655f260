//! Shared geometry: vectors, spherical coordinates around the actor and
//! camera-carrying drone poses.
//!
//! World frame is right-handed with x forward, y left and z up. Angles are
//! radians everywhere inside the library.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can return TAU itself for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Position relative to the actor in range / azimuth / elevation form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub rho: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalCoord {
    /// Builds a coordinate with `theta` wrapped and `phi` clamped to `[-π/2, π/2]`.
    pub fn new(rho: f64, theta: f64, phi: f64) -> Self {
        Self {
            rho: rho.max(0.0),
            theta: wrap_angle(theta),
            phi: phi.clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }

    pub fn unit_direction(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vec3::new(ct * cp, st * cp, sp)
    }
}

pub fn spherical_to_world(actor_pos: &Vec3, s: &SphericalCoord) -> Vec3 {
    actor_pos + s.rho * s.unit_direction()
}

pub fn world_to_spherical(actor_pos: &Vec3, p: &Vec3) -> Result<SphericalCoord> {
    let d = p - actor_pos;
    let rho = d.norm();
    if rho == 0.0 || !rho.is_finite() {
        return Err(Error::DegenerateRadius);
    }
    let horizontal = d.x.hypot(d.y);
    Ok(SphericalCoord {
        rho,
        theta: wrap_angle(d.y.atan2(d.x)),
        phi: d.z.atan2(horizontal),
    })
}

/// A drone pose: position, heading about z and downward gimbal tilt.
///
/// Positive `camera_tilt` pitches the optical axis below the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub psi: f64,
    pub camera_tilt: f64,
}

impl Pose {
    pub fn new(position: Vec3, psi: f64, camera_tilt: f64) -> Self {
        Self {
            position,
            psi: wrap_angle(psi),
            camera_tilt,
        }
    }

    /// Pose at `position` with heading and gimbal pointed at `target`.
    pub fn looking_at(position: Vec3, target: &Vec3) -> Self {
        let d = target - position;
        let horizontal = d.x.hypot(d.y);
        Self::new(position, d.y.atan2(d.x), (-d.z).atan2(horizontal))
    }

    pub fn optical_axis(&self) -> Vec3 {
        let (sp, cp) = self.psi.sin_cos();
        let (st, ct) = self.camera_tilt.sin_cos();
        Vec3::new(cp * ct, sp * ct, -st)
    }

    /// Rotation taking world vectors into the camera frame
    /// (x right, y down, z along the optical axis).
    pub fn world_to_camera(&self) -> Matrix3<f64> {
        let forward = self.optical_axis();
        let (sp, cp) = self.psi.sin_cos();
        let right = Vec3::new(sp, -cp, 0.0);
        let down = forward.cross(&right);
        Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn spherical_examples() {
        let o = Vec3::zeros();
        let p = spherical_to_world(&o, &SphericalCoord::new(10.0, 0.0, 0.0));
        assert_abs_diff_eq!(p, Vec3::new(10.0, 0.0, 0.0), epsilon = 1e-12);
        let p = spherical_to_world(&o, &SphericalCoord::new(10.0, 0.0, FRAC_PI_2));
        assert_abs_diff_eq!(p, Vec3::new(0.0, 0.0, 10.0), epsilon = 1e-12);
        let a = Vec3::new(1.0, 2.0, 3.0);
        let p = spherical_to_world(&a, &SphericalCoord::new(10.0, 0.0, 15f64.to_radians()));
        assert_abs_diff_eq!(p, Vec3::new(1.0 + 9.6593, 2.0, 3.0 + 2.5882), epsilon = 1e-4);
    }

    #[test]
    fn inverse_examples() {
        let o = Vec3::zeros();
        let s = world_to_spherical(&o, &Vec3::new(10.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(s.rho, 10.0);
        assert_abs_diff_eq!(s.theta, 0.0);
        assert_abs_diff_eq!(s.phi, 0.0);
        let s = world_to_spherical(&o, &Vec3::new(0.0, 10.0, 0.0)).unwrap();
        assert_abs_diff_eq!(s.theta, FRAC_PI_2, epsilon = 1e-15);
        assert!(matches!(
            world_to_spherical(&o, &o),
            Err(Error::DegenerateRadius)
        ));
    }

    #[test]
    fn wrap_stays_half_open() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-12);
        assert!(wrap_angle(-1e-18) < PI);
    }

    #[test]
    fn camera_axes_for_level_heading() {
        let pose = Pose::looking_at(Vec3::zeros(), &Vec3::new(5.0, 0.0, 0.0));
        let r = pose.world_to_camera();
        assert_abs_diff_eq!(r * Vec3::new(1.0, 0.0, 0.0), Vec3::z(), epsilon = 1e-12);
        assert_abs_diff_eq!(r * Vec3::new(0.0, 0.0, 1.0), -Vec3::y(), epsilon = 1e-12);
        let down = Pose::looking_at(Vec3::new(0.0, 0.0, 10.0), &Vec3::new(10.0, 0.0, 0.0));
        assert_abs_diff_eq!(down.camera_tilt, PI / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn round_trip_1000_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let a = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..10.0));
            let p = a + Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let s = world_to_spherical(&a, &p).unwrap();
            worst = worst.max((spherical_to_world(&a, &s) - p).norm());
        }
        assert!(worst < 1e-9, "worst round-trip error {worst}");
    }

    proptest! {
        #[test]
        fn radius_is_preserved(rho in 0.0f64..100.0, theta in -10.0f64..10.0, phi in -1.5f64..1.5,
                               ax in -100.0f64..100.0, ay in -100.0f64..100.0, az in -10.0f64..10.0) {
            let a = Vec3::new(ax, ay, az);
            let p = spherical_to_world(&a, &SphericalCoord::new(rho, theta, phi));
            prop_assert!(((p - a).norm() - rho).abs() < 1e-9);
        }

        #[test]
        fn inverse_composes_to_identity(dx in -30.0f64..30.0, dy in -30.0f64..30.0, dz in -30.0f64..30.0) {
            prop_assume!(dx.abs() + dy.abs() + dz.abs() > 1e-3);
            let a = Vec3::new(3.0, -2.0, 1.0);
            let p = a + Vec3::new(dx, dy, dz);
            let s = world_to_spherical(&a, &p).unwrap();
            prop_assert!(s.theta >= -PI && s.theta < PI);
            prop_assert!((spherical_to_world(&a, &s) - p).norm() < 1e-9);
        }
    }
}
