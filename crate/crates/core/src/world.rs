//! Voxel occupancy world and the signed-distance field derived from it.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const DEFAULT_OCCUPANCY_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_DISTANCE: f64 = 1000.0;

/// Regular axis-aligned voxel lattice. Voxel `(i, j, k)` spans
/// `origin + [i, i+1) * voxel_size` along x (likewise y, z) and its value is
/// attached to the voxel center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl Lattice {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "voxel_size must be positive, got {voxel_size}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be positive, got {dims:?}"
            )));
        }
        if !(origin.x.is_finite() && origin.y.is_finite() && origin.z.is_finite()) {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index; x is the slowest axis, z the fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin
            + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    pub fn max_corner(&self) -> Vec3 {
        self.origin
            + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64)
                * self.voxel_size
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let hi = self.max_corner();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= hi[a])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        let hi = self.max_corner();
        Vec3::new(
            p.x.clamp(self.origin.x, hi.x),
            p.y.clamp(self.origin.y, hi.y),
            p.z.clamp(self.origin.z, hi.z),
        )
    }

    /// Index of the voxel containing `p`, if any.
    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let u = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if u < 0.0 || u >= self.dims[a] as f64 {
                return None;
            }
            out[a] = u as usize;
        }
        Some(out)
    }

    /// Trilinear interpolation between voxel centers, with indices clamped to
    /// the lattice. Returns the value and its spatial gradient. `p` must lie
    /// inside the lattice box.
    pub fn interpolate(&self, values: &[f64], p: &Vec3) -> (f64, Vec3) {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut active = [false; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let u = (p[a] - self.origin[a]) / self.voxel_size - 0.5;
            let f = u.floor();
            if f < 0.0 {
                lo[a] = 0;
                hi[a] = 0;
            } else if f >= (n - 1) as f64 {
                lo[a] = n - 1;
                hi[a] = n - 1;
            } else {
                lo[a] = f as usize;
                hi[a] = lo[a] + 1;
                frac[a] = u - f;
                active[a] = true;
            }
        }
        let mut value = 0.0;
        let mut grad = Vec3::zeros();
        for corner in 0..8u8 {
            let pick = [corner & 1 != 0, corner & 2 != 0, corner & 4 != 0];
            let mut w = [0.0f64; 3];
            let mut idx = [0usize; 3];
            for a in 0..3 {
                if pick[a] {
                    idx[a] = hi[a];
                    w[a] = frac[a];
                } else {
                    idx[a] = lo[a];
                    w[a] = 1.0 - frac[a];
                }
            }
            let v = values[self.index(idx[0], idx[1], idx[2])];
            value += v * w[0] * w[1] * w[2];
            for a in 0..3 {
                if active[a] {
                    let dw = if pick[a] { 1.0 } else { -1.0 };
                    let others: f64 = (0..3).filter(|&b| b != a).map(|b| w[b]).product();
                    grad[a] += v * dw * others / self.voxel_size;
                }
            }
        }
        (value, grad)
    }
}

/// Occupancy probability per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    lattice: Lattice,
    values: Vec<f64>,
    out_of_bounds: f64,
}

impl OccupancyGrid {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        let lattice = Lattice::new(origin, voxel_size, dims)?;
        Ok(Self {
            values: vec![0.0; lattice.len()],
            lattice,
            out_of_bounds: 0.0,
        })
    }

    pub fn from_values(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} voxel values, got {}",
                lattice.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "occupancy {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            lattice,
            values,
            out_of_bounds: 0.0,
        })
    }

    pub fn with_out_of_bounds(mut self, occupancy: f64) -> Self {
        self.out_of_bounds = occupancy.clamp(0.0, 1.0);
        self
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn out_of_bounds(&self) -> f64 {
        self.out_of_bounds
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.lattice.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, occupancy: f64) {
        let idx = self.lattice.index(i, j, k);
        self.values[idx] = occupancy.clamp(0.0, 1.0);
    }

    /// Raises every voxel whose center lies in the box `[min, max]` to at
    /// least `occupancy`.
    pub fn add_box(&mut self, min: Vec3, max: Vec3, occupancy: f64) {
        let occ = occupancy.clamp(0.0, 1.0);
        let [nx, ny, nz] = self.lattice.dims;
        let vs = self.lattice.voxel_size;
        let range = |a: usize, n: usize| {
            let lo = ((min[a] - self.lattice.origin[a]) / vs - 0.5).ceil().max(0.0) as usize;
            let hi = ((max[a] - self.lattice.origin[a]) / vs - 0.5).floor();
            if hi < 0.0 {
                return lo..lo;
            }
            lo..(hi as usize + 1).min(n)
        };
        for i in range(0, nx) {
            for j in range(1, ny) {
                for k in range(2, nz) {
                    let idx = self.lattice.index(i, j, k);
                    self.values[idx] = self.values[idx].max(occ);
                }
            }
        }
    }

    /// Trilinearly interpolated occupancy; points outside the grid box get
    /// the out-of-bounds occupancy.
    pub fn occupancy_at(&self, p: &Vec3) -> f64 {
        if !self.lattice.contains(p) {
            return self.out_of_bounds;
        }
        self.lattice.interpolate(&self.values, p).0
    }

    pub fn occupancy_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        if !self.lattice.contains(p) {
            return (self.out_of_bounds, Vec3::zeros());
        }
        self.lattice.interpolate(&self.values, p)
    }

    pub fn occupied_count(&self, threshold: f64) -> usize {
        self.values.iter().filter(|&&v| v >= threshold).count()
    }

    /// Serializes to the `OCCGRID v1` text format.
    pub fn to_text(&self) -> String {
        let l = &self.lattice;
        let [nx, ny, nz] = l.dims;
        let mut out = format!(
            "OCCGRID v1 {nx} {ny} {nz} {} {} {} {}\n",
            l.voxel_size, l.origin.x, l.origin.y, l.origin.z
        );
        for row in self.values.chunks(nz) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| Error::GridFormat(format!("missing {what}")))
        };
        if next("magic")? != "OCCGRID" {
            return Err(Error::GridFormat("expected `OCCGRID` magic".into()));
        }
        let version = next("version")?;
        if version != "v1" {
            return Err(Error::GridFormat(format!("unsupported version `{version}`")));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::GridFormat(format!("bad dimension `{s}`: {e}")))
        };
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::GridFormat(format!("bad number `{s}`: {e}")))
        };
        let dims = [
            parse_usize(next("nx")?)?,
            parse_usize(next("ny")?)?,
            parse_usize(next("nz")?)?,
        ];
        let voxel_size = parse_f64(next("voxel_size")?)?;
        let origin = Vec3::new(
            parse_f64(next("ox")?)?,
            parse_f64(next("oy")?)?,
            parse_f64(next("oz")?)?,
        );
        let lattice = Lattice::new(origin, voxel_size, dims)?;
        let values = tokens.map(parse_f64).collect::<Result<Vec<_>>>()?;
        Self::from_values(lattice, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Signed distance (meters) to the nearest obstacle surface, negative inside
/// obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceField {
    lattice: Lattice,
    values: Vec<f64>,
    max_distance: f64,
}

const EDT_INF: f64 = 1e20;

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance, in voxel units, from every voxel center to
/// the nearest voxel flagged as a site. Voxels with no site anywhere get a
/// value `>= EDT_INF`.
fn squared_edt(lattice: &Lattice, site: &[bool]) -> Vec<f64> {
    let mut grid: Vec<f64> = site.iter().map(|&s| if s { 0.0 } else { EDT_INF }).collect();
    let dims = lattice.dims;
    let strides = [dims[1] * dims[2], dims[2], 1];
    let longest = *dims.iter().max().unwrap_or(&1);
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    for axis in 0..3 {
        let n = dims[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for i in 0..dims[a] {
            for j in 0..dims[b] {
                let base = i * strides[a] + j * strides[b];
                for q in 0..n {
                    f[q] = grid[base + q * strides[axis]];
                }
                edt_1d(&f[..n], &mut out[..n], &mut v[..n], &mut z[..n + 1]);
                for q in 0..n {
                    grid[base + q * strides[axis]] = out[q];
                }
            }
        }
    }
    grid
}

pub(crate) fn signed_distance_from_squared(
    occupied: bool,
    d2_to_occupied: f64,
    d2_to_free: f64,
    voxel_size: f64,
    max_distance: f64,
) -> f64 {
    // Distances are measured between voxel centers; half a voxel moves them
    // onto the obstacle surface.
    if occupied {
        if d2_to_free >= EDT_INF {
            -max_distance
        } else {
            (-(d2_to_free.sqrt() - 0.5) * voxel_size).max(-max_distance)
        }
    } else if d2_to_occupied >= EDT_INF {
        max_distance
    } else {
        ((d2_to_occupied.sqrt() - 0.5) * voxel_size).min(max_distance)
    }
}

impl SignedDistanceField {
    pub fn from_grid(grid: &OccupancyGrid, occupancy_threshold: f64, max_distance: f64) -> Result<Self> {
        if !(occupancy_threshold > 0.0 && occupancy_threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "occupancy threshold must lie in (0, 1], got {occupancy_threshold}"
            )));
        }
        if !(max_distance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "max distance must be positive, got {max_distance}"
            )));
        }
        let lattice = *grid.lattice();
        let occupied: Vec<bool> = grid.values().iter().map(|&v| v >= occupancy_threshold).collect();
        let free: Vec<bool> = occupied.iter().map(|o| !o).collect();
        let to_occupied = squared_edt(&lattice, &occupied);
        let to_free = squared_edt(&lattice, &free);
        let values = occupied
            .iter()
            .zip(to_occupied.iter().zip(&to_free))
            .map(|(&occ, (&d_occ, &d_free))| {
                signed_distance_from_squared(occ, d_occ, d_free, lattice.voxel_size, max_distance)
            })
            .collect();
        Ok(Self {
            lattice,
            values,
            max_distance,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_distance(&self) -> f64 {
        self.max_distance
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.lattice.index(i, j, k)]
    }

    /// Interpolated signed distance and gradient at an arbitrary point.
    /// Outside the lattice the distance to the lattice box is added to the
    /// value at the nearest boundary point.
    pub fn distance_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let q = self.lattice.clamp(p);
        let (d, g) = self.lattice.interpolate(&self.values, &q);
        let outside = p - q;
        let dist = outside.norm();
        if dist > 0.0 {
            let mut grad = outside / dist;
            // keep the in-lattice gradient along axes that were not clamped
            for a in 0..3 {
                if outside[a] == 0.0 {
                    grad[a] = g[a];
                }
            }
            ((d + dist).min(self.max_distance), grad)
        } else {
            (d, g)
        }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.distance_and_gradient(p).0
    }
}

pub fn sdf_from_grid(grid: &OccupancyGrid, occupancy_threshold: f64) -> Result<SignedDistanceField> {
    SignedDistanceField::from_grid(grid, occupancy_threshold, DEFAULT_MAX_DISTANCE)
}

/// Occupancy grid together with its distance field; immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub grid: OccupancyGrid,
    pub sdf: SignedDistanceField,
}

impl WorldModel {
    pub fn new(grid: OccupancyGrid, occupancy_threshold: f64) -> Result<Self> {
        let sdf = sdf_from_grid(&grid, occupancy_threshold)?;
        Ok(Self { grid, sdf })
    }

    /// An obstacle-free world (small grid, free outside).
    pub fn empty() -> Self {
        let grid = OccupancyGrid::new(Vec3::new(-1.0, -1.0, -1.0), 1.0, [2, 2, 2])
            .expect("static lattice is valid");
        Self::new(grid, DEFAULT_OCCUPANCY_THRESHOLD).expect("default threshold is valid")
    }

    pub fn occupancy_at(&self, p: &Vec3) -> f64 {
        self.grid.occupancy_at(p)
    }

    pub fn clearance(&self, p: &Vec3) -> f64 {
        self.sdf.distance(p)
    }
}

pub fn occupancy_at(grid: &OccupancyGrid, p: &Vec3) -> f64 {
    grid.occupancy_at(p)
}
