//! Points on the unit sphere and the distances and overlap metrics defined on it.
//!
//! Orientations are either an [`AngularPosition`] (longitude `theta` in
//! `[0, 2π)`, latitude `phi` in `[-π/2, π/2]`) or a [`UnitVec3`]. The mapping
//! between them is
//!
//! ```text
//! (θ, φ) ↦ (cos θ cos φ, sin θ cos φ, sin φ)
//! ```
//!
//! The benchmark metric is [`orthodromic_distance`]. [`angular_error`] and
//! [`mean_squared_error`] are kept for comparison with older protocols, and
//! [`mean_overlap`] / [`tile_iou`] reproduce the viewport-overlap scores used
//! by tile-based streaming work.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|v| - 1` accepted by [`UnitVec3::new`] and [`vec_to_ang`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Longitude/latitude pair in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularPosition {
    theta: f64,
    phi: f64,
}

impl AngularPosition {
    /// Builds a position, wrapping `theta` into `[0, 2π)`.
    ///
    /// Latitudes outside `[-π/2, π/2]` by more than `1e-12` are rejected;
    /// smaller excursions are clamped.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite angle (theta={theta}, phi={phi})"
            )));
        }
        if phi.abs() > FRAC_PI_2 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "latitude {phi} outside [-pi/2, pi/2]"
            )));
        }
        Ok(Self {
            theta: wrap_longitude(theta),
            phi: phi.clamp(-FRAC_PI_2, FRAC_PI_2),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Same position from degrees.
    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        Self::new(theta_deg.to_radians(), phi_deg.to_radians())
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_longitude(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can return exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference into `(-π, π]`.
pub fn wrap_difference(delta: f64) -> f64 {
    delta.sin().atan2(delta.cos())
}

/// A point on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitVec3 {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVec3 {
    pub const X: UnitVec3 = UnitVec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: UnitVec3 = UnitVec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: UnitVec3 = UnitVec3 { x: 0.0, y: 0.0, z: 1.0 };

    /// Accepts a vector whose norm is within [`UNIT_TOLERANCE`] of 1 and
    /// renormalizes it.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit { norm });
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Projects any non-zero finite vector onto the sphere.
    pub fn normalize(x: f64, y: f64, z: f64) -> Option<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-300 {
            return None;
        }
        Some(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Projects `v` onto the sphere, falling back to `fallback` for a zero
    /// or non-finite vector.
    pub fn normalize_or(v: [f64; 3], fallback: UnitVec3) -> Self {
        Self::normalize(v[0], v[1], v[2]).unwrap_or(fallback)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &UnitVec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &UnitVec3) -> [f64; 3] {
        [
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        ]
    }

    pub fn antipode(&self) -> UnitVec3 {
        UnitVec3 {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Spherical linear interpolation, `u = 0` giving `self` and `u = 1`
    /// giving `other`. Antipodal endpoints travel through an arbitrary but
    /// fixed meridian-orthogonal great circle.
    pub fn slerp(&self, other: &UnitVec3, u: f64) -> UnitVec3 {
        let d = self.dot(other).clamp(-1.0, 1.0);
        let omega = d.acos();
        if omega < 1e-9 {
            let v = lerp3(self.to_array(), other.to_array(), u);
            return UnitVec3::normalize_or(v, *self);
        }
        let b = if PI - omega < 1e-9 {
            // Pick any unit vector orthogonal to `self` to define the path.
            let helper = if self.x.abs() < 0.9 { UnitVec3::X } else { UnitVec3::Y };
            let c = self.cross(&helper);
            let ortho = UnitVec3::normalize_or(c, UnitVec3::Z);
            let theta = u * PI;
            let v = [
                self.x * theta.cos() + ortho.x * theta.sin(),
                self.y * theta.cos() + ortho.y * theta.sin(),
                self.z * theta.cos() + ortho.z * theta.sin(),
            ];
            return UnitVec3::normalize_or(v, *self);
        } else {
            other
        };
        let s = omega.sin();
        let wa = ((1.0 - u) * omega).sin() / s;
        let wb = (u * omega).sin() / s;
        let v = [
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        ];
        UnitVec3::normalize_or(v, *self)
    }

    /// Moves along the great circle from `self` in tangent direction
    /// `tangent` (need not be normalized; its component along `self` is
    /// ignored) by `angle` radians.
    pub fn advance(&self, tangent: [f64; 3], angle: f64) -> UnitVec3 {
        let t = reject(tangent, self);
        let n = norm3(t);
        if n < 1e-15 || angle == 0.0 {
            return *self;
        }
        let t = [t[0] / n, t[1] / n, t[2] / n];
        let (s, c) = angle.sin_cos();
        let v = [
            self.x * c + t[0] * s,
            self.y * c + t[1] * s,
            self.z * c + t[2] * s,
        ];
        UnitVec3::normalize_or(v, *self)
    }

    /// Tangent vector at `self` pointing along the great circle toward
    /// `target`, with magnitude equal to the orthodromic distance.
    pub fn log_map(&self, target: &UnitVec3) -> [f64; 3] {
        let d = self.dot(target).clamp(-1.0, 1.0);
        let angle = d.acos();
        let t = reject(target.to_array(), self);
        let n = norm3(t);
        if n < 1e-15 {
            return [0.0; 3];
        }
        [t[0] * angle / n, t[1] * angle / n, t[2] * angle / n]
    }
}

pub(crate) fn lerp3(a: [f64; 3], b: [f64; 3], u: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * u,
        a[1] + (b[1] - a[1]) * u,
        a[2] + (b[2] - a[2]) * u,
    ]
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Component of `v` orthogonal to `p`.
pub(crate) fn reject(v: [f64; 3], p: &UnitVec3) -> [f64; 3] {
    let d = v[0] * p.x + v[1] * p.y + v[2] * p.z;
    [v[0] - d * p.x, v[1] - d * p.y, v[2] - d * p.z]
}

/// `(θ, φ) ↦ (cos θ cos φ, sin θ cos φ, sin φ)`.
pub fn ang_to_vec(p: AngularPosition) -> UnitVec3 {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    UnitVec3 {
        x: ct * cp,
        y: st * cp,
        z: sp,
    }
}

/// Inverse of [`ang_to_vec`]. At the poles longitude is set to 0.
pub fn vec_to_ang(v: UnitVec3) -> Result<AngularPosition> {
    let norm = (v.x * v.x + v.y * v.y + v.z * v.z).sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NotUnit { norm });
    }
    let planar = v.x.hypot(v.y);
    let phi = v.z.atan2(planar);
    let theta = if planar < 1e-12 { 0.0 } else { wrap_longitude(v.y.atan2(v.x)) };
    AngularPosition::new(theta, phi)
}

/// Great-circle distance `arccos(a · b)` in `[0, π]`.
pub fn orthodromic_distance(a: &UnitVec3, b: &UnitVec3) -> f64 {
    let d = a.dot(b).clamp(-1.0, 1.0);
    // acos loses precision near 0 and π; atan2 of |a×b| and a·b is exact
    // to rounding everywhere and agrees with arccos on [0, π].
    let c = a.cross(b);
    norm3(c).atan2(d)
}

/// Per-angle error `sqrt(wrap(Δθ)² + Δφ²)` with `wrap` reducing to `(-π, π]`.
pub fn angular_error(a: AngularPosition, b: AngularPosition) -> f64 {
    let dtheta = wrap_difference(a.theta - b.theta);
    let dphi = a.phi - b.phi;
    (dtheta * dtheta + dphi * dphi).sqrt()
}

/// `((θ1-θ2)² + (φ1-φ2)²) / 2`, deliberately without longitude wraparound.
pub fn mean_squared_error(a: AngularPosition, b: AngularPosition) -> f64 {
    let dtheta = a.theta - b.theta;
    let dphi = a.phi - b.phi;
    (dtheta * dtheta + dphi * dphi) / 2.0
}

/// Angular size of the viewport and the raster used to measure overlaps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FovSpec {
    pub h_extent: f64,
    pub v_extent: f64,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl Default for FovSpec {
    fn default() -> Self {
        Self {
            h_extent: 100f64.to_radians(),
            v_extent: 90f64.to_radians(),
            grid_w: 360,
            grid_h: 180,
        }
    }
}

impl FovSpec {
    pub fn new(h_extent: f64, v_extent: f64, grid_w: usize, grid_h: usize) -> Result<Self> {
        let spec = Self {
            h_extent,
            v_extent,
            grid_w,
            grid_h,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_extent > 0.0 && self.h_extent <= TAU) {
            return Err(Error::InvalidArgument(format!("h_extent {} outside (0, 2pi]", self.h_extent)));
        }
        if !(self.v_extent > 0.0 && self.v_extent <= PI) {
            return Err(Error::InvalidArgument(format!("v_extent {} outside (0, pi]", self.v_extent)));
        }
        if self.grid_w < 8 || self.grid_h < 8 {
            return Err(Error::InvalidArgument("FoV raster must be at least 8x8".into()));
        }
        Ok(())
    }

    /// True when `v` lies inside the viewport centred on `center`.
    ///
    /// `v` is expressed in the viewport's local yaw/pitch frame (center on
    /// the local x axis) and both angles are compared with the half extents.
    pub fn contains(&self, center: &UnitVec3, v: &UnitVec3) -> bool {
        let (yaw, pitch) = local_yaw_pitch(center, v);
        yaw.abs() <= self.h_extent / 2.0 && pitch.abs() <= self.v_extent / 2.0
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, UnitVec3, f64)> + '_ {
        let (w, h) = (self.grid_w, self.grid_h);
        (0..h).flat_map(move |r| {
            let lat = FRAC_PI_2 - PI * (r as f64 + 0.5) / h as f64;
            let weight = lat.cos();
            (0..w).map(move |c| {
                let lon = TAU * (c as f64 + 0.5) / w as f64;
                let (sl, cl) = lon.sin_cos();
                let (sp, cp) = lat.sin_cos();
                (r, c, UnitVec3 { x: cl * cp, y: sl * cp, z: sp }, weight)
            })
        })
    }
}

/// Yaw and pitch of `v` in the frame where `center` sits on the x axis and
/// the local z axis points toward the north pole.
pub fn local_yaw_pitch(center: &UnitVec3, v: &UnitVec3) -> (f64, f64) {
    let planar = center.x.hypot(center.y);
    let (ct, st) = if planar < 1e-12 { (1.0, 0.0) } else { (center.x / planar, center.y / planar) };
    let (cp, sp) = (planar, center.z);
    // Rotate by -theta about z.
    let x1 = ct * v.x + st * v.y;
    let y1 = -st * v.x + ct * v.y;
    let z1 = v.z;
    // Rotate about y to bring the center's latitude to zero.
    let x2 = cp * x1 + sp * z1;
    let z2 = -sp * x1 + cp * z1;
    let yaw = y1.atan2(x2);
    let pitch = z2.clamp(-1.0, 1.0).asin();
    (yaw, pitch)
}

/// Solid-angle-weighted intersection over union of the two viewports.
pub fn mean_overlap(pred: &UnitVec3, gt: &UnitVec3, fov: &FovSpec) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (_, _, cell, w) in fov.cells() {
        let a = fov.contains(pred, &cell);
        let b = fov.contains(gt, &cell);
        if a && b {
            inter += w;
        }
        if a || b {
            union += w;
        }
    }
    if union == 0.0 {
        return 1.0;
    }
    inter / union
}

/// Rectangular equirectangular tiling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub rows: usize,
    pub cols: usize,
}

impl Tiling {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("tiling needs at least one row and column".into()));
        }
        Ok(Self { rows, cols })
    }

    /// Tile `(row, col)` holding the direction at latitude `lat`, longitude `lon`.
    pub fn tile_of(&self, lon: f64, lat: f64) -> (usize, usize) {
        let row = (((FRAC_PI_2 - lat) / PI) * self.rows as f64).floor() as usize;
        let col = ((wrap_longitude(lon) / TAU) * self.cols as f64).floor() as usize;
        (row.min(self.rows - 1), col.min(self.cols - 1))
    }

    /// Tiles overlapping the viewport centred on `center`, sampled on the
    /// FoV raster, as a row-major boolean mask.
    pub fn labels(&self, center: &UnitVec3, fov: &FovSpec) -> Vec<bool> {
        let mut mask = vec![false; self.rows * self.cols];
        let (w, h) = (fov.grid_w, fov.grid_h);
        for (r, c, cell, _) in fov.cells() {
            if fov.contains(center, &cell) {
                let lat = FRAC_PI_2 - PI * (r as f64 + 0.5) / h as f64;
                let lon = TAU * (c as f64 + 0.5) / w as f64;
                let (tr, tc) = self.tile_of(lon, lat);
                mask[tr * self.cols + tc] = true;
            }
        }
        mask
    }
}

/// Tile-label IoU `TP / TT` between the predicted and true viewports.
pub fn tile_iou(pred: &UnitVec3, gt: &UnitVec3, fov: &FovSpec, tiling: &Tiling) -> f64 {
    let p = tiling.labels(pred, fov);
    let g = tiling.labels(gt, fov);
    let tp = p.iter().zip(&g).filter(|(a, b)| **a && **b).count();
    let tt = p.iter().zip(&g).filter(|(a, b)| **a || **b).count();
    if tt == 0 {
        return 1.0;
    }
    tp as f64 / tt as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> UnitVec3 {
        UnitVec3::new(x, y, z).unwrap()
    }

    fn ang(t: f64, p: f64) -> AngularPosition {
        AngularPosition::new(t, p).unwrap()
    }

    #[test]
    fn ang_to_vec_axes() {
        let e = ang_to_vec(ang(0.0, 0.0));
        assert_abs_diff_eq!(e.x(), 1.0);
        assert_abs_diff_eq!(e.y(), 0.0);
        let n = ang_to_vec(ang(FRAC_PI_2, 0.0));
        assert_abs_diff_eq!(n.x(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.y(), 1.0);
        let pole = ang_to_vec(ang(0.0, FRAC_PI_2));
        assert_abs_diff_eq!(pole.z(), 1.0);
        assert_abs_diff_eq!(pole.x(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn vec_to_ang_cases() {
        let a = vec_to_ang(UnitVec3::X).unwrap();
        assert_eq!((a.theta(), a.phi()), (0.0, 0.0));
        let p = vec_to_ang(UnitVec3::Z).unwrap();
        assert_eq!(p.theta(), 0.0);
        assert_abs_diff_eq!(p.phi(), FRAC_PI_2);
        let w = vec_to_ang(v(0.0, -1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(w.theta(), 3.0 * FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(w.phi(), 0.0);
    }

    #[test]
    fn non_unit_rejected() {
        assert!(matches!(UnitVec3::new(1.1, 0.0, 0.0), Err(Error::NotUnit { .. })));
        let sloppy = UnitVec3 { x: 1.01, y: 0.0, z: 0.0 };
        assert!(vec_to_ang(sloppy).is_err());
    }

    #[test]
    fn orthodromic_cases() {
        let a = ang_to_vec(ang(0.3, 0.2));
        assert_eq!(orthodromic_distance(&a, &a), 0.0);
        assert_abs_diff_eq!(orthodromic_distance(&a, &a.antipode()), PI, epsilon = 1e-12);
        let q = orthodromic_distance(&ang_to_vec(ang(0.0, 0.0)), &ang_to_vec(ang(FRAC_PI_2, 0.0)));
        assert_abs_diff_eq!(q, FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn angular_error_cases() {
        let a = ang(1.0, 0.3);
        assert_eq!(angular_error(a, a), 0.0);
        let eps = 1e-3;
        let e = angular_error(ang(TAU - eps, 0.0), ang(0.0, 0.0));
        assert_abs_diff_eq!(e, eps, epsilon = 1e-12);
        let d = angular_error(ang(FRAC_PI_2, FRAC_PI_2 / 2.0), ang(0.0, 0.0));
        let expected = (FRAC_PI_2.powi(2) + (PI / 4.0).powi(2)).sqrt();
        assert_abs_diff_eq!(d, expected, epsilon = 1e-12);
    }

    #[test]
    fn mse_has_no_wraparound() {
        let a = ang(0.0, 0.0);
        assert_eq!(mean_squared_error(a, a), 0.0);
        assert_abs_diff_eq!(mean_squared_error(a, ang(PI, 0.0)), PI * PI / 2.0);
        let eps = 1e-3;
        let big = mean_squared_error(a, ang(TAU - eps, 0.0));
        assert_abs_diff_eq!(big, (TAU - eps).powi(2) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn mean_overlap_trivial_cases() {
        let fov = FovSpec::default();
        let c = ang_to_vec(ang(0.7, 0.1));
        assert_eq!(mean_overlap(&c, &c, &fov), 1.0);
        assert_eq!(mean_overlap(&c, &c.antipode(), &fov), 0.0);
    }

    #[test]
    fn mean_overlap_half_shift_on_default_raster() {
        // Equatorial viewports are latitude/longitude rectangles; shifting by
        // half the width leaves 50 of 150 degrees of longitude shared.
        let fov = FovSpec::default();
        let a = ang_to_vec(ang(0.0, 0.0));
        let b = ang_to_vec(ang(fov.h_extent / 2.0, 0.0));
        assert_abs_diff_eq!(mean_overlap(&a, &b, &fov), 1.0 / 3.0, epsilon = 1e-3);
    }

    #[test]
    fn tile_iou_trivial_cases() {
        let fov = FovSpec::default();
        let tiling = Tiling::new(6, 12).unwrap();
        let c = ang_to_vec(AngularPosition::from_degrees(25.0, 0.0).unwrap());
        assert_eq!(tile_iou(&c, &c, &fov, &tiling), 1.0);
        let far = ang_to_vec(AngularPosition::from_degrees(205.0, 0.0).unwrap());
        assert_eq!(tile_iou(&c, &far, &fov, &tiling), 0.0);
        assert!(Tiling::new(0, 3).is_err());
    }

    #[test]
    fn fov_validation() {
        assert!(FovSpec::new(0.0, 1.0, 32, 16).is_err());
        assert!(FovSpec::new(1.0, 4.0, 32, 16).is_err());
        assert!(FovSpec::new(1.0, 1.0, 4, 16).is_err());
        assert!(FovSpec::new(TAU, PI, 8, 8).is_ok());
    }

    #[test]
    fn slerp_midpoint_is_equidistant() {
        let a = ang_to_vec(ang(0.2, 0.4));
        let b = ang_to_vec(ang(1.5, -0.3));
        let m = a.slerp(&b, 0.5);
        let da = orthodromic_distance(&a, &m);
        let db = orthodromic_distance(&m, &b);
        assert_abs_diff_eq!(da, db, epsilon = 1e-12);
        assert_abs_diff_eq!(da + db, orthodromic_distance(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn advance_and_log_map_agree() {
        let a = ang_to_vec(ang(0.2, 0.4));
        let b = ang_to_vec(ang(1.1, -0.2));
        let t = a.log_map(&b);
        let back = a.advance(t, norm3(t));
        assert!(orthodromic_distance(&back, &b) < 1e-12);
    }

    fn off_pole() -> impl Strategy<Value = AngularPosition> {
        (0.0..TAU, -1.5..1.5f64).prop_map(|(t, p)| ang(t, p))
    }

    proptest! {
        #[test]
        fn angular_error_ignores_full_turns(a in off_pole(), b in off_pole()) {
            let shifted = AngularPosition { theta: a.theta() + TAU, phi: a.phi() };
            prop_assert!((angular_error(a, b) - angular_error(shifted, b)).abs() < 1e-12);
        }

        #[test]
        fn overlap_symmetric(a in off_pole(), b in off_pole()) {
            let fov = FovSpec { grid_w: 90, grid_h: 45, ..FovSpec::default() };
            let (pa, pb) = (ang_to_vec(a), ang_to_vec(b));
            let ab = mean_overlap(&pa, &pb, &fov);
            prop_assert_eq!(ab, mean_overlap(&pb, &pa, &fov));
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
