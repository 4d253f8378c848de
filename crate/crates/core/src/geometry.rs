//! Pinhole intrinsics, Euler rotations, rigid motions and pixel backprojection.
//!
//! Conventions used throughout the crate:
//!
//! * Euler angles compose as `R = Rz(rz) · Ry(ry) · Rx(rx)`.
//! * Pixel coordinates are `(u, v) = (column, row)` with the origin at the
//!   centre of the top-left pixel.
//! * A motion moves points: `X' = R·X + t`, with depth and translation in the
//!   same scene units.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{DepthMap, Map, Map3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be finite and positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "principal point must be finite, got ({}, {})",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form `K⁻¹`, or a singular-matrix error when a focal length is
    /// zero or not finite.
    pub fn inverse(&self) -> Result<Matrix3<f64>> {
        let det = self.fx * self.fy;
        if !(det.is_finite() && det != 0.0 && self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::SingularMatrix(format!(
                "intrinsics fx={} fy={} cx={} cy={} are not invertible",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        ))
    }

    /// Normalised image coordinates `((u − cx)/fx, (v − cy)/fy)`.
    #[inline]
    pub fn normalize(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    /// Pixel position of a camera-frame point. The caller guarantees `z > 0`.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl EulerAngles {
    pub const ZERO: EulerAngles = EulerAngles {
        rx: 0.0,
        ry: 0.0,
        rz: 0.0,
    };

    pub fn new(rx: f64, ry: f64, rz: f64) -> Self {
        Self { rx, ry, rz }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.rx, self.ry, self.rz]
    }

    pub fn is_finite(&self) -> bool {
        self.rx.is_finite() && self.ry.is_finite() && self.rz.is_finite()
    }
}

/// Rotation matrix `Rz(rz) · Ry(ry) · Rx(rx)`.
pub fn euler_to_rotation(angles: EulerAngles) -> Result<Matrix3<f64>> {
    if !angles.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "euler angles must be finite, got {angles:?}"
        )));
    }
    Ok(rotation_unchecked(angles))
}

fn rotation_unchecked(a: EulerAngles) -> Matrix3<f64> {
    let (sx, cx) = a.rx.sin_cos();
    let (sy, cy) = a.ry.sin_cos();
    let (sz, cz) = a.rz.sin_cos();
    Matrix3::new(
        cz * cy,
        cz * sy * sx - sz * cx,
        cz * sy * cx + sz * sx,
        sz * cy,
        sz * sy * sx + cz * cx,
        sz * sy * cx - cz * sx,
        -sy,
        cy * sx,
        cy * cx,
    )
}

/// Inverse of [`euler_to_rotation`] with `ry ∈ [−π/2, π/2]`. At the gimbal
/// singularity `rx` is set to zero.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> EulerAngles {
    let cy = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    let ry = (-r[(2, 0)]).atan2(cy);
    if cy > 1e-12 {
        EulerAngles {
            rx: r[(2, 1)].atan2(r[(2, 2)]),
            ry,
            rz: r[(1, 0)].atan2(r[(0, 0)]),
        }
    } else {
        EulerAngles {
            rx: 0.0,
            ry,
            rz: (-r[(0, 1)]).atan2(r[(1, 1)]),
        }
    }
}

/// Rigid motion `M = [r(γ) φ; 0ᵀ 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSE3 {
    pub rotation: EulerAngles,
    pub translation: Vector3<f64>,
}

impl Default for MotionSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl MotionSE3 {
    pub fn new(rotation: EulerAngles, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: EulerAngles::ZERO,
            translation: Vector3::zeros(),
        }
    }

    /// Builds a motion from a 6-vector `(φx, φy, φz, γx, γy, γz)`.
    pub fn from_params(p: &[f64; 6]) -> Self {
        Self {
            rotation: EulerAngles::new(p[3], p[4], p[5]),
            translation: Vector3::new(p[0], p[1], p[2]),
        }
    }

    /// `(φx, φy, φz, γx, γy, γz)`.
    pub fn params(&self) -> [f64; 6] {
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.rotation.rx,
            self.rotation.ry,
            self.rotation.rz,
        ]
    }

    pub fn from_rotation_translation(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: rotation_to_euler(r),
            translation: t,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == EulerAngles::ZERO && self.translation == Vector3::zeros()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.is_finite() && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn rotation_matrix(&self) -> Result<Matrix3<f64>> {
        euler_to_rotation(self.rotation)
    }

    /// Homogeneous 4×4 matrix.
    pub fn matrix(&self) -> Result<Matrix4<f64>> {
        let r = self.rotation_matrix()?;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        Ok(m)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &MotionSE3) -> Result<MotionSE3> {
        let r2 = self.rotation_matrix()?;
        let r1 = first.rotation_matrix()?;
        Ok(MotionSE3::from_rotation_translation(
            &(r2 * r1),
            r2 * first.translation + self.translation,
        ))
    }

    pub fn inverse(&self) -> Result<MotionSE3> {
        let r = self.rotation_matrix()?;
        let rt = r.transpose();
        Ok(MotionSE3::from_rotation_translation(
            &rt,
            -(rt * self.translation),
        ))
    }
}

/// Pixel lattice of an `height × width` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelGrid {
    pub height: usize,
    pub width: usize,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(u, v) = (col, row)` of the pixel at `(row, col)`.
    #[inline]
    pub fn coord(&self, row: usize, col: usize) -> (f64, f64) {
        (col as f64, row as f64)
    }

    /// Dense `H × W × 2` coordinate array.
    pub fn coordinates(&self) -> Map<[f64; 2]> {
        Map::from_fn(self.height, self.width, |r, c| [c as f64, r as f64])
    }

    pub(crate) fn check_matches<T>(&self, m: &Map<T>, what: &str) -> Result<()> {
        if m.height() == self.height && m.width() == self.width {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{what} is {}x{}, grid is {}x{}",
                m.height(),
                m.width(),
                self.height,
                self.width
            )))
        }
    }
}

/// Film-space coordinates `X(p) = K⁻¹·(u, v, 1)` for every pixel.
pub fn backproject(grid: PixelGrid, k: &Intrinsics) -> Result<Map3> {
    let kinv = k.inverse()?;
    Ok(Map::from_fn(grid.height, grid.width, |r, c| {
        let (u, v) = grid.coord(r, c);
        let x = kinv * Vector3::new(u, v, 1.0);
        [x.x, x.y, x.z]
    }))
}

/// Camera-frame points `r(γ)·(D(p)·X(p)) + φ`.
pub fn transform_points(m: &MotionSE3, points: &Map3, depth: &DepthMap) -> Result<Map3> {
    crate::map::ensure_same_shape(points, depth, "transform_points")?;
    depth.check_positive()?;
    let r = m.rotation_matrix()?;
    let identity = m.is_identity();
    let out = points
        .as_slice()
        .iter()
        .zip(depth.as_slice())
        .map(|(x, &d)| {
            let scaled = Vector3::new(x[0] * d, x[1] * d, x[2] * d);
            if identity {
                [scaled.x, scaled.y, scaled.z]
            } else {
                let p = r * scaled + m.translation;
                [p.x, p.y, p.z]
            }
        })
        .collect();
    Map::from_vec(points.height(), points.width(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector4};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn max_abs(m: &Matrix3<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(
            euler_to_rotation(EulerAngles::ZERO).unwrap(),
            Matrix3::identity()
        );
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = euler_to_rotation(EulerAngles::new(0.0, 0.0, FRAC_PI_2)).unwrap();
        let y = r * Vector3::x();
        assert!((y - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn non_finite_angles_rejected() {
        assert!(matches!(
            euler_to_rotation(EulerAngles::new(f64::NAN, 0.0, 0.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn matches_nalgebra_roll_pitch_yaw() {
        let a = EulerAngles::new(0.3, -0.2, 0.7);
        let ours = euler_to_rotation(a).unwrap();
        let theirs = Rotation3::from_euler_angles(a.rx, a.ry, a.rz).into_inner();
        assert!(max_abs(&(ours - theirs)) < 1e-15);
    }

    #[test]
    fn principal_point_backprojects_to_axis() {
        let k = Intrinsics::new(80.0, 90.0, 31.0, 29.0).unwrap();
        let grid = PixelGrid::new(64, 64);
        let x = backproject(grid, &k).unwrap();
        assert_eq!(*x.get(29, 31), [0.0, 0.0, 1.0]);
        let k2 = Intrinsics::new(10.0, 10.0, 20.0, 30.0).unwrap();
        let x2 = backproject(grid, &k2).unwrap();
        // pixel (cx + fx, cy)
        assert_eq!(*x2.get(30, 30), [1.0, 0.0, 1.0]);
    }

    #[test]
    fn backproject_round_trip() {
        let k = Intrinsics::new(71.3, 55.9, 30.2, 33.7).unwrap();
        let grid = PixelGrid::new(48, 64);
        let x = backproject(grid, &k).unwrap();
        let km = k.matrix();
        for r in 0..grid.height {
            for c in 0..grid.width {
                let p = x.get(r, c);
                assert_eq!(p[2], 1.0);
                let h = km * Vector3::new(p[0], p[1], p[2]);
                assert!((h.x - c as f64).abs() < 1e-10);
                assert!((h.y - r as f64).abs() < 1e-10);
                assert!((h.z - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_intrinsics_rejected() {
        let k = Intrinsics {
            fx: 0.0,
            fy: 10.0,
            cx: 1.0,
            cy: 1.0,
        };
        assert!(matches!(
            backproject(PixelGrid::new(4, 4), &k),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn transform_identity_and_translation() {
        let k = Intrinsics::new(50.0, 50.0, 8.0, 8.0).unwrap();
        let grid = PixelGrid::new(16, 16);
        let x = backproject(grid, &k).unwrap();
        let d = DepthMap::from_fn(16, 16, |r, c| 2.0 + 0.1 * (r + c) as f64);
        let out = transform_points(&MotionSE3::identity(), &x, &d).unwrap();
        for i in 0..x.len() {
            let p = x.as_slice()[i];
            let z = d.as_slice()[i];
            assert_eq!(out.as_slice()[i], [p[0] * z, p[1] * z, p[2] * z]);
        }
        let t = MotionSE3::new(EulerAngles::ZERO, Vector3::new(0.5, -0.25, 1.0));
        let out = transform_points(&t, &x, &d).unwrap();
        for i in 0..x.len() {
            let p = x.as_slice()[i];
            let z = d.as_slice()[i];
            let o = out.as_slice()[i];
            assert!((o[0] - (p[0] * z + 0.5)).abs() < 1e-15);
            assert!((o[1] - (p[1] * z - 0.25)).abs() < 1e-15);
            assert!((o[2] - (z + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn transform_matches_homogeneous_matrix_oracle() {
        let m = MotionSE3::new(
            EulerAngles::new(0.11, -0.31, 0.05),
            Vector3::new(0.2, 0.7, -0.4),
        );
        let x = Map::from_vec(1, 1, vec![[0.3, -0.2, 1.0]]).unwrap();
        let d = DepthMap::filled(1, 1, 3.5);
        let out = transform_points(&m, &x, &d).unwrap();
        let h = m.matrix().unwrap() * Vector4::new(0.3 * 3.5, -0.2 * 3.5, 3.5, 1.0);
        let o = out.as_slice()[0];
        assert!((o[0] - h.x).abs() < 1e-12);
        assert!((o[1] - h.y).abs() < 1e-12);
        assert!((o[2] - h.z).abs() < 1e-12);
    }

    #[test]
    fn transform_rejects_non_positive_depth() {
        let x = Map::filled(2, 2, [0.0, 0.0, 1.0]);
        let mut d = DepthMap::filled(2, 2, 1.0);
        *d.get_mut(0, 1) = -1.0;
        assert!(matches!(
            transform_points(&MotionSE3::identity(), &x, &d),
            Err(Error::Domain { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn compose_and_inverse() {
        let a = MotionSE3::new(
            EulerAngles::new(0.1, 0.2, -0.3),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let id = a.compose(&a.inverse().unwrap()).unwrap();
        for v in id.params() {
            assert!(v.abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(rx in -3.2f64..3.2, ry in -3.2f64..3.2, rz in -3.2f64..3.2) {
            let r = euler_to_rotation(EulerAngles::new(rx, ry, rz)).unwrap();
            prop_assert!(max_abs(&(r.transpose() * r - Matrix3::identity())) < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn opposite_z_rotations_cancel(rz in -3.2f64..3.2) {
            let a = euler_to_rotation(EulerAngles::new(0.0, 0.0, rz)).unwrap();
            let b = euler_to_rotation(EulerAngles::new(0.0, 0.0, -rz)).unwrap();
            prop_assert!(max_abs(&(b * a - Matrix3::identity())) < 1e-12);
        }

        #[test]
        fn euler_round_trip(rx in -1.5f64..1.5, ry in -1.5f64..1.5, rz in -3.1f64..3.1) {
            let a = EulerAngles::new(rx, ry, rz);
            let back = rotation_to_euler(&euler_to_rotation(a).unwrap());
            prop_assert!((back.rx - rx).abs() < 1e-9);
            prop_assert!((back.ry - ry).abs() < 1e-9);
            prop_assert!((back.rz - rz).abs() < 1e-9);
        }
    }
}
