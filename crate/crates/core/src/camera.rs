//! Pinhole camera geometry: projection, unprojection, rigid transforms and
//! pose-proximity view selection.
//!
//! Poses are stored camera-to-world. Pixel centers sit at half-integer
//! image coordinates, so the pixel that contains a continuous coordinate
//! `u` is `round_half_up(u - 0.5)`, i.e. `floor(u)`.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::grid::ColorImage;
use crate::{Error, Result};

/// Tolerance used to validate rotation matrices handed to [`Pose::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// The global rounding operator: `floor(x + 0.5)`.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Pixel index containing the continuous coordinate `(u, v)`, or `None`
/// when it falls outside `[0, width) x [0, height)`.
#[inline]
pub fn pixel_of(u: f64, v: f64, width: usize, height: usize) -> Option<(usize, usize)> {
    let x = round_half_up(u - 0.5);
    let y = round_half_up(v - 0.5);
    if x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64 {
        Some((x as usize, y as usize))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!(
                "focal lengths must be positive and finite, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics of the same camera on a grid downsampled by `factor`.
    pub fn downscaled(&self, factor: usize) -> Intrinsics {
        let f = factor as f64;
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// A rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self` after `first`: the returned transform applies `first`, then `self`.
    pub fn after(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Camera-to-world pose with an orthonormal, right-handed rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOLERANCE)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose translation is not finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Camera at `eye` looking at `target`, with image rows growing along
    /// `-up` (x right, y down, z forward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::invalid("look_at: eye equals target"))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at: up is parallel to the view direction"))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Pose::new(rotation, eye)
    }

    /// Parses a 4x4 camera-to-world matrix, accepting rotations that are
    /// orthonormal within `tolerance` and re-orthonormalizing them.
    pub fn from_matrix(m: &Matrix4<f64>, tolerance: f64) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > tolerance {
            return Err(Error::invalid(format!("bottom row {bottom:?} is not [0 0 0 1]")));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        check_rotation(&r, tolerance)?;
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
        Pose::new(orthonormalize(&r), t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn camera_to_world(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation,
            translation: self.translation,
        }
    }

    pub fn world_to_camera(&self) -> RigidTransform {
        self.camera_to_world().inverse()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        self.camera_to_world().to_matrix()
    }
}

fn check_rotation(r: &Matrix3<f64>, tolerance: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("rotation has non-finite entries"));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > tolerance {
        return Err(Error::invalid(format!(
            "rotation is not orthonormal (max |R^T R - I| = {err:.3e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tolerance {
        return Err(Error::invalid(format!("rotation determinant is {det:.6}, expected +1")));
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    u * vt
}

/// One posed input image.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub image: ColorImage,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub index: usize,
}

impl CameraView {
    pub fn new(image: ColorImage, intrinsics: Intrinsics, pose: Pose, index: usize) -> Result<Self> {
        if image.width != intrinsics.width || image.height != intrinsics.height {
            return Err(Error::mismatch(format!(
                "view {index}: image is {}x{} but intrinsics say {}x{}",
                image.width, image.height, intrinsics.width, intrinsics.height
            )));
        }
        Ok(Self {
            image,
            intrinsics,
            pose,
            index,
        })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }
}

/// Image coordinates and camera-space depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a camera-space point. `depth` may be non-positive.
#[inline]
pub fn project_camera(p: &Vector3<f64>, intr: &Intrinsics) -> Projection {
    Projection {
        u: intr.fx * p.x / p.z + intr.cx,
        v: intr.fy * p.y / p.z + intr.cy,
        depth: p.z,
    }
}

/// Projects a world point into the camera. Points behind the camera keep
/// their (non-positive) depth; callers decide validity.
#[inline]
pub fn project(point: &Vector3<f64>, pose: &Pose, intr: &Intrinsics) -> Projection {
    let pc = pose.rotation.transpose() * (point - pose.translation);
    project_camera(&pc, intr)
}

#[inline]
pub fn unproject_camera(u: f64, v: f64, depth: f64, intr: &Intrinsics) -> Vector3<f64> {
    Vector3::new((u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth)
}

/// Lifts an image coordinate at camera-space depth into world space.
pub fn unproject(u: f64, v: f64, depth: f64, pose: &Pose, intr: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::invalid(format!("unproject: depth must be > 0, got {depth}")));
    }
    let pc = unproject_camera(u, v, depth, intr);
    Ok(pose.rotation * pc + pose.translation)
}

/// Transform taking points in the `src` camera frame to the `dst` camera frame.
pub fn relative_transform(src: &Pose, dst: &Pose) -> RigidTransform {
    dst.world_to_camera().after(&src.camera_to_world())
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

/// Pose proximity: translation distance plus `lambda` times rotation angle.
pub fn proximity_score(a: &Pose, b: &Pose, lambda: f64) -> f64 {
    (a.translation - b.translation).norm() + lambda * rotation_angle(&a.rotation, &b.rotation)
}

/// The `n` views closest to `target` by [`proximity_score`], ascending,
/// ties broken by lower index.
pub fn select_nearby_views(target: usize, poses: &[Pose], n: usize, lambda: f64) -> Result<Vec<usize>> {
    if target >= poses.len() {
        return Err(Error::invalid(format!("target view {target} out of {} views", poses.len())));
    }
    if n == 0 || n >= poses.len() {
        return Err(Error::invalid(format!(
            "nearby view count {n} must be in [1, {})",
            poses.len()
        )));
    }
    let mut scored: Vec<(f64, usize)> = poses
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(i, p)| (proximity_score(&poses[target], p, lambda), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(n).map(|(_, i)| i).collect())
}

/// Convenience conversion used by generators and tests.
pub fn point(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Point3::new(x, y, z).coords
}
