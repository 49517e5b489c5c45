//! Perspective and weak-perspective cameras, their inverses, and closed-form
//! scale estimates linking root-relative 3D joints to 2D keypoints.
//!
//! Extrinsic rotation is always identity. Weak projection is the affine map
//! `s * (x, y) + t`; depth does not enter it.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_KEYPOINTS;

/// Below this distance from 1, a reference bone's normalized depth change
/// leaves no usable in-plane extent.
pub const BONE_DEPTH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let k: Intrinsics = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        k.validate()?;
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakCamera {
    /// Pixels per model unit.
    pub s: f64,
    pub t: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CameraSpec {
    Perspective(Intrinsics),
    Weak(WeakCamera),
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CameraSpec::Perspective(k) => k.validate(),
            CameraSpec::Weak(w) if w.s > 0.0 && w.t.iter().all(|c| c.is_finite()) => Ok(()),
            CameraSpec::Weak(w) => Err(Error::InvalidConfig(format!(
                "weak camera scale must be positive, got {}",
                w.s
            ))),
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        match self {
            CameraSpec::Perspective(k) => project_persp(k, p),
            CameraSpec::Weak(w) => Ok(project_weak(w, p)),
        }
    }
}

pub fn project_persp(k: &Intrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    if !(p.z > 0.0) {
        return Err(Error::PointBehindCamera { z: p.z });
    }
    Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Back-projects pixel `(u, v)` with root-relative depth `d` to the camera
/// frame, the absolute depth being `d + d_root`.
pub fn unproject_persp(k: &Intrinsics, uvd: [f64; 3], d_root: f64) -> Result<Vector3<f64>> {
    let z = uvd[2] + d_root;
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(Vector3::new((uvd[0] - k.cx) * z / k.fx, (uvd[1] - k.cy) * z / k.fy, z))
}

pub fn project_weak(cam: &WeakCamera, p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(cam.s * p.x + cam.t[0], cam.s * p.y + cam.t[1])
}

/// Inverse of [`project_weak`] for a point whose depth `d` is already known.
pub fn unproject_weak(cam: &WeakCamera, uvd: [f64; 3]) -> Vector3<f64> {
    Vector3::new((uvd[0] - cam.t[0]) / cam.s, (uvd[1] - cam.t[1]) / cam.s, uvd[2])
}

/// Weak-perspective scale that makes a reference bone with pixel extent
/// `bone_uv` and normalized depth change `bone_d` unit length in 3D.
pub fn weak_scale_from_bone(bone_uv: [f64; 2], bone_d: f64) -> Result<f64> {
    let denom = 1.0 - bone_d * bone_d;
    if !(bone_d.abs() < 1.0 - BONE_DEPTH_EPS) {
        return Err(Error::DegenerateBone(bone_d.abs()));
    }
    let s = ((bone_uv[0] * bone_uv[0] + bone_uv[1] * bone_uv[1]) / denom).sqrt();
    if !(s > 0.0) {
        return Err(Error::DegenerateScale("reference bone has no pixel extent"));
    }
    Ok(s)
}

/// Keypoint pair whose 3D length is normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceBone {
    pub from: usize,
    pub to: usize,
}

impl Default for ReferenceBone {
    /// Wrist to middle-finger proximal joint.
    fn default() -> Self {
        ReferenceBone { from: 0, to: 7 }
    }
}

/// Lifts `(u, v, d)` keypoints (d root-relative and bone-normalized) to
/// root-relative 3D joints in reference-bone units. Returns the weak scale
/// and the joints.
pub fn lift_weak(uvd: &[[f64; 3]; NUM_KEYPOINTS], bone: ReferenceBone) -> Result<(f64, [Vector3<f64>; NUM_KEYPOINTS])> {
    let (a, b) = (uvd[bone.from], uvd[bone.to]);
    let s = weak_scale_from_bone([b[0] - a[0], b[1] - a[1]], b[2] - a[2])?;
    let root = uvd[0];
    let cam = WeakCamera {
        s,
        t: [root[0], root[1]],
    };
    let joints = uvd.map(|p| unproject_weak(&cam, [p[0], p[1], p[2] - root[2]]));
    Ok((s, joints))
}

/// Least-squares weak scale with the translation pinned to the root pixel:
/// `t = root_px`, `s = sum <(x, y), kp - t> / sum |(x, y)|^2`.
pub fn weak_s_t_from_keypoints(
    joints: &[Vector3<f64>],
    kps: &[Vector2<f64>],
    root_px: [f64; 2],
) -> Result<(f64, [f64; 2])> {
    let t = Vector2::from(root_px);
    let (mut num, mut den) = (0.0, 0.0);
    for (p, kp) in joints.iter().zip(kps) {
        let xy = p.xy();
        num += xy.dot(&(kp - t));
        den += xy.norm_squared();
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateScale("all joints coincide with the root"));
    }
    Ok((num / den, root_px))
}

/// Closed-form scale compensation for perspective fitting, exact when every
/// joint lies at the root depth:
/// `s = z_root * sum <(fx x, fy y), kp - root_px> / sum |(fx x, fy y)|^2`.
pub fn persp_scale_analytic(
    k: &Intrinsics,
    joints: &[Vector3<f64>],
    kps: &[Vector2<f64>],
    root_px: [f64; 2],
    z_root: f64,
) -> Result<f64> {
    if !(z_root > 0.0) {
        return Err(Error::NonPositiveDepth(z_root));
    }
    let root = Vector2::from(root_px);
    let (mut num, mut den) = (0.0, 0.0);
    for (p, kp) in joints.iter().zip(kps) {
        let f = Vector2::new(k.fx * p.x, k.fy * p.y);
        num += f.dot(&(kp - root));
        den += f.norm_squared();
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateScale("all joints coincide with the root"));
    }
    let s = z_root * num / den;
    if !s.is_finite() {
        return Err(Error::DegenerateScale("non-finite scale"));
    }
    Ok(s)
}
