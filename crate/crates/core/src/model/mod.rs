//! Parametric hand: shape-dependent rest mesh, forward kinematics over the
//! 16-joint tree, linear blend skinning and 21-keypoint extraction.
//!
//! # Joint order
//!
//! Skeleton joints (0..16): wrist, then thumb, index, middle, ring and pinky,
//! each proximal to distal. Keypoints 16..21 are the five fingertips in the
//! same finger order. External predictors using another order are remapped
//! when observations are loaded (see [`crate::observations::Convention`]).
//!
//! Rotations are local (per joint, relative to the parent) and expressed in
//! the rest frame; each joint pivots about its rest location. Only shape blend
//! shapes deform the rest mesh; there are no pose correctives.

mod basis;
mod io;
mod toy;

pub use io::{load_model, save_model, write_obj, ModelFile};
pub use toy::{finger_frame, make_toy_model};

pub(crate) use basis::{JointBasis, Pose};

use std::sync::OnceLock;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation;

pub const NUM_JOINTS: usize = 16;
pub const NUM_SHAPE: usize = 10;
pub const NUM_KEYPOINTS: usize = 21;
pub const NUM_FINGERS: usize = 5;

/// Tolerated deviation of a pose quaternion's norm from 1.
pub const QUAT_NORM_TOL: f64 = 1e-6;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "wrist",
    "thumb1",
    "thumb2",
    "thumb3",
    "index1",
    "index2",
    "index3",
    "middle1",
    "middle2",
    "middle3",
    "ring1",
    "ring2",
    "ring3",
    "pinky1",
    "pinky2",
    "pinky3",
    "thumb_tip",
    "index_tip",
    "middle_tip",
    "ring_tip",
    "pinky_tip",
];

/// Keypoint indices of one finger in tip-to-palm order.
pub const fn finger_chain(finger: usize) -> [usize; 4] {
    let base = 1 + 3 * finger;
    [16 + finger, base + 2, base + 1, base]
}

/// Parent table of the canonical 16-joint tree.
pub fn canonical_parents() -> [Option<usize>; NUM_JOINTS] {
    let mut parents = [None; NUM_JOINTS];
    for finger in 0..NUM_FINGERS {
        let base = 1 + 3 * finger;
        parents[base] = Some(0);
        parents[base + 1] = Some(base);
        parents[base + 2] = Some(base + 1);
    }
    parents
}

/// Rigged hand template. Construct through [`HandModel::new`] or
/// [`load_model`]; both validate the invariants.
#[derive(Debug, Clone)]
pub struct HandModel {
    name: String,
    template_vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    blend_weights: Vec<[f64; NUM_JOINTS]>,
    parents: [Option<usize>; NUM_JOINTS],
    shape_dirs: Vec<[[f64; NUM_SHAPE]; 3]>,
    joint_regressor: Vec<Vec<f64>>,
    tip_vertex_ids: [usize; NUM_FINGERS],
    basis: OnceLock<JointBasis>,
}

/// Raw parts of a model, before validation.
#[derive(Debug, Clone, Default)]
pub struct ModelParts {
    pub name: String,
    pub template_vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub blend_weights: Vec<[f64; NUM_JOINTS]>,
    pub parents: [Option<usize>; NUM_JOINTS],
    pub shape_dirs: Vec<[[f64; NUM_SHAPE]; 3]>,
    pub joint_regressor: Vec<Vec<f64>>,
    pub tip_vertex_ids: [usize; NUM_FINGERS],
}

impl HandModel {
    pub fn new(parts: ModelParts) -> Result<Self> {
        validate_parts(&parts)?;
        Ok(HandModel {
            name: parts.name,
            template_vertices: parts.template_vertices.iter().map(|v| Vector3::from(*v)).collect(),
            faces: parts.faces,
            blend_weights: parts.blend_weights,
            parents: parts.parents,
            shape_dirs: parts.shape_dirs,
            joint_regressor: parts.joint_regressor,
            tip_vertex_ids: parts.tip_vertex_ids,
            basis: OnceLock::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn template_vertices(&self) -> &[Vector3<f64>] {
        &self.template_vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn blend_weights(&self) -> &[[f64; NUM_JOINTS]] {
        &self.blend_weights
    }

    pub fn parents(&self) -> &[Option<usize>; NUM_JOINTS] {
        &self.parents
    }

    /// Per vertex, a 3 x B block: `shape_dirs()[v][axis][k]`.
    pub fn shape_dirs(&self) -> &[[[f64; NUM_SHAPE]; 3]] {
        &self.shape_dirs
    }

    pub fn joint_regressor(&self) -> &[Vec<f64>] {
        &self.joint_regressor
    }

    pub fn tip_vertex_ids(&self) -> &[usize; NUM_FINGERS] {
        &self.tip_vertex_ids
    }

    pub(crate) fn basis(&self) -> &JointBasis {
        self.basis.get_or_init(|| JointBasis::build(self))
    }

    /// Rest vertices deformed by the shape blend shapes.
    pub fn shaped_vertices(&self, beta: &[f64; NUM_SHAPE]) -> Vec<Vector3<f64>> {
        self.template_vertices
            .iter()
            .zip(&self.shape_dirs)
            .map(|(t, dirs)| {
                let mut v = *t;
                for axis in 0..3 {
                    v[axis] += dirs[axis].iter().zip(beta).map(|(d, b)| d * b).sum::<f64>();
                }
                v
            })
            .collect()
    }

    /// Rest joint locations for shape `beta`.
    pub fn rest_joints(&self, beta: &[f64; NUM_SHAPE]) -> [Vector3<f64>; NUM_JOINTS] {
        let shaped = self.shaped_vertices(beta);
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        for (joint, row) in joints.iter_mut().zip(&self.joint_regressor) {
            for (w, v) in row.iter().zip(&shaped) {
                if *w != 0.0 {
                    *joint += *w * v;
                }
            }
        }
        joints
    }

    /// Poses the model and translates it so the regressed root joint sits at
    /// `params.root`. With `root = 0` the result is the root-relative mesh.
    pub fn skin(&self, params: &HandParams) -> Result<Mesh> {
        params.validate()?;
        let theta = params.unit_theta();
        let rest = self.rest_joints(&params.beta);
        let pose = Pose::forward(&self.parents, &theta, &rest);
        let shaped = self.shaped_vertices(&params.beta);
        let vertices = shaped
            .iter()
            .zip(&self.blend_weights)
            .map(|(x, weights)| {
                let mut out = Vector3::zeros();
                for (j, w) in weights.iter().enumerate() {
                    if *w != 0.0 {
                        out += *w * pose.transform(j, x);
                    }
                }
                out
            })
            .collect();
        let mesh = Mesh {
            vertices,
            faces: self.faces.clone(),
        };
        Ok(self.apply_root(&mesh, &Vector3::from(params.root)))
    }

    /// 16 regressed skeleton joints followed by the 5 fingertip vertices.
    pub fn regress_joints(&self, mesh: &Mesh) -> [Vector3<f64>; NUM_KEYPOINTS] {
        let mut joints = [Vector3::zeros(); NUM_KEYPOINTS];
        for (joint, row) in joints.iter_mut().zip(&self.joint_regressor) {
            for (w, v) in row.iter().zip(&mesh.vertices) {
                if *w != 0.0 {
                    *joint += *w * v;
                }
            }
        }
        for (f, &tip) in self.tip_vertex_ids.iter().enumerate() {
            joints[NUM_JOINTS + f] = mesh.vertices[tip];
        }
        joints
    }

    /// Translates `mesh` so that its regressed root joint lands on `p_root`.
    pub fn apply_root(&self, mesh: &Mesh, p_root: &Vector3<f64>) -> Mesh {
        let mut root = Vector3::zeros();
        for (w, v) in self.joint_regressor[0].iter().zip(&mesh.vertices) {
            if *w != 0.0 {
                root += *w * v;
            }
        }
        let shift = p_root - root;
        Mesh {
            vertices: mesh.vertices.iter().map(|v| v + shift).collect(),
            faces: mesh.faces.clone(),
        }
    }

    /// The 21 keypoints of a posed hand relative to its root joint, computed
    /// without skinning the whole mesh.
    pub fn keypoints_root_relative(&self, params: &HandParams) -> Result<[Vector3<f64>; NUM_KEYPOINTS]> {
        params.validate()?;
        let joints = self.basis().evaluate(&params.unit_theta(), &params.beta).joints;
        let root = joints[0];
        Ok(joints.map(|j| j - root))
    }

    /// Keypoints in the camera frame: root-relative keypoints placed at `params.root`.
    pub fn keypoints(&self, params: &HandParams) -> Result<[Vector3<f64>; NUM_KEYPOINTS]> {
        let root = Vector3::from(params.root);
        Ok(self.keypoints_root_relative(params)?.map(|j| j + root))
    }
}

fn validate_parts(p: &ModelParts) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidModel(msg));
    let nv = p.template_vertices.len();
    if nv == 0 {
        return bad("no vertices".into());
    }
    if p.template_vertices.iter().flatten().any(|c| !c.is_finite()) {
        return bad("non-finite template vertex".into());
    }
    if p.blend_weights.len() != nv {
        return bad(format!("{} blend weight rows for {nv} vertices", p.blend_weights.len()));
    }
    for (v, row) in p.blend_weights.iter().enumerate() {
        if row.iter().any(|w| !(*w >= 0.0)) {
            return bad(format!("vertex {v} has a negative or NaN blend weight"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("blend weights of vertex {v} sum to {sum}"));
        }
    }
    if p.parents[0].is_some() {
        return bad("joint 0 must be the root".into());
    }
    for (j, parent) in p.parents.iter().enumerate().skip(1) {
        match parent {
            Some(pj) if *pj < j => {}
            Some(pj) => return bad(format!("parent {pj} of joint {j} does not precede it")),
            None => return bad(format!("joint {j} has no parent")),
        }
    }
    if let Some(f) = p.faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
        return bad(format!("face {f:?} indexes past {nv} vertices"));
    }
    if p.shape_dirs.len() != nv {
        return bad(format!("{} shape rows for {nv} vertices", p.shape_dirs.len()));
    }
    if p.shape_dirs.iter().flatten().flatten().any(|c| !c.is_finite()) {
        return bad("non-finite shape direction".into());
    }
    if p.joint_regressor.len() != NUM_JOINTS {
        return bad(format!("joint regressor has {} rows", p.joint_regressor.len()));
    }
    if let Some(row) = p.joint_regressor.iter().find(|r| r.len() != nv) {
        return bad(format!("joint regressor row of length {}", row.len()));
    }
    for (i, &t) in p.tip_vertex_ids.iter().enumerate() {
        if t >= nv {
            return bad(format!("tip vertex {t} out of range"));
        }
        if p.tip_vertex_ids[..i].contains(&t) {
            return bad(format!("tip vertex {t} listed twice"));
        }
    }
    Ok(())
}

/// Pose, shape and root placement of one hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    /// Local joint rotations as `[w, x, y, z]` unit quaternions, root first.
    pub theta: [[f64; 4]; NUM_JOINTS],
    pub beta: [f64; NUM_SHAPE],
    /// Root joint position in the camera frame.
    pub root: [f64; 3],
}

/// Length of the flat optimization vector: 16 quaternions then 10 shape coefficients.
pub const FLAT_LEN: usize = NUM_JOINTS * 4 + NUM_SHAPE;

impl Default for HandParams {
    fn default() -> Self {
        HandParams {
            theta: [rotation::IDENTITY; NUM_JOINTS],
            beta: [0.0; NUM_SHAPE],
            root: [0.0; 3],
        }
    }
}

impl HandParams {
    pub fn validate(&self) -> Result<()> {
        for (j, q) in self.theta.iter().enumerate() {
            let n = rotation::norm(q);
            if !n.is_finite() || (n - 1.0).abs() > QUAT_NORM_TOL {
                return Err(Error::InvalidParams(format!("quaternion of joint {j} has norm {n}")));
            }
        }
        if self.beta.iter().chain(&self.root).any(|c| !c.is_finite()) {
            return Err(Error::InvalidParams("non-finite shape or root".into()));
        }
        Ok(())
    }

    pub(crate) fn unit_theta(&self) -> [[f64; 4]; NUM_JOINTS] {
        self.theta.map(|q| rotation::normalized(&q))
    }

    /// Copy with every quaternion renormalized.
    pub fn normalized(&self) -> HandParams {
        HandParams {
            theta: self.unit_theta(),
            ..*self
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(FLAT_LEN);
        for q in &self.theta {
            flat.extend_from_slice(q);
        }
        flat.extend_from_slice(&self.beta);
        flat
    }

    /// Rebuilds parameters from a flat vector, keeping `root`. Quaternions
    /// are taken as-is (not renormalized).
    pub fn from_flat(flat: &[f64], root: [f64; 3]) -> HandParams {
        assert_eq!(flat.len(), FLAT_LEN, "flat parameter vector length");
        let mut theta = [[0.0; 4]; NUM_JOINTS];
        for (j, q) in theta.iter_mut().enumerate() {
            q.copy_from_slice(&flat[4 * j..4 * j + 4]);
        }
        let mut beta = [0.0; NUM_SHAPE];
        beta.copy_from_slice(&flat[4 * NUM_JOINTS..]);
        HandParams { theta, beta, root }
    }

    pub fn from_axis_angles(axis_angles: &[[f64; 3]; NUM_JOINTS], beta: [f64; NUM_SHAPE], root: [f64; 3]) -> Self {
        HandParams {
            theta: axis_angles.map(|aa| rotation::from_axis_angle(&aa)),
            beta,
            root,
        }
    }

    pub fn axis_angles(&self) -> [[f64; 3]; NUM_JOINTS] {
        self.theta.map(|q| rotation::to_axis_angle(&q))
    }
}

/// Vertex positions with the face topology of the generating model.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn translated(&self, t: &Vector3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| v + t).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Applies `v -> scale * (v - origin) + target` to every vertex.
    pub fn rescaled_about(&self, origin: &Vector3<f64>, scale: f64, target: &Vector3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| scale * (v - origin) + target).collect(),
            faces: self.faces.clone(),
        }
    }
}
