//! Keypoints as a closed-form function of (theta, beta).
//!
//! Since skinning is affine per bone and joint regression is linear, each
//! keypoint is `sum_k R_k m_k(beta) + w_k b_k` where `(R_k, b_k)` is bone k's
//! skinning transform and `w_k`, `m_k` are regressor-and-weight-folded sums
//! over the rest vertices. Folding once per model makes a keypoint
//! evaluation independent of the vertex count.

use nalgebra::{Matrix3, SMatrix, Vector3};

use super::{HandModel, NUM_JOINTS, NUM_KEYPOINTS, NUM_SHAPE};
use crate::rotation;

type ShapeBlock = SMatrix<f64, 3, NUM_SHAPE>;

/// Per-joint transforms of one pose. Bone j maps a rest point x to
/// `world[j] * x + offset[j]`.
#[derive(Debug, Clone)]
pub(crate) struct Pose {
    pub local: [Matrix3<f64>; NUM_JOINTS],
    pub world: [Matrix3<f64>; NUM_JOINTS],
    /// `J_j - R_j J_j`: rotation of bone j about its rest pivot.
    pub pivot: [Vector3<f64>; NUM_JOINTS],
    pub offset: [Vector3<f64>; NUM_JOINTS],
}

impl Pose {
    pub fn forward(
        parents: &[Option<usize>; NUM_JOINTS],
        theta: &[[f64; 4]; NUM_JOINTS],
        rest: &[Vector3<f64>; NUM_JOINTS],
    ) -> Pose {
        let local = theta.map(|q| rotation::to_matrix(&q));
        let mut world = [Matrix3::identity(); NUM_JOINTS];
        let mut pivot = [Vector3::zeros(); NUM_JOINTS];
        let mut offset = [Vector3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            pivot[j] = rest[j] - local[j] * rest[j];
            match parents[j] {
                None => {
                    world[j] = local[j];
                    offset[j] = pivot[j];
                }
                Some(p) => {
                    world[j] = world[p] * local[j];
                    offset[j] = world[p] * pivot[j] + offset[p];
                }
            }
        }
        Pose {
            local,
            world,
            pivot,
            offset,
        }
    }

    pub fn transform(&self, joint: usize, x: &Vector3<f64>) -> Vector3<f64> {
        self.world[joint] * x + self.offset[joint]
    }
}

#[derive(Debug, Clone)]
struct Term {
    bone: usize,
    weight: f64,
    rest: Vector3<f64>,
    shape: ShapeBlock,
}

#[derive(Debug, Clone)]
pub(crate) struct JointBasis {
    parents: [Option<usize>; NUM_JOINTS],
    rows: Vec<Vec<Term>>,
    rest_joints: [Vector3<f64>; NUM_JOINTS],
    rest_joint_shape: [ShapeBlock; NUM_JOINTS],
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BasisEval {
    pub joints: [Vector3<f64>; NUM_KEYPOINTS],
    pose: Pose,
    rest: [Vector3<f64>; NUM_JOINTS],
}

fn shape_block(dirs: &[[f64; NUM_SHAPE]; 3]) -> ShapeBlock {
    ShapeBlock::from_fn(|r, c| dirs[r][c])
}

impl JointBasis {
    pub fn build(model: &HandModel) -> JointBasis {
        let nv = model.vertex_count();
        let mut rows = Vec::with_capacity(NUM_KEYPOINTS);
        for o in 0..NUM_KEYPOINTS {
            let regressor: Vec<(usize, f64)> = if o < NUM_JOINTS {
                model.joint_regressor[o]
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(v, w)| (v, *w))
                    .collect()
            } else {
                vec![(model.tip_vertex_ids[o - NUM_JOINTS], 1.0)]
            };
            let mut terms: Vec<Term> = (0..NUM_JOINTS)
                .map(|bone| Term {
                    bone,
                    weight: 0.0,
                    rest: Vector3::zeros(),
                    shape: ShapeBlock::zeros(),
                })
                .collect();
            for &(v, r) in &regressor {
                debug_assert!(v < nv);
                let shape = shape_block(&model.shape_dirs[v]);
                for (bone, w) in model.blend_weights[v].iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    let rw = r * w;
                    let term = &mut terms[bone];
                    term.weight += rw;
                    term.rest += rw * model.template_vertices[v];
                    term.shape += rw * shape;
                }
            }
            terms.retain(|t| t.weight != 0.0 || t.rest != Vector3::zeros() || t.shape != ShapeBlock::zeros());
            rows.push(terms);
        }

        let mut rest_joints = [Vector3::zeros(); NUM_JOINTS];
        let mut rest_joint_shape = [ShapeBlock::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            for (v, r) in model.joint_regressor[j].iter().enumerate() {
                if *r != 0.0 {
                    rest_joints[j] += *r * model.template_vertices[v];
                    rest_joint_shape[j] += *r * shape_block(&model.shape_dirs[v]);
                }
            }
        }
        JointBasis {
            parents: model.parents,
            rows,
            rest_joints,
            rest_joint_shape,
        }
    }

    fn shaped_rest(&self, beta: &nalgebra::SVector<f64, NUM_SHAPE>) -> [Vector3<f64>; NUM_JOINTS] {
        std::array::from_fn(|j| self.rest_joints[j] + self.rest_joint_shape[j] * beta)
    }

    /// Keypoints (not root-shifted) of the posed hand; `theta` must be unit.
    pub fn evaluate(&self, theta: &[[f64; 4]; NUM_JOINTS], beta: &[f64; NUM_SHAPE]) -> BasisEval {
        let beta = nalgebra::SVector::<f64, NUM_SHAPE>::from_column_slice(beta);
        let rest = self.shaped_rest(&beta);
        let pose = Pose::forward(&self.parents, theta, &rest);
        let mut joints = [Vector3::zeros(); NUM_KEYPOINTS];
        for (joint, terms) in joints.iter_mut().zip(&self.rows) {
            for t in terms {
                let m = t.rest + t.shape * beta;
                *joint += pose.world[t.bone] * m + t.weight * pose.offset[t.bone];
            }
        }
        BasisEval { joints, pose, rest }
    }

    /// Reverse-mode pass: given dE/d(keypoints), returns dE/d(unit quaternion
    /// components) per joint and dE/d(beta).
    pub fn backward(
        &self,
        eval: &BasisEval,
        theta: &[[f64; 4]; NUM_JOINTS],
        beta: &[f64; NUM_SHAPE],
        grad_joints: &[Vector3<f64>; NUM_KEYPOINTS],
    ) -> ([[f64; 4]; NUM_JOINTS], [f64; NUM_SHAPE]) {
        let beta_v = nalgebra::SVector::<f64, NUM_SHAPE>::from_column_slice(beta);
        let pose = &eval.pose;
        let mut g_world = [Matrix3::zeros(); NUM_JOINTS];
        let mut g_offset = [Vector3::zeros(); NUM_JOINTS];
        let mut g_beta = nalgebra::SVector::<f64, NUM_SHAPE>::zeros();

        for (g, terms) in grad_joints.iter().zip(&self.rows) {
            if *g == Vector3::zeros() {
                continue;
            }
            for t in terms {
                let m = t.rest + t.shape * beta_v;
                g_world[t.bone] += g * m.transpose();
                g_offset[t.bone] += t.weight * g;
                g_beta += t.shape.transpose() * (pose.world[t.bone].transpose() * g);
            }
        }

        let mut g_local = [Matrix3::zeros(); NUM_JOINTS];
        let mut g_rest = [Vector3::zeros(); NUM_JOINTS];
        for j in (0..NUM_JOINTS).rev() {
            let g_pivot = match self.parents[j] {
                None => {
                    g_local[j] += g_world[j];
                    g_offset[j]
                }
                Some(p) => {
                    let gw = g_world[j];
                    let go = g_offset[j];
                    g_world[p] += gw * pose.local[j].transpose() + go * pose.pivot[j].transpose();
                    g_local[j] += pose.world[p].transpose() * gw;
                    g_offset[p] += go;
                    pose.world[p].transpose() * go
                }
            };
            // pivot = J - R J
            g_rest[j] += g_pivot - pose.local[j].transpose() * g_pivot;
            g_local[j] -= g_pivot * eval.rest[j].transpose();
        }
        for (shape, g) in self.rest_joint_shape.iter().zip(&g_rest) {
            g_beta += shape.transpose() * g;
        }

        let g_theta = std::array::from_fn(|j| rotation::matrix_grad_to_quat(&theta[j], &g_local[j]));
        let mut gb = [0.0; NUM_SHAPE];
        gb.copy_from_slice(g_beta.as_slice());
        (g_theta, gb)
    }
}
