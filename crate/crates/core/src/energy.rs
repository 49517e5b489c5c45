//! Refinement objective over (theta, beta):
//!
//! `E = lambda_J * E_J + lambda_g * E_g + lambda_id * E_id`
//!
//! * `E_J`: squared reprojection residual of the 21 keypoints, placed as
//!   `s * P_rel + p_root` (perspective) or `s * P_rel.xy + t` (weak), with
//!   optional per-keypoint confidences.
//! * `E_g`: unnatural-twist penalty over the five finger chains.
//! * `E_id`: squared distance to the initial parameters.
//!
//! Gradients are exact reverse-mode derivatives with respect to the flat
//! vector `[q_0 (w,x,y,z), ..., q_15, beta_0..beta_9]`. Quaternions enter the
//! kinematics through `q / |q|`, so the radial component of each joint's
//! rotation gradient is zero; `E_id` uses the raw components.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::model::{finger_chain, HandModel, HandParams, FLAT_LEN, NUM_FINGERS, NUM_JOINTS, NUM_KEYPOINTS, NUM_SHAPE};
use crate::rotation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub lambda_j: f64,
    pub lambda_g: f64,
    pub lambda_id: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            lambda_j: 1.0,
            lambda_g: 100.0,
            lambda_id: 0.1,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_j, self.lambda_g, self.lambda_id]
            .iter()
            .all(|l| *l >= 0.0 && l.is_finite())
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "energy weights must be non-negative: {self:?}"
            )))
        }
    }
}

/// How squared keypoint residuals are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualNorm {
    /// Divide the sum by the keypoint count.
    #[default]
    Mean,
    Sum,
}

/// Placement of root-relative keypoints in the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Perspective { intrinsics: Intrinsics, root: Vector3<f64> },
    Weak { t: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub total: f64,
    pub joint: f64,
    pub twist: f64,
    pub identity: f64,
    /// Empty when only the value was requested.
    pub gradient: Vec<f64>,
}

/// Everything the objective holds fixed during hand-detail refinement.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub model: &'a HandModel,
    pub projection: Projection,
    pub scale: f64,
    pub keypoints: [Vector2<f64>; NUM_KEYPOINTS],
    pub confidences: [f64; NUM_KEYPOINTS],
    pub init: HandParams,
    pub weights: EnergyWeights,
    pub norm: ResidualNorm,
}

impl<'a> Objective<'a> {
    pub fn new(
        model: &'a HandModel,
        projection: Projection,
        scale: f64,
        keypoints: [Vector2<f64>; NUM_KEYPOINTS],
        init: HandParams,
    ) -> Self {
        Objective {
            model,
            projection,
            scale,
            keypoints,
            confidences: [1.0; NUM_KEYPOINTS],
            init,
            weights: EnergyWeights::default(),
            norm: ResidualNorm::Mean,
        }
    }

    pub fn value(&self, params: &HandParams) -> Result<EnergyReport> {
        self.run(params, false)
    }

    pub fn value_and_grad(&self, params: &HandParams) -> Result<EnergyReport> {
        self.run(params, true)
    }

    /// Same as [`Objective::value_and_grad`] on a flat parameter vector.
    pub fn flat(&self, x: &[f64], want_grad: bool) -> Result<EnergyReport> {
        self.run(&HandParams::from_flat(x, self.init.root), want_grad)
    }

    fn run(&self, params: &HandParams, want_grad: bool) -> Result<EnergyReport> {
        let w = self.weights;
        let theta = params.theta.map(|q| {
            let n = rotation::norm(&q);
            [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
        });
        if theta.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParams("zero or non-finite quaternion".into()));
        }
        let basis = self.model.basis();
        let eval = basis.evaluate(&theta, &params.beta);

        let mut grad_joints = [Vector3::zeros(); NUM_KEYPOINTS];
        let joint = self.reprojection(&eval.joints, want_grad.then_some(&mut grad_joints), w.lambda_j)?;
        let twist = twist_energy(&eval.joints, want_grad.then_some(&mut grad_joints), w.lambda_g);
        let identity = identity_energy(params, &self.init);
        let total = w.lambda_j * joint + w.lambda_g * twist + w.lambda_id * identity;

        let mut gradient = Vec::new();
        if want_grad {
            let (g_unit, g_beta) = basis.backward(&eval, &theta, &params.beta, &grad_joints);
            gradient.reserve(FLAT_LEN);
            for (q, g) in params.theta.iter().zip(&g_unit) {
                gradient.extend_from_slice(&rotation::normalize_grad(q, g));
            }
            gradient.extend_from_slice(&g_beta);
            if w.lambda_id != 0.0 {
                add_identity_grad(params, &self.init, w.lambda_id, &mut gradient);
            }
        }
        Ok(EnergyReport {
            total,
            joint,
            twist,
            identity,
            gradient,
        })
    }

    /// Reprojection term; accumulates `lambda * dE_J/dP` into `grad` when given.
    fn reprojection(
        &self,
        joints: &[Vector3<f64>; NUM_KEYPOINTS],
        mut grad: Option<&mut [Vector3<f64>; NUM_KEYPOINTS]>,
        lambda: f64,
    ) -> Result<f64> {
        let denom = match self.norm {
            ResidualNorm::Mean => NUM_KEYPOINTS as f64,
            ResidualNorm::Sum => 1.0,
        };
        let root = joints[0];
        let s = self.scale;
        let mut sum = 0.0;
        let mut g_root = Vector3::zeros();
        for o in 0..NUM_KEYPOINTS {
            let rel = joints[o] - root;
            let c = self.confidences[o];
            let kp = self.keypoints[o];
            let (residual, jac_u, jac_v) = match &self.projection {
                Projection::Perspective {
                    intrinsics: k,
                    root: p_root,
                } => {
                    let x = s * rel + p_root;
                    if !(x.z > 0.0) {
                        return Err(Error::BehindCamera { joint: o, z: x.z });
                    }
                    let iz = 1.0 / x.z;
                    let r = Vector2::new(k.fx * x.x * iz + k.cx - kp.x, k.fy * x.y * iz + k.cy - kp.y);
                    let ju = Vector3::new(k.fx * iz, 0.0, -k.fx * x.x * iz * iz) * s;
                    let jv = Vector3::new(0.0, k.fy * iz, -k.fy * x.y * iz * iz) * s;
                    (r, ju, jv)
                }
                Projection::Weak { t } => {
                    let r = Vector2::new(s * rel.x + t[0] - kp.x, s * rel.y + t[1] - kp.y);
                    (r, Vector3::new(s, 0.0, 0.0), Vector3::new(0.0, s, 0.0))
                }
            };
            sum += c * residual.norm_squared();
            if let Some(g) = grad.as_deref_mut() {
                let scale = lambda * 2.0 * c / denom;
                let d = scale * (residual.x * jac_u + residual.y * jac_v);
                g[o] += d;
                g_root -= d;
            }
        }
        if let Some(g) = grad {
            g[0] += g_root;
        }
        Ok(sum / denom)
    }
}

/// Twist penalty of one finger given its joints in tip-to-palm order.
fn finger_twist(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> (f64, f64, f64) {
    let (ab, bc, cd) = (a - b, b - c, c - d);
    let n1 = ab.cross(&bc);
    let triple = n1.dot(&cd);
    let bend = n1.dot(&bc.cross(&cd));
    (triple.abs() - bend.min(0.0), triple, bend)
}

fn twist_energy(
    joints: &[Vector3<f64>; NUM_KEYPOINTS],
    grad: Option<&mut [Vector3<f64>; NUM_KEYPOINTS]>,
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    for f in 0..NUM_FINGERS {
        let [ia, ib, ic, id] = finger_chain(f);
        let (a, b, c, d) = (joints[ia], joints[ib], joints[ic], joints[id]);
        let (e, triple, bend) = finger_twist(&a, &b, &c, &d);
        total += e;
        let Some(g) = grad.as_deref_mut() else { continue };
        // Subgradient 0 at both kinks.
        let dt = if triple > 0.0 {
            1.0
        } else if triple < 0.0 {
            -1.0
        } else {
            0.0
        };
        let dbend = if bend < 0.0 { -1.0 } else { 0.0 };
        let (va, vb, vc) = (a - b, b - c, c - d);
        // d(triple)/dV and d(bend)/dV, using bend = (A.B)(B.C) - (A.C)(B.B)
        let (ab_, bc_, ac_, bb_) = (va.dot(&vb), vb.dot(&vc), va.dot(&vc), vb.dot(&vb));
        let g_va = dt * vb.cross(&vc) + dbend * (bc_ * vb - bb_ * vc);
        let g_vb = dt * vc.cross(&va) + dbend * (bc_ * va + ab_ * vc - 2.0 * ac_ * vb);
        let g_vc = dt * va.cross(&vb) + dbend * (ab_ * vb - bb_ * va);
        g[ia] += lambda * g_va;
        g[ib] += lambda * (g_vb - g_va);
        g[ic] += lambda * (g_vc - g_vb);
        g[id] -= lambda * g_vc;
    }
    total
}

/// Unnatural-twist energy summed over the five fingers of a 21-keypoint set.
pub fn e_twist(joints: &[Vector3<f64>; NUM_KEYPOINTS]) -> f64 {
    twist_energy(joints, None, 0.0)
}

/// Per finger, the signs of the triple product and of the bend term
/// (`-1`, `0` or `1`). The twist energy is smooth while these stay fixed.
pub fn twist_branches(joints: &[Vector3<f64>; NUM_KEYPOINTS]) -> [[i8; 2]; NUM_FINGERS] {
    let sign = |x: f64| (x > 0.0) as i8 - (x < 0.0) as i8;
    std::array::from_fn(|f| {
        let [a, b, c, d] = finger_chain(f);
        let (_, triple, bend) = finger_twist(&joints[a], &joints[b], &joints[c], &joints[d]);
        [sign(triple), sign(bend)]
    })
}

/// Whether each joint's quaternion lies on the far hemisphere of `init`,
/// which flips its sign in the identity term.
pub fn identity_branches(params: &HandParams, init: &HandParams) -> [bool; NUM_JOINTS] {
    std::array::from_fn(|j| aligned(&params.theta[j], &init.theta[j]).1 < 0.0)
}

/// `q` flipped onto the hemisphere of `reference`.
fn aligned(q: &[f64; 4], reference: &[f64; 4]) -> ([f64; 4], f64) {
    let dot: f64 = q.iter().zip(reference).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        (q.map(|c| -c), -1.0)
    } else {
        (*q, 1.0)
    }
}

/// `|beta - beta'|^2 + sum_j |q_j - q'_j|^2`, each `q_j` sign-aligned with `q'_j`.
pub fn e_identity(params: &HandParams, init: &HandParams) -> f64 {
    identity_energy(params, init)
}

fn identity_energy(params: &HandParams, init: &HandParams) -> f64 {
    let mut e: f64 = params.beta.iter().zip(&init.beta).map(|(a, b)| (a - b) * (a - b)).sum();
    for (q, q0) in params.theta.iter().zip(&init.theta) {
        let (qa, _) = aligned(q, q0);
        e += qa.iter().zip(q0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    e
}

fn add_identity_grad(params: &HandParams, init: &HandParams, lambda: f64, grad: &mut [f64]) {
    for (j, (q, q0)) in params.theta.iter().zip(&init.theta).enumerate() {
        let (qa, sign) = aligned(q, q0);
        for c in 0..4 {
            grad[4 * j + c] += lambda * 2.0 * sign * (qa[c] - q0[c]);
        }
    }
    for k in 0..NUM_SHAPE {
        grad[4 * NUM_JOINTS + k] += lambda * 2.0 * (params.beta[k] - init.beta[k]);
    }
}

/// Scale energy: reprojection error of `s * P_rel + root` against `kps` under
/// a perspective camera (mean over keypoints, unit confidences).
pub fn e_scale(
    s: f64,
    params: &HandParams,
    model: &HandModel,
    intrinsics: &Intrinsics,
    kps: &[Vector2<f64>; NUM_KEYPOINTS],
    root: &Vector3<f64>,
) -> Result<f64> {
    let projection = Projection::Perspective {
        intrinsics: *intrinsics,
        root: *root,
    };
    e_joint(params, model, projection, s, kps)
}

/// Joint-location energy at a fixed scale (mean over keypoints, unit confidences).
pub fn e_joint(
    params: &HandParams,
    model: &HandModel,
    projection: Projection,
    s: f64,
    kps: &[Vector2<f64>; NUM_KEYPOINTS],
) -> Result<f64> {
    Objective::new(model, projection, s, *kps, *params)
        .value(params)
        .map(|r| r.joint)
}

/// Weighted total energy and its gradient over the flat (theta, beta) vector.
pub fn total_energy_and_grad(objective: &Objective<'_>, params: &HandParams) -> Result<EnergyReport> {
    objective.value_and_grad(params)
}
