//! Central finite-difference check of the analytic energy gradient over
//! seeded random configurations.

use std::time::{Duration, Instant};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::camera::{project_persp, Intrinsics};
use crate::energy::{identity_branches, twist_branches, EnergyWeights, Objective, Projection, ResidualNorm};
use crate::error::{Error, Result};
use crate::model::{HandModel, HandParams, NUM_JOINTS, NUM_KEYPOINTS};
use crate::rotation;
use crate::synth::fan_out;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub eps: f64,
    pub tol: f64,
    pub trials: usize,
    pub seed: u64,
    /// Coordinates where both derivatives are below this are skipped.
    pub floor: f64,
    pub jobs: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            trials: 1000,
            seed: 0,
            floor: 1e-8,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoordinateError {
    pub trial: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    /// Coordinates whose stencil crosses a kink of the twist or identity term.
    pub kinks: usize,
    pub failures: usize,
    pub worst: Option<CoordinateError>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Name of a flat-vector coordinate, e.g. `theta[3].x` or `beta[2]`.
pub fn coordinate_name(i: usize) -> String {
    if i < 4 * NUM_JOINTS {
        format!("theta[{}].{}", i / 4, ["w", "x", "y", "z"][i % 4])
    } else {
        format!("beta[{}]", i - 4 * NUM_JOINTS)
    }
}

/// Relative error `|a - f| / max(|a|, |f|)`, or `None` when both are below `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> Option<f64> {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        return None;
    }
    Some((analytic - numeric).abs() / scale)
}

/// Which smooth piece of the energy `x` lies on.
fn branch(objective: &Objective<'_>, x: &[f64]) -> Result<(Vec<[i8; 2]>, Vec<bool>)> {
    let params = HandParams::from_flat(x, [0.0; 3]).normalized();
    let twist = if objective.weights.lambda_g > 0.0 {
        twist_branches(&objective.model.keypoints_root_relative(&params)?).to_vec()
    } else {
        Vec::new()
    };
    let identity = if objective.weights.lambda_id > 0.0 {
        identity_branches(&HandParams::from_flat(x, [0.0; 3]), &objective.init).to_vec()
    } else {
        Vec::new()
    };
    Ok((twist, identity))
}

/// Result of [`check_point`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCheck {
    pub errors: Vec<CoordinateError>,
    /// Both derivatives below the floor.
    pub skipped: usize,
    /// The stencil crosses a kink, so central differences do not estimate
    /// the derivative.
    pub kinks: usize,
}

/// Compares the analytic gradient at `x` with central differences of step `eps`.
pub fn check_point(objective: &Objective<'_>, x: &[f64], eps: f64, floor: f64, trial: usize) -> Result<PointCheck> {
    let analytic = objective.flat(x, true)?.gradient;
    let here = branch(objective, x)?;
    let mut out = PointCheck::default();
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = objective.flat(&probe, false)?.total;
        let crosses_up = branch(objective, &probe)? != here;
        probe[i] = x[i] - eps;
        let minus = objective.flat(&probe, false)?.total;
        let crosses_down = branch(objective, &probe)? != here;
        probe[i] = x[i];
        if crosses_up || crosses_down {
            out.kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        match relative_error(analytic[i], numeric, floor) {
            Some(rel_error) => out.errors.push(CoordinateError {
                trial,
                coordinate: i,
                analytic: analytic[i],
                numeric,
                rel_error,
            }),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> [f64; 4] {
    let axis = Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    rotation::from_axis(&axis, rng.random_range(0.0..max_angle))
}

/// A random objective and evaluation point: raw (non-unit) quaternions,
/// random shape, perspective or weak placement, noisy keypoints, random
/// weights, confidences and residual reduction.
pub fn random_problem<'a>(model: &'a HandModel, rng: &mut ChaCha8Rng) -> Result<(Objective<'a>, Vec<f64>)> {
    let mut target = HandParams::default();
    for q in target.theta.iter_mut() {
        *q = random_rotation(rng, 0.9);
    }
    for b in target.beta.iter_mut() {
        *b = StandardNormal.sample(rng);
    }
    let mut point = target;
    for q in point.theta.iter_mut() {
        let r = random_rotation(rng, 0.3);
        let n = rng.random_range(0.7..1.3);
        *q = rotation::mul(q, &r).map(|c| c * n);
    }
    for b in point.beta.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *b += 0.3 * z;
    }
    let mut anchor = target;
    for q in anchor.theta.iter_mut() {
        *q = rotation::mul(q, &random_rotation(rng, 0.2));
    }
    let rel = model.keypoints_root_relative(&target)?;
    let noise = |rng: &mut ChaCha8Rng| Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng)) * 2.0;

    let (projection, scale, keypoints) = if rng.random_bool(0.5) {
        let f = rng.random_range(300.0..800.0);
        let k = Intrinsics::new(f, f * rng.random_range(0.9..1.1), 160.0, 120.0)?;
        let root = Vector3::new(
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(0.4..0.8),
        );
        let s = rng.random_range(0.8..1.2);
        let mut kps = [Vector2::zeros(); NUM_KEYPOINTS];
        for (kp, p) in kps.iter_mut().zip(&rel) {
            *kp = project_persp(&k, &(s * p + root))? + noise(rng);
        }
        (Projection::Perspective { intrinsics: k, root }, s, kps)
    } else {
        let s = rng.random_range(300.0..1000.0);
        let t = [rng.random_range(50.0..250.0), rng.random_range(50.0..250.0)];
        let kps = rel.map(|p| Vector2::new(s * p.x + t[0], s * p.y + t[1]) + noise(rng));
        (Projection::Weak { t }, s, kps)
    };

    let mut objective = Objective::new(model, projection, scale, keypoints, anchor);
    for c in objective.confidences.iter_mut() {
        *c = rng.random_range(0.3..1.0);
    }
    objective.weights = EnergyWeights {
        lambda_j: rng.random_range(0.5..2.0),
        lambda_g: rng.random_range(0.0..200.0),
        lambda_id: rng.random_range(0.0..1.0),
    };
    objective.norm = if rng.random_bool(0.5) {
        ResidualNorm::Mean
    } else {
        ResidualNorm::Sum
    };
    Ok((objective, point.to_flat()))
}

/// Runs `cfg.trials` seeded trials; trial `i` uses ChaCha stream `i`.
pub fn run_gradcheck(model: &HandModel, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if !(cfg.eps > 0.0 && cfg.tol > 0.0) || cfg.trials == 0 {
        return Err(Error::InvalidConfig(
            "gradcheck needs eps > 0, tol > 0 and at least one trial".into(),
        ));
    }
    let start = Instant::now();
    let per_trial = fan_out(cfg.trials, cfg.jobs, |trial| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(trial as u64);
        let (objective, x) = random_problem(model, &mut rng)?;
        check_point(&objective, &x, cfg.eps, cfg.floor, trial)
    })?;
    let mut report = GradcheckReport {
        trials: cfg.trials,
        checked: 0,
        skipped: 0,
        kinks: 0,
        failures: 0,
        worst: None,
        elapsed: Duration::ZERO,
    };
    for point in per_trial {
        report.skipped += point.skipped;
        report.kinks += point.kinks;
        report.checked += point.errors.len();
        for e in point.errors {
            if e.rel_error >= cfg.tol {
                report.failures += 1;
            }
            if report.worst.is_none_or(|w| e.rel_error > w.rel_error) {
                report.worst = Some(e);
            }
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}
