//! Two-step refinement: a closed-form scale solve, then Adam on the pose and
//! shape parameters with the scale and root placement frozen.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{persp_scale_analytic, unproject_persp, weak_s_t_from_keypoints, CameraSpec};
use crate::energy::{EnergyReport, EnergyWeights, Objective, Projection, ResidualNorm};
use crate::error::{Error, Result};
use crate::model::{HandModel, HandParams, Mesh, FLAT_LEN, NUM_JOINTS};
use crate::observations::Observations;
use crate::rotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    #[default]
    Perspective,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub mode: FitMode,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weights: EnergyWeights,
    pub renormalize_quaternions: bool,
    /// Stop before a step once the gradient norm drops below this.
    pub early_stop_grad_norm: Option<f64>,
    pub residual_norm: ResidualNorm,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: FitMode::Perspective,
            iterations: 20,
            learning_rate: 0.003,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weights: EnergyWeights::default(),
            renormalize_quaternions: true,
            early_stop_grad_norm: None,
            residual_norm: ResidualNorm::Mean,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("Adam moment decay rates must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        self.weights.validate()
    }
}

/// Adam moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Advances the moments with `grad` and returns the bias-corrected update to
/// add to the parameters.
pub fn adam_step(state: &mut AdamState, grad: &[f64], cfg: &FitConfig) -> Vec<f64> {
    assert_eq!(state.m.len(), grad.len(), "Adam state and gradient lengths differ");
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t);
    let c2 = 1.0 - b2.powi(state.t);
    let mut delta = Vec::with_capacity(grad.len());
    for ((m, v), g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grad) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        delta.push(-cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps));
    }
    delta
}

/// Outcome of the Adam stage.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub params: HandParams,
    pub initial_energy: f64,
    /// Total energy after each step.
    pub energy_trace: Vec<f64>,
    /// Energy terms at `params`.
    pub last: EnergyReport,
    pub iterations_run: usize,
}

fn renormalize(x: &mut [f64]) {
    for j in 0..NUM_JOINTS {
        let q = [x[4 * j], x[4 * j + 1], x[4 * j + 2], x[4 * j + 3]];
        x[4 * j..4 * j + 4].copy_from_slice(&rotation::normalized(&q));
    }
}

/// Runs Adam on `objective` starting from `start`. An evaluation that fails
/// numerically after a step is retried once with half the step.
pub fn refine(objective: &Objective<'_>, start: &HandParams, cfg: &FitConfig) -> Result<Refinement> {
    cfg.validate()?;
    let root = start.root;
    let mut x = start.to_flat();
    let mut report = objective.flat(&x, true)?;
    let initial_energy = report.total;
    let mut adam = AdamState::new(FLAT_LEN);
    let mut trace = Vec::with_capacity(cfg.iterations);

    let attempt = |x: &[f64], delta: &[f64], fraction: f64| -> Result<(Vec<f64>, EnergyReport)> {
        let mut next: Vec<f64> = x.iter().zip(delta).map(|(a, d)| a + fraction * d).collect();
        if cfg.renormalize_quaternions {
            renormalize(&mut next);
        }
        let r = objective.flat(&next, true)?;
        Ok((next, r))
    };

    for _ in 0..cfg.iterations {
        if let Some(tol) = cfg.early_stop_grad_norm {
            let norm = report.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < tol {
                break;
            }
        }
        let delta = adam_step(&mut adam, &report.gradient, cfg);
        let (next, r) = match attempt(&x, &delta, 1.0) {
            Ok(ok) => ok,
            Err(e) if e.is_numerical() => attempt(&x, &delta, 0.5)?,
            Err(e) => return Err(e),
        };
        x = next;
        report = r;
        trace.push(report.total);
    }

    Ok(Refinement {
        params: HandParams::from_flat(&x, root).normalized(),
        initial_energy,
        iterations_run: trace.len(),
        energy_trace: trace,
        last: report,
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub mode: FitMode,
    /// Refined pose and shape; `root` holds the fixed root placement in
    /// perspective mode and the initial root otherwise.
    pub params_refined: HandParams,
    pub s_star: f64,
    /// Image translation in weak mode.
    pub weak_t: Option<[f64; 2]>,
    pub initial_energy: f64,
    pub energy_trace: Vec<f64>,
    pub final_terms: EnergyReport,
    pub iterations_run: usize,
    pub elapsed: Duration,
    pub scale_elapsed: Duration,
}

impl FitResult {
    pub fn final_energy(&self) -> f64 {
        self.energy_trace.last().copied().unwrap_or(self.initial_energy)
    }

    /// Camera-frame keypoints in perspective mode (`s * P_rel + p_root`), or
    /// scaled root-relative keypoints in weak mode.
    pub fn placed_keypoints(&self, model: &HandModel) -> Result<[Vector3<f64>; 21]> {
        let rel = model.keypoints_root_relative(&self.params_refined)?;
        let root = self.placement_root();
        Ok(rel.map(|p| self.s_star * p + root))
    }

    /// The refined mesh placed the same way as [`FitResult::placed_keypoints`].
    pub fn mesh(&self, model: &HandModel) -> Result<Mesh> {
        let mut p = self.params_refined;
        p.root = [0.0; 3];
        let mesh = model.skin(&p)?;
        Ok(mesh.rescaled_about(&Vector3::zeros(), self.s_star, &self.placement_root()))
    }

    fn placement_root(&self) -> Vector3<f64> {
        match self.mode {
            FitMode::Perspective => Vector3::from(self.params_refined.root),
            FitMode::Weak => Vector3::zeros(),
        }
    }

    pub fn report(&self) -> FitReport {
        let per_step = if self.iterations_run > 0 {
            (self.elapsed - self.scale_elapsed).as_secs_f64() * 1e3 / self.iterations_run as f64
        } else {
            0.0
        };
        FitReport {
            mode: self.mode,
            s_star: self.s_star,
            weak_t: self.weak_t,
            params: self.params_refined,
            initial_energy: self.initial_energy,
            final_energy: self.final_energy(),
            energy_trace: self.energy_trace.clone(),
            terms: Terms {
                joint: self.final_terms.joint,
                twist: self.final_terms.twist,
                identity: self.final_terms.identity,
            },
            iterations_run: self.iterations_run,
            timing: Some(Timing {
                total_ms: self.elapsed.as_secs_f64() * 1e3,
                scale_ms: self.scale_elapsed.as_secs_f64() * 1e3,
                per_step_ms: per_step,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub joint: f64,
    pub twist: f64,
    pub identity: f64,
}

/// Wall-clock figures; the only non-reproducible part of a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub scale_ms: f64,
    pub per_step_ms: f64,
}

/// Serialized form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mode: FitMode,
    pub s_star: f64,
    pub weak_t: Option<[f64; 2]>,
    pub params: HandParams,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub energy_trace: Vec<f64>,
    pub terms: Terms,
    pub iterations_run: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit report serializes")
    }

    pub fn without_timing(&self) -> FitReport {
        FitReport {
            timing: None,
            ..self.clone()
        }
    }
}

/// Solves the scale, then refines `(theta, beta)` from `init`.
///
/// Perspective mode needs intrinsics in `cam` and `obs.d_root`; the root is
/// placed at the back-projection of the root keypoint at that depth. Weak
/// mode ignores `cam` and pins the translation to the root keypoint.
pub fn tailor_fit(
    model: &HandModel,
    init: &HandParams,
    obs: &Observations,
    cam: &CameraSpec,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let start = Instant::now();
    cfg.validate()?;
    init.validate()?;
    obs.validate()?;
    let mut init = init.normalized();
    let kps = obs.keypoint_vectors();
    let rel = model.keypoints_root_relative(&init)?;
    let root_px = obs.keypoints[0];

    let (s_star, projection, weak_t) = match cfg.mode {
        FitMode::Perspective => {
            let CameraSpec::Perspective(k) = cam else {
                return Err(Error::InvalidConfig(
                    "perspective fitting needs camera intrinsics".into(),
                ));
            };
            k.validate()?;
            let d_root = obs
                .d_root
                .ok_or_else(|| Error::InvalidObservations("perspective fitting needs d_root".into()))?;
            let p_root = unproject_persp(k, [root_px[0], root_px[1], 0.0], d_root)?;
            let s = persp_scale_analytic(k, &rel, &kps, root_px, d_root)?;
            init.root = p_root.into();
            (
                s,
                Projection::Perspective {
                    intrinsics: *k,
                    root: p_root,
                },
                None,
            )
        }
        FitMode::Weak => {
            let (s, t) = weak_s_t_from_keypoints(&rel, &kps, root_px)?;
            (s, Projection::Weak { t }, Some(t))
        }
    };
    if !(s_star > 0.0) {
        return Err(Error::DegenerateScale("solved scale is not positive"));
    }
    let scale_elapsed = start.elapsed();

    let mut objective = Objective::new(model, projection, s_star, kps, init);
    objective.confidences = obs.confidences;
    objective.weights = cfg.weights;
    objective.norm = cfg.residual_norm;
    let r = refine(&objective, &init, cfg)?;

    Ok(FitResult {
        mode: cfg.mode,
        params_refined: r.params,
        s_star,
        weak_t,
        initial_energy: r.initial_energy,
        energy_trace: r.energy_trace,
        final_terms: r.last,
        iterations_run: r.iterations_run,
        elapsed: start.elapsed(),
        scale_elapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project_persp, Intrinsics};
    use crate::model::make_toy_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = AdamState::new(5);
        let d = adam_step(&mut s, &[0.0; 5], &FitConfig::default());
        assert_eq!(d, vec![0.0; 5]);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = FitConfig::default();
        let g = [0.5, -2.0, 1e-3];
        let mut s = AdamState::new(3);
        let d = adam_step(&mut s, &g, &cfg);
        for (di, gi) in d.iter().zip(g) {
            // m_hat = g, v_hat = g^2 after bias correction.
            let expect = -cfg.learning_rate * gi / (gi.abs() + cfg.adam_eps);
            assert!((di - expect).abs() < 1e-15, "{di} vs {expect}");
        }
    }

    #[test]
    fn second_step_matches_hand_computation() {
        let cfg = FitConfig::default();
        let mut s = AdamState::new(1);
        adam_step(&mut s, &[1.0], &cfg);
        let d = adam_step(&mut s, &[3.0], &cfg);
        let m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0;
        let v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64 * 0.999);
        let expect = -0.003 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((d[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn equal_gradients_equal_updates() {
        let mut s = AdamState::new(2);
        let cfg = FitConfig::default();
        for g in [0.3, -1.0, 2.5] {
            let d = adam_step(&mut s, &[g, g], &cfg);
            assert_eq!(d[0], d[1]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            iterations: 0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FitConfig {
            learning_rate: 0.0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn intrinsics() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 160.0, 160.0).unwrap()
    }

    fn posed(seed: u64, amplitude: f64) -> HandParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = HandParams::default();
        for q in p.theta.iter_mut().skip(1) {
            let aa = [0.0, 0.0, 0.0].map(|_: f64| rng.random_range(-amplitude..amplitude));
            *q = rotation::from_axis_angle(&aa);
        }
        p.root = [0.01, -0.04, 0.5];
        p
    }

    fn exact_obs(model: &HandModel, gt: &HandParams) -> Observations {
        let k = intrinsics();
        let kp = model.keypoints(gt).unwrap();
        let mut obs = Observations::new(kp.map(|p| project_persp(&k, &p).unwrap().into()), [320, 320]);
        obs.d_root = Some(gt.root[2]);
        obs
    }

    fn perturb(p: &HandParams, seed: u64, sigma: f64) -> HandParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = *p;
        for q in out.theta.iter_mut().skip(1) {
            let axis = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            *q = rotation::mul(q, &rotation::from_axis(&axis, sigma));
        }
        out
    }

    fn mpe_2d(model: &HandModel, fit: &FitResult, obs: &Observations) -> f64 {
        let k = intrinsics();
        let placed = fit.placed_keypoints(model).unwrap();
        placed
            .iter()
            .zip(obs.keypoints)
            .map(|(p, kp)| (project_persp(&k, p).unwrap() - nalgebra::Vector2::from(kp)).norm())
            .sum::<f64>()
            / 21.0
    }

    /// In-plane rotations only: every joint stays at the root depth and every
    /// finger stays straight.
    fn planar(seed: u64) -> HandParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = HandParams::default();
        for j in [0, 1, 4, 7, 10, 13] {
            p.theta[j] = rotation::from_axis(&Vector3::z(), rng.random_range(-0.3..0.3));
        }
        p.root = [0.01, -0.04, 0.5];
        p
    }

    fn flat_distance(a: &HandParams, b: &HandParams) -> f64 {
        a.to_flat()
            .iter()
            .zip(b.to_flat())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn ground_truth_is_a_fixed_point_with_early_stop() {
        let model = make_toy_model(1, 512).unwrap();
        let gt = planar(3);
        let obs = exact_obs(&model, &gt);
        let cam = CameraSpec::Perspective(intrinsics());
        let cfg = FitConfig {
            early_stop_grad_norm: Some(1e-9),
            ..FitConfig::default()
        };
        let fit = tailor_fit(&model, &gt, &obs, &cam, &cfg).unwrap();
        assert!((fit.s_star - 1.0).abs() < 1e-9);
        assert!(flat_distance(&fit.params_refined, &gt) < 1e-12);
        assert!(fit.initial_energy < 1e-12);
    }

    #[test]
    fn ground_truth_refit_keeps_keypoints() {
        // Adam normalizes each coordinate's step, so rounding-level
        // gradients at the optimum still grow into lr-sized steps; the
        // parameters wander but the keypoints stay put.
        let model = make_toy_model(1, 512).unwrap();
        let gt = planar(3);
        let obs = exact_obs(&model, &gt);
        let fit = tailor_fit(
            &model,
            &gt,
            &obs,
            &CameraSpec::Perspective(intrinsics()),
            &FitConfig::default(),
        )
        .unwrap();
        assert!(mpe_2d(&model, &fit, &obs) < 1.0);
        assert!(flat_distance(&fit.params_refined, &gt) < 0.2);
    }

    #[test]
    fn perturbed_init_improves() {
        let model = make_toy_model(1, 512).unwrap();
        let gt = posed(5, 0.3);
        let obs = exact_obs(&model, &gt);
        let init = perturb(&gt, 9, 0.1);
        let cam = CameraSpec::Perspective(intrinsics());
        let fit = tailor_fit(&model, &init, &obs, &cam, &FitConfig::default()).unwrap();
        let zero = tailor_fit(
            &model,
            &init,
            &obs,
            &cam,
            &FitConfig {
                iterations: 1,
                learning_rate: 1e-300,
                ..FitConfig::default()
            },
        )
        .unwrap();
        assert!(mpe_2d(&model, &fit, &obs) < mpe_2d(&model, &zero, &obs));
        assert!(fit.final_energy() <= fit.energy_trace[0]);
        assert!(fit.final_energy() < fit.initial_energy);
        assert_eq!(fit.energy_trace.len(), fit.iterations_run);
        assert_eq!(fit.iterations_run, 20);
    }

    #[test]
    fn scale_matches_closed_form_exactly() {
        let model = make_toy_model(1, 256).unwrap();
        let gt = posed(7, 0.3);
        let obs = exact_obs(&model, &gt);
        let init = perturb(&gt, 2, 0.1);
        let k = intrinsics();
        let fit = tailor_fit(&model, &init, &obs, &CameraSpec::Perspective(k), &FitConfig::default()).unwrap();
        let rel = model.keypoints_root_relative(&init).unwrap();
        let s = persp_scale_analytic(&k, &rel, &obs.keypoint_vectors(), obs.keypoints[0], gt.root[2]).unwrap();
        assert_eq!(fit.s_star, s);

        let weak = FitConfig {
            mode: FitMode::Weak,
            ..FitConfig::default()
        };
        let fit = tailor_fit(&model, &init, &obs, &CameraSpec::Perspective(k), &weak).unwrap();
        let (s, t) = weak_s_t_from_keypoints(&rel, &obs.keypoint_vectors(), obs.keypoints[0]).unwrap();
        assert_eq!(fit.s_star, s);
        assert_eq!(fit.weak_t, Some(t));
    }

    #[test]
    fn quaternions_stay_unit() {
        let model = make_toy_model(1, 128).unwrap();
        let gt = posed(11, 0.4);
        let obs = exact_obs(&model, &gt);
        let init = perturb(&gt, 4, 0.2);
        let mut objective = Objective::new(
            &model,
            Projection::Perspective {
                intrinsics: intrinsics(),
                root: Vector3::from(gt.root),
            },
            1.0,
            obs.keypoint_vectors(),
            init,
        );
        objective.weights = EnergyWeights::default();
        for n in 1..6 {
            let cfg = FitConfig {
                iterations: n,
                ..FitConfig::default()
            };
            let r = refine(&objective, &init, &cfg).unwrap();
            for q in &r.params.theta {
                assert!((rotation::norm(q) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_only_pull_decreases_monotonically() {
        let model = make_toy_model(1, 128).unwrap();
        let anchor = posed(13, 0.3);
        let mut start = perturb(&anchor, 1, 0.6);
        start.beta = [0.3; 10];
        let mut objective = Objective::new(
            &model,
            Projection::Weak { t: [0.0, 0.0] },
            100.0,
            [nalgebra::Vector2::zeros(); 21],
            anchor,
        );
        objective.weights = EnergyWeights {
            lambda_j: 0.0,
            lambda_g: 0.0,
            lambda_id: 1.0,
        };
        let r = refine(&objective, &start, &FitConfig::default()).unwrap();
        let mut prev = r.initial_energy;
        for e in &r.energy_trace {
            assert!(*e < prev || prev < 1e-12, "{e} !< {prev}");
            prev = *e;
        }
    }

    #[test]
    fn early_stop_and_determinism() {
        let model = make_toy_model(1, 128).unwrap();
        let gt = posed(17, 0.3);
        let obs = exact_obs(&model, &gt);
        let cam = CameraSpec::Perspective(intrinsics());
        let cfg = FitConfig {
            early_stop_grad_norm: Some(f64::INFINITY),
            ..FitConfig::default()
        };
        let fit = tailor_fit(&model, &gt, &obs, &cam, &cfg).unwrap();
        assert_eq!(fit.iterations_run, 0);
        assert!(fit.energy_trace.is_empty());

        let init = perturb(&gt, 3, 0.1);
        let a = tailor_fit(&model, &init, &obs, &cam, &FitConfig::default()).unwrap();
        let b = tailor_fit(&model, &init, &obs, &cam, &FitConfig::default()).unwrap();
        assert_eq!(a.report().without_timing(), b.report().without_timing());
        assert_eq!(
            a.report().without_timing().to_json(),
            b.report().without_timing().to_json()
        );
    }

    #[test]
    fn perspective_needs_intrinsics_and_depth() {
        let model = make_toy_model(1, 64).unwrap();
        let gt = posed(1, 0.2);
        let mut obs = exact_obs(&model, &gt);
        let weak_cam = CameraSpec::Weak(crate::camera::WeakCamera { s: 1.0, t: [0.0, 0.0] });
        assert!(matches!(
            tailor_fit(&model, &gt, &obs, &weak_cam, &FitConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
        obs.d_root = None;
        assert!(matches!(
            tailor_fit(
                &model,
                &gt,
                &obs,
                &CameraSpec::Perspective(intrinsics()),
                &FitConfig::default()
            ),
            Err(Error::InvalidObservations(_))
        ));
        let weak = FitConfig {
            mode: FitMode::Weak,
            ..FitConfig::default()
        };
        assert!(tailor_fit(&model, &gt, &obs, &weak_cam, &weak).is_ok());
    }

    #[test]
    fn collapsed_keypoints_are_a_degenerate_scale() {
        let model = make_toy_model(1, 64).unwrap();
        let gt = posed(1, 0.2);
        let mut obs = exact_obs(&model, &gt);
        obs.keypoints = [obs.keypoints[0]; 21];
        let weak = FitConfig {
            mode: FitMode::Weak,
            ..FitConfig::default()
        };
        let err = tailor_fit(&model, &gt, &obs, &CameraSpec::Perspective(intrinsics()), &weak).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn mesh_matches_placed_keypoints() {
        let model = make_toy_model(1, 256).unwrap();
        let gt = posed(21, 0.3);
        let obs = exact_obs(&model, &gt);
        let fit = tailor_fit(
            &model,
            &perturb(&gt, 5, 0.1),
            &obs,
            &CameraSpec::Perspective(intrinsics()),
            &FitConfig::default(),
        )
        .unwrap();
        let mesh = fit.mesh(&model).unwrap();
        let from_mesh = model.regress_joints(&mesh);
        let placed = fit.placed_keypoints(&model).unwrap();
        for (a, b) in from_mesh.iter().zip(&placed) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
