//! Dataset-level drivers: fit every case of a synthetic dataset and evaluate
//! a directory of predictions against ground truth.

use std::fs;
use std::path::Path;

use crate::camera::{CameraSpec, Intrinsics, WeakCamera};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalPair, MetricsConfig, MetricsReport};
use crate::model::{HandModel, HandParams};
use crate::observations::load_observations;
use crate::synth::{case_stem, fan_out, load_params, Manifest, CAMERA_NAME};
use crate::tailor::{tailor_fit, FitConfig, FitMode, FitReport};

/// Fits `case_NNNNN.obs.json` from `case_NNNNN.init.json` for every case of
/// the dataset and writes `case_NNNNN.fit.json` into `out_dir`.
pub fn fit_dataset(
    model: &HandModel,
    dataset: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    cfg: &FitConfig,
    jobs: usize,
) -> Result<Vec<FitReport>> {
    let dataset = dataset.as_ref();
    let out_dir = out_dir.as_ref();
    let manifest = Manifest::load(dataset)?;
    let camera_path = dataset.join(CAMERA_NAME);
    let camera = if camera_path.exists() {
        CameraSpec::Perspective(Intrinsics::load(&camera_path)?)
    } else if cfg.mode == FitMode::Perspective {
        return Err(Error::InvalidConfig(format!(
            "{} has no {CAMERA_NAME}; use weak mode",
            dataset.display()
        )));
    } else {
        CameraSpec::Weak(WeakCamera { s: 1.0, t: [0.0, 0.0] })
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    fan_out(manifest.config.sample_count, jobs, |i| {
        let stem = case_stem(i);
        let obs = load_observations(dataset.join(format!("{stem}.obs.json")))?;
        let init = load_params(dataset.join(format!("{stem}.init.json")))?;
        let report = tailor_fit(model, &init, &obs, &camera, cfg)?.report();
        let path = out_dir.join(format!("{stem}.fit.json"));
        fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(report)
    })
}

/// Case stems (`case_NNNNN`) with a ground-truth file in `dir`, sorted.
pub fn ground_truth_stems(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".gt.json"))
                .map(str::to_string)
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::EmptyInput("no ground-truth files found"));
    }
    Ok(stems)
}

fn eval_pair(model: &HandModel, pred: &HandParams, gt: &HandParams) -> Result<EvalPair> {
    let rooted = |p: &HandParams| HandParams { root: [0.0; 3], ..*p };
    let (pred, gt) = (rooted(pred), rooted(gt));
    Ok(EvalPair {
        pred_joints: model.keypoints_root_relative(&pred)?.to_vec(),
        gt_joints: model.keypoints_root_relative(&gt)?.to_vec(),
        pred_vertices: Some(model.skin(&pred)?.vertices),
        gt_vertices: Some(model.skin(&gt)?.vertices),
    })
}

/// Compares `<stem>.<suffix>.json` in `pred_dir` with `<stem>.gt.json` in
/// `gt_dir` for every ground-truth case. Both are compared as root-relative
/// joints and vertices of the model posed by their `params`.
pub fn evaluate_dirs(
    model: &HandModel,
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    suffix: &str,
    cfg: &MetricsConfig,
    jobs: usize,
) -> Result<MetricsReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let stems = ground_truth_stems(gt_dir)?;
    let pairs = fan_out(stems.len(), jobs, |i| {
        let stem = &stems[i];
        let gt = load_params(gt_dir.join(format!("{stem}.gt.json")))?;
        let pred = load_params(pred_dir.join(format!("{stem}.{suffix}.json")))?;
        eval_pair(model, &pred, &gt)
    })?;
    evaluate(&pairs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_toy_model;
    use crate::synth::{generate_dataset, SynthConfig};

    #[test]
    fn fit_then_evaluate() {
        let model = make_toy_model(1, 128).unwrap();
        let cfg = SynthConfig {
            sample_count: 4,
            ..SynthConfig::default()
        };
        let data = tempfile::tempdir().unwrap();
        let fits = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, &model, data.path(), 2).unwrap();
        let reports = fit_dataset(&model, data.path(), fits.path(), &FitConfig::default(), 2).unwrap();
        assert_eq!(reports.len(), 4);
        assert!(fits.path().join("case_00003.fit.json").exists());

        let mcfg = MetricsConfig::new(1000.0);
        let same = evaluate_dirs(&model, data.path(), data.path(), "gt", &mcfg, 1).unwrap();
        assert!(same.get("pa_mpjpe", "").unwrap() < 1e-9);
        assert_eq!(same.get("auc", "20-50"), Some(1.0));
        let fitted = evaluate_dirs(&model, fits.path(), data.path(), "fit", &mcfg, 3).unwrap();
        let again = evaluate_dirs(&model, fits.path(), data.path(), "fit", &mcfg, 1).unwrap();
        assert_eq!(fitted, again);
        assert!(fitted.get("mpjpe", "").unwrap() > 0.0);
    }

    #[test]
    fn missing_prediction_is_an_io_error() {
        let model = make_toy_model(1, 64).unwrap();
        let cfg = SynthConfig {
            sample_count: 2,
            ..SynthConfig::default()
        };
        let data = tempfile::tempdir().unwrap();
        let empty = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, &model, data.path(), 1).unwrap();
        let err = evaluate_dirs(&model, empty.path(), data.path(), "fit", &MetricsConfig::new(1000.0), 1).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(matches!(ground_truth_stems(empty.path()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn weak_dataset_needs_weak_mode() {
        let model = make_toy_model(1, 64).unwrap();
        let cfg = SynthConfig {
            sample_count: 2,
            camera: crate::synth::CameraPreset::Weak {
                scale_range: [800.0, 900.0],
                image_size: [256, 256],
            },
            ..SynthConfig::default()
        };
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, &model, data.path(), 1).unwrap();
        assert!(matches!(
            fit_dataset(&model, data.path(), out.path(), &FitConfig::default(), 1),
            Err(Error::InvalidConfig(_))
        ));
        let weak = FitConfig {
            mode: FitMode::Weak,
            ..FitConfig::default()
        };
        assert_eq!(fit_dataset(&model, data.path(), out.path(), &weak, 1).unwrap().len(), 2);
    }
}
