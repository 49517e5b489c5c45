//! Pose-estimation metrics: PCK, AUC over a threshold range, similarity
//! (Procrustes) alignment, PA-MPJPE and PA-MPVPE.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-joint (and optionally per-vertex) Euclidean errors of one hand, in mm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorSample {
    pub joints: Vec<f64>,
    pub vertices: Option<Vec<f64>>,
}

impl ErrorSample {
    pub fn new(joints: Vec<f64>) -> Result<Self> {
        if joints.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidObservations(
                "errors must be finite and non-negative".into(),
            ));
        }
        Ok(ErrorSample { joints, vertices: None })
    }

    /// Distances between corresponding points, scaled by `mm_per_unit`.
    pub fn between(pred: &[Vector3<f64>], gt: &[Vector3<f64>], mm_per_unit: f64) -> Result<Self> {
        check_pair(pred, gt)?;
        ErrorSample::new(pred.iter().zip(gt).map(|(p, g)| (p - g).norm() * mm_per_unit).collect())
    }
}

fn check_pair(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::WrongJointCount {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    Ok(())
}

/// Fraction of all joint errors at or below `threshold_mm`.
pub fn pck(samples: &[ErrorSample], threshold_mm: f64) -> Result<f64> {
    if !(threshold_mm >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "PCK threshold must be non-negative, got {threshold_mm}"
        )));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for s in samples {
        hit += s.joints.iter().filter(|e| **e <= threshold_mm).count();
        total += s.joints.len();
    }
    if total == 0 {
        return Err(Error::EmptyInput("no joint errors"));
    }
    Ok(hit as f64 / total as f64)
}

/// Equally spaced thresholds from `lo` to `hi` inclusive.
pub fn thresholds(lo_mm: f64, hi_mm: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| lo_mm + (hi_mm - lo_mm) * i as f64 / (steps - 1) as f64)
        .collect()
}

/// Normalized trapezoidal area under the PCK curve on `[lo, hi]`.
pub fn auc(samples: &[ErrorSample], lo_mm: f64, hi_mm: f64, steps: usize) -> Result<f64> {
    if !(hi_mm > lo_mm) || steps < 2 {
        return Err(Error::InvalidConfig(format!(
            "AUC needs hi > lo and at least 2 steps, got [{lo_mm}, {hi_mm}] with {steps}"
        )));
    }
    let curve = thresholds(lo_mm, hi_mm, steps)
        .into_iter()
        .map(|t| pck(samples, t))
        .collect::<Result<Vec<_>>>()?;
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    Ok(area / (steps - 1) as f64)
}

/// `aligned = s * R * pred + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Least-squares similarity from `pred` onto `gt` with a proper rotation.
pub fn procrustes(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    check_pair(pred, gt)?;
    let n = pred.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry("alignment needs at least 3 points"));
    }
    let mean = |s: &[Vector3<f64>]| s.iter().sum::<Vector3<f64>>() / n as f64;
    let (mp, mg) = (mean(pred), mean(gt));
    let mut cov = Matrix3::zeros();
    let (mut var_p, mut var_g) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        let (x, y) = (p - mp, g - mg);
        cov += y * x.transpose();
        var_p += x.norm_squared();
        var_g += y.norm_squared();
    }
    let spread = (var_p * var_g).sqrt();
    if !(var_p > 0.0 && var_g > 0.0 && spread.is_finite()) {
        return Err(Error::DegenerateGeometry("point set collapses to a single point"));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if svd.singular_values[order[1]] <= 1e-12 * spread {
        return Err(Error::DegenerateGeometry("collinear point set has no unique rotation"));
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let rotation = u * d * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = trace / var_p;
    if !(scale > 0.0) {
        return Err(Error::DegenerateGeometry("non-positive alignment scale"));
    }
    Ok(Similarity {
        scale,
        rotation,
        translation: mg - scale * (rotation * mp),
    })
}

pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let sim = procrustes(pred, gt)?;
    Ok(pred.iter().map(|p| sim.apply(p)).collect())
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

/// Mean per-point error after similarity alignment, in the input units.
pub fn pa_mean_error(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    Ok(mean_distance(&procrustes_align(pred, gt)?, gt))
}

/// PA-MPJPE over the joint set.
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    pa_mean_error(pred, gt)
}

/// PA-MPVPE over mesh vertices.
pub fn pa_mpvpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    pa_mean_error(pred, gt)
}

/// How predictions are brought onto ground truth before PCK/AUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Subtract each set's root joint.
    #[default]
    Root,
    Procrustes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Model units to millimeters; required.
    pub mm_per_unit: f64,
    #[serde(default = "default_auc_ranges")]
    pub auc_ranges: Vec<[f64; 2]>,
    #[serde(default = "default_steps")]
    pub auc_steps: usize,
    #[serde(default)]
    pub pck_thresholds: Vec<f64>,
    #[serde(default)]
    pub alignment: Alignment,
}

fn default_auc_ranges() -> Vec<[f64; 2]> {
    vec![[20.0, 50.0], [5.0, 20.0]]
}

fn default_steps() -> usize {
    100
}

impl MetricsConfig {
    pub fn new(mm_per_unit: f64) -> Self {
        MetricsConfig {
            mm_per_unit,
            auc_ranges: default_auc_ranges(),
            auc_steps: default_steps(),
            pck_thresholds: Vec::new(),
            alignment: Alignment::Root,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mm_per_unit > 0.0 && self.mm_per_unit.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "mm_per_unit must be positive, got {}",
                self.mm_per_unit
            )));
        }
        if self.auc_steps < 2 {
            return Err(Error::InvalidConfig("auc_steps must be at least 2".into()));
        }
        if let Some(r) = self.auc_ranges.iter().find(|r| !(r[1] > r[0] && r[0] >= 0.0)) {
            return Err(Error::InvalidConfig(format!("bad AUC range {r:?}")));
        }
        if self.pck_thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidConfig("PCK thresholds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: MetricsConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One prediction/ground-truth pair, in model units.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub pred_joints: Vec<Vector3<f64>>,
    pub gt_joints: Vec<Vector3<f64>>,
    pub pred_vertices: Option<Vec<Vector3<f64>>>,
    pub gt_vertices: Option<Vec<Vector3<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub range: String,
    pub value: f64,
    pub samples: usize,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn get(&self, metric: &str, range: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.range == range)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,range,value,samples,steps\n");
        for r in &self.rows {
            let steps = r.steps.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.range, r.value, r.samples, steps);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics report serializes")
    }
}

fn fmt_mm(x: f64) -> String {
    format!("{x}")
}

/// Aggregates every configured metric over `pairs`.
pub fn evaluate(pairs: &[EvalPair], cfg: &MetricsConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate"));
    }
    let mm = cfg.mm_per_unit;
    let n = pairs.len();
    let mut samples = Vec::with_capacity(n);
    let (mut mpjpe, mut pa_j, mut pa_v, mut n_v) = (0.0, 0.0, 0.0, 0usize);
    for p in pairs {
        check_pair(&p.pred_joints, &p.gt_joints)?;
        if p.gt_joints.is_empty() {
            return Err(Error::EmptyInput("sample without joints"));
        }
        let rel = |s: &[Vector3<f64>]| -> Vec<Vector3<f64>> { s.iter().map(|x| x - s[0]).collect() };
        let (pr, gr) = (rel(&p.pred_joints), rel(&p.gt_joints));
        mpjpe += mean_distance(&pr, &gr) * mm;
        pa_j += pa_mpjpe(&p.pred_joints, &p.gt_joints)? * mm;
        if let (Some(pv), Some(gv)) = (&p.pred_vertices, &p.gt_vertices) {
            pa_v += pa_mpvpe(pv, gv)? * mm;
            n_v += 1;
        }
        let aligned = match cfg.alignment {
            Alignment::Root => pr,
            Alignment::Procrustes => rel(&procrustes_align(&p.pred_joints, &p.gt_joints)?),
        };
        samples.push(ErrorSample::between(&aligned, &gr, mm)?);
    }

    let row = |metric: &str, range: String, value: f64, samples: usize, steps: Option<usize>| MetricRow {
        metric: metric.into(),
        range,
        value,
        samples,
        steps,
    };
    let mut rows = vec![
        row("mpjpe", String::new(), mpjpe / n as f64, n, None),
        row("pa_mpjpe", String::new(), pa_j / n as f64, n, None),
    ];
    if n_v > 0 {
        rows.push(row("pa_mpvpe", String::new(), pa_v / n_v as f64, n_v, None));
    }
    for t in &cfg.pck_thresholds {
        rows.push(row("pck", fmt_mm(*t), pck(&samples, *t)?, n, None));
    }
    for [lo, hi] in &cfg.auc_ranges {
        let v = auc(&samples, *lo, *hi, cfg.auc_steps)?;
        rows.push(row(
            "auc",
            format!("{}-{}", fmt_mm(*lo), fmt_mm(*hi)),
            v,
            n,
            Some(cfg.auc_steps),
        ));
    }
    Ok(MetricsReport { rows })
}
