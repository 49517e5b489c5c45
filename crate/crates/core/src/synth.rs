//! Synthetic ground truth: plausible hands, exact and noisy observations,
//! perturbed initializations, and a reproducible on-disk dataset layout.
//!
//! Randomness is counter-based: case `i` draws its ground truth from ChaCha
//! stream `2i` and its corruption from stream `2i + 1` of the configured seed,
//! so no case depends on any other.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{project_persp, unproject_persp, CameraSpec, Intrinsics, WeakCamera};
use crate::energy::e_twist;
use crate::error::{Error, Result};
use crate::model::{finger_frame, HandModel, HandParams, ModelFile, NUM_FINGERS, NUM_JOINTS, NUM_KEYPOINTS};
use crate::observations::{Convention, Observations};
use crate::rotation;

pub const DATASET_FORMAT: &str = "handfit-synth/1";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const CAMERA_NAME: &str = "camera.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CameraPreset {
    Perspective {
        intrinsics: Intrinsics,
        image_size: [u32; 2],
    },
    /// Per-case scale drawn uniformly from `scale_range` (pixels per unit).
    Weak {
        scale_range: [f64; 2],
        image_size: [u32; 2],
    },
}

impl CameraPreset {
    pub fn image_size(&self) -> [u32; 2] {
        match self {
            CameraPreset::Perspective { image_size, .. } | CameraPreset::Weak { image_size, .. } => *image_size,
        }
    }
}

impl Default for CameraPreset {
    fn default() -> Self {
        CameraPreset::Perspective {
            intrinsics: Intrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 160.0,
                cy: 160.0,
            },
            image_size: [320, 320],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub sample_count: usize,
    /// Fraction of the joint-limit table used when drawing ground-truth
    /// poses; 0 gives the rest pose.
    pub pose_scale: f64,
    /// Angle sigma (radians) of the per-joint perturbation applied to the
    /// initialization.
    pub pose_noise_sigma: f64,
    pub keypoint_noise_px: f64,
    /// Probability of replacing a keypoint by a uniform draw over the image.
    pub outlier_prob: f64,
    pub beta_sigma: f64,
    /// Root depth range in model units.
    pub depth_range: [f64; 2],
    /// Fraction of the image, around its center, where the root pixel falls.
    pub root_region: f64,
    pub camera: CameraPreset,
    /// Ground truth is redrawn while its twist energy exceeds this.
    pub twist_tolerance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            sample_count: 100,
            pose_scale: 1.0,
            pose_noise_sigma: 0.1,
            keypoint_noise_px: 0.0,
            outlier_prob: 0.0,
            beta_sigma: 1.0,
            depth_range: [0.45, 0.7],
            root_region: 0.3,
            camera: CameraPreset::default(),
            twist_tolerance: 1e-12,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let sigmas = [
            self.pose_scale,
            self.pose_noise_sigma,
            self.keypoint_noise_px,
            self.beta_sigma,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise levels and pose scale must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.outlier_prob) || !(0.0..=1.0).contains(&self.root_region) {
            return bad("outlier_prob and root_region must lie in [0, 1]".into());
        }
        let [lo, hi] = self.depth_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("depth range must be positive, got {:?}", self.depth_range));
        }
        if !(self.twist_tolerance >= 0.0) {
            return bad("twist tolerance must be non-negative".into());
        }
        match self.camera {
            CameraPreset::Perspective { intrinsics, image_size } => {
                intrinsics.validate()?;
                if image_size.contains(&0) {
                    return bad("image size must be positive".into());
                }
            }
            CameraPreset::Weak {
                scale_range,
                image_size,
            } => {
                if !(scale_range[0] > 0.0 && scale_range[1] >= scale_range[0] && scale_range[1].is_finite()) {
                    return bad(format!("weak scale range must be positive, got {scale_range:?}"));
                }
                if image_size.contains(&0) {
                    return bad("image size must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Reads either a bare configuration or a dataset manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let inner = match value.get("config") {
            Some(c) if value.get("format").is_some() => c.clone(),
            _ => value,
        };
        let cfg: SynthConfig = serde_json::from_value(inner).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Joint limits in radians: `(flexion lo, flexion hi)` per finger joint and
/// `(abduction lo, abduction hi)` at the finger base.
#[derive(Debug, Clone, Copy)]
pub struct JointLimits {
    pub flexion: [[f64; 2]; 3],
    pub abduction: [f64; 2],
}

/// Thumb first, then index, middle, ring, pinky. Fingers never hyperextend
/// past straight at the two distal joints.
pub const JOINT_LIMITS: [JointLimits; NUM_FINGERS] = [
    JointLimits {
        flexion: [[-0.4, 0.8], [0.0, 0.9], [0.0, 1.3]],
        abduction: [-0.4, 0.6],
    },
    JointLimits {
        flexion: [[-0.35, 1.4], [0.0, 1.75], [0.0, 1.2]],
        abduction: [-0.3, 0.3],
    },
    JointLimits {
        flexion: [[-0.35, 1.4], [0.0, 1.75], [0.0, 1.2]],
        abduction: [-0.25, 0.25],
    },
    JointLimits {
        flexion: [[-0.35, 1.4], [0.0, 1.75], [0.0, 1.2]],
        abduction: [-0.25, 0.25],
    },
    JointLimits {
        flexion: [[-0.35, 1.4], [0.0, 1.75], [0.0, 1.2]],
        abduction: [-0.35, 0.35],
    },
];

/// Maximum global rotation angle of the wrist.
pub const ROOT_ANGLE_LIMIT: f64 = std::f64::consts::FRAC_PI_2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn random_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Draws a pose whose fingers each bend in a single plane and in one
/// direction, scaled by `scale` within [`JOINT_LIMITS`].
pub fn sample_pose(rng: &mut ChaCha8Rng, scale: f64) -> [[f64; 4]; NUM_JOINTS] {
    let mut theta = [rotation::IDENTITY; NUM_JOINTS];
    let axis = random_axis(rng);
    theta[0] = rotation::from_axis(&axis, uniform_in(rng, 0.0, ROOT_ANGLE_LIMIT * scale));
    for (f, lim) in JOINT_LIMITS.iter().enumerate() {
        let (_, side) = finger_frame(f);
        let abd = uniform_in(rng, lim.abduction[0] * scale, lim.abduction[1] * scale);
        for k in 0..3 {
            let [lo, hi] = lim.flexion[k];
            let flex = rotation::from_axis(&side, uniform_in(rng, lo * scale, hi * scale));
            theta[1 + 3 * f + k] = if k == 0 {
                rotation::mul(&rotation::from_axis(&Vector3::z(), abd), &flex)
            } else {
                flex
            };
        }
    }
    theta
}

/// One synthetic sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCase {
    pub index: usize,
    pub gt: HandParams,
    pub camera: CameraSpec,
    pub obs_exact: Observations,
    /// `(max z - min z) / z_root` over the keypoints; 0 in weak mode.
    pub depth_spread: f64,
}

/// Maximum attempts at drawing an untwisted hand before giving up.
const MAX_REDRAWS: usize = 1000;

pub fn sample_case(cfg: &SynthConfig, model: &HandModel, index: usize) -> Result<SynthCase> {
    cfg.validate()?;
    if index >= cfg.sample_count {
        return Err(Error::InvalidConfig(format!(
            "case index {index} out of range for {} samples",
            cfg.sample_count
        )));
    }
    let mut rng = stream_rng(cfg.seed, 2 * index as u64);
    let mut gt = HandParams::default();
    let mut rel = None;
    for _ in 0..MAX_REDRAWS {
        gt.theta = sample_pose(&mut rng, cfg.pose_scale);
        for b in gt.beta.iter_mut() {
            *b = if cfg.beta_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.beta_sigma * z
            } else {
                0.0
            };
        }
        let joints = model.keypoints_root_relative(&gt)?;
        if e_twist(&joints) <= cfg.twist_tolerance {
            rel = Some(joints);
            break;
        }
    }
    let rel = rel.ok_or(Error::DegenerateGeometry("could not draw an untwisted hand"))?;

    let [w, h] = cfg.camera.image_size().map(f64::from);
    let region = cfg.root_region;
    let root_px = [
        w * (0.5 + region * (rng.random::<f64>() - 0.5)),
        h * (0.5 + region * (rng.random::<f64>() - 0.5)),
    ];
    let (camera, keypoints, d_root, spread) = match cfg.camera {
        CameraPreset::Perspective { intrinsics, .. } => {
            let z = uniform_in(&mut rng, cfg.depth_range[0], cfg.depth_range[1]);
            let root = unproject_persp(&intrinsics, [root_px[0], root_px[1], 0.0], z)?;
            gt.root = root.into();
            let mut kps = [[0.0; 2]; NUM_KEYPOINTS];
            let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for (kp, p) in kps.iter_mut().zip(&rel) {
                let x = p + root;
                zmin = zmin.min(x.z);
                zmax = zmax.max(x.z);
                *kp = project_persp(&intrinsics, &x)?.into();
            }
            (CameraSpec::Perspective(intrinsics), kps, Some(z), (zmax - zmin) / z)
        }
        CameraPreset::Weak { scale_range, .. } => {
            let s = uniform_in(&mut rng, scale_range[0], scale_range[1]);
            let cam = WeakCamera { s, t: root_px };
            let kps = rel.map(|p| [s * p.x + root_px[0], s * p.y + root_px[1]]);
            (CameraSpec::Weak(cam), kps, None, 0.0)
        }
    };
    let mut obs_exact = Observations::new(keypoints, cfg.camera.image_size());
    obs_exact.d_root = d_root;
    Ok(SynthCase {
        index,
        gt,
        camera,
        obs_exact,
        depth_spread: spread,
    })
}

/// Noisy keypoints and a perturbed initialization for one case, drawn from
/// `stream` of the configured seed.
pub fn corrupt(
    obs_exact: &Observations,
    gt: &HandParams,
    cfg: &SynthConfig,
    stream: u64,
) -> (Observations, HandParams) {
    let mut rng = stream_rng(cfg.seed, stream);
    let mut obs = obs_exact.clone();
    let [w, h] = obs.image_size.map(f64::from);
    let noise = (cfg.keypoint_noise_px > 0.0).then(|| Normal::new(0.0, cfg.keypoint_noise_px).expect("sigma checked"));
    for kp in obs.keypoints.iter_mut() {
        if cfg.outlier_prob > 0.0 && rng.random::<f64>() < cfg.outlier_prob {
            *kp = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
            continue;
        }
        if let Some(n) = &noise {
            kp[0] += n.sample(&mut rng);
            kp[1] += n.sample(&mut rng);
        }
    }
    let mut init = *gt;
    if cfg.pose_noise_sigma > 0.0 {
        let angle = Normal::new(0.0, cfg.pose_noise_sigma).expect("sigma checked");
        for q in init.theta.iter_mut() {
            let axis = random_axis(&mut rng);
            *q = rotation::mul(q, &rotation::from_axis(&axis, angle.sample(&mut rng)));
        }
    }
    (obs, init)
}

/// Stream used by [`corrupt`] for case `index` in datasets.
pub fn corruption_stream(index: usize) -> u64 {
    2 * index as u64 + 1
}

/// Ground-truth file of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub index: usize,
    pub params: HandParams,
    pub camera: CameraSpec,
    pub keypoints_exact: Vec<[f64; 2]>,
    pub depth_spread: f64,
}

/// Any file carrying hand parameters under `params` (ground truth,
/// initializations, fit reports).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub params: HandParams,
}

/// Reads `params` from a JSON object, or the whole document as parameters.
pub fn load_params(path: impl AsRef<Path>) -> Result<HandParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let inner = value.get("params").cloned().unwrap_or(value);
    let params: HandParams = serde_json::from_value(inner).map_err(|e| Error::json(path, e))?;
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDigest {
    pub name: String,
    pub vertex_count: usize,
    pub sha256: String,
}

impl ModelDigest {
    pub fn of(model: &HandModel) -> Self {
        let text = serde_json::to_string(&ModelFile::from(model)).expect("model serializes");
        ModelDigest {
            name: model.name().to_string(),
            vertex_count: model.vertex_count(),
            sha256: sha256_hex(text.as_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: SynthConfig,
    pub model: ModelDigest,
    pub files: Vec<FileDigest>,
    /// Digest over all per-file digests in order.
    pub digest: String,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if m.format != DATASET_FORMAT {
            return Err(Error::InvalidConfig(format!(
                "unsupported dataset format '{}'",
                m.format
            )));
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn case_stem(index: usize) -> String {
    format!("case_{index:05}")
}

fn write(dir: &Path, name: String, text: &str) -> Result<FileDigest> {
    let path = dir.join(&name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(FileDigest {
        name,
        sha256: sha256_hex(text.as_bytes()),
    })
}

fn write_case(cfg: &SynthConfig, model: &HandModel, index: usize, dir: &Path) -> Result<Vec<FileDigest>> {
    let case = sample_case(cfg, model, index)?;
    let (obs, init) = corrupt(&case.obs_exact, &case.gt, cfg, corruption_stream(index));
    let stem = case_stem(index);
    let gt = GroundTruthFile {
        index,
        params: case.gt,
        camera: case.camera,
        keypoints_exact: case.obs_exact.keypoints.to_vec(),
        depth_spread: case.depth_spread,
    };
    let gt_text = serde_json::to_string_pretty(&gt).expect("ground truth serializes");
    let init_text = serde_json::to_string_pretty(&ParamsFile { params: init }).expect("params serialize");
    Ok(vec![
        write(dir, format!("{stem}.obs.json"), &obs.to_json(Convention::Native))?,
        write(dir, format!("{stem}.gt.json"), &gt_text)?,
        write(dir, format!("{stem}.init.json"), &init_text)?,
    ])
}

/// Runs `f` for every index on `jobs` threads; results come back in index order.
pub(crate) fn fan_out<T, F>(count: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

/// Writes every case of `cfg` plus `camera.json` (perspective presets) and
/// `manifest.json` into `dir`.
pub fn generate_dataset(cfg: &SynthConfig, model: &HandModel, dir: impl AsRef<Path>, jobs: usize) -> Result<Manifest> {
    cfg.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    if let CameraPreset::Perspective { intrinsics, .. } = cfg.camera {
        let text = serde_json::to_string_pretty(&intrinsics).expect("intrinsics serialize");
        files.push(write(dir, CAMERA_NAME.into(), &text)?);
    }
    for case in fan_out(cfg.sample_count, jobs, |i| write_case(cfg, model, i, dir))? {
        files.extend(case);
    }
    let mut all = Sha256::new();
    for f in &files {
        all.update(f.name.as_bytes());
        all.update(f.sha256.as_bytes());
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        config: *cfg,
        model: ModelDigest::of(model),
        files,
        digest: hex::encode(all.finalize()),
    };
    let path: PathBuf = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Mean pixel distance between two keypoint sets.
pub fn mean_pixel_error(a: &[[f64; 2]; NUM_KEYPOINTS], b: &[[f64; 2]; NUM_KEYPOINTS]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (Vector2::from(*x) - Vector2::from(*y)).norm())
        .sum::<f64>()
        / NUM_KEYPOINTS as f64
}
