//! Keypoint evidence: JSON keypoint files, heatmap/distance-map grids and
//! soft-argmax extraction.
//!
//! Pixel convention: `u` is the column index, `v` the row index, with the
//! origin at the center of the top-left cell.
//!
//! Keypoint file:
//!
//! ```text
//! {
//!   "convention": "native" | "openpose" | "freihand" | "rhd" | "mano",
//!   "image_size": [W, H],
//!   "keypoints": [[u, v], ...],          // 21 rows, in the declared order
//!   "confidences": [c, ...],             // optional, default 1
//!   "d_root": z | null,                  // root depth, camera units
//!   "joints3d": [[x, y, z], ...] | null  // optional external 3D joints
//! }
//! ```

use std::fs;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NUM_FINGERS, NUM_JOINTS, NUM_KEYPOINTS};

/// Joint orderings accepted in keypoint and heatmap files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// Wrist, then MCP/PIP/DIP of thumb, index, middle, ring, pinky, then
    /// the five tips.
    #[default]
    Native,
    /// Wrist, then per finger (thumb..pinky) MCP, PIP, DIP, tip.
    /// FreiHAND uses the same order.
    OpenPose,
    /// Wrist, then per finger (thumb..pinky) tip, DIP, PIP, MCP.
    Rhd,
    /// Wrist, index, middle, pinky, ring, thumb (three joints each), then
    /// tips thumb..pinky.
    Mano,
}

impl Convention {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "native" => Ok(Convention::Native),
            "openpose" | "freihand" => Ok(Convention::OpenPose),
            "rhd" => Ok(Convention::Rhd),
            "mano" => Ok(Convention::Mano),
            _ => Err(Error::UnknownConvention(tag.to_string())),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Convention::Native => "native",
            Convention::OpenPose => "openpose",
            Convention::Rhd => "rhd",
            Convention::Mano => "mano",
        }
    }

    /// `table[i]` is the native index of the joint stored at file position `i`.
    pub fn to_native_table(self) -> [usize; NUM_KEYPOINTS] {
        let joint = |f: usize, k: usize| 1 + 3 * f + k;
        let tip = |f: usize| NUM_JOINTS + f;
        let mut t = [0; NUM_KEYPOINTS];
        match self {
            Convention::Native => {
                for (i, v) in t.iter_mut().enumerate() {
                    *v = i;
                }
            }
            Convention::OpenPose => {
                for f in 0..NUM_FINGERS {
                    for k in 0..3 {
                        t[1 + 4 * f + k] = joint(f, k);
                    }
                    t[4 + 4 * f] = tip(f);
                }
            }
            Convention::Rhd => {
                for f in 0..NUM_FINGERS {
                    t[1 + 4 * f] = tip(f);
                    for k in 0..3 {
                        t[4 + 4 * f - k] = joint(f, k);
                    }
                }
            }
            Convention::Mano => {
                for (slot, f) in [1, 2, 4, 3, 0].into_iter().enumerate() {
                    for k in 0..3 {
                        t[1 + 3 * slot + k] = joint(f, k);
                    }
                }
                for f in 0..NUM_FINGERS {
                    t[NUM_JOINTS + f] = tip(f);
                }
            }
        }
        t
    }

    /// Reorders rows read in this convention into native order.
    pub fn to_native<T: Copy>(self, rows: &[T; NUM_KEYPOINTS]) -> [T; NUM_KEYPOINTS] {
        let table = self.to_native_table();
        let mut out = *rows;
        for (i, &n) in table.iter().enumerate() {
            out[n] = rows[i];
        }
        out
    }

    /// Reorders native rows into this convention.
    pub fn from_native<T: Copy>(self, rows: &[T; NUM_KEYPOINTS]) -> [T; NUM_KEYPOINTS] {
        let table = self.to_native_table();
        let mut out = *rows;
        for (i, &n) in table.iter().enumerate() {
            out[i] = rows[n];
        }
        out
    }
}

/// 2D keypoints with optional depth and 3D evidence, in native joint order.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub keypoints: [[f64; 2]; NUM_KEYPOINTS],
    pub confidences: [f64; NUM_KEYPOINTS],
    pub d_root: Option<f64>,
    pub joints3d_init: Option<[[f64; 3]; NUM_KEYPOINTS]>,
    pub image_size: [u32; 2],
}

impl Observations {
    pub fn new(keypoints: [[f64; 2]; NUM_KEYPOINTS], image_size: [u32; 2]) -> Self {
        Observations {
            keypoints,
            confidences: [1.0; NUM_KEYPOINTS],
            d_root: None,
            joints3d_init: None,
            image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidObservations(m));
        if self.keypoints.iter().flatten().any(|c| !c.is_finite()) {
            return bad("non-finite keypoint".into());
        }
        if let Some(c) = self.confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return bad(format!("confidence {c} outside [0, 1]"));
        }
        if let Some(d) = self.d_root {
            if !(d.is_finite() && d > 0.0) {
                return bad(format!("d_root must be positive, got {d}"));
            }
        }
        if let Some(j) = &self.joints3d_init {
            if j.iter().flatten().any(|c| !c.is_finite()) {
                return bad("non-finite joints3d".into());
            }
        }
        if self.image_size.contains(&0) {
            return bad("image size must be positive".into());
        }
        Ok(())
    }

    pub fn keypoint_vectors(&self) -> [Vector2<f64>; NUM_KEYPOINTS] {
        self.keypoints.map(Vector2::from)
    }

    /// True for keypoints outside `[0, W) x [0, H)`.
    pub fn out_of_frame(&self) -> [bool; NUM_KEYPOINTS] {
        let [w, h] = self.image_size.map(f64::from);
        self.keypoints
            .map(|[u, v]| !(0.0..w).contains(&u) || !(0.0..h).contains(&v))
    }

    /// Parses a keypoint document and remaps it to native order. `origin`
    /// names the document in error messages.
    pub fn from_json(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let raw: KeypointFile = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        raw.into_observations()
    }

    pub fn to_json(&self, convention: Convention) -> String {
        let file = KeypointFile {
            convention: convention.tag().to_string(),
            image_size: self.image_size,
            keypoints: convention.from_native(&self.keypoints).to_vec(),
            confidences: Some(convention.from_native(&self.confidences).to_vec()),
            d_root: self.d_root,
            joints3d: self.joints3d_init.map(|j| convention.from_native(&j).to_vec()),
        };
        serde_json::to_string_pretty(&file).expect("observations serialize")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeypointFile {
    #[serde(default = "native_tag")]
    convention: String,
    image_size: [u32; 2],
    keypoints: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidences: Option<Vec<f64>>,
    #[serde(default)]
    d_root: Option<f64>,
    #[serde(default)]
    joints3d: Option<Vec<[f64; 3]>>,
}

fn native_tag() -> String {
    "native".into()
}

fn exactly_21<T>(rows: Vec<T>) -> Result<[T; NUM_KEYPOINTS]> {
    let found = rows.len();
    rows.try_into().map_err(|_| Error::WrongJointCount {
        expected: NUM_KEYPOINTS,
        found,
    })
}

impl KeypointFile {
    fn into_observations(self) -> Result<Observations> {
        let convention = Convention::parse(&self.convention)?;
        let keypoints = convention.to_native(&exactly_21(self.keypoints)?);
        let confidences = match self.confidences {
            Some(c) => convention.to_native(&exactly_21(c)?),
            None => [1.0; NUM_KEYPOINTS],
        };
        let joints3d_init = match self.joints3d {
            Some(j) => Some(convention.to_native(&exactly_21(j)?)),
            None => None,
        };
        let obs = Observations {
            keypoints,
            confidences,
            d_root: self.d_root,
            joints3d_init,
            image_size: self.image_size,
        };
        obs.validate()?;
        Ok(obs)
    }
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<Observations> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Observations::from_json(&text, path)
}

pub fn save_observations(obs: &Observations, convention: Convention, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, obs.to_json(convention)).map_err(|e| Error::io(path, e))
}

/// Per-joint heatmaps and root-relative distance maps on an `H x W` grid,
/// channels in native order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMaps {
    pub height: usize,
    pub width: usize,
    /// `k * H * W` values, channel-major then row-major.
    pub heatmaps: Vec<f64>,
    pub distmaps: Vec<f64>,
}

/// Allowed deviation of a heatmap channel's mass from 1 at extraction time.
pub const HEATMAP_SUM_TOL: f64 = 1e-3;

impl ObservationMaps {
    pub fn new(height: usize, width: usize, heatmaps: Vec<f64>, distmaps: Vec<f64>) -> Result<Self> {
        let n = NUM_KEYPOINTS * height * width;
        if height == 0 || width == 0 {
            return Err(Error::InvalidObservations("empty map grid".into()));
        }
        if heatmaps.len() != n || distmaps.len() != n {
            return Err(Error::InvalidObservations(format!(
                "expected {n} values per map stack, got {} heatmap and {} distmap values",
                heatmaps.len(),
                distmaps.len()
            )));
        }
        if heatmaps.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::InvalidObservations(
                "heatmap values must be finite and non-negative".into(),
            ));
        }
        if distmaps.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidObservations("non-finite distmap value".into()));
        }
        Ok(ObservationMaps {
            height,
            width,
            heatmaps,
            distmaps,
        })
    }

    fn channel(&self, joint: usize) -> std::ops::Range<usize> {
        let n = self.height * self.width;
        joint * n..(joint + 1) * n
    }

    /// Keypoints for every joint by soft-argmax; depths are not kept.
    pub fn to_observations(&self) -> Result<Observations> {
        let mut kps = [[0.0; 2]; NUM_KEYPOINTS];
        for (j, kp) in kps.iter_mut().enumerate() {
            let (u, v, _) = soft_argmax(self, j)?;
            *kp = [u, v];
        }
        Ok(Observations::new(kps, [self.width as u32, self.height as u32]))
    }
}

/// Expected pixel position and distance-map value under one joint's heatmap.
pub fn soft_argmax(maps: &ObservationMaps, joint: usize) -> Result<(f64, f64, f64)> {
    if joint >= NUM_KEYPOINTS {
        return Err(Error::InvalidObservations(format!("joint index {joint} out of range")));
    }
    let range = maps.channel(joint);
    let h = &maps.heatmaps[range.clone()];
    let d = &maps.distmaps[range];
    let sum: f64 = h.iter().sum();
    if (sum - 1.0).abs() > HEATMAP_SUM_TOL {
        return Err(Error::HeatmapNotNormalized { channel: joint, sum });
    }
    let (mut u, mut v, mut depth) = (0.0, 0.0, 0.0);
    for (i, (&p, &z)) in h.iter().zip(d).enumerate() {
        if p == 0.0 {
            continue;
        }
        u += p * (i % maps.width) as f64;
        v += p * (i / maps.width) as f64;
        depth += p * z;
    }
    Ok((u, v, depth))
}

/// Sidecar describing a binary map container: little-endian `f32` values,
/// heatmaps then distance maps, each of shape `(k, H, W)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsSidecar {
    pub shape: [usize; 3],
    #[serde(default = "native_tag")]
    pub channel_order: String,
    /// Binary file name, relative to the sidecar.
    pub data: String,
}

pub fn load_maps(sidecar_path: impl AsRef<Path>) -> Result<ObservationMaps> {
    let sidecar_path = sidecar_path.as_ref();
    let text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: MapsSidecar = serde_json::from_str(&text).map_err(|e| Error::json(sidecar_path, e))?;
    let [k, h, w] = sidecar.shape;
    if k != NUM_KEYPOINTS {
        return Err(Error::WrongJointCount {
            expected: NUM_KEYPOINTS,
            found: k,
        });
    }
    let convention = Convention::parse(&sidecar.channel_order)?;
    let data_path = sidecar_path.with_file_name(&sidecar.data);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let n = k * h * w;
    if bytes.len() != 2 * n * 4 {
        return Err(Error::InvalidObservations(format!(
            "{} holds {} bytes, expected {}",
            data_path.display(),
            bytes.len(),
            2 * n * 4
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let reorder = |stack: &[f64]| -> Vec<f64> {
        let table = convention.to_native_table();
        let plane = h * w;
        let mut out = vec![0.0; n];
        for (i, &native) in table.iter().enumerate() {
            out[native * plane..(native + 1) * plane].copy_from_slice(&stack[i * plane..(i + 1) * plane]);
        }
        out
    };
    ObservationMaps::new(h, w, reorder(&values[..n]), reorder(&values[n..]))
}

/// Writes `<stem>.json` and `<stem>.bin` in native channel order.
pub fn save_maps(maps: &ObservationMaps, sidecar_path: impl AsRef<Path>) -> Result<()> {
    let sidecar_path = sidecar_path.as_ref();
    let data_path = sidecar_path.with_extension("bin");
    let sidecar = MapsSidecar {
        shape: [NUM_KEYPOINTS, maps.height, maps.width],
        channel_order: native_tag(),
        data: data_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut bytes = Vec::with_capacity(8 * maps.heatmaps.len());
    for v in maps.heatmaps.iter().chain(&maps.distmaps) {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))?;
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(sidecar_path, text).map_err(|e| Error::io(sidecar_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [Convention; 4] = [
        Convention::Native,
        Convention::OpenPose,
        Convention::Rhd,
        Convention::Mano,
    ];

    fn one_hot(h: usize, w: usize, joint_cells: impl Fn(usize) -> Vec<(usize, usize, f64, f64)>) -> ObservationMaps {
        let mut hm = vec![0.0; NUM_KEYPOINTS * h * w];
        let mut dm = vec![0.0; NUM_KEYPOINTS * h * w];
        for j in 0..NUM_KEYPOINTS {
            for (row, col, p, d) in joint_cells(j) {
                hm[j * h * w + row * w + col] = p;
                dm[j * h * w + row * w + col] = d;
            }
        }
        ObservationMaps::new(h, w, hm, dm).unwrap()
    }

    #[test]
    fn one_hot_cell() {
        let maps = one_hot(10, 8, |_| vec![(7, 3, 1.0, 0.25)]);
        assert_eq!(soft_argmax(&maps, 4).unwrap(), (3.0, 7.0, 0.25));
    }

    #[test]
    fn two_cell_midpoint() {
        let maps = one_hot(4, 12, |_| vec![(0, 0, 0.5, 0.0), (0, 10, 0.5, 1.0)]);
        assert_eq!(soft_argmax(&maps, 0).unwrap(), (5.0, 0.0, 0.5));
    }

    fn random_maps(seed: u64, h: usize, w: usize) -> ObservationMaps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = h * w;
        let mut hm = Vec::with_capacity(NUM_KEYPOINTS * n);
        for _ in 0..NUM_KEYPOINTS {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            hm.extend(raw.iter().map(|x| x / s));
        }
        let dm = (0..NUM_KEYPOINTS * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        ObservationMaps::new(h, w, hm, dm).unwrap()
    }

    #[test]
    fn matches_double_loop() {
        let maps = random_maps(3, 9, 13);
        for j in 0..NUM_KEYPOINTS {
            let (mut u, mut v, mut d) = (0.0, 0.0, 0.0);
            for row in 0..9 {
                for col in 0..13 {
                    let idx = j * 9 * 13 + row * 13 + col;
                    u += maps.heatmaps[idx] * col as f64;
                    v += maps.heatmaps[idx] * row as f64;
                    d += maps.heatmaps[idx] * maps.distmaps[idx];
                }
            }
            let got = soft_argmax(&maps, j).unwrap();
            assert!((got.0 - u).abs() < 1e-12 && (got.1 - v).abs() < 1e-12 && (got.2 - d).abs() < 1e-12);
        }
    }

    #[test]
    fn unnormalized_channel_is_rejected() {
        let maps = one_hot(4, 4, |j| vec![(1, 1, if j == 5 { 0.9 } else { 1.0 }, 0.0)]);
        assert!(soft_argmax(&maps, 0).is_ok());
        assert!(matches!(
            soft_argmax(&maps, 5),
            Err(Error::HeatmapNotNormalized { channel: 5, .. })
        ));
    }

    proptest! {
        #[test]
        fn soft_argmax_stays_in_grid(seed in 0u64..1000, h in 1usize..12, w in 1usize..12) {
            let maps = random_maps(seed, h, w);
            for j in 0..NUM_KEYPOINTS {
                let (u, v, _) = soft_argmax(&maps, j).unwrap();
                prop_assert!(u >= -1e-12 && u <= (w - 1) as f64 + 1e-12);
                prop_assert!(v >= -1e-12 && v <= (h - 1) as f64 + 1e-12);
            }
        }

        #[test]
        fn remap_inverse_is_identity(which in 0usize..4, values in proptest::array::uniform21(-1e3f64..1e3)) {
            let c = ALL[which];
            prop_assert_eq!(c.to_native(&c.from_native(&values)), values);
            prop_assert_eq!(c.from_native(&c.to_native(&values)), values);
        }
    }

    #[test]
    fn tables_are_permutations() {
        for c in ALL {
            let mut t = c.to_native_table().to_vec();
            t.sort();
            assert_eq!(t, (0..NUM_KEYPOINTS).collect::<Vec<_>>(), "{c:?}");
        }
    }

    #[test]
    fn openpose_places_tips_after_each_finger() {
        let t = Convention::OpenPose.to_native_table();
        assert_eq!(&t[..5], &[0, 1, 2, 3, 16]);
        assert_eq!(t[20], 20);
        let r = Convention::Rhd.to_native_table();
        assert_eq!(&r[..5], &[0, 16, 3, 2, 1]);
    }

    fn sample_obs() -> Observations {
        let mut kps = [[0.0; 2]; NUM_KEYPOINTS];
        for (i, k) in kps.iter_mut().enumerate() {
            *k = [10.0 + i as f64 * 1.5, 20.0 + (i * i) as f64 * 0.25];
        }
        let mut o = Observations::new(kps, [128, 96]);
        o.d_root = Some(0.55);
        o.confidences[3] = 0.25;
        o
    }

    #[test]
    fn minimal_file_has_unit_confidences() {
        let kps: Vec<String> = (0..21).map(|i| format!("[{i}, {}]", i + 1)).collect();
        let text = format!("{{\"image_size\": [64, 64], \"keypoints\": [{}]}}", kps.join(","));
        let obs = Observations::from_json(&text, "t.json").unwrap();
        assert_eq!(obs.confidences, [1.0; NUM_KEYPOINTS]);
        assert_eq!(obs.keypoints[20], [20.0, 21.0]);
        assert_eq!(obs.d_root, None);
    }

    #[test]
    fn twenty_keypoints_is_a_count_error() {
        let kps: Vec<String> = (0..20).map(|i| format!("[{i}, 1]")).collect();
        let text = format!("{{\"image_size\": [64, 64], \"keypoints\": [{}]}}", kps.join(","));
        let err = Observations::from_json(&text, "t.json").unwrap_err();
        assert!(matches!(
            err,
            Error::WrongJointCount {
                expected: 21,
                found: 20
            }
        ));
    }

    #[test]
    fn unknown_convention_is_rejected() {
        let text = sample_obs()
            .to_json(Convention::Native)
            .replace("\"native\"", "\"coco\"");
        assert!(matches!(
            Observations::from_json(&text, "t.json"),
            Err(Error::UnknownConvention(_))
        ));
    }

    #[test]
    fn alternate_ordering_reads_back_same_joints() {
        let obs = sample_obs();
        for c in ALL {
            let back = Observations::from_json(&obs.to_json(c), "t.json").unwrap();
            assert_eq!(back, obs, "{c:?}");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let mut obs = sample_obs();
        obs.keypoints[2] = [0.1 + 0.2, 1.0 / 3.0];
        save_observations(&obs, Convention::Rhd, &p1).unwrap();
        let a = load_observations(&p1).unwrap();
        save_observations(&a, Convention::Native, &p2).unwrap();
        let b = load_observations(&p2).unwrap();
        assert_eq!(a, obs);
        assert_eq!(b, a);
    }

    #[test]
    fn out_of_frame_flags() {
        let mut obs = sample_obs();
        obs.keypoints[1] = [-0.5, 3.0];
        obs.keypoints[2] = [3.0, 96.0];
        let flags = obs.out_of_frame();
        assert!(flags[1] && flags[2] && !flags[0]);
    }

    #[test]
    fn bad_confidence_is_rejected() {
        let mut obs = sample_obs();
        obs.confidences[0] = 1.5;
        assert!(matches!(obs.validate(), Err(Error::InvalidObservations(_))));
    }

    #[test]
    fn map_container_round_trip() {
        let maps = one_hot(6, 5, |j| vec![(j % 6, j % 5, 0.75, 0.5), ((j + 1) % 6, 0, 0.25, -0.25)]);
        let dir = tempfile::tempdir().unwrap();
        let side = dir.path().join("maps.json");
        save_maps(&maps, &side).unwrap();
        let back = load_maps(&side).unwrap();
        assert_eq!(back, maps);
        let obs = back.to_observations().unwrap();
        assert_eq!(obs.image_size, [5, 6]);
        assert_eq!(obs.keypoints[0], [0.0, 0.25]);
    }

    #[test]
    fn map_container_wrong_size_is_rejected() {
        let maps = one_hot(3, 3, |_| vec![(0, 0, 1.0, 0.0)]);
        let dir = tempfile::tempdir().unwrap();
        let side = dir.path().join("m.json");
        save_maps(&maps, &side).unwrap();
        fs::write(dir.path().join("m.bin"), [0u8; 12]).unwrap();
        assert!(matches!(load_maps(&side), Err(Error::InvalidObservations(_))));
    }
}
