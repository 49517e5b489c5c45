//! Model file (JSON) and Wavefront OBJ export.
//!
//! The model file is a single JSON object:
//!
//! ```text
//! {
//!   "format": "handfit-model/1",
//!   "name": "...",
//!   "joint_names": ["wrist", "thumb1", ..., "pinky_tip"],   // informational
//!   "template_vertices": [[x, y, z], ...],                   // V rows
//!   "faces": [[a, b, c], ...],                               // 0-based
//!   "blend_weights": [[w0, ..., w15], ...],                  // V rows
//!   "parents": [null, 0, 1, 2, 0, ...],                      // 16 entries
//!   "shape_dirs": [[[dx0..dx9], [dy0..dy9], [dz0..dz9]], ...], // V blocks
//!   "joint_regressor": [[r_0 .. r_V-1], ...],                // 16 rows
//!   "tip_vertex_ids": [thumb, index, middle, ring, pinky]
//! }
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HandModel, Mesh, ModelParts, KEYPOINT_NAMES, NUM_FINGERS, NUM_JOINTS, NUM_SHAPE};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "handfit-model/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub joint_names: Vec<String>,
    pub template_vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub blend_weights: Vec<[f64; NUM_JOINTS]>,
    pub parents: [Option<usize>; NUM_JOINTS],
    pub shape_dirs: Vec<[[f64; NUM_SHAPE]; 3]>,
    pub joint_regressor: Vec<Vec<f64>>,
    pub tip_vertex_ids: [usize; NUM_FINGERS],
}

impl From<&HandModel> for ModelFile {
    fn from(m: &HandModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            name: m.name.clone(),
            joint_names: KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            template_vertices: m.template_vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            faces: m.faces.clone(),
            blend_weights: m.blend_weights.clone(),
            parents: m.parents,
            shape_dirs: m.shape_dirs.clone(),
            joint_regressor: m.joint_regressor.clone(),
            tip_vertex_ids: m.tip_vertex_ids,
        }
    }
}

impl ModelFile {
    pub fn into_parts(self) -> ModelParts {
        ModelParts {
            name: self.name,
            template_vertices: self.template_vertices,
            faces: self.faces,
            blend_weights: self.blend_weights,
            parents: self.parents,
            shape_dirs: self.shape_dirs,
            joint_regressor: self.joint_regressor,
            tip_vertex_ids: self.tip_vertex_ids,
        }
    }

    pub fn into_model(self) -> Result<HandModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::InvalidModel(format!(
                "unsupported format tag '{}', expected '{MODEL_FORMAT}'",
                self.format
            )));
        }
        HandModel::new(self.into_parts())
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HandModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    file.into_model()
}

pub fn save_model(model: &HandModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&ModelFile::from(model)).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `v x y z` lines followed by 1-based `f a b c` lines.
pub fn write_obj<W: Write>(mesh: &Mesh, mut out: W) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}
