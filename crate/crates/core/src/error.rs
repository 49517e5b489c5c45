use thiserror::Error;

/// Errors produced by model loading, projection, fitting and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hand model: {0}")]
    InvalidModel(String),

    #[error("invalid hand parameters: {0}")]
    InvalidParams(String),

    #[error("joint {joint} is behind the camera (z = {z})")]
    BehindCamera { joint: usize, z: f64 },

    #[error("point is behind the camera (z = {z})")]
    PointBehindCamera { z: f64 },

    #[error("recovered depth {0} is not positive")]
    NonPositiveDepth(f64),

    #[error("reference bone is nearly parallel to the optical axis (|dd| = {0})")]
    DegenerateBone(f64),

    #[error("degenerate scale solve: {0}")]
    DegenerateScale(&'static str),

    #[error("degenerate point configuration: {0}")]
    DegenerateGeometry(&'static str),

    #[error("expected {expected} joints, found {found}")]
    WrongJointCount { expected: usize, found: usize },

    #[error("unknown joint convention '{0}'")]
    UnknownConvention(String),

    #[error("heatmap channel {channel} sums to {sum}, expected 1")]
    HeatmapNotNormalized { channel: usize, sum: f64 },

    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numerics (degenerate geometry, points behind
    /// the camera) as opposed to malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BehindCamera { .. }
                | Error::PointBehindCamera { .. }
                | Error::NonPositiveDepth(_)
                | Error::DegenerateBone(_)
                | Error::DegenerateScale(_)
                | Error::DegenerateGeometry(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
