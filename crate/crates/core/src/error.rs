use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("degenerate face {face}: area {area:e}")]
    DegenerateFace { face: usize, area: f64 },
    #[error("invalid body spec: {0}")]
    InvalidSpec(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mesh pair mismatch: {0}")]
    Correspondence(String),
    #[error("degenerate direction: mapped endpoints coincide")]
    DegenerateDirection,
    #[error("singular blended transform (|det| = {0:e})")]
    SingularTransform(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    InvalidPixel {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid sampling interval [{near}, {far}]")]
    InvalidInterval { near: f64, far: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::DegenerateDirection
                | Error::SingularTransform(_)
                | Error::DegenerateFace { .. }
                | Error::Evaluation(_)
        )
    }
}
