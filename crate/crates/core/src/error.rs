use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("layer count mismatch: expected {expected}, found {found}")]
    LayerCountMismatch { expected: usize, found: usize },
    #[error("feature dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("class absent: class {0} has no labeled pixels in any support mask")]
    ClassAbsent(u8),
    #[error("class empty at feature resolution: class {class} at layer {layer}")]
    ClassEmpty { class: u8, layer: usize },
    #[error("episode unusable at this layer: no class has features at layer {0}")]
    EpisodeUnusable(usize),
    #[error("degenerate feature: zero-norm or non-finite vector")]
    DegenerateFeature,
    #[error("invalid layer index {index} (stack has {count} layers)")]
    InvalidLayer { index: usize, count: usize },
    #[error("invalid label {label} (num_classes = {num_classes})")]
    InvalidLabel { label: u8, num_classes: usize },
    #[error("undefined mIoU: no foreground class present")]
    UndefinedMiou,
    #[error("no maps for class")]
    NoMaps,
    #[error("no signal: every weighted heuristic is unavailable on every layer")]
    NoSignal,
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: expected \"FSSD\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u16),
    #[error("unexpected end of file at layer {layer}")]
    UnexpectedEof { layer: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("mask must be single-channel (found {0})")]
    MaskNotSingleChannel(String),
    #[error("mask size mismatch: expected {expected:?}, found {found:?}")]
    MaskSizeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("cannot satisfy episode spec: {0}")]
    InfeasibleEpisodeSpec(String),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("bad table: {0}")]
    BadTable(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Strips path context added while reading files.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }
}
