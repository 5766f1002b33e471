use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("{path}: header declares {declared} points but body holds {found}")]
    RecordCountMismatch {
        path: PathBuf,
        declared: usize,
        found: usize,
    },

    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    FieldCountMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: cannot parse value {value:?}")]
    BadValue {
        path: PathBuf,
        line: usize,
        value: String,
    },

    #[error("need more than {needed} points, cloud has {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("cloud is empty")]
    EmptyCloud,

    #[error("no correspondences within {max_dist} m")]
    NoCorrespondences { max_dist: f64 },

    #[error("submap is empty")]
    EmptySubmap,

    #[error("scan index {got} is not after last recorded index {last}")]
    OutOfOrderScan { last: u64, got: u64 },

    #[error("cell ({row}, {col}) holds {value}, expected one of 0, 100, 255")]
    NotDiscretized { row: usize, col: usize, value: u8 },

    #[error("stitched raster has no patch covering cell ({row}, {col})")]
    CoverageGap { row: usize, col: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("model did not answer patch {patch_id} within {seconds} s")]
    ModelTimeout { patch_id: u32, seconds: f64 },

    #[error("malformed model response: {0}")]
    MalformedResponse(String),

    #[error("floorplan has no free region of at least {min_cells} connected cells")]
    NonTraversable { min_cells: usize },

    #[error("trajectory planning failed: {0}")]
    PlanningFailed(String),

    #[error("map metadata missing: {0}")]
    MissingMetadata(PathBuf),

    #[error("map has no cells")]
    EmptyMap,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("scan {scan}, stage {stage}: {source}")]
    Stage {
        scan: u64,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn at_stage(self, scan: u64, stage: &'static str) -> Self {
        Error::Stage {
            scan,
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures originating in an external cleaning model.
    pub fn is_model_error(&self) -> bool {
        match self {
            Error::Model(_)
            | Error::ModelTimeout { .. }
            | Error::MalformedResponse(_)
            | Error::ShapeMismatch { .. } => true,
            Error::Stage { source, .. } => source.is_model_error(),
            _ => false,
        }
    }

    /// Process exit code used by the command line tool: 1 usage, 2 data, 3 model.
    pub fn exit_code(&self) -> i32 {
        match self {
            e if e.is_model_error() => 3,
            Error::InvalidConfig(_) => 1,
            _ => 2,
        }
    }
}
