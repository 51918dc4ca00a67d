use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in the library.
///
/// Variants are grouped by the kind of failure they represent; see
/// [`Error::category`] for the coarse classification used by the CLI exit
/// codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("every column was dropped as numerically dependent")]
    AllColumnsDegenerate,
    #[error("input basis already spans the ambient space")]
    FullRankInput,
    #[error("not an orthonormal basis: {0}")]
    NotABasis(String),
    #[error("tangent space degenerate at this point: {0}")]
    DegenerateTangent(String),
    #[error("vector has zero norm; tangent fraction undefined")]
    ZeroVector,
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("path has all samples equal")]
    DegeneratePath,
    #[error("{0} produced non-finite values")]
    NonFiniteAttribution(String),
    #[error("alignment energy is not finite")]
    NonFiniteEnergy,
    #[error("initial base-point is closer than {min_separation} to the input (distance {distance})")]
    InitTooCloseToInput { distance: f64, min_separation: f64 },
    #[error("initial base-point lies outside the clip bounds at feature {feature}")]
    InitOutOfBounds { feature: usize },
    #[error("dimension {dim} exceeds the finite-difference Hessian cap {cap}")]
    DimensionCapExceeded { dim: usize, cap: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid bounds at feature {feature}: [{min}, {max}]")]
    InvalidBounds { feature: usize, min: f64, max: f64 },
    #[error("bad IDX magic: expected {expected}, found {found}")]
    BadMagic { expected: u32, found: u32 },
    #[error("file is truncated: {0}")]
    TruncatedFile(String),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("image side {side} is not divisible by factor {factor}")]
    NotDivisible { side: usize, factor: usize },
    #[error("dataset points are not square images")]
    NotAnImage,
    #[error("no records match the selection")]
    EmptySelection,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file {path}: {reason}")]
    FileFormat { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("point {point_id}, method {method}: {source}")]
    AtPoint {
        point_id: usize,
        method: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse failure class; maps onto CLI exit codes 2, 3 and 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> Category {
        use Error::*;
        match self {
            Config(_) | InvalidArgument(_) | InvalidSpec(_) | InvalidBounds { .. } => {
                Category::Config
            }
            BadMagic { .. }
            | TruncatedFile(_)
            | CountMismatch { .. }
            | FileFormat { .. }
            | Io { .. }
            | EmptyDataset
            | NotAnImage
            | NotDivisible { .. }
            | EmptySelection => Category::Data,
            AtPoint { source, .. } => source.category(),
            _ => Category::Numerical,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::FileFormat {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn at_point(self, point_id: usize, method: impl Into<String>) -> Self {
        Error::AtPoint {
            point_id,
            method: method.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
