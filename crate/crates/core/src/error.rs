use alloc::string::String;

/// Failure modes of the segmentation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions {0:?}: every axis must be positive")]
    InvalidDims([usize; 3]),
    #[error("invalid spacing {0:?}: every component must be finite and > 0")]
    InvalidSpacing([f64; 3]),
    #[error("data length {actual} does not match dims product {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("value {value} at index {index} is not valid for a {kind} volume")]
    InvalidValue {
        kind: &'static str,
        index: usize,
        value: f64,
    },
    #[error("expected a {expected} volume, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("sub-volume size {0:?} must be odd along every axis")]
    EvenSize([usize; 3]),
    #[error("dimension {dims:?} too small: need at least {min} per axis")]
    TooSmall { dims: [usize; 3], min: usize },
    #[error("upsample target {target:?} outside [2*dims-1, 2*dims] for dims {dims:?}")]
    UpsampleTarget { dims: [usize; 3], target: [usize; 3] },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("fan-in n_l must be at least 1")]
    ZeroFanIn,
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no voxel pairs inside the reference masks")]
    NoGradientPairs,
    #[error("volume has a single voxel and therefore no lattice edges")]
    NoEdges,
    #[error("random walker system is singular: no voxel is attached to a label node")]
    SingularSystem,
    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("mask is empty")]
    EmptyMask,
    #[error("crop range [{z_min}, {z_max}] invalid for {nz} slices")]
    CropRange { z_min: usize, z_max: usize, nz: usize },
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = core::result::Result<T, Error>;
