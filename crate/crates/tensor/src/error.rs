use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op} expects a rank-{expected} tensor, got rank {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("target is not one-hot at sample {sample}, voxel {voxel}")]
    NotOneHot { sample: usize, voxel: usize },
    #[error("kernel size {0} must be odd for same padding")]
    EvenKernel(usize),
    #[error("malformed weight file: {0}")]
    WeightFormat(String),
}
