//! Few-shot image classification with location-aware constellation
//! networks: a small reverse-mode autodiff engine, the clustering and
//! positional-compensation modules, the backbone, episodic training and
//! multi-branch evaluation.

pub mod backbone;
pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod constell;
pub mod data;
pub mod encoding;
pub mod metrics;
pub mod params;
pub mod pgm;
pub mod tensor;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFinite {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
