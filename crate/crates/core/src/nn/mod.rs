//! Autodiff tape, models, latent chain, loss and optimizer.

pub mod adam;
pub mod chain;
pub mod io;
pub mod loss;
pub mod models;
pub mod tape;

use thiserror::Error;

use crate::case_io::CaseError;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use chain::{hard_projection, soft_projection, BatchCosts, ChainGrid, Projection};
pub use io::{load_model, save_model, ModelFile, Normalizer};
pub use loss::{composite_loss, FrMode, LossConfig, LossTargets};
pub use models::{AnyModel, FcnnModel, GnnModel, HeadKind, Model};
pub use tape::{Graph, Var};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward has not been run on this graph")]
    GraphNotRecorded,
    #[error("missing channel: {0}")]
    MissingChannel(String),
    #[error(transparent)]
    Checkpoint(#[from] CaseError),
}
