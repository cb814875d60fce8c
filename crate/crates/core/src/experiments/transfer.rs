//! Moving a trained GNN to a post-outage topology.

use serde::{Deserialize, Serialize};

use super::{check_dataset_grid, evaluate_rows, split_indices, train_from, EvalReport, ExperimentError, Samples, TrainConfig};
use crate::case_io::DatasetFile;
use crate::grid_model::{apply_outage, GridLinAlg};
use crate::nn::{AnyModel, ModelFile, NnError};
use crate::spectral::{
    analyze_outage, choose_subspace_dim, eigendecompose_spd, separation_constants, spectral_norm, SpectralScenario,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub scenario: String,
    pub outaged_branches: Vec<usize>,
    /// Mask-surgery model before any retraining.
    pub pre_trained: EvalReport,
    pub re_trained: EvalReport,
    pub retrain_samples: usize,
    pub retrain_epochs: usize,
    pub best_epoch: usize,
    pub spectral: SpectralScenario,
    pub delta_h: f64,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub report: TransferReport,
    pub surgery: ModelFile,
    pub retrained: ModelFile,
    pub retrain_seconds: f64,
}

/// `Δ_H = (1/T) Σ_t ‖H_i^t − H_0^t‖₂ / ‖H_0^t‖₂` over the feature filters.
pub fn filter_perturbation(original: &ModelFile, transferred: &ModelFile) -> Result<f64, NnError> {
    let (AnyModel::Gnn(a), AnyModel::Gnn(b)) = (&original.model, &transferred.model) else {
        return Err(NnError::ShapeMismatch("feature-filter perturbation needs two GNNs".into()));
    };
    if a.layers.len() != b.layers.len() || a.layers.iter().zip(&b.layers).any(|(x, y)| x.h.shape() != y.h.shape()) {
        return Err(NnError::ShapeMismatch("models have different layer structure".into()));
    }
    let t = a.layers.len() as f64;
    Ok(a.layers.iter().zip(&b.layers).map(|(x, y)| spectral_norm(&(&y.h - &x.h)) / spectral_norm(&x.h)).sum::<f64>() / t)
}

/// Mask surgery, pre-trained evaluation, warm-start retraining and the
/// spectral diagnostics of one outage scenario.
///
/// `new_data` must be generated on the post-outage topology; it is split with
/// `cfg`'s fractions and seed, and both evaluations use its test rows.
/// `subspace_dim` fixes `s`; otherwise the 50%-energy rule picks it.
pub fn topology_transfer(
    original: &ModelFile,
    grid: &GridLinAlg,
    outaged: &[usize],
    new_data: &DatasetFile,
    cfg: &TrainConfig,
    subspace_dim: Option<usize>,
) -> Result<TransferOutcome, ExperimentError> {
    original.expect_buses(grid.n_buses())?;
    let post = apply_outage(grid, outaged)?.post_grid;
    check_dataset_grid(new_data, &post)?;

    let surgery = match &original.model {
        AnyModel::Gnn(m) => ModelFile { model: AnyModel::Gnn(m.apply_mask(post.mask())?), adam_state: None, ..original.clone() },
        AnyModel::Fcnn(_) => return Err(ExperimentError::BadConfig("topology transfer needs a GNN checkpoint".into())),
    };
    let samples = Samples::from_dataset(new_data, &original.normalizer.feature_names)?;
    let split = split_indices(samples.len(), cfg.train_fraction, cfg.val_fraction, cfg.seed);
    let pre_trained = evaluate_rows(&surgery, &samples, &split.test, &post)?;

    let outcome = train_from(&surgery, new_data, &post, cfg)?;

    let basis = eigendecompose_spd(grid.b_inv())?;
    let s = match subspace_dim {
        Some(s) => s,
        None => choose_subspace_dim(&basis, 0.5).s,
    };
    let constants = separation_constants(&basis, s)?;
    let spectral = analyze_outage(grid, &basis, &constants, outaged)?;
    let delta_h = filter_perturbation(original, &outcome.model)?;

    let mut sorted = outaged.to_vec();
    sorted.sort_unstable();
    let report = TransferReport {
        scenario: sorted.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("+"),
        outaged_branches: sorted,
        pre_trained,
        re_trained: outcome.report.clone(),
        retrain_samples: outcome.split.train.len(),
        retrain_epochs: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        spectral,
        delta_h,
    };
    Ok(TransferOutcome { report, surgery, retrained: outcome.model, retrain_seconds: outcome.seconds })
}
