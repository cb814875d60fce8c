//! Training, evaluation, congestion classification and topology transfer.

mod congestion;
mod train;
mod transfer;

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::{CaseError, DatasetFile};
use crate::grid_model::{GridError, GridLinAlg};
use crate::nn::{AdamConfig, LossConfig, NnError};
use crate::opf::{OpfError, DC_FEATURES};
use crate::spectral::SpectralError;

pub use congestion::{
    binding_frequency, classification_metrics, congestion_classify, top_binding_lines, CongestionConfig, CongestionOutcome,
    CongestionReport, LineMetrics,
};
pub use train::{evaluate, evaluate_rows, predict_prices, train, train_from, EpochLog, EvalReport, TrainOutcome};
pub use transfer::{filter_perturbation, topology_transfer, TransferOutcome, TransferReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("the test split is empty")]
    EmptyTestSet,
    #[error("active line {line} (branch {branch}) never binds in the training split")]
    NoBindingEvents { line: usize, branch: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Case(#[from] CaseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gnn,
    Fcnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Layer widths `d_0..d_T`; `d_0` must equal the number of features.
    pub widths: Vec<usize>,
    pub features: Vec<String>,
    pub loss: LossConfig,
    /// When the loss has no explicit line set, the flow term covers this many
    /// most frequently binding lines of the training split (all lines if `None`).
    pub fr_top_k: Option<usize>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Share of samples used for training plus validation; the rest is the test split.
    pub train_fraction: f64,
    /// Share of the training part held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Gnn,
            widths: vec![4, 5, 10, 10, 5, 5],
            features: DC_FEATURES.iter().map(|s| s.to_string()).collect(),
            loss: LossConfig::default(),
            fr_top_k: Some(10),
            adam: AdamConfig { lr: 3e-3, ..Default::default() },
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-4,
            train_fraction: 0.8,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::BadConfig(m));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} must lie in (0, 1)", self.train_fraction));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} must lie in [0, 1)", self.val_fraction));
        }
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return bad(format!("invalid width chain {:?}", self.widths));
        }
        if self.widths[0] != self.features.len() {
            return bad(format!("first width {} but {} input features", self.widths[0], self.features.len()));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.adam.lr > 0.0 && self.min_delta >= 0.0) {
            return bad("learning rate must be positive and min_delta non-negative".into());
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Index sets of one deterministic train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `0..n` with `seed`, cut off the test tail, then carve the
/// validation share from the training part.
pub fn split_indices(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(n_train.min(n));
    let n_val = ((idx.len() as f64) * val_fraction).round() as usize;
    let train = idx.split_off(n_val.min(idx.len()));
    Split { train, val: idx, test }
}

/// Per-sample model inputs, labels and cost data pulled from a dataset.
#[derive(Debug, Clone)]
pub struct Samples {
    pub n_buses: usize,
    pub feature_names: Vec<String>,
    /// `N×d` inputs per sample.
    pub features: Vec<DMatrix<f64>>,
    /// `N×1` price labels per sample.
    pub prices: Vec<DMatrix<f64>>,
    pub p_star: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub p_min: Vec<Vec<f64>>,
    pub p_max: Vec<Vec<f64>>,
    pub binding: Vec<Vec<bool>>,
}

impl Samples {
    pub fn from_dataset(data: &DatasetFile, features: &[String]) -> Result<Self, ExperimentError> {
        let h = &data.header;
        let n = h.n_buses;
        let d = h.n_features();
        let col = |name: &str| {
            h.feature_index(name)
                .ok_or_else(|| ExperimentError::DimensionMismatch(format!("dataset has no feature {name:?}")))
        };
        let picked: Vec<usize> = features.iter().map(|f| col(f)).collect::<Result<_, _>>()?;
        let (ia, ib, ilo, ihi) = (col("a")?, col("b")?, col("pmin")?, col("pmax")?);
        let channel = |row: usize, name: &str| {
            data.label_channel(row, name)
                .ok_or_else(|| ExperimentError::DimensionMismatch(format!("dataset has no {name:?} labels")))
        };
        let mut s = Samples {
            n_buses: n,
            feature_names: features.to_vec(),
            features: Vec::with_capacity(data.len()),
            prices: Vec::with_capacity(data.len()),
            p_star: Vec::with_capacity(data.len()),
            a: Vec::new(),
            b: Vec::new(),
            p_min: Vec::new(),
            p_max: Vec::new(),
            binding: Vec::new(),
        };
        for row in 0..data.len() {
            let f = data.features(row);
            let at = |i: usize, c: usize| f[i * d + c];
            s.features.push(DMatrix::from_fn(n, picked.len(), |i, k| at(i, picked[k])));
            let pi = channel(row, "pi")?;
            let p = channel(row, "p")?;
            if pi.len() != n || p.len() != n {
                return Err(ExperimentError::DimensionMismatch(format!("row {row} has {} prices for {n} buses", pi.len())));
            }
            s.prices.push(DMatrix::from_column_slice(n, 1, pi));
            s.p_star.push(p.to_vec());
            s.a.push((0..n).map(|i| at(i, ia)).collect());
            s.b.push((0..n).map(|i| at(i, ib)).collect());
            s.p_min.push((0..n).map(|i| at(i, ilo)).collect());
            s.p_max.push((0..n).map(|i| at(i, ihi)).collect());
            s.binding.push(channel(row, "binding")?.iter().map(|v| *v > 0.5).collect());
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Error unless the dataset was generated on exactly this topology.
pub fn check_dataset_grid(data: &DatasetFile, grid: &GridLinAlg) -> Result<(), ExperimentError> {
    let h = &data.header;
    let branches: Vec<usize> = grid.lines().iter().map(|l| l.branch).collect();
    if h.n_buses != grid.n_buses() || h.n_lines != grid.n_lines() {
        return Err(ExperimentError::DimensionMismatch(format!(
            "dataset has {} buses / {} lines, grid has {} / {}",
            h.n_buses,
            h.n_lines,
            grid.n_buses(),
            grid.n_lines()
        )));
    }
    if !h.line_branches.is_empty() && h.line_branches != branches {
        return Err(ExperimentError::DimensionMismatch("dataset line order differs from the grid".into()));
    }
    Ok(())
}

/// Pretty JSON written atomically.
pub fn write_json_report<T: Serialize>(path: &Path, report: &T) -> Result<(), ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(report).map_err(CaseError::from)?;
    bytes.push(b'\n');
    crate::case_io::write_atomic(path, &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_partition() {
        let s = split_indices(100, 0.8, 0.1, 3);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (72, 8, 20));
        let mut all: Vec<usize> = [s.train.clone(), s.val.clone(), s.test.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_indices(100, 0.8, 0.1, 3));
        assert_ne!(s, split_indices(100, 0.8, 0.1, 4));
    }

    #[test]
    fn config_checks() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig { widths: vec![3, 5], ..Default::default() };
        assert!(matches!(bad.validate(), Err(ExperimentError::BadConfig(_))));
        let bad = TrainConfig { train_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let e = serde_json::from_str::<TrainConfig>(r#"{"widht": [4, 5]}"#);
        assert!(e.is_err());
    }
}
