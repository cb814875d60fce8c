//! Standardization statistics and model checkpoints.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::adam::{AdamConfig, AdamState};
use super::models::{AnyModel, DenseLayer, FcnnModel, GnnLayer, GnnModel, HeadKind};
use super::NnError;
use crate::case_io::{Checkpoint, NamedArray};
use crate::grid_model::GnnMask;

/// Spreads below this are treated as constant and left unscaled.
const MIN_STD: f64 = 1e-9;

/// Per-(node, channel) z-scoring statistics, each `N×C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
    pub feat_mean: DMatrix<f64>,
    pub feat_std: DMatrix<f64>,
    pub label_mean: DMatrix<f64>,
    pub label_std: DMatrix<f64>,
}

fn stats(samples: &[&DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (r, c) = samples[0].shape();
    let k = samples.len() as f64;
    let mut mean = DMatrix::zeros(r, c);
    for s in samples {
        mean += *s;
    }
    mean /= k;
    let mut var = DMatrix::zeros(r, c);
    for s in samples {
        let d = *s - &mean;
        var += d.component_mul(&d);
    }
    var /= k;
    let std = var.map(|v| if v.sqrt() > MIN_STD { v.sqrt() } else { 1.0 });
    (mean, std)
}

impl Normalizer {
    /// Fit on per-sample `N×d` features and `N×c` labels.
    pub fn fit(
        feature_names: Vec<String>,
        label_names: Vec<String>,
        features: &[&DMatrix<f64>],
        labels: &[&DMatrix<f64>],
    ) -> Result<Self, NnError> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(NnError::ShapeMismatch(format!("{} feature and {} label samples", features.len(), labels.len())));
        }
        let (feat_mean, feat_std) = stats(features);
        let (label_mean, label_std) = stats(labels);
        if feat_mean.ncols() != feature_names.len() || label_mean.ncols() != label_names.len() {
            return Err(NnError::ShapeMismatch("statistics do not match the channel names".into()));
        }
        Ok(Normalizer { feature_names, label_names, feat_mean, feat_std, label_mean, label_std })
    }

    pub fn n_buses(&self) -> usize {
        self.feat_mean.nrows()
    }

    /// Stack samples into a standardized node-major `(B·N)×d` input.
    pub fn inputs(&self, samples: &[&DMatrix<f64>]) -> DMatrix<f64> {
        let (n, d) = self.feat_mean.shape();
        DMatrix::from_fn(samples.len() * n, d, |r, c| {
            let (b, i) = (r / n, r % n);
            (samples[b][(i, c)] - self.feat_mean[(i, c)]) / self.feat_std[(i, c)]
        })
    }

    /// Standardized channel `c` of each sample label as a `B×N` block.
    pub fn label_block(&self, samples: &[&DMatrix<f64>], c: usize) -> DMatrix<f64> {
        let n = self.label_mean.nrows();
        DMatrix::from_fn(samples.len(), n, |b, i| (samples[b][(i, c)] - self.label_mean[(i, c)]) / self.label_std[(i, c)])
    }

    /// Undo standardization of a `B×N` block of channel `c`.
    pub fn destandardize(&self, block: &DMatrix<f64>, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(block.nrows(), block.ncols(), |b, i| block[(b, i)] * self.label_std[(i, c)] + self.label_mean[(i, c)])
    }

    pub fn label_mean_of(&self, c: usize) -> Vec<f64> {
        self.label_mean.column(c).iter().copied().collect()
    }

    pub fn label_std_of(&self, c: usize) -> Vec<f64> {
        self.label_std.column(c).iter().copied().collect()
    }
}

/// Everything needed to resume or evaluate a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: AnyModel,
    pub normalizer: Normalizer,
    pub adam: AdamConfig,
    pub adam_state: Option<AdamState>,
    /// Free-form run metadata (config hash, case name, loss settings).
    pub meta: Value,
}

fn arr(name: impl Into<String>, m: &DMatrix<f64>) -> NamedArray {
    // row-major so the file reads naturally in other languages
    NamedArray::new(name, vec![m.nrows(), m.ncols()], m.transpose().iter().copied().collect())
}

fn mat(ck: &Checkpoint, name: &str) -> Result<DMatrix<f64>, NnError> {
    let a = ck.array(name)?;
    if a.shape.len() != 2 {
        return Err(NnError::ShapeMismatch(format!("array {name} has shape {:?}", a.shape)));
    }
    Ok(DMatrix::from_row_slice(a.shape[0], a.shape[1], &a.data))
}

fn field<T: for<'de> Deserialize<'de>>(meta: &Value, key: &str) -> Result<T, NnError> {
    let v = meta.get(key).ok_or_else(|| NnError::ShapeMismatch(format!("checkpoint meta lacks {key:?}")))?;
    serde_json::from_value(v.clone()).map_err(|e| NnError::ShapeMismatch(format!("checkpoint meta {key:?}: {e}")))
}

#[derive(Serialize, Deserialize)]
struct Layout {
    n_buses: usize,
    widths: Vec<usize>,
    head: Option<HeadKind>,
    out_channels: Option<usize>,
    feature_names: Vec<String>,
    label_names: Vec<String>,
    adam: AdamConfig,
    adam_step: Option<u64>,
}

impl ModelFile {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let m = self.model.as_model();
        let mut arrays: Vec<NamedArray> =
            m.param_names().into_iter().zip(m.params()).map(|(name, p)| arr(format!("param.{name}"), p)).collect();
        let (head, out_channels) = match &self.model {
            AnyModel::Gnn(g) => {
                let e = g.mask().entries();
                let flat: Vec<f64> = e.iter().flat_map(|&(i, j)| [i as f64, j as f64]).collect();
                arrays.push(NamedArray::new("mask", vec![e.len(), 2], flat));
                (Some(g.head_kind), None)
            }
            AnyModel::Fcnn(f) => (None, Some(f.out_channels())),
        };
        let nz = &self.normalizer;
        arrays.extend([
            arr("norm.feat_mean", &nz.feat_mean),
            arr("norm.feat_std", &nz.feat_std),
            arr("norm.label_mean", &nz.label_mean),
            arr("norm.label_std", &nz.label_std),
        ]);
        if let Some(st) = &self.adam_state {
            for (k, (mm, vv)) in st.m.iter().zip(&st.v).enumerate() {
                arrays.push(arr(format!("adam.m{k}"), mm));
                arrays.push(arr(format!("adam.v{k}"), vv));
            }
        }
        let layout = Layout {
            n_buses: m.n_buses(),
            widths: m.widths(),
            head,
            out_channels,
            feature_names: nz.feature_names.clone(),
            label_names: nz.label_names.clone(),
            adam: self.adam,
            adam_step: self.adam_state.as_ref().map(|s| s.step),
        };
        Checkpoint {
            kind: self.model.kind().to_string(),
            meta: json!({ "layout": layout, "run": self.meta }),
            arrays,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnError> {
        let layout: Layout = field(&ck.meta, "layout")?;
        let n = layout.n_buses;
        let w = &layout.widths;
        let model = match ck.kind.as_str() {
            "gnn" => {
                let head = layout.head.ok_or_else(|| NnError::ShapeMismatch("gnn checkpoint without head kind".into()))?;
                let m = ck.array("mask")?;
                if m.shape.len() != 2 || m.shape[1] != 2 {
                    return Err(NnError::ShapeMismatch(format!("mask array shape {:?}", m.shape)));
                }
                let entries: Vec<(usize, usize)> = m.data.chunks(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
                if entries.iter().any(|&(i, j)| i >= n || j >= n) {
                    return Err(NnError::ShapeMismatch("mask entry outside the bus range".into()));
                }
                let mask = GnnMask::from_entries(n, entries);
                let layers = (0..w.len() - 1)
                    .map(|t| {
                        Ok(GnnLayer {
                            w: mat(ck, &format!("param.layer{t}.w"))?,
                            h: mat(ck, &format!("param.layer{t}.h"))?,
                            b: mat(ck, &format!("param.layer{t}.b"))?,
                        })
                    })
                    .collect::<Result<Vec<_>, NnError>>()?;
                AnyModel::Gnn(GnnModel::from_parts(mask, layers, head, mat(ck, "param.head.w")?, mat(ck, "param.head.b")?)?)
            }
            "fcnn" => {
                let c = layout.out_channels.ok_or_else(|| NnError::ShapeMismatch("fcnn checkpoint without outputs".into()))?;
                let layers = (0..w.len() - 1)
                    .map(|t| Ok(DenseLayer { w: mat(ck, &format!("param.layer{t}.w"))?, b: mat(ck, &format!("param.layer{t}.b"))? }))
                    .collect::<Result<Vec<_>, NnError>>()?;
                let head = DenseLayer { w: mat(ck, "param.head.w")?, b: mat(ck, "param.head.b")? };
                AnyModel::Fcnn(FcnnModel::from_parts(n, w.clone(), c, layers, head)?)
            }
            other => return Err(NnError::ShapeMismatch(format!("unknown model kind {other:?}"))),
        };
        let normalizer = Normalizer {
            feature_names: layout.feature_names,
            label_names: layout.label_names,
            feat_mean: mat(ck, "norm.feat_mean")?,
            feat_std: mat(ck, "norm.feat_std")?,
            label_mean: mat(ck, "norm.label_mean")?,
            label_std: mat(ck, "norm.label_std")?,
        };
        if normalizer.n_buses() != n || normalizer.label_mean.nrows() != n {
            return Err(NnError::ShapeMismatch("normalizer does not match the model size".into()));
        }
        let adam_state = match layout.adam_step {
            None => None,
            Some(step) => {
                let k = model.as_model().params().len();
                let m = (0..k).map(|i| mat(ck, &format!("adam.m{i}"))).collect::<Result<Vec<_>, _>>()?;
                let v = (0..k).map(|i| mat(ck, &format!("adam.v{i}"))).collect::<Result<Vec<_>, _>>()?;
                Some(AdamState { step, m, v })
            }
        };
        let meta = ck.meta.get("run").cloned().unwrap_or(Value::Null);
        Ok(ModelFile { model, normalizer, adam: layout.adam, adam_state, meta })
    }

    /// Error unless the model was built for `n` buses.
    pub fn expect_buses(&self, n: usize) -> Result<(), NnError> {
        let have = self.model.as_model().n_buses();
        if have != n {
            return Err(NnError::ShapeMismatch(format!("checkpoint is for {have} buses, experiment has {n}")));
        }
        Ok(())
    }

    pub fn mask_entries(&self) -> Option<Arc<[(usize, usize)]>> {
        match &self.model {
            AnyModel::Gnn(g) => Some(g.mask().entries().into()),
            AnyModel::Fcnn(_) => None,
        }
    }
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<(), NnError> {
    Ok(file.to_checkpoint().save(path)?)
}

pub fn load_model(path: &Path) -> Result<ModelFile, NnError> {
    ModelFile::from_checkpoint(&Checkpoint::load(path)?)
}
