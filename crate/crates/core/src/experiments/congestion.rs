//! Binding-line classification over the most frequently congested lines.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dataset_grid, split_indices, ExperimentError, Samples, Split, TrainConfig};
use crate::case_io::DatasetFile;
use crate::grid_model::GridLinAlg;
use crate::nn::{adam_step, AdamState, AnyModel, GnnModel, Graph, HeadKind, ModelFile, Normalizer, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CongestionConfig {
    pub train: TrainConfig,
    pub top_k: usize,
    /// Probability above which a line is predicted binding.
    pub threshold: f64,
    /// Weight positives by the negative/positive ratio of each line.
    pub balance_classes: bool,
}

impl Default for CongestionConfig {
    fn default() -> Self {
        CongestionConfig { train: TrainConfig::default(), top_k: 10, threshold: 0.5, balance_classes: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineMetrics {
    /// Position in the grid's line list.
    pub line: usize,
    pub branch: usize,
    pub train_frequency: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionReport {
    pub lines: Vec<LineMetrics>,
    /// Macro averages over lines whose metric is defined on the test split.
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct CongestionOutcome {
    pub model: ModelFile,
    pub report: CongestionReport,
    pub split: Split,
    pub seconds: f64,
}

/// Share of the given rows in which each line binds.
pub fn binding_frequency(samples: &Samples, rows: &[usize]) -> Vec<f64> {
    let nl = samples.binding.first().map_or(0, |b| b.len());
    let mut freq = vec![0.0; nl];
    for &r in rows {
        for (l, &b) in samples.binding[r].iter().enumerate() {
            freq[l] += b as u8 as f64;
        }
    }
    freq.iter_mut().for_each(|f| *f /= rows.len().max(1) as f64);
    freq
}

/// The `k` lines binding most often in `rows` (ties by line index), with
/// their frequencies. Lines that never bind are left out.
pub fn top_binding_lines(samples: &Samples, rows: &[usize], k: usize) -> Vec<(usize, f64)> {
    let freq = binding_frequency(samples, rows);
    let mut ranked: Vec<(usize, f64)> = freq.into_iter().enumerate().filter(|(_, f)| *f > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Confusion counts and derived rates of one line.
pub fn classification_metrics(pred: &[bool], truth: &[bool]) -> (usize, usize, usize, usize, Option<f64>, Option<f64>, Option<f64>) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    (tp, fp, fn_, tn, recall, precision, f1)
}

fn targets(samples: &Samples, rows: &[usize], lines: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), lines.len(), |b, k| samples.binding[rows[b]][lines[k]] as u8 as f64)
}

/// Weighted logistic loss `w·softplus(z) − w·y·z` averaged over entries,
/// with `softplus(z) = relu(z) + ln(1 + e^{−|z|})`.
fn bce(g: &mut Graph, z: Var, y: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Var, ExperimentError> {
    let r = g.relu(z);
    let a = g.abs(z);
    let na = g.scale(a, -1.0);
    let e = g.exp(na);
    let e1 = g.add_scalar(e, 1.0);
    let l = g.ln(e1);
    let sp = g.add(r, l)?;
    let yv = g.leaf(y.clone());
    let yz = g.mul(yv, z)?;
    let d = g.sub(sp, yz)?;
    let wv = g.leaf(w.clone());
    let wd = g.mul(d, wv)?;
    Ok(g.mean(wd))
}

fn logits(model: &ModelFile, samples: &Samples, rows: &[usize]) -> Result<DMatrix<f64>, ExperimentError> {
    let mut g = Graph::new();
    let feats: Vec<&DMatrix<f64>> = rows.iter().map(|&r| &samples.features[r]).collect();
    let x = g.leaf(model.normalizer.inputs(&feats));
    let (z, _) = model.model.as_model().forward(&mut g, x)?;
    Ok(g.value(z).clone())
}

/// Train a GNN with a dense head over the top-`k` binding lines of the
/// training split and report per-line recall and F1 on the test split.
pub fn congestion_classify(data: &DatasetFile, grid: &GridLinAlg, cfg: &CongestionConfig) -> Result<CongestionOutcome, ExperimentError> {
    let clock = std::time::Instant::now();
    let tc = &cfg.train;
    tc.validate()?;
    check_dataset_grid(data, grid)?;
    if cfg.top_k == 0 {
        return Err(ExperimentError::BadConfig("top_k must be positive".into()));
    }
    let samples = Samples::from_dataset(data, &tc.features)?;
    let split = split_indices(samples.len(), tc.train_fraction, tc.val_fraction, tc.seed);
    if split.test.is_empty() {
        return Err(ExperimentError::EmptyTestSet);
    }
    let freq = binding_frequency(&samples, &split.train);
    let ranked = top_binding_lines(&samples, &split.train, cfg.top_k);
    let mut active: Vec<usize> = ranked.iter().map(|&(l, _)| l).collect();
    if active.len() < cfg.top_k.min(grid.n_lines()) {
        // name the first line that would have to fill the active set
        let line = (0..grid.n_lines()).find(|l| !active.contains(l)).unwrap_or(0);
        return Err(ExperimentError::NoBindingEvents { line, branch: grid.lines()[line].branch });
    }
    active.sort_unstable();

    let feats = |rows: &[usize]| rows.iter().map(|&r| &samples.features[r]).collect::<Vec<_>>();
    let empty = DMatrix::zeros(grid.n_buses(), 0);
    let nz = Normalizer::fit(tc.features.clone(), Vec::new(), &feats(&split.train), &vec![&empty; split.train.len()])?;
    let mut model = AnyModel::Gnn(GnnModel::new(grid, &tc.widths, HeadKind::Dense(active.len()), tc.seed)?);

    let pos_weight: Vec<f64> = active
        .iter()
        .map(|&l| if cfg.balance_classes { ((1.0 - freq[l]) / freq[l]).max(1.0) } else { 1.0 })
        .collect();
    let weights = |y: &DMatrix<f64>| DMatrix::from_fn(y.nrows(), y.ncols(), |b, k| if y[(b, k)] > 0.5 { pos_weight[k] } else { 1.0 });
    let loss_on = |model: &AnyModel, rows: &[usize], g: &mut Graph| -> Result<(Var, Vec<Var>), ExperimentError> {
        let x = g.leaf(nz.inputs(&feats(rows)));
        let (z, leaves) = model.as_model().forward(g, x)?;
        let y = targets(&samples, rows, &active);
        let w = weights(&y);
        Ok((bce(g, z, &y, &w)?, leaves))
    };
    let monitor = if split.val.is_empty() { &split.train } else { &split.val };
    let val_loss = |model: &AnyModel| -> Result<f64, ExperimentError> {
        let mut total = 0.0;
        for chunk in monitor.chunks(256) {
            let mut g = Graph::new();
            let (l, _) = loss_on(model, chunk, &mut g)?;
            total += g.scalar(l) * chunk.len() as f64;
        }
        Ok(total / monitor.len() as f64)
    };

    let shapes: Vec<(usize, usize)> = model.as_model().params().iter().map(|p| p.shape()).collect();
    let mut adam = AdamState::new(&shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(2);
    let mut order = split.train.clone();
    let mut best = (val_loss(&model)?, model.clone(), adam.clone());
    let (mut stale, mut epochs) = (0, 0);
    for epoch in 1..=tc.max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng);
        for batch in order.chunks(tc.batch_size) {
            let mut g = Graph::new();
            let (loss, leaves) = loss_on(&model, batch, &mut g)?;
            let v = g.scalar(loss);
            if !v.is_finite() {
                return Err(ExperimentError::Diverged { epoch, loss: v });
            }
            g.backward(loss)?;
            let grads = leaves.iter().map(|&v| g.grad(v)).collect::<Result<Vec<_>, _>>()?;
            adam_step(&mut model.as_model_mut().params_mut(), &grads, &mut adam, &tc.adam)?;
        }
        let v = val_loss(&model)?;
        log::debug!("epoch {epoch}: validation BCE {v:.5e}");
        if v < best.0 - tc.min_delta {
            best = (v, model.clone(), adam.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }
    let file = ModelFile {
        model: best.1,
        normalizer: nz.clone(),
        adam: tc.adam,
        adam_state: Some(best.2),
        meta: serde_json::json!({
            "task": "congestion",
            "active_lines": active,
            "active_branches": active.iter().map(|&l| grid.lines()[l].branch).collect::<Vec<_>>(),
            "threshold": cfg.threshold,
        }),
    };

    let z = logits(&file, &samples, &split.test)?;
    let cut = (cfg.threshold / (1.0 - cfg.threshold)).ln();
    let (mut lines, mut correct) = (Vec::new(), 0usize);
    for (k, &l) in active.iter().enumerate() {
        let pred: Vec<bool> = (0..split.test.len()).map(|b| z[(b, k)] > cut).collect();
        let truth: Vec<bool> = split.test.iter().map(|&r| samples.binding[r][l]).collect();
        let (tp, fp, fn_, tn, recall, precision, f1) = classification_metrics(&pred, &truth);
        correct += tp + tn;
        lines.push(LineMetrics { line: l, branch: grid.lines()[l].branch, train_frequency: freq[l], tp, fp, fn_, tn, recall, precision, f1 });
    }
    let macro_avg = |f: fn(&LineMetrics) -> Option<f64>| {
        let v: Vec<f64> = lines.iter().filter_map(f).collect();
        if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 }
    };
    let report = CongestionReport {
        recall: macro_avg(|m| m.recall),
        f1: macro_avg(|m| m.f1),
        accuracy: correct as f64 / (split.test.len() * active.len()) as f64,
        epochs,
        lines,
    };
    Ok(CongestionOutcome { model: file, report, split, seconds: clock.elapsed().as_secs_f64() })
}
