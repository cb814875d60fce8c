use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dataset_grid, split_indices, top_binding_lines, ExperimentError, ModelKind, Samples, Split, TrainConfig};
use crate::case_io::DatasetFile;
use crate::grid_model::GridLinAlg;
use crate::nn::chain::hard_projection;
use crate::nn::loss::{channel, ChainContext};
use crate::nn::{
    adam_step, composite_loss, AdamState, AnyModel, BatchCosts, ChainGrid, FcnnModel, GnnModel, Graph, HeadKind,
    LossConfig, LossTargets, ModelFile, Normalizer,
};

/// Largest batch pushed through the tape when only values are needed.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Test-split metrics. Wall-clock time lives in [`TrainOutcome`] so that the
/// report itself is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub nmse_pi: f64,
    pub std_pi: f64,
    pub nmse_v: Option<f64>,
    pub std_v: Option<f64>,
    /// Injection error of the hard-projected prediction on flexible nodes.
    pub nmse_g: f64,
    pub std_g: f64,
    /// Mean over samples of the per-line relative overload, averaged over lines.
    pub feasibility_violation: f64,
    /// Same quantity for the solver labels themselves.
    pub label_violation: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelFile,
    pub report: EvalReport,
    pub split: Split,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub seconds: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// `‖ŷ − y‖² / ‖y‖²`, or `None` when `y` is identically zero.
fn nmse(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let den: f64 = truth.iter().map(|y| y * y).sum();
    let num: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)).sum();
    (den > 0.0).then(|| num / den)
}

fn relative_overload(p: &[f64], grid: &GridLinAlg) -> f64 {
    let f = grid.flows(p);
    let lines = grid.lines();
    let total: f64 = f.iter().zip(lines).map(|(f, l)| (f.abs() - l.rate).max(0.0) / l.rate).sum();
    total / lines.len().max(1) as f64
}

fn pick<'a, T>(v: &'a [T], rows: &[usize]) -> Vec<&'a T> {
    rows.iter().map(|&r| &v[r]).collect()
}

fn block(v: &[Vec<f64>], rows: &[usize]) -> DMatrix<f64> {
    let n = v[rows[0]].len();
    DMatrix::from_fn(rows.len(), n, |b, i| v[rows[b]][i])
}

fn batch_costs(s: &Samples, rows: &[usize]) -> BatchCosts {
    BatchCosts { a: block(&s.a, rows), b: block(&s.b, rows), p_min: block(&s.p_min, rows), p_max: block(&s.p_max, rows) }
}

/// Physical price predictions, one `N`-vector per requested row.
pub fn predict_prices(model: &ModelFile, samples: &Samples, rows: &[usize]) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let n = samples.n_buses;
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let x = g.leaf(model.normalizer.inputs(&pick(&samples.features, chunk)));
        let (pred, _) = model.model.as_model().forward(&mut g, x)?;
        let pi = channel(&mut g, pred, 0, n)?;
        let phys = model.normalizer.destandardize(g.value(pi), 0);
        out.extend(phys.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()));
    }
    Ok(out)
}

/// Metrics of `model` on the given rows of `samples`.
pub fn evaluate_rows(model: &ModelFile, samples: &Samples, rows: &[usize], grid: &GridLinAlg) -> Result<EvalReport, ExperimentError> {
    if rows.is_empty() {
        return Err(ExperimentError::EmptyTestSet);
    }
    model.expect_buses(grid.n_buses())?;
    let prices = predict_prices(model, samples, rows)?;
    let (mut e_pi, mut e_g, mut viol, mut label_viol) = (Vec::new(), Vec::new(), 0.0, 0.0);
    for (k, &r) in rows.iter().enumerate() {
        let truth: Vec<f64> = samples.prices[r].iter().copied().collect();
        e_pi.extend(nmse(&prices[k], &truth));
        let p_hat: Vec<f64> = (0..samples.n_buses)
            .map(|i| hard_projection(prices[k][i], samples.a[r][i], samples.b[r][i], samples.p_min[r][i], samples.p_max[r][i]))
            .collect();
        let flex: Vec<usize> = (0..samples.n_buses).filter(|&i| samples.p_max[r][i] > samples.p_min[r][i]).collect();
        let ph: Vec<f64> = flex.iter().map(|&i| p_hat[i]).collect();
        let ps: Vec<f64> = flex.iter().map(|&i| samples.p_star[r][i]).collect();
        e_g.extend(nmse(&ph, &ps));
        viol += relative_overload(&p_hat, grid);
        label_viol += relative_overload(&samples.p_star[r], grid);
    }
    let (nmse_pi, std_pi) = mean_std(&e_pi);
    let (nmse_g, std_g) = mean_std(&e_g);
    let k = rows.len() as f64;
    Ok(EvalReport {
        n_samples: rows.len(),
        nmse_pi,
        std_pi,
        nmse_v: None,
        std_v: None,
        nmse_g,
        std_g,
        feasibility_violation: viol / k,
        label_violation: label_viol / k,
        epochs: 0,
    })
}

/// Metrics over every row of a dataset generated on `grid`.
pub fn evaluate(model: &ModelFile, data: &DatasetFile, grid: &GridLinAlg) -> Result<EvalReport, ExperimentError> {
    check_dataset_grid(data, grid)?;
    let features = model.normalizer.feature_names.clone();
    let samples = Samples::from_dataset(data, &features)?;
    let rows: Vec<usize> = (0..samples.len()).collect();
    evaluate_rows(model, &samples, &rows, grid)
}

struct Fit<'a> {
    samples: &'a Samples,
    normalizer: &'a Normalizer,
    chain: ChainGrid,
    loss: LossConfig,
}

impl Fit<'_> {
    fn loss_on(&self, model: &AnyModel, rows: &[usize], g: &mut Graph) -> Result<(crate::nn::Var, Vec<crate::nn::Var>), ExperimentError> {
        let s = self.samples;
        let nz = self.normalizer;
        let x = g.leaf(nz.inputs(&pick(&s.features, rows)));
        let (pred, leaves) = model.as_model().forward(g, x)?;
        let targets = LossTargets {
            pi: nz.label_block(&pick(&s.prices, rows), 0),
            vm: None,
            p: Some(block(&s.p_star, rows)),
        };
        let ctx = ChainContext {
            grid: &self.chain,
            costs: batch_costs(s, rows),
            pi_mean: nz.label_mean_of(0),
            pi_std: nz.label_std_of(0),
            vm_mean: Vec::new(),
            vm_std: Vec::new(),
        };
        let terms = composite_loss(g, pred, &targets, &self.loss, Some(&ctx))?;
        Ok((terms.total, leaves))
    }

    fn mean_loss(&self, model: &AnyModel, rows: &[usize]) -> Result<f64, ExperimentError> {
        let mut total = 0.0;
        for chunk in rows.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let (l, _) = self.loss_on(model, chunk, &mut g)?;
            total += g.scalar(l) * chunk.len() as f64;
        }
        Ok(total / rows.len().max(1) as f64)
    }
}

struct FitResult {
    model: AnyModel,
    adam: AdamState,
    history: Vec<EpochLog>,
    best_epoch: usize,
}

fn fit(fit: &Fit, mut model: AnyModel, split: &Split, cfg: &TrainConfig) -> Result<FitResult, ExperimentError> {
    let shapes: Vec<(usize, usize)> = model.as_model().params().iter().map(|p| p.shape()).collect();
    let mut adam = AdamState::new(&shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let monitor = if split.val.is_empty() { &split.train } else { &split.val };
    let mut best = (fit.mean_loss(&model, monitor)?, model.clone(), adam.clone(), 0usize);
    let mut history = Vec::new();
    let mut order = split.train.clone();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let (loss, leaves) = fit.loss_on(&model, batch, &mut g)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(ExperimentError::Diverged { epoch, loss: value });
            }
            sum += value * batch.len() as f64;
            g.backward(loss)?;
            let grads = leaves.iter().map(|&v| g.grad(v)).collect::<Result<Vec<_>, _>>()?;
            adam_step(&mut model.as_model_mut().params_mut(), &grads, &mut adam, &cfg.adam)?;
        }
        let train_loss = sum / order.len() as f64;
        let val_loss = fit.mean_loss(&model, monitor)?;
        if !val_loss.is_finite() {
            return Err(ExperimentError::Diverged { epoch, loss: val_loss });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5e} val {val_loss:.5e}");
        history.push(EpochLog { epoch, train_loss, val_loss });
        if val_loss < best.0 - cfg.min_delta {
            best = (val_loss, model.clone(), adam.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(FitResult { model: best.1, adam: best.2, history, best_epoch: best.3 })
}

fn resolved_loss(cfg: &TrainConfig, samples: &Samples, rows: &[usize]) -> LossConfig {
    let mut loss = cfg.loss.clone();
    if loss.active_lines.is_none() {
        if let Some(k) = cfg.fr_top_k {
            loss.active_lines = Some(top_binding_lines(samples, rows, k).into_iter().map(|(l, _)| l).collect());
        }
    }
    loss
}

fn prepare(data: &DatasetFile, grid: &GridLinAlg, cfg: &TrainConfig) -> Result<(Samples, Split), ExperimentError> {
    cfg.validate()?;
    check_dataset_grid(data, grid)?;
    let samples = Samples::from_dataset(data, &cfg.features)?;
    let split = split_indices(samples.len(), cfg.train_fraction, cfg.val_fraction, cfg.seed);
    if split.test.is_empty() {
        return Err(ExperimentError::EmptyTestSet);
    }
    if split.train.is_empty() {
        return Err(ExperimentError::BadConfig("the training split is empty".into()));
    }
    Ok((samples, split))
}

fn run(start: ModelFile, samples: &Samples, split: Split, grid: &GridLinAlg, cfg: &TrainConfig) -> Result<TrainOutcome, ExperimentError> {
    let clock = Instant::now();
    let fitter = Fit {
        samples,
        normalizer: &start.normalizer,
        chain: ChainGrid::new(grid),
        loss: resolved_loss(cfg, samples, &split.train),
    };
    let r = fit(&fitter, start.model.clone(), &split, cfg)?;
    let seconds = clock.elapsed().as_secs_f64();
    let model = ModelFile {
        model: r.model,
        normalizer: start.normalizer.clone(),
        adam: cfg.adam,
        adam_state: Some(r.adam),
        meta: serde_json::json!({ "loss": fitter.loss, "seed": cfg.seed }),
    };
    let mut report = evaluate_rows(&model, samples, &split.test, grid)?;
    report.epochs = r.history.len();
    Ok(TrainOutcome { model, report, split, history: r.history, best_epoch: r.best_epoch, seconds })
}

/// Train a fresh model; standardization is fitted on the training rows.
pub fn train(data: &DatasetFile, grid: &GridLinAlg, cfg: &TrainConfig) -> Result<TrainOutcome, ExperimentError> {
    let (samples, split) = prepare(data, grid, cfg)?;
    let nz = Normalizer::fit(
        cfg.features.clone(),
        vec!["pi".into()],
        &pick(&samples.features, &split.train),
        &pick(&samples.prices, &split.train),
    )?;
    let model = match cfg.model {
        ModelKind::Gnn => AnyModel::Gnn(GnnModel::new(grid, &cfg.widths, HeadKind::PerNode(1), cfg.seed)?),
        ModelKind::Fcnn => AnyModel::Fcnn(FcnnModel::new(grid.n_buses(), &cfg.widths, 1, cfg.seed)?),
    };
    let start = ModelFile { model, normalizer: nz, adam: cfg.adam, adam_state: None, meta: serde_json::Value::Null };
    run(start, &samples, split, grid, cfg)
}

/// Continue training from `start`, keeping its standardization.
pub fn train_from(start: &ModelFile, data: &DatasetFile, grid: &GridLinAlg, cfg: &TrainConfig) -> Result<TrainOutcome, ExperimentError> {
    start.expect_buses(grid.n_buses())?;
    let cfg = TrainConfig { features: start.normalizer.feature_names.clone(), widths: start.model.as_model().widths(), ..cfg.clone() };
    let (samples, split) = prepare(data, grid, &cfg)?;
    run(start.clone(), &samples, split, grid, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_anchors() {
        assert_eq!(nmse(&[1.0, 2.0], &[1.0, 2.0]), Some(0.0));
        assert_eq!(nmse(&[0.0, 0.0], &[1.0, -2.0]), Some(1.0));
        assert_eq!(nmse(&[1.0], &[0.0]), None);
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
