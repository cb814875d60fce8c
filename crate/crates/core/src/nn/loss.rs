//! Composite training loss: label error plus the flow-limit penalty.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::chain::{fr_penalty, latent_chain_ac, latent_chain_dc, BatchCosts, ChainGrid, Projection, DEFAULT_SHARPNESS};
use super::tape::{Graph, Var};
use super::NnError;

/// Temperature of the smooth max used for the ℓ∞ price term.
pub const LINF_TEMPERATURE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrMode {
    None,
    Dc,
    Ac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gamma_pi: f64,
    pub gamma_v: f64,
    pub gamma_fr: f64,
    /// Weight on the squared injection error of the chain output.
    pub gamma_p: f64,
    pub use_linf_pi: bool,
    pub fr_mode: FrMode,
    /// Lines penalized by the flow term; `None` means every line.
    pub active_lines: Option<Vec<usize>>,
    /// Sigmoid sharpness of the soft projection during training.
    pub sharpness: f64,
    /// Replace the flow hinge by `z·σ(kz)` with this `k`.
    pub fr_smooth: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma_pi: 1.0,
            gamma_v: 1.0,
            gamma_fr: 1e-2,
            gamma_p: 0.0,
            use_linf_pi: false,
            fr_mode: FrMode::None,
            active_lines: None,
            sharpness: DEFAULT_SHARPNESS,
            fr_smooth: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let w = [self.gamma_pi, self.gamma_v, self.gamma_fr, self.gamma_p, self.sharpness];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || self.sharpness == 0.0 {
            return Err(NnError::ShapeMismatch(format!("loss weights must be finite and non-negative: {w:?}")));
        }
        Ok(())
    }

    fn needs_chain(&self) -> bool {
        (self.fr_mode != FrMode::None && self.gamma_fr > 0.0) || self.gamma_p > 0.0
    }
}

/// Targets of one batch of `B` samples. Label matrices are `B×N` and
/// standardized; `p` is in physical units.
#[derive(Debug, Clone)]
pub struct LossTargets {
    pub pi: DMatrix<f64>,
    pub vm: Option<DMatrix<f64>>,
    pub p: Option<DMatrix<f64>>,
}

/// What the chain needs beyond the targets: topology, the batch's cost data
/// and the per-node statistics that undo label standardization.
#[derive(Debug, Clone)]
pub struct ChainContext<'a> {
    pub grid: &'a ChainGrid,
    pub costs: BatchCosts,
    pub pi_mean: Vec<f64>,
    pub pi_std: Vec<f64>,
    pub vm_mean: Vec<f64>,
    pub vm_std: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub label: Var,
    pub chain: Option<Var>,
}

/// Column `c` of a node-major `(B·N)×C` prediction as a `B×N` block.
pub fn channel(g: &mut Graph, pred: Var, c: usize, n: usize) -> Result<Var, NnError> {
    let (rows, cols) = g.shape(pred);
    if c >= cols {
        return Err(NnError::MissingChannel(format!("prediction has {cols} channels, wanted index {c}")));
    }
    if rows % n != 0 {
        return Err(NnError::ShapeMismatch(format!("{rows} rows is not a multiple of N = {n}")));
    }
    let col = g.columns(pred, c, 1)?;
    g.reshape(col, rows / n, n)
}

fn destandardize(g: &mut Graph, z: Var, mean: &[f64], std: &[f64]) -> Result<Var, NnError> {
    let (b, n) = g.shape(z);
    if mean.len() != n || std.len() != n {
        return Err(NnError::ShapeMismatch(format!("{} statistics for {n} nodes", mean.len())));
    }
    let s = g.leaf(DMatrix::from_fn(b, n, |_, j| std[j]));
    let m = g.leaf(DMatrix::from_fn(b, n, |_, j| mean[j]));
    let scaled = g.mul(z, s)?;
    g.add(scaled, m)
}

fn mean_row_sum_sq(g: &mut Graph, e: Var) -> Var {
    let b = g.shape(e).0.max(1) as f64;
    let sq = g.square(e);
    let s = g.sum(sq);
    g.scale(s, 1.0 / b)
}

/// Loss of a `(B·N)×C` prediction whose channel 0 is the price and channel 1,
/// when present, the voltage magnitude.
pub fn composite_loss(
    g: &mut Graph,
    pred: Var,
    targets: &LossTargets,
    cfg: &LossConfig,
    ctx: Option<&ChainContext>,
) -> Result<LossTerms, NnError> {
    let (batch, n) = targets.pi.shape();
    let pi_hat = channel(g, pred, 0, n)?;
    if g.shape(pi_hat) != (batch, n) {
        return Err(NnError::ShapeMismatch(format!("prediction {:?} vs targets {:?}", g.shape(pi_hat), (batch, n))));
    }
    let pi_t = g.leaf(targets.pi.clone());
    let e = g.sub(pi_hat, pi_t)?;
    let sq = mean_row_sum_sq(g, e);
    let mut label = g.scale(sq, cfg.gamma_pi);
    if cfg.use_linf_pi {
        let a = g.abs(e);
        let m = g.row_logsumexp(a, LINF_TEMPERATURE);
        let mm = g.mean(m);
        let w = g.scale(mm, cfg.gamma_pi);
        label = g.add(label, w)?;
    }

    let wants_v = cfg.gamma_v > 0.0 && (targets.vm.is_some() || cfg.fr_mode == FrMode::Ac);
    let vm_hat = if wants_v || cfg.fr_mode == FrMode::Ac { Some(channel(g, pred, 1, n)?) } else { None };
    if cfg.gamma_v > 0.0 {
        if let (Some(v), Some(t)) = (vm_hat, &targets.vm) {
            let vt = g.leaf(t.clone());
            let ev = g.sub(v, vt)?;
            let s = mean_row_sum_sq(g, ev);
            let w = g.scale(s, cfg.gamma_v);
            label = g.add(label, w)?;
        } else if vm_hat.is_some() {
            return Err(NnError::MissingChannel("voltage magnitude targets".into()));
        }
    }

    if !cfg.needs_chain() {
        return Ok(LossTerms { total: label, label, chain: None });
    }
    let ctx = ctx.ok_or_else(|| NnError::MissingChannel("chain context for the flow/injection terms".into()))?;
    let mode = Projection::Soft(cfg.sharpness);
    let pi_phys = destandardize(g, pi_hat, &ctx.pi_mean, &ctx.pi_std)?;
    let all: Vec<usize>;
    let active = match &cfg.active_lines {
        Some(a) => a.as_slice(),
        None => {
            all = (0..ctx.grid.n_lines()).collect();
            &all
        }
    };
    let (p_hat, fr) = match cfg.fr_mode {
        FrMode::Ac => {
            let vm = vm_hat.ok_or_else(|| NnError::MissingChannel("voltage magnitude prediction".into()))?;
            let vm_phys = destandardize(g, vm, &ctx.vm_mean, &ctx.vm_std)?;
            let ch = latent_chain_ac(g, pi_phys, vm_phys, ctx.grid, &ctx.costs, mode)?;
            let r = fr_penalty(g, &[ch.s_from, ch.s_to], &ctx.grid.limits, active, false, cfg.fr_smooth)?;
            (ch.p, Some(r))
        }
        FrMode::Dc => {
            let ch = latent_chain_dc(g, pi_phys, ctx.grid, &ctx.costs, mode)?;
            let r = fr_penalty(g, &[ch.f], &ctx.grid.limits, active, true, cfg.fr_smooth)?;
            (ch.p, Some(r))
        }
        FrMode::None => (super::chain::project(g, pi_phys, &ctx.costs, mode)?, None),
    };
    let mut chain_term = None;
    let mut total = label;
    if let Some(r) = fr.filter(|_| cfg.gamma_fr > 0.0) {
        let w = g.scale(r, cfg.gamma_fr);
        total = g.add(total, w)?;
        chain_term = Some(w);
    }
    if cfg.gamma_p > 0.0 {
        let p = targets.p.as_ref().ok_or_else(|| NnError::MissingChannel("injection targets".into()))?;
        let pt = g.leaf(p.clone());
        let ep = g.sub(p_hat, pt)?;
        let s = mean_row_sum_sq(g, ep);
        let w = g.scale(s, cfg.gamma_p);
        total = g.add(total, w)?;
        chain_term = Some(match chain_term {
            Some(c) => g.add(c, w)?,
            None => w,
        });
    }
    Ok(LossTerms { total, label, chain: chain_term })
}
