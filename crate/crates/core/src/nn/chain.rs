//! Latent-variable chain from predicted prices to injections, angles and
//! line flows, plus the flow-limit penalty built on it.

use std::rc::Rc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tape::{Graph, Var};
use super::NnError;
use crate::grid_model::GridLinAlg;

/// Default sigmoid sharpness for the soft projection (per-unit quantities).
pub const DEFAULT_SHARPNESS: f64 = 100.0;

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Injection that minimizes `a p² + b p − π p` over `[lo, hi]`.
/// Fixed nodes (`lo == hi`) return the bound.
pub fn hard_projection(pi: f64, a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    ((pi - b) / (2.0 * a)).clamp(lo, hi)
}

/// Smooth clamp of `r = (π − b)/(2a)`:
/// `r′ = r + σ(lo − r)(lo − r)` then `p = r′ − σ(r′ − hi)(r′ − hi)`,
/// with `σ(z) = 1/(1 + e^{−kz})`.
pub fn soft_projection(pi: f64, a: f64, b: f64, lo: f64, hi: f64, k: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    let r = (pi - b) / (2.0 * a);
    let d = lo - r;
    let r1 = r + logistic(k * d) * d;
    let e = r1 - hi;
    r1 - logistic(k * e) * e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "sharpness")]
pub enum Projection {
    Hard,
    Soft(f64),
}

/// Per-sample cost and limit data for a batch, all `B×N`.
#[derive(Debug, Clone)]
pub struct BatchCosts {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub p_min: DMatrix<f64>,
    pub p_max: DMatrix<f64>,
}

impl BatchCosts {
    fn flexible(&self) -> DMatrix<f64> {
        self.p_min.zip_map(&self.p_max, |lo, hi| (hi > lo) as u8 as f64)
    }
}

/// Topology constants of the chain.
#[derive(Debug, Clone)]
pub struct ChainGrid {
    /// `Sᵀ`, `N×L`.
    pub isf_t: DMatrix<f64>,
    /// `B⁻¹` with a zero row and column at the reference, `N×N`.
    pub theta_map: DMatrix<f64>,
    /// Incidence `+1` from / `−1` to, `N×L`.
    pub incidence: DMatrix<f64>,
    pub from_sel: DMatrix<f64>,
    pub to_sel: DMatrix<f64>,
    pub y_mag: Vec<f64>,
    pub limits: Vec<f64>,
}

impl ChainGrid {
    pub fn new(grid: &GridLinAlg) -> Self {
        let n = grid.n_buses();
        let nl = grid.n_lines();
        let r = grid.ref_index();
        let inv = grid.b_inv();
        let full = |i: usize| if i < r { Some(i) } else if i > r { Some(i - 1) } else { None };
        let theta_map = DMatrix::from_fn(n, n, |i, j| match (full(i), full(j)) {
            (Some(a), Some(b)) => inv[(a, b)],
            _ => 0.0,
        });
        let mut incidence = DMatrix::zeros(n, nl);
        let mut from_sel = DMatrix::zeros(n, nl);
        let mut to_sel = DMatrix::zeros(n, nl);
        for (l, line) in grid.lines().iter().enumerate() {
            incidence[(line.from, l)] += 1.0;
            incidence[(line.to, l)] -= 1.0;
            from_sel[(line.from, l)] = 1.0;
            to_sel[(line.to, l)] = 1.0;
        }
        ChainGrid {
            isf_t: grid.isf().transpose(),
            theta_map,
            incidence,
            from_sel,
            to_sel,
            y_mag: grid.lines().iter().map(|l| l.y_mag).collect(),
            limits: grid.lines().iter().map(|l| l.rate).collect(),
        }
    }

    pub fn n_lines(&self) -> usize {
        self.limits.len()
    }
}

/// `p̂` from physical prices `pi` (`B×N`).
pub fn project(g: &mut Graph, pi: Var, costs: &BatchCosts, mode: Projection) -> Result<Var, NnError> {
    let shape = g.shape(pi);
    if costs.a.shape() != shape {
        return Err(NnError::ShapeMismatch(format!("prices {:?} vs costs {:?}", shape, costs.a.shape())));
    }
    let flex = costs.flexible();
    // fixed nodes get a = 1/2, b = 0 so r stays finite; their output is replaced below
    let inv2a = DMatrix::from_fn(shape.0, shape.1, |r, c| if flex[(r, c)] > 0.0 { 0.5 / costs.a[(r, c)] } else { 1.0 });
    let b = costs.b.component_mul(&flex);
    let bv = g.leaf(b);
    let shifted = g.sub(pi, bv)?;
    let inv = g.leaf(inv2a);
    let r = g.mul(shifted, inv)?;
    match mode {
        Projection::Hard => g.clamp(r, Rc::new(costs.p_min.clone()), Rc::new(costs.p_max.clone())),
        Projection::Soft(k) => {
            let lo = g.leaf(costs.p_min.clone());
            let hi = g.leaf(costs.p_max.clone());
            let d = g.sub(lo, r)?;
            let sd = g.sigmoid(d, k);
            let t = g.mul(sd, d)?;
            let r1 = g.add(r, t)?;
            let e = g.sub(r1, hi)?;
            let se = g.sigmoid(e, k);
            let t2 = g.mul(se, e)?;
            let soft = g.sub(r1, t2)?;
            let fm = g.leaf(flex.clone());
            let kept = g.mul(soft, fm)?;
            let fixed = g.leaf(costs.p_min.zip_map(&flex, |p, f| p * (1.0 - f)));
            g.add(kept, fixed)
        }
    }
}

pub struct DcChain {
    pub p: Var,
    pub f: Var,
}

/// `π̂ → p̂ → f̂ = S p̂` (all `B×·`).
pub fn latent_chain_dc(g: &mut Graph, pi: Var, cg: &ChainGrid, costs: &BatchCosts, mode: Projection) -> Result<DcChain, NnError> {
    let p = project(g, pi, costs, mode)?;
    let st = g.leaf(cg.isf_t.clone());
    let f = g.matmul(p, st)?;
    Ok(DcChain { p, f })
}

pub struct AcChain {
    pub p: Var,
    pub theta: Var,
    pub s_from: Var,
    pub s_to: Var,
}

/// `π̂ → p̂ → θ̂ = B⁻¹p̂ → ŝ` with the apparent-flow magnitude in both directions.
pub fn latent_chain_ac(
    g: &mut Graph,
    pi: Var,
    vm: Var,
    cg: &ChainGrid,
    costs: &BatchCosts,
    mode: Projection,
) -> Result<AcChain, NnError> {
    let p = project(g, pi, costs, mode)?;
    if g.shape(vm) != g.shape(p) {
        return Err(NnError::ShapeMismatch(format!("|v| {:?} vs p {:?}", g.shape(vm), g.shape(p))));
    }
    let tm = g.leaf(cg.theta_map.clone());
    let theta = g.matmul(p, tm)?;
    let (c, s) = (g.cos(theta), g.sin(theta));
    let vc = g.mul(vm, c)?;
    let vs = g.mul(vm, s)?;
    let inc = g.leaf(cg.incidence.clone());
    let re = g.matmul(vc, inc)?;
    let im = g.matmul(vs, inc)?;
    let (re2, im2) = (g.square(re), g.square(im));
    let m2 = g.add(re2, im2)?;
    let diff = g.sqrt(m2);
    let batch = g.shape(p).0;
    let y = g.leaf(DMatrix::from_fn(batch, cg.n_lines(), |_, l| cg.y_mag[l]));
    let dy = g.mul(diff, y)?;
    let fs = g.leaf(cg.from_sel.clone());
    let ts = g.leaf(cg.to_sel.clone());
    let vf = g.matmul(vm, fs)?;
    let vt = g.matmul(vm, ts)?;
    let s_from = g.mul(dy, vf)?;
    let s_to = g.mul(dy, vt)?;
    Ok(AcChain { p, theta, s_from, s_to })
}

/// Hinge on `flow − limit`: exact, or `z·σ(kz)` when `smooth = Some(k)`.
fn hinge(g: &mut Graph, z: Var, smooth: Option<f64>) -> Result<Var, NnError> {
    match smooth {
        None => Ok(g.relu(z)),
        Some(k) => {
            let s = g.sigmoid(z, k);
            g.mul(z, s)
        }
    }
}

fn select(g: &mut Graph, v: Var, active: &[usize], n_lines: usize) -> Result<Var, NnError> {
    let sel = DMatrix::from_fn(n_lines, active.len(), |l, k| (active[k] == l) as u8 as f64);
    let s = g.leaf(sel);
    g.matmul(v, s)
}

/// Flow-limit penalty summed over active lines, averaged over the batch.
///
/// Each entry of `flows` is a `B×L` matrix. A signed flow (dc) is penalized
/// in both directions via `±f − f̄`; magnitudes (ac `ŝ`) pass one entry per
/// direction with `signed = false`.
pub fn fr_penalty(
    g: &mut Graph,
    flows: &[Var],
    limits: &[f64],
    active: &[usize],
    signed: bool,
    smooth: Option<f64>,
) -> Result<Var, NnError> {
    let mut terms = Vec::new();
    for &f in flows {
        let (batch, nl) = g.shape(f);
        if nl != limits.len() {
            return Err(NnError::ShapeMismatch(format!("{nl} flows for {} limits", limits.len())));
        }
        let fa = select(g, f, active, nl)?;
        let lim = g.leaf(DMatrix::from_fn(batch, active.len(), |_, k| limits[active[k]]));
        let over = g.sub(fa, lim)?;
        terms.push(hinge(g, over, smooth)?);
        if signed {
            let neg = g.scale(fa, -1.0);
            let under = g.sub(neg, lim)?;
            terms.push(hinge(g, under, smooth)?);
        }
    }
    let batch = g.shape(flows[0]).0.max(1) as f64;
    let mut total = g.sum(terms[0]);
    for &t in &terms[1..] {
        let s = g.sum(t);
        total = g.add(total, s)?;
    }
    Ok(g.scale(total, 1.0 / batch))
}

/// Plain ℓ1 hinge over one direction of flows for the selected lines.
pub fn fr_penalty_value(flows: &[f64], limits: &[f64], active: &[usize]) -> f64 {
    active.iter().map(|&l| (flows[l] - limits[l]).max(0.0)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_projection_cases() {
        assert_eq!(hard_projection(4.0, 1.0, 0.0, 0.0, 3.0), 2.0);
        assert_eq!(hard_projection(10.0, 1.0, 0.0, 0.0, 3.0), 3.0);
        assert_eq!(hard_projection(-10.0, 1.0, 0.0, 0.0, 3.0), 0.0);
        assert_eq!(hard_projection(7.0, 0.0, 0.0, -1.5, -1.5), -1.5);
    }

    #[test]
    fn soft_projection_saturates_and_converges() {
        let p = soft_projection(4.0, 1.0, 0.0, 0.0, 3.0, 100.0);
        assert!((p - 2.0).abs() < 1e-12);
        // at r = p̄ the upper sigmoid sits at ½ and the blend returns p̄
        let at = soft_projection(6.0, 1.0, 0.0, 0.0, 3.0, 100.0);
        let r1 = 3.0 + logistic(-300.0) * -3.0;
        assert!((at - (r1 - logistic(100.0 * (r1 - 3.0)) * (r1 - 3.0))).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in [10.0, 20.0, 40.0, 80.0, 160.0, 320.0] {
            let gap = (0..=600)
                .map(|i| -3.0 + i as f64 * 0.015)
                .map(|r| (soft_projection(2.0 * r, 1.0, 0.0, 0.0, 3.0, k) - hard_projection(2.0 * r, 1.0, 0.0, 0.0, 3.0)).abs())
                .fold(0.0, f64::max);
            assert!(gap < prev);
            prev = gap;
        }
    }

    #[test]
    fn penalty_values() {
        assert_eq!(fr_penalty_value(&[0.2, 0.3], &[1.0, 1.0], &[0, 1]), 0.0);
        let v = fr_penalty_value(&[1.1, 2.3, 0.0], &[1.0, 2.0, 1.0], &[0, 1, 2]);
        assert!((v - 0.4).abs() < 1e-12);
        let mut g = Graph::new();
        let f = g.leaf(DMatrix::from_row_slice(1, 3, &[1.1, -2.3, 0.0]));
        let r = fr_penalty(&mut g, &[f], &[1.0, 2.0, 1.0], &[0, 1, 2], true, None).unwrap();
        assert!((g.scalar(r) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn smoothed_hinge_approaches_hinge() {
        let mut worst = 0.0f64;
        for i in 0..=2000 {
            let z = -1.0 + i as f64 * 1e-3;
            let mut g = Graph::new();
            let v = g.leaf(DMatrix::from_element(1, 1, z + 1.0));
            let r = fr_penalty(&mut g, &[v], &[1.0], &[0], false, Some(1e4)).unwrap();
            worst = worst.max((g.scalar(r) - z.max(0.0)).abs());
        }
        assert!(worst < 1e-3);
    }
}
