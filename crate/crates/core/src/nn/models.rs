//! Masked bilinear GNN and fully connected baseline.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Graph, Var};
use super::NnError;
use crate::grid_model::{GnnMask, GridLinAlg};

/// Output layer of a GNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "outputs")]
pub enum HeadKind {
    /// Shared linear map from each node's embedding to `c` channels.
    PerNode(usize),
    /// Dense map from the flattened embeddings to `k` outputs per sample.
    Dense(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayer {
    /// Filter values on the mask support, `1×nnz`, in mask entry order.
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    mask: GnnMask,
    entries: Arc<[(usize, usize)]>,
    pub layers: Vec<GnnLayer>,
    pub head_kind: HeadKind,
    pub head_w: DMatrix<f64>,
    pub head_b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnnModel {
    n: usize,
    widths: Vec<usize>,
    out_channels: usize,
    pub layers: Vec<DenseLayer>,
    pub head: DenseLayer,
}

/// Common interface used by training, Adam and checkpoints.
pub trait Model {
    fn n_buses(&self) -> usize;
    /// Layer widths `d_0..d_T`.
    fn widths(&self) -> Vec<usize>;
    fn params(&self) -> Vec<&DMatrix<f64>>;
    fn params_mut(&mut self) -> Vec<&mut DMatrix<f64>>;
    fn param_names(&self) -> Vec<String>;
    /// Forward pass for a `(B·N)×d_0` node-major batch. Returns the output and
    /// the parameter leaves in [`Model::params`] order.
    fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<Var>), NnError>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

fn check_widths(widths: &[usize]) -> Result<(), NnError> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(NnError::ShapeMismatch(format!("invalid width chain {widths:?}")));
    }
    Ok(())
}

fn check_input(g: &Graph, x: Var, n: usize, d0: usize) -> Result<usize, NnError> {
    let (r, c) = g.shape(x);
    if c != d0 || r % n != 0 || r == 0 {
        return Err(NnError::ShapeMismatch(format!("input {:?} for N = {n}, d0 = {d0}", (r, c))));
    }
    Ok(r / n)
}

/// `D^{-1/2} B D^{-1/2}` of the full B-bus, read on the mask support.
fn normalized_bbus(grid: &GridLinAlg, mask: &GnnMask) -> Vec<f64> {
    let n = grid.n_buses();
    let mut bb = DMatrix::<f64>::zeros(n, n);
    for l in grid.lines() {
        let y = 1.0 / l.x;
        bb[(l.from, l.from)] += y;
        bb[(l.to, l.to)] += y;
        bb[(l.from, l.to)] -= y;
        bb[(l.to, l.from)] -= y;
    }
    mask.entries()
        .iter()
        .map(|&(i, j)| {
            let d = (bb[(i, i)] * bb[(j, j)]).sqrt();
            if d > 0.0 {
                bb[(i, j)] / d
            } else {
                (i == j) as u8 as f64
            }
        })
        .collect()
}

impl GnnModel {
    /// Filters start from the normalized B-bus of `grid`; feature filters,
    /// biases and the head are uniform in `±1/√d_in`.
    pub fn new(grid: &GridLinAlg, widths: &[usize], head: HeadKind, seed: u64) -> Result<Self, NnError> {
        check_widths(widths)?;
        let mask = grid.mask().clone();
        let w0 = normalized_bbus(grid, &mask);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|p| {
                let bound = 1.0 / (p[0] as f64).sqrt();
                GnnLayer {
                    w: DMatrix::from_row_slice(1, w0.len(), &w0),
                    h: uniform(&mut rng, p[0], p[1], bound),
                    b: uniform(&mut rng, 1, p[1], bound),
                }
            })
            .collect();
        let dt = *widths.last().expect("checked");
        let (rows, cols) = match head {
            HeadKind::PerNode(c) => (dt, c),
            HeadKind::Dense(k) => (grid.n_buses() * dt, k),
        };
        let bound = 1.0 / (rows as f64).sqrt();
        let head_w = uniform(&mut rng, rows, cols, bound);
        let head_b = uniform(&mut rng, 1, cols, bound);
        Ok(GnnModel { entries: mask.entries().into(), mask, layers, head_kind: head, head_w, head_b })
    }

    /// Rebuild from stored arrays.
    pub fn from_parts(
        mask: GnnMask,
        layers: Vec<GnnLayer>,
        head_kind: HeadKind,
        head_w: DMatrix<f64>,
        head_b: DMatrix<f64>,
    ) -> Result<Self, NnError> {
        let nnz = mask.nnz();
        for (t, l) in layers.iter().enumerate() {
            if l.w.shape() != (1, nnz) || l.b.shape() != (1, l.h.ncols()) {
                return Err(NnError::ShapeMismatch(format!("layer {t} does not match the mask")));
            }
            if t > 0 && layers[t - 1].h.ncols() != l.h.nrows() {
                return Err(NnError::ShapeMismatch(format!("layer {t} width chain broken")));
            }
        }
        Ok(GnnModel { entries: mask.entries().into(), mask, layers, head_kind, head_w, head_b })
    }

    pub fn mask(&self) -> &GnnMask {
        &self.mask
    }

    /// Dense `N×N` view of layer `t`'s graph filter.
    pub fn dense_filter(&self, t: usize) -> DMatrix<f64> {
        let n = self.mask.n();
        let mut w = DMatrix::zeros(n, n);
        for (k, &(i, j)) in self.entries.iter().enumerate() {
            w[(i, j)] = self.layers[t].w[(0, k)];
        }
        w
    }

    /// Drop the filter entries of removed adjacencies and shrink the mask.
    pub fn apply_mask(&self, new_mask: &GnnMask) -> Result<GnnModel, NnError> {
        if new_mask.n() != self.mask.n() || new_mask.entries().iter().any(|&(i, j)| !self.mask.contains(i, j)) {
            return Err(NnError::ShapeMismatch("new mask is not a subset of the current one".into()));
        }
        let keep: Vec<usize> = new_mask
            .entries()
            .iter()
            .map(|e| self.entries.binary_search(e).expect("subset checked"))
            .collect();
        let layers = self
            .layers
            .iter()
            .map(|l| GnnLayer {
                w: DMatrix::from_iterator(1, keep.len(), keep.iter().map(|&k| l.w[(0, k)])),
                h: l.h.clone(),
                b: l.b.clone(),
            })
            .collect();
        GnnModel::from_parts(new_mask.clone(), layers, self.head_kind, self.head_w.clone(), self.head_b.clone())
    }

    /// Graph-filter, feature-filter and bias counts of layer `t`.
    pub fn layer_param_count(&self, t: usize) -> usize {
        let l = &self.layers[t];
        l.w.len() + l.h.len() + l.b.len()
    }

    /// Count with every graph filter stored as a dense `N×N` matrix.
    pub fn dense_equivalent_param_count(&self) -> usize {
        let n = self.mask.n();
        self.param_count() + self.layers.len() * (n * n - self.mask.nnz())
    }
}

impl Model for GnnModel {
    fn n_buses(&self) -> usize {
        self.mask.n()
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].h.nrows()];
        w.extend(self.layers.iter().map(|l| l.h.ncols()));
        w
    }

    fn params(&self) -> Vec<&DMatrix<f64>> {
        let mut p: Vec<&DMatrix<f64>> = self.layers.iter().flat_map(|l| [&l.w, &l.h, &l.b]).collect();
        p.extend([&self.head_w, &self.head_b]);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut p: Vec<&mut DMatrix<f64>> = self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.h, &mut l.b]).collect();
        p.extend([&mut self.head_w, &mut self.head_b]);
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.layers.len())
            .flat_map(|t| [format!("layer{t}.w"), format!("layer{t}.h"), format!("layer{t}.b")])
            .collect();
        names.extend(["head.w".to_string(), "head.b".to_string()]);
        names
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<Var>), NnError> {
        let n = self.mask.n();
        let batch = check_input(g, x, n, self.layers[0].h.nrows())?;
        let mut leaves = Vec::new();
        let mut h = x;
        for l in &self.layers {
            let (w, hm, b) = (g.leaf(l.w.clone()), g.leaf(l.h.clone()), g.leaf(l.b.clone()));
            leaves.extend([w, hm, b]);
            let mixed = g.graph_mix(h, w, n, self.entries.clone())?;
            let lin = g.matmul(mixed, hm)?;
            let lin = g.add_row(lin, b)?;
            h = g.relu(lin);
        }
        let (hw, hb) = (g.leaf(self.head_w.clone()), g.leaf(self.head_b.clone()));
        leaves.extend([hw, hb]);
        let out = match self.head_kind {
            HeadKind::PerNode(_) => {
                let o = g.matmul(h, hw)?;
                g.add_row(o, hb)?
            }
            HeadKind::Dense(_) => {
                let dt = g.shape(h).1;
                let flat = g.reshape(h, batch, n * dt)?;
                let o = g.matmul(flat, hw)?;
                g.add_row(o, hb)?
            }
        };
        Ok((out, leaves))
    }
}

impl FcnnModel {
    /// Hidden layers map `N·d_t → N·d_{t+1}`; the head maps `N·d_T → N·c`.
    pub fn new(n: usize, widths: &[usize], out_channels: usize, seed: u64) -> Result<Self, NnError> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = |i: usize, o: usize| {
            let bound = 1.0 / (i as f64).sqrt();
            DenseLayer { w: uniform(&mut rng, i, o, bound), b: uniform(&mut rng, 1, o, bound) }
        };
        let layers = widths.windows(2).map(|p| dense(n * p[0], n * p[1])).collect();
        let head = dense(n * widths[widths.len() - 1], n * out_channels);
        Ok(FcnnModel { n, widths: widths.to_vec(), out_channels, layers, head })
    }

    pub fn from_parts(n: usize, widths: Vec<usize>, out_channels: usize, layers: Vec<DenseLayer>, head: DenseLayer) -> Result<Self, NnError> {
        check_widths(&widths)?;
        let ok = layers.len() == widths.len() - 1
            && layers.iter().zip(widths.windows(2)).all(|(l, p)| l.w.shape() == (n * p[0], n * p[1]) && l.b.shape() == (1, n * p[1]))
            && head.w.shape() == (n * widths[widths.len() - 1], n * out_channels);
        if !ok {
            return Err(NnError::ShapeMismatch("dense layer shapes do not match the width chain".into()));
        }
        Ok(FcnnModel { n, widths, out_channels, layers, head })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn layer_param_count(&self, t: usize) -> usize {
        self.layers[t].w.len() + self.layers[t].b.len()
    }
}

impl Model for FcnnModel {
    fn n_buses(&self) -> usize {
        self.n
    }

    fn widths(&self) -> Vec<usize> {
        self.widths.clone()
    }

    fn params(&self) -> Vec<&DMatrix<f64>> {
        let mut p: Vec<&DMatrix<f64>> = self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect();
        p.extend([&self.head.w, &self.head.b]);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut p: Vec<&mut DMatrix<f64>> = self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect();
        p.extend([&mut self.head.w, &mut self.head.b]);
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            (0..self.layers.len()).flat_map(|t| [format!("layer{t}.w"), format!("layer{t}.b")]).collect();
        names.extend(["head.w".to_string(), "head.b".to_string()]);
        names
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<Var>), NnError> {
        let n = self.n;
        let batch = check_input(g, x, n, self.widths[0])?;
        let mut leaves = Vec::new();
        let mut h = g.reshape(x, batch, n * self.widths[0])?;
        for l in &self.layers {
            let (w, b) = (g.leaf(l.w.clone()), g.leaf(l.b.clone()));
            leaves.extend([w, b]);
            let lin = g.matmul(h, w)?;
            let lin = g.add_row(lin, b)?;
            h = g.relu(lin);
        }
        let (w, b) = (g.leaf(self.head.w.clone()), g.leaf(self.head.b.clone()));
        leaves.extend([w, b]);
        let o = g.matmul(h, w)?;
        let o = g.add_row(o, b)?;
        let out = g.reshape(o, batch * n, self.out_channels)?;
        Ok((out, leaves))
    }
}

/// Either model family, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Gnn(GnnModel),
    Fcnn(FcnnModel),
}

impl AnyModel {
    pub fn as_model(&self) -> &dyn Model {
        match self {
            AnyModel::Gnn(m) => m,
            AnyModel::Fcnn(m) => m,
        }
    }

    pub fn as_model_mut(&mut self) -> &mut dyn Model {
        match self {
            AnyModel::Gnn(m) => m,
            AnyModel::Fcnn(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Gnn(_) => "gnn",
            AnyModel::Fcnn(_) => "fcnn",
        }
    }
}
