#![allow(dead_code)]

use gridflow::case_io::{load_case, GridCase};
use gridflow::grid_model::{build_linalg, GridLinAlg, Line};
use gridflow::nn::chain::ChainGrid;
use gridflow::nn::loss::ChainContext;
use gridflow::nn::{composite_loss, BatchCosts, FrMode, GnnModel, Graph, HeadKind, LossConfig, LossTargets, Model};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn case(n: usize) -> GridCase {
    load_case(data_path(&format!("pglib_opf_case{n}_ieee.m"))).unwrap()
}

pub fn grid(n: usize) -> GridLinAlg {
    build_linalg(&case(n)).unwrap()
}

pub fn line(branch: usize, from: usize, to: usize, x: f64, rate: f64) -> Line {
    Line { branch, from, to, x, y_mag: 1.0 / x, rate }
}

/// Triangle 0-1-2 with a pendant bus 3 hanging off bus 2, so `(0, 3)`,
/// `(1, 3)` are outside the filter support.
pub fn fixture_grid() -> GridLinAlg {
    GridLinAlg::from_lines(
        vec![1, 2, 3, 4],
        0,
        vec![line(0, 0, 1, 0.5, 0.2), line(1, 1, 2, 0.25, 0.1), line(2, 0, 2, 0.4, 0.3), line(3, 2, 3, 0.3, 0.15)],
    )
    .unwrap()
}

pub struct GradientFixture {
    pub grid: GridLinAlg,
    pub chain: ChainGrid,
    pub model: GnnModel,
    pub x: DMatrix<f64>,
    pub targets: LossTargets,
    pub costs: BatchCosts,
    pub cfg: LossConfig,
    pub stats: [Vec<f64>; 4],
}

impl GradientFixture {
    /// Full GNN with price and voltage heads under every loss term, the ac
    /// flow penalty included.
    pub fn new(seed: u64) -> Self {
        let grid = fixture_grid();
        let n = grid.n_buses();
        let batch = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let model = GnnModel::new(&grid, &[4, 5, 3], HeadKind::PerNode(2), seed).unwrap();
        let x = DMatrix::from_fn(batch * n, 4, |_, _| u(-1.0, 1.0));
        let targets = LossTargets {
            pi: DMatrix::from_fn(batch, n, |_, _| u(-1.0, 1.0)),
            vm: Some(DMatrix::from_fn(batch, n, |_, _| u(-1.0, 1.0))),
            p: Some(DMatrix::from_fn(batch, n, |_, _| u(-0.5, 0.5))),
        };
        // buses 0 and 1 are flexible, 2 and 3 are fixed loads
        let flex = [true, true, false, false];
        let mut a = DMatrix::zeros(batch, n);
        let mut b = DMatrix::zeros(batch, n);
        let mut lo = DMatrix::zeros(batch, n);
        let mut hi = DMatrix::zeros(batch, n);
        for r in 0..batch {
            for i in 0..n {
                if flex[i] {
                    a[(r, i)] = u(0.5, 2.0);
                    b[(r, i)] = u(0.0, 1.0);
                    lo[(r, i)] = 0.0;
                    hi[(r, i)] = u(0.6, 1.2);
                } else {
                    let load = -u(0.2, 0.5);
                    lo[(r, i)] = load;
                    hi[(r, i)] = load;
                }
            }
        }
        let costs = BatchCosts { a, b, p_min: lo, p_max: hi };
        let stats = [vec![2.0, 2.5, 1.5, 2.2], vec![0.8, 1.1, 0.9, 1.3], vec![1.0, 1.01, 0.99, 1.02], vec![0.02, 0.03, 0.02, 0.025]];
        let cfg = LossConfig {
            gamma_pi: 1.0,
            gamma_v: 0.7,
            gamma_fr: 2.0,
            gamma_p: 0.3,
            use_linf_pi: true,
            fr_mode: FrMode::Ac,
            active_lines: None,
            sharpness: 10.0,
            fr_smooth: Some(20.0),
        };
        GradientFixture { chain: ChainGrid::new(&grid), grid, model, x, targets, costs, cfg, stats }
    }

    fn ctx(&self) -> ChainContext<'_> {
        let [pm, ps, vm, vs] = self.stats.clone();
        ChainContext { grid: &self.chain, costs: self.costs.clone(), pi_mean: pm, pi_std: ps, vm_mean: vm, vm_std: vs }
    }

    /// Loss value, its chain part and the tape gradient of every parameter.
    pub fn evaluate(&self, model: &GnnModel) -> (f64, f64, Vec<DMatrix<f64>>) {
        let mut g = Graph::new();
        let x = g.leaf(self.x.clone());
        let (pred, leaves) = model.forward(&mut g, x).unwrap();
        let terms = composite_loss(&mut g, pred, &self.targets, &self.cfg, Some(&self.ctx())).unwrap();
        g.backward(terms.total).unwrap();
        let chain = terms.chain.map_or(0.0, |c| g.scalar(c));
        (g.scalar(terms.total), chain, leaves.iter().map(|v| g.grad(*v).unwrap()).collect())
    }

    pub fn loss(&self, model: &GnnModel) -> f64 {
        let mut g = Graph::new();
        let x = g.leaf(self.x.clone());
        let (pred, _) = model.forward(&mut g, x).unwrap();
        let terms = composite_loss(&mut g, pred, &self.targets, &self.cfg, Some(&self.ctx())).unwrap();
        g.scalar(terms.total)
    }
}

#[derive(Debug)]
pub struct GradientCheck {
    pub checked: usize,
    pub failures: Vec<String>,
    pub worst_ratio: f64,
    pub chain_value: f64,
}

/// Central differences on every scalar parameter against the tape gradient,
/// accepted within `max(1e-4 · scale, 1e-7)`.
pub fn check_gradients(fx: &GradientFixture) -> GradientCheck {
    let (_, chain_value, grads) = fx.evaluate(&fx.model);
    let names = fx.model.param_names();
    let eps = 1e-6;
    let mut out = GradientCheck { checked: 0, failures: Vec::new(), worst_ratio: 0.0, chain_value };
    for (k, grad) in grads.iter().enumerate() {
        for idx in 0..grad.len() {
            let mut plus = fx.model.clone();
            plus.params_mut()[k][idx] += eps;
            let mut minus = fx.model.clone();
            minus.params_mut()[k][idx] -= eps;
            let fd = (fx.loss(&plus) - fx.loss(&minus)) / (2.0 * eps);
            let ad = grad[idx];
            let tol = (1e-4 * fd.abs().max(ad.abs())).max(1e-7);
            let err = (fd - ad).abs();
            out.worst_ratio = out.worst_ratio.max(err / tol);
            out.checked += 1;
            if err > tol {
                out.failures.push(format!("{}[{idx}]: tape {ad:.6e} vs fd {fd:.6e}", names[k]));
            }
        }
    }
    out
}

/// Dense `N×N` image of a `1×nnz` filter gradient.
pub fn dense_filter_grad(model: &GnnModel, w_grad: &DMatrix<f64>) -> DMatrix<f64> {
    let n = model.n_buses();
    let mut d = DMatrix::zeros(n, n);
    for (k, &(i, j)) in model.mask().entries().iter().enumerate() {
        d[(i, j)] += w_grad[(0, k)];
    }
    d
}
