//! dc optimal power flow with dual recovery, LMPs, flow-feasibility checks
//! and randomized dataset generation.
//!
//! Decision variables are nodal net injections. A node is flexible when it
//! hosts a dispatchable generator; every other node is a fixed injection
//! with `p̲ = p̄`.

mod dataset;
mod qp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::case_io::GridCase;
use crate::grid_model::{GridError, GridLinAlg};

pub use dataset::{generate_dataset, generate_dataset_on, SampleSpec, DC_FEATURES, FEATURE_NAMES};
pub use qp::{solve_qp, QpProblem, QpSettings, QpSolution, QpStatus};

/// Primal test for binding-line labels: `|f| ≥ f̄ − BINDING_TOL`.
pub const BINDING_TOL: f64 = 1e-5;
/// Exposed tolerance on KKT residuals and complementarity products.
pub const KKT_TOL: f64 = 1e-6;
/// Default quadratic fill for linear-only cost curves, see [`node_params`].
pub const DEFAULT_CURVATURE: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum OpfError {
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("solver hit the iteration limit (residual {residual:.3e})")]
    MaxIterations { residual: f64 },
    #[error("unsupported cost: {0}")]
    UnsupportedCost(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{rejected} of {attempted} draws rejected, above the 20% limit")]
    TooManyRejections { rejected: usize, attempted: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Per-node quantities in injection coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub pmax: f64,
    pub pmin: f64,
    pub qmax: f64,
    pub qmin: f64,
    /// Cost `a p² + b p` of the net injection (zero on fixed nodes).
    pub a: f64,
    pub b: f64,
}

impl NodeParams {
    pub fn is_flexible(&self) -> bool {
        self.pmax > self.pmin
    }
}

/// Node parameters of a case with optional per-bus load and per-generator
/// cost multipliers.
///
/// Generator costs without a quadratic term get `a = κ·b/(2·pmax)`, so the
/// marginal cost rises by the fraction `κ = curvature` across the unit's range.
/// A generator with neither term borrows the mean linear coefficient of the
/// other dispatchable units.
pub fn node_params(
    case: &GridCase,
    load_scale: Option<&[f64]>,
    cost_scale: Option<&[(f64, f64)]>,
    curvature: f64,
) -> Result<Vec<NodeParams>, OpfError> {
    let n = case.n_buses();
    if load_scale.is_some_and(|s| s.len() != n) || cost_scale.is_some_and(|s| s.len() != case.gens.len()) {
        return Err(OpfError::DimensionMismatch("scale vectors do not match the case".into()));
    }
    let positive_b: Vec<f64> = case.gens.iter().filter(|g| g.is_dispatchable() && g.cost.b > 0.0).map(|g| g.cost.b).collect();
    let mean_b = if positive_b.is_empty() { 1.0 } else { positive_b.iter().sum::<f64>() / positive_b.len() as f64 };

    let mut nodes: Vec<NodeParams> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, bus)| {
            let u = load_scale.map_or(1.0, |s| s[i]);
            NodeParams { pmax: -bus.pd * u, pmin: -bus.pd * u, qmax: -bus.qd * u, qmin: -bus.qd * u, a: 0.0, b: 0.0 }
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (k, g) in case.gens.iter().enumerate() {
        let i = case.bus_index(g.bus).expect("validated generator bus");
        let node = &mut nodes[i];
        node.qmax += g.qmax;
        node.qmin += g.qmin;
        if !g.is_dispatchable() {
            node.pmax += g.pmin;
            node.pmin += g.pmin;
            continue;
        }
        if let Some(other) = owner[i] {
            return Err(OpfError::UnsupportedCost(format!(
                "bus {} hosts several dispatchable generators ({other} and {k})",
                g.bus
            )));
        }
        owner[i] = Some(k);
        let (sa, sb) = cost_scale.map_or((1.0, 1.0), |s| s[k]);
        let b = if g.cost.b > 0.0 || g.cost.a > 0.0 { g.cost.b } else { mean_b };
        let a = if g.cost.a > 0.0 { g.cost.a } else { curvature * b.abs() / (2.0 * g.pmax.abs().max(1e-3)) };
        node.pmax += g.pmax;
        node.pmin += g.pmin;
        // keep the generator cost and shift it once the node offset is known
        node.a = a * sa;
        node.b = b * sb;
    }
    // generator output g = p + c with c = pd − fixed generation at the node
    for (i, node) in nodes.iter_mut().enumerate() {
        if let Some(k) = owner[i] {
            let g = &case.gens[k];
            let c = g.pmin - node.pmin;
            node.b += 2.0 * node.a * c;
        }
    }
    Ok(nodes)
}

/// One dc-OPF problem over a fixed topology.
#[derive(Debug, Clone)]
pub struct DcOpfInstance<'g> {
    pub grid: &'g GridLinAlg,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    /// Per live line, in the order of `grid.lines()`.
    pub f_max: Vec<f64>,
}

impl<'g> DcOpfInstance<'g> {
    pub fn new(grid: &'g GridLinAlg, nodes: &[NodeParams]) -> Result<Self, OpfError> {
        if nodes.len() != grid.n_buses() {
            return Err(OpfError::DimensionMismatch(format!(
                "{} node records for {} buses",
                nodes.len(),
                grid.n_buses()
            )));
        }
        let inst = DcOpfInstance {
            grid,
            a: nodes.iter().map(|n| n.a).collect(),
            b: nodes.iter().map(|n| n.b).collect(),
            p_min: nodes.iter().map(|n| n.pmin).collect(),
            p_max: nodes.iter().map(|n| n.pmax).collect(),
            f_max: grid.lines().iter().map(|l| l.rate).collect(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), OpfError> {
        let n = self.grid.n_buses();
        if [self.a.len(), self.b.len(), self.p_min.len(), self.p_max.len()].iter().any(|&l| l != n)
            || self.f_max.len() != self.grid.n_lines()
        {
            return Err(OpfError::DimensionMismatch("instance vectors do not match the grid".into()));
        }
        for i in 0..n {
            if self.p_min[i] > self.p_max[i] {
                return Err(OpfError::Infeasible(format!("node {i}: p̲ > p̄")));
            }
            if self.is_flexible(i) && !(self.a[i] > 0.0) {
                return Err(OpfError::UnsupportedCost(format!("flexible node {i} has a = {}", self.a[i])));
            }
        }
        Ok(())
    }

    pub fn is_flexible(&self, i: usize) -> bool {
        self.p_max[i] > self.p_min[i]
    }

    pub fn objective(&self, p: &[f64]) -> f64 {
        (0..p.len()).filter(|&i| self.is_flexible(i)).map(|i| self.a[i] * p[i] * p[i] + self.b[i] * p[i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpfStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcOpfSolution {
    pub p_star: Vec<f64>,
    pub f_star: Vec<f64>,
    pub lambda: f64,
    pub mu_bar: Vec<f64>,
    pub mu_under: Vec<f64>,
    /// Duals of `p ≤ p̄` and `p ≥ p̲` (zero on fixed nodes).
    pub nu_upper: Vec<f64>,
    pub nu_lower: Vec<f64>,
    pub pi_star: Vec<f64>,
    pub status: OpfStatus,
    pub kkt_residual: f64,
    pub objective: f64,
    pub iterations: usize,
}

impl DcOpfSolution {
    /// Primal binding test per line.
    pub fn binding(&self, f_max: &[f64]) -> Vec<bool> {
        self.f_star.iter().zip(f_max).map(|(f, m)| f.abs() >= m - BINDING_TOL).collect()
    }
}

/// Solve the dc-OPF QP and recover all multipliers.
pub fn solve_dcopf(inst: &DcOpfInstance) -> Result<DcOpfSolution, OpfError> {
    inst.validate()?;
    let grid = inst.grid;
    let n = grid.n_buses();
    let lo: f64 = inst.p_min.iter().sum();
    let hi: f64 = inst.p_max.iter().sum();
    if lo > 1e-12 || hi < -1e-12 {
        return Err(OpfError::Infeasible(format!("balance impossible: Σp̲ = {lo:.6}, Σp̄ = {hi:.6}")));
    }
    let flex: Vec<usize> = (0..n).filter(|&i| inst.is_flexible(i)).collect();
    let nf = flex.len();
    let nl = grid.n_lines();
    let fixed_sum: f64 = (0..n).filter(|&i| !inst.is_flexible(i)).map(|i| inst.p_min[i]).sum();
    let fixed_p: Vec<f64> = (0..n).map(|i| if inst.is_flexible(i) { 0.0 } else { inst.p_min[i] }).collect();
    let fixed_flow = grid.flows(&fixed_p);
    let s = grid.isf();

    // Objective scaling keeps the interior point well conditioned.
    let scale = flex
        .iter()
        .map(|&i| inst.b[i].abs() + 2.0 * inst.a[i] * inst.p_max[i].abs().max(inst.p_min[i].abs()))
        .fold(1e-12, f64::max);

    let q = DMatrix::from_fn(nf, nf, |r, c| if r == c { 2.0 * inst.a[flex[r]] / scale } else { 0.0 });
    let c = DVector::from_fn(nf, |r, _| inst.b[flex[r]] / scale);
    let a = DMatrix::from_element(1, nf, 1.0);
    let b = DVector::from_element(1, -fixed_sum);
    let mi = 2 * nl + 2 * nf;
    let mut g = DMatrix::zeros(mi, nf);
    let mut h = DVector::zeros(mi);
    for l in 0..nl {
        for (j, &i) in flex.iter().enumerate() {
            g[(l, j)] = s[(l, i)];
            g[(nl + l, j)] = -s[(l, i)];
        }
        h[l] = inst.f_max[l] - fixed_flow[l];
        h[nl + l] = inst.f_max[l] + fixed_flow[l];
    }
    for (j, &i) in flex.iter().enumerate() {
        g[(2 * nl + j, j)] = 1.0;
        h[2 * nl + j] = inst.p_max[i];
        g[(2 * nl + nf + j, j)] = -1.0;
        h[2 * nl + nf + j] = -inst.p_min[i];
    }
    let problem = QpProblem { q, c, a, b, g, h };
    let sol = solve_qp(&problem, QpSettings::default());
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(OpfError::Infeasible("flow limits cannot be met".into())),
        QpStatus::MaxIterations => {
            let primal = {
                let slack = &problem.h - &problem.g * &sol.x;
                slack.iter().fold(0.0f64, |m, v| m.max(-v)).max((&problem.a * &sol.x - &problem.b).amax())
            };
            if primal > 1e-6 {
                return Err(OpfError::Infeasible(format!("primal residual stalled at {primal:.3e}")));
            }
            return Err(OpfError::MaxIterations { residual: sol.residual * scale });
        }
    }

    let mut p_star = fixed_p.clone();
    for (j, &i) in flex.iter().enumerate() {
        p_star[i] = sol.x[j];
    }
    let z = &sol.z * scale;
    let lambda = -sol.y[0] * scale;
    let mu_bar: Vec<f64> = (0..nl).map(|l| z[l]).collect();
    let mu_under: Vec<f64> = (0..nl).map(|l| z[nl + l]).collect();
    let mut nu_upper = vec![0.0; n];
    let mut nu_lower = vec![0.0; n];
    for (j, &i) in flex.iter().enumerate() {
        nu_upper[i] = z[2 * nl + j];
        nu_lower[i] = z[2 * nl + nf + j];
    }
    let f_star: Vec<f64> = grid.flows(&p_star).iter().copied().collect();
    let pi_star = lmp(grid, lambda, &mu_bar, &mu_under);
    let mut out = DcOpfSolution {
        objective: inst.objective(&p_star),
        p_star,
        f_star,
        lambda,
        mu_bar,
        mu_under,
        nu_upper,
        nu_lower,
        pi_star,
        status: OpfStatus::Optimal,
        kkt_residual: 0.0,
        iterations: sol.iterations,
    };
    out.kkt_residual = kkt_residual(inst, &out);
    Ok(out)
}

/// `π = λ·1 − Sᵀ(μ̄ − μ̲)`.
fn lmp(grid: &GridLinAlg, lambda: f64, mu_bar: &[f64], mu_under: &[f64]) -> Vec<f64> {
    let dmu = DVector::from_iterator(mu_bar.len(), mu_bar.iter().zip(mu_under).map(|(a, b)| a - b));
    let congestion = grid.isf().tr_mul(&dmu);
    congestion.iter().map(|c| lambda - c).collect()
}

pub fn lmp_from_duals(sol: &DcOpfSolution, grid: &GridLinAlg) -> Vec<f64> {
    lmp(grid, sol.lambda, &sol.mu_bar, &sol.mu_under)
}

/// Largest violation among stationarity, balance, limits, dual signs and
/// complementarity products, in problem units.
pub fn kkt_residual(inst: &DcOpfInstance, sol: &DcOpfSolution) -> f64 {
    let n = inst.grid.n_buses();
    let dmu = DVector::from_iterator(sol.mu_bar.len(), sol.mu_bar.iter().zip(&sol.mu_under).map(|(a, b)| a - b));
    let st = inst.grid.isf().tr_mul(&dmu);
    let mut r = 0.0f64;
    for i in (0..n).filter(|&i| inst.is_flexible(i)) {
        let g = 2.0 * inst.a[i] * sol.p_star[i] + inst.b[i] - sol.lambda + st[i] + sol.nu_upper[i] - sol.nu_lower[i];
        r = r.max(g.abs());
        r = r.max((sol.nu_upper[i] * (inst.p_max[i] - sol.p_star[i])).abs());
        r = r.max((sol.nu_lower[i] * (sol.p_star[i] - inst.p_min[i])).abs());
        r = r.max(-sol.nu_upper[i]).max(-sol.nu_lower[i]);
        r = r.max(sol.p_star[i] - inst.p_max[i]).max(inst.p_min[i] - sol.p_star[i]);
    }
    r = r.max(sol.p_star.iter().sum::<f64>().abs());
    for l in 0..sol.f_star.len() {
        let (f, m) = (sol.f_star[l], inst.f_max[l]);
        r = r.max(f.abs() - m);
        r = r.max(-sol.mu_bar[l]).max(-sol.mu_under[l]);
        r = r.max((sol.mu_bar[l] * (m - f)).abs()).max((sol.mu_under[l] * (f + m)).abs());
    }
    r
}

/// Per-line and total dc flow-limit violation.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowViolation {
    pub total: f64,
    pub per_line: Vec<f64>,
}

pub fn dc_flow_violation(p: &[f64], grid: &GridLinAlg, f_max: &[f64]) -> FlowViolation {
    let f = grid.flows(p);
    let per_line: Vec<f64> = f.iter().zip(f_max).map(|(f, m)| (f.abs() - m).max(0.0)).collect();
    FlowViolation { total: per_line.iter().sum(), per_line }
}

/// Apparent flow magnitudes per line in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ApparentFlows {
    pub from_to: Vec<f64>,
    pub to_from: Vec<f64>,
}

/// `s_ij = | |v_i|e^{jθ_i} − |v_j|e^{jθ_j} | · |v_i| · |Y_ij|` and the reverse.
pub fn ac_apparent_flow(vm: &[f64], theta: &[f64], grid: &GridLinAlg) -> ApparentFlows {
    let (mut from_to, mut to_from) = (Vec::new(), Vec::new());
    for line in grid.lines() {
        let (i, j) = (line.from, line.to);
        let dre = vm[i] * theta[i].cos() - vm[j] * theta[j].cos();
        let dim = vm[i] * theta[i].sin() - vm[j] * theta[j].sin();
        let diff = dre.hypot(dim);
        from_to.push(diff * vm[i] * line.y_mag);
        to_from.push(diff * vm[j] * line.y_mag);
    }
    ApparentFlows { from_to, to_from }
}
