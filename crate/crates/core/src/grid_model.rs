//! Topology-derived linear algebra for the dc network model.
//!
//! Node indices follow the bus order of the [`GridCase`]; the reduced
//! matrices drop the reference node. A line's incidence row carries `+1` at
//! its from-bus and `-1` at its to-bus, so a positive flow runs from → to.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::case_io::GridCase;
use crate::topology::islands;

/// Denominator threshold below which a line is treated as a bridge.
pub const BRIDGE_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("live topology is disconnected into {} islands", .islands.len())]
    Disconnected { islands: Vec<Vec<usize>> },
    #[error("reduced B-bus factorization failed")]
    SingularB,
    #[error("outage splits the grid into islands {islands:?} (bus ids)")]
    WouldDisconnect { islands: Vec<Vec<usize>> },
    #[error("branch {branch} is a bridge; removing it disconnects the grid")]
    BridgeLine { branch: usize },
    #[error("branch {branch} is not a live line of this grid")]
    NotLive { branch: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// A live line in node-index coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    /// Index of the branch in the originating case.
    pub branch: usize,
    pub from: usize,
    pub to: usize,
    pub x: f64,
    pub y_mag: f64,
    pub rate: f64,
}

/// Support of the GNN graph filters: the diagonal plus both orientations of
/// every adjacent node pair. Parallel lines collapse to one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnMask {
    n: usize,
    /// Row-major sorted `(row, col)` support.
    entries: Vec<(usize, usize)>,
}

impl GnnMask {
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut set: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for (i, j) in pairs {
            assert!(i < n && j < n, "mask pair ({i},{j}) out of range for n={n}");
            set.insert((i, j));
            set.insert((j, i));
        }
        GnnMask { n, entries: set.into_iter().collect() }
    }

    /// Rebuild from an explicit entry list (as stored in checkpoints).
    pub fn from_entries(n: usize, mut entries: Vec<(usize, usize)>) -> Self {
        entries.sort_unstable();
        entries.dedup();
        GnnMask { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.binary_search(&(i, j)).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries.iter().all(|&(i, j)| self.contains(j, i))
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let mut d = vec![vec![false; self.n]; self.n];
        for &(i, j) in &self.entries {
            d[i][j] = true;
        }
        d
    }

    /// Copy of the mask without the given off-diagonal pairs (both orientations).
    pub fn without_pairs(&self, pairs: &[(usize, usize)]) -> GnnMask {
        let drop: BTreeSet<(usize, usize)> = pairs
            .iter()
            .filter(|(i, j)| i != j)
            .flat_map(|&(i, j)| [(i, j), (j, i)])
            .collect();
        GnnMask {
            n: self.n,
            entries: self.entries.iter().copied().filter(|e| !drop.contains(e)).collect(),
        }
    }
}

/// Dense linear algebra of one topology. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GridLinAlg {
    n_buses: usize,
    ref_index: usize,
    bus_ids: Vec<usize>,
    lines: Vec<Line>,
    a_red: DMatrix<f64>,
    x: DVector<f64>,
    b_red: DMatrix<f64>,
    b_chol: Cholesky<f64, Dyn>,
    b_inv: DMatrix<f64>,
    isf: DMatrix<f64>,
    mask: GnnMask,
}

/// Build every topology-derived matrix for the live lines of `case`.
pub fn build_linalg(case: &GridCase) -> Result<GridLinAlg, GridError> {
    let lines = case
        .branches
        .iter()
        .enumerate()
        .filter(|(_, b)| b.in_service)
        .map(|(k, b)| Line {
            branch: k,
            from: case.bus_index(b.from).expect("validated endpoint"),
            to: case.bus_index(b.to).expect("validated endpoint"),
            x: b.x,
            y_mag: b.y_mag,
            rate: b.rate_a,
        })
        .collect();
    let bus_ids = case.buses.iter().map(|b| b.id).collect();
    GridLinAlg::from_lines(bus_ids, case.ref_index(), lines)
}

impl GridLinAlg {
    pub fn from_lines(bus_ids: Vec<usize>, ref_index: usize, lines: Vec<Line>) -> Result<Self, GridError> {
        let n = bus_ids.len();
        if ref_index >= n {
            return Err(GridError::DimensionMismatch(format!("reference index {ref_index} >= {n}")));
        }
        let groups = islands(n, lines.iter().map(|l| (l.from, l.to)));
        if groups.len() > 1 {
            let islands = groups
                .into_iter()
                .map(|g| g.into_iter().map(|i| bus_ids[i]).collect())
                .collect();
            return Err(GridError::Disconnected { islands });
        }
        let m = lines.len();
        let red = |i: usize| if i < ref_index { Some(i) } else if i > ref_index { Some(i - 1) } else { None };
        let mut a_red = DMatrix::zeros(m, n - 1);
        for (l, line) in lines.iter().enumerate() {
            if let Some(c) = red(line.from) {
                a_red[(l, c)] += 1.0;
            }
            if let Some(c) = red(line.to) {
                a_red[(l, c)] -= 1.0;
            }
        }
        let x = DVector::from_iterator(m, lines.iter().map(|l| l.x));
        let xinv_a = {
            let mut t = a_red.clone();
            for (l, mut row) in t.row_iter_mut().enumerate() {
                row /= x[l];
            }
            t
        };
        let mut b_red = a_red.transpose() * &xinv_a;
        b_red = (&b_red + b_red.transpose()) * 0.5;
        let b_chol = Cholesky::new(b_red.clone()).ok_or(GridError::SingularB)?;
        let b_inv = b_chol.inverse();
        let b_inv = (&b_inv + b_inv.transpose()) * 0.5;
        let isf_red = &xinv_a * &b_inv;
        let mut isf = DMatrix::zeros(m, n);
        for c in 0..n {
            if let Some(rc) = red(c) {
                isf.set_column(c, &isf_red.column(rc));
            }
        }
        let mask = GnnMask::from_pairs(n, lines.iter().map(|l| (l.from, l.to)));
        Ok(GridLinAlg {
            n_buses: n,
            ref_index,
            bus_ids,
            lines,
            a_red,
            x,
            b_red,
            b_chol,
            b_inv,
            isf,
            mask,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn ref_index(&self) -> usize {
        self.ref_index
    }

    pub fn ref_bus(&self) -> usize {
        self.bus_ids[self.ref_index]
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.bus_ids
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Position of a case branch among the live lines.
    pub fn line_of_branch(&self, branch: usize) -> Option<usize> {
        self.lines.iter().position(|l| l.branch == branch)
    }

    pub fn a_red(&self) -> &DMatrix<f64> {
        &self.a_red
    }

    pub fn reactances(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn b_red(&self) -> &DMatrix<f64> {
        &self.b_red
    }

    pub fn b_inv(&self) -> &DMatrix<f64> {
        &self.b_inv
    }

    /// ISF matrix, `n_lines × n_buses`, zero column at the reference node.
    pub fn isf(&self) -> &DMatrix<f64> {
        &self.isf
    }

    pub fn mask(&self) -> &GnnMask {
        &self.mask
    }

    pub fn limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.lines.len(), self.lines.iter().map(|l| l.rate))
    }

    /// Solve `B_red y = rhs` with the stored factorization.
    pub fn solve_b(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.b_chol.solve(rhs)
    }

    /// Full-size vector with the reference entry removed.
    pub fn reduce(&self, full: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n_buses - 1,
            full.iter().enumerate().filter(|(i, _)| *i != self.ref_index).map(|(_, v)| *v),
        )
    }

    /// Re-insert a zero at the reference node.
    pub fn expand(&self, reduced: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_buses);
        out.extend_from_slice(&reduced.as_slice()[..self.ref_index]);
        out.push(0.0);
        out.extend_from_slice(&reduced.as_slice()[self.ref_index..]);
        out
    }

    /// Line flows `S p` for a full nodal injection vector.
    pub fn flows(&self, p: &[f64]) -> DVector<f64> {
        &self.isf * DVector::from_column_slice(p)
    }

    /// Net injection per node implied by line flows (`A_fullᵀ f`).
    pub fn nodal_balance(&self, f: &DVector<f64>) -> Vec<f64> {
        let mut p = vec![0.0; self.n_buses];
        for (l, line) in self.lines.iter().enumerate() {
            p[line.from] += f[l];
            p[line.to] -= f[l];
        }
        p
    }

    /// Reduced incidence row of a live line as a column vector.
    pub fn incidence(&self, line: usize) -> DVector<f64> {
        self.a_red.row(line).transpose()
    }
}

/// Post-outage topology.
#[derive(Debug, Clone)]
pub struct Contingency {
    pub outaged_lines: Vec<usize>,
    pub post_grid: GridLinAlg,
}

/// Remove the given case branches and rebuild every matrix from scratch.
pub fn apply_outage(grid: &GridLinAlg, branches: &[usize]) -> Result<Contingency, GridError> {
    let mut out: Vec<usize> = branches.to_vec();
    out.sort_unstable();
    out.dedup();
    for &b in &out {
        if grid.line_of_branch(b).is_none() {
            return Err(GridError::NotLive { branch: b });
        }
    }
    let survivors: Vec<Line> = grid
        .lines
        .iter()
        .filter(|l| out.binary_search(&l.branch).is_err())
        .cloned()
        .collect();
    let post_grid = match GridLinAlg::from_lines(grid.bus_ids.clone(), grid.ref_index, survivors) {
        Err(GridError::Disconnected { islands }) => return Err(GridError::WouldDisconnect { islands }),
        other => other?,
    };
    Ok(Contingency { outaged_lines: out, post_grid })
}

/// Result of the Sherman-Morrison update for one removed line.
#[derive(Debug, Clone)]
pub struct RankOneUpdate {
    pub branch: usize,
    /// `Δ_k` with `(B')⁻¹ = B⁻¹ + Δ_k`.
    pub delta: DMatrix<f64>,
    pub updated_inverse: DMatrix<f64>,
    /// `x_k − a_kᵀ B⁻¹ a_k`.
    pub denominator: f64,
}

/// Inverse of the reduced B-bus after removing one line, as a rank-one
/// correction of the current inverse.
pub fn rank_one_inverse_update(grid: &GridLinAlg, branch: usize) -> Result<RankOneUpdate, GridError> {
    let l = grid.line_of_branch(branch).ok_or(GridError::NotLive { branch })?;
    let a = grid.incidence(l);
    let xk = grid.x[l];
    let (delta, denominator) =
        sherman_morrison_removal(&grid.b_inv, &a, xk).ok_or(GridError::BridgeLine { branch })?;
    let updated_inverse = &grid.b_inv + &delta;
    Ok(RankOneUpdate { branch, delta, updated_inverse, denominator })
}

/// `Δ = B⁻¹aaᵀB⁻¹ / (x − aᵀB⁻¹a)` for removing the term `aaᵀ/x` from `B`.
/// Returns `None` when the denominator is at or below [`BRIDGE_TOL`].
pub fn sherman_morrison_removal(
    b_inv: &DMatrix<f64>,
    a: &DVector<f64>,
    x: f64,
) -> Option<(DMatrix<f64>, f64)> {
    let u = b_inv * a;
    let denom = x - a.dot(&u);
    if denom <= BRIDGE_TOL {
        return None;
    }
    Some((&u * u.transpose() / denom, denom))
}

/// `Δ = −B⁻¹aaᵀB⁻¹ / (x + aᵀB⁻¹a)` for adding the term `aaᵀ/x` to `B`.
pub fn sherman_morrison_addition(b_inv: &DMatrix<f64>, a: &DVector<f64>, x: f64) -> DMatrix<f64> {
    let u = b_inv * a;
    let denom = x + a.dot(&u);
    -(&u * u.transpose()) / denom
}

/// Inverse change for removing several lines, applied one at a time.
pub fn multi_line_inverse_delta(grid: &GridLinAlg, branches: &[usize]) -> Result<DMatrix<f64>, GridError> {
    let mut inv = grid.b_inv.clone();
    for &b in branches {
        let l = grid.line_of_branch(b).ok_or(GridError::NotLive { branch: b })?;
        let (d, _) = sherman_morrison_removal(&inv, &grid.incidence(l), grid.x[l])
            .ok_or(GridError::BridgeLine { branch: b })?;
        inv += d;
    }
    Ok(inv - &grid.b_inv)
}

pub fn gnn_mask(grid: &GridLinAlg) -> &GnnMask {
    grid.mask()
}

/// Mask straight from a case's live branches, no matrices required.
pub fn mask_from_case(case: &GridCase) -> GnnMask {
    GnnMask::from_pairs(
        case.n_buses(),
        case.branches
            .iter()
            .filter(|b| b.in_service)
            .map(|b| (case.bus_index(b.from).unwrap(), case.bus_index(b.to).unwrap())),
    )
}

/// Fast-decoupled voltage sensitivity `Δ|v| ≈ −B⁻¹Δq` over non-reference buses.
pub fn fdpf_voltage_sensitivity(grid: &GridLinAlg, dq: &DVector<f64>) -> Result<DVector<f64>, GridError> {
    if dq.len() != grid.n_buses - 1 {
        return Err(GridError::DimensionMismatch(format!(
            "Δq has {} entries, expected {}",
            dq.len(),
            grid.n_buses - 1
        )));
    }
    Ok(-(&grid.b_inv * dq))
}
