//! Eigen-analysis of `B⁻¹`, principal-angle subspace distances and
//! Davis-Kahan style bounds on how far the leading eigenspace moves under a
//! line outage.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::grid_model::{multi_line_inverse_delta, rank_one_inverse_update, GridError, GridLinAlg};

/// Gaps below this make the bounds meaningless.
pub const DEGENERATE_GAP: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("eigen-solver did not converge")]
    NoConvergence,
    #[error("basis columns are not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Frobenius,
    Spectral,
}

/// Eigenpairs in non-increasing eigenvalue order.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// First `s` eigenvectors as columns.
    pub fn leading(&self, s: usize) -> DMatrix<f64> {
        self.vectors.columns(0, s).into_owned()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| self.vectors[(r, c)] * self.values[c]);
        scaled * self.vectors.transpose()
    }
}

pub fn eigendecompose_spd(m: &DMatrix<f64>) -> Result<EigenBasis, SpectralError> {
    if !m.is_square() {
        return Err(SpectralError::ShapeMismatch(format!("{:?} is not square", m.shape())));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 {
        return Err(SpectralError::NotSymmetric(asym));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(SpectralError::NoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if let Some(&min) = values.last() {
        if min <= 0.0 {
            return Err(SpectralError::NotPositiveDefinite(min));
        }
    }
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // make the largest-magnitude entry positive (first one on ties)
        let mut best = 0;
        for r in 1..n {
            if v[r].abs() > v[best].abs() {
                best = r;
            }
        }
        if v[best] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(c, &v);
    }
    Ok(EigenBasis { values, vectors })
}

fn check_orthonormal(u: &DMatrix<f64>) -> Result<(), SpectralError> {
    let dev = (u.transpose() * u - DMatrix::identity(u.ncols(), u.ncols())).amax();
    if dev > 1e-8 {
        return Err(SpectralError::NotOrthonormal(dev));
    }
    Ok(())
}

/// `‖sin Θ‖` between the column spans of two orthonormal bases.
pub fn subspace_distance(u: &DMatrix<f64>, v: &DMatrix<f64>, norm: Norm) -> Result<f64, SpectralError> {
    if u.shape() != v.shape() {
        return Err(SpectralError::ShapeMismatch(format!("{:?} vs {:?}", u.shape(), v.shape())));
    }
    check_orthonormal(u)?;
    check_orthonormal(v)?;
    let sigma = (u.transpose() * v).singular_values();
    let sines = sigma.iter().map(|s| (1.0 - s.clamp(0.0, 1.0).powi(2)).sqrt());
    Ok(match norm {
        Norm::Frobenius => sines.map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Spectral => sines.fold(0.0, f64::max),
    })
}

/// Eigenvalue separations of the leading `s` eigenvalues.
///
/// `delta`/`delta_prime` take the minimum over `1 ≤ i ≤ s` (the boundary gap
/// to `λ_{s+1}` included); the `_interior` variants stop at `i = s−1` and are
/// `None` when `s = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationConstants {
    pub s: usize,
    pub delta: f64,
    pub delta_prime: f64,
    pub delta_interior: Option<f64>,
    pub delta_prime_interior: Option<f64>,
    /// `λ_s − λ_{s+1}`, when `λ_{s+1}` exists.
    pub boundary_gap: Option<f64>,
}

pub fn separation_constants(basis: &EigenBasis, s: usize) -> Result<SeparationConstants, SpectralError> {
    let lam = &basis.values;
    if lam.len() < 2 || s == 0 || s > lam.len() {
        return Err(SpectralError::ShapeMismatch(format!(
            "s = {s} outside 1..={} (or fewer than two eigenvalues)",
            lam.len()
        )));
    }
    let gap = |i: usize| lam[i] - lam[i + 1];
    let gap_prime = |i: usize| 1.0 / lam[i + 1] - 1.0 / lam[i];
    let last = s.min(lam.len() - 1);
    let min_over = |f: &dyn Fn(usize) -> f64, k: usize| (0..k).map(f).reduce(f64::min);
    let delta = min_over(&gap, last).expect("s ≥ 1");
    let delta_prime = min_over(&gap_prime, last).expect("s ≥ 1");
    let c = SeparationConstants {
        s,
        delta,
        delta_prime,
        delta_interior: min_over(&gap, s - 1),
        delta_prime_interior: min_over(&gap_prime, s - 1),
        boundary_gap: (s < lam.len()).then(|| gap(s - 1)),
    };
    if c.delta < DEGENERATE_GAP || c.delta_prime < DEGENERATE_GAP {
        return Err(SpectralError::DegenerateSpectrum(format!(
            "δ = {:.3e}, δ′ = {:.3e} for s = {s}",
            c.delta, c.delta_prime
        )));
    }
    Ok(c)
}

/// Both terms of a perturbation bound and their minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DkBound {
    pub norm: Norm,
    /// `‖Δ‖` in the requested norm.
    pub delta_norm: f64,
    /// Term driven by the change of `B⁻¹` and `δ`.
    pub inverse_term: f64,
    /// Term driven by the change of `B` and `δ′`.
    pub laplacian_term: f64,
    pub bound: f64,
}

fn bound_terms(delta: &DMatrix<f64>, sum_inv_x: f64, c: &SeparationConstants, norm: Norm) -> DkBound {
    let (delta_norm, inverse_term, laplacian_term) = match norm {
        Norm::Frobenius => {
            let d = delta.norm();
            (d, d / c.delta, 2.0 * sum_inv_x / c.delta_prime)
        }
        Norm::Spectral => {
            let d = spectral_norm(delta);
            (d, 2.0 * d / c.delta, 4.0 * sum_inv_x / c.delta_prime)
        }
    };
    DkBound { norm, delta_norm, inverse_term, laplacian_term, bound: inverse_term.min(laplacian_term) }
}

fn check_constants(c: &SeparationConstants) -> Result<(), SpectralError> {
    if c.delta < DEGENERATE_GAP || c.delta_prime < DEGENERATE_GAP {
        return Err(SpectralError::DegenerateSpectrum(format!("δ = {:.3e}, δ′ = {:.3e}", c.delta, c.delta_prime)));
    }
    Ok(())
}

/// Bound on the leading-subspace distance after removing one line.
pub fn dk_bound(
    grid: &GridLinAlg,
    branch: usize,
    constants: &SeparationConstants,
    norm: Norm,
) -> Result<DkBound, SpectralError> {
    check_constants(constants)?;
    let upd = rank_one_inverse_update(grid, branch)?;
    let l = grid.line_of_branch(branch).expect("update succeeded");
    Ok(bound_terms(&upd.delta, 1.0 / grid.reactances()[l], constants, norm))
}

/// Multi-line variant: the total inverse change, and the Laplacian term
/// summed over the removed lines.
pub fn dk_bound_multi(
    grid: &GridLinAlg,
    branches: &[usize],
    constants: &SeparationConstants,
    norm: Norm,
) -> Result<DkBound, SpectralError> {
    check_constants(constants)?;
    let delta = multi_line_inverse_delta(grid, branches)?;
    let sum_inv_x: f64 = branches
        .iter()
        .map(|&b| 1.0 / grid.reactances()[grid.line_of_branch(b).expect("checked by update")])
        .sum();
    Ok(bound_terms(&delta, sum_inv_x, constants, norm))
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn spectral_energy_fraction(basis: &EigenBasis, s: usize) -> f64 {
    let total: f64 = basis.values.iter().sum();
    let s = s.min(basis.dim());
    (basis.values[..s].iter().sum::<f64>() / total).min(1.0)
}

/// Automatic subspace dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceChoice {
    pub s: usize,
    /// Smallest `s` meeting the energy target, before any shrinking.
    pub s_energy: usize,
    pub energy: f64,
}

/// Smallest `s` whose energy fraction reaches `target`, then shrunk while the
/// boundary gap `λ_s − λ_{s+1}` is at or below `1e-8`.
pub fn choose_subspace_dim(basis: &EigenBasis, target: f64) -> SubspaceChoice {
    let n = basis.dim();
    let mut s_energy = n;
    for s in 1..=n {
        if spectral_energy_fraction(basis, s) >= target {
            s_energy = s;
            break;
        }
    }
    let mut s = s_energy.min(n.saturating_sub(1)).max(1);
    while s > 1 && basis.values[s - 1] - basis.values[s] <= 1e-8 {
        s -= 1;
    }
    if s_energy != s {
        log::info!("subspace dimension shrunk from {s_energy} to {s} to avoid a degenerate gap");
    }
    SubspaceChoice { s, s_energy, energy: spectral_energy_fraction(basis, s) }
}

/// One outage scenario of the spectral report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralScenario {
    pub outaged_branches: Vec<usize>,
    pub s: usize,
    pub delta: f64,
    pub delta_prime: f64,
    pub distance_fro: f64,
    pub distance_l2: f64,
    pub bound_fro: DkBound,
    pub bound_l2: DkBound,
}

/// Distances and bounds for removing `branches` from `grid`.
pub fn analyze_outage(
    grid: &GridLinAlg,
    basis: &EigenBasis,
    constants: &SeparationConstants,
    branches: &[usize],
) -> Result<SpectralScenario, SpectralError> {
    let post = crate::grid_model::apply_outage(grid, branches)?.post_grid;
    let post_basis = eigendecompose_spd(post.b_inv())?;
    let s = constants.s;
    let (u, v) = (basis.leading(s), post_basis.leading(s));
    Ok(SpectralScenario {
        outaged_branches: branches.to_vec(),
        s,
        delta: constants.delta,
        delta_prime: constants.delta_prime,
        distance_fro: subspace_distance(&u, &v, Norm::Frobenius)?,
        distance_l2: subspace_distance(&u, &v, Norm::Spectral)?,
        bound_fro: dk_bound_multi(grid, branches, constants, Norm::Frobenius)?,
        bound_l2: dk_bound_multi(grid, branches, constants, Norm::Spectral)?,
    })
}
