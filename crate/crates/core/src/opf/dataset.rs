//! Randomized dc-OPF datasets.
//!
//! Every sample draws from its own ChaCha stream keyed by `(seed, index)`, so
//! output is identical regardless of worker count or scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{node_params, solve_dcopf, DcOpfInstance, OpfError, DEFAULT_CURVATURE, KKT_TOL};
use crate::case_io::{channel_names, DatasetFile, DatasetHeader, GridCase};
use crate::grid_model::{build_linalg, GridLinAlg};

pub const FEATURE_NAMES: [&str; 6] = ["pmax", "pmin", "qmax", "qmin", "a", "b"];
/// Feature subset used by dc models.
pub const DC_FEATURES: [&str; 4] = ["pmax", "pmin", "a", "b"];

/// Redraws allowed for a single sample before giving up.
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    pub n_samples: usize,
    /// Per-bus multiplicative load factor interval.
    pub load_scale_range: [f64; 2],
    /// Per-generator multiplicative factor interval, drawn separately for `a` and `b`.
    pub cost_scale_range: [f64; 2],
    pub seed: u64,
    /// Quadratic fill for linear-only costs.
    pub curvature: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            n_samples: 1000,
            load_scale_range: [0.85, 1.15],
            cost_scale_range: [0.7, 1.3],
            seed: 0,
            curvature: DEFAULT_CURVATURE,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<(), OpfError> {
        for (name, [lo, hi]) in [("load", self.load_scale_range), ("cost", self.cost_scale_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(OpfError::DimensionMismatch(format!("{name} scale range [{lo}, {hi}] is invalid")));
            }
        }
        if !(self.curvature > 0.0) {
            return Err(OpfError::UnsupportedCost(format!("curvature {} must be positive", self.curvature)));
        }
        Ok(())
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw(rng: &mut ChaCha8Rng, lo_hi: [f64; 2]) -> f64 {
    if lo_hi[0] == lo_hi[1] {
        lo_hi[0]
    } else {
        rng.gen_range(lo_hi[0]..lo_hi[1])
    }
}

/// Dataset on the case's own live topology.
pub fn generate_dataset(case: &GridCase, spec: &SampleSpec) -> Result<DatasetFile, OpfError> {
    generate_dataset_on(case, &[], spec)
}

/// Dataset with the given case branches switched out first.
pub fn generate_dataset_on(case: &GridCase, outages: &[usize], spec: &SampleSpec) -> Result<DatasetFile, OpfError> {
    spec.validate()?;
    let mut outaged = outages.to_vec();
    outaged.sort_unstable();
    outaged.dedup();
    let post = case.with_outages(&outaged);
    let grid = build_linalg(&post)?;
    let base = node_params(&post, None, None, spec.curvature)?;
    solve_dcopf(&DcOpfInstance::new(&grid, &base)?)?;

    let n = grid.n_buses();
    let header = DatasetHeader {
        case_name: case.name.clone(),
        n_buses: n,
        n_lines: grid.n_lines(),
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        label_names: [channel_names("pi", n), channel_names("p", n), channel_names("binding", grid.n_lines())].concat(),
        seed: spec.seed,
        line_branches: grid.lines().iter().map(|l| l.branch).collect(),
        outaged_branches: outaged,
        rejected: 0,
        config_hash: None,
    };

    let results: Vec<Result<(Vec<f64>, usize), OpfError>> = crate::parallel::install(|| {
        (0..spec.n_samples).into_par_iter().map(|k| one_sample(&post, &grid, spec, k)).collect()
    });
    let mut rows = Vec::with_capacity(spec.n_samples);
    let mut rejected = 0;
    for r in results {
        let (row, rej) = r?;
        rows.push(row);
        rejected += rej;
    }
    let attempted = spec.n_samples + rejected;
    if rejected * 5 > attempted {
        return Err(OpfError::TooManyRejections { rejected, attempted });
    }
    if rejected > 0 {
        log::info!("{rejected} of {attempted} draws rejected");
    }
    let mut data = DatasetFile { header, rows };
    data.header.rejected = rejected;
    Ok(data)
}

fn one_sample(case: &GridCase, grid: &GridLinAlg, spec: &SampleSpec, index: usize) -> Result<(Vec<f64>, usize), OpfError> {
    let mut rng = sample_rng(spec.seed, index);
    for attempt in 0..MAX_ATTEMPTS {
        let loads: Vec<f64> = (0..case.n_buses()).map(|_| draw(&mut rng, spec.load_scale_range)).collect();
        let costs: Vec<(f64, f64)> = (0..case.gens.len())
            .map(|_| (draw(&mut rng, spec.cost_scale_range), draw(&mut rng, spec.cost_scale_range)))
            .collect();
        let nodes = node_params(case, Some(&loads), Some(&costs), spec.curvature)?;
        let inst = DcOpfInstance::new(grid, &nodes)?;
        match solve_dcopf(&inst) {
            Ok(sol) if sol.kkt_residual < KKT_TOL => {
                let mut row = Vec::with_capacity(nodes.len() * 6 + 2 * nodes.len() + grid.n_lines());
                for nd in &nodes {
                    row.extend_from_slice(&[nd.pmax, nd.pmin, nd.qmax, nd.qmin, nd.a, nd.b]);
                }
                row.extend_from_slice(&sol.pi_star);
                row.extend_from_slice(&sol.p_star);
                row.extend(sol.binding(&inst.f_max).into_iter().map(|b| if b { 1.0 } else { 0.0 }));
                return Ok((row, attempt));
            }
            Ok(sol) => log::debug!("sample {index}: KKT residual {:.3e}, redrawing", sol.kkt_residual),
            Err(e) => log::debug!("sample {index}: {e}, redrawing"),
        }
    }
    Err(OpfError::TooManyRejections { rejected: MAX_ATTEMPTS, attempted: MAX_ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::parse_matpower_case;

    const TRIANGLE: &str = "
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
2 2 60 10 0 0 1 1 0 230 1 1.1 0.9;
3 1 90 20 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
1 0 0 50 -50 1 100 1 250 0;
2 0 0 50 -50 1 100 1 150 0;
];
mpc.branch = [
1 2 0 0.1 0 80 80 80 0 0 1 -360 360;
1 3 0 0.1 0 80 80 80 0 0 1 -360 360;
2 3 0 0.1 0 80 80 80 0 0 1 -360 360;
];
mpc.gencost = [
2 0 0 3 0.01 20 0;
2 0 0 3 0.03 25 0;
];
";

    #[test]
    fn empty_and_deterministic() {
        let case = parse_matpower_case(TRIANGLE).unwrap();
        let empty = generate_dataset(&case, &SampleSpec { n_samples: 0, ..Default::default() }).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.header.row_width(), 3 * 6 + 3 + 3 + 3);
        let spec = SampleSpec { n_samples: 20, seed: 9, ..Default::default() };
        let a = generate_dataset(&case, &spec).unwrap();
        let b = generate_dataset(&case, &spec).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_to(&mut ba).unwrap();
        b.write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(a.len(), 20);
        a.validate().unwrap();
    }
}
