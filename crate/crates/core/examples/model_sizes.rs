//! Parameter counts of the masked GNN and the fully connected baseline as
//! the grid grows.
//!
//! `cargo run --release --example model_sizes`

use gridflow::case_io::{parse_matpower_case_with, ParseOptions};
use gridflow::grid_model::build_linalg;
use gridflow::nn::{FcnnModel, GnnModel, HeadKind, Model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let widths = [4, 5, 10, 10, 5, 5];
    println!("{:>5} {:>6} {:>12} {:>14} {:>12} {:>8}", "N", "nnz", "GNN", "GNN dense-eq", "FCNN", "ratio");
    for name in ["case14", "case118", "case300"] {
        let path = format!("{}/data/pglib_opf_{name}_ieee.m", env!("CARGO_MANIFEST_DIR"));
        // 300-bus carries one negative reactance; only the topology matters here
        let case = parse_matpower_case_with(&std::fs::read_to_string(path)?, ParseOptions { abs_reactance: true })?;
        let grid = build_linalg(&case)?;
        let gnn = GnnModel::new(&grid, &widths, HeadKind::PerNode(1), 0)?;
        let fcnn = FcnnModel::new(grid.n_buses(), &widths, 1, 0)?;
        println!(
            "{:>5} {:>6} {:>12} {:>14} {:>12} {:>8.4}",
            grid.n_buses(),
            grid.mask().nnz(),
            gnn.param_count(),
            gnn.dense_equivalent_param_count(),
            fcnn.param_count(),
            gnn.param_count() as f64 / fcnn.param_count() as f64
        );
    }
    Ok(())
}
