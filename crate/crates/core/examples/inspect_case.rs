//! Parse a MATPOWER case, print its size and the dc network matrices that
//! the rest of the crate is built on.
//!
//! `cargo run --example inspect_case -- [case.m]`

use gridflow::case_io::{load_case, parse_matpower_case, write_matpower_case};
use gridflow::grid_model::build_linalg;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/pglib_opf_case14_ieee.m").to_string());
    let case = load_case(&path)?;
    let dispatchable = case.gens.iter().filter(|g| g.is_dispatchable()).count();
    println!(
        "{}: {} buses, {} branches ({} live), {} generators ({} dispatchable), base {} MVA, reference bus {}",
        case.name,
        case.n_buses(),
        case.branches.len(),
        case.live_branches().len(),
        case.gens.len(),
        dispatchable,
        case.base_mva,
        case.ref_bus
    );

    let grid = build_linalg(&case)?;
    println!("lines {}  mask nnz {}", grid.n_lines(), grid.mask().nnz());
    let isf = grid.isf();
    let largest = isf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("ISF {}x{}  max |entry| {largest:.4}", isf.nrows(), isf.ncols());
    let b = grid.b_red();
    let check = (b * grid.b_inv() - nalgebra::DMatrix::identity(b.nrows(), b.ncols())).norm();
    println!("reduced B {}x{}  |B·B⁻¹ − I|_F = {check:.2e}", b.nrows(), b.ncols());

    // a write/parse cycle reproduces the case exactly
    let again = parse_matpower_case(&write_matpower_case(&case))?;
    println!("round trip identical: {}", again == case);
    Ok(())
}
