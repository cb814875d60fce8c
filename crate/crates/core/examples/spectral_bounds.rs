//! Leading eigen-subspace of B⁻¹ and how far double-line outages rotate it,
//! against the Davis-Kahan style bounds.
//!
//! `cargo run --release --example spectral_bounds -- [s]`

use gridflow::case_io::load_case;
use gridflow::grid_model::{apply_outage, build_linalg};
use gridflow::spectral::{analyze_outage, choose_subspace_dim, eigendecompose_spd, separation_constants};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pglib_opf_case118_ieee.m"))?;
    let grid = build_linalg(&case)?;
    let basis = eigendecompose_spd(grid.b_inv())?;
    let choice = choose_subspace_dim(&basis, 0.5);
    let s = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(10);
    let c = separation_constants(&basis, s)?;
    println!("50%-energy rule picks s = {} ({:.3}); using s = {s}", choice.s, choice.energy);
    println!("δ = {:.4}  δ′ = {:.4}  (interior only: {:?} / {:?})", c.delta, c.delta_prime, c.delta_interior, c.delta_prime_interior);

    let branches: Vec<usize> = grid.lines().iter().map(|l| l.branch).take(12).collect();
    println!("{:>9} {:>9} {:>9} {:>9} {:>9}", "outage", "d_F", "bound_F", "d_2", "bound_2");
    for (i, &a) in branches.iter().enumerate() {
        for &b in &branches[i + 1..] {
            if apply_outage(&grid, &[a, b]).is_err() {
                continue;
            }
            let r = analyze_outage(&grid, &basis, &c, &[a, b])?;
            println!(
                "{:>9} {:>9.4} {:>9.3} {:>9.4} {:>9.3}",
                format!("{a}+{b}"),
                r.distance_fro,
                r.bound_fro.bound,
                r.distance_l2,
                r.bound_l2.bound
            );
        }
    }
    Ok(())
}
