//! Push prices through the latent chain: injections by hard and soft
//! projection, then dc line flows, on the IEEE 14-bus base case.
//!
//! `cargo run --example projection_chain`

use gridflow::case_io::load_case;
use gridflow::grid_model::build_linalg;
use gridflow::nn::chain::{latent_chain_dc, ChainGrid};
use gridflow::nn::{hard_projection, soft_projection, BatchCosts, Graph, Projection};
use gridflow::opf::{node_params, solve_dcopf, DcOpfInstance, DEFAULT_CURVATURE};
use nalgebra::DMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("scalar projection of r = (π − b)/2a onto [0, 3] with a = 1, b = 0:");
    for pi in [-2.0, 0.1, 4.0, 5.98, 6.0, 6.02, 10.0] {
        let soft: Vec<String> =
            [10.0, 100.0, 1000.0].iter().map(|k| format!("{:.4}", soft_projection(pi, 1.0, 0.0, 0.0, 3.0, *k))).collect();
        println!("  π = {pi:>5}: hard {:.4}  soft(k = 10, 100, 1000) {}", hard_projection(pi, 1.0, 0.0, 0.0, 3.0), soft.join(" "));
    }

    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pglib_opf_case14_ieee.m"))?;
    let grid = build_linalg(&case)?;
    let nodes = node_params(&case, None, None, DEFAULT_CURVATURE)?;
    let inst = DcOpfInstance::new(&grid, &nodes)?;
    let sol = solve_dcopf(&inst)?;

    // exact prices reproduce the optimal injections and flows
    let row = |v: &[f64]| DMatrix::from_row_slice(1, v.len(), v);
    let costs = BatchCosts { a: row(&inst.a), b: row(&inst.b), p_min: row(&inst.p_min), p_max: row(&inst.p_max) };
    let cg = ChainGrid::new(&grid);
    for mode in [Projection::Hard, Projection::Soft(100.0)] {
        let mut g = Graph::new();
        let pi = g.leaf(row(&sol.pi_star));
        let out = latent_chain_dc(&mut g, pi, &cg, &costs, mode)?;
        let dp = g.value(out.p).iter().zip(&sol.p_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let df = g.value(out.f).iter().zip(&sol.f_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{mode:?}: max |p̂ − p*| = {dp:.2e}, max |f̂ − f*| = {df:.2e}");
    }
    Ok(())
}
