//! Solve the base dc-OPF of the IEEE 118-bus case and decompose the
//! locational marginal prices into energy and congestion components.
//!
//! `cargo run --release --example solve_opf`

use gridflow::case_io::load_case;
use gridflow::grid_model::build_linalg;
use gridflow::opf::{dc_flow_violation, lmp_from_duals, node_params, solve_dcopf, DcOpfInstance, DEFAULT_CURVATURE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pglib_opf_case118_ieee.m"))?;
    let grid = build_linalg(&case)?;
    let nodes = node_params(&case, None, None, DEFAULT_CURVATURE)?;
    let inst = DcOpfInstance::new(&grid, &nodes)?;
    let sol = solve_dcopf(&inst)?;
    println!(
        "objective {:.4}  iterations {}  KKT residual {:.2e}  energy price λ = {:.4}",
        sol.objective, sol.iterations, sol.kkt_residual, sol.lambda
    );

    let binding = sol.binding(&inst.f_max);
    for (l, _) in binding.iter().enumerate().filter(|(_, b)| **b) {
        let line = &grid.lines()[l];
        println!(
            "  binding line {l} ({} -> {}): flow {:+.4} limit {:.4}  shadow prices {:.4}/{:.4}",
            grid.bus_ids()[line.from],
            grid.bus_ids()[line.to],
            sol.f_star[l],
            inst.f_max[l],
            sol.mu_bar[l],
            sol.mu_under[l]
        );
    }
    let (lo, hi) = sol.pi_star.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(*p), b.max(*p)));
    println!("LMP range {lo:.4} .. {hi:.4}");

    let recomputed = lmp_from_duals(&sol, &grid);
    let gap = recomputed.iter().zip(&sol.pi_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("LMP from duals matches: max gap {gap:.2e}");
    println!("flow violation of the optimum: {:.2e}", dc_flow_violation(&sol.p_star, &grid, &inst.f_max).total);
    Ok(())
}
