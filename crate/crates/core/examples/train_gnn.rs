//! Train a GNN price predictor on the IEEE 118-bus case, with and without
//! the flow-limit penalty, and compare test metrics.
//!
//! `cargo run --release --example train_gnn -- [n_samples] [seed] [fr_weight]`

use gridflow::case_io::load_case;
use gridflow::experiments::{train, TrainConfig};
use gridflow::grid_model::build_linalg;
use gridflow::nn::FrMode;
use gridflow::opf::{generate_dataset, SampleSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let gamma_fr: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-2);
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pglib_opf_case118_ieee.m"))?;
    let grid = build_linalg(&case)?;
    let t = std::time::Instant::now();
    let data = generate_dataset(&case, &SampleSpec { n_samples: n, seed: 7, ..Default::default() })?;
    println!("{} samples in {:.1?}", data.len(), t.elapsed());

    for (name, mode) in [("gnn", FrMode::None), ("gnn+fr", FrMode::Dc)] {
        let mut cfg = TrainConfig { seed, ..Default::default() };
        cfg.loss.fr_mode = mode;
        cfg.loss.gamma_fr = gamma_fr;
        let out = train(&data, &grid, &cfg)?;
        let r = &out.report;
        println!(
            "{name:>7}: nmse_pi {:.4} (std {:.4})  nmse_g {:.4}  violation {:.3e}  epochs {} (best {})  {:.1}s",
            r.nmse_pi, r.std_pi, r.nmse_g, r.feasibility_violation, r.epochs, out.best_epoch, out.seconds
        );
    }
    Ok(())
}
