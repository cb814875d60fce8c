//! Classify which of the ten most congested IEEE 118-bus lines bind, from
//! the same nodal features the price predictor sees.
//!
//! `cargo run --release --example congestion -- [n_samples] [seed]`

use gridflow::case_io::load_case;
use gridflow::experiments::{congestion_classify, CongestionConfig};
use gridflow::grid_model::build_linalg;
use gridflow::opf::{generate_dataset, SampleSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pglib_opf_case118_ieee.m"))?;
    let grid = build_linalg(&case)?;
    let data = generate_dataset(&case, &SampleSpec { n_samples: n, seed: 7, ..Default::default() })?;

    let mut cfg = CongestionConfig::default();
    cfg.train.seed = seed;
    let out = congestion_classify(&data, &grid, &cfg)?;
    println!("{:>5} {:>7} {:>10} {:>7} {:>7}", "line", "branch", "train freq", "recall", "f1");
    for m in &out.report.lines {
        let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.3}"));
        println!("{:>5} {:>7} {:>10.3} {:>7} {:>7}", m.line, m.branch, m.train_frequency, f(m.recall), f(m.f1));
    }
    println!(
        "macro recall {:.3}, f1 {:.3}, accuracy {:.3} after {} epochs ({:.1}s)",
        out.report.recall, out.report.f1, out.report.accuracy, out.report.epochs, out.seconds
    );
    Ok(())
}
