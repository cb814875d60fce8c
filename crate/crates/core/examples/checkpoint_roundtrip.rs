//! Save a trained model, load it back and confirm the evaluation is
//! reproduced bit for bit.
//!
//! `cargo run --release --example checkpoint_roundtrip`

use gridflow::case_io::load_case;
use gridflow::experiments::{evaluate, train, TrainConfig};
use gridflow::grid_model::build_linalg;
use gridflow::nn::{load_model, save_model};
use gridflow::opf::{generate_dataset, SampleSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pglib_opf_case14_ieee.m"))?;
    let grid = build_linalg(&case)?;
    let data = generate_dataset(&case, &SampleSpec { n_samples: 300, seed: 1, ..Default::default() })?;
    let cfg = TrainConfig { max_epochs: 20, ..Default::default() };
    let out = train(&data, &grid, &cfg)?;

    let path = std::env::temp_dir().join("gridflow-example.ckpt");
    save_model(&path, &out.model)?;
    let loaded = load_model(&path)?;
    let before = evaluate(&out.model, &data, &grid)?;
    let after = evaluate(&loaded, &data, &grid)?;
    println!("checkpoint {} bytes", std::fs::metadata(&path)?.len());
    println!("nmse_pi before {:e} after {:e} identical: {}", before.nmse_pi, after.nmse_pi, before == after);
    std::fs::remove_file(path)?;
    Ok(())
}
