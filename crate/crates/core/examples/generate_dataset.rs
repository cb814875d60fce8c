//! Generate a small randomized dc-OPF dataset for the IEEE 118-bus case and
//! summarize how often each line binds.
//!
//! `cargo run --release --example generate_dataset -- [n_samples] [out.csv]`

use gridflow::case_io::{load_case, write_dataset};
use gridflow::opf::{generate_dataset, SampleSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pglib_opf_case118_ieee.m"))?;
    let spec = SampleSpec { n_samples: n, seed: 7, ..Default::default() };
    let t = std::time::Instant::now();
    let data = generate_dataset(&case, &spec)?;
    println!("{} samples in {:.2?} ({} rejected draws)", data.len(), t.elapsed(), data.header.rejected);

    let lines = data.header.label_range("binding").expect("binding channel");
    let mut counts = vec![0usize; lines.len()];
    for r in 0..data.len() {
        for (c, v) in data.label_channel(r, "binding").unwrap().iter().enumerate() {
            counts[c] += (*v > 0.5) as usize;
        }
    }
    let mut ranked: Vec<(usize, usize)> = counts.iter().copied().enumerate().filter(|(_, c)| *c > 0).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    println!("{} of {} lines bind at least once", ranked.len(), counts.len());
    for (l, c) in ranked.iter().take(10) {
        println!("  line {:>3} (branch {:>3}): {:5.1}%", l, data.header.line_branches[*l], 100.0 * *c as f64 / data.len() as f64);
    }
    if let Some(path) = args.next() {
        write_dataset(&path, &data)?;
        println!("wrote {path}");
    }
    Ok(())
}
