//! The `gridflow` command line.
//!
//! Every subcommand reads an optional JSON run configuration (`--config`),
//! applies its own flags on top, and stamps outputs with a hash of the
//! resulting effective configuration.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case_io::{load_case, parse_matpower_case_with, read_dataset, write_dataset, GridCase, ParseOptions};
use crate::experiments::{
    congestion_classify, evaluate, topology_transfer, train, write_json_report, CongestionConfig, ExperimentError, ModelKind,
    TrainConfig,
};
use crate::grid_model::{build_linalg, rank_one_inverse_update, GridError, GridLinAlg};
use crate::nn::{load_model, save_model, FrMode};
use crate::opf::{generate_dataset_on, SampleSpec};
use crate::spectral::{analyze_outage, choose_subspace_dim, eigendecompose_spd, separation_constants, SpectralScenario};

/// Settings for the transfer subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSettings {
    /// Outage scenarios, each a list of case branch indices.
    pub scenarios: Vec<Vec<usize>>,
    /// Samples regenerated on each post-outage topology.
    pub samples: usize,
    pub subspace_dim: Option<usize>,
    pub max_epochs: usize,
}

impl Default for TransferSettings {
    fn default() -> Self {
        TransferSettings { scenarios: Vec::new(), samples: 4000, subspace_dim: None, max_epochs: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSettings {
    /// Leading-subspace dimension; the 50%-energy rule when absent.
    pub s: Option<usize>,
    /// Explicit outage scenarios; every non-bridge single line when empty.
    pub scenarios: Vec<Vec<usize>>,
}

impl Default for SpectralSettings {
    fn default() -> Self {
        SpectralSettings { s: None, scenarios: Vec::new() }
    }
}

/// Everything a run needs, as read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub case: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Directory for reports named after the subcommand and run id.
    pub out_dir: Option<PathBuf>,
    /// Accept non-positive branch reactances by taking their magnitude.
    pub abs_reactance: bool,
    pub sample: SampleSpec,
    pub train: TrainConfig,
    pub congestion: CongestionSettings,
    pub transfer: TransferSettings,
    pub spectral: SpectralSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CongestionSettings {
    pub top_k: usize,
    pub threshold: f64,
    pub balance_classes: bool,
}

impl Default for CongestionSettings {
    fn default() -> Self {
        let c = CongestionConfig::default();
        CongestionSettings { top_k: c.top_k, threshold: c.threshold, balance_classes: c.balance_classes }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::BadConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))?;
        let cfg = RunConfig::from_json(&text)?;
        for p in [&cfg.case, &cfg.dataset, &cfg.model].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::BadConfig(format!("path {} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl<E: Into<ExperimentError>> From<E> for Box<CliError>
where
    E: std::error::Error,
{
    fn from(e: E) -> Self {
        Box::new(CliError::Experiment(e.into()))
    }
}

#[derive(Parser, Debug)]
#[command(name = "gridflow", about = "Learn OPF prices with topology-masked graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// MATPOWER case file.
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    /// Directory for JSON reports named `<subcommand>-<run id>.json`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Explicit report path (overrides --out-dir naming).
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Seed for sampling and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a randomized dc-OPF dataset.
    GenData {
        /// Number of samples.
        #[arg(long)]
        samples: Option<usize>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated case branches to take out of service first.
        #[arg(long, value_delimiter = ',')]
        outage: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a GNN or FCNN price predictor.
    Train {
        /// Dataset CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path to write.
        #[arg(long)]
        out: PathBuf,
        /// Model family: gnn or fcnn.
        #[arg(long)]
        model: Option<String>,
        /// Flow-limit penalty: none, dc or ac.
        #[arg(long)]
        fr: Option<String>,
        /// Maximum epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on every row of a dataset.
    Eval {
        /// Dataset CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint to evaluate.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the binding-line classifier and report recall/F1.
    Congestion {
        /// Dataset CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of most frequently binding lines to classify.
        #[arg(long)]
        top_k: Option<usize>,
        /// Optional checkpoint path for the classifier.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Transfer a trained GNN to post-outage topologies.
    Transfer {
        /// Trained GNN checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated outaged branches; repeat for several scenarios.
        #[arg(long, action = clap::ArgAction::Append)]
        outage: Vec<String>,
        /// Samples generated on each post-outage topology.
        #[arg(long)]
        samples: Option<usize>,
        /// Maximum retraining epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Subspace distances and perturbation bounds for line outages.
    Spectral {
        /// Leading-subspace dimension (default: 50%-energy rule).
        #[arg(long)]
        s: Option<usize>,
        /// Comma-separated outaged branches; repeat for several scenarios.
        #[arg(long, action = clap::ArgAction::Append)]
        outage: Vec<String>,
        /// CSV path for the per-scenario table.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the version.
    Version,
}

fn parse_scenario(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<usize>().map_err(|e| CliError::BadConfig(format!("outage {s:?}: {e}"))))
        .collect()
}

fn base_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = &common.case {
        cfg.case = Some(c.clone());
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    if let Some(s) = common.seed {
        cfg.sample.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf, CliError> {
    p.as_ref().ok_or_else(|| CliError::BadConfig(format!("no {what} given (flag or config)")))
}

fn read_case(cfg: &RunConfig) -> Result<GridCase, Box<CliError>> {
    let path = need(&cfg.case, "case file")?;
    if cfg.abs_reactance {
        let text = std::fs::read_to_string(path).map_err(crate::case_io::CaseError::from)?;
        Ok(parse_matpower_case_with(&text, ParseOptions { abs_reactance: true })?)
    } else {
        Ok(load_case(path)?)
    }
}

fn write_report<T: Serialize>(cfg: &RunConfig, common: &Common, name: &str, hash: &str, body: &T) -> Result<(), Box<CliError>> {
    let path = match (&common.report, &cfg.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join(format!("{name}-{}.json", &hash[..12])),
        (None, None) => return Ok(()),
    };
    let wrapped = serde_json::json!({ "config_hash": hash, "config": cfg, name: body });
    write_json_report(&path, &wrapped)?;
    println!("report: {}", path.display());
    Ok(())
}

fn parse_fr(s: &str) -> Result<FrMode, CliError> {
    match s {
        "none" => Ok(FrMode::None),
        "dc" => Ok(FrMode::Dc),
        "ac" => Ok(FrMode::Ac),
        _ => Err(CliError::BadConfig(format!("unknown flow penalty {s:?} (none, dc, ac)"))),
    }
}

fn scenario_table(rows: &[SpectralScenario]) -> String {
    let mut out = String::from("outage,s,delta,delta_prime,delta_norm_fro,delta_norm_l2,distance_fro,distance_l2,bound_fro,inverse_term_fro,laplacian_term_fro,bound_l2,inverse_term_l2,laplacian_term_l2\n");
    for r in rows {
        let name = r.outaged_branches.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("+");
        out.push_str(&format!(
            "{name},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.s,
            r.delta,
            r.delta_prime,
            r.bound_fro.delta_norm,
            r.bound_l2.delta_norm,
            r.distance_fro,
            r.distance_l2,
            r.bound_fro.bound,
            r.bound_fro.inverse_term,
            r.bound_fro.laplacian_term,
            r.bound_l2.bound,
            r.bound_l2.inverse_term,
            r.bound_l2.laplacian_term
        ));
    }
    out
}

fn non_bridge_singles(grid: &GridLinAlg) -> Vec<Vec<usize>> {
    grid.lines()
        .iter()
        .filter(|l| !matches!(rank_one_inverse_update(grid, l.branch), Err(GridError::BridgeLine { .. })))
        .map(|l| vec![l.branch])
        .collect()
}

fn dispatch(cmd: Command) -> Result<(), Box<CliError>> {
    match cmd {
        Command::Version => {
            println!("gridflow {}", env!("CARGO_PKG_VERSION"));
        }
        Command::GenData { samples, out, outage, common } => {
            let mut cfg = base_config(&common)?;
            if let Some(n) = samples {
                cfg.sample.n_samples = n;
            }
            let case = read_case(&cfg)?;
            let hash = cfg.hash();
            let mut data = generate_dataset_on(&case, &outage, &cfg.sample)?;
            data.header.config_hash = Some(hash.clone());
            write_dataset(&out, &data)?;
            println!("{} samples ({} rejected draws) -> {}", data.len(), data.header.rejected, out.display());
            write_report(&cfg, &common, "gen-data", &hash, &data.header)?;
        }
        Command::Train { data, out, model, fr, epochs, common } => {
            let mut cfg = base_config(&common)?;
            if let Some(d) = data {
                cfg.dataset = Some(d);
            }
            if let Some(m) = model {
                cfg.train.model = match m.as_str() {
                    "gnn" => ModelKind::Gnn,
                    "fcnn" => ModelKind::Fcnn,
                    _ => return Err(Box::new(CliError::BadConfig(format!("unknown model {m:?} (gnn, fcnn)")))),
                };
            }
            if let Some(f) = fr {
                cfg.train.loss.fr_mode = parse_fr(&f)?;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            let grid = build_linalg(&read_case(&cfg)?)?;
            let dataset = read_dataset(need(&cfg.dataset, "dataset")?)?;
            let hash = cfg.hash();
            let mut outcome = train(&dataset, &grid, &cfg.train)?;
            outcome.model.meta["config_hash"] = hash.clone().into();
            save_model(&out, &outcome.model).map_err(ExperimentError::from)?;
            let r = &outcome.report;
            println!(
                "nmse_pi {:.4e} (std {:.4e})  nmse_g {:.4e}  violation {:.4e}  epochs {}  {:.1}s",
                r.nmse_pi, r.std_pi, r.nmse_g, r.feasibility_violation, r.epochs, outcome.seconds
            );
            write_report(&cfg, &common, "train", &hash, &serde_json::json!({ "test": r, "history": outcome.history }))?;
        }
        Command::Eval { data, model, common } => {
            let mut cfg = base_config(&common)?;
            if let Some(d) = data {
                cfg.dataset = Some(d);
            }
            if let Some(m) = model {
                cfg.model = Some(m);
            }
            let grid = build_linalg(&read_case(&cfg)?)?;
            let dataset = read_dataset(need(&cfg.dataset, "dataset")?)?;
            let file = load_model(need(&cfg.model, "model checkpoint")?).map_err(ExperimentError::from)?;
            let r = evaluate(&file, &dataset, &grid)?;
            println!(
                "{} samples: nmse_pi {:.4e} (std {:.4e})  nmse_g {:.4e}  violation {:.4e}",
                r.n_samples, r.nmse_pi, r.std_pi, r.nmse_g, r.feasibility_violation
            );
            write_report(&cfg, &common, "eval", &cfg.hash(), &r)?;
        }
        Command::Congestion { data, top_k, out, common } => {
            let mut cfg = base_config(&common)?;
            if let Some(d) = data {
                cfg.dataset = Some(d);
            }
            if let Some(k) = top_k {
                cfg.congestion.top_k = k;
            }
            let grid = build_linalg(&read_case(&cfg)?)?;
            let dataset = read_dataset(need(&cfg.dataset, "dataset")?)?;
            let cc = CongestionConfig {
                train: cfg.train.clone(),
                top_k: cfg.congestion.top_k,
                threshold: cfg.congestion.threshold,
                balance_classes: cfg.congestion.balance_classes,
            };
            let outcome = congestion_classify(&dataset, &grid, &cc)?;
            println!("{:>6} {:>6} {:>7} {:>7} {:>7}", "line", "branch", "freq", "recall", "f1");
            for m in &outcome.report.lines {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
                println!("{:>6} {:>6} {:>7.3} {:>7} {:>7}", m.line, m.branch, m.train_frequency, f(m.recall), f(m.f1));
            }
            println!("macro recall {:.3}  f1 {:.3}  epochs {}", outcome.report.recall, outcome.report.f1, outcome.report.epochs);
            let hash = cfg.hash();
            if let Some(p) = out {
                let mut m = outcome.model.clone();
                m.meta["config_hash"] = hash.clone().into();
                save_model(&p, &m).map_err(ExperimentError::from)?;
            }
            write_report(&cfg, &common, "congestion", &hash, &outcome.report)?;
        }
        Command::Transfer { model, outage, samples, epochs, common } => {
            let mut cfg = base_config(&common)?;
            if let Some(m) = model {
                cfg.model = Some(m);
            }
            if !outage.is_empty() {
                cfg.transfer.scenarios = outage.iter().map(|s| parse_scenario(s)).collect::<Result<_, _>>()?;
            }
            if let Some(n) = samples {
                cfg.transfer.samples = n;
            }
            if let Some(e) = epochs {
                cfg.transfer.max_epochs = e;
            }
            if cfg.transfer.scenarios.is_empty() {
                return Err(Box::new(CliError::BadConfig("no outage scenario given".into())));
            }
            let case = read_case(&cfg)?;
            let grid = build_linalg(&case)?;
            let file = load_model(need(&cfg.model, "model checkpoint")?).map_err(ExperimentError::from)?;
            let hash = cfg.hash();
            let retrain = TrainConfig { max_epochs: cfg.transfer.max_epochs, ..cfg.train.clone() };
            let mut reports = Vec::new();
            for outaged in &cfg.transfer.scenarios {
                let spec = SampleSpec { n_samples: cfg.transfer.samples, ..cfg.sample.clone() };
                let data = generate_dataset_on(&case, outaged, &spec)?;
                let o = topology_transfer(&file, &grid, outaged, &data, &retrain, cfg.transfer.subspace_dim)?;
                let r = &o.report;
                println!(
                    "{:>10}: nmse_pi pre {:.4e} re {:.4e}  epochs {}  d_F {:.4}  bound_F {:.3}  dH {:.4}  {:.1}s",
                    r.scenario,
                    r.pre_trained.nmse_pi,
                    r.re_trained.nmse_pi,
                    r.retrain_epochs,
                    r.spectral.distance_fro,
                    r.spectral.bound_fro.bound,
                    r.delta_h,
                    o.retrain_seconds
                );
                reports.push(o.report);
            }
            write_report(&cfg, &common, "transfer", &hash, &reports)?;
        }
        Command::Spectral { s, outage, csv, common } => {
            let mut cfg = base_config(&common)?;
            if s.is_some() {
                cfg.spectral.s = s;
            }
            if !outage.is_empty() {
                cfg.spectral.scenarios = outage.iter().map(|o| parse_scenario(o)).collect::<Result<_, _>>()?;
            }
            let grid = build_linalg(&read_case(&cfg)?)?;
            let basis = eigendecompose_spd(grid.b_inv()).map_err(ExperimentError::from)?;
            let choice = choose_subspace_dim(&basis, 0.5);
            let s = cfg.spectral.s.unwrap_or(choice.s);
            let constants = separation_constants(&basis, s).map_err(ExperimentError::from)?;
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
            println!(
                "s = {s} (energy rule: {} at {:.3})  delta {:.4e}  delta' {:.4e}  interior delta {}  delta' {}",
                choice.s,
                choice.energy,
                constants.delta,
                constants.delta_prime,
                opt(constants.delta_interior),
                opt(constants.delta_prime_interior)
            );
            let scenarios = if cfg.spectral.scenarios.is_empty() { non_bridge_singles(&grid) } else { cfg.spectral.scenarios.clone() };
            let rows = scenarios
                .iter()
                .map(|sc| analyze_outage(&grid, &basis, &constants, sc))
                .collect::<Result<Vec<_>, _>>()
                .map_err(ExperimentError::from)?;
            let table = scenario_table(&rows);
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(table.as_bytes()).ok();
            if let Some(p) = csv {
                crate::case_io::write_atomic(&p, table.as_bytes()).map_err(ExperimentError::from)?;
            }
            let hash = cfg.hash();
            write_report(&cfg, &common, "spectral", &hash, &serde_json::json!({ "constants": constants, "scenarios": rows }))?;
        }
    }
    Ok(())
}

/// Run the command line; returns the process exit code
/// (0 success, 1 usage or configuration error, 2 runtime error).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match *e {
                CliError::BadConfig(_) | CliError::Experiment(ExperimentError::BadConfig(_)) => 1,
                CliError::Experiment(_) => 2,
            }
        }
    }
}
