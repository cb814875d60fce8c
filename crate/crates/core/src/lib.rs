//! Learning dc/ac optimal-power-flow outputs with topology-masked graph
//! neural networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`case_io`]: MATPOWER case parsing, dataset CSVs and model checkpoints.
//! * [`grid_model`]: incidence, B-bus, ISF matrix, GNN mask, line outages and
//!   the rank-one inverse update.
//! * [`spectral`]: eigenbases of `B⁻¹`, principal-angle distances and
//!   Davis-Kahan style subspace perturbation bounds.
//! * [`opf`]: dc-OPF interior-point solver with dual recovery, LMPs, flow
//!   feasibility checks and randomized dataset generation.
//! * [`nn`]: a small reverse-mode autodiff tape, GNN/FCNN models, the
//!   price → injection → flow latent chain, feasibility penalties and Adam.
//! * [`experiments`]: training, evaluation, congestion classification and
//!   topology transfer.
//! * [`cli`]: the `gridflow` command line.

pub mod case_io;
pub mod cli;
pub mod experiments;
pub mod grid_model;
pub mod nn;
pub mod opf;
pub mod spectral;
mod parallel;
mod topology;

pub use case_io::{load_case, GridCase};
pub use grid_model::GridLinAlg;
