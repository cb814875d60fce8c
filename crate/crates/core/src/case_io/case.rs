//! In-memory network description produced by the MATPOWER parser.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    Pq,
    Pv,
    Ref,
}

impl BusKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Ref => 3,
        }
    }
}

/// Bus record, loads in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub pd: f64,
    pub qd: f64,
    pub vmin: f64,
    pub vmax: f64,
}

/// Branch record. `r` and `x` are the series impedance in per-unit,
/// `y_mag` the series admittance magnitude `1/|r + jx|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub y_mag: f64,
    pub rate_a: f64,
    pub in_service: bool,
}

/// Polynomial cost `a p^2 + b p` in per-unit power (constant term dropped).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadCost {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    pub cost: QuadCost,
}

impl Generator {
    pub fn is_dispatchable(&self) -> bool {
        self.pmax > self.pmin
    }
}

/// A validated network. Every quantity is per-unit on `base_mva`; costs are
/// expressed per per-unit of power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Generator>,
    pub ref_bus: usize,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Indices (into `branches`) of in-service branches.
    pub fn live_branches(&self) -> Vec<usize> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.in_service)
            .map(|(i, _)| i)
            .collect()
    }

    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn ref_index(&self) -> usize {
        self.bus_index(self.ref_bus)
            .expect("validated case always contains its reference bus")
    }

    /// Same case with the listed branches switched out of service.
    pub fn with_outages(&self, branches: &[usize]) -> GridCase {
        let mut out = self.clone();
        for &k in branches {
            if let Some(b) = out.branches.get_mut(k) {
                b.in_service = false;
            }
        }
        out
    }
}
