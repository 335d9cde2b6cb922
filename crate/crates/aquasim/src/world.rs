//! Mutable state owned by one simulation run.

use crate::clone::CloneRegistry;
use crate::metrics::MetricsReport;
use crate::net::{Topology, TransferTable};

pub struct World {
    pub topology: Topology,
    pub clones: CloneRegistry,
    pub metrics: MetricsReport,
    pub(crate) transfers: TransferTable,
    next_flow: u64,
}

impl World {
    pub fn new(topology: Topology, scenario: &str, seed: u64) -> Self {
        World {
            topology,
            clones: CloneRegistry::new(),
            metrics: MetricsReport::new(scenario, seed),
            transfers: TransferTable::default(),
            next_flow: 0,
        }
    }

    /// A world with no scenario attached, for unit-level operations.
    pub fn bare(topology: Topology) -> Self {
        World::new(topology, "unit", 0)
    }

    pub fn next_flow_id(&mut self) -> u64 {
        let id = self.next_flow;
        self.next_flow += 1;
        id
    }
}
