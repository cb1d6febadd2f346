//! Deterministic single-intersection point-queue simulator.
//!
//! Vehicles enter at the far end of a lane, travel at free-flow speed, and
//! stop either at the stop line (red) or behind the queue tail at a fixed jam
//! spacing. A served lane discharges at most one vehicle per saturation
//! headway. Every phase change inserts the topology's yellow interval, during
//! which no lane is served.

mod demand;
mod metrics;
mod state;
mod topology;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use demand::{DemandProfile, LaneDemand, RateWindow, SurgeDemand};
pub use metrics::{Metrics, StepCsv};
pub use state::{
    classify, finalize_metrics, observe, queue_length, set_phase, spawn, step, LaneObservation,
    Observation, SimState, Vehicle, JAM_SPACING, STOPPED_SPEED,
};
pub use topology::{
    build_topology, Approach, Lane, Movement, PhaseConfig, PhaseSpec, Preset, Topology,
    TopologyConfig, DEFAULT_YELLOW,
};

use crate::error::{Error, Result};

/// Simulation step length in seconds.
pub const DT: f64 = 1.0;

/// `[demand]` table: the default surge profile or an explicit per-lane list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DemandConfig {
    Surge(SurgeDemand),
    Explicit(DemandProfile),
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig::Surge(SurgeDemand::default())
    }
}

impl DemandConfig {
    pub fn build(&self, topology: &Topology) -> Result<DemandProfile> {
        let d = match self {
            DemandConfig::Surge(p) => DemandProfile::surge(topology, p),
            DemandConfig::Explicit(d) => d.clone(),
        };
        d.validate(topology)?;
        Ok(d)
    }
}

/// The simulator part of a config file.
///
/// ```toml
/// [topology]
/// preset = "toy8"          # or explicit [[topology.lanes]] / [[topology.phases]]
/// yellow_duration = 5.0
///
/// [demand]
/// kind = "surge"           # or "explicit" with [[demand.lanes]]
/// through_rate = 0.06
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_topology")]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub demand: DemandConfig,
}

fn default_topology() -> TopologyConfig {
    TopologyConfig::preset(Preset::Toy8)
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<(Topology, DemandProfile)> {
        let topo = build_topology(&self.topology)?;
        let demand = self.demand.build(&topo)?;
        Ok((topo, demand))
    }
}

/// Owns a topology, a demand profile, the arrival RNG, and the live state.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub topology: Topology,
    pub demand: DemandProfile,
    pub state: SimState,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(topology: Topology, demand: DemandProfile, seed: u64) -> Result<Self> {
        topology.validate()?;
        demand.validate(&topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(demand.stream);
        let state = SimState::new(&topology);
        Ok(Simulator {
            topology,
            demand,
            state,
            rng,
        })
    }

    /// Spawns the arrivals of the next second, then advances the dynamics.
    /// Returns the departure count.
    pub fn tick(&mut self) -> usize {
        spawn(&mut self.state, &self.topology, &self.demand, DT, &mut self.rng);
        step(&mut self.state, &self.topology, DT)
    }

    pub fn observe(&self) -> Observation {
        observe(&self.state, &self.topology)
    }

    pub fn queue_length(&self) -> f64 {
        queue_length(&self.state, &self.topology)
    }

    pub fn set_phase(&mut self, phase: usize) -> Result<()> {
        set_phase(&mut self.state, &self.topology, phase)
    }

    pub fn metrics(&self) -> Metrics {
        finalize_metrics(&self.state, &self.topology)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_roundtrip() {
        let text = r#"
            [topology]
            preset = "toy4"
            yellow_duration = 3.0

            [demand]
            kind = "surge"
            through_rate = 0.1
        "#;
        let cfg = SimConfig::from_toml_str(text).unwrap();
        let (topo, demand) = cfg.build().unwrap();
        assert_eq!(topo.num_phases(), 4);
        assert_eq!(topo.yellow_duration, 3.0);
        assert_eq!(demand.lanes.len(), 16);
        match &cfg.demand {
            DemandConfig::Surge(p) => {
                assert_eq!(p.through_rate, 0.1);
                assert_eq!(p.turn_rate, SurgeDemand::default().turn_rate);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn explicit_config_file() {
        let text = r#"
            [topology]
            [[topology.lanes]]
            approach = "north"
            movement = "through"
            road_length = 200.0
            free_flow_speed = 10.0
            [[topology.lanes]]
            approach = "east"
            movement = "left"
            road_length = 200.0
            free_flow_speed = 10.0
            saturation_headway = 2.5
            [[topology.phases]]
            mnemonic = "NT"
            description = "Northern through"
            lanes = [0]
            [[topology.phases]]
            mnemonic = "EL"
            description = "Eastern left-turn"
            lanes = [1]

            [demand]
            kind = "explicit"
            [[demand.lanes]]
            kind = "schedule"
            times = [1.0, 2.0]
            [[demand.lanes]]
            kind = "poisson"
            windows = [{ start = 0.0, end = 100.0, rate = 0.2 }]
        "#;
        let cfg = SimConfig::from_toml_str(text).unwrap();
        let (topo, demand) = cfg.build().unwrap();
        assert_eq!(topo.lanes[1].saturation_headway, 2.5);
        assert_eq!(topo.lanes[0].saturation_headway, 2.0);
        assert_eq!(demand.lanes[1].rate_at(50.0), 0.2);
    }

    #[test]
    fn bad_config_names_the_problem() {
        let text = r#"
            [topology]
            preset = "toy9"
        "#;
        assert!(SimConfig::from_toml_str(text).is_err());
    }
}
