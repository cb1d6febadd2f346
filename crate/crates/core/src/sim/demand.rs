use serde::{Deserialize, Serialize};

use super::topology::{Movement, Topology};
use crate::error::{Error, Result};

/// Constant arrival rate over `[start, end)` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateWindow {
    pub start: f64,
    pub end: f64,
    /// vehicles per second
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LaneDemand {
    /// Poisson arrivals with a piecewise-constant rate; outside every window
    /// the rate is zero.
    Poisson { windows: Vec<RateWindow> },
    /// Explicit spawn times in seconds, nondecreasing.
    Schedule { times: Vec<f64> },
}

impl LaneDemand {
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            LaneDemand::Poisson { windows } => windows
                .iter()
                .find(|w| t >= w.start && t < w.end)
                .map_or(0.0, |w| w.rate),
            LaneDemand::Schedule { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub lanes: Vec<LaneDemand>,
    /// Offset mixed into the episode seed for the arrival stream.
    #[serde(default)]
    pub stream: u64,
}

/// Parameters of the default piecewise-constant demand with a mid-episode
/// surge. Rates are vehicles per second per lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurgeDemand {
    pub through_rate: f64,
    pub turn_rate: f64,
    pub surge_factor: f64,
    pub surge_start: f64,
    pub surge_end: f64,
    pub horizon: f64,
}

impl Default for SurgeDemand {
    fn default() -> Self {
        SurgeDemand {
            through_rate: 0.06,
            turn_rate: 0.03,
            surge_factor: 1.5,
            surge_start: 1200.0,
            surge_end: 2400.0,
            horizon: 3600.0,
        }
    }
}

impl DemandProfile {
    pub fn zero(topology: &Topology) -> Self {
        DemandProfile {
            lanes: vec![LaneDemand::Poisson { windows: vec![] }; topology.num_lanes()],
            stream: 0,
        }
    }

    /// Through lanes get `through_rate`, every other movement `turn_rate`;
    /// both are multiplied by `surge_factor` inside the surge window.
    pub fn surge(topology: &Topology, p: &SurgeDemand) -> Self {
        let lanes = topology
            .lanes
            .iter()
            .map(|lane| {
                let base = if lane.movement == Movement::Through {
                    p.through_rate
                } else {
                    p.turn_rate
                };
                LaneDemand::Poisson {
                    windows: vec![
                        RateWindow {
                            start: 0.0,
                            end: p.surge_start,
                            rate: base,
                        },
                        RateWindow {
                            start: p.surge_start,
                            end: p.surge_end,
                            rate: base * p.surge_factor,
                        },
                        RateWindow {
                            start: p.surge_end,
                            end: p.horizon,
                            rate: base,
                        },
                    ],
                }
            })
            .collect();
        DemandProfile { lanes, stream: 0 }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if self.lanes.len() != topology.num_lanes() {
            return Err(Error::Demand(format!(
                "{} lane entries for a topology with {} lanes",
                self.lanes.len(),
                topology.num_lanes()
            )));
        }
        for (id, lane) in self.lanes.iter().enumerate() {
            match lane {
                LaneDemand::Poisson { windows } => {
                    for w in windows {
                        if !(w.rate >= 0.0 && w.rate.is_finite()) {
                            return Err(Error::Demand(format!(
                                "lane {id}: rate {} must be >= 0",
                                w.rate
                            )));
                        }
                        if w.end < w.start {
                            return Err(Error::Demand(format!(
                                "lane {id}: window [{}, {}) is reversed",
                                w.start, w.end
                            )));
                        }
                    }
                }
                LaneDemand::Schedule { times } => {
                    if times.windows(2).any(|p| p[1] < p[0]) {
                        return Err(Error::Demand(format!(
                            "lane {id}: spawn times must be nondecreasing"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::topology::{build_topology, Preset, TopologyConfig};

    #[test]
    fn surge_window_multiplies_rate() {
        let t = build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap();
        let d = DemandProfile::surge(&t, &SurgeDemand::default());
        d.validate(&t).unwrap();
        assert_eq!(d.lanes[0].rate_at(10.0), 0.06);
        assert!((d.lanes[0].rate_at(1500.0) - 0.09).abs() < 1e-15);
        assert_eq!(d.lanes[1].rate_at(2400.0), 0.03);
        assert_eq!(d.lanes[1].rate_at(3600.0), 0.0);
    }

    #[test]
    fn validation_catches_bad_entries() {
        let t = build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap();
        let mut d = DemandProfile::zero(&t);
        d.lanes[2] = LaneDemand::Schedule {
            times: vec![5.0, 3.0],
        };
        assert!(d.validate(&t).is_err());
        d.lanes[2] = LaneDemand::Poisson {
            windows: vec![RateWindow {
                start: 0.0,
                end: 10.0,
                rate: -1.0,
            }],
        };
        assert!(d.validate(&t).is_err());
        d.lanes.pop();
        assert!(d.validate(&t).is_err());
    }
}
