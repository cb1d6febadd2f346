use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default yellow interval inserted on every phase change, in seconds.
pub const DEFAULT_YELLOW: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    North,
    South,
    East,
    West,
}

impl Approach {
    pub fn label(self) -> &'static str {
        match self {
            Approach::North => "Northern",
            Approach::South => "Southern",
            Approach::East => "Eastern",
            Approach::West => "Western",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Movement {
    Through,
    Left,
    Right,
    UTurn,
}

impl Movement {
    pub fn label(self) -> &'static str {
        match self {
            Movement::Through => "through",
            Movement::Left => "left-turn",
            Movement::Right => "right-turn",
            Movement::UTurn => "u-turn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub approach: Approach,
    pub movement: Movement,
    /// Meters from entry to stop line.
    pub road_length: f64,
    /// m/s
    pub free_flow_speed: f64,
    /// Seconds between consecutive departures at saturation.
    #[serde(default = "default_headway")]
    pub saturation_headway: f64,
}

fn default_headway() -> f64 {
    2.0
}

impl Lane {
    pub fn new(approach: Approach, movement: Movement) -> Self {
        Lane {
            approach,
            movement,
            road_length: 300.0,
            free_flow_speed: 10.0,
            saturation_headway: default_headway(),
        }
    }

    pub fn free_flow_time(&self) -> f64 {
        self.road_length / self.free_flow_speed
    }

    /// Human-readable name, e.g. "Eastern through".
    pub fn name(&self) -> String {
        format!("{} {}", self.approach.label(), self.movement.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub index: usize,
    pub mnemonic: String,
    pub description: String,
    pub allowed_lanes: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub approaches: Vec<Approach>,
    pub lanes: Vec<Lane>,
    pub phases: Vec<PhaseSpec>,
    pub yellow_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Four approaches, through and left lanes, eight phases.
    Toy8,
    /// Four approaches, four combined-movement phases.
    Toy4,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Toy8 => f.write_str("toy8"),
            Preset::Toy4 => f.write_str("toy4"),
        }
    }
}

/// Phase entry of an explicit topology config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub mnemonic: String,
    pub description: String,
    pub lanes: Vec<usize>,
}

/// The `[topology]` table of an experiment config: either a preset or an
/// explicit lane and phase list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub yellow_duration: Option<f64>,
    #[serde(default)]
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub phases: Vec<PhaseConfig>,
}

impl TopologyConfig {
    pub fn preset(p: Preset) -> Self {
        TopologyConfig {
            preset: Some(p),
            ..Default::default()
        }
    }
}

impl Topology {
    pub fn num_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn phase_by_mnemonic(&self, mnemonic: &str) -> Option<usize> {
        self.phases.iter().position(|p| p.mnemonic == mnemonic)
    }

    pub fn check_phase(&self, index: usize) -> Result<()> {
        if index < self.phases.len() {
            Ok(())
        } else {
            Err(Error::PhaseOutOfRange {
                index,
                count: self.phases.len(),
            })
        }
    }

    /// Lanes in a phase's allowed set, in lane-id order.
    pub fn phase_lanes(&self, phase: usize) -> impl Iterator<Item = usize> + '_ {
        self.phases[phase].allowed_lanes.iter().copied()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Topology(msg));
        if self.lanes.is_empty() {
            return bad("topology has no lanes".into());
        }
        if self.phases.is_empty() {
            return bad("topology has no phases".into());
        }
        if !(self.yellow_duration >= 0.0 && self.yellow_duration.is_finite()) {
            return bad(format!("yellow_duration {} must be >= 0", self.yellow_duration));
        }
        for (id, lane) in self.lanes.iter().enumerate() {
            for (name, v) in [
                ("road_length", lane.road_length),
                ("free_flow_speed", lane.free_flow_speed),
                ("saturation_headway", lane.saturation_headway),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("lane {id}: {name} must be > 0, got {v}"));
                }
            }
        }
        let mut seen = HashSet::new();
        let mut covered = vec![false; self.lanes.len()];
        for (i, phase) in self.phases.iter().enumerate() {
            if phase.index != i {
                return bad(format!(
                    "phase `{}` has index {} but sits at position {i}",
                    phase.mnemonic, phase.index
                ));
            }
            if phase.mnemonic.is_empty() {
                return bad(format!("phase {i} has an empty mnemonic"));
            }
            if !seen.insert(phase.mnemonic.as_str()) {
                return bad(format!("duplicate phase mnemonic `{}`", phase.mnemonic));
            }
            if phase.allowed_lanes.is_empty() {
                return bad(format!("phase `{}` serves no lanes", phase.mnemonic));
            }
            for &lane in &phase.allowed_lanes {
                match covered.get_mut(lane) {
                    Some(c) => *c = true,
                    None => {
                        return bad(format!(
                            "phase `{}` references missing lane {lane}",
                            phase.mnemonic
                        ))
                    }
                }
            }
        }
        if let Some(lane) = covered.iter().position(|c| !c) {
            return bad(format!("lane {lane} is not served by any phase"));
        }
        Ok(())
    }
}

fn phase(index: usize, mnemonic: &str, description: &str, lanes: &[usize]) -> PhaseSpec {
    PhaseSpec {
        index,
        mnemonic: mnemonic.to_string(),
        description: description.to_string(),
        allowed_lanes: lanes.iter().copied().collect(),
    }
}

const COMPASS: [Approach; 4] = [
    Approach::North,
    Approach::South,
    Approach::East,
    Approach::West,
];

fn toy8() -> Topology {
    // lane ids: N-through 0, N-left 1, S-through 2, S-left 3,
    //           E-through 4, E-left 5, W-through 6, W-left 7
    let lanes = COMPASS
        .iter()
        .flat_map(|&a| [Lane::new(a, Movement::Through), Lane::new(a, Movement::Left)])
        .collect();
    let phases = vec![
        phase(0, "NTST", "Northern and southern through lanes", &[0, 2]),
        phase(1, "NLSL", "Northern and southern left-turn lanes", &[1, 3]),
        phase(2, "NTNL", "Northern through and left-turn lanes", &[0, 1]),
        phase(3, "STSL", "Southern through and left-turn lanes", &[2, 3]),
        phase(4, "ETWT", "Eastern and western through lanes", &[4, 6]),
        phase(5, "ELWL", "Eastern and western left-turn lanes", &[5, 7]),
        phase(6, "ETEL", "Eastern through and left-turn lanes", &[4, 5]),
        phase(7, "WTWL", "Western through and left-turn lanes", &[6, 7]),
    ];
    Topology {
        approaches: COMPASS.to_vec(),
        lanes,
        phases,
        yellow_duration: DEFAULT_YELLOW,
    }
}

fn toy4() -> Topology {
    // per approach: u-turn, through, right, left (ids 4a .. 4a+3)
    let lanes = COMPASS
        .iter()
        .flat_map(|&a| {
            [
                Lane::new(a, Movement::UTurn),
                Lane::new(a, Movement::Through),
                Lane::new(a, Movement::Right),
                Lane::new(a, Movement::Left),
            ]
        })
        .collect();
    let all = |a: usize| [4 * a, 4 * a + 1, 4 * a + 2, 4 * a + 3];
    let no_right = |a: usize| [4 * a, 4 * a + 1, 4 * a + 3];
    let join = |x: &[usize], y: &[usize]| x.iter().chain(y).copied().collect::<Vec<_>>();
    let phases = vec![
        phase(
            0,
            "NUTRLSUTRL",
            "Northern and southern U-turn, through, right-turn and left-turn lanes",
            &join(&all(0), &all(1)),
        ),
        phase(
            1,
            "NUTLSUTL",
            "Northern and southern U-turn, through, and left-turn lanes",
            &join(&no_right(0), &no_right(1)),
        ),
        phase(
            2,
            "EUTRLWUTRL",
            "Eastern and western U-turn, through, right-turn and left-turn lanes",
            &join(&all(2), &all(3)),
        ),
        phase(
            3,
            "EUTLWUTL",
            "Eastern and western U-turn, through, and left-turn lanes",
            &join(&no_right(2), &no_right(3)),
        ),
    ];
    Topology {
        approaches: COMPASS.to_vec(),
        lanes,
        phases,
        yellow_duration: DEFAULT_YELLOW,
    }
}

/// Builds a validated topology from a preset or an explicit lane/phase list.
pub fn build_topology(config: &TopologyConfig) -> Result<Topology> {
    let mut topo = match config.preset {
        Some(Preset::Toy8) => toy8(),
        Some(Preset::Toy4) => toy4(),
        None => {
            let approaches = {
                let mut seen = Vec::new();
                for lane in &config.lanes {
                    if !seen.contains(&lane.approach) {
                        seen.push(lane.approach);
                    }
                }
                seen
            };
            Topology {
                approaches,
                lanes: config.lanes.clone(),
                phases: config
                    .phases
                    .iter()
                    .enumerate()
                    .map(|(i, p)| phase(i, &p.mnemonic, &p.description, &p.lanes))
                    .collect(),
                yellow_duration: DEFAULT_YELLOW,
            }
        }
    };
    if config.preset.is_some() && (!config.lanes.is_empty() || !config.phases.is_empty()) {
        return Err(Error::Topology(
            "give either a preset or explicit lanes/phases, not both".into(),
        ));
    }
    if let Some(y) = config.yellow_duration {
        topo.yellow_duration = y;
    }
    topo.validate()?;
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy8_matches_cityflow_mnemonics() {
        let t = build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap();
        assert_eq!(t.num_phases(), 8);
        assert_eq!(t.num_lanes(), 8);
        let names: Vec<_> = t.phases.iter().map(|p| p.mnemonic.as_str()).collect();
        assert_eq!(
            names,
            ["NTST", "NLSL", "NTNL", "STSL", "ETWT", "ELWL", "ETEL", "WTWL"]
        );
        // ETWT serves eastern and western through
        let lanes: Vec<_> = t.phase_lanes(4).map(|l| t.lanes[l].name()).collect();
        assert_eq!(lanes, ["Eastern through", "Western through"]);
    }

    #[test]
    fn toy4_matches_cologne_mnemonics() {
        let t = build_topology(&TopologyConfig::preset(Preset::Toy4)).unwrap();
        let names: Vec<_> = t.phases.iter().map(|p| p.mnemonic.as_str()).collect();
        assert_eq!(names, ["NUTRLSUTRL", "NUTLSUTL", "EUTRLWUTRL", "EUTLWUTL"]);
        assert_eq!(t.phases[0].allowed_lanes.len(), 8);
        assert_eq!(t.phases[1].allowed_lanes.len(), 6);
    }

    fn explicit(phases: Vec<PhaseConfig>) -> TopologyConfig {
        TopologyConfig {
            preset: None,
            yellow_duration: Some(3.0),
            lanes: vec![
                Lane::new(Approach::North, Movement::Through),
                Lane::new(Approach::East, Movement::Through),
            ],
            phases,
        }
    }

    #[test]
    fn explicit_config_builds() {
        let cfg = explicit(vec![
            PhaseConfig {
                mnemonic: "NT".into(),
                description: "Northern through".into(),
                lanes: vec![0],
            },
            PhaseConfig {
                mnemonic: "ET".into(),
                description: "Eastern through".into(),
                lanes: vec![1],
            },
        ]);
        let t = build_topology(&cfg).unwrap();
        assert_eq!(t.yellow_duration, 3.0);
        assert_eq!(t.approaches, vec![Approach::North, Approach::East]);
    }

    #[test]
    fn phase_with_missing_lane_is_rejected() {
        let cfg = explicit(vec![
            PhaseConfig {
                mnemonic: "NT".into(),
                description: "n".into(),
                lanes: vec![0, 1],
            },
            PhaseConfig {
                mnemonic: "XX".into(),
                description: "x".into(),
                lanes: vec![5],
            },
        ]);
        let err = build_topology(&cfg).unwrap_err().to_string();
        assert!(err.contains("missing lane 5"), "{err}");
    }

    #[test]
    fn invariant_violations_are_named() {
        let mut cfg = explicit(vec![
            PhaseConfig {
                mnemonic: "NT".into(),
                description: "n".into(),
                lanes: vec![0],
            },
            PhaseConfig {
                mnemonic: "NT".into(),
                description: "dup".into(),
                lanes: vec![1],
            },
        ]);
        assert!(build_topology(&cfg).unwrap_err().to_string().contains("duplicate"));

        cfg.phases[1].mnemonic = "ET".into();
        cfg.phases[1].lanes = vec![0];
        assert!(build_topology(&cfg)
            .unwrap_err()
            .to_string()
            .contains("lane 1 is not served"));

        cfg.phases[1].lanes = vec![];
        assert!(build_topology(&cfg).unwrap_err().to_string().contains("serves no lanes"));

        cfg.phases[1].lanes = vec![1];
        cfg.lanes[0].road_length = 0.0;
        assert!(build_topology(&cfg).unwrap_err().to_string().contains("road_length"));

        cfg.lanes[0].road_length = 100.0;
        cfg.yellow_duration = Some(-1.0);
        assert!(build_topology(&cfg).unwrap_err().to_string().contains("yellow"));
    }
}
