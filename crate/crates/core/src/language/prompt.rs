use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{LaneObservation, Observation, Topology};

/// Number of past (observation, action) pairs carried in a prompt.
pub const HISTORY_LEN: usize = 2;

/// Per-phase sums over the phase's allowed lanes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounts {
    pub early_queued: u32,
    pub seg1: u32,
    pub seg2: u32,
    pub seg3: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub observation: Observation,
    pub action: usize,
}

/// The initial state of a response: what the policy conditions on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub groups: Vec<PhaseCounts>,
    pub current_phase: usize,
    pub history: Vec<HistoryEntry>,
    /// `N_P · 4` raw counts followed by a one-hot of the current phase.
    pub features: Vec<f64>,
    pub text: String,
}

impl PromptContext {
    pub fn feature_len(num_phases: usize) -> usize {
        num_phases * 5
    }
}

fn check_lanes(observation: &Observation, topology: &Topology) -> Result<()> {
    if observation.len() < topology.num_lanes() {
        return Err(Error::MissingLane(observation.len()));
    }
    Ok(())
}

fn group(observation: &[LaneObservation], topology: &Topology, phase: usize) -> PhaseCounts {
    topology
        .phase_lanes(phase)
        .fold(PhaseCounts::default(), |mut acc, lane| {
            let o = &observation[lane];
            acc.early_queued += o.early_queued;
            acc.seg1 += o.seg1;
            acc.seg2 += o.seg2;
            acc.seg3 += o.seg3;
            acc
        })
}

/// Renders one phase block in the prompt layout.
pub fn render_phase(observation: &[LaneObservation], topology: &Topology, phase: usize) -> String {
    let spec = &topology.phases[phase];
    let lanes: Vec<usize> = topology.phase_lanes(phase).collect();
    let joined = |f: &dyn Fn(&LaneObservation) -> u32| {
        lanes
            .iter()
            .map(|&l| format!("{}: {}", topology.lanes[l].name(), f(&observation[l])))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut s = String::new();
    let _ = writeln!(s, "Phase: {} ({})", spec.mnemonic, spec.description);
    let _ = writeln!(s, "**Early Queued Vehicles**:");
    for &l in &lanes {
        let _ = writeln!(
            s,
            " - {}: {}",
            topology.lanes[l].name(),
            observation[l].early_queued
        );
    }
    let _ = writeln!(s, "**Approaching Vehicles**:");
    let _ = writeln!(s, " - Segment 1: {}", joined(&|o| o.seg1));
    let _ = writeln!(s, " - Segment 2: {}", joined(&|o| o.seg2));
    let _ = writeln!(s, " - Segment 3: {}", joined(&|o| o.seg3));
    s
}

/// Builds the prompt context for one decision. `history` is ordered oldest
/// first; only the last [`HISTORY_LEN`] entries are kept.
pub fn verbalize(
    observation: &Observation,
    topology: &Topology,
    current_phase: usize,
    history: &[HistoryEntry],
) -> Result<PromptContext> {
    check_lanes(observation, topology)?;
    topology.check_phase(current_phase)?;
    let np = topology.num_phases();

    let groups: Vec<PhaseCounts> = (0..np).map(|p| group(observation, topology, p)).collect();
    let mut features = Vec::with_capacity(PromptContext::feature_len(np));
    for g in &groups {
        features.extend([g.early_queued, g.seg1, g.seg2, g.seg3].map(f64::from));
    }
    features.extend((0..np).map(|p| if p == current_phase { 1.0 } else { 0.0 }));

    let keep = history.len().saturating_sub(HISTORY_LEN);
    let history = history[keep..].to_vec();

    let mut text = String::new();
    for (k, h) in history.iter().enumerate() {
        check_lanes(&h.observation, topology)?;
        let ago = history.len() - k;
        let _ = writeln!(
            text,
            "Previous state (t-{ago}); chosen signal {}",
            topology.phases[h.action].mnemonic
        );
        for p in 0..np {
            let g = group(&h.observation, topology, p);
            let _ = writeln!(
                text,
                "  {}: queued {}, segments {}/{}/{}",
                topology.phases[p].mnemonic, g.early_queued, g.seg1, g.seg2, g.seg3
            );
        }
    }
    let _ = writeln!(text, "Current state:");
    for p in 0..np {
        text.push_str(&render_phase(observation, topology, p));
    }
    let _ = writeln!(
        text,
        "Current signal: {}",
        topology.phases[current_phase].mnemonic
    );

    Ok(PromptContext {
        groups,
        current_phase,
        history,
        features,
        text,
    })
}
