use std::io::Write;

use serde::{Deserialize, Serialize};

use super::state::SimState;
use super::topology::Topology;

/// Episode summary. Travel-time based fields are `None` when no vehicle
/// completed its route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean seconds per completed vehicle.
    pub travel_time: Option<f64>,
    /// Mean over lanes and timesteps of stopped vehicles.
    pub queue_length: f64,
    /// Mean seconds beyond free-flow travel time.
    pub delay_seconds: Option<f64>,
    /// Mean of (actual − free-flow) / actual.
    pub delay_ratio: Option<f64>,
    pub throughput: u64,
    pub injected: u64,
}

impl Metrics {
    pub fn from_state(state: &SimState, topology: &Topology) -> Self {
        let done = state.completed();
        let n = done.len();
        let (mut tt, mut ds, mut dr) = (0.0, 0.0, 0.0);
        for v in done {
            let actual = v.travel_time().expect("completed vehicle has completion time");
            let free = topology.lanes[v.lane].free_flow_time();
            let delay = (actual - free).max(0.0);
            tt += actual;
            ds += delay;
            dr += delay / actual;
        }
        let mean = |x: f64| (n > 0).then(|| x / n as f64);
        Metrics {
            travel_time: mean(tt),
            queue_length: state.mean_queue(),
            delay_seconds: mean(ds),
            delay_ratio: mean(dr),
            throughput: n as u64,
            injected: state.injected_count(),
        }
    }
}

/// Appends one CSV row per simulation step:
/// `time,phase,queue,injected,completed`.
pub struct StepCsv<W: Write> {
    out: W,
}

impl<W: Write> StepCsv<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "time,phase,queue,injected,completed")?;
        Ok(StepCsv { out })
    }

    pub fn record(&mut self, state: &SimState, queue: f64) -> std::io::Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{}",
            state.time,
            state.active_phase,
            queue,
            state.injected_count(),
            state.completed().len()
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
