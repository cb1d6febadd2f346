use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::demand::{DemandProfile, LaneDemand};
use super::metrics::Metrics;
use super::topology::Topology;
use crate::error::Result;

/// Vehicles slower than this (m/s) count as queued.
pub const STOPPED_SPEED: f64 = 0.1;
/// Stop-line-to-stop-line distance between queued vehicles, meters.
pub const JAM_SPACING: f64 = 7.5;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u64,
    pub lane: usize,
    /// Meters from the stop line.
    pub position: f64,
    pub speed: f64,
    pub spawn_time: f64,
    pub completion_time: Option<f64>,
}

impl Vehicle {
    pub fn is_stopped(&self) -> bool {
        self.speed < STOPPED_SPEED
    }

    pub fn travel_time(&self) -> Option<f64> {
        self.completion_time.map(|c| c - self.spawn_time)
    }
}

/// Four-portion view of one lane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneObservation {
    pub early_queued: u32,
    pub seg1: u32,
    pub seg2: u32,
    pub seg3: u32,
}

impl LaneObservation {
    pub fn total(&self) -> u32 {
        self.early_queued + self.seg1 + self.seg2 + self.seg3
    }
}

/// Per-lane observations indexed by lane id.
pub type Observation = Vec<LaneObservation>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub time: f64,
    pub active_phase: usize,
    pub pending_phase: Option<usize>,
    pub yellow_remaining: f64,
    lanes: Vec<VecDeque<Vehicle>>,
    completed: Vec<Vehicle>,
    injected_count: u64,
    next_id: u64,
    next_departure: Vec<f64>,
    schedule_cursor: Vec<usize>,
    queue_sum: f64,
    queue_samples: u64,
}

impl SimState {
    pub fn new(topology: &Topology) -> Self {
        let n = topology.num_lanes();
        SimState {
            time: 0.0,
            active_phase: 0,
            pending_phase: None,
            yellow_remaining: 0.0,
            lanes: vec![VecDeque::new(); n],
            completed: Vec::new(),
            injected_count: 0,
            next_id: 0,
            next_departure: vec![f64::NEG_INFINITY; n],
            schedule_cursor: vec![0; n],
            queue_sum: 0.0,
            queue_samples: 0,
        }
    }

    pub fn vehicles_in_network(&self) -> impl Iterator<Item = &Vehicle> {
        self.lanes.iter().flatten()
    }

    /// Vehicles on a lane, front (closest to the stop line) first.
    pub fn lane_vehicles(&self, lane: usize) -> &VecDeque<Vehicle> {
        &self.lanes[lane]
    }

    pub fn in_network_count(&self) -> usize {
        self.lanes.iter().map(VecDeque::len).sum()
    }

    pub fn completed(&self) -> &[Vehicle] {
        &self.completed
    }

    pub fn injected_count(&self) -> u64 {
        self.injected_count
    }

    pub fn is_yellow(&self) -> bool {
        self.yellow_remaining > EPS
    }

    /// Whether `lane` may discharge this step.
    pub fn serves(&self, topology: &Topology, lane: usize) -> bool {
        !self.is_yellow() && topology.phases[self.active_phase].allowed_lanes.contains(&lane)
    }

    /// Phase the signal is showing or heading to.
    pub fn target_phase(&self) -> usize {
        self.pending_phase.unwrap_or(self.active_phase)
    }

    /// Mean of the per-step queue length over every step taken so far.
    pub fn mean_queue(&self) -> f64 {
        if self.queue_samples == 0 {
            0.0
        } else {
            self.queue_sum / self.queue_samples as f64
        }
    }

    /// Places a vehicle directly; used by tests and scenario setup.
    pub fn insert_vehicle(&mut self, lane: usize, position: f64, speed: f64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.injected_count += 1;
        let v = Vehicle {
            id,
            lane,
            position,
            speed,
            spawn_time: self.time,
            completion_time: None,
        };
        let q = &mut self.lanes[lane];
        let at = q.iter().position(|o| o.position > position).unwrap_or(q.len());
        q.insert(at, v);
        id
    }
}

/// Injects the arrivals due in `[time, time + dt)`. New vehicles enter at
/// the far end of their lane at free-flow speed.
pub fn spawn<R: Rng + ?Sized>(
    state: &mut SimState,
    topology: &Topology,
    demand: &DemandProfile,
    dt: f64,
    rng: &mut R,
) {
    debug_assert!(dt > 0.0);
    let t0 = state.time;
    for (lane_id, lane_demand) in demand.lanes.iter().enumerate() {
        let count = match lane_demand {
            LaneDemand::Poisson { .. } => {
                let lambda = lane_demand.rate_at(t0) * dt;
                if lambda > 0.0 {
                    Poisson::new(lambda)
                        .expect("positive finite rate")
                        .sample(rng) as usize
                } else {
                    0
                }
            }
            LaneDemand::Schedule { times } => {
                let cursor = &mut state.schedule_cursor[lane_id];
                let start = *cursor;
                while *cursor < times.len() && times[*cursor] < t0 + dt - EPS {
                    *cursor += 1;
                }
                *cursor - start
            }
        };
        let lane = &topology.lanes[lane_id];
        for _ in 0..count {
            let id = state.next_id;
            state.next_id += 1;
            state.injected_count += 1;
            state.lanes[lane_id].push_back(Vehicle {
                id,
                lane: lane_id,
                position: lane.road_length,
                speed: lane.free_flow_speed,
                spawn_time: t0,
                completion_time: None,
            });
        }
    }
}

/// Advances the point-queue dynamics by `dt` seconds and returns the number
/// of departures.
pub fn step(state: &mut SimState, topology: &Topology, dt: f64) -> usize {
    debug_assert!(dt > 0.0);
    let t0 = state.time;
    let t1 = t0 + dt;
    let mut departures = 0;

    for lane_id in 0..topology.num_lanes() {
        let lane = &topology.lanes[lane_id];
        let served = state.serves(topology, lane_id);
        let queue = &mut state.lanes[lane_id];
        let mut limit = 0.0_f64;
        let mut i = 0;
        while i < queue.len() {
            let v = &mut queue[i];
            let old = v.position;
            let target = old - lane.free_flow_speed * dt;
            let may_depart =
                i == 0 && served && target <= EPS && t0 + EPS >= state.next_departure[lane_id];
            if may_depart {
                let mut done = queue.pop_front().expect("front exists");
                done.position = 0.0;
                done.speed = (old / dt).min(lane.free_flow_speed);
                done.completion_time = Some(t1);
                state.completed.push(done);
                state.next_departure[lane_id] = t0 + lane.saturation_headway;
                departures += 1;
                continue;
            }
            let new = target.max(limit).min(old);
            v.speed = ((old - new) / dt).clamp(0.0, lane.free_flow_speed);
            v.position = new;
            limit = new + JAM_SPACING;
            i += 1;
        }
    }

    if state.is_yellow() {
        state.yellow_remaining -= dt;
        if state.yellow_remaining <= EPS {
            state.yellow_remaining = 0.0;
            if let Some(p) = state.pending_phase.take() {
                state.active_phase = p;
            }
        }
    }
    state.time = t1;
    state.queue_sum += queue_length(state, topology);
    state.queue_samples += 1;
    departures
}

/// Requests a phase. Switching inserts the topology's yellow interval; asking
/// for the phase already shown (or already pending) changes nothing.
pub fn set_phase(state: &mut SimState, topology: &Topology, phase: usize) -> Result<()> {
    topology.check_phase(phase)?;
    if phase == state.target_phase() {
        return Ok(());
    }
    if topology.yellow_duration <= EPS {
        state.active_phase = phase;
        state.pending_phase = None;
        state.yellow_remaining = 0.0;
    } else {
        state.pending_phase = Some(phase);
        state.yellow_remaining = topology.yellow_duration;
    }
    Ok(())
}

/// Classifies a vehicle into one of the four lane portions.
pub fn classify(vehicle: &Vehicle, road_length: f64, obs: &mut LaneObservation) {
    if vehicle.is_stopped() {
        obs.early_queued += 1;
    } else if vehicle.position * 100.0 <= 10.0 * road_length {
        obs.seg1 += 1;
    } else if vehicle.position * 100.0 <= 33.0 * road_length {
        obs.seg2 += 1;
    } else {
        obs.seg3 += 1;
    }
}

pub fn observe(state: &SimState, topology: &Topology) -> Observation {
    topology
        .lanes
        .iter()
        .enumerate()
        .map(|(id, lane)| {
            let mut obs = LaneObservation::default();
            for v in &state.lanes[id] {
                classify(v, lane.road_length, &mut obs);
            }
            obs
        })
        .collect()
}

/// Stopped vehicles averaged over lanes at the current instant.
pub fn queue_length(state: &SimState, topology: &Topology) -> f64 {
    let stopped = state.vehicles_in_network().filter(|v| v.is_stopped()).count();
    stopped as f64 / topology.num_lanes() as f64
}

pub fn finalize_metrics(state: &SimState, topology: &Topology) -> Metrics {
    Metrics::from_state(state, topology)
}
