use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::policy::TokenTrajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferRecord {
    /// Global decision time in timesteps (monotone across episodes).
    pub time: f64,
    pub trajectory: TokenTrajectory,
}

/// Rolling store of the decisions taken in the last `window` timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    window: f64,
    records: VecDeque<BufferRecord>,
}

impl ReplayBuffer {
    pub fn new(window: f64) -> Self {
        ReplayBuffer {
            window,
            records: VecDeque::new(),
        }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Appends a record and drops everything at or before `time − window`,
    /// oldest first.
    pub fn push(&mut self, time: f64, trajectory: TokenTrajectory) {
        if let Some(last) = self.records.back() {
            debug_assert!(time >= last.time, "records must arrive in time order");
        }
        self.records.push_back(BufferRecord { time, trajectory });
        while self
            .records
            .front()
            .is_some_and(|r| r.time <= time - self.window)
        {
            self.records.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, i: usize) -> &BufferRecord {
        &self.records[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferRecord> {
        self.records.iter()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}
