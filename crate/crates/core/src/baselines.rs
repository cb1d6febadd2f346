//! Non-learning reference controllers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sim::{Observation, Topology};

/// `floor(t / t_fixed) mod N_P`.
pub fn fixed_time(t: f64, t_fixed: f64, num_phases: usize) -> usize {
    debug_assert!(t_fixed > 0.0);
    ((t / t_fixed).floor() as u64 % num_phases as u64) as usize
}

/// Served queue of each phase: the early-queued count summed over its lanes.
pub fn phase_pressures(observation: &Observation, topology: &Topology) -> Vec<u64> {
    (0..topology.num_phases())
        .map(|p| {
            topology
                .phase_lanes(p)
                .map(|l| observation[l].early_queued as u64)
                .sum()
        })
        .collect()
}

/// Phase with the largest served queue; ties go to the lowest index.
pub fn max_pressure(observation: &Observation, topology: &Topology) -> usize {
    let pressures = phase_pressures(observation, topology);
    let mut best = 0;
    for (p, &v) in pressures.iter().enumerate() {
        if v > pressures[best] {
            best = p;
        }
    }
    best
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, num_phases: usize) -> usize {
    rng.gen_range(0..num_phases)
}

/// Anything that picks a phase at a decision point.
pub trait Controller {
    fn name(&self) -> &'static str;

    fn decide(&mut self, time: f64, observation: &Observation, topology: &Topology)
        -> Result<usize>;

    /// The learned controller exposes its trainer and sampling state here.
    fn as_agent(&mut self) -> Option<&mut crate::experiment::PolicyAgent> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct FixedTime {
    pub t_fixed: f64,
}

impl Controller for FixedTime {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn decide(&mut self, time: f64, _: &Observation, topology: &Topology) -> Result<usize> {
        Ok(fixed_time(time, self.t_fixed, topology.num_phases()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MaxPressure;

impl Controller for MaxPressure {
    fn name(&self) -> &'static str {
        "maxpressure"
    }

    fn decide(&mut self, _: f64, observation: &Observation, topology: &Topology) -> Result<usize> {
        if observation.len() < topology.num_lanes() {
            return Err(Error::MissingLane(observation.len()));
        }
        Ok(max_pressure(observation, topology))
    }
}

#[derive(Debug, Clone)]
pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        RandomController {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomController {
    fn name(&self) -> &'static str {
        "random"
    }

    fn decide(&mut self, _: f64, _: &Observation, topology: &Topology) -> Result<usize> {
        Ok(random_policy(&mut self.rng, topology.num_phases()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_topology, LaneObservation, Preset, TopologyConfig};
    use proptest::prelude::*;

    fn toy8() -> Topology {
        build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap()
    }

    fn queued(counts: &[(usize, u32)]) -> Observation {
        let mut obs = vec![LaneObservation::default(); 8];
        for &(lane, q) in counts {
            obs[lane].early_queued = q;
        }
        obs
    }

    #[test]
    fn fixed_time_examples() {
        assert_eq!(fixed_time(0.0, 10.0, 4), 0);
        assert_eq!(fixed_time(25.0, 10.0, 4), 2);
        assert_eq!(fixed_time(40.0, 10.0, 4), 0);
        let cycle: Vec<usize> = (0..8).map(|k| fixed_time(10.0 * k as f64, 10.0, 8)).collect();
        let mut sorted = cycle.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn max_pressure_examples() {
        let t = toy8();
        assert_eq!(max_pressure(&queued(&[]), &t), 0);
        // NTST {lanes 0, 2} vs ETWT {4, 6}
        assert_eq!(max_pressure(&queued(&[(4, 5), (6, 3), (0, 2), (2, 2)]), &t), 4);
        // tie at 8: NTST (index 0) beats ETWT (index 4)
        assert_eq!(max_pressure(&queued(&[(0, 5), (2, 3), (4, 4), (6, 4)]), &t), 0);
    }

    #[test]
    fn max_pressure_holds_the_only_loaded_movement() {
        let t = toy8();
        for q in 1..20 {
            // only Western through is loaded: ETWT (4) and WTWL (7) both serve
            // it; the tie goes to ETWT
            let p = max_pressure(&queued(&[(6, q)]), &t);
            assert!(t.phases[p].allowed_lanes.contains(&6));
            assert_eq!(p, 4);
        }
    }

    #[test]
    fn random_policy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..100).all(|_| random_policy(&mut rng, 1) == 0));
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| random_policy(&mut r, 8)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        let n = 80_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[random_policy(&mut rng, 8)] += 1;
        }
        let se = (0.125f64 * 0.875 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.125).abs() <= 3.0 * se);
        }
    }

    proptest! {
        #[test]
        fn max_pressure_never_picks_a_dominated_phase(q in prop::collection::vec(0u32..30, 8)) {
            let t = toy8();
            let obs: Observation = q.iter().map(|&v| LaneObservation { early_queued: v, ..Default::default() }).collect();
            let pressures = phase_pressures(&obs, &t);
            let p = max_pressure(&obs, &t);
            prop_assert!(pressures.iter().all(|&other| other <= pressures[p]));
        }
    }
}
