use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::analysis::{histogram, Histogram};
use super::config::{derive_seed, ControllerKind, Environment, ExperimentConfig};
use crate::baselines::{Controller, FixedTime, MaxPressure, RandomController};
use crate::error::{Error, Result};
use crate::language::{extract_phase_tokens, verbalize, HistoryEntry, Vocabulary};
use crate::policy::{sample_response, Response, TokenTrajectory, ValueInput};
use crate::ppo::{Checkpoint, Trainer, UpdateDiagnostics, TRAIN_LOG_HEADER};
use crate::reward::{assemble_token_rewards, decision_reward, DecisionRecord, EntropyMode, RewardConfig};
use crate::sim::{Metrics, Observation, Simulator, StepCsv, Topology};

/// Seed tags for derived streams.
const TAG_TRAINER: u64 = 1;
const TAG_TRAIN_SIM: u64 = 2;
const TAG_EVAL_SIM: u64 = 3;
const TAG_RANDOM: u64 = 4;

pub fn total_queued(observation: &Observation) -> f64 {
    observation.iter().map(|o| o.early_queued as f64).sum()
}

/// The learned controller: a trainer plus what it needs to turn a state into
/// sampled responses and a phase.
#[derive(Debug, Clone)]
pub struct PolicyAgent {
    pub trainer: Trainer,
    pub vocab: Vocabulary,
    pub reward: RewardConfig,
    pub max_len: usize,
    pub temperature: f64,
    history: Vec<HistoryEntry>,
    pending: Option<Pending>,
}

#[derive(Debug, Clone)]
struct Pending {
    trajectory: TokenTrajectory,
    counts: Option<Vec<usize>>,
}

impl PolicyAgent {
    pub fn new(config: &ExperimentConfig, env: &Environment) -> Result<Self> {
        let mut tc = config.trainer.clone();
        tc.seed = derive_seed(config.seed()?, TAG_TRAINER);
        Ok(Self::from_trainer(Trainer::new(tc, env.dims), config, env))
    }

    pub fn from_trainer(trainer: Trainer, config: &ExperimentConfig, env: &Environment) -> Self {
        PolicyAgent {
            trainer,
            vocab: env.vocab.clone(),
            reward: config.reward,
            max_len: config.model.max_len,
            temperature: config.model.temperature,
            history: Vec::new(),
            pending: None,
        }
    }

    fn reset_episode(&mut self) {
        self.history.clear();
        self.pending = None;
    }

    /// Number of responses sampled per decision.
    pub fn samples_per_decision(&self) -> usize {
        match self.reward.entropy_mode {
            EntropyMode::Off => 1,
            _ if self.reward.separate_action_sample => self.trainer.config.g + 1,
            _ => self.trainer.config.g,
        }
    }

    fn act(&mut self, observation: &Observation, topology: &Topology, current: usize) -> Result<usize> {
        let ctx = verbalize(observation, topology, current, &self.history)?;
        let seed = self.trainer.next_rollout_seed();
        let responses: Vec<Response> = (0..self.samples_per_decision())
            .map(|g| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(g as u64);
                sample_response(
                    &self.trainer.policy,
                    &ctx.features,
                    &self.vocab,
                    self.temperature,
                    self.max_len,
                    &mut rng,
                )
            })
            .collect();
        let phases = responses
            .iter()
            .map(|r| extract_phase_tokens(&r.tokens, &self.vocab, &topology.phases, current))
            .collect::<Result<Vec<usize>>>()?;
        let chosen = phases[0];
        let counts = (self.reward.entropy_mode != EntropyMode::Off).then(|| {
            let skip = usize::from(self.reward.separate_action_sample);
            let mut c = vec![0; topology.num_phases()];
            for &p in &phases[skip..] {
                c[p] += 1;
            }
            c
        });
        let value_old = self.trainer.value.value(ValueInput::State(&ctx.features));
        let action = responses.into_iter().next().expect("at least one response");
        self.pending = Some(Pending {
            trajectory: TokenTrajectory::new(ctx, action, value_old, chosen),
            counts,
        });
        self.history.push(HistoryEntry {
            observation: observation.clone(),
            action: chosen,
        });
        if self.history.len() > crate::language::HISTORY_LEN {
            self.history.remove(0);
        }
        Ok(chosen)
    }
}

impl Controller for PolicyAgent {
    fn name(&self) -> &'static str {
        "policy"
    }

    fn decide(&mut self, _: f64, observation: &Observation, topology: &Topology) -> Result<usize> {
        self.act(observation, topology, 0)
    }

    fn as_agent(&mut self) -> Option<&mut PolicyAgent> {
        Some(self)
    }
}

pub fn baseline_controller(config: &ExperimentConfig, seed: u64) -> Result<Box<dyn Controller + Send>> {
    Ok(match config.controller {
        ControllerKind::Fixed => Box::new(FixedTime {
            t_fixed: config.t_fixed,
        }),
        ControllerKind::MaxPressure => Box::new(MaxPressure),
        ControllerKind::Random => Box::new(RandomController::new(derive_seed(seed, TAG_RANDOM))),
        ControllerKind::Policy => {
            return Err(Error::Config("the policy controller is not a baseline".into()))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub metrics: Metrics,
    pub decisions: usize,
    pub decisions_path: Option<PathBuf>,
    pub reward_histogram: Histogram,
    pub wall_clock_seconds: f64,
    /// Updates run during the episode.
    pub updates: Vec<UpdateDiagnostics>,
    pub checkpoints: Vec<PathBuf>,
    #[serde(skip)]
    pub records: Vec<DecisionRecord>,
}

/// Where an episode writes its files. `None` fields are skipped.
#[derive(Debug, Clone, Default)]
pub struct EpisodeOutputs {
    pub decisions: Option<PathBuf>,
    pub steps: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub config_hash: String,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn append(path: &Path, header: &str) -> Result<BufWriter<File>> {
    let fresh = !path.exists();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    if fresh {
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

/// Runs one episode of `config.trainer.episode_length` steps. With `learn`,
/// the controller must be a policy agent: its decisions are buffered and
/// updates and checkpoints fire on the trainer's global clock.
pub fn run_episode(
    env: &Environment,
    config: &ExperimentConfig,
    controller: &mut dyn Controller,
    sim_seed: u64,
    learn: bool,
    outputs: &EpisodeOutputs,
) -> Result<EpisodeReport> {
    let started = Instant::now();
    let tc = config.trainer.clone();
    let mut sim = Simulator::new(env.topology.clone(), env.demand.clone(), sim_seed)?;
    if let Some(agent) = controller.as_agent() {
        agent.reset_episode();
    } else if learn {
        return Err(Error::Config("learning requires the policy controller".into()));
    }

    let mut jsonl = outputs.decisions.as_deref().map(create).transpose()?;
    let mut steps = match outputs.steps.as_deref() {
        Some(p) => Some(StepCsv::new(create(p)?).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut train_log = match (learn, outputs.train_log.as_deref()) {
        (true, Some(p)) => Some(append(p, TRAIN_LOG_HEADER)?),
        _ => None,
    };

    let mut records = Vec::with_capacity(tc.decisions_per_episode() as usize);
    let mut updates = Vec::new();
    let mut checkpoints = Vec::new();
    // (decision time, global clock, phase, queue at decision)
    let mut open: Option<(u64, u64, usize, f64)> = None;

    for t in 0..tc.episode_length {
        if t % tc.decision_interval == 0 {
            let obs = sim.observe();
            let current = sim.state.target_phase();
            let (phase, clock) = match controller.as_agent() {
                Some(agent) => (agent.act(&obs, &env.topology, current)?, agent.trainer.clock),
                None => (controller.decide(t as f64, &obs, &env.topology)?, 0),
            };
            sim.set_phase(phase)?;
            open = Some((t, clock, phase, total_queued(&obs)));
        }
        sim.tick();
        if let Some(s) = steps.as_mut() {
            let q = sim.queue_length();
            s.record(&sim.state, q)
                .map_err(|e| Error::io(outputs.steps.as_deref().unwrap_or(Path::new("")), e))?;
        }
        if learn {
            controller.as_agent().expect("checked above").trainer.clock += 1;
        }

        let boundary = (t + 1) % tc.decision_interval == 0 || t + 1 == tc.episode_length;
        if boundary {
            if let Some((t0, clock, phase, q_prev)) = open.take() {
                let q_now = total_queued(&sim.observe());
                let rec = finalize(controller, config, (t0, clock), phase, q_prev, q_now, learn)?;
                if let Some(w) = jsonl.as_mut() {
                    let line = serde_json::to_string(&rec).expect("record serializes");
                    writeln!(w, "{line}").map_err(|e| {
                        Error::io(outputs.decisions.as_deref().unwrap_or(Path::new("")), e)
                    })?;
                }
                records.push(rec);
            }
        }

        if learn {
            let agent = controller.as_agent().expect("checked above");
            let clock = agent.trainer.clock;
            if clock % tc.update_interval == 0 && !agent.trainer.buffer.is_empty() {
                let d = agent.trainer.update()?;
                if let (Some(w), Some(p)) = (train_log.as_mut(), outputs.train_log.as_deref()) {
                    d.write_csv_row(w).map_err(|e| Error::io(p, e))?;
                }
                updates.push(d);
            }
            if clock % tc.checkpoint_interval == 0 {
                if let Some(dir) = outputs.checkpoint_dir.as_deref() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    let path = dir.join(format!("step_{clock:08}.json"));
                    Checkpoint::capture(&agent.trainer, &outputs.config_hash).save(&path)?;
                    checkpoints.push(path);
                }
            }
        }
    }

    for (w, p) in [(jsonl.as_mut(), &outputs.decisions), (train_log.as_mut(), &outputs.train_log)] {
        if let (Some(w), Some(p)) = (w, p.as_deref()) {
            w.flush().map_err(|e| Error::io(p, e))?;
        }
    }
    if let (Some(s), Some(p)) = (steps, outputs.steps.as_deref()) {
        s.into_inner().flush().map_err(|e| Error::io(p, e))?;
    }

    let r_env: Vec<f64> = records.iter().map(|r| r.r_env).collect();
    Ok(EpisodeReport {
        metrics: sim.metrics(),
        decisions: records.len(),
        decisions_path: outputs.decisions.clone(),
        reward_histogram: histogram(&r_env, config.reward.hurdle, 0.5),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        updates,
        checkpoints,
        records,
    })
}

/// Closes the decision taken at `t0`: computes its rewards and, when
/// learning, stores the action response in the buffer.
fn finalize(
    controller: &mut dyn Controller,
    config: &ExperimentConfig,
    (t0, clock): (u64, u64),
    phase: usize,
    q_prev: f64,
    q_now: f64,
    learn: bool,
) -> Result<DecisionRecord> {
    let Some(agent) = controller.as_agent() else {
        let b = decision_reward(&config.reward, q_prev, q_now, None, phase);
        return Ok(DecisionRecord {
            time: t0 as f64,
            chosen_phase: phase,
            counts: None,
            p_chosen: None,
            r_env: b.r_env,
            r_total: b.r_total,
            gate_open: b.gate_open,
        });
    };
    let Pending {
        mut trajectory,
        counts,
    } = agent.pending.take().expect("a decision is open");
    let b = decision_reward(&agent.reward, q_prev, q_now, counts.as_deref(), phase);
    if learn {
        let refs = agent
            .trainer
            .reference
            .logprobs(&trajectory.context.features, &trajectory.tokens)?;
        trajectory.rewards =
            assemble_token_rewards(b.r_total, agent.reward.beta, &trajectory.logprobs, &refs)?;
        agent.trainer.buffer.push(clock as f64, trajectory);
    }
    Ok(DecisionRecord {
        time: t0 as f64,
        chosen_phase: phase,
        counts,
        p_chosen: b.p_chosen,
        r_env: b.r_env,
        r_total: b.r_total,
        gate_open: b.gate_open,
    })
}

pub fn train_sim_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(derive_seed(seed, TAG_TRAIN_SIM), episode as u64)
}

pub fn eval_sim_seed(seed: u64) -> u64 {
    derive_seed(seed, TAG_EVAL_SIM)
}
