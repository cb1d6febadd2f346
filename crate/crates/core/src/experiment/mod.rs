//! Config-driven experiments: seeded episodes, training with checkpoints,
//! evaluation, reward diagnostics and seed-aggregated comparisons.

mod analysis;
mod config;
mod runner;

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

pub use analysis::{
    histogram, median, parse_decisions, read_decisions, reward_histogram, write_compare_csv,
    CompareRow, Histogram, HistogramBin, COMPARE_HEADER,
};
pub use config::{derive_seed, ControllerKind, Environment, ExperimentConfig, ModelConfig};
pub use runner::{
    baseline_controller, eval_sim_seed, run_episode, total_queued, train_sim_seed, EpisodeOutputs,
    EpisodeReport, PolicyAgent,
};

use crate::error::{Error, Result};
use crate::ppo::Checkpoint;
use crate::sim::Metrics;

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub config_hash: String,
    pub warnings: Vec<String>,
    /// Held-out episode with the untrained policy.
    pub initial_eval: EpisodeReport,
    pub episodes: Vec<EpisodeReport>,
    /// Held-out episode after each training episode.
    pub held_out: Vec<EpisodeReport>,
    pub best_episode: usize,
    pub agent: PolicyAgent,
}

impl TrainReport {
    pub fn final_eval(&self) -> &EpisodeReport {
        self.held_out.last().expect("at least one episode")
    }

    pub fn update_count(&self) -> usize {
        self.episodes.iter().map(|e| e.updates.len()).sum()
    }

    pub fn checkpoints(&self) -> Vec<PathBuf> {
        self.episodes
            .iter()
            .flat_map(|e| e.checkpoints.iter().cloned())
            .collect()
    }
}

fn episode_outputs(dir: Option<&Path>, sub: &str, hash: &str, learn: bool) -> EpisodeOutputs {
    match dir {
        None => EpisodeOutputs {
            config_hash: hash.to_string(),
            ..Default::default()
        },
        Some(d) => EpisodeOutputs {
            decisions: Some(d.join(sub).join("decisions.jsonl")),
            steps: Some(d.join(sub).join("steps.csv")),
            train_log: learn.then(|| d.join("train_log.csv")),
            checkpoint_dir: learn.then(|| d.join("checkpoints")),
            config_hash: hash.to_string(),
        },
    }
}

fn write_run_header(dir: &Path, config: &ExperimentConfig, hash: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join("config.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("config_hash.txt");
    fs::write(&path, format!("{hash}\n")).map_err(|e| Error::io(&path, e))
}

/// Runs the agent on the held-out episode without touching its state.
pub fn evaluate_agent(
    env: &Environment,
    config: &ExperimentConfig,
    agent: &PolicyAgent,
    outputs: &EpisodeOutputs,
) -> Result<EpisodeReport> {
    let mut probe = agent.clone();
    run_episode(env, config, &mut probe, eval_sim_seed(config.seed()?), false, outputs)
}

/// Trains a fresh policy for `config.episodes` episodes.
pub fn train(config: &ExperimentConfig) -> Result<TrainReport> {
    let (env, warnings) = config.environment()?;
    let agent = PolicyAgent::new(config, &env)?;
    train_agent(config, &env, agent, warnings)
}

pub fn train_agent(
    config: &ExperimentConfig,
    env: &Environment,
    mut agent: PolicyAgent,
    warnings: Vec<String>,
) -> Result<TrainReport> {
    if config.controller != ControllerKind::Policy {
        return Err(Error::Config(
            "training requires controller = \"policy\"".into(),
        ));
    }
    let seed = config.seed()?;
    let hash = config.config_hash();
    let dir = config.out_dir.as_deref();
    if let Some(d) = dir {
        write_run_header(d, config, &hash)?;
    }

    let initial_eval = evaluate_agent(
        env,
        config,
        &agent,
        &episode_outputs(dir, "eval_initial", &hash, false),
    )?;
    let mut episodes = Vec::with_capacity(config.episodes);
    let mut held_out = Vec::with_capacity(config.episodes);
    let mut best: Option<(usize, f64)> = None;
    for k in 0..config.episodes {
        let sub = format!("episode_{k:03}");
        let report = run_episode(
            env,
            config,
            &mut agent,
            train_sim_seed(seed, k),
            true,
            &episode_outputs(dir, &sub, &hash, true),
        )?;
        episodes.push(report);
        let eval = evaluate_agent(
            env,
            config,
            &agent,
            &episode_outputs(dir, &format!("eval_{k:03}"), &hash, false),
        )?;
        let q = eval.metrics.queue_length;
        if best.map_or(true, |(_, b)| q < b) {
            best = Some((k, q));
            if let Some(d) = dir {
                Checkpoint::capture(&agent.trainer, &hash).save(&d.join("checkpoints/best.json"))?;
            }
        }
        held_out.push(eval);
    }
    if let Some(d) = dir {
        Checkpoint::capture(&agent.trainer, &hash).save(&d.join("checkpoints/final.json"))?;
    }
    Ok(TrainReport {
        config_hash: hash,
        warnings,
        initial_eval,
        episodes,
        held_out,
        best_episode: best.expect("at least one episode").0,
        agent,
    })
}

/// Evaluation episodes: episode 0 is the held-out episode used during
/// training; further episodes use derived seeds.
pub fn eval_sim_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    (0..episodes)
        .map(|k| {
            if k == 0 {
                eval_sim_seed(seed)
            } else {
                derive_seed(eval_sim_seed(seed), k as u64)
            }
        })
        .collect()
}

/// Runs `config.episodes` evaluation episodes of a baseline controller.
pub fn run_baseline(config: &ExperimentConfig) -> Result<Vec<EpisodeReport>> {
    let (env, _) = config.environment()?;
    let seed = config.seed()?;
    let hash = config.config_hash();
    let dir = config.out_dir.as_deref();
    if let Some(d) = dir {
        write_run_header(d, config, &hash)?;
    }
    let mut controller = baseline_controller(config, seed)?;
    eval_sim_seeds(seed, config.episodes)
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            let out = episode_outputs(dir, &format!("eval_{k:03}"), &hash, false);
            run_episode(&env, config, controller.as_mut(), s, false, &out)
        })
        .collect()
}

/// Evaluates a policy, restored from `checkpoint` or freshly initialized.
pub fn run_policy_eval(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<Vec<EpisodeReport>> {
    let (env, _) = config.environment()?;
    let seed = config.seed()?;
    let hash = config.config_hash();
    let mut agent = match checkpoint {
        Some(p) => {
            let trainer = Checkpoint::load(p)?.into_trainer(env.vocab.size())?;
            if trainer.policy.dims != env.dims {
                return Err(Error::Mismatch(format!(
                    "checkpoint policy shape {:?} does not match config {:?}",
                    trainer.policy.dims, env.dims
                )));
            }
            PolicyAgent::from_trainer(trainer, config, &env)
        }
        None => PolicyAgent::new(config, &env)?,
    };
    let dir = config.out_dir.as_deref();
    if let Some(d) = dir {
        write_run_header(d, config, &hash)?;
    }
    eval_sim_seeds(seed, config.episodes)
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            let out = episode_outputs(dir, &format!("eval_{k:03}"), &hash, false);
            run_episode(&env, config, &mut agent, s, false, &out)
        })
        .collect()
}

/// Final held-out metrics of one configuration: trained then evaluated for
/// the policy, a single held-out episode for baselines.
pub fn final_metrics(config: &ExperimentConfig) -> Result<Metrics> {
    match config.controller {
        ControllerKind::Policy => Ok(train(config)?.final_eval().metrics.clone()),
        _ => {
            let mut c = config.clone();
            c.episodes = 1;
            Ok(run_baseline(&c)?.remove(0).metrics)
        }
    }
}

/// Runs `f` once per seed on scoped threads; results come back in seed order.
pub fn run_seeds<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || f(seed))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    })
}

/// Seed-median comparison of configurations that share an environment.
pub fn compare(configs: &[ExperimentConfig], seeds: &[u64]) -> Result<Vec<CompareRow>> {
    if configs.len() < 2 {
        return Err(Error::Config("compare needs at least two configs".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    for c in &configs[1..] {
        if !configs[0].same_environment(c) {
            return Err(Error::Mismatch(format!(
                "config {:?} uses a different topology or demand than {:?}",
                c.name, configs[0].name
            )));
        }
    }
    configs
        .iter()
        .map(|c| {
            let runs = run_seeds(seeds, |seed| {
                let mut cs = c.clone();
                cs.seed = Some(seed);
                cs.out_dir = None;
                final_metrics(&cs)
            })?;
            Ok(CompareRow::from_metrics(&c.name, &runs))
        })
        .collect()
}
