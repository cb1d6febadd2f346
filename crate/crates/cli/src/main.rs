//! `tsclab`: train, evaluate and compare signal controllers from TOML configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tsc_core::experiment::{
    compare, median, reward_histogram, run_baseline, run_policy_eval, train,
    write_compare_csv, ControllerKind, EpisodeReport, ExperimentConfig, Histogram,
};
use tsc_core::reward::RewardConfig;
use tsc_core::sim::Metrics;

#[derive(Parser)]
#[command(name = "tsclab", version, about = "Traffic signal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy controller, evaluating on the held-out episode after each episode.
    Train(RunArgs),
    /// Evaluate a controller; policies are restored from --checkpoint or freshly initialized.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a non-learning reference controller.
    Baseline(RunArgs),
    /// Seed-median comparison of two or more configs.
    Compare {
        /// Config files; give the flag once per config.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Seeds as a list (`0,1,2`) or a half-open range (`0..5`).
        #[arg(long, default_value = "0..5")]
        seeds: String,
        /// Also write compare.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of per-decision environment rewards from decision logs.
    RewardHist {
        /// Decision logs (decisions.jsonl); give the flag once per log.
        #[arg(long = "log")]
        logs: Vec<PathBuf>,
        /// A training output directory: compares eval_initial with the last eval_NNN.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Defaults to the hurdle of --config, then of the run's config.toml.
        #[arg(long)]
        hurdle: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_parser = ["policy", "fixed", "maxpressure", "random"])]
    controller: Option<String>,
}

impl RunArgs {
    /// The config file (or defaults) with command-line overrides applied.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = Some(s);
        }
        if let Some(d) = &self.out {
            c.out_dir = Some(d.clone());
        }
        if let Some(n) = self.episodes {
            c.episodes = n;
        }
        if let Some(k) = &self.controller {
            c.controller = k.parse()?;
        }
        Ok(c)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn metrics_line(label: &str, m: &Metrics) -> String {
    format!(
        "{label:<14} queue {:>8.3}  travel {:>8}  delay {:>8}  delay_ratio {:>6}  throughput {:>5}",
        m.queue_length,
        opt(m.travel_time),
        opt(m.delay_seconds),
        opt(m.delay_ratio),
        m.throughput
    )
}

fn print_episodes(reports: &[EpisodeReport]) {
    for (k, r) in reports.iter().enumerate() {
        println!("{}", metrics_line(&format!("episode {k}"), &r.metrics));
    }
    if reports.len() > 1 {
        let q: Vec<f64> = reports.iter().map(|r| r.metrics.queue_length).collect();
        println!("median queue over {} episodes: {:.3}", q.len(), median(&q).unwrap());
    }
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    let report = train(&config)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("config hash {}", report.config_hash);
    println!("{}", metrics_line("untrained", &report.initial_eval.metrics));
    for (k, (ep, held)) in report.episodes.iter().zip(&report.held_out).enumerate() {
        println!(
            "{}  updates {}  {:.1} s",
            metrics_line(&format!("after ep {k}"), &held.metrics),
            ep.updates.len(),
            ep.wall_clock_seconds
        );
    }
    println!("best held-out episode: {}", report.best_episode);
    if let Some(d) = &config.out_dir {
        println!("outputs in {}", d.display());
    }
    Ok(())
}

fn cmd_eval(args: &RunArgs, checkpoint: Option<&Path>) -> Result<()> {
    let config = args.resolve()?;
    let reports = match config.controller {
        ControllerKind::Policy => run_policy_eval(&config, checkpoint)?,
        _ if checkpoint.is_some() => bail!("--checkpoint only applies to controller \"policy\""),
        _ => run_baseline(&config)?,
    };
    print_episodes(&reports);
    Ok(())
}

fn cmd_baseline(args: &RunArgs) -> Result<()> {
    let mut config = args.resolve()?;
    if args.controller.is_none() && config.controller == ControllerKind::Policy {
        config.controller = ControllerKind::Fixed;
    }
    if config.controller == ControllerKind::Policy {
        bail!("baseline needs a non-learning controller (fixed, maxpressure or random)");
    }
    print_episodes(&run_baseline(&config)?);
    Ok(())
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = match text.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
            (a..b).collect()
        }
        None => text
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("invalid seed list `{text}`"))?,
    };
    if seeds.is_empty() {
        bail!("seed set `{text}` is empty");
    }
    Ok(seeds)
}

fn cmd_compare(configs: &[PathBuf], seeds: &str, out: Option<&Path>) -> Result<()> {
    let seeds = parse_seeds(seeds)?;
    let configs = configs
        .iter()
        .map(|p| ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let rows = compare(&configs, &seeds)?;
    let mut buf = Vec::new();
    write_compare_csv(&rows, &mut buf)?;
    print!("{}", String::from_utf8(buf.clone())?);
    if let Some(d) = out {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        let path = d.join("compare.csv");
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// `eval_initial` and the highest-numbered `eval_NNN` of a training run.
fn run_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let initial = dir.join("eval_initial/decisions.jsonl");
    let mut evals: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("eval_") && n[5..].chars().all(|c| c.is_ascii_digit()))
        })
        .collect();
    evals.sort();
    let Some(last) = evals.pop() else {
        bail!("{} has no eval_NNN directories", dir.display());
    };
    Ok(vec![initial, last.join("decisions.jsonl")])
}

fn print_histogram(path: &Path, h: &Histogram) {
    println!("{}", path.display());
    for b in &h.bins {
        let bar = "#".repeat((60 * b.count).div_ceil(h.total.max(1)));
        println!("  [{:>6.2}, {:>6.2})  {:>4}  {bar}", b.lower, b.lower + h.bin_width, b.count);
    }
    println!(
        "  R_env > {}: {}/{} decisions ({:.1}%)",
        h.hurdle,
        h.above_hurdle,
        h.total,
        100.0 * h.fraction_above
    );
}

fn cmd_reward_hist(
    logs: &[PathBuf],
    run: Option<&Path>,
    hurdle: Option<f64>,
    config: Option<&Path>,
) -> Result<()> {
    let mut paths = logs.to_vec();
    if let Some(d) = run {
        paths.extend(run_logs(d)?);
    }
    if paths.is_empty() {
        bail!("reward-hist needs --log or --run");
    }
    let hurdle = match (hurdle, config, run) {
        (Some(h), _, _) => h,
        (None, Some(c), _) => ExperimentConfig::load(c)?.reward.hurdle,
        (None, None, Some(d)) if d.join("config.toml").exists() => {
            ExperimentConfig::load(&d.join("config.toml"))?.reward.hurdle
        }
        _ => RewardConfig::default().hurdle,
    };
    let mut fractions = Vec::new();
    for p in &paths {
        let h = reward_histogram(p, hurdle)?;
        print_histogram(p, &h);
        fractions.push(h.fraction_above);
    }
    if fractions.len() == 2 {
        println!(
            "fraction above hurdle: {:.3} -> {:.3}",
            fractions[0], fractions[1]
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval { run, checkpoint } => cmd_eval(&run, checkpoint.as_deref()),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::Compare { configs, seeds, out } => cmd_compare(&configs, &seeds, out.as_deref()),
        Command::RewardHist {
            logs,
            run,
            hurdle,
            config,
        } => cmd_reward_hist(&logs, run.as_deref(), hurdle, config.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
