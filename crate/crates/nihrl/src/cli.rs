//! The `nihrl` command line.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nihrl_core::activity::{reweight, ActivityConfig, Preset};
use nihrl_core::env::TaskEnv;
use nihrl_core::sac::{evaluate_policy, SacAgent};
use nihrl_core::train::{
    baseline, collect_motor_samples, evaluate_hierarchy, export_skills, gradcheck_suite, pretrain, tasktrain, HighLevel, LowLevel,
    MetricsRecord, RunConfig, TrainError, EVAL_SEED,
};
use nihrl_core::Rng;
use rand::SeedableRng;
use serde_json::json;

use crate::checkpoint::{self, CheckpointError, Kind};
use crate::config::{self, ConfigError};
use crate::run::{MetricsWriter, Recorder, RunDir};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "nihrl", version, about = "Two-level skill-based reinforcement learning on toy locomotion tasks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<command>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted-key override, e.g. `pretrain.beta=0.3`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Reproducible run: metrics files carry no wall-clock time.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Also write every collected transition as JSON lines.
    #[arg(long, global = true)]
    pub dump_traj: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Pre-train the skill-conditioned low level.
    Pretrain,
    /// Train the high level over a frozen low-level checkpoint.
    Tasktrain {
        #[arg(long, required_unless_present = "baseline")]
        low: Option<PathBuf>,
        /// Train a flat SAC agent on the task instead.
        #[arg(long)]
        baseline: bool,
    },
    /// Score a high-level (with `--low`) or flat checkpoint on the task.
    Eval {
        #[arg(long)]
        high: PathBuf,
        #[arg(long)]
        low: Option<PathBuf>,
        /// Defaults to `tasktrain.eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Motor rewards of one low level re-weighted by activity presets.
    SimulateBg {
        /// A preset name or `all`.
        #[arg(long, default_value = "all")]
        preset: String,
        #[arg(long, default_value_t = 200)]
        skills: usize,
        #[arg(long)]
        low: PathBuf,
    },
    /// Roll the low level under encoder and random skills and dump the states.
    ExportSkills {
        #[arg(long)]
        low: PathBuf,
        /// Episodes per skill source.
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Finite-difference check of every network family.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Tasktrain { baseline: true, .. } => "baseline",
            Command::Tasktrain { .. } => "tasktrain",
            Command::Eval { .. } => "eval",
            Command::SimulateBg { .. } => "simulate-bg",
            Command::ExportSkills { .. } => "export-skills",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(TrainError),
    #[error("{0}")]
    Frozen(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config { key, message } => CliError::Config(ConfigError::Invalid { key, message }),
            other => CliError::Train(other),
        }
    }
}

impl CliError {
    /// 1 for invalid input, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Gradcheck(_) => 1,
            _ => 2,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = config::load(c.config.as_deref(), &overrides)?;
    let out = c.out.clone().unwrap_or_else(|| Path::new("runs").join(cli.command.name()));
    match &cli.command {
        Command::Pretrain => run_pretrain(&cfg, &out, c),
        Command::Tasktrain { baseline: true, .. } => run_baseline(&cfg, &out, c),
        Command::Tasktrain { low, .. } => run_tasktrain(&cfg, low.as_deref().expect("clap requires --low"), &out, c),
        Command::Eval { high, low, episodes } => run_eval(&cfg, high, low.as_deref(), *episodes, &out, c),
        Command::SimulateBg { preset, skills, low } => run_simulate_bg(&cfg, preset, *skills, low, &out, c),
        Command::ExportSkills { low, episodes } => run_export_skills(&cfg, low, *episodes, &out, c),
        Command::Gradcheck { epsilon } => run_gradcheck(&cfg, *epsilon, &out, c),
    }
}

fn load_low(cfg: &RunConfig, path: &Path) -> Result<LowLevel, CliError> {
    let mut low = LowLevel::new(cfg, &mut Rng::seed_from_u64(0))?;
    checkpoint::load_low(path, &mut low)?;
    Ok(low)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn run_pretrain(cfg: &RunConfig, out: &Path, c: &Common) -> Result<(), CliError> {
    let mut run = RunDir::create(out, cfg)?;
    let mut rec = Recorder::create(run.root(), c.deterministic, c.dump_traj.then_some("transitions.jsonl"))?;
    let outcome = pretrain(cfg, &mut rec)?;
    rec.finish()?;
    let ckpt = run.checkpoint("low.ckpt");
    checkpoint::save_low(&ckpt, &outcome.low)?;
    run.output("checkpoint", "checkpoints/low.ckpt");
    run.output("checkpoint_sha256", checkpoint::file_digest(&ckpt)?);
    run.output("samples", outcome.samples);
    run.output("episodes", outcome.episodes.len());
    run.output("discriminator_updates", outcome.discriminator_updates);
    run.output("encoder_updates", outcome.encoder_updates);
    run.output("sac_updates", outcome.sac_updates);
    if c.dump_traj {
        run.output("transitions", "transitions.jsonl");
    }
    let line = format!("pretrain done: {} samples, {} episodes, {} SAC updates", outcome.samples, outcome.episodes.len(), outcome.sac_updates);
    run.log(&line)?;
    println!("{line}\ncheckpoint: {}", display(&ckpt));
    run.finish("pretrain", cfg, c.deterministic)?;
    Ok(())
}

fn run_tasktrain(cfg: &RunConfig, low_path: &Path, out: &Path, c: &Common) -> Result<(), CliError> {
    let before = checkpoint::file_digest(low_path)?;
    let low = load_low(cfg, low_path)?;
    let mut run = RunDir::create(out, cfg)?;
    let mut rec = Recorder::create(run.root(), c.deterministic, c.dump_traj.then_some("high_records.jsonl"))?;
    let outcome = tasktrain(cfg, &low.agent.policy, &mut rec)?;
    rec.finish()?;
    let after = checkpoint::file_digest(low_path)?;
    let in_memory = checkpoint::sha256_hex(&checkpoint::encode(Kind::Low, &low.groups()));
    if before != after || before != in_memory {
        return Err(CliError::Frozen(format!("low-level parameters changed during task training ({before} -> {in_memory})")));
    }
    let ckpt = run.checkpoint("high.ckpt");
    checkpoint::save_high(&ckpt, &outcome.high)?;
    run.output("checkpoint", "checkpoints/high.ckpt");
    run.output("checkpoint_sha256", checkpoint::file_digest(&ckpt)?);
    run.output("low_checkpoint", display(low_path));
    run.output("low_sha256_before", before);
    run.output("low_sha256_after", after);
    run.output("samples", outcome.samples);
    run.output("episodes", outcome.episodes.len());
    run.output("updates", outcome.updates);
    run.output("final_score", outcome.final_score);
    if c.dump_traj {
        run.output("high_records", "high_records.jsonl");
    }
    let line = format!("tasktrain done: {} samples, {} updates, final score {:?}", outcome.samples, outcome.updates, outcome.final_score);
    run.log(&line)?;
    println!("{line}\ncheckpoint: {}", display(&ckpt));
    run.finish("tasktrain", cfg, c.deterministic)?;
    Ok(())
}

fn run_baseline(cfg: &RunConfig, out: &Path, c: &Common) -> Result<(), CliError> {
    let mut run = RunDir::create(out, cfg)?;
    let mut rec = Recorder::create(run.root(), c.deterministic, None)?;
    let outcome = baseline(cfg, &mut rec)?;
    rec.finish()?;
    let ckpt = run.checkpoint("flat.ckpt");
    checkpoint::save_flat(&ckpt, &outcome.agent)?;
    run.output("checkpoint", "checkpoints/flat.ckpt");
    run.output("checkpoint_sha256", checkpoint::file_digest(&ckpt)?);
    run.output("samples", outcome.samples);
    run.output("episodes", outcome.episodes.len());
    run.output("updates", outcome.updates);
    run.output("final_score", outcome.final_score);
    let line = format!("baseline done: {} samples, {} updates, final score {:?}", outcome.samples, outcome.updates, outcome.final_score);
    run.log(&line)?;
    println!("{line}\ncheckpoint: {}", display(&ckpt));
    run.finish("baseline", cfg, c.deterministic)?;
    Ok(())
}

/// Flat agent shaped like the one [`baseline`] trains.
fn flat_agent(cfg: &RunConfig) -> Result<SacAgent<f32>, CliError> {
    let obs = cfg.proprio_dim() + cfg.task.kind.external_dim();
    let agent = SacAgent::new(obs, cfg.body.joints, 0, &cfg.high_sac(), &mut Rng::seed_from_u64(0)).map_err(TrainError::from)?;
    Ok(agent)
}

fn run_eval(cfg: &RunConfig, high_path: &Path, low_path: Option<&Path>, episodes: Option<usize>, out: &Path, c: &Common) -> Result<(), CliError> {
    let episodes = episodes.unwrap_or(cfg.tasktrain.eval_episodes);
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let mut env = TaskEnv::new(cfg.task.clone(), cfg.body.clone());
    let score = match checkpoint::kind_of(high_path)? {
        Kind::High => {
            let low_path = low_path.ok_or_else(|| CliError::Usage("scoring a high-level checkpoint needs --low".into()))?;
            let low = load_low(cfg, low_path)?;
            let mut high = HighLevel::new(cfg, &mut Rng::seed_from_u64(0))?;
            checkpoint::load_high(high_path, &mut high)?;
            evaluate_hierarchy(&high.agent.policy, &low.agent.policy, &mut env, cfg.hrl.k, episodes, EVAL_SEED)?
        }
        Kind::Flat => {
            let mut agent = flat_agent(cfg)?;
            checkpoint::load_flat(high_path, &mut agent)?;
            evaluate_policy(&agent.policy, &mut env, episodes, EVAL_SEED).map_err(TrainError::from)?
        }
        Kind::Low => return Err(CliError::Usage("eval needs a high-level or flat checkpoint; pass the low level with --low".into())),
    };
    let mut run = RunDir::create(out, cfg)?;
    let mut metrics = MetricsWriter::create(run.root())?;
    metrics.write(&MetricsRecord {
        phase: "eval".into(),
        sample_count: 0,
        episode_count: episodes as u64,
        update_count: 0,
        mean_return: None,
        eval_score: Some(score),
        critic_loss: None,
        actor_loss: None,
        temperature_loss: None,
        discriminator_loss: None,
        sd_loss: None,
        alpha: 0.0,
        wall_clock: 0.0,
    })?;
    metrics.flush()?;
    run.output("task", cfg.task.kind.name());
    run.output("episodes", episodes);
    run.output("score", score);
    run.output("checkpoint", display(high_path));
    let line = format!("eval on {}: mean score {score} over {episodes} episodes", cfg.task.kind);
    run.log(&line)?;
    println!("{line}");
    run.finish("eval", cfg, c.deterministic)?;
    Ok(())
}

fn presets(cfg: &RunConfig, name: &str) -> Result<Vec<ActivityConfig>, CliError> {
    let count = cfg.skill.count;
    if name == "all" {
        return Ok(Preset::NAMED.iter().map(|&p| ActivityConfig::preset(p, count)).collect());
    }
    let p: Preset = name.parse().map_err(|e| CliError::Usage(format!("--preset: {e}")))?;
    if p == Preset::Custom {
        let b = cfg.activity.b_glu.ok_or_else(|| ConfigError::Invalid { key: "activity.b_glu".into(), message: "required by the custom preset".into() })?;
        return Ok(vec![ActivityConfig::custom(b, count)]);
    }
    Ok(vec![ActivityConfig::preset(p, count)])
}

fn run_simulate_bg(cfg: &RunConfig, preset: &str, skills: usize, low_path: &Path, out: &Path, c: &Common) -> Result<(), CliError> {
    let gates = presets(cfg, preset)?;
    if skills == 0 {
        return Err(CliError::Usage("--skills must be at least 1".into()));
    }
    let low = load_low(cfg, low_path)?;
    let mut run = RunDir::create(out, cfg)?;
    MetricsWriter::create(run.root())?.flush()?;
    let samples = collect_motor_samples(&low, cfg, skills, cfg.seed)?;
    let rows = reweight(&gates, &samples);
    let mut w = csv::Writer::from_path(run.path("simulate_bg.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut summary = csv::Writer::from_path(run.path("simulate_bg_summary.csv"))?;
    summary.write_record(["preset", "b_glu", "mean_weighted_r_e"])?;
    let mut means = Vec::new();
    for g in &gates {
        let (sum, n) = rows.iter().filter(|r| r.preset == g.preset).fold((0.0, 0usize), |(s, n), r| (s + r.weighted_r_e, n + 1));
        let mean = sum / n.max(1) as f64;
        summary.write_record([g.preset.name().to_string(), g.b_glu.to_string(), mean.to_string()])?;
        println!("{:<10} b_glu={:<5} mean weighted r_e = {mean:.6}", g.preset.name(), g.b_glu);
        means.push(json!({ "preset": g.preset.name(), "mean_weighted_r_e": mean }));
    }
    summary.flush()?;
    run.output("csv", "simulate_bg.csv");
    run.output("summary", "simulate_bg_summary.csv");
    run.output("skills", skills);
    run.output("samples", samples.len());
    run.output("means", means);
    run.output("low_checkpoint", display(low_path));
    run.log(&format!("simulate-bg: {} skills, {} samples per preset", skills, samples.len()))?;
    run.finish("simulate-bg", cfg, c.deterministic)?;
    Ok(())
}

fn run_export_skills(cfg: &RunConfig, low_path: &Path, episodes: usize, out: &Path, c: &Common) -> Result<(), CliError> {
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let low = load_low(cfg, low_path)?;
    let mut run = RunDir::create(out, cfg)?;
    MetricsWriter::create(run.root())?.flush()?;
    let rows = export_skills(&low, cfg, episodes, cfg.seed)?;
    let mut w = csv::Writer::from_path(run.path("skills.csv"))?;
    let mut header = vec!["source".to_string(), "episode".into(), "skill_index".into(), "step".into(), "r_e".into()];
    header.extend((0..cfg.skill.dim).map(|j| format!("z{j}")));
    header.extend((0..cfg.proprio_dim()).map(|j| format!("s{j}")));
    w.write_record(&header)?;
    for r in &rows {
        let source = match r.source {
            nihrl_core::train::SkillSource::Encoder => "encoder",
            nihrl_core::train::SkillSource::Random => "random",
        };
        let mut rec = vec![source.to_string(), r.episode.to_string(), r.skill_index.map(|i| i.to_string()).unwrap_or_default(), r.step.to_string(), r.r_e.to_string()];
        rec.extend(r.skill.iter().map(|x| x.to_string()));
        rec.extend(r.state.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    run.output("csv", "skills.csv");
    run.output("rows", rows.len());
    run.output("low_checkpoint", display(low_path));
    println!("exported {} rows to {}", rows.len(), display(&run.path("skills.csv")));
    run.finish("export-skills", cfg, c.deterministic)?;
    Ok(())
}

fn run_gradcheck(cfg: &RunConfig, epsilon: f64, out: &Path, c: &Common) -> Result<(), CliError> {
    if !(epsilon > 0.0) {
        return Err(CliError::Usage("--epsilon must be positive".into()));
    }
    let results = gradcheck_suite(cfg.seed, epsilon)?;
    let mut run = RunDir::create(out, cfg)?;
    MetricsWriter::create(run.root())?.flush()?;
    let mut failed = Vec::new();
    for (name, err) in &results {
        let ok = *err < GRADCHECK_TOLERANCE;
        println!("{name:<14} max relative error {err:.3e} {}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(format!("{name} ({err:.3e})"));
        }
    }
    let table: serde_json::Map<_, _> = results.iter().map(|(n, e)| (n.to_string(), json!(e))).collect();
    fs::write(run.path("gradcheck.json"), serde_json::to_string_pretty(&table).map_err(io::Error::from)? + "\n")?;
    run.output("epsilon", epsilon);
    run.output("tolerance", GRADCHECK_TOLERANCE);
    run.output("max_relative_error", table);
    run.finish("gradcheck", cfg, c.deterministic)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Gradcheck(failed.join(", ")))
    }
}
