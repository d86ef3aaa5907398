//! Run directories and the files a run writes.
//!
//! Every run directory holds:
//!
//! | file | content |
//! |---|---|
//! | `config.toml` | the fully resolved configuration |
//! | `manifest.json` | schema version, command, seed, outputs and digests |
//! | `metrics.jsonl` | one [`MetricsRecord`] per line |
//! | `metrics.csv` | the same records, one row each |
//! | `run.log` | resolved configuration and progress lines |
//! | `checkpoints/` | checkpoint files |
//!
//! Training commands add `episodes.jsonl` (one [`EpisodeSummary`] per line)
//! and, with `--dump-traj`, `transitions.jsonl` ([`LowTransition`]) or
//! `high_records.jsonl` ([`HighRecord`]).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nihrl_core::replay::{HighRecord, LowTransition};
use nihrl_core::train::{EpisodeSummary, MetricsRecord, Monitor, RunConfig};
use serde::Serialize;
use serde_json::Value;

use crate::config;

pub const SCHEMA_VERSION: u32 = 1;

pub struct RunDir {
    root: PathBuf,
    log: BufWriter<File>,
    outputs: BTreeMap<String, Value>,
}

impl RunDir {
    /// Creates (or reuses) `root`, writes the resolved configuration and
    /// starts the log.
    pub fn create(root: &Path, cfg: &RunConfig) -> io::Result<Self> {
        fs::create_dir_all(root.join("checkpoints"))?;
        let text = config::to_toml(cfg);
        fs::write(root.join("config.toml"), &text)?;
        let mut head = String::from("# resolved configuration\n");
        for line in text.lines() {
            head += &format!("# {line}\n");
        }
        fs::write(root.join("run.log"), head)?;
        let log = BufWriter::new(File::options().append(true).open(root.join("run.log"))?);
        Ok(Self { root: root.to_path_buf(), log, outputs: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn log(&mut self, line: &str) -> io::Result<()> {
        writeln!(self.log, "{line}")?;
        self.log.flush()
    }

    /// Adds a key to `manifest.json`.
    pub fn output(&mut self, key: &str, value: impl Into<Value>) {
        self.outputs.insert(key.into(), value.into());
    }

    pub fn finish(mut self, command: &str, cfg: &RunConfig, deterministic: bool) -> io::Result<()> {
        let manifest = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "seed": cfg.seed,
            "deterministic": deterministic,
            "outputs": self.outputs,
        });
        fs::write(self.root.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        self.log.flush()
    }
}

/// JSON-lines writer.
pub struct JsonLines(BufWriter<File>);

impl JsonLines {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self(BufWriter::new(File::create(path)?)))
    }

    pub fn write<T: Serialize>(&mut self, item: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.0, item)?;
        self.0.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}

/// `metrics.jsonl` and its CSV mirror.
pub struct MetricsWriter {
    jsonl: JsonLines,
    csv: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> io::Result<Self> {
        let jsonl = JsonLines::create(&dir.join("metrics.jsonl"))?;
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_path(dir.join("metrics.csv"))?;
        csv.write_record(METRIC_COLUMNS)?;
        Ok(Self { jsonl, csv })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> io::Result<()> {
        self.jsonl.write(r)?;
        self.csv.serialize(r)?;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.jsonl.flush()?;
        self.csv.flush()
    }
}

const METRIC_COLUMNS: [&str; 13] = [
    "phase",
    "sample_count",
    "episode_count",
    "update_count",
    "mean_return",
    "eval_score",
    "critic_loss",
    "actor_loss",
    "temperature_loss",
    "discriminator_loss",
    "sd_loss",
    "alpha",
    "wall_clock",
];

/// A [`Monitor`] that streams a run to disk. I/O errors do not stop
/// training; the first one is reported by [`Recorder::finish`].
pub struct Recorder {
    metrics: MetricsWriter,
    episodes: JsonLines,
    trajectories: Option<JsonLines>,
    started: Option<Instant>,
    progress: BufWriter<File>,
    error: Option<io::Error>,
}

impl Recorder {
    /// `deterministic` pins `wall_clock` at 0 so that metrics files depend on
    /// the configuration alone. `trajectories` names the dump file, if any.
    pub fn create(dir: &Path, deterministic: bool, trajectories: Option<&str>) -> io::Result<Self> {
        Ok(Self {
            metrics: MetricsWriter::create(dir)?,
            episodes: JsonLines::create(&dir.join("episodes.jsonl"))?,
            trajectories: trajectories.map(|t| JsonLines::create(&dir.join(t))).transpose()?,
            started: (!deterministic).then(Instant::now),
            progress: BufWriter::new(File::options().append(true).open(dir.join("run.log"))?),
            error: None,
        })
    }

    fn keep(&mut self, r: io::Result<()>) {
        if let Err(e) = r {
            self.error.get_or_insert(e);
        }
    }

    pub fn finish(mut self) -> io::Result<()> {
        let r = self.metrics.flush();
        self.keep(r);
        let r = self.episodes.flush();
        self.keep(r);
        if let Some(t) = self.trajectories.as_mut() {
            let r = t.flush();
            self.keep(r);
        }
        let r = self.progress.flush();
        self.keep(r);
        self.error.map_or(Ok(()), Err)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

impl Monitor for Recorder {
    fn elapsed(&self) -> f64 {
        self.started.map_or(0.0, |t| t.elapsed().as_secs_f64())
    }

    fn metrics(&mut self, record: &MetricsRecord) {
        let r = self.metrics.write(record);
        self.keep(r);
        let line = format!(
            "{} samples={} episodes={} updates={} return={} eval={} alpha={:.4}",
            record.phase,
            record.sample_count,
            record.episode_count,
            record.update_count,
            fmt_opt(record.mean_return),
            fmt_opt(record.eval_score),
            record.alpha
        );
        let r = writeln!(self.progress, "{line}").and_then(|_| self.progress.flush());
        self.keep(r);
    }

    fn episode(&mut self, summary: &EpisodeSummary) {
        let r = self.episodes.write(summary);
        self.keep(r);
    }

    fn low_transition(&mut self, t: &LowTransition) {
        if let Some(w) = self.trajectories.as_mut() {
            let r = w.write(t);
            self.keep(r);
        }
    }

    fn high_record(&mut self, rec: &HighRecord) {
        if let Some(w) = self.trajectories.as_mut() {
            let r = w.write(rec);
            self.keep(r);
        }
    }
}
