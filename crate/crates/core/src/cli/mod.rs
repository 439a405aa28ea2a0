//! Stage driver: one subcommand per pipeline stage, all reading and writing
//! under a single run root.

mod stages;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BcConfig;
use crate::hrl::HRLConfig;
use crate::pipeline::DataConfig;
use crate::segmenter::LlmConfig;
use crate::tvi::TrainConfig;

pub use stages::{run_stage, summarise_downstream, DownstreamSummary, Manifest, MethodResult, TaskResult};
pub use verify::{fixed_q_heads, random_tiny_instance, verify_suite, Check};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Oracle,
    Llm,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub backend: Backend,
    pub llm: LlmConfig,
    /// Recorded responses; defaults to `segment/llm_cache` under the run.
    pub cache_dir: Option<PathBuf>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { backend: Backend::Oracle, llm: LlmConfig::default(), cache_dir: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroShotConfig {
    pub tasks_per_level: usize,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self { tasks_per_level: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    /// Held-out composite tasks, each trained and evaluated on its own.
    pub tasks: usize,
    pub seeds: usize,
    /// Environment steps per run.
    pub budget: usize,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self { tasks: 3, seeds: 5, budget: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub segment: SegmentConfig,
    pub tvi: TrainConfig,
    pub bc: BcConfig,
    pub hrl: HRLConfig,
    pub zero_shot: ZeroShotConfig,
    pub downstream: DownstreamConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            segment: SegmentConfig::default(),
            tvi: TrainConfig::default(),
            bc: BcConfig::default(),
            hrl: HRLConfig::default(),
            zero_shot: ZeroShotConfig::default(),
            downstream: DownstreamConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a JSON config; absent fields take their defaults, unknown
    /// fields are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Propagates the run seed into every seeded sub-config.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self.tvi.seed = seed;
        self.tvi.model.seed = seed;
        self.bc.seed = seed;
        self.bc.model.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.tvi.validate()?;
        self.hrl.validate()?;
        if self.data.trajectories == 0 {
            return Err(Error::Config("data.trajectories must be positive".into()));
        }
        let p = self.segment.llm.policy;
        if p.min_len == 0 || p.min_len > p.max_len {
            return Err(Error::Config("segment length bounds need 1 <= min_len <= max_len".into()));
        }
        if self.bc.epochs == 0 || self.bc.batch_size == 0 || !(self.bc.lr > 0.0) {
            return Err(Error::Config("bc needs positive epochs, batch_size and lr".into()));
        }
        if self.downstream.tasks == 0 || self.downstream.seeds == 0 {
            return Err(Error::Config("downstream needs at least one task and one seed".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Stage {
    /// Expert demonstrations on training tasks.
    GenData,
    /// Initial segmentation with the chosen backend.
    Segment,
    /// Skill inference model training.
    TrainTvi,
    /// Decode, prune and summarise the skill library.
    ExtractSkills,
    /// Downstream fine-tuning of the skill agent.
    TrainHrl,
    /// Held-out success of skills and behavior cloning without training.
    EvalZeroShot,
    /// Flat and BC-initialised baselines, merged with the skill curves.
    EvalDownstream,
    /// Tables, plots and summary from whatever stages have run.
    Report,
    /// Oracle equivalence and hand-value regression checks.
    Verify,
}

impl Stage {
    pub fn dir(self) -> &'static str {
        match self {
            Stage::GenData => "data",
            Stage::Segment => "segment",
            Stage::TrainTvi => "tvi",
            Stage::ExtractSkills => "skills",
            Stage::TrainHrl => "hrl",
            Stage::EvalZeroShot => "zero_shot",
            Stage::EvalDownstream => "downstream",
            Stage::Report => "report",
            Stage::Verify => "verify",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "langskill", version, about = "Language-seeded skill discovery pipeline")]
pub struct Cli {
    /// JSON config; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run root shared by all stages.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    /// Compression weight for skill inference.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Skill inference epochs.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[command(subcommand)]
    pub stage: Stage,
}

impl Cli {
    /// Config file (or defaults) with flag overrides applied, validated.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(b) = self.backend {
            cfg.segment.backend = b;
        }
        if let Some(l) = self.lambda {
            cfg.tvi.lambda = l;
        }
        if let Some(e) = self.epochs {
            cfg.tvi.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses arguments, runs one stage and maps errors to exit codes.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = cli.resolve().and_then(|cfg| run_stage(cli.stage, &cfg, &cli.out));
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::MissingInput(_) => 3,
        Error::Infeasible(_) => 4,
        _ => 1,
    }
}

#[cfg(test)]
mod tests;
