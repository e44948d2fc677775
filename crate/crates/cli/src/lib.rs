//! The `gestalt` pipeline: stimulus generation → activations → binding
//! probes → continuity scores → head ablations → report.
//!
//! Every stage writes under its own directory of the run root and records
//! its input hash and output hashes in `run_manifest.json`; a stage whose
//! inputs and outputs are unchanged is skipped.
//!
//! All randomness derives from the root seed with
//! [`derive_seed`](gestalt_core::seed::derive_seed) and a stage label:
//!
//! | label                                | use                         |
//! |--------------------------------------|-----------------------------|
//! | `model/init`                         | untrained weights           |
//! | `generate/{blobs,curves}/{i}`        | continuity stimuli          |
//! | `generate/binding/{split}/{i}`       | binding pairs               |
//! | `scramble/{orientation,location}/{split}/{i}` | scrambled controls |
//! | `pairs/{variant}/{split}/{i}`        | probe pair sampling         |
//! | `probe/{variant}/{layer}`            | probe batch shuffling       |
//! | `continuity`                         | control rotations, targets  |
//! | `ablate/controls/{layer}`            | random control head sets    |

pub mod config;
pub mod error;
pub mod manifest;
mod stages;
mod table;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gestalt_core::seed::derive_seed;
use gestalt_core::vit::{init_untrained, ViTConfig, ViTModel};
use log::info;
use serde::Serialize;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
use manifest::{file_hash, input_hash, list_files, RunLock, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "gestalt", version, about = "Continuity-head analysis pipeline for vision transformers")]
pub struct Cli {
    /// Pipeline config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Run directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write stimulus datasets (PNGs, masks, manifests).
    Generate,
    /// Run the model and store residual activations for probe pairs.
    Activations,
    /// Train and evaluate binding probes per layer and variant.
    Probe,
    /// Score continuity sensitivity of every head.
    Continuity,
    /// Mean-ablate continuity heads and random controls.
    Ablate,
    /// Summarize all stage outputs.
    Report,
    /// Every stage in order.
    All,
}

pub const VARIANTS: [&str; 3] = ["object", "scrambled_orientation", "scrambled_location"];
pub const SPLITS: [&str; 2] = ["train", "test"];

/// One pipeline invocation on a locked run directory.
pub struct Run {
    pub root: PathBuf,
    pub cfg: PipelineConfig,
    pub seed: u64,
    manifest: RunManifest,
    model: Option<ViTModel>,
    _lock: RunLock,
}

impl Run {
    pub fn open(cfg: PipelineConfig, root: PathBuf) -> Result<Self> {
        cfg.validate()?;
        let lock = RunLock::acquire(&root)?;
        let manifest = RunManifest::load_or_new(&root, serde_json::to_value(&cfg)?)?;
        let seed = cfg.seed;
        Ok(Run { root, cfg, seed, manifest, model: None, _lock: lock })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn derive(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    fn init_seed(&self) -> u64 {
        self.cfg.model.init_seed.unwrap_or_else(|| self.derive("model/init"))
    }

    /// Stable identity of the model weights, for stage hashes.
    pub fn model_identity(&self) -> Result<serde_json::Value> {
        Ok(match &self.cfg.model.archive {
            Some(p) if self.cfg.model.source == config::ModelSource::Archive => {
                serde_json::json!({ "archive": file_hash(p)?, "config": self.cfg.model.declared_config()? })
            }
            _ => serde_json::json!({ "untrained": self.init_seed(), "config": self.cfg.model.declared_config()? }),
        })
    }

    pub fn model(&mut self) -> Result<&ViTModel> {
        if self.model.is_none() {
            let m = match self.cfg.model.source {
                config::ModelSource::Untrained => {
                    let cfg = self.cfg.model.declared_config()?.expect("validated");
                    info!("initializing untrained model (seed {})", self.init_seed());
                    init_untrained(self.init_seed(), cfg)?
                }
                config::ModelSource::Archive => {
                    let path = self.cfg.model.archive.clone().expect("validated");
                    info!("loading {}", path.display());
                    match self.cfg.model.declared_config()? {
                        Some(cfg) => ViTModel::load(&path, cfg)?,
                        None => ViTModel::open(&path)?,
                    }
                }
            };
            if m.config().patch_size as u32 != self.cfg.data.patch_size {
                return Err(CliError::Config(format!(
                    "model patch size {} differs from data.patch_size {}",
                    m.config().patch_size,
                    self.cfg.data.patch_size
                )));
            }
            self.model = Some(m);
        }
        Ok(self.model.as_ref().expect("just set"))
    }

    pub fn model_config(&mut self) -> Result<ViTConfig> {
        Ok(self.model()?.config().clone())
    }

    /// Layers probed, validated against the model.
    pub fn probe_layers(&mut self) -> Result<Vec<usize>> {
        let n = self.model_config()?.n_layers;
        let layers = self.cfg.probe.layers.clone().unwrap_or_else(|| (0..n).collect());
        if layers.is_empty() || layers.iter().any(|&l| l >= n) {
            return Err(CliError::Config(format!("probe.layers must be nonempty and below {n}")));
        }
        let mut sorted = layers;
        sorted.sort_unstable();
        sorted.dedup();
        Ok(sorted)
    }

    pub fn ablation_layers(&mut self) -> Result<Vec<usize>> {
        let probed = self.probe_layers()?;
        match &self.cfg.ablation.layers {
            None => Ok(probed),
            Some(ls) => {
                if let Some(l) = ls.iter().find(|l| !probed.contains(l)) {
                    return Err(CliError::Config(format!("ablation layer {l} is not a probed layer")));
                }
                let mut v = ls.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }

    pub fn digest(&self, stage: &str) -> Result<String> {
        self.manifest.output_digest(stage)
    }

    /// Runs `body` unless `stage` is fresh for `inputs`. `body` writes into
    /// `dir` (cleared first) and everything there becomes the stage output.
    fn stage<T: Serialize>(&mut self, stage: &str, dir: &str, inputs: &T, body: impl FnOnce(&mut Run) -> Result<()>) -> Result<()> {
        let hash = input_hash(&(stage, inputs))?;
        if self.manifest.is_fresh(&self.root, stage, &hash) {
            info!("{stage}: up to date");
            return Ok(());
        }
        info!("{stage}: running");
        let out_dir = self.path(dir);
        if out_dir.exists() {
            std::fs::remove_dir_all(&out_dir)?;
        }
        std::fs::create_dir_all(&out_dir)?;
        self.manifest.begin(&self.root, stage, &hash)?;
        body(self)?;
        let outputs = list_files(&self.root, &out_dir)?;
        self.manifest.finish(&self.root, stage, &outputs)?;
        info!("{stage}: wrote {} files", outputs.len());
        Ok(())
    }

    pub fn execute(&mut self, cmd: Command) -> Result<()> {
        match cmd {
            Command::Generate => stages::generate::run(self),
            Command::Activations => stages::activations::run(self),
            Command::Probe => stages::probe::run(self),
            Command::Continuity => stages::continuity::run(self),
            Command::Ablate => stages::ablate::run(self),
            Command::Report => stages::report::run(self),
            Command::All => {
                for c in [
                    Command::Generate,
                    Command::Activations,
                    Command::Probe,
                    Command::Continuity,
                    Command::Ablate,
                    Command::Report,
                ] {
                    self.execute(c)?;
                }
                Ok(())
            }
        }
    }
}

/// Resolves flags against the config and runs one command.
pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        // A pool can only be installed once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut run = Run::open(cfg, root)?;
    run.execute(cli.command)
}

pub(crate) fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(d) = p.parent() {
        std::fs::create_dir_all(d)?;
    }
    Ok(())
}
