//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//!
//! [model]
//! name = "untrained-b32"
//! source = "untrained"        # or "archive" with `archive = "weights.safetensors"`
//! preset = "vit-b/32"         # or a full [model.vit] table
//!
//! [data]
//! patch_size = 32
//! blobs = { count = 50 }
//! curves = { count = 50 }
//! binding = { shape = "blob", train = 100, test = 40 }
//!
//! [probe]
//! pairs_per_image = 16
//!
//! [continuity]
//! t_values = [-16, -8, 0, 8, 16]
//!
//! [ablation]
//! k = 5
//! n_controls = 20
//! ```

use std::path::{Path, PathBuf};

use gestalt_core::continuity::{Aggregation, ContinuityOptions};
use gestalt_core::probe::TrainConfig;
use gestalt_core::stimulus::{Axis, BindingParams, BlobParams, CurveParams, TrajectoryOptions};
use gestalt_core::vit::ViTConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    pub data: DataConfig,
    pub probe: ProbeSection,
    pub continuity: ContinuitySection,
    pub ablation: AblationSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Untrained,
    Archive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub source: ModelSource,
    pub archive: Option<PathBuf>,
    /// Untrained init seed; derived from the root seed when absent.
    pub init_seed: Option<u64>,
    /// `vit-b/16` or `vit-b/32`.
    pub preset: Option<String>,
    pub vit: Option<ViTConfig>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            name: "untrained-b32".into(),
            source: ModelSource::Untrained,
            archive: None,
            init_seed: None,
            preset: Some("vit-b/32".into()),
            vit: None,
        }
    }
}

impl ModelSpec {
    /// The architecture declared in the config, if any.
    pub fn declared_config(&self) -> Result<Option<ViTConfig>, CliError> {
        if let Some(v) = &self.vit {
            return Ok(Some(v.clone()));
        }
        match self.preset.as_deref() {
            None => Ok(None),
            Some("vit-b/16") => Ok(Some(ViTConfig::vit_b(16))),
            Some("vit-b/32") => Ok(Some(ViTConfig::vit_b(32))),
            Some(other) => Err(CliError::Config(format!("unknown model preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec<P> {
    pub count: usize,
    pub params: Option<P>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingKind {
    Blob,
    Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingSpec {
    pub shape: BindingKind,
    pub train: usize,
    pub test: usize,
    pub params: Option<BindingParams>,
}

impl BindingSpec {
    pub fn resolved(&self) -> BindingParams {
        self.params.clone().unwrap_or_else(|| match self.shape {
            BindingKind::Blob => BindingParams::blob(),
            BindingKind::Curve => BindingParams::curve(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSpec {
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub patch_size: u32,
    pub blobs: Option<DatasetSpec<BlobParams>>,
    pub curves: Option<DatasetSpec<CurveParams>>,
    pub binding: BindingSpec,
    pub ingested: Vec<IngestSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            blobs: Some(DatasetSpec { count: 50, params: None }),
            curves: Some(DatasetSpec { count: 50, params: None }),
            binding: BindingSpec { shape: BindingKind::Blob, train: 100, test: 40, params: None },
            ingested: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub pairs_per_image: usize,
    pub balance: bool,
    /// Layers to probe; all layers when absent.
    pub layers: Option<Vec<usize>>,
    pub train: TrainConfig,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self { pairs_per_image: 16, balance: true, layers: None, train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuitySection {
    pub t_values: Vec<i64>,
    pub axis: Axis,
    pub t_max: i64,
    pub max_targets: Option<usize>,
    pub aggregation: Aggregation,
    /// Number of highest- and lowest-scoring heads to plot tuning curves for.
    pub n_curves: usize,
}

impl Default for ContinuitySection {
    fn default() -> Self {
        Self {
            t_values: vec![-16, -12, -8, -4, 0, 4, 8, 12, 16],
            axis: Axis::X,
            t_max: 16,
            max_targets: Some(8),
            aggregation: Aggregation::PerImage,
            n_curves: 5,
        }
    }
}

impl ContinuitySection {
    pub fn options(&self, seed: u64) -> ContinuityOptions {
        ContinuityOptions {
            trajectory: TrajectoryOptions { axis: self.axis, t_max: self.t_max },
            seed,
            max_targets: self.max_targets,
            aggregation: self.aggregation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub k: usize,
    pub n_controls: usize,
    /// Probed layers to ablate at; every probed layer when absent.
    pub layers: Option<Vec<usize>>,
    /// Use only the first this many test images.
    pub test_images: Option<usize>,
    /// Continuity dataset whose `S(0)` ranks heads: `blobs`, `curves` or
    /// `ingested`. Defaults to the first one configured.
    pub score_dataset: Option<String>,
    /// Per-token (rather than token-pooled) head means.
    pub positional_means: bool,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { k: 5, n_controls: 20, layers: None, test_images: Some(20), score_dataset: None, positional_means: true }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let s = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Names of the configured continuity datasets, in scoring order.
    pub fn continuity_datasets(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.data.blobs.is_some() {
            v.push("blobs");
        }
        if self.data.curves.is_some() {
            v.push("curves");
        }
        if !self.data.ingested.is_empty() {
            v.push("ingested");
        }
        v
    }

    /// Checks everything that can be checked without touching the model.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.model.name.is_empty() || self.model.name.contains(['/', '\\', ',']) {
            return bad("model.name must be nonempty and free of `/`, `\\` and `,`".into());
        }
        match self.model.source {
            ModelSource::Archive if self.model.archive.is_none() => {
                return bad("model.source = \"archive\" needs model.archive".into())
            }
            ModelSource::Untrained if self.model.declared_config()?.is_none() => {
                return bad("an untrained model needs model.preset or [model.vit]".into())
            }
            _ => {}
        }
        if let Some(cfg) = self.model.declared_config()? {
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if cfg.patch_size as u32 != self.data.patch_size {
                return bad(format!(
                    "data.patch_size {} differs from the model's patch size {}",
                    self.data.patch_size, cfg.patch_size
                ));
            }
        }
        for (name, n) in [
            ("blobs", self.data.blobs.as_ref().map(|d| d.count)),
            ("curves", self.data.curves.as_ref().map(|d| d.count)),
        ] {
            if n == Some(0) {
                return bad(format!("data.{name}.count must be at least 1"));
            }
        }
        if self.data.binding.train == 0 || self.data.binding.test == 0 {
            return bad("data.binding.train and data.binding.test must be at least 1".into());
        }
        if self.continuity_datasets().is_empty() {
            return bad("configure at least one of data.blobs, data.curves, data.ingested".into());
        }
        if self.probe.pairs_per_image == 0 {
            return bad("probe.pairs_per_image must be at least 1".into());
        }
        self.probe.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let c = &self.continuity;
        if !c.t_values.contains(&0) {
            return bad("continuity.t_values must include 0".into());
        }
        if c.t_values.iter().any(|t| t.abs() > c.t_max) {
            return bad("every continuity.t_values entry must satisfy |t| <= t_max".into());
        }
        if c.max_targets == Some(0) || c.n_curves == 0 {
            return bad("continuity.max_targets and continuity.n_curves must be at least 1".into());
        }
        if self.ablation.n_controls == 0 || self.ablation.test_images == Some(0) {
            return bad("ablation.n_controls and ablation.test_images must be at least 1".into());
        }
        if let Some(ds) = &self.ablation.score_dataset {
            if !self.continuity_datasets().contains(&ds.as_str()) {
                return bad(format!("ablation.score_dataset `{ds}` is not configured"));
            }
        }
        Ok(())
    }

    pub fn score_dataset(&self) -> &str {
        self.ablation.score_dataset.as_deref().unwrap_or(self.continuity_datasets()[0])
    }
}
