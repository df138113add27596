use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use textsense_core::dataset::{DatasetSpec, Modality, Task};
use textsense_core::heads::{TalConfig, TrainConfig};
use textsense_core::metrics::{WIFI_TAL_THRESHOLDS, XRF_TAL_THRESHOLDS};
use textsense_core::text::{FusionConfig, Pooling, PromptStrategy};

/// Where label embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Deterministic pseudo-embeddings of the configured width.
    Pseudo,
    /// A cache file; `{strategy}` in the path is replaced by the strategy tag.
    Cache(PathBuf),
}

impl EmbeddingSource {
    pub fn resolve(&self, strategy: PromptStrategy) -> EmbeddingSource {
        match self {
            EmbeddingSource::Pseudo => EmbeddingSource::Pseudo,
            EmbeddingSource::Cache(p) => {
                EmbeddingSource::Cache(PathBuf::from(p.to_string_lossy().replace("{strategy}", strategy.tag())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSource {
    pub name: String,
    pub source: EmbeddingSource,
}

/// Strategy by source grid for `ablate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub strategies: Vec<PromptStrategy>,
    pub sources: Vec<NamedSource>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            strategies: PromptStrategy::ALL.to_vec(),
            sources: vec![NamedSource {
                name: "pseudo".into(),
                source: EmbeddingSource::Pseudo,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub modality: Modality,
    pub strategy: PromptStrategy,
    pub embedding_source: EmbeddingSource,
    /// Width of pseudo-embeddings.
    pub embedding_dim: usize,
    pub fusion: FusionConfig,
    /// Training seeds. The dataset has its own seed in `dataset.seed`.
    pub seeds: Vec<u64>,
    pub training: TrainConfig,
    /// Hidden width of the HAR head.
    pub hidden: usize,
    pub tal: TalConfig,
    /// tIoU thresholds for TAL reports; unset picks the WiFi set for CSI and
    /// the XRF set for FMCW and RFID.
    pub thresholds: Option<Vec<f64>>,
    pub dataset: DatasetSpec,
    /// Read the dataset from here instead of generating it from `dataset`.
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub ablation: AblationGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Har,
            modality: Modality::Csi,
            strategy: PromptStrategy::Tce,
            embedding_source: EmbeddingSource::Pseudo,
            embedding_dim: 32,
            fusion: FusionConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            training: TrainConfig::default(),
            hidden: 32,
            tal: TalConfig::default(),
            thresholds: None,
            dataset: DatasetSpec::default(),
            dataset_dir: None,
            output_dir: PathBuf::from("runs/default"),
            ablation: AblationGrid::default(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub strategy: Option<PromptStrategy>,
    pub text_weight: Option<f64>,
    pub pooling: Option<Pooling>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if !o.seeds.is_empty() {
            self.seeds = o.seeds.clone();
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(s) = o.strategy {
            self.strategy = s;
        }
        if let Some(p) = o.pooling {
            self.fusion.pooling = p;
        }
        if let Some(w) = o.text_weight {
            self.fusion = FusionConfig::with_text_weight(w, self.fusion.pooling)?;
        }
        Ok(())
    }

    /// Copies task and modality into the dataset spec and checks every
    /// invariant except the presence of cache files.
    pub fn resolve(mut self) -> Result<Self> {
        self.dataset.task = self.task;
        self.dataset.modality = self.modality;
        if self.thresholds.is_none() {
            self.thresholds = Some(match self.modality {
                Modality::Csi => WIFI_TAL_THRESHOLDS.to_vec(),
                Modality::Fmcw | Modality::Rfid => XRF_TAL_THRESHOLDS.to_vec(),
            });
        }
        self.validate_settings()?;
        Ok(self)
    }

    /// Settings checks plus the existence of the selected cache file.
    pub fn validate(&self) -> Result<()> {
        self.validate_settings()?;
        if let EmbeddingSource::Cache(p) = self.embedding_source.resolve(self.strategy) {
            if !p.exists() {
                bail!("invalid argument: embedding cache {} does not exist", p.display());
            }
        }
        Ok(())
    }

    fn validate_settings(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("invalid argument: at least one seed is required");
        }
        if self.embedding_dim == 0 || self.hidden == 0 {
            bail!("invalid argument: embedding_dim and hidden must be >= 1");
        }
        let t = self.tal_thresholds();
        if t.is_empty() || t.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            bail!("invalid argument: thresholds must be a nonempty list in (0, 1]");
        }
        self.fusion.validate()?;
        self.training.validate()?;
        self.tal.validate()?;
        self.dataset.validate()?;
        Ok(())
    }

    pub fn tal_thresholds(&self) -> &[f64] {
        match &self.thresholds {
            Some(t) => t,
            None if self.modality == Modality::Csi => &WIFI_TAL_THRESHOLDS,
            None => &XRF_TAL_THRESHOLDS,
        }
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("resolved_config.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
