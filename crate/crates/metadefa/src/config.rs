//! Run configuration: one JSON document, every field defaulted, unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use metadefa_core::{
    CorruptionConfig, DomainDataset, LossWeights, MetaConfig, SyntheticSpec, TinyCnnConfig, TrainSetup,
};
use serde::{Deserialize, Serialize};

use crate::dataset::load_image_folder;
use crate::error::{Error, Result};

/// Where the domains come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated shape benchmark; `seed` fixes the images for every run.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default)]
        seed: u64,
    },
    /// One manifest per domain, all relative to `root`.
    Folder {
        root: PathBuf,
        manifests: Vec<PathBuf>,
        #[serde(default = "default_image_size")]
        image_size: usize,
    },
}

fn default_image_size() -> usize {
    32
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            spec: SyntheticSpec::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Vec<DomainDataset>> {
        match self {
            DatasetConfig::Synthetic { spec, seed } => Ok(metadefa_core::data::generate_synthetic(spec, *seed)?),
            DatasetConfig::Folder {
                root,
                manifests,
                image_size,
            } => manifests
                .iter()
                .map(|m| load_image_folder(root, &root.join(m), *image_size))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub source_domain: String,
    /// Domains to evaluate; empty means every domain except the source.
    pub target_domains: Vec<String>,
    pub model: TinyCnnConfig,
    /// `meta.seed` is overwritten per run from `seeds`.
    pub meta: MetaConfig,
    /// `loss_weights.terms` are the ablation switches.
    pub loss_weights: LossWeights,
    pub corruption: CorruptionConfig,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            source_domain: "source".into(),
            target_domains: Vec::new(),
            model: TinyCnnConfig::default(),
            meta: MetaConfig::default(),
            loss_weights: LossWeights::default(),
            corruption: CorruptionConfig::default(),
            output_dir: PathBuf::from("runs"),
            seeds: (0..5).collect(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks that need no data on disk.
    pub fn validate(&self) -> Result<()> {
        let config_err = |e: metadefa_core::Error| Error::Config(e.to_string());
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.target_domains.contains(&self.source_domain) {
            return Err(Error::Config(format!(
                "source domain `{}` cannot also be a target",
                self.source_domain
            )));
        }
        self.model.validate().map_err(config_err)?;
        self.setup(0).validate().map_err(config_err)
    }

    /// Training setup for one seed.
    pub fn setup(&self, seed: u64) -> TrainSetup {
        TrainSetup {
            meta: MetaConfig {
                seed,
                ..self.meta.clone()
            },
            weights: self.loss_weights,
            corruption: self.corruption.clone(),
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed_{seed}"))
    }

    /// Resolved target names, checked against the loaded domains.
    pub fn targets(&self, domains: &[DomainDataset]) -> Result<Vec<String>> {
        let names: Vec<&str> = domains.iter().map(|d| d.name.as_str()).collect();
        if !names.contains(&self.source_domain.as_str()) {
            return Err(Error::UnknownDomain(self.source_domain.clone()));
        }
        let targets: Vec<String> = if self.target_domains.is_empty() {
            names
                .iter()
                .filter(|n| **n != self.source_domain)
                .map(|n| n.to_string())
                .collect()
        } else {
            self.target_domains.clone()
        };
        for t in &targets {
            if !names.contains(&t.as_str()) {
                return Err(Error::UnknownDomain(t.clone()));
            }
        }
        Ok(targets)
    }
}
