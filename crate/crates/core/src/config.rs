//! Flat TOML run configuration shared by every subcommand.
//!
//! Every key is optional. Unknown keys are rejected so that typos fail loudly
//! instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::synthetic::{generate_synthetic, GeneratorSpec, PatternMode};
use crate::data::{load_dataset_dir, load_single_file, TemporalKG};
use crate::error::{EstError, Result};
use crate::eval::FilterMode;
use crate::memory::MemoryParams;
use crate::model::{BackboneKind, ModelConfig, ScorerKind};
use crate::train::{Ablation, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // Data source: a directory with train/valid/test files, a single file
    // split 8:1:1 in time order, or a synthetic generator.
    pub dataset_dir: Option<PathBuf>,
    pub dataset_file: Option<PathBuf>,
    pub time_step: u32,
    pub inverse: bool,
    pub synthetic_mode: PatternMode,
    pub synthetic_seed: Option<u64>,
    pub synthetic_entities: usize,
    pub synthetic_relations: usize,
    pub synthetic_timestamps: usize,
    pub synthetic_period: usize,
    pub synthetic_facts_per_timestamp: usize,
    pub synthetic_askers: usize,
    pub synthetic_echoes: usize,
    pub entity_names: Option<PathBuf>,

    pub dim: usize,
    pub time_dim: usize,
    pub heads: usize,
    pub mamba_state: usize,
    pub backbone: BackboneKind,
    pub scorer: ScorerKind,
    pub history_len: usize,

    pub lambda: f64,
    pub kappa: f64,
    pub gamma: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub min_lr_factor: f64,
    pub neg_count: usize,
    pub grad_clip: f64,
    pub ablation: String,
    pub validate: bool,

    pub filter: FilterMode,
    pub out_dir: PathBuf,
    /// Write an extra checkpoint every N epochs (0 keeps only the last one).
    pub checkpoint_every: usize,
    pub truncation_percents: Vec<u32>,
    pub analysis_top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GeneratorSpec::default();
        let t = TrainConfig::default();
        let m = MemoryParams::default();
        RunConfig {
            seed: 0,
            dataset_dir: None,
            dataset_file: None,
            time_step: 1,
            inverse: true,
            synthetic_mode: g.mode,
            synthetic_seed: None,
            synthetic_entities: g.entity_count,
            synthetic_relations: g.relation_count,
            synthetic_timestamps: g.timestamp_count,
            synthetic_period: g.period,
            synthetic_facts_per_timestamp: g.facts_per_timestamp,
            synthetic_askers: g.askers_per_key,
            synthetic_echoes: g.echo_count,
            entity_names: None,
            dim: 64,
            time_dim: 32,
            heads: 1,
            mamba_state: 8,
            backbone: BackboneKind::Transformer,
            scorer: ScorerKind::DistMult,
            history_len: t.history_len,
            lambda: m.lambda,
            kappa: m.kappa,
            gamma: m.gamma,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            warmup_epochs: t.warmup_epochs,
            min_lr_factor: t.min_lr_factor,
            neg_count: t.neg_count,
            grad_clip: t.grad_clip,
            ablation: "none".into(),
            validate: t.validate,
            filter: t.filter,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            truncation_percents: vec![50, 70, 90],
            analysis_top_k: 5,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| EstError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data paths are resolved against the
    /// file's directory and made absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EstError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            for p in [
                &mut cfg.dataset_dir,
                &mut cfg.dataset_file,
                &mut cfg.entity_names,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    let joined = base.join(&*p);
                    *p = std::path::absolute(&joined).map_err(|e| EstError::io(joined, e))?;
                }
            }
        }
        Ok(cfg)
    }

    /// Cross-field checks beyond what the individual configs validate.
    pub fn check(&self) -> Result<()> {
        if self.dataset_dir.is_some() && self.dataset_file.is_some() {
            return Err(EstError::Config("set at most one of dataset_dir and dataset_file".into()));
        }
        if self.time_step == 0 {
            return Err(EstError::Config("time_step must be positive".into()));
        }
        self.ablation()?;
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn ablation(&self) -> Result<Ablation> {
        self.ablation.parse()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// SHA-256 of the canonical TOML form, in hex. The output directory is
    /// left out so identical runs hash alike wherever they are written.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        let digest = Sha256::digest(canon.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short deterministic identifier for reports.
    pub fn run_id(&self) -> String {
        format!("est-{}-s{}", &self.hash()[..12], self.seed)
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            mode: self.synthetic_mode,
            entity_count: self.synthetic_entities,
            relation_count: self.synthetic_relations,
            timestamp_count: self.synthetic_timestamps,
            period: self.synthetic_period,
            history_len: self.history_len,
            facts_per_timestamp: self.synthetic_facts_per_timestamp,
            askers_per_key: self.synthetic_askers,
            echo_count: self.synthetic_echoes,
            inverse: self.inverse,
        }
    }

    pub fn load_graph(&self) -> Result<TemporalKG> {
        if let Some(dir) = &self.dataset_dir {
            return load_dataset_dir(dir, self.time_step, self.inverse);
        }
        if let Some(file) = &self.dataset_file {
            return load_single_file(file, self.time_step, self.inverse, (0.8, 0.1, 0.1));
        }
        let seed = self.synthetic_seed.unwrap_or(self.seed);
        Ok(generate_synthetic(&self.generator_spec(), seed)?.kg)
    }

    pub fn model_config(&self, kg: &TemporalKG) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            dim: self.dim,
            time_dim: self.time_dim,
            entity_count: kg.entity_count(),
            relation_count: kg.relation_count(),
            history_len: self.history_len,
            backbone: self.backbone,
            scorer: self.scorer,
            heads: self.heads,
            mamba_state: self.mamba_state,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn memory_params(&self) -> MemoryParams {
        MemoryParams {
            lambda: self.lambda,
            kappa: self.kappa,
            gamma: self.gamma,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup_epochs,
            min_lr_factor: self.min_lr_factor,
            neg_count: self.neg_count,
            memory: self.memory_params(),
            history_len: self.history_len,
            ablation: self.ablation()?,
            seed: self.seed,
            grad_clip: self.grad_clip,
            filter: self.filter,
            validate: self.validate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_toml_str("dimm = 3").unwrap_err();
        assert!(err.to_string().contains("dimm"), "{err}");
    }

    #[test]
    fn resolved_form_round_trips() {
        let cfg = RunConfig::from_toml_str("seed = 9\nbackbone = \"mamba\"\nablation = \"wo_state\"").unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_toml_str("ablation = \"wo_nothing\"").is_err());
        assert!(RunConfig::from_toml_str("backbone = \"gru\"").is_err());
        assert!(RunConfig::from_toml_str("lr = -1.0").is_err());
        assert!(RunConfig::from_toml_str("dataset_dir = \"a\"\ndataset_file = \"b\"").is_err());
    }
}
