//! Run configuration: one JSON document covering world generation, model,
//! training, paths, and evaluation settings. CLI flags override file values,
//! and every report embeds the fully resolved config for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthgen::WorldConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        RunPaths {
            data_dir: PathBuf::from("data"),
            checkpoint: PathBuf::from("out/model.ckpt"),
            report_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: RunPaths,
    /// NDCG cutoffs reported by eval.
    pub eval_ks: Vec<usize>,
    /// RBP persistence.
    pub rbp_p: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            paths: RunPaths::default(),
            eval_ks: vec![1, 10, 50, 100, 200],
            rbp_p: 0.95,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::Config("eval_ks must be nonempty positive cutoffs".into()));
        }
        if !(self.rbp_p > 0.0 && self.rbp_p < 1.0) {
            return Err(Error::Config(format!("rbp_p must be in (0,1), got {}", self.rbp_p)));
        }
        Ok(())
    }

    /// Parse a JSON config file; absent fields keep their defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_shipped_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model.d_embed, 128);
        assert_eq!(cfg.model.gcn_layers, 2);
        assert_eq!(cfg.model.gcn_hidden, 128);
        assert_eq!(cfg.model.gru_hidden, 128);
        assert_eq!(cfg.model.mlp_hidden, 128);
        assert_eq!(cfg.train.list_size, 10);
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.dropout, 0.5);
        assert_eq!(cfg.rbp_p, 0.95);
        assert_eq!(cfg.eval_ks, vec![1, 10, 50, 100, 200]);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_overrides_only_named_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(
            &path,
            r#"{"world": {"seed": 7, "n_influencers": 12}, "train": {"lr": 0.01}, "rbp_p": 0.9}"#,
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.world.seed, 7);
        assert_eq!(cfg.world.n_influencers, 12);
        assert_eq!(cfg.world.n_windows, WorldConfig::default().n_windows);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.list_size, 10);
        assert_eq!(cfg.rbp_p, 0.9);
        assert_eq!(cfg.model, ModelConfig::default());
    }

    #[test]
    fn missing_or_malformed_files_are_config_errors() {
        let err = RunConfig::from_file(Path::new("/nonexistent/run.json")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(RunConfig::from_file(&path).unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn bad_settings_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.rbp_p = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.eval_ks.clear();
        assert!(cfg.validate().is_err());
    }
}
