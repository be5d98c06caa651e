//! Run configuration (TOML). One file drives every subcommand; all
//! randomness flows from `seed` through labeled derivations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::SplitFractions;
use crate::model::train::{HyperGrid, OptimizerKind};
use crate::residual::{GbtParams, PipelineConfig};
use crate::synth::SynthScenario;
use crate::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Paths resolve relative to the config file's directory.
    pub graph: PathBuf,
    pub rating_curve: PathBuf,
    pub series: Vec<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            graph: "graph.json".into(),
            rating_curve: "rating_curve.json".into(),
            series: vec!["series.csv".into()],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Station order; must match the graph file's node order.
    pub stations: Vec<String>,
    pub target: String,
    pub t_window: usize,
    pub horizons: Vec<usize>,
    /// Chronological split percentages (train, val, test).
    pub split: [u8; 3],
    pub action_level_ft: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            stations: vec!["S0".into(), "S1".into(), "S2".into()],
            target: "S0".into(),
            t_window: 24,
            horizons: vec![1, 2, 3, 4, 5, 6],
            split: [60, 15, 25],
            action_level_ft: 8.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub k_diffusion: usize,
    pub optimizer: OptimizerKind,
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub hidden_sizes: Vec<usize>,
    pub decoder_layers: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let grid = HyperGrid::default();
        TrainConfig {
            max_epochs: 40,
            patience: 10,
            k_diffusion: 2,
            optimizer: OptimizerKind::Adam,
            batch_sizes: grid.batch_sizes,
            learning_rates: grid.learning_rates,
            hidden_sizes: grid.hidden_sizes,
            decoder_layers: grid.decoder_layers,
        }
    }
}

impl TrainConfig {
    pub fn grid(&self) -> HyperGrid {
        HyperGrid {
            batch_sizes: self.batch_sizes.clone(),
            learning_rates: self.learning_rates.clone(),
            hidden_sizes: self.hidden_sizes.clone(),
            decoder_layers: self.decoder_layers.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub ar_enabled: bool,
    pub stage1_enabled: bool,
    pub stage2_enabled: bool,
    pub stage3_enabled: bool,
    pub lowess_fraction: f64,
    pub n_bootstrap: usize,
    pub gbt_trees: usize,
    pub gbt_depth: usize,
    pub gbt_learning_rate: f64,
    pub gbt_min_leaf: usize,
    pub clamp_floor: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            ar_enabled: true,
            stage1_enabled: true,
            stage2_enabled: true,
            stage3_enabled: true,
            lowess_fraction: 0.5,
            n_bootstrap: 20,
            gbt_trees: 50,
            gbt_depth: 3,
            gbt_learning_rate: 0.1,
            gbt_min_leaf: 2,
            clamp_floor: 0.01,
        }
    }
}

impl ResidualConfig {
    pub fn pipeline(&self, w_action: f64, seed: u64) -> PipelineConfig {
        PipelineConfig {
            ar_enabled: self.ar_enabled,
            stage1_enabled: self.stage1_enabled,
            stage2_enabled: self.stage2_enabled,
            stage3_enabled: self.stage3_enabled,
            w_action,
            lowess_fraction: self.lowess_fraction,
            n_bootstrap: self.n_bootstrap,
            gbt: GbtParams {
                n_trees: self.gbt_trees,
                max_depth: self.gbt_depth,
                learning_rate: self.gbt_learning_rate,
                min_samples_leaf: self.gbt_min_leaf,
            },
            clamp_floor: self.clamp_floor,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_hours: usize,
    #[serde(flatten)]
    pub scenario: SynthScenario,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_hours: 24 * 365,
            scenario: SynthScenario::default(),
        }
    }
}

/// Baseline models to train and report in `evaluate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Persistence,
    Linear,
    Mlp,
    Gbt,
    PlainGru,
    DcrnnDirect,
}

fn default_baselines() -> Vec<BaselineKind> {
    vec![
        BaselineKind::Persistence,
        BaselineKind::Linear,
        BaselineKind::Mlp,
        BaselineKind::Gbt,
        BaselineKind::PlainGru,
        BaselineKind::DcrnnDirect,
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub io: IoConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub residual: ResidualConfig,
    pub synth: SynthConfig,
    pub baselines: Vec<BaselineKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            io: IoConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            residual: ResidualConfig::default(),
            synth: SynthConfig::default(),
            baselines: default_baselines(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.io.graph = resolve(base, &config.io.graph);
        config.io.rating_curve = resolve(base, &config.io.rating_curve);
        config.io.series = config.io.series.iter().map(|p| resolve(base, p)).collect();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.horizons.is_empty()
            || self.data.horizons.iter().any(|h| !(1..=6).contains(h))
        {
            return Err(Error::Config(
                "horizons must be a non-empty subset of 1..=6".into(),
            ));
        }
        if self.data.t_window == 0 {
            return Err(Error::Config("t_window must be positive".into()));
        }
        if !self.data.stations.contains(&self.data.target) {
            return Err(Error::Config(format!(
                "target {} missing from stations",
                self.data.target
            )));
        }
        self.split_fractions().validate().map_err(|e| match e {
            Error::Contract(msg) => Error::Config(msg),
            other => other,
        })?;
        if self.train.k_diffusion == 0 {
            return Err(Error::Config("k_diffusion must be >= 1".into()));
        }
        Ok(())
    }

    pub fn split_fractions(&self) -> SplitFractions {
        SplitFractions {
            train_pct: self.data.split[0],
            val_pct: self.data.split[1],
            test_pct: self.data.split[2],
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.data.t_window, 24);
        assert_eq!(back.data.split, [60, 15, 25]);
        assert_eq!(back.train.batch_sizes, vec![16, 64]);
        assert_eq!(back.synth.scenario.n_stations, 3);
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 7\n[data]\nhorizons = [1, 3]\n").unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.data.horizons, vec![1, 3]);
        assert_eq!(config.data.t_window, 24);
        // io paths resolved against the config directory
        assert!(config.io.graph.starts_with(dir.path()));
    }

    #[test]
    fn bad_horizon_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[data]\nhorizons = [0]\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[data]\nnot_a_key = 1\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_is_config_error() {
        assert!(matches!(
            RunConfig::load(Path::new("/nonexistent/run.toml")),
            Err(Error::Config(_))
        ));
    }
}
