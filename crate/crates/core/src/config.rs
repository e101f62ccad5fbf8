//! Experiment configuration and the retraining strategies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderConfig;
use crate::metrics::PatternConfig;
use crate::neat::NeatParams;
use crate::voxel::Dims;

pub const SCHEMA_VERSION: u32 = 1;

/// How the autoencoder is rebuilt between exploration phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Keep the bootstrap model forever.
    Static,
    /// Fresh random weights every phase, no training.
    Random,
    /// Retrain on the most novel finals of the phase just completed.
    LatestSet,
    /// Retrain on the latest-set selections of every phase so far.
    FullHistory,
    /// Retrain on the union of all novelty archives.
    NoveltyArchive,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Static,
        Strategy::Random,
        Strategy::LatestSet,
        Strategy::FullHistory,
        Strategy::NoveltyArchive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Static => "static",
            Strategy::Random => "random",
            Strategy::LatestSet => "latest_set",
            Strategy::FullHistory => "full_history",
            Strategy::NoveltyArchive => "novelty_archive",
        }
    }

    pub fn trains(self) -> bool {
        !matches!(self, Strategy::Static | Strategy::Random)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownStrategy(pub String);

impl fmt::Display for UnknownStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let valid: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
        write!(f, "unknown strategy '{}' (valid: {})", self.0, valid.join(", "))
    }
}

impl std::error::Error for UnknownStrategy {}

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub strategy: Strategy,
    /// Exploration + transformation pairs.
    pub iterations: usize,
    pub populations: usize,
    pub generations_per_phase: usize,
    /// Neighbours in the novelty score.
    pub k: usize,
    /// Archive insertions per generation.
    pub archive_alpha: usize,
    /// Most novel finals taken per population for the latest-set strategies.
    pub latest_set_size: usize,
    pub seed: u64,
    pub neat: NeatParams,
    pub autoencoder: AutoencoderConfig,
    pub metrics: PatternConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            strategy: Strategy::NoveltyArchive,
            iterations: 10,
            populations: 10,
            generations_per_phase: 100,
            k: 15,
            archive_alpha: 3,
            latest_set_size: 100,
            seed: 42,
            neat: NeatParams::default(),
            autoencoder: AutoencoderConfig::default(),
            metrics: PatternConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// 2 iterations of 2 populations x 20 genomes for 10 generations, latent
    /// 64, 10 epochs.
    pub fn smoke() -> Self {
        Self {
            iterations: 2,
            populations: 2,
            generations_per_phase: 10,
            latest_set_size: 10,
            neat: NeatParams {
                population_size: 20,
                ..NeatParams::default()
            },
            autoencoder: AutoencoderConfig {
                latent_dim: 64,
                epochs: 10,
                ..AutoencoderConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn dims(&self) -> Dims {
        self.autoencoder.lattice
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version must be {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        let positive = [
            ("iterations", self.iterations),
            ("populations", self.populations),
            ("generations_per_phase", self.generations_per_phase),
            ("k", self.k),
            ("archive_alpha", self.archive_alpha),
            ("latest_set_size", self.latest_set_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        self.neat.validate()?;
        self.autoencoder.validate()?;
        let d = self.dims();
        let w = self.metrics.window;
        if w == 0 || w > 3 || w > d.x || w > d.y || w > d.z {
            return Err(format!("metrics.window {w} does not fit lattice {d}"));
        }
        if !(self.metrics.epsilon > 0.0) {
            return Err("metrics.epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parses and validates. Parse errors carry the field path, line and
    /// column.
    pub fn from_json(s: &str) -> Result<Self, String> {
        let mut de = serde_json::Deserializer::from_str(s);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| match e.path().to_string() {
            p if p == "." => e.into_inner().to_string(),
            p => format!("{p}: {}", e.into_inner()),
        })?;
        de.end().map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }
}
