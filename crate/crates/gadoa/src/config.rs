//! Optional JSON configuration file.
//!
//! Every field is optional; command-line flags override file values, which
//! override the built-in defaults. The `ranges` section mirrors
//! [`crate::room::SceneRanges`] and makes every acoustic simulation
//! parameter overridable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::room::SceneRanges;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Acoustic parameter ranges (full or partial override).
    pub ranges: Option<SceneRanges>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub samples: Option<usize>,
    pub deviation_steps_m: Option<Vec<f64>>,
    pub t60_s: Option<f64>,
    pub snr_db: Option<f64>,
    pub signal_duration_s: Option<f64>,
    pub epsilon_deg: Option<f64>,
    pub algorithms: Option<Vec<String>>,
    pub models_dir: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub train: Option<TrainOverrides>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patience: Option<usize>,
    pub val_fraction: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn ranges_or_default(&self) -> SceneRanges {
        self.ranges.clone().unwrap_or_default()
    }
}
