use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dynamics::SolverConfig;
use crate::policy::GrnnConfig;
use crate::scenario::GenConfig;
use crate::training::{IlConfig, RlConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub testset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log_dir: Option<PathBuf>,
}

/// Contents of the `--config` file. `solver` and `grnn`, when present,
/// replace the per-trainer values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub paths: Paths,
    pub solver: Option<SolverConfig>,
    pub grnn: Option<GrnnConfig>,
    pub gen: GenConfig,
    pub il: IlConfig,
    pub rl: RlConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let s = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&s).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn il(&self) -> IlConfig {
        let mut c = self.il.clone();
        if let Some(s) = self.solver {
            c.solver = s;
        }
        if let Some(g) = self.grnn {
            c.grnn = g;
        }
        c
    }

    pub fn rl(&self) -> RlConfig {
        let mut c = self.rl.clone();
        if let Some(s) = self.solver {
            c.solver = s;
        }
        if let Some(g) = self.grnn {
            c.grnn = g;
        }
        c
    }

    pub fn solver(&self) -> SolverConfig {
        self.solver.unwrap_or_default()
    }
}
