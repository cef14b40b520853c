use std::path::{Path, PathBuf};

use pointalign::data::DataConfig;
use pointalign::train::TrainConfig;
use pointalign::Error;
use serde::{Deserialize, Serialize};

/// One component of the alignment loss that an ablation row switches on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Class,
    Patch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: usize,
    /// Each row lists the components that are on; the empty row is the
    /// pseudo-label-only baseline.
    pub grid: Vec<Vec<Component>>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        use Component::*;
        Self {
            seeds: 5,
            grid: vec![vec![], vec![Class], vec![Patch], vec![Class, Patch]],
        }
    }
}

pub fn row_name(row: &[Component]) -> String {
    if row.is_empty() {
        return "baseline".into();
    }
    row.iter()
        .map(|c| match c {
            Component::Class => "class",
            Component::Patch => "patch",
        })
        .collect::<Vec<_>>()
        .join("+")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.data.catalog()?;
        self.train.validate()?;
        if self.ablation.grid.is_empty() {
            return Err(Error::Config("ablation grid is empty".into()));
        }
        if self.ablation.seeds == 0 {
            return Err(Error::Config("ablation needs at least one seed".into()));
        }
        Ok(())
    }
}
