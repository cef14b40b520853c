use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::{ClassCatalog, SYNTHETIC_CLASSES, SYNTHETIC_UNSEEN};
use super::container::{load_scene, save_scene};
use super::embedding::{synth_class_embeddings, EmbeddingTable};
use super::scene::{synth_scene, Scene, SceneConfig};
use crate::error::{Error, Result};
use crate::parallel::{map_ordered, Execution};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Object classes; background is appended automatically.
    pub classes: Vec<String>,
    pub unseen: Vec<String>,
    pub embed_dim: usize,
    /// Number of simulated prompt templates averaged per class.
    pub prompt_drafts: usize,
    pub prompt_noise: f64,
    pub similarity_ceiling: f64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub scene: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
            unseen: SYNTHETIC_UNSEEN.iter().map(|s| s.to_string()).collect(),
            embed_dim: 32,
            prompt_drafts: 85,
            prompt_noise: 0.1,
            similarity_ceiling: 0.5,
            train_scenes: 200,
            val_scenes: 40,
            scene: SceneConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn catalog(&self) -> Result<ClassCatalog> {
        let names: Vec<&str> = self.classes.iter().map(String::as_str).collect();
        let unseen: Vec<&str> = self.unseen.iter().map(String::as_str).collect();
        ClassCatalog::with_unseen_names(&names, &unseen)
    }
}

/// Catalog, frozen embeddings and the train/val scene splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub catalog: ClassCatalog,
    pub embeddings: EmbeddingTable,
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
}

/// Generates every scene from the `data` substream of `seed`; scene `i`
/// depends only on `(seed, i)`.
pub fn generate_dataset(cfg: &DataConfig, seed: u64, exec: Execution) -> Result<Dataset> {
    let catalog = cfg.catalog()?;
    let embeddings = synth_class_embeddings(
        catalog.len(),
        cfg.embed_dim,
        cfg.prompt_drafts,
        cfg.prompt_noise,
        cfg.similarity_ceiling,
        rng::derive_seed(seed, "embeddings", 0),
    )?;
    let scene_seed = rng::derive_seed(seed, "data", 0);
    let ids: Vec<u64> = (0..(cfg.train_scenes + cfg.val_scenes) as u64).collect();
    let mut scenes = map_ordered(exec, &ids, |_, &id| {
        synth_scene(&catalog, &embeddings, &cfg.scene, id, scene_seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let val = scenes.split_off(cfg.train_scenes);
    Ok(Dataset {
        catalog,
        embeddings,
        train: scenes,
        val,
    })
}

fn scene_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pbsc"))
        .collect();
    files.sort();
    Ok(files)
}

impl Dataset {
    /// Writes `catalog.txt`, `embeddings.txt` and `train/`, `val/` scene files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("train"))?;
        std::fs::create_dir_all(dir.join("val"))?;
        std::fs::write(dir.join("catalog.txt"), self.catalog.to_text())?;
        std::fs::write(dir.join("embeddings.txt"), self.embeddings.to_text())?;
        for (split, scenes) in [("train", &self.train), ("val", &self.val)] {
            for s in scenes.iter() {
                save_scene(s, dir.join(split).join(format!("scene_{:05}.pbsc", s.id)))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.join("catalog.txt").is_file() {
            return Err(Error::EmptyDataset);
        }
        let catalog = ClassCatalog::parse_text(&std::fs::read_to_string(dir.join("catalog.txt"))?)?;
        let embeddings =
            EmbeddingTable::parse_text(&std::fs::read_to_string(dir.join("embeddings.txt"))?)?;
        if embeddings.num_classes() != catalog.len() {
            return Err(Error::dim(
                "dataset",
                &[catalog.len()],
                &[embeddings.num_classes()],
            ));
        }
        let load_split = |name: &str| -> Result<Vec<Scene>> {
            scene_files(&dir.join(name))?
                .iter()
                .map(load_scene)
                .collect()
        };
        Ok(Self {
            catalog,
            embeddings,
            train: load_split("train")?,
            val: load_split("val")?,
        })
    }

    /// Point counts per class over a split.
    pub fn class_histogram(&self, scenes: &[Scene]) -> Vec<usize> {
        let mut h = vec![0; self.catalog.len()];
        for s in scenes {
            for &l in &s.labels {
                h[l] += 1;
            }
        }
        h
    }
}
