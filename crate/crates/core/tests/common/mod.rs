#![allow(dead_code)]

use pointalign::data::{DataConfig, SceneConfig};
use pointalign::train::TrainConfig;

/// A few small scenes so that full training runs stay in the sub-second range.
pub fn tiny_data() -> DataConfig {
    DataConfig {
        train_scenes: 6,
        val_scenes: 3,
        scene: SceneConfig {
            num_points: 256,
            grid_rows: 12,
            grid_cols: 16,
            focal: 80.0,
            ..SceneConfig::default()
        },
        ..DataConfig::default()
    }
}

pub fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        seed: 5,
        ..TrainConfig::default()
    }
}
