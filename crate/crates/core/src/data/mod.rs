//! Class catalogs, embedding tables, synthetic paired scenes and file formats.

pub(crate) mod binio;
mod catalog;
mod container;
mod dataset;
mod embedding;
mod kitti;
mod scene;

pub use catalog::{
    ClassCatalog, BACKGROUND_NAME, NUSCENES_CLASSES, NUSCENES_UNSEEN, SEMANTIC_KITTI_CLASSES,
    SEMANTIC_KITTI_UNSEEN, SYNTHETIC_CLASSES, SYNTHETIC_UNSEEN,
};
pub use container::{
    decode_scene, encode_scene, load_scene, save_scene, SCENE_MAGIC, SCENE_VERSION,
};
pub use dataset::{generate_dataset, DataConfig, Dataset};
pub(crate) use embedding::normalize;
pub use embedding::{synth_class_embeddings, EmbeddingTable, Provenance};
pub use kitti::{
    load_kitti_labels, load_kitti_pair, load_kitti_points, parse_kitti_label_words,
    parse_kitti_points, semantic_id,
};
pub use scene::{
    class_signature, synth_scene, ClassSignature, Scene, SceneConfig, LIDAR_TO_CAMERA,
};
