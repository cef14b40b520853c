use std::path::Path;

use super::binio::{Reader, Writer};
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::ndiff::Tensor;

pub const SCENE_MAGIC: &[u8; 4] = b"PBSC";
pub const SCENE_VERSION: u16 = 1;
const C: &str = "PBSC";

/// Serializes a scene as a PBSC v1 container.
pub fn encode_scene(scene: &Scene) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(SCENE_MAGIC).u16(SCENE_VERSION);

    let mut meta = Writer::new();
    meta.u64(scene.id)
        .u64(scene.seed)
        .u32(scene.grid_rows as u32)
        .u32(scene.grid_cols as u32);
    w.section(meta);

    let mut points = Writer::new();
    points.u64(scene.points.len() as u64);
    for p in &scene.points {
        points.f64s(p);
    }
    w.section(points);

    let mut labels = Writer::new();
    labels.u64(scene.labels.len() as u64);
    for &l in &scene.labels {
        labels.u32(l as u32);
    }
    w.section(labels);

    let mut calib = Writer::new();
    calib
        .u32(scene.camera.width() as u32)
        .u32(scene.camera.height() as u32);
    for row in scene.camera.intrinsics() {
        calib.f64s(row);
    }
    for row in scene.camera.extrinsics() {
        calib.f64s(row);
    }
    w.section(calib);

    let mut feats = Writer::new();
    feats
        .u64(scene.features.rows() as u64)
        .u64(scene.features.cols() as u64)
        .f64s(scene.features.data());
    w.section(feats);

    let mut pix = Writer::new();
    pix.u64(scene.pixel_labels.len() as u64);
    for &l in &scene.pixel_labels {
        pix.u32(l as u32);
    }
    w.section(pix);
    w.finish()
}

pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader::new(bytes);
    r.header(C, SCENE_MAGIC, SCENE_VERSION)?;

    let mut s = r.section(C, "meta")?;
    let (id, seed, grid_rows, grid_cols) = Reader::in_section(
        C,
        "meta",
        (|| Ok((s.u64()?, s.u64()?, s.u32()? as usize, s.u32()? as usize)))(),
    )?;
    s.finish(C, "meta")?;

    let mut s = r.section(C, "points")?;
    let points = Reader::in_section(
        C,
        "points",
        (|| {
            let n = s.u64()? as usize;
            (0..n)
                .map(|_| {
                    let v = s.f64s(5)?;
                    Ok([v[0], v[1], v[2], v[3], v[4]])
                })
                .collect::<Result<Vec<_>>>()
        })(),
    )?;
    s.finish(C, "points")?;

    let mut s = r.section(C, "labels")?;
    let labels = Reader::in_section(
        C,
        "labels",
        (|| {
            let n = s.u64()? as usize;
            (0..n)
                .map(|_| Ok(s.u32()? as usize))
                .collect::<Result<Vec<_>>>()
        })(),
    )?;
    s.finish(C, "labels")?;

    let mut s = r.section(C, "calib")?;
    let (width, height, k, e) = Reader::in_section(
        C,
        "calib",
        (|| {
            let width = s.u32()? as usize;
            let height = s.u32()? as usize;
            let kv = s.f64s(9)?;
            let ev = s.f64s(16)?;
            let mut k = [[0.0; 3]; 3];
            let mut e = [[0.0; 4]; 4];
            for i in 0..9 {
                k[i / 3][i % 3] = kv[i];
            }
            for i in 0..16 {
                e[i / 4][i % 4] = ev[i];
            }
            Ok((width, height, k, e))
        })(),
    )?;
    s.finish(C, "calib")?;
    let camera = CameraModel::new(k, e, width, height)?;

    let mut s = r.section(C, "features")?;
    let features = Reader::in_section(
        C,
        "features",
        (|| {
            let rows = s.u64()? as usize;
            let cols = s.u64()? as usize;
            let data = s.f64s(rows * cols)?;
            Tensor::matrix(rows, cols, data)
        })(),
    )?;
    s.finish(C, "features")?;

    let mut s = r.section(C, "pixel_labels")?;
    let pixel_labels = Reader::in_section(
        C,
        "pixel_labels",
        (|| {
            let n = s.u64()? as usize;
            (0..n)
                .map(|_| Ok(s.u32()? as usize))
                .collect::<Result<Vec<_>>>()
        })(),
    )?;
    s.finish(C, "pixel_labels")?;
    r.finish(C, "trailer")?;

    if labels.len() != points.len() {
        return Err(Error::Pairing {
            points: points.len(),
            labels: labels.len(),
        });
    }
    let cells = grid_rows * grid_cols;
    if features.rows() != cells || pixel_labels.len() != cells {
        return Err(Error::Corruption {
            container: C,
            section: "features",
            reason: format!(
                "grid {grid_rows}×{grid_cols} vs {} feature rows, {} pixel labels",
                features.rows(),
                pixel_labels.len()
            ),
        });
    }
    Ok(Scene {
        id,
        seed,
        points,
        labels,
        camera,
        grid_rows,
        grid_cols,
        features,
        pixel_labels,
    })
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_scene(scene))?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    decode_scene(&std::fs::read(path)?)
}
