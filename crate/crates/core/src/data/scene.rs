use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::catalog::ClassCatalog;
use super::embedding::{normalize, EmbeddingTable};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, FeatureGrid};
use crate::ndiff::Tensor;
use crate::rng;

/// One paired sample: a point cloud with per-point labels, the camera that
/// relates it to the image, the teacher's dense feature map and the
/// per-cell image labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub seed: u64,
    /// `x, y, z, intensity, ring` (ring is zero for synthetic data).
    pub points: Vec<[f64; 5]>,
    pub labels: Vec<usize>,
    pub camera: CameraModel,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// `[grid_rows·grid_cols, C]`, unit-norm rows.
    pub features: Tensor,
    pub pixel_labels: Vec<usize>,
}

impl Scene {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn xyz(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }

    pub fn grid(&self) -> FeatureGrid {
        FeatureGrid {
            rows: self.grid_rows,
            cols: self.grid_cols,
            image_h: self.camera.height(),
            image_w: self.camera.width(),
        }
    }

    /// Points as an `[N, 5]` tensor.
    pub fn point_tensor(&self) -> Tensor {
        let data = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        Tensor::matrix(self.points.len(), 5, data).expect("N×5")
    }
}

/// Shape and noise parameters of the synthetic scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub num_points: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Image pixels per feature cell along each axis.
    pub cell_pixels: usize,
    pub focal: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub min_blobs_per_class: usize,
    pub max_blobs_per_class: usize,
    /// Scenes missing a seen-class object get one added.
    pub min_seen_blobs: usize,
    /// σ_pt: jitter added to every point coordinate.
    pub point_noise: f64,
    /// σ_px: Gaussian noise on teacher features before re-normalization.
    pub pixel_noise: f64,
    /// Fraction of cells whose teacher feature encodes a random class.
    pub label_corruption: f64,
    pub background_fraction: f64,
    /// Fraction of points placed outside the camera frustum.
    pub out_of_view_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_points: 2048,
            grid_rows: 48,
            grid_cols: 64,
            cell_pixels: 8,
            focal: 320.0,
            min_depth: 5.0,
            max_depth: 30.0,
            min_blobs_per_class: 0,
            max_blobs_per_class: 2,
            min_seen_blobs: 1,
            point_noise: 0.02,
            pixel_noise: 0.3,
            label_corruption: 0.05,
            background_fraction: 0.3,
            out_of_view_fraction: 0.1,
        }
    }
}

/// Fixed appearance of a class in the synthetic world: the height band its
/// objects occupy, their return intensity and their horizontal extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassSignature {
    pub height: f64,
    pub intensity: f64,
    pub extent: f64,
}

const HEIGHT_SPREAD: f64 = 0.22;
const INTENSITY_SPREAD: f64 = 0.06;
const GROUND_HEIGHT: f64 = -1.8;

/// Class `c` of the synthetic world. Signatures tile a height × intensity
/// grid so a pointwise network can separate them.
pub fn class_signature(c: usize) -> ClassSignature {
    ClassSignature {
        height: -0.9 + 0.9 * (c / 2) as f64,
        intensity: if c.is_multiple_of(2) { 0.25 } else { 0.7 },
        extent: 0.5 + 0.25 * (c % 4) as f64,
    }
}

/// LiDAR frame (x forward, y left, z up) to camera frame (x right, y down,
/// z forward), sensors co-located.
pub const LIDAR_TO_CAMERA: [[f64; 4]; 4] = [
    [0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

struct Blob {
    class: usize,
    center: [f64; 3],
    extent: f64,
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates one synthetic scene from `seed`.
///
/// Objects are Gaussian blobs whose height and intensity follow their
/// class signature; background is a ground plane. The teacher feature of a
/// cell is `normalize(Emb[label] + σ_px·ε)`, where the label comes from the
/// nearest projected point or, for cells without points, the nearest blob
/// footprint.
pub fn synth_scene(
    catalog: &ClassCatalog,
    emb: &EmbeddingTable,
    cfg: &SceneConfig,
    id: u64,
    seed: u64,
) -> Result<Scene> {
    let n_classes = catalog.len();
    if emb.num_classes() != n_classes {
        return Err(Error::dim(
            "synth_scene",
            &[emb.num_classes()],
            &[n_classes],
        ));
    }
    if !(cfg.min_depth > 1.0 && cfg.max_depth > cfg.min_depth) {
        return Err(Error::Generation(format!(
            "depth range [{}, {}] leaves no frustum volume",
            cfg.min_depth, cfg.max_depth
        )));
    }
    if cfg.max_blobs_per_class < cfg.min_blobs_per_class {
        return Err(Error::Generation("max blobs below min blobs".into()));
    }
    let width = cfg.grid_cols * cfg.cell_pixels;
    let height = cfg.grid_rows * cfg.cell_pixels;
    let camera = CameraModel::centered(cfg.focal, LIDAR_TO_CAMERA, width, height)?;
    let grid = FeatureGrid::new(cfg.grid_rows, cfg.grid_cols, height, width)?;
    let half_fov = (width as f64 / 2.0 / cfg.focal).atan();

    let mut rng = rng::stream(seed, "scene", id);
    let bg = catalog.background();

    let mut blobs = Vec::new();
    for class in 0..bg {
        let count = rng.random_range(cfg.min_blobs_per_class..=cfg.max_blobs_per_class);
        for _ in 0..count {
            blobs.push(sample_blob(&mut rng, class, cfg, half_fov));
        }
    }
    let seen_blobs = blobs.iter().filter(|b| catalog.is_seen(b.class)).count();
    if seen_blobs < cfg.min_seen_blobs && !catalog.seen().is_empty() {
        for _ in seen_blobs..cfg.min_seen_blobs {
            let class = catalog.seen()[rng.random_range(0..catalog.seen().len())];
            blobs.push(sample_blob(&mut rng, class, cfg, half_fov));
        }
    }
    if cfg.num_points == 0 {
        return Err(Error::Generation("scene needs at least one point".into()));
    }

    let n_out = (cfg.num_points as f64 * cfg.out_of_view_fraction).round() as usize;
    let n_bg = if blobs.is_empty() {
        cfg.num_points - n_out
    } else {
        (cfg.num_points as f64 * cfg.background_fraction).round() as usize
    };
    let n_obj = cfg.num_points.saturating_sub(n_out + n_bg);

    let mut points = Vec::with_capacity(cfg.num_points);
    let mut labels = Vec::with_capacity(cfg.num_points);
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng| cfg.point_noise * gauss(rng);

    for i in 0..n_obj {
        let blob = &blobs[i % blobs.len()];
        let sig = class_signature(blob.class);
        let x = blob.center[0] + blob.extent * gauss(&mut rng) + jitter(&mut rng);
        let y = blob.center[1] + blob.extent * gauss(&mut rng) + jitter(&mut rng);
        let z = blob.center[2] + HEIGHT_SPREAD * gauss(&mut rng) + jitter(&mut rng);
        let intensity = (sig.intensity + INTENSITY_SPREAD * gauss(&mut rng)).clamp(0.0, 1.0);
        points.push([x, y, z, intensity, 0.0]);
        labels.push(blob.class);
    }
    for _ in 0..n_bg {
        let depth = rng.random_range(2.0..cfg.max_depth);
        let lateral = depth * half_fov.tan() * rng.random_range(-1.2..1.2);
        let z = GROUND_HEIGHT + 0.05 * gauss(&mut rng);
        let intensity = rng.random_range(0.0..1.0);
        points.push([depth, lateral, z, intensity, 0.0]);
        labels.push(bg);
    }
    for _ in 0..n_out {
        // Behind the sensor: same world, no camera coverage.
        let class = rng.random_range(0..n_classes);
        let depth = -rng.random_range(cfg.min_depth..cfg.max_depth);
        let lateral = rng.random_range(-15.0..15.0);
        let (z, intensity) = if class == bg {
            (
                GROUND_HEIGHT + 0.05 * gauss(&mut rng),
                rng.random_range(0.0..1.0),
            )
        } else {
            let sig = class_signature(class);
            (
                sig.height + HEIGHT_SPREAD * gauss(&mut rng),
                (sig.intensity + INTENSITY_SPREAD * gauss(&mut rng)).clamp(0.0, 1.0),
            )
        };
        points.push([depth, lateral, z, intensity, 0.0]);
        labels.push(class);
    }

    let pixel_labels = render_pixel_labels(&camera, &grid, &blobs, &points, &labels, bg);
    let features = teacher_features(emb, &pixel_labels, cfg, &mut rng);

    Ok(Scene {
        id,
        seed,
        points,
        labels,
        camera,
        grid_rows: cfg.grid_rows,
        grid_cols: cfg.grid_cols,
        features,
        pixel_labels,
    })
}

fn sample_blob<R: Rng>(rng: &mut R, class: usize, cfg: &SceneConfig, half_fov: f64) -> Blob {
    let sig = class_signature(class);
    let depth = rng.random_range(cfg.min_depth..cfg.max_depth);
    let lateral = depth * half_fov.tan() * rng.random_range(-0.8..0.8);
    Blob {
        class,
        center: [depth, lateral, sig.height],
        extent: sig.extent,
    }
}

fn render_pixel_labels(
    camera: &CameraModel,
    grid: &FeatureGrid,
    blobs: &[Blob],
    points: &[[f64; 5]],
    labels: &[usize],
    bg: usize,
) -> Vec<usize> {
    let cells = grid.num_cells();
    let mut out = vec![bg; cells];
    let mut blob_depth = vec![f64::INFINITY; cells];
    let fx = camera.intrinsics()[0][0];
    let cell_w = grid.image_w as f64 / grid.cols as f64;
    let cell_h = grid.image_h as f64 / grid.rows as f64;

    // Blob footprints fill cells the sparse points miss.
    for blob in blobs {
        let proj = camera.project(&[blob.center]);
        let depth = proj.depth[0];
        if depth <= 0.0 {
            continue;
        }
        let (u0, v0) = (proj.u[0], proj.v[0]);
        let ru = fx * 1.6 * blob.extent / depth;
        let rv = fx * 1.6 * HEIGHT_SPREAD / depth;
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let du = ((c as f64 + 0.5) * cell_w - u0) / ru;
                let dv = ((r as f64 + 0.5) * cell_h - v0) / rv;
                let cell = r * grid.cols + c;
                if du * du + dv * dv <= 1.0 && depth < blob_depth[cell] {
                    blob_depth[cell] = depth;
                    out[cell] = blob.class;
                }
            }
        }
    }

    // Cells hit by points take the label of the nearest point.
    let xyz: Vec<[f64; 3]> = points.iter().map(|p| [p[0], p[1], p[2]]).collect();
    let proj = camera.project(&xyz);
    let mut zbuf = vec![f64::INFINITY; cells];
    for (i, &label) in labels.iter().enumerate() {
        if !proj.valid[i] {
            continue;
        }
        if let Some(cell) = grid.cell_of(proj.u[i], proj.v[i]) {
            if proj.depth[i] < zbuf[cell] {
                zbuf[cell] = proj.depth[i];
                out[cell] = label;
            }
        }
    }
    out
}

fn teacher_features<R: Rng>(
    emb: &EmbeddingTable,
    pixel_labels: &[usize],
    cfg: &SceneConfig,
    rng: &mut R,
) -> Tensor {
    let dim = emb.dim();
    let n = emb.num_classes();
    let mut data = Vec::with_capacity(pixel_labels.len() * dim);
    for &label in pixel_labels {
        let shown = if cfg.label_corruption > 0.0 && rng.random::<f64>() < cfg.label_corruption {
            rng.random_range(0..n)
        } else {
            label
        };
        let mut f: Vec<f64> = emb.rows().row(shown).to_vec();
        if cfg.pixel_noise > 0.0 {
            for v in f.iter_mut() {
                *v += cfg.pixel_noise * gauss(rng);
            }
            normalize(&mut f);
        }
        data.extend(f);
    }
    Tensor::matrix(pixel_labels.len(), dim, data).expect("cells × C")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::embedding::synth_class_embeddings;

    fn setup() -> (ClassCatalog, EmbeddingTable) {
        let cat = ClassCatalog::synthetic();
        let emb = synth_class_embeddings(cat.len(), 32, 85, 0.1, 0.5, 1).unwrap();
        (cat, emb)
    }

    #[test]
    fn noiseless_teacher_emits_embedding_rows() {
        let (cat, emb) = setup();
        let cfg = SceneConfig {
            pixel_noise: 0.0,
            label_corruption: 0.0,
            ..SceneConfig::default()
        };
        let s = synth_scene(&cat, &emb, &cfg, 0, 9).unwrap();
        for (cell, &l) in s.pixel_labels.iter().enumerate() {
            assert_eq!(s.features.row(cell), emb.rows().row(l));
        }
    }

    #[test]
    fn background_only_scene() {
        let (cat, emb) = setup();
        let cfg = SceneConfig {
            max_blobs_per_class: 0,
            min_seen_blobs: 0,
            out_of_view_fraction: 0.0,
            ..SceneConfig::default()
        };
        let s = synth_scene(&cat, &emb, &cfg, 0, 3).unwrap();
        assert!(s.pixel_labels.iter().all(|&l| l == cat.background()));
        assert!(s.labels.iter().all(|&l| l == cat.background()));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (cat, emb) = setup();
        let cfg = SceneConfig::default();
        let a = synth_scene(&cat, &emb, &cfg, 4, 17).unwrap();
        let b = synth_scene(&cat, &emb, &cfg, 4, 17).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(&cat, &emb, &cfg, 5, 17).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn training_scenes_have_seen_points_and_unit_features() {
        let (cat, emb) = setup();
        let cfg = SceneConfig::default();
        for id in 0..10 {
            let s = synth_scene(&cat, &emb, &cfg, id, 1).unwrap();
            assert_eq!(s.num_points(), cfg.num_points);
            assert!(s.labels.iter().any(|&l| cat.is_seen(l)));
            assert!(s.labels.iter().all(|&l| l < cat.len()));
            for cell in 0..s.features.rows() {
                let n: f64 = s.features.row(cell).iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collapsed_frustum_is_rejected() {
        let (cat, emb) = setup();
        let cfg = SceneConfig {
            min_depth: 10.0,
            max_depth: 10.0,
            ..SceneConfig::default()
        };
        assert!(matches!(
            synth_scene(&cat, &emb, &cfg, 0, 0),
            Err(Error::Generation(_))
        ));
    }
}
