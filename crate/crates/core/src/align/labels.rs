use std::sync::atomic::{AtomicUsize, Ordering};

use crate::data::{ClassCatalog, EmbeddingTable};
use crate::error::{Error, Result};
use crate::geometry::{FeatureGrid, Projection, RasterPlan};
use crate::model::{head_logits_tensor, predict_labels};
use crate::ndiff::Tensor;

/// Where a training label came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LabelSource {
    SeenGt,
    TeacherProjected,
    SelfTrain,
    Unlabeled,
}

/// Per-point training targets. Unlabeled points carry weight 0 and a
/// placeholder label.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<usize>,
    pub source: Vec<LabelSource>,
    pub weights: Vec<f64>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, source: LabelSource) -> usize {
        self.source.iter().filter(|&&s| s == source).count()
    }
}

/// The seen-class annotations of one scene: a point's label is visible only
/// if it belongs to a seen class. Every lookup is counted.
pub struct SeenAnnotations<'a> {
    labels: &'a [usize],
    catalog: &'a ClassCatalog,
    reads: &'a AtomicUsize,
}

impl<'a> SeenAnnotations<'a> {
    pub fn new(labels: &'a [usize], catalog: &'a ClassCatalog, reads: &'a AtomicUsize) -> Self {
        Self {
            labels,
            catalog,
            reads,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        let l = self.labels[i];
        self.catalog.is_seen(l).then_some(l)
    }
}

/// Per-cell image pseudo labels of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelLabels {
    pub scene_id: u64,
    pub grid: FeatureGrid,
    pub labels: Vec<usize>,
}

/// Teacher labels: the most similar class among unseen and background for
/// every cell of `image_feats`.
pub fn gen_2d_pseudo_labels(
    scene_id: u64,
    image_feats: &Tensor,
    grid: FeatureGrid,
    emb: &EmbeddingTable,
    catalog: &ClassCatalog,
) -> Result<PixelLabels> {
    if image_feats.rows() != grid.num_cells() {
        return Err(Error::dim(
            "gen_2d_pseudo_labels",
            image_feats.shape(),
            &[grid.num_cells()],
        ));
    }
    let logits = head_logits_tensor(image_feats, emb)?;
    let labels = predict_labels(&logits, &catalog.unseen_and_background())?;
    Ok(PixelLabels {
        scene_id,
        grid,
        labels,
    })
}

/// Nearest-neighbour resize of a row-major label map.
pub fn upsample_nearest(
    labels: &[usize],
    rows: usize,
    cols: usize,
    out_rows: usize,
    out_cols: usize,
) -> Result<Vec<usize>> {
    if labels.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::dim("upsample", &[rows, cols], &[labels.len()]));
    }
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        let sr = r * rows / out_rows;
        for c in 0..out_cols {
            out.push(labels[sr * cols + c * cols / out_cols]);
        }
    }
    Ok(out)
}

/// Combines seen annotations with projected teacher labels.
///
/// Seen-class points keep their annotation; other points that project into
/// the image within `margin` of the nearest surface in their cell take the
/// cell's pseudo label; the rest are unlabeled.
pub fn lift_and_fuse_labels(
    scene_id: u64,
    pseudo: &PixelLabels,
    plan: &RasterPlan,
    proj: &Projection,
    seen: Option<&SeenAnnotations>,
    catalog: &ClassCatalog,
    margin: f64,
) -> Result<PseudoLabelSet> {
    if pseudo.scene_id != scene_id {
        return Err(Error::contract(format!(
            "pseudo labels of scene {} used for scene {scene_id}",
            pseudo.scene_id
        )));
    }
    if pseudo.grid != plan.grid || pseudo.labels.len() != plan.grid.num_cells() {
        return Err(Error::contract(
            "pseudo labels and raster plan use different grids",
        ));
    }
    let n = plan.point_cell.len();
    if proj.len() != n || seen.is_some_and(|s| s.len() != n) {
        return Err(Error::dim("lift_and_fuse", &[n], &[proj.len()]));
    }
    let bg = catalog.background();
    let mut out = PseudoLabelSet {
        labels: Vec::with_capacity(n),
        source: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (label, source) = if let Some(l) = seen.and_then(|s| s.get(i)) {
            (l, LabelSource::SeenGt)
        } else if plan.is_visible(i, proj.depth[i], margin) {
            let cell = plan.point_cell[i].expect("visible implies a cell");
            (pseudo.labels[cell], LabelSource::TeacherProjected)
        } else {
            (bg, LabelSource::Unlabeled)
        };
        out.labels.push(label);
        out.source.push(source);
        out.weights.push(if source == LabelSource::Unlabeled {
            0.0
        } else {
            1.0
        });
    }
    Ok(out)
}

/// Same fusion as [`lift_and_fuse_labels`] with the model's own restricted
/// predictions in place of the teacher.
pub fn self_train_labels(
    restricted_pred: &[usize],
    seen: Option<&SeenAnnotations>,
    catalog: &ClassCatalog,
) -> Result<PseudoLabelSet> {
    if seen.is_some_and(|s| s.len() != restricted_pred.len()) {
        return Err(Error::dim(
            "self_train_labels",
            &[restricted_pred.len()],
            &[seen.map_or(0, |s| s.len())],
        ));
    }
    if let Some(&p) = restricted_pred
        .iter()
        .find(|&&p| catalog.is_seen(p) || p >= catalog.len())
    {
        return Err(Error::contract(format!(
            "self-training prediction {p} is outside unseen ∪ background"
        )));
    }
    let n = restricted_pred.len();
    let mut out = PseudoLabelSet {
        labels: Vec::with_capacity(n),
        source: Vec::with_capacity(n),
        weights: vec![1.0; n],
    };
    for (i, &p) in restricted_pred.iter().enumerate() {
        match seen.and_then(|s| s.get(i)) {
            Some(l) => {
                out.labels.push(l);
                out.source.push(LabelSource::SeenGt);
            }
            None => {
                out.labels.push(p);
                out.source.push(LabelSource::SelfTrain);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_class_embeddings;

    fn setup() -> (ClassCatalog, EmbeddingTable) {
        let cat = ClassCatalog::synthetic();
        let emb = synth_class_embeddings(cat.len(), 32, 85, 0.1, 0.5, 1).unwrap();
        (cat, emb)
    }

    #[test]
    fn teacher_labels_never_name_seen_classes() {
        let (cat, emb) = setup();
        let grid = FeatureGrid::new(1, cat.len(), 1, cat.len()).unwrap();
        let p = gen_2d_pseudo_labels(0, emb.rows(), grid, &emb, &cat).unwrap();
        for (c, &l) in p.labels.iter().enumerate() {
            if cat.is_seen(c) {
                assert!(!cat.is_seen(l));
            } else {
                assert_eq!(l, c);
            }
        }
    }

    #[test]
    fn nearest_upsampling() {
        let up = upsample_nearest(&[1, 2, 3, 4], 2, 2, 4, 4).unwrap();
        assert_eq!(up, vec![1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
        assert_eq!(
            upsample_nearest(&[1, 2, 3, 4], 2, 2, 2, 2).unwrap(),
            vec![1, 2, 3, 4]
        );
    }

    fn scene_bits() -> (Projection, RasterPlan, PixelLabels) {
        let proj = Projection {
            u: vec![0.5, 1.5, f64::NAN, 0.6],
            v: vec![0.5, 0.5, f64::NAN, 0.4],
            depth: vec![2.0, 3.0, -1.0, 9.0],
            valid: vec![true, true, false, true],
            width: 2,
            height: 1,
        };
        let grid = FeatureGrid::new(1, 2, 1, 2).unwrap();
        let plan = RasterPlan::new(&proj, grid).unwrap();
        let px = PixelLabels {
            scene_id: 4,
            grid,
            labels: vec![1, 8],
        };
        (proj, plan, px)
    }

    #[test]
    fn fusion_rules() {
        let cat = ClassCatalog::synthetic();
        let (proj, plan, px) = scene_bits();
        // Point 0 is a seen car under an unseen-truck pixel; point 1 takes
        // its pixel; point 2 is behind the camera; point 3 is occluded.
        let gt = [0, 1, 1, 5];
        let reads = AtomicUsize::new(0);
        let seen = SeenAnnotations::new(&gt, &cat, &reads);
        let out = lift_and_fuse_labels(4, &px, &plan, &proj, Some(&seen), &cat, 1.0).unwrap();
        assert_eq!(out.labels[..2], [0, 8]);
        assert_eq!(
            out.source,
            vec![
                LabelSource::SeenGt,
                LabelSource::TeacherProjected,
                LabelSource::Unlabeled,
                LabelSource::Unlabeled
            ]
        );
        assert_eq!(out.weights, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(reads.load(Ordering::Relaxed), 4);

        let none = lift_and_fuse_labels(4, &px, &plan, &proj, None, &cat, 100.0).unwrap();
        assert_eq!(none.labels, vec![1, 8, 8, 1]);
        assert!(lift_and_fuse_labels(5, &px, &plan, &proj, None, &cat, 1.0).is_err());
    }

    #[test]
    fn self_training_keeps_seen_annotations() {
        let cat = ClassCatalog::synthetic();
        let gt = [0, 1, 5, 8];
        let reads = AtomicUsize::new(0);
        let seen = SeenAnnotations::new(&gt, &cat, &reads);
        let out = self_train_labels(&[8, 1, 5, 8], Some(&seen), &cat).unwrap();
        assert_eq!(out.labels, vec![0, 1, 5, 8]);
        assert_eq!(out.count(LabelSource::SeenGt), 1);
        assert!(self_train_labels(&[0], None, &cat).is_err());
    }
}
