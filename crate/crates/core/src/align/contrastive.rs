use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{patchify_mean, rasterize_features, PatchGrid, RasterPlan};
use crate::ndiff::{Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-12;

/// Denominator of the contrastive terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastiveMode {
    /// InfoNCE: the positive pair is part of the denominator.
    #[default]
    Standard,
    /// Negatives only in the denominator. Unbounded below.
    PaperLiteral,
}

/// One-directional InfoNCE from rows of `a` to rows of `b`, summed over rows.
///
/// Row `i` of `a` is positive with row `i` of `b` and negative with every
/// other row of `b`.
pub fn info_nce(tape: &mut Tape, a: Var, b: Var, tau: f64, mode: ContrastiveMode) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::contract("temperature must be positive"));
    }
    if tape.shape(a) != tape.shape(b) || tape.value(a).rank() != 2 {
        return Err(Error::dim("info_nce", tape.shape(a), tape.shape(b)));
    }
    let k = tape.value(a).rows();
    if k < 2 {
        return Err(Error::InsufficientNegatives(k));
    }
    let bt = tape.transpose(b)?;
    let sim = tape.matmul(a, bt)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let diag: Vec<usize> = (0..k).map(|i| i * k + i).collect();
    let pos = tape.take(logits, &diag, &[k])?;
    let denom = match mode {
        ContrastiveMode::Standard => tape.logsumexp(logits)?,
        ContrastiveMode::PaperLiteral => {
            let off: Vec<usize> = (0..k)
                .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| i * k + j))
                .collect();
            let neg = tape.take(logits, &off, &[k, k - 1])?;
            tape.logsumexp(neg)?
        }
    };
    let per_row = tape.sub(denom, pos)?;
    Ok(tape.sum(per_row))
}

/// Mean feature of the rows predicted as each class in `classes`; classes
/// nobody predicts are omitted.
pub fn class_prototypes(
    tape: &mut Tape,
    features: Var,
    predictions: &[usize],
    classes: &[usize],
) -> Result<BTreeMap<usize, Var>> {
    if tape.value(features).rank() != 2 || tape.value(features).rows() != predictions.len() {
        return Err(Error::dim(
            "class_prototypes",
            tape.shape(features),
            &[predictions.len()],
        ));
    }
    let mut out = BTreeMap::new();
    for &c in classes {
        let mask: Vec<bool> = predictions.iter().map(|&p| p == c).collect();
        if mask.iter().any(|&m| m) {
            out.insert(c, tape.masked_mean_pool(features, &mask)?);
        }
    }
    Ok(out)
}

/// Prototypes of the classes present in both modalities, stacked row-aligned.
#[derive(Clone, Debug)]
pub struct PrototypeSet {
    pub classes: Vec<usize>,
    pub g2d: Var,
    pub g3d: Var,
}

impl PrototypeSet {
    pub fn build(
        tape: &mut Tape,
        p2d: &BTreeMap<usize, Var>,
        p3d: &BTreeMap<usize, Var>,
        normalize: bool,
    ) -> Result<Option<Self>> {
        let classes: Vec<usize> = p2d
            .keys()
            .filter(|c| p3d.contains_key(c))
            .copied()
            .collect();
        if classes.is_empty() {
            return Ok(None);
        }
        let rows2: Vec<Var> = classes.iter().map(|c| p2d[c]).collect();
        let rows3: Vec<Var> = classes.iter().map(|c| p3d[c]).collect();
        let mut g2d = tape.concat_rows(&rows2)?;
        let mut g3d = tape.concat_rows(&rows3)?;
        if normalize {
            g2d = tape.row_normalize(g2d, NORM_EPS)?;
            g3d = tape.row_normalize(g3d, NORM_EPS)?;
        }
        Ok(Some(Self { classes, g2d, g3d }))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Class-level term: 2D prototype of each class against all 3D prototypes.
pub fn class_prototype_loss(
    tape: &mut Tape,
    protos: &PrototypeSet,
    tau: f64,
    mode: ContrastiveMode,
) -> Result<Var> {
    info_nce(tape, protos.g2d, protos.g3d, tau, mode)
}

/// Patch-level term over row-aligned patch sets: patch `i` of the image is
/// positive with patch `i` of the point cloud only.
pub fn patch_feature_loss(
    tape: &mut Tape,
    p2d: Var,
    p3d: Var,
    tau: f64,
    mode: ContrastiveMode,
) -> Result<Var> {
    info_nce(tape, p2d, p3d, tau, mode)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McfaConfig {
    pub tau: f64,
    pub mode: ContrastiveMode,
    pub class_loss: bool,
    pub patch_loss: bool,
    /// Unit-normalize prototypes and patch features.
    pub normalize_contrastive: bool,
    /// Average both directions (2D→3D and 3D→2D) instead of 2D→3D only.
    pub symmetric: bool,
    pub patch_rows: usize,
    pub patch_cols: usize,
}

impl Default for McfaConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            mode: ContrastiveMode::Standard,
            class_loss: true,
            patch_loss: true,
            normalize_contrastive: true,
            symmetric: false,
            patch_rows: 6,
            patch_cols: 8,
        }
    }
}

/// Alignment loss with its parts. A part that is disabled or could not be
/// formed (fewer than two classes or patches) is `None` and contributes 0.
#[derive(Clone, Debug)]
pub struct McfaTerms {
    pub total: Var,
    pub class: Option<Var>,
    pub patch: Option<Var>,
}

fn directional(tape: &mut Tape, a: Var, b: Var, cfg: &McfaConfig) -> Result<Var> {
    let fwd = info_nce(tape, a, b, cfg.tau, cfg.mode)?;
    if !cfg.symmetric {
        return Ok(fwd);
    }
    let back = info_nce(tape, b, a, cfg.tau, cfg.mode)?;
    let both = tape.add(fwd, back)?;
    Ok(tape.scale(both, 0.5))
}

fn skippable(r: Result<Var>, what: &str) -> Result<Option<Var>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InsufficientNegatives(k)) => {
            log::debug!("{what} alignment skipped: {k} candidates");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Both alignment terms for one scene.
///
/// `point_feats` are the tapped point features at the embedding width,
/// `image_feats` the frozen `[cells, C]` teacher map; predictions are each
/// modality's own argmax over all classes.
#[allow(clippy::too_many_arguments)]
pub fn mcfa_loss(
    tape: &mut Tape,
    point_feats: Var,
    image_feats: Var,
    point_pred: &[usize],
    image_pred: &[usize],
    plan: &RasterPlan,
    num_classes: usize,
    cfg: &McfaConfig,
) -> Result<McfaTerms> {
    let cells = plan.grid.num_cells();
    if tape.value(image_feats).rows() != cells || image_pred.len() != cells {
        return Err(Error::dim(
            "mcfa",
            tape.shape(image_feats),
            &[cells, image_pred.len()],
        ));
    }
    if tape.shape(point_feats).last() != tape.shape(image_feats).last() {
        return Err(Error::dim(
            "mcfa",
            tape.shape(point_feats),
            tape.shape(image_feats),
        ));
    }

    let class = if cfg.class_loss {
        let all: Vec<usize> = (0..num_classes).collect();
        let p3 = class_prototypes(tape, point_feats, point_pred, &all)?;
        let p2 = class_prototypes(tape, image_feats, image_pred, &all)?;
        match PrototypeSet::build(tape, &p2, &p3, cfg.normalize_contrastive)? {
            Some(set) => {
                let r = directional(tape, set.g2d, set.g3d, cfg);
                skippable(r, "class")?
            }
            None => skippable(Err(Error::InsufficientNegatives(0)), "class")?,
        }
    } else {
        None
    };

    let patch = if cfg.patch_loss {
        let grid = PatchGrid::new(
            plan.grid.rows,
            plan.grid.cols,
            cfg.patch_rows,
            cfg.patch_cols,
        )?;
        let map3 = rasterize_features(tape, plan, point_feats)?;
        let (mut q3, _) = patchify_mean(tape, map3, &plan.occupancy, &grid)?;
        let (mut q2, _) = patchify_mean(tape, image_feats, &plan.occupancy, &grid)?;
        if cfg.normalize_contrastive {
            q3 = tape.row_normalize(q3, NORM_EPS)?;
            q2 = tape.row_normalize(q2, NORM_EPS)?;
        }
        let r = directional(tape, q2, q3, cfg);
        skippable(r, "patch")?
    } else {
        None
    };

    let total = match (class, patch) {
        (Some(c), Some(p)) => tape.add(c, p)?,
        (Some(v), None) | (None, Some(v)) => v,
        (None, None) => tape.constant(Tensor::scalar(0.0)),
    };
    Ok(McfaTerms {
        total,
        class,
        patch,
    })
}
