use std::borrow::Cow;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;

use super::config::{TrainConfig, TrainMode};
use super::metrics::{ConfusionMatrix, MetricsReport};
use super::sgd::Sgd;
use crate::align::{
    cross_entropy_loss, gen_2d_pseudo_labels, lift_and_fuse_labels, lovasz_softmax_loss, mcfa_loss,
    self_train_labels, LabelSource, PseudoLabelSet, SeenAnnotations,
};
use crate::data::{ClassCatalog, Dataset, EmbeddingTable, Scene};
use crate::error::{Error, Result};
use crate::geometry::{Projection, RasterPlan};
use crate::model::{
    head_logits, head_logits_tensor, predict_labels, Checkpoint, PointEncoder, TeacherEncoder,
};
use crate::ndiff::{Tape, Tensor, Var};
use crate::parallel::{map_ordered, Execution};
use crate::rng;

const NORM_EPS: f64 = 1e-12;

pub const METRICS_CSV_HEADER: &str =
    "epoch,stage,loss_ce,loss_lovasz,loss_class,loss_patch,miou_s,miou_u,miou_all,hmiou";

/// Mean loss components over the scenes of one epoch. A component is
/// `None` when it was never computed.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub lovasz: Option<f64>,
    pub class: Option<f64>,
    pub patch: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EpochRecord {
    /// 1-based, counted across both stages.
    pub epoch: usize,
    pub stage: u32,
    pub loss: LossParts,
    pub metrics: Option<MetricsReport>,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        let m = self.metrics.as_ref();
        format!(
            "{},{},{:.6},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            self.loss.ce,
            o(self.loss.lovasz),
            o(self.loss.class),
            o(self.loss.patch),
            o(m.and_then(|m| m.miou_s)),
            o(m.and_then(|m| m.miou_u)),
            o(m.and_then(|m| m.miou_all)),
            o(m.and_then(|m| m.hmiou)),
        )
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub encoder: PointEncoder,
    pub sgd: Sgd,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn stage(&self, cfg: &TrainConfig) -> u32 {
        if self.epoch < cfg.stage_epochs().0 {
            1
        } else {
            2
        }
    }

    pub fn to_checkpoint(&self, stage: u32) -> Checkpoint {
        Checkpoint {
            encoder: self.encoder.clone(),
            momentum: self.sgd.velocity.clone(),
            epoch: self.epoch as u64,
            stage,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, cfg: &TrainConfig) -> Self {
        let mut sgd = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
        sgd.velocity = ck.momentum;
        Self {
            encoder: ck.encoder,
            sgd,
            epoch: ck.epoch as usize,
        }
    }
}

/// Per-scene data that does not change during training.
struct Prepared<'a> {
    points: Tensor,
    proj: Projection,
    plan: RasterPlan,
    image: Cow<'a, Tensor>,
    /// Teacher argmax over all classes, per cell.
    image_pred: Vec<usize>,
}

/// Drives both training stages over one dataset.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    catalog: ClassCatalog,
    cfg: TrainConfig,
    exec: Execution,
    prepared: Vec<Prepared<'a>>,
    stage1_labels: Vec<PseudoLabelSet>,
    gt_reads: AtomicUsize,
}

fn prepare<'a>(
    scene: &'a Scene,
    teacher: &TeacherEncoder,
    emb: &EmbeddingTable,
    n: usize,
) -> Result<Prepared<'a>> {
    let proj = scene.camera.project(&scene.xyz());
    let plan = RasterPlan::new(&proj, scene.grid())?;
    let image = match teacher {
        TeacherEncoder::Identity => Cow::Borrowed(&scene.features),
        t => Cow::Owned(t.encode(&scene.features)?),
    };
    let image_pred = predict_labels(
        &head_logits_tensor(&image, emb)?,
        &(0..n).collect::<Vec<_>>(),
    )?;
    Ok(Prepared {
        points: scene.point_tensor(),
        proj,
        plan,
        image,
        image_pred,
    })
}

impl<'a> Trainer<'a> {
    /// Precomputes projections, teacher features and first-stage labels.
    pub fn new(dataset: &'a Dataset, cfg: TrainConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        if dataset.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let catalog = match cfg.mode {
            TrainMode::AnnotationFree => dataset.catalog.annotation_free(),
            _ => dataset.catalog.clone(),
        };
        let emb = &dataset.embeddings;
        let teacher = if cfg.teacher_rotation {
            TeacherEncoder::rotation(emb.dim(), rng::derive_seed(cfg.seed, "teacher", 0))
        } else {
            TeacherEncoder::Identity
        };
        teacher.check(emb)?;
        let n = catalog.len();
        let train: &'a [Scene] = &dataset.train;
        let items: Vec<usize> = (0..train.len()).collect();
        let prepared = map_ordered(exec, &items, |_, &i| prepare(&train[i], &teacher, emb, n))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let mut trainer = Self {
            dataset,
            catalog,
            cfg,
            exec,
            prepared,
            stage1_labels: Vec::new(),
            gt_reads: AtomicUsize::new(0),
        };
        trainer.stage1_labels = trainer.first_stage_labels()?;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// The catalog training sees; all classes are unseen in annotation-free mode.
    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    /// Number of lookups into seen-class annotations so far.
    pub fn gt_reads(&self) -> usize {
        self.gt_reads.load(Ordering::Relaxed)
    }

    pub fn stage1_labels(&self) -> &[PseudoLabelSet] {
        &self.stage1_labels
    }

    fn seen(&self, scene: &'a Scene) -> Option<SeenAnnotations<'_>> {
        (self.cfg.mode != TrainMode::AnnotationFree)
            .then(|| SeenAnnotations::new(&scene.labels, &self.catalog, &self.gt_reads))
    }

    fn first_stage_labels(&self) -> Result<Vec<PseudoLabelSet>> {
        let items: Vec<usize> = (0..self.prepared.len()).collect();
        map_ordered(self.exec, &items, |_, &i| {
            let scene = &self.dataset.train[i];
            let p = &self.prepared[i];
            let seen = self.seen(scene);
            if self.cfg.mode == TrainMode::SeenOnly {
                let seen = seen.expect("seen-only mode has annotations");
                let labels: Vec<Option<usize>> =
                    (0..scene.num_points()).map(|j| seen.get(j)).collect();
                let bg = self.catalog.background();
                return Ok(PseudoLabelSet {
                    labels: labels.iter().map(|l| l.unwrap_or(bg)).collect(),
                    source: labels
                        .iter()
                        .map(|l| {
                            if l.is_some() {
                                LabelSource::SeenGt
                            } else {
                                LabelSource::Unlabeled
                            }
                        })
                        .collect(),
                    weights: labels
                        .iter()
                        .map(|l| if l.is_some() { 1.0 } else { 0.0 })
                        .collect(),
                });
            }
            let pixels = gen_2d_pseudo_labels(
                scene.id,
                &p.image,
                scene.grid(),
                &self.dataset.embeddings,
                &self.catalog,
            )?;
            lift_and_fuse_labels(
                scene.id,
                &pixels,
                &p.plan,
                &p.proj,
                seen.as_ref(),
                &self.catalog,
                self.cfg.occlusion_margin,
            )
        })
        .into_iter()
        .collect()
    }

    /// Labels from the encoder's own predictions over unseen and background.
    pub fn self_training_labels(&self, encoder: &PointEncoder) -> Result<Vec<PseudoLabelSet>> {
        let allowed = self.catalog.unseen_and_background();
        let items: Vec<usize> = (0..self.prepared.len()).collect();
        map_ordered(self.exec, &items, |_, &i| {
            let feats = encoder.infer(&self.prepared[i].points)?;
            let logits = head_logits_tensor(&feats, &self.dataset.embeddings)?;
            let pred = predict_labels(&logits, &allowed)?;
            let seen = self.seen(&self.dataset.train[i]);
            self_train_labels(&pred, seen.as_ref(), &self.catalog)
        })
        .into_iter()
        .collect()
    }

    pub fn init_state(&self) -> Result<TrainState> {
        let encoder = PointEncoder::new(
            &self.cfg.encoder,
            self.dataset.embeddings.dim(),
            rng::derive_seed(self.cfg.seed, "init", 0),
        )?;
        Ok(TrainState {
            encoder,
            sgd: Sgd::new(self.cfg.lr, self.cfg.momentum, self.cfg.weight_decay),
            epoch: 0,
        })
    }

    /// Classes the final prediction may choose from.
    pub fn allowed_classes(&self) -> Vec<usize> {
        match self.cfg.mode {
            TrainMode::SeenOnly => self.catalog.seen().to_vec(),
            _ => self.catalog.all(),
        }
    }

    /// Loss and parameter gradients for one scene.
    pub fn scene_gradients(
        &self,
        encoder: &PointEncoder,
        index: usize,
        labels: &PseudoLabelSet,
        stage: u32,
    ) -> Result<(Vec<Tensor>, SceneLoss)> {
        let p = &self.prepared[index];
        let mut tape = Tape::new();
        let params = encoder.bind(&mut tape);
        let scene = SceneInputs {
            points: &p.points,
            image: &p.image,
            image_pred: &p.image_pred,
            plan: &p.plan,
        };
        let (total, out) = composite_loss(
            &mut tape,
            encoder,
            &params,
            &scene,
            labels,
            &self.dataset.embeddings,
            self.catalog.len(),
            &self.cfg,
            stage,
        )?;
        if !out.total.is_finite() {
            return Err(Error::NumericFailure(format!(
                "loss of scene {}",
                self.dataset.train[index].id
            )));
        }
        tape.backward(total)?;
        let grads = params
            .iter()
            .map(|&v| tape.grad(v).expect("parameter leaf"))
            .collect();
        Ok((grads, out))
    }

    /// One pass over the shuffled training split.
    pub fn train_epoch(
        &self,
        state: &mut TrainState,
        stage: u32,
        labels: &[PseudoLabelSet],
    ) -> Result<LossParts> {
        if labels.len() != self.prepared.len() {
            return Err(Error::contract("one label set per training scene required"));
        }
        let mut order: Vec<usize> = (0..self.prepared.len()).collect();
        order.shuffle(&mut rng::stream(
            self.cfg.seed,
            "shuffle",
            state.epoch as u64,
        ));

        let mut acc = LossAccumulator::default();
        for batch in order.chunks(self.cfg.batch_size) {
            let results = map_ordered(self.exec, batch, |_, &i| {
                self.scene_gradients(&state.encoder, i, &labels[i], stage)
            });
            let mut sum: Option<Vec<Tensor>> = None;
            let mut used = 0usize;
            for r in results {
                let (grads, loss) = match r {
                    Ok(v) => v,
                    Err(Error::EmptyBatch) => {
                        log::debug!("scene without labeled points skipped");
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                acc.add(&loss);
                used += 1;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(s) => {
                        for (a, g) in s.iter_mut().zip(&grads) {
                            a.data_mut()
                                .iter_mut()
                                .zip(g.data())
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let Some(mut grads) = sum else { continue };
            let inv = 1.0 / used as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= inv);
                if !g.all_finite() {
                    return Err(Error::NumericFailure("gradient".into()));
                }
            }
            state.sgd.step(state.encoder.params_mut(), &grads)?;
        }
        if acc.scenes == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(acc.finish())
    }

    pub fn evaluate(&self, encoder: &PointEncoder) -> Result<MetricsReport> {
        evaluate(
            encoder,
            &self.dataset.val,
            &self.dataset.embeddings,
            &self.catalog,
            &self.allowed_classes(),
            self.exec,
        )
    }

    fn finish_epoch<F>(
        &self,
        state: &mut TrainState,
        stage: u32,
        loss: LossParts,
        on_epoch: &mut F,
    ) -> Result<EpochRecord>
    where
        F: FnMut(&TrainState, &EpochRecord) -> Result<()>,
    {
        state.epoch += 1;
        let metrics = if self.cfg.eval_every_epoch && !self.dataset.val.is_empty() {
            Some(self.evaluate(&state.encoder)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: state.epoch,
            stage,
            loss,
            metrics,
        };
        log::info!(
            "epoch {} stage {} loss {:.4} mIoU-U {}",
            record.epoch,
            stage,
            record.loss.total,
            record
                .metrics
                .as_ref()
                .and_then(|m| m.miou_u)
                .map_or("-".to_string(), |v| format!("{v:.2}"))
        );
        on_epoch(state, &record)?;
        Ok(record)
    }

    /// Teacher-guided stage: cross entropy + Lovász + λ·alignment, run until
    /// the stage-1 epoch budget is spent.
    pub fn run_stage1<F>(&self, state: &mut TrainState, mut on_epoch: F) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&TrainState, &EpochRecord) -> Result<()>,
    {
        let (s1, _) = self.cfg.stage_epochs();
        let mut records = Vec::new();
        while state.epoch < s1 {
            let loss = self.train_epoch(state, 1, &self.stage1_labels)?;
            records.push(self.finish_epoch(state, 1, loss, &mut on_epoch)?);
        }
        Ok(records)
    }

    /// Self-training stage: cross entropy only, on the model's own labels.
    ///
    /// With `regenerate_labels` off the labels come from `boundary`, the
    /// encoder at the end of stage 1; it defaults to the current encoder,
    /// which is only correct when the stage is starting.
    pub fn run_stage2<F>(
        &self,
        state: &mut TrainState,
        boundary: Option<&PointEncoder>,
        mut on_epoch: F,
    ) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&TrainState, &EpochRecord) -> Result<()>,
    {
        let (s1, s2) = self.cfg.stage_epochs();
        if state.epoch < s1 {
            return Err(Error::contract(
                "second stage requires a completed first stage",
            ));
        }
        let mut fixed = None;
        if !self.cfg.regenerate_labels && state.epoch < s1 + s2 {
            let source = match boundary {
                Some(e) => e,
                None if state.epoch == s1 => &state.encoder,
                None => {
                    return Err(Error::contract(
                        "resuming fixed self-training labels needs the stage-1 encoder",
                    ))
                }
            };
            fixed = Some(self.self_training_labels(source)?);
        }
        let mut records = Vec::new();
        while state.epoch < s1 + s2 {
            let fresh;
            let labels = match &fixed {
                Some(l) => l,
                None => {
                    fresh = self.self_training_labels(&state.encoder)?;
                    &fresh
                }
            };
            let loss = self.train_epoch(state, 2, labels)?;
            records.push(self.finish_epoch(state, 2, loss, &mut on_epoch)?);
        }
        Ok(records)
    }

    /// Both stages from wherever `state` stands.
    pub fn run<F>(
        &self,
        state: &mut TrainState,
        boundary: Option<&PointEncoder>,
        mut on_epoch: F,
    ) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&TrainState, &EpochRecord) -> Result<()>,
    {
        let mut records = self.run_stage1(state, &mut on_epoch)?;
        let (_, s2) = self.cfg.stage_epochs();
        if s2 > 0 {
            records.extend(self.run_stage2(state, boundary, &mut on_epoch)?);
        }
        Ok(records)
    }
}

/// Fixed per-scene inputs of [`composite_loss`].
pub struct SceneInputs<'s> {
    pub points: &'s Tensor,
    /// Teacher features, `[cells, C]`.
    pub image: &'s Tensor,
    /// Teacher argmax over all classes, per cell.
    pub image_pred: &'s [usize],
    pub plan: &'s RasterPlan,
}

/// The scene objective on `tape`: cross entropy, plus Lovász and λ·alignment
/// in the first stage. `params` are the encoder's bound parameters.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    tape: &mut Tape,
    encoder: &PointEncoder,
    params: &[Var],
    scene: &SceneInputs,
    labels: &PseudoLabelSet,
    emb: &EmbeddingTable,
    num_classes: usize,
    cfg: &TrainConfig,
    stage: u32,
) -> Result<(Var, SceneLoss)> {
    let fwd = encoder.forward(tape, params, scene.points)?;
    let feats = if cfg.normalize_features {
        tape.row_normalize(fwd.features, NORM_EPS)?
    } else {
        fwd.features
    };
    let mut logits = head_logits(tape, feats, emb)?;
    if cfg.logit_scale != 1.0 {
        logits = tape.scale(logits, cfg.logit_scale);
    }
    let ce = cross_entropy_loss(tape, logits, &labels.labels, &labels.weights)?;
    let mut out = SceneLoss {
        ce: tape.value(ce).item(),
        ..SceneLoss::default()
    };
    let mut total = ce;
    if stage == 1 {
        let lov = lovasz_softmax_loss(tape, logits, &labels.labels, &labels.weights)?;
        out.lovasz = Some(tape.value(lov).item());
        total = tape.add(total, lov)?;
        if cfg.uses_alignment() {
            let all: Vec<usize> = (0..num_classes).collect();
            let point_pred = predict_labels(tape.value(logits), &all)?;
            let image = tape.constant(scene.image.clone());
            let terms = mcfa_loss(
                tape,
                fwd.stage_aligned,
                image,
                &point_pred,
                scene.image_pred,
                scene.plan,
                num_classes,
                &cfg.mcfa,
            )?;
            out.class = terms.class.map(|v| tape.value(v).item());
            out.patch = terms.patch.map(|v| tape.value(v).item());
            let weighted = tape.scale(terms.total, cfg.lambda);
            total = tape.add(total, weighted)?;
        }
    }
    out.total = tape.value(total).item();
    Ok((total, out))
}

/// Loss values of one scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneLoss {
    pub total: f64,
    pub ce: f64,
    pub lovasz: Option<f64>,
    pub class: Option<f64>,
    pub patch: Option<f64>,
}

#[derive(Default)]
struct LossAccumulator {
    scenes: usize,
    total: f64,
    ce: f64,
    lovasz: (f64, usize),
    class: (f64, usize),
    patch: (f64, usize),
}

impl LossAccumulator {
    fn add(&mut self, l: &SceneLoss) {
        self.scenes += 1;
        self.total += l.total;
        self.ce += l.ce;
        for (slot, v) in [
            (&mut self.lovasz, l.lovasz),
            (&mut self.class, l.class),
            (&mut self.patch, l.patch),
        ] {
            if let Some(v) = v {
                slot.0 += v;
                slot.1 += 1;
            }
        }
    }

    fn finish(&self) -> LossParts {
        let n = self.scenes as f64;
        let mean = |(s, k): (f64, usize)| (k > 0).then(|| s / k as f64);
        LossParts {
            total: self.total / n,
            ce: self.ce / n,
            lovasz: mean(self.lovasz),
            class: mean(self.class),
            patch: mean(self.patch),
        }
    }
}

/// Confusion over every point of `scenes`, predicting the best of `allowed`.
pub fn evaluate(
    encoder: &PointEncoder,
    scenes: &[Scene],
    emb: &EmbeddingTable,
    catalog: &ClassCatalog,
    allowed: &[usize],
    exec: Execution,
) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = catalog.len();
    let parts = map_ordered(exec, scenes, |_, s| -> Result<ConfusionMatrix> {
        let feats = encoder.infer(&s.point_tensor())?;
        let pred = predict_labels(&head_logits_tensor(&feats, emb)?, allowed)?;
        ConfusionMatrix::from_labels(n, &s.labels, &pred)
    });
    let mut total = ConfusionMatrix::new(n);
    for p in parts {
        total.merge(&p?);
    }
    Ok(MetricsReport::from_confusion(total, catalog))
}
