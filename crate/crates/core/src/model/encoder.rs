use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ndiff::{Tape, Tensor, Var};
use crate::rng;

/// Affine map `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    /// Uniform in `±√(6/(fan_in+fan_out))`, zero bias.
    pub fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-a..a))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, data).expect("in×out"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Input width followed by the width of every hidden stage.
    pub widths: Vec<usize>,
    /// Hidden stage whose output feeds the alignment losses; `None` means
    /// the last one.
    pub tap: Option<usize>,
    /// Per-channel multiplier applied to raw point attributes.
    pub input_scale: Vec<f64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            widths: vec![5, 64, 128, 128, 128],
            tap: None,
            input_scale: vec![0.05, 0.1, 1.0, 1.0, 1.0],
        }
    }
}

/// Pointwise MLP: hidden stages of affine + relu, then a linear adapter to
/// the embedding width.
///
/// A separate linear map brings the tapped stage to the embedding width for
/// the alignment losses, so they shape the shared stages without acting on
/// the head input directly.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEncoder {
    pub stages: Vec<Linear>,
    pub adapter: Linear,
    pub tap_adapter: Linear,
    pub tap: usize,
    pub input_scale: Vec<f64>,
}

/// Tape handles produced by [`PointEncoder::forward`].
#[derive(Clone, Copy, Debug)]
pub struct PointForward {
    /// `F_3D`, `[N, C]`.
    pub features: Var,
    /// Raw output of the tapped stage, `[N, width]`.
    pub stage: Var,
    /// Tapped stage mapped to `[N, C]`.
    pub stage_aligned: Var,
}

impl PointEncoder {
    pub fn new(cfg: &EncoderConfig, embed_dim: usize, seed: u64) -> Result<Self> {
        if cfg.widths.len() < 2 || cfg.widths.contains(&0) || embed_dim == 0 {
            return Err(Error::Config(format!(
                "encoder needs an input and at least one hidden width, got {:?}",
                cfg.widths
            )));
        }
        if cfg.input_scale.len() != cfg.widths[0] {
            return Err(Error::Config(format!(
                "input_scale has {} entries for {} input channels",
                cfg.input_scale.len(),
                cfg.widths[0]
            )));
        }
        let hidden = cfg.widths.len() - 1;
        let tap = cfg.tap.unwrap_or(hidden - 1);
        if tap >= hidden {
            return Err(Error::Config(format!(
                "tap {tap} but only {hidden} hidden stages"
            )));
        }
        let mut rng = rng::stream(seed, "init", 0);
        let stages = cfg
            .widths
            .windows(2)
            .map(|w| Linear::xavier(&mut rng, w[0], w[1]))
            .collect();
        let last = cfg.widths[hidden];
        let adapter = Linear::xavier(&mut rng, last, embed_dim);
        let tap_adapter = Linear::xavier(&mut rng, cfg.widths[tap + 1], embed_dim);
        Ok(Self {
            stages,
            adapter,
            tap_adapter,
            tap,
            input_scale: cfg.input_scale.clone(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.stages[0].fan_in()
    }

    pub fn embed_dim(&self) -> usize {
        self.adapter.fan_out()
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in self.stages.iter().chain([&self.adapter, &self.tap_adapter]) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self
            .stages
            .iter_mut()
            .chain([&mut self.adapter, &mut self.tap_adapter])
        {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect()
    }

    /// Forward pass over `[N, 5]` points using parameters bound by [`bind`](Self::bind).
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        points: &Tensor,
    ) -> Result<PointForward> {
        if points.rank() != 2 || points.cols() != self.input_width() {
            return Err(Error::dim(
                "encode_points",
                points.shape(),
                &[self.input_width()],
            ));
        }
        if params.len() != self.params().len() {
            return Err(Error::contract(
                "parameter handles do not match the encoder",
            ));
        }
        let scale = tape.constant(Tensor::vector(self.input_scale.clone()));
        let x = tape.constant(points.clone());
        let mut h = tape.mul(x, scale)?;
        let mut stage = None;
        for (k, pair) in params.chunks(2).take(self.stages.len()).enumerate() {
            let z = tape.matmul(h, pair[0])?;
            let z = tape.add(z, pair[1])?;
            h = tape.relu(z);
            if k == self.tap {
                stage = Some(h);
            }
        }
        let stage = stage.expect("tap within stages");
        let a = 2 * self.stages.len();
        let z = tape.matmul(h, params[a])?;
        let features = tape.add(z, params[a + 1])?;
        let z = tape.matmul(stage, params[a + 2])?;
        let stage_aligned = tape.add(z, params[a + 3])?;
        Ok(PointForward {
            features,
            stage,
            stage_aligned,
        })
    }

    /// Forward pass with parameters recorded as constants.
    pub fn encode_points(&self, tape: &mut Tape, points: &Tensor) -> Result<PointForward> {
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        self.forward(tape, &params, points)
    }

    /// `F_3D` as a plain tensor, for inference.
    pub fn infer(&self, points: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.encode_points(&mut tape, points)?;
        Ok(tape.value(out.features).clone())
    }
}

/// Frozen image side: maps the stored per-cell teacher features to `F_2D`.
#[derive(Clone, Debug, PartialEq)]
pub enum TeacherEncoder {
    Identity,
    /// Fixed orthogonal mixing followed by row re-normalization.
    Rotation(Tensor),
}

impl TeacherEncoder {
    /// Random orthogonal `dim × dim` matrix from Gram–Schmidt on Gaussian
    /// columns.
    pub fn rotation(dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "teacher", 0);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while cols.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-6 {
                v.iter_mut().for_each(|a| *a /= n);
                cols.push(v);
            }
        }
        let mut m = Tensor::zeros(&[dim, dim]);
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                m.data_mut()[i * dim + j] = v;
            }
        }
        TeacherEncoder::Rotation(m)
    }

    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        match self {
            TeacherEncoder::Identity => Ok(features.clone()),
            TeacherEncoder::Rotation(r) => {
                let mut out = features.matmul(r)?;
                for i in 0..out.rows() {
                    crate::data::normalize(out.row_mut(i));
                }
                Ok(out)
            }
        }
    }

    /// Checks that the teacher emits the embedding width.
    pub fn check(&self, emb: &EmbeddingTable) -> Result<()> {
        match self {
            TeacherEncoder::Rotation(r) if r.rows() != emb.dim() => {
                Err(Error::dim("teacher", r.shape(), &[emb.dim()]))
            }
            _ => Ok(()),
        }
    }
}
