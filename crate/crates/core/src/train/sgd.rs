use crate::error::{Error, Result};
use crate::ndiff::Tensor;

/// SGD with Nesterov momentum and L2 weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// One velocity per parameter; allocated lazily on the first step.
    pub velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// `g' = g + wd·θ; v ← μv + g'; θ ← θ − lr·(g' + μv)`.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::contract("optimizer state does not match parameters"));
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::contract(format!(
                    "shape mismatch: param {:?}, grad {:?}, velocity {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let gp = gi + self.weight_decay * *w;
                *vi = self.momentum * *vi + gp;
                *w -= self.lr * (gp + self.momentum * *vi);
            }
        }
        Ok(())
    }
}

/// One update of `params` in place.
pub fn sgd_step(params: Vec<&mut Tensor>, grads: &[Tensor], state: &mut Sgd) -> Result<()> {
    state.step(params, grads)
}
