use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::Param;
use crate::nn::network::Network;
use crate::tensor::Tensor;

/// Hyperparameters shared by every supervised training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        Ok(())
    }
}

/// SGD with classical momentum: `v ← μv − η·g`, `w ← w + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Apply the gradients currently stored in `net`. Nothing is modified if
    /// any gradient is non-finite.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        for (index, layer) in net.layers().iter().enumerate() {
            if layer.params().iter().any(|p| !p.grad.is_finite()) {
                return Err(Error::NonFinite {
                    index,
                    kind: layer.kind().name(),
                });
            }
        }
        let params: Vec<_> = net
            .layers_mut()
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect();
        self.step_params(params)
    }

    /// Same update over an explicit parameter list, which must be passed in
    /// the same order on every call. `index` in a non-finite error is the
    /// position in that list.
    pub fn step_params(&mut self, params: Vec<&mut Param>) -> Result<()> {
        if let Some((index, p)) = params.iter().enumerate().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite { index, kind: p.name });
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        assert_eq!(self.velocity.len(), params.len(), "optimizer used with another parameter set");
        for (p, v) in params.into_iter().zip(&mut self.velocity) {
            for ((w, g), vel) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(v.data_mut())
            {
                *vel = self.momentum * *vel - self.learning_rate * g;
                *w += *vel;
            }
        }
        Ok(())
    }
}
