//! Layerwise convolutional-autoencoder pretraining of the conv stages.
//!
//! Stage `s` trains an encoder `h = relu(conv(x))` together with an untied
//! decoder `r = conv_transposeᵀ(h) + b_d` (zero-padded transposed conv back to
//! the stage input's channels) on per-pixel MSE, where `x` is the input
//! pushed through the frozen encoders of stages `< s` including their pools.
//! Only the encoder (conv, ReLU, pool) is kept.

use serde::{Deserialize, Serialize};

use crate::cnn::{build_paper_cnn, conv_layer_indices, train_cnn, PaperCnnConfig, TrainHistory, STAGES};
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::nn::{Layer, Mode, Network, Param, Sgd, StageCheckpoint, TrainConfig};
use crate::nn::layer::{Conv, Op};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeConfig {
    /// How many leading conv stages to pretrain (1..=4). Later stages keep
    /// their random initialisation.
    pub stages: usize,
    pub pretrain_lr: f64,
    /// Must be strictly below `pretrain_lr`.
    pub finetune_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs_per_stage: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self {
            stages: STAGES,
            pretrain_lr: 0.01,
            finetune_lr: 0.005,
            momentum: 0.9,
            batch_size: 16,
            epochs_per_stage: 5,
            finetune_epochs: 30,
            seed: 0,
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=STAGES).contains(&self.stages) {
            return bad(format!("stages must be in 1..={STAGES}, got {}", self.stages));
        }
        if !(self.finetune_lr > 0.0 && self.pretrain_lr.is_finite()) {
            return bad("learning rates must be positive and finite".into());
        }
        if self.finetune_lr >= self.pretrain_lr {
            return bad(format!(
                "finetune_lr ({}) must be strictly below pretrain_lr ({})",
                self.finetune_lr, self.pretrain_lr
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        Ok(())
    }

    fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.finetune_lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.finetune_epochs,
            seed: self.seed,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeStageReport {
    pub stage: usize,
    pub mse_init: f64,
    pub mse_final: f64,
    /// Mean training-batch MSE per epoch.
    pub epoch_mse: Vec<f64>,
}

/// Push images through pretrained stage encoders in order.
pub fn encode_through(stages: &[StageCheckpoint], images: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut rng = Prng::new(0);
    images
        .iter()
        .map(|img| {
            let mut shape = vec![1];
            shape.extend_from_slice(img.shape());
            let mut x = img.clone().reshape(&shape)?;
            for layer in stages.iter().flat_map(|s| &s.layers) {
                x = layer.forward(&x, Mode::Eval, &mut rng)?.0;
            }
            let out_shape = x.shape()[1..].to_vec();
            x = x.reshape(&out_shape)?;
            Ok(x)
        })
        .collect()
}

fn check_order(stage: usize, previous: &[StageCheckpoint]) -> Result<()> {
    if stage >= STAGES {
        return Err(Error::Config(format!("stage {stage} out of range 0..{STAGES}")));
    }
    if previous.len() != stage || previous.iter().enumerate().any(|(i, s)| s.stage != i) {
        return Err(Error::Config(format!(
            "stage {stage} needs stages 0..{stage} pretrained in order, got {:?}",
            previous.iter().map(|s| s.stage).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

struct Autoencoder {
    enc: Conv,
    dec_w: Param,
    dec_b: Param,
}

impl Autoencoder {
    /// Per-sample forward: returns (pre-activation, code, reconstruction).
    fn forward(&self, x: &[f64], scratch: &mut Vec<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = &self.enc.geom;
        let mut z = vec![0.0; g.out_len()];
        g.forward(x, self.enc.weights.value.data(), self.enc.bias.value.data(), &mut z, scratch);
        let h: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        let mut r = vec![0.0; g.in_len()];
        g.backward_input(&h, self.dec_w.value.data(), &mut r, scratch);
        for px in r.chunks_exact_mut(g.in_c) {
            for (v, b) in px.iter_mut().zip(self.dec_b.value.data()) {
                *v += b;
            }
        }
        (z, h, r)
    }

    fn mse(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let (_, _, r) = self.forward(x, scratch);
        r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.enc.weights, &mut self.enc.bias, &mut self.dec_w, &mut self.dec_b]
    }

    /// Accumulate gradients of `scale · MSE(x)`; returns the unscaled MSE.
    fn accumulate(&mut self, x: &[f64], scale: f64, scratch: &mut Vec<f64>) -> f64 {
        let (z, h, r) = self.forward(x, scratch);
        let n = x.len() as f64;
        let mse = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let dr: Vec<f64> = r.iter().zip(x).map(|(a, b)| 2.0 * (a - b) / n * scale).collect();
        let g = self.enc.geom;
        for px in dr.chunks_exact(g.in_c) {
            for (d, v) in self.dec_b.grad.data_mut().iter_mut().zip(px) {
                *d += v;
            }
        }
        // r = col2im(h·Wdᵀ), so dWd = im2col(dr)ᵀ·h and dh = im2col(dr)·Wd.
        g.backward_params(&dr, &h, self.dec_w.grad.data_mut(), &mut [], scratch);
        let mut dz = vec![0.0; g.out_len()];
        g.forward(&dr, self.dec_w.value.data(), &[], &mut dz, scratch);
        for (d, &zv) in dz.iter_mut().zip(&z) {
            if zv <= 0.0 {
                *d = 0.0;
            }
        }
        g.backward_params(
            x,
            &dz,
            self.enc.weights.grad.data_mut(),
            self.enc.bias.grad.data_mut(),
            scratch,
        );
        mse
    }
}

/// Encoder layers (conv, ReLU, pool) of `stage` in a freshly built paper CNN.
fn initial_encoder(stage: usize, net_config: &PaperCnnConfig) -> Result<Vec<Layer>> {
    let net = build_paper_cnn(net_config)?;
    let at = conv_layer_indices(&net)[stage];
    Ok(net.layers()[at..at + 3].to_vec())
}

/// Pretrain one conv stage as an autoencoder on `images` (raw network
/// inputs). `previous` must hold exactly stages `0..stage`, which stay frozen.
///
/// The encoder starts from the same weights a fresh [`build_paper_cnn`] with
/// `net_config` would give that layer.
pub fn cae_pretrain_stage(
    stage: usize,
    images: &[Tensor],
    previous: &[StageCheckpoint],
    net_config: &PaperCnnConfig,
    cae: &CaeConfig,
) -> Result<(StageCheckpoint, CaeStageReport)> {
    cae.validate()?;
    check_order(stage, previous)?;
    if stage >= cae.stages {
        return Err(Error::Config(format!(
            "stage {stage} is not among the {} configured stages",
            cae.stages
        )));
    }
    if images.is_empty() {
        return Err(Error::Data("empty pretraining set".into()));
    }
    if let Some(bad) = images.iter().find(|i| i.shape() != net_config.input) {
        return Err(Error::Shape(format!(
            "pretraining image {:?} does not match input {:?}",
            bad.shape(),
            net_config.input
        )));
    }
    let features = encode_through(previous, images)?;
    let mut layers = initial_encoder(stage, net_config)?;
    let Op::Conv(enc) = layers[0].op.clone() else {
        unreachable!("stage starts with a conv layer")
    };
    let g = enc.geom;
    let mut init_rng = Prng::derive(cae.seed, &format!("cae-decoder-{stage}"));
    let a = (6.0 / ((g.kernel * g.kernel) * (g.filters + g.in_c)) as f64).sqrt();
    let dec_w = Tensor::new(
        vec![g.kernel, g.kernel, g.in_c, g.filters],
        (0..g.patch_len() * g.filters).map(|_| init_rng.uniform(-a, a)).collect(),
    )?;
    let mut ae = Autoencoder {
        enc,
        dec_w: Param::new("decoder_weights", dec_w),
        dec_b: Param::new("decoder_bias", Tensor::zeros(&[g.in_c])),
    };

    let mut scratch = Vec::new();
    let mean_mse = |ae: &Autoencoder, scratch: &mut Vec<f64>| {
        features.iter().map(|f| ae.mse(f.data(), scratch)).sum::<f64>() / features.len() as f64
    };
    let mse_init = mean_mse(&ae, &mut scratch);
    let mut sgd = Sgd::new(cae.pretrain_lr, cae.momentum);
    let mut order_rng = Prng::derive(cae.seed, &format!("cae-order-{stage}"));
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_mse = Vec::with_capacity(cae.epochs_per_stage);
    for _ in 0..cae.epochs_per_stage {
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cae.batch_size) {
            ae.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                total += ae.accumulate(features[i].data(), scale, &mut scratch);
            }
            sgd.step_params(ae.params_mut())?;
        }
        epoch_mse.push(total / features.len() as f64);
        log::debug!("cae stage {stage}: mse {:.6}", epoch_mse.last().unwrap());
    }
    let mse_final = mean_mse(&ae, &mut scratch);

    let mut enc = ae.enc;
    for p in [&mut enc.weights, &mut enc.bias] {
        p.grad.data_mut().fill(0.0);
    }
    layers[0].op = Op::Conv(enc);
    let checkpoint = StageCheckpoint {
        stage,
        input_shape: features[0].shape().to_vec(),
        layers,
    };
    let report = CaeStageReport {
        stage,
        mse_init,
        mse_final,
        epoch_mse,
    };
    Ok((checkpoint, report))
}

/// A fresh paper CNN whose first `stages.len()` conv layers are replaced by
/// the pretrained encoders. `stages` must be exactly `0..cae.stages`.
pub fn assemble(stages: &[StageCheckpoint], net_config: &PaperCnnConfig, cae: &CaeConfig) -> Result<Network> {
    cae.validate()?;
    for i in 0..cae.stages {
        if stages.get(i).map(|s| s.stage) != Some(i) {
            return Err(Error::Config(format!("missing pretrained stage {i}")));
        }
    }
    if stages.len() != cae.stages {
        return Err(Error::Config(format!(
            "{} stage checkpoints for {} configured stages",
            stages.len(),
            cae.stages
        )));
    }
    let mut net = build_paper_cnn(net_config)?;
    let convs = conv_layer_indices(&net);
    for (st, &at) in stages.iter().zip(&convs) {
        let target = &mut net.layers_mut()[at];
        let source = &st.layers[0];
        if source.in_shape != target.in_shape || source.out_shape != target.out_shape {
            return Err(Error::Shape(format!(
                "stage {} encoder {:?}→{:?} does not fit network layer {:?}→{:?}",
                st.stage, source.in_shape, source.out_shape, target.in_shape, target.out_shape
            )));
        }
        *target = source.clone();
    }
    Ok(net)
}

/// [`assemble`], then supervised training of every layer at `finetune_lr`.
pub fn assemble_and_finetune(
    stages: &[StageCheckpoint],
    train: &[LabeledImage],
    net_config: &PaperCnnConfig,
    cae: &CaeConfig,
) -> Result<(Network, TrainHistory)> {
    let mut net = assemble(stages, net_config, cae)?;
    let history = train_cnn(&mut net, train, &cae.finetune_config())?;
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net() -> PaperCnnConfig {
        PaperCnnConfig {
            filters: 4,
            fc_hidden: 8,
            classes: 2,
            ..PaperCnnConfig::with_input(16, 16, 1)
        }
    }

    fn quick() -> CaeConfig {
        CaeConfig {
            stages: 2,
            epochs_per_stage: 30,
            batch_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_images_reconstruct_exactly() {
        let imgs = vec![Tensor::zeros(&[16, 16, 1]); 3];
        let cae = CaeConfig { epochs_per_stage: 0, ..quick() };
        let (_, rep) = cae_pretrain_stage(0, &imgs, &[], &small_net(), &cae).unwrap();
        assert_eq!(rep.mse_init, 0.0);
        assert_eq!(rep.mse_final, 0.0);
    }

    #[test]
    fn constant_images_are_learned() {
        let imgs = vec![Tensor::full(&[16, 16, 1], 0.6); 8];
        let cae = CaeConfig { epochs_per_stage: 150, ..quick() };
        let (_, rep) = cae_pretrain_stage(0, &imgs, &[], &small_net(), &cae).unwrap();
        assert!(rep.mse_final < 1e-3, "{rep:?}");
    }

    #[test]
    fn lr_ordering_enforced() {
        let cae = CaeConfig { finetune_lr: 0.01, pretrain_lr: 0.01, ..Default::default() };
        assert!(cae.validate().is_err());
        let cae = CaeConfig { finetune_lr: 0.02, pretrain_lr: 0.01, ..Default::default() };
        assert!(cae.validate().is_err());
    }

    #[test]
    fn stage_order_enforced() {
        let imgs = vec![Tensor::full(&[16, 16, 1], 0.5); 2];
        let cfg = CaeConfig { epochs_per_stage: 1, ..quick() };
        assert!(cae_pretrain_stage(1, &imgs, &[], &small_net(), &cfg).is_err());
        let (s0, _) = cae_pretrain_stage(0, &imgs, &[], &small_net(), &cfg).unwrap();
        let (s1, _) = cae_pretrain_stage(1, &imgs, std::slice::from_ref(&s0), &small_net(), &cfg).unwrap();
        assert_eq!(s1.input_shape, vec![8, 8, 4]);
        assert!(cae_pretrain_stage(2, &imgs, &[s0.clone(), s1.clone()], &small_net(), &cfg).is_err());
        assert!(assemble(std::slice::from_ref(&s0), &small_net(), &cfg).is_err());
        assert!(assemble(&[s1.clone(), s0.clone()], &small_net(), &cfg).is_err());
        let net = assemble(&[s0.clone(), s1], &small_net(), &cfg).unwrap();
        assert_eq!(net.layers()[0], s0.layers[0]);
    }

    /// Finite-difference check of the hand-derived autoencoder gradients.
    #[test]
    fn autoencoder_gradients_match_finite_differences() {
        let cfg = PaperCnnConfig { filters: 3, ..PaperCnnConfig::with_input(16, 16, 2) };
        let layers = initial_encoder(0, &cfg).unwrap();
        let Op::Conv(mut enc) = layers[0].op.clone() else { unreachable!() };
        let g = enc.geom;
        let mut rng = Prng::new(9);
        for b in enc.bias.value.data_mut() {
            *b = rng.uniform(-0.1, 0.1);
        }
        let dec = Tensor::new(
            vec![g.kernel, g.kernel, g.in_c, g.filters],
            (0..g.patch_len() * g.filters).map(|_| rng.uniform(-0.2, 0.2)).collect(),
        )
        .unwrap();
        let mut ae = Autoencoder {
            enc,
            dec_w: Param::new("dw", dec),
            dec_b: Param::new("db", Tensor::new(vec![2], vec![0.05, -0.02]).unwrap()),
        };
        let x: Vec<f64> = (0..g.in_len()).map(|_| rng.next_f64()).collect();
        let mut scratch = Vec::new();
        ae.zero_grads();
        ae.accumulate(&x, 1.0, &mut scratch);
        let analytic: Vec<Vec<f64>> = ae.params_mut().iter().map(|p| p.grad.data().to_vec()).collect();
        let h = 1e-5;
        for (pi, grads) in analytic.iter().enumerate() {
            for j in (0..grads.len()).step_by(7) {
                let orig = ae.params_mut()[pi].value.data()[j];
                ae.params_mut()[pi].value.data_mut()[j] = orig + h;
                let up = ae.mse(&x, &mut scratch);
                ae.params_mut()[pi].value.data_mut()[j] = orig - h;
                let down = ae.mse(&x, &mut scratch);
                ae.params_mut()[pi].value.data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = crate::nn::gradcheck::relative_error(grads[j], numeric);
                assert!(rel < 1e-5, "param {pi}[{j}]: {} vs {numeric}", grads[j]);
            }
        }
    }
}
