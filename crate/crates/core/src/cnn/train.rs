use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::data::{stack, LabeledImage};
use crate::error::{Error, Result};
use crate::eval::argmax;
use crate::nn::{cross_entropy, LayerKind, Mode, Network, Sgd, TrainConfig};
use crate::rng::Prng;
use crate::tensor::Tensor;
use crate::transfer::FeatureSet;

/// Training-set statistics for one pass, measured on the training-mode
/// forward passes (dropout active) as they happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

fn check_dataset(net: &Network, images: &[LabeledImage]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    for img in images {
        if img.pixels.shape() != net.input_shape() {
            return Err(Error::Shape(format!(
                "image {} is {:?}, network expects {:?}",
                img.source_id,
                img.pixels.shape(),
                net.input_shape()
            )));
        }
        if img.label >= net.classes() {
            return Err(Error::Label {
                label: img.label,
                classes: net.classes(),
            });
        }
    }
    Ok(())
}

pub fn train_cnn(net: &mut Network, train: &[LabeledImage], config: &TrainConfig) -> Result<TrainHistory> {
    train_cnn_with(net, train, config, |_, _| ControlFlow::Continue(()))
}

/// Mini-batch SGD with momentum on mean cross-entropy. `on_epoch` sees each
/// finished epoch and may stop training early.
///
/// One shuffle stream seeded by `config.seed` orders every epoch; dropout
/// masks come from a second stream derived from the same seed.
pub fn train_cnn_with(
    net: &mut Network,
    train: &[LabeledImage],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Network) -> ControlFlow<()>,
) -> Result<TrainHistory> {
    config.validate()?;
    check_dataset(net, train)?;
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(history);
    }
    net.reseed(Prng::derive(config.seed, "dropout").next_u64());
    let mut order_rng = Prng::new(config.seed);
    let mut sgd = Sgd::new(config.learning_rate, config.momentum);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        if config.shuffle {
            order_rng.shuffle(&mut order);
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch = stack(&chunk.iter().map(|&i| &train[i].pixels).collect::<Vec<_>>())?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let probs = net.forward(&batch, Mode::Train)?;
            loss_sum += cross_entropy(&probs, &labels)? * chunk.len() as f64;
            correct += argmax_rows(&probs).iter().zip(&labels).filter(|(p, y)| p == y).count();
            net.backward(&probs, &labels)?;
            sgd.step(net)?;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / train.len() as f64,
            accuracy: correct as f64 / train.len() as f64,
        };
        log::debug!("epoch {epoch}: loss {:.4} acc {:.4}", stats.loss, stats.accuracy);
        history.epochs.push(stats.clone());
        if on_epoch(&stats, net).is_break() {
            break;
        }
    }
    Ok(history)
}

pub(crate) fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    probs.data().chunks_exact(probs.shape()[1]).map(argmax).collect()
}

/// Eval-mode class probabilities for each image, in order.
pub fn predict_probs(net: &Network, images: &[&Tensor], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let probs = net.predict(&stack(chunk)?)?;
        out.extend(probs.data().chunks_exact(net.classes()).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Activations entering the network's last fully connected layer, one row
/// per image, labelled with the images' labels.
pub fn extract_features(net: &Network, images: &[LabeledImage], extractor: &str) -> Result<FeatureSet> {
    check_dataset(net, images)?;
    let last_fc = net
        .layers()
        .iter()
        .rposition(|l| l.kind() == LayerKind::Fc)
        .ok_or_else(|| Error::Config("network has no fully connected layer".into()))?;
    let dim = net.layers()[last_fc].in_shape.iter().product();
    let mut features = Vec::with_capacity(images.len() * dim);
    for chunk in images.chunks(64) {
        let pixels: Vec<&Tensor> = chunk.iter().map(|i| &i.pixels).collect();
        features.extend_from_slice(net.predict_through(&stack(&pixels)?, last_fc)?.data());
    }
    let labels = images.iter().map(|i| i.label).collect();
    FeatureSet::new(features, labels, dim, net.classes(), extractor)
}

/// Fraction of `images` whose arg-max prediction equals the label.
pub fn accuracy(net: &Network, images: &[LabeledImage]) -> Result<f64> {
    check_dataset(net, images)?;
    let pixels: Vec<&Tensor> = images.iter().map(|i| &i.pixels).collect();
    let probs = predict_probs(net, &pixels, 64)?;
    let correct = probs
        .iter()
        .zip(images)
        .filter(|(p, img)| argmax(p) == img.label)
        .count();
    Ok(correct as f64 / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{build_paper_cnn, PaperCnnConfig};

    fn tiny_set(n: usize) -> Vec<LabeledImage> {
        let mut rng = Prng::new(5);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let data = (0..16 * 16)
                    .map(|p| {
                        let bright = (p % 16 < 8) == (label == 0);
                        if bright { 0.8 } else { 0.2 }
                    } + rng.uniform(-0.05, 0.05))
                    .collect();
                LabeledImage::new(Tensor::new(vec![16, 16, 1], data).unwrap(), label, format!("t{i}")).unwrap()
            })
            .collect()
    }

    fn tiny_net() -> Network {
        build_paper_cnn(&PaperCnnConfig {
            classes: 2,
            filters: 4,
            fc_hidden: 8,
            dropout_pool: 0.0,
            dropout_fc: 0.0,
            ..PaperCnnConfig::with_input(16, 16, 1)
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_leaves_network_unchanged() {
        let mut net = tiny_net();
        let before = net.to_bytes();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let h = train_cnn(&mut net, &tiny_set(4), &cfg).unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(net.to_bytes(), before);
    }

    #[test]
    fn learns_a_trivial_split() {
        let data = tiny_set(32);
        let mut net = tiny_net();
        let cfg = TrainConfig { epochs: 15, batch_size: 8, seed: 2, ..Default::default() };
        let h = train_cnn(&mut net, &data, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 15);
        assert!(h.epochs.last().unwrap().loss < h.epochs[0].loss);
        assert_eq!(accuracy(&net, &data).unwrap(), 1.0);
    }

    #[test]
    fn early_stop() {
        let mut net = tiny_net();
        let cfg = TrainConfig { epochs: 10, ..Default::default() };
        let h = train_cnn_with(&mut net, &tiny_set(8), &cfg, |s, _| {
            if s.epoch == 2 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }
        })
        .unwrap();
        assert_eq!(h.epochs.len(), 3);
    }

    #[test]
    fn dataset_errors() {
        let mut net = tiny_net();
        let cfg = TrainConfig::default();
        assert!(matches!(train_cnn(&mut net, &[], &cfg), Err(Error::Data(_))));
        let mut bad = tiny_set(2);
        bad[0].label = 5;
        assert!(matches!(train_cnn(&mut net, &bad, &cfg), Err(Error::Label { .. })));
        let wrong = LabeledImage::new(Tensor::zeros(&[32, 32, 1]), 0, "w").unwrap();
        assert!(matches!(train_cnn(&mut net, &[wrong], &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let data = tiny_set(8);
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let (mut a, mut b) = (tiny_net(), tiny_net());
        train_cnn(&mut a, &data, &cfg).unwrap();
        train_cnn(&mut b, &data, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn features_are_hidden_activations() {
        let net = tiny_net();
        let set = tiny_set(5);
        let fs = extract_features(&net, &set, "tiny").unwrap();
        assert_eq!((fs.len(), fs.dim, fs.classes), (5, 8, 2));
        assert_eq!(fs.labels, vec![0, 1, 0, 1, 0]);
        // Post-ReLU activations.
        assert!(fs.features.iter().all(|&v| v >= 0.0));
        let last = net.layers().len() - 2;
        let x = stack(&[&set[3].pixels]).unwrap();
        assert_eq!(net.predict_through(&x, last).unwrap().data(), fs.row(3));
    }
}
