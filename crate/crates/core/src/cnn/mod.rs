//! The four-stage classification CNN, its supervised training loop, and
//! layerwise convolutional-autoencoder pretraining.

mod cae;
mod train;

pub use cae::{assemble, assemble_and_finetune, cae_pretrain_stage, encode_through, CaeConfig, CaeStageReport};
pub use train::{accuracy, extract_features, predict_probs, train_cnn, train_cnn_with, EpochStats, TrainHistory};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerKind, Network, NetworkBuilder};
use crate::tensor::Padding;

/// Number of conv + pool stages.
pub const STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperCnnConfig {
    /// `[H, W, C]`; H and W must be divisible by 16.
    pub input: [usize; 3],
    pub filters: usize,
    pub kernel: usize,
    pub fc_hidden: usize,
    pub classes: usize,
    /// After every pooling layer; 0 disables.
    pub dropout_pool: f64,
    /// After the hidden fully connected layer; 0 disables.
    pub dropout_fc: f64,
    /// Weight initialisation seed.
    pub seed: u64,
}

impl Default for PaperCnnConfig {
    fn default() -> Self {
        Self {
            input: [224, 224, 3],
            filters: 16,
            kernel: 5,
            fc_hidden: 128,
            classes: 8,
            dropout_pool: 0.25,
            dropout_fc: 0.5,
            seed: 0,
        }
    }
}

impl PaperCnnConfig {
    pub fn with_input(h: usize, w: usize, c: usize) -> Self {
        Self {
            input: [h, w, c],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input;
        let side = 1 << STAGES;
        if h == 0 || w == 0 || h % side != 0 || w % side != 0 {
            return Err(Error::Config(format!(
                "input {h}×{w} must be a positive multiple of {side} in both dimensions"
            )));
        }
        if c == 0 || self.filters == 0 || self.kernel == 0 || self.fc_hidden == 0 || self.classes < 2 {
            return Err(Error::Config(
                "channels, filters, kernel and hidden width must be positive; classes ≥ 2".into(),
            ));
        }
        for (name, r) in [("dropout_pool", self.dropout_pool), ("dropout_fc", self.dropout_fc)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {r}")));
            }
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let [h, w, c] = self.input;
        let (f, k2) = (self.filters, self.kernel * self.kernel);
        let convs = f * (k2 * c + 1) + (STAGES - 1) * f * (k2 * f + 1);
        let flat = (h >> STAGES) * (w >> STAGES) * f;
        convs + flat * self.fc_hidden + self.fc_hidden + self.fc_hidden * self.classes + self.classes
    }
}

/// `4 × (conv same + ReLU + maxpool 2/2 [+ dropout]) → FC + ReLU [+ dropout]
/// → FC → softmax`.
pub fn build_paper_cnn(config: &PaperCnnConfig) -> Result<Network> {
    config.validate()?;
    let mut b = NetworkBuilder::new(&config.input, config.seed);
    for _ in 0..STAGES {
        b = b
            .conv(config.filters, config.kernel, 1, Padding::Same)
            .relu()
            .maxpool(2, 2)
            .dropout(config.dropout_pool);
    }
    b.fc(config.fc_hidden)
        .relu()
        .dropout(config.dropout_fc)
        .fc(config.classes)
        .softmax()
        .build()
}

/// Layer indices of the conv layers, in order.
pub fn conv_layer_indices(net: &Network) -> Vec<usize> {
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind() == LayerKind::Conv)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let cases = [((224, 224, 3), 8, 423_032), ((32, 32, 3), 8, 29_816), ((224, 224, 3), 2, 422_258)];
        for ((h, w, c), k, want) in cases {
            let cfg = PaperCnnConfig { classes: k, ..PaperCnnConfig::with_input(h, w, c) };
            assert_eq!(cfg.param_count(), want);
            assert_eq!(build_paper_cnn(&cfg).unwrap().param_count(), want);
        }
    }

    #[test]
    fn parameter_breakdown_224() {
        let net = build_paper_cnn(&PaperCnnConfig::default()).unwrap();
        let per_kind = |kind| -> usize {
            net.layers().iter().filter(|l| l.kind() == kind).map(|l| l.param_count()).sum()
        };
        assert_eq!(per_kind(LayerKind::Conv), 20_464);
        let fcs: Vec<usize> = net
            .layers()
            .iter()
            .filter(|l| l.kind() == LayerKind::Fc)
            .map(|l| l.param_count())
            .collect();
        assert_eq!(fcs, vec![401_536, 1_032]);
    }

    #[test]
    fn layer_sequence() {
        let net = build_paper_cnn(&PaperCnnConfig::with_input(32, 32, 3)).unwrap();
        let kinds: Vec<_> = net.layers().iter().map(|l| l.kind().name()).collect();
        let stage = ["conv", "relu", "maxpool", "dropout"];
        let mut want: Vec<&str> = stage.iter().cycle().take(16).copied().collect();
        want.extend(["fc", "relu", "dropout", "fc", "softmax"]);
        assert_eq!(kinds, want);
        assert_eq!(conv_layer_indices(&net), vec![0, 4, 8, 12]);
    }

    #[test]
    fn rejects_indivisible_input() {
        assert!(build_paper_cnn(&PaperCnnConfig::with_input(30, 32, 3)).is_err());
        assert!(build_paper_cnn(&PaperCnnConfig::with_input(32, 40, 3)).is_err());
    }
}
