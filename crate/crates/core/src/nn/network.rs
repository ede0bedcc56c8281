use crate::error::{Error, Result};
use crate::nn::layer::{Cache, Layer, LayerKind, Mode, Param};
use crate::rng::Prng;
use crate::tensor::{Padding, Tensor};

/// Ordered layer stack ending in a softmax over `classes` outputs.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    classes: usize,
    layers: Vec<Layer>,
    caches: Vec<Option<Cache>>,
    rng: Prng,
}

/// Adds layers one at a time, resolving each layer's shape from the previous
/// one so a network that does not compose can never be built.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    rng: Prng,
    error: Option<Error>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize], seed: u64) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            layers: Vec::new(),
            rng: Prng::new(seed),
            error: None,
        }
    }

    fn current(&self) -> Vec<usize> {
        self.layers
            .last()
            .map_or_else(|| self.input_shape.clone(), |l| l.out_shape.clone())
    }

    fn push(mut self, layer: Result<Layer>) -> Self {
        if self.error.is_none() {
            match layer {
                Ok(l) => self.layers.push(l),
                Err(e) => {
                    self.error = Some(Error::Layer {
                        index: self.layers.len(),
                        kind: "build",
                        message: e.to_string(),
                    })
                }
            }
        }
        self
    }

    pub fn conv(mut self, filters: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        let shape = self.current();
        let layer = Layer::conv(&shape, filters, kernel, stride, padding, &mut self.rng);
        self.push(layer)
    }

    pub fn relu(self) -> Self {
        let layer = Layer::relu(&self.current());
        self.push(Ok(layer))
    }

    pub fn maxpool(self, window: usize, stride: usize) -> Self {
        let layer = Layer::maxpool(&self.current(), window, stride);
        self.push(layer)
    }

    pub fn fc(mut self, outputs: usize) -> Self {
        let shape = self.current();
        let layer = Layer::fc(&shape, outputs, &mut self.rng);
        self.push(layer)
    }

    /// Rate 0 adds nothing.
    pub fn dropout(self, rate: f64) -> Self {
        if rate == 0.0 {
            return self;
        }
        let layer = Layer::dropout(&self.current(), rate);
        self.push(layer)
    }

    pub fn softmax(self) -> Self {
        let layer = Layer::softmax(&self.current());
        self.push(layer)
    }

    pub fn build(self) -> Result<Network> {
        if let Some(e) = self.error {
            return Err(e);
        }
        Network::from_layers(self.input_shape, self.layers)
    }
}

impl Network {
    /// Assemble pre-built layers; the last layer must be a softmax and
    /// adjacent shapes must agree.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (index, l) in layers.iter().enumerate() {
            if l.in_shape != shape {
                return Err(Error::Layer {
                    index,
                    kind: l.kind().name(),
                    message: format!("expects {:?}, previous layer yields {shape:?}", l.in_shape),
                });
            }
            shape = l.out_shape.clone();
        }
        match layers.last() {
            Some(l) if l.kind() == LayerKind::Softmax => {}
            _ => return Err(Error::Config("network must end with a softmax layer".into())),
        }
        let classes = shape[0];
        let caches = vec![None; layers.len()];
        Ok(Self {
            input_shape,
            classes,
            layers,
            caches,
            rng: Prng::new(0),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Reseed the stream that draws dropout masks.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = Prng::new(seed);
    }

    pub fn params(&self) -> impl Iterator<Item = (usize, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |p| (i, p)))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(Error::Layer {
                index: 0,
                kind: self.layers[0].kind().name(),
                message: format!(
                    "batch {s:?} does not match network input {:?}",
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    /// Class probabilities `[B, K]`, keeping per-layer state for one
    /// subsequent [`Network::backward`].
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&x, mode, &mut self.rng).map_err(|e| Error::Layer {
                index: i,
                kind: layer.kind().name(),
                message: e.to_string(),
            })?;
            self.caches[i] = Some(cache);
            x = y;
        }
        Ok(x)
    }

    /// Eval-mode forward pass that keeps no state.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.predict_through(batch, self.layers.len())
    }

    /// Eval-mode output of the first `layers` layers, e.g. penultimate
    /// activations for use as features.
    pub fn predict_through(&self, batch: &Tensor, layers: usize) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut scratch_rng = Prng::new(0);
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate().take(layers) {
            x = layer
                .forward(&x, Mode::Eval, &mut scratch_rng)
                .map_err(|e| Error::Layer {
                    index: i,
                    kind: layer.kind().name(),
                    message: e.to_string(),
                })?
                .0;
        }
        Ok(x)
    }

    /// Gradients of mean cross-entropy for the batch last seen by `forward`.
    /// Populates every parameter gradient and returns dL/d input.
    pub fn backward(&mut self, probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let batch = probs.shape()[0];
        if labels.len() != batch || probs.shape() != [batch, self.classes] {
            return Err(Error::Shape(format!(
                "{} labels for probabilities {:?}",
                labels.len(),
                probs.shape()
            )));
        }
        check_labels(labels, self.classes)?;
        if self.caches.iter().any(Option::is_none) {
            return Err(Error::Config("backward called without a preceding forward".into()));
        }
        // Softmax and cross-entropy combine to (p − onehot) / B at the logits.
        let mut g = probs.data().to_vec();
        for (row, &y) in g.chunks_exact_mut(self.classes).zip(labels) {
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v /= batch as f64;
            }
        }
        let mut grad = Tensor::new(vec![batch, self.classes], g)?;
        let last = self.layers.len() - 1;
        self.caches[last] = None;
        for i in (0..last).rev() {
            let cache = self.caches[i].take().expect("checked above");
            let layer = &mut self.layers[i];
            grad = layer.backward(cache, &grad).map_err(|e| Error::Layer {
                index: i,
                kind: layer.kind().name(),
                message: e.to_string(),
            })?;
        }
        Ok(grad)
    }
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::Label { label, classes }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood `−(1/B) Σ ln p[i][yᵢ]`, with the log argument
/// clamped at 1e-12.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let [batch, k] = match probs.shape() {
        &[b, k] => [b, k],
        s => return Err(Error::Shape(format!("expected [B, K] probabilities, got {s:?}"))),
    };
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} labels for batch of {batch}", labels.len())));
    }
    check_labels(labels, k)?;
    let sum: f64 = probs
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &y)| -row[y].max(1e-12).ln())
        .sum();
    Ok(sum / batch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64) -> Network {
        NetworkBuilder::new(&[6, 6, 2], seed)
            .conv(3, 3, 1, Padding::Same)
            .relu()
            .maxpool(2, 2)
            .fc(5)
            .relu()
            .dropout(0.5)
            .fc(4)
            .softmax()
            .build()
            .unwrap()
    }

    fn batch(seed: u64, n: usize) -> Tensor {
        let mut rng = Prng::new(seed);
        Tensor::new(vec![n, 6, 6, 2], (0..n * 72).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn rows_sum_to_one() {
        let mut net = small_net(1);
        let p = net.forward(&batch(2, 3), Mode::Train).unwrap();
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_head_gives_uniform() {
        let mut net = small_net(1);
        let n = net.layers().len();
        for p in net.layers_mut()[n - 2].params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let p = net.predict(&batch(3, 2)).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn forward_is_deterministic() {
        let a = small_net(9).forward(&batch(4, 2), Mode::Train).unwrap();
        let b = small_net(9).forward(&batch(4, 2), Mode::Train).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn shape_mismatch_reports_layer() {
        let mut net = small_net(1);
        let bad = Tensor::zeros(&[1, 5, 6, 2]);
        assert!(matches!(net.forward(&bad, Mode::Eval), Err(Error::Layer { index: 0, .. })));
        let r = NetworkBuilder::new(&[4, 4, 1], 0).conv(2, 5, 1, Padding::Valid).softmax().build();
        assert!(matches!(r, Err(Error::Layer { index: 0, .. })));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = small_net(1);
        let p = Tensor::full(&[1, 4], 0.25);
        assert!(net.backward(&p, &[0]).is_err());
        let p = net.forward(&batch(5, 1), Mode::Train).unwrap();
        net.backward(&p, &[1]).unwrap();
        assert!(net.backward(&p, &[1]).is_err(), "cache must be consumed");
    }

    #[test]
    fn backward_rejects_bad_label() {
        let mut net = small_net(1);
        let p = net.forward(&batch(5, 1), Mode::Train).unwrap();
        assert!(matches!(net.backward(&p, &[4]), Err(Error::Label { label: 4, classes: 4 })));
    }

    #[test]
    fn logit_gradient_identity() {
        // Only a softmax after a bias-only fc: d/dbias = (p − onehot)/B.
        let mut net = NetworkBuilder::new(&[3], 0).fc(3).softmax().build().unwrap();
        for p in net.layers_mut()[0].params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.0, -1.0, 2.0]).unwrap();
        let p = net.forward(&x, Mode::Eval).unwrap();
        net.backward(&p, &[0, 2]).unwrap();
        let db = net.layers()[0].params()[1].grad.data().to_vec();
        let expect = [(1.0 / 3.0 - 1.0 + 1.0 / 3.0) / 2.0, (2.0 / 3.0) / 2.0, (1.0 / 3.0 + 1.0 / 3.0 - 1.0) / 2.0];
        for (a, b) in db.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&p, &[0]).unwrap(), 0.0);
        let p = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!((cross_entropy(&p, &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let p = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        assert!((cross_entropy(&p, &[0, 0]).unwrap() - 1.039721).abs() < 1e-6);
        assert!(cross_entropy(&p, &[0, 2]).is_err());
        // log clamp
        let p = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!((cross_entropy(&p, &[0]).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
    }
}
