//! Layers with hand-written forward/backward passes over batched tensors.
//!
//! Every activation is a batch tensor `[B, ...sample]`; a layer's `in_shape`
//! and `out_shape` describe one sample and are fixed when the network is built.

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{ConvGeom, Padding, PoolGeom, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    MaxPool,
    Relu,
    Fc,
    Dropout,
    Softmax,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Relu => "relu",
            LayerKind::Fc => "fc",
            LayerKind::Dropout => "dropout",
            LayerKind::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its gradient (same shape, always).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name, value, grad }
    }
}

/// Forward state kept for exactly one backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Argmax(Vec<usize>),
    Mask(Vec<bool>),
    Scale(Option<Vec<f64>>),
    Probs(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub geom: ConvGeom,
    pub padding: Padding,
    pub weights: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub geom: PoolGeom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fc {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv(Conv),
    MaxPool(MaxPool),
    Relu,
    Fc(Fc),
    Dropout { rate: f64 },
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub op: Op,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Prng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-a, a)).collect())
        .expect("shape is positive")
}

/// He-uniform bound `sqrt(6 / fan_in)`, for layers feeding a ReLU.
fn he(shape: &[usize], fan_in: usize, rng: &mut Prng) -> Tensor {
    let a = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-a, a)).collect())
        .expect("shape is positive")
}

impl Layer {
    pub fn conv(
        in_shape: &[usize],
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut Prng,
    ) -> Result<Self> {
        let [h, w, c] = spatial(in_shape)?;
        let geom = ConvGeom::new(h, w, c, kernel, filters, stride, padding)?;
        let weights = he(&[kernel, kernel, c, filters], kernel * kernel * c, rng);
        Ok(Self {
            op: Op::Conv(Conv {
                geom,
                padding,
                weights: Param::new("weights", weights),
                bias: Param::new("bias", Tensor::zeros(&[filters])),
            }),
            in_shape: in_shape.to_vec(),
            out_shape: vec![geom.out_h, geom.out_w, filters],
        })
    }

    pub fn maxpool(in_shape: &[usize], window: usize, stride: usize) -> Result<Self> {
        let [h, w, c] = spatial(in_shape)?;
        let geom = PoolGeom::new(h, w, c, window, stride)?;
        Ok(Self {
            op: Op::MaxPool(MaxPool { geom }),
            in_shape: in_shape.to_vec(),
            out_shape: vec![geom.out_h, geom.out_w, c],
        })
    }

    pub fn relu(in_shape: &[usize]) -> Self {
        Self {
            op: Op::Relu,
            in_shape: in_shape.to_vec(),
            out_shape: in_shape.to_vec(),
        }
    }

    /// Fully connected; flattens whatever sample shape it receives.
    pub fn fc(in_shape: &[usize], outputs: usize, rng: &mut Prng) -> Result<Self> {
        if outputs == 0 {
            return Err(Error::Shape("fc layer needs at least one output".into()));
        }
        let inputs: usize = in_shape.iter().product();
        Ok(Self {
            op: Op::Fc(Fc {
                inputs,
                outputs,
                weights: Param::new("weights", glorot(&[inputs, outputs], inputs, outputs, rng)),
                bias: Param::new("bias", Tensor::zeros(&[outputs])),
            }),
            in_shape: in_shape.to_vec(),
            out_shape: vec![outputs],
        })
    }

    pub fn dropout(in_shape: &[usize], rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self {
            op: Op::Dropout { rate },
            in_shape: in_shape.to_vec(),
            out_shape: in_shape.to_vec(),
        })
    }

    pub fn softmax(in_shape: &[usize]) -> Result<Self> {
        if in_shape.len() != 1 {
            return Err(Error::Shape(format!(
                "softmax expects a flat input, got {in_shape:?}"
            )));
        }
        Ok(Self {
            op: Op::Softmax,
            in_shape: in_shape.to_vec(),
            out_shape: in_shape.to_vec(),
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self.op {
            Op::Conv(_) => LayerKind::Conv,
            Op::MaxPool(_) => LayerKind::MaxPool,
            Op::Relu => LayerKind::Relu,
            Op::Fc(_) => LayerKind::Fc,
            Op::Dropout { .. } => LayerKind::Dropout,
            Op::Softmax => LayerKind::Softmax,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match &self.op {
            Op::Conv(c) => vec![&c.weights, &c.bias],
            Op::Fc(f) => vec![&f.weights, &f.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.op {
            Op::Conv(c) => vec![&mut c.weights, &mut c.bias],
            Op::Fc(f) => vec![&mut f.weights, &mut f.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Batch size of `x`, checking its per-sample shape against `in_shape`.
    pub(crate) fn check_input(&self, x: &Tensor) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != self.in_shape.len() + 1 || shape[1..] != self.in_shape[..] {
            return Err(Error::Shape(format!(
                "expected batch of {:?}, got {shape:?}",
                self.in_shape
            )));
        }
        Ok(shape[0])
    }

    fn batch_out(&self, batch: usize, data: Vec<f64>) -> Tensor {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.out_shape);
        Tensor::new(shape, data).expect("layer output shape")
    }

    fn batch_in(&self, batch: usize, data: Vec<f64>) -> Tensor {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.in_shape);
        Tensor::new(shape, data).expect("layer input shape")
    }

    pub fn forward(&self, x: &Tensor, mode: Mode, rng: &mut Prng) -> Result<(Tensor, Cache)> {
        let batch = self.check_input(x)?;
        let (in_len, out_len) = (self.in_len(), self.out_len());
        let xs = x.data();
        match &self.op {
            Op::Conv(c) => {
                let mut out = vec![0.0; batch * out_len];
                let mut scratch = Vec::new();
                for (xi, yi) in xs.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                    c.geom
                        .forward(xi, c.weights.value.data(), c.bias.value.data(), yi, &mut scratch);
                }
                Ok((self.batch_out(batch, out), Cache::Input(x.clone())))
            }
            Op::MaxPool(p) => {
                let mut out = vec![0.0; batch * out_len];
                let mut argmax = vec![0; batch * out_len];
                for (b, (xi, yi)) in xs
                    .chunks_exact(in_len)
                    .zip(out.chunks_exact_mut(out_len))
                    .enumerate()
                {
                    let am = &mut argmax[b * out_len..(b + 1) * out_len];
                    p.geom.forward(xi, yi, am);
                    for a in am.iter_mut() {
                        *a += b * in_len;
                    }
                }
                Ok((self.batch_out(batch, out), Cache::Argmax(argmax)))
            }
            Op::Relu => {
                let mask: Vec<bool> = xs.iter().map(|&v| v > 0.0).collect();
                let out = xs.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                Ok((self.batch_out(batch, out), Cache::Mask(mask)))
            }
            Op::Fc(f) => {
                let mut out = vec![0.0; batch * f.outputs];
                crate::tensor::mm(xs, f.weights.value.data(), &mut out, batch, f.inputs, f.outputs);
                for row in out.chunks_exact_mut(f.outputs) {
                    for (v, b) in row.iter_mut().zip(f.bias.value.data()) {
                        *v += b;
                    }
                }
                Ok((self.batch_out(batch, out), Cache::Input(x.clone())))
            }
            Op::Dropout { rate } => {
                if mode == Mode::Eval || *rate == 0.0 {
                    return Ok((x.clone(), Cache::Scale(None)));
                }
                let keep = 1.0 / (1.0 - rate);
                let scale: Vec<f64> = (0..xs.len())
                    .map(|_| if rng.bernoulli(*rate) { 0.0 } else { keep })
                    .collect();
                let out = xs.iter().zip(&scale).map(|(v, s)| v * s).collect();
                Ok((self.batch_out(batch, out), Cache::Scale(Some(scale))))
            }
            Op::Softmax => {
                let probs = softmax_rows(x);
                Ok((probs.clone(), Cache::Probs(probs)))
            }
        }
    }

    /// Propagate `grad_out` (dL/d output) to dL/d input, overwriting this
    /// layer's parameter gradients.
    pub fn backward(&mut self, cache: Cache, grad_out: &Tensor) -> Result<Tensor> {
        let (in_len, out_len) = (self.in_len(), self.out_len());
        let g = grad_out.data();
        if !g.len().is_multiple_of(out_len) {
            return Err(Error::Shape("gradient does not match layer output".into()));
        }
        let batch = g.len() / out_len;
        let d_in = match (&mut self.op, cache) {
            (Op::Conv(c), Cache::Input(x)) => {
                let mut d_in = vec![0.0; batch * in_len];
                let mut dk = vec![0.0; c.weights.value.len()];
                let mut db = vec![0.0; c.bias.value.len()];
                let mut scratch = Vec::new();
                for ((xi, gi), di) in x
                    .data()
                    .chunks_exact(in_len)
                    .zip(g.chunks_exact(out_len))
                    .zip(d_in.chunks_exact_mut(in_len))
                {
                    c.geom.backward_params(xi, gi, &mut dk, &mut db, &mut scratch);
                    c.geom.backward_input(gi, c.weights.value.data(), di, &mut scratch);
                }
                c.weights.grad.data_mut().copy_from_slice(&dk);
                c.bias.grad.data_mut().copy_from_slice(&db);
                d_in
            }
            (Op::MaxPool(_), Cache::Argmax(argmax)) => {
                let mut d_in = vec![0.0; batch * in_len];
                for (&gv, &i) in g.iter().zip(&argmax) {
                    d_in[i] += gv;
                }
                d_in
            }
            (Op::Relu, Cache::Mask(mask)) => g
                .iter()
                .zip(&mask)
                .map(|(&gv, &m)| if m { gv } else { 0.0 })
                .collect(),
            (Op::Fc(f), Cache::Input(x)) => {
                let dw = f.weights.grad.data_mut();
                dw.fill(0.0);
                crate::tensor::mm_tn_acc(x.data(), g, dw, batch, f.inputs, f.outputs);
                let db = f.bias.grad.data_mut();
                db.fill(0.0);
                for row in g.chunks_exact(f.outputs) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                let mut d_in = vec![0.0; batch * f.inputs];
                crate::tensor::mm_nt(g, f.weights.value.data(), &mut d_in, batch, f.outputs, f.inputs);
                d_in
            }
            (Op::Dropout { .. }, Cache::Scale(scale)) => match scale {
                None => g.to_vec(),
                Some(s) => g.iter().zip(&s).map(|(a, b)| a * b).collect(),
            },
            (Op::Softmax, Cache::Probs(p)) => {
                // dz = p ⊙ (g − Σ p·g) per row
                let k = out_len;
                let mut d = vec![0.0; g.len()];
                for ((pr, gr), dr) in p
                    .data()
                    .chunks_exact(k)
                    .zip(g.chunks_exact(k))
                    .zip(d.chunks_exact_mut(k))
                {
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dv, pv), gv) in dr.iter_mut().zip(pr).zip(gr) {
                        *dv = pv * (gv - dot);
                    }
                }
                d
            }
            _ => return Err(Error::Shape("cache does not belong to this layer".into())),
        };
        Ok(self.batch_in(batch, d_in))
    }
}

fn spatial(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[h, w, c] => Ok([h, w, c]),
        _ => Err(Error::Shape(format!(
            "expected an H×W×C sample shape, got {shape:?}"
        ))),
    }
}

/// Row-wise softmax of a `[B, K]` tensor, max-shifted for stability.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = *logits.shape().last().expect("non-empty shape");
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}
