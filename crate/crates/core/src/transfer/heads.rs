//! Linear classifiers over frozen feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::argmax;
use crate::rng::Prng;
use crate::transfer::features::FeatureSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Multinomial logistic regression.
    Softmax,
    /// One-vs-rest hinge loss.
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadHyper {
    pub lr: f64,
    /// Coefficient of `½‖W‖²`; biases are not penalised.
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadHyper {
    fn default() -> Self {
        Self {
            lr: 0.1,
            l2: 1e-4,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl HeadHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.l2.is_nan() || self.l2 < 0.0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "head needs lr > 0, l2 ≥ 0 and batch size ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub kind: HeadKind,
    pub dim: usize,
    pub classes: usize,
    /// `D×K`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub hyper: HeadHyper,
    /// Name of the feature extractor the head was trained on.
    pub extractor: String,
}

impl LinearHead {
    fn zeros(kind: HeadKind, fs: &FeatureSet, hyper: &HeadHyper) -> Self {
        Self {
            kind,
            dim: fs.dim,
            classes: fs.classes,
            weights: vec![0.0; fs.dim * fs.classes],
            bias: vec![0.0; fs.classes],
            hyper: hyper.clone(),
            extractor: fs.extractor.clone(),
        }
    }

    /// `xW + b`.
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "feature dimension");
        let mut out = self.bias.clone();
        for (xi, wrow) in x.iter().zip(self.weights.chunks_exact(self.classes)) {
            if *xi != 0.0 {
                for (o, w) in out.iter_mut().zip(wrow) {
                    *o += xi * w;
                }
            }
        }
        out
    }

    /// Softmax over the margins; for SVM heads this is the calibration used
    /// to turn margins into a probability row.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.margins(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.margins(x))
    }

    pub fn predict_proba_all(&self, fs: &FeatureSet) -> Result<Vec<Vec<f64>>> {
        self.check(fs)?;
        Ok(fs.rows().map(|r| self.predict_proba(r)).collect())
    }

    pub fn accuracy(&self, fs: &FeatureSet) -> Result<f64> {
        self.check(fs)?;
        let correct = fs
            .rows()
            .zip(&fs.labels)
            .filter(|(r, &y)| self.predict(r) == y)
            .count();
        Ok(correct as f64 / fs.len() as f64)
    }

    /// Mean one-vs-rest hinge loss `Σ_c max(0, 1 − y_c·m_c)` per example.
    pub fn hinge_loss(&self, fs: &FeatureSet) -> Result<f64> {
        self.check(fs)?;
        let total: f64 = fs
            .rows()
            .zip(&fs.labels)
            .map(|(r, &y)| {
                self.margins(r)
                    .iter()
                    .enumerate()
                    .map(|(c, m)| (1.0 - sign(c == y) * m).max(0.0))
                    .sum::<f64>()
            })
            .sum();
        Ok(total / fs.len() as f64)
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    fn check(&self, fs: &FeatureSet) -> Result<()> {
        if fs.dim != self.dim || fs.classes != self.classes {
            return Err(Error::Shape(format!(
                "head expects D={} K={}, features have D={} K={}",
                self.dim, self.classes, fs.dim, fs.classes
            )));
        }
        Ok(())
    }
}

fn sign(positive: bool) -> f64 {
    if positive {
        1.0
    } else {
        -1.0
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_training_set(fs: &FeatureSet, hyper: &HeadHyper) -> Result<()> {
    hyper.validate()?;
    fs.validate()?;
    if let Some(c) = fs.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {c} absent from the training set")));
    }
    Ok(())
}

/// Minibatch SGD. `grad_margins(row, label, margins) -> dLoss/dmargins` for
/// one example; the L2 term is applied as the proximal shrink
/// `W ← W / (1 + lr·l2)` after each step, which stays stable for any `l2`.
fn fit(
    head: &mut LinearHead,
    fs: &FeatureSet,
    grad_margins: impl Fn(usize, &[f64]) -> Vec<f64>,
) {
    let h = head.hyper.clone();
    let k = head.classes;
    let mut rng = Prng::new(h.seed);
    let mut order: Vec<usize> = (0..fs.len()).collect();
    let mut gw = vec![0.0; head.weights.len()];
    let mut gb = vec![0.0; k];
    let shrink = 1.0 / (1.0 + h.lr * h.l2);
    for _ in 0..h.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(h.batch_size) {
            gw.fill(0.0);
            gb.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = fs.row(i);
                let g = grad_margins(fs.labels[i], &head.margins(x));
                for (b, gv) in gb.iter_mut().zip(&g) {
                    *b += gv * scale;
                }
                for (xi, grow) in x.iter().zip(gw.chunks_exact_mut(k)) {
                    for (gw_, gv) in grow.iter_mut().zip(&g) {
                        *gw_ += xi * gv * scale;
                    }
                }
            }
            for (w, g) in head.weights.iter_mut().zip(&gw) {
                *w = (*w - h.lr * g) * shrink;
            }
            for (b, g) in head.bias.iter_mut().zip(&gb) {
                *b -= h.lr * g;
            }
        }
    }
}

/// Multinomial logistic regression on cross-entropy + `½·l2·‖W‖²`.
pub fn train_softmax_head(fs: &FeatureSet, hyper: &HeadHyper) -> Result<LinearHead> {
    check_training_set(fs, hyper)?;
    let mut head = LinearHead::zeros(HeadKind::Softmax, fs, hyper);
    fit(&mut head, fs, |y, m| {
        let mut p = softmax(m);
        p[y] -= 1.0;
        p
    });
    Ok(head)
}

/// One-vs-rest linear SVM: per class, hinge loss `max(0, 1 − y·m_c)` with
/// `y = ±1`, plus `½·l2·‖W‖²`, by subgradient SGD.
pub fn train_svm_head(fs: &FeatureSet, hyper: &HeadHyper) -> Result<LinearHead> {
    check_training_set(fs, hyper)?;
    let mut head = LinearHead::zeros(HeadKind::Svm, fs, hyper);
    fit(&mut head, fs, |y, m| {
        m.iter()
            .enumerate()
            .map(|(c, &mc)| {
                let s = sign(c == y);
                if s * mc < 1.0 {
                    -s
                } else {
                    0.0
                }
            })
            .collect()
    });
    Ok(head)
}

pub fn train_head(kind: HeadKind, fs: &FeatureSet, hyper: &HeadHyper) -> Result<LinearHead> {
    match kind {
        HeadKind::Softmax => train_softmax_head(fs, hyper),
        HeadKind::Svm => train_svm_head(fs, hyper),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::features::separable_features;

    fn two_class() -> FeatureSet {
        separable_features(20, 6, 2, 2.0, 0.4, 3).unwrap()
    }

    #[test]
    fn separable_two_class() {
        let fs = two_class();
        let soft = train_softmax_head(&fs, &HeadHyper::default()).unwrap();
        assert_eq!(soft.accuracy(&fs).unwrap(), 1.0);
        let hyper = HeadHyper { l2: 0.0, epochs: 200, ..Default::default() };
        let svm = train_svm_head(&fs, &hyper).unwrap();
        assert_eq!(svm.accuracy(&fs).unwrap(), 1.0);
        assert!(svm.hinge_loss(&fs).unwrap() < 1e-9);
    }

    #[test]
    fn huge_l2_gives_uniform_predictions() {
        let fs = two_class();
        let hyper = HeadHyper { l2: 1e12, batch_size: fs.len(), ..Default::default() };
        let head = train_softmax_head(&fs, &hyper).unwrap();
        assert!(head.weight_norm() < 1e-9);
        for p in head.predict_proba_all(&fs).unwrap() {
            assert!((p[0] - 0.5).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn conflicting_duplicates_bounded_by_prior() {
        let fs = FeatureSet::new(vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0], vec![0, 1, 1], 2, 2, "dup").unwrap();
        for kind in [HeadKind::Softmax, HeadKind::Svm] {
            let head = train_head(kind, &fs, &HeadHyper::default()).unwrap();
            assert!(head.accuracy(&fs).unwrap() <= 2.0 / 3.0 + 1e-12);
        }
    }

    #[test]
    fn single_points_on_e1() {
        let fs = FeatureSet::new(vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0], vec![0, 1], 3, 2, "e1").unwrap();
        let mut rng = Prng::new(1);
        for kind in [HeadKind::Softmax, HeadKind::Svm] {
            let head = train_head(kind, &fs, &HeadHyper::default()).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let want = if x[0] > 0.0 { 0 } else { 1 };
                assert_eq!(head.predict(&x), want, "{kind:?} {x:?}");
            }
        }
    }

    #[test]
    fn svm_probabilities_sum_to_one() {
        let fs = separable_features(5, 8, 4, 1.0, 0.3, 2).unwrap();
        let head = train_svm_head(&fs, &HeadHyper::default()).unwrap();
        for p in head.predict_proba_all(&fs).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_class_is_error() {
        let fs = FeatureSet::new(vec![1.0, 2.0], vec![0, 0], 1, 2, "x").unwrap();
        assert!(train_softmax_head(&fs, &HeadHyper::default()).is_err());
        assert!(train_svm_head(&fs, &HeadHyper::default()).is_err());
    }
}
