//! Rotation + horizontal-flip augmentation.

use serde::{Deserialize, Serialize};

use crate::data::{LabeledImage, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Rotation drawn uniformly from `[lo, hi]` degrees.
    pub rotation_deg: (f64, f64),
    pub flip_prob: f64,
    /// Exact per-class sizes for [`augment_to_counts`].
    pub target_counts: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_deg: (-20.0, 20.0),
            flip_prob: 0.5,
            target_counts: None,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rotation_deg;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Config(format!("rotation range [{lo}, {hi}] is not ordered")));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        Ok(())
    }
}

/// Rotate by `degrees` (counter-clockwise on screen) about the pixel-grid
/// center. Bilinear sampling; source coordinates outside the image are clamped
/// to the border, i.e. edges are replicated.
pub fn rotate(image: &Tensor, degrees: f64) -> Tensor {
    let (h, w, c) = match image.shape() {
        &[h, w, c] => (h, w, c),
        s => panic!("rotate expects H×W×C, got {s:?}"),
    };
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = (cos * dx - sin * dy + cx).clamp(0.0, (w - 1) as f64);
            let sy = (sin * dx + cos * dy + cy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let o = (y * w + x) * c;
            for ch in 0..c {
                let p = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
                let bot = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
                out[o + ch] = top + (bot - top) * fy;
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("same shape")
}

pub fn flip_horizontal(image: &Tensor) -> Tensor {
    let (w, c) = (image.shape()[1], image.shape()[2]);
    let mut out = image.data().to_vec();
    for row in out.chunks_exact_mut(w * c) {
        for x in 0..w / 2 {
            for ch in 0..c {
                row.swap(x * c + ch, (w - 1 - x) * c + ch);
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("same shape")
}

/// One random rotation then a flip with probability `flip_prob`. The angle is
/// drawn before the flip decision. Labels are untouched.
pub fn augment_one(img: &LabeledImage, spec: &AugmentSpec, rng: &mut Prng) -> LabeledImage {
    let (lo, hi) = spec.rotation_deg;
    let angle = rng.uniform(lo, hi);
    let flip = rng.bernoulli(spec.flip_prob);
    let mut pixels = if angle == 0.0 {
        img.pixels.clone()
    } else {
        rotate(&img.pixels, angle)
    };
    if flip {
        pixels = flip_horizontal(&pixels);
    }
    LabeledImage {
        pixels,
        label: img.label,
        source_id: img.source_id.clone(),
    }
}

/// Grow each class to its exact target size. Originals come first, unchanged;
/// then `target − n` augmented copies cycle round-robin over the class's
/// originals. Copy `j` of original `id` is named `id_aug{j}` and draws from
/// its own stream, so the result does not depend on iteration order.
pub fn augment_to_counts(train: &[LabeledImage], spec: &AugmentSpec) -> Result<Vec<LabeledImage>> {
    let mut out: Vec<LabeledImage> = train.to_vec();
    augment_to_counts_with(train, spec, |img| {
        out.push(img);
        Ok(())
    })?;
    Ok(out)
}

/// The augmented copies of [`augment_to_counts`] (originals excluded), handed
/// to `sink` one at a time instead of collected.
pub fn augment_to_counts_with(
    train: &[LabeledImage],
    spec: &AugmentSpec,
    mut sink: impl FnMut(LabeledImage) -> Result<()>,
) -> Result<()> {
    spec.validate()?;
    let targets = spec
        .target_counts
        .as_ref()
        .ok_or_else(|| Error::Config("augmentation needs target counts".into()))?;
    if targets.len() != NUM_CLASSES {
        return Err(Error::Config(format!(
            "need {NUM_CLASSES} target counts, got {}",
            targets.len()
        )));
    }
    let mut by_class: Vec<Vec<&LabeledImage>> = vec![Vec::new(); NUM_CLASSES];
    for img in train {
        by_class[img.label].push(img);
    }
    for (class, (originals, &target)) in by_class.iter().zip(targets).enumerate() {
        let n = originals.len();
        if target < n {
            return Err(Error::Config(format!(
                "class {class}: target {target} below original count {n}"
            )));
        }
        if n == 0 && target > 0 {
            return Err(Error::Data(format!("class {class} has no images to augment")));
        }
    }
    for (originals, &target) in by_class.iter().zip(targets) {
        let n = originals.len();
        for j in 0..target - n {
            let src = originals[j % n];
            let id = format!("{}_aug{}", src.source_id, j / n);
            let mut rng = Prng::derive(spec.seed, &id);
            let mut aug = augment_one(src, spec, &mut rng);
            aug.source_id = id;
            sink(aug)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, label: usize) -> LabeledImage {
        let mut rng = Prng::new(seed);
        let data = (0..9 * 7 * 3).map(|_| rng.next_f64()).collect();
        LabeledImage::new(Tensor::new(vec![9, 7, 3], data).unwrap(), label, format!("img{seed}")).unwrap()
    }

    #[test]
    fn zero_angle_no_flip_is_identity() {
        let img = image(1, 0);
        let spec = AugmentSpec {
            rotation_deg: (0.0, 0.0),
            flip_prob: 0.0,
            ..Default::default()
        };
        let out = augment_one(&img, &spec, &mut Prng::new(0));
        assert!(out.pixels.max_abs_diff(&img.pixels) < 1e-12);
        assert!(rotate(&img.pixels, 0.0).max_abs_diff(&img.pixels) < 1e-12);
    }

    #[test]
    fn constant_image_stays_constant() {
        let c = Tensor::full(&[11, 11, 3], 0.4);
        for a in [-20.0, -7.5, 13.0, 20.0] {
            assert!(rotate(&c, a).data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
        }
    }

    #[test]
    fn flip_is_involution() {
        let img = image(2, 0);
        assert_eq!(flip_horizontal(&flip_horizontal(&img.pixels)), img.pixels);
        assert_ne!(flip_horizontal(&img.pixels), img.pixels);
    }

    #[test]
    fn label_and_shape_preserved() {
        let spec = AugmentSpec::default();
        let mut rng = Prng::new(3);
        for s in 0..20 {
            let img = image(s, (s % 8) as usize);
            let out = augment_one(&img, &spec, &mut rng);
            assert_eq!(out.label, img.label);
            assert_eq!(out.pixels.shape(), img.pixels.shape());
        }
    }

    #[test]
    fn round_robin_counts() {
        let train: Vec<_> = (0..10).map(|s| image(s, 2)).collect();
        let mut targets = vec![0; 8];
        targets[2] = 35;
        let spec = AugmentSpec {
            target_counts: Some(targets),
            ..Default::default()
        };
        let out = augment_to_counts(&train, &spec).unwrap();
        assert_eq!(out.len(), 35);
        for t in &train {
            let copies = out
                .iter()
                .filter(|o| o.source_id.starts_with(&format!("{}_aug", t.source_id)))
                .count();
            assert!(copies == 2 || copies == 3, "{copies}");
        }
    }

    #[test]
    fn target_equal_to_original_adds_nothing() {
        let train: Vec<_> = (0..4).map(|s| image(s, 0)).collect();
        let mut targets = vec![0; 8];
        targets[0] = 4;
        let spec = AugmentSpec { target_counts: Some(targets), ..Default::default() };
        assert_eq!(augment_to_counts(&train, &spec).unwrap(), train);
    }

    #[test]
    fn target_below_original_is_error() {
        let train: Vec<_> = (0..4).map(|s| image(s, 0)).collect();
        let mut targets = vec![0; 8];
        targets[0] = 3;
        let spec = AugmentSpec { target_counts: Some(targets), ..Default::default() };
        assert!(augment_to_counts(&train, &spec).is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = AugmentSpec { rotation_deg: (5.0, -5.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentSpec { flip_prob: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
