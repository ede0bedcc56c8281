//! Corpus description, image I/O, splitting, augmentation and the synthetic
//! damage-image generator.

pub mod augment;
pub mod manifest;
pub mod pnm;
pub mod split;
pub mod synth;

pub use augment::{augment_one, augment_to_counts, augment_to_counts_with, AugmentSpec};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use split::stratified_split;
pub use synth::{synth_dataset, synth_image, synth_unlabeled, SynthCorpus, SynthImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The eight categories, in label order. Seven damage types plus no damage.
pub const CLASS_NAMES: [&str; 8] = [
    "bumper_dent",
    "door_dent",
    "glass_break",
    "headlight_broken",
    "taillight_broken",
    "scratch",
    "smash",
    "no_damage",
];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// Label of the no-damage class.
pub const NO_DAMAGE: usize = 7;

pub fn class_index(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&n| n == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `H×W×C`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub label: usize,
    pub source_id: String,
}

impl LabeledImage {
    pub fn new(pixels: Tensor, label: usize, source_id: impl Into<String>) -> Result<Self> {
        if pixels.shape().len() != 3 {
            return Err(Error::Shape(format!(
                "image must be H×W×C, got {:?}",
                pixels.shape()
            )));
        }
        if label >= NUM_CLASSES {
            return Err(Error::Label {
                label,
                classes: NUM_CLASSES,
            });
        }
        if pixels.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            label,
            source_id: source_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// Stack same-shaped images into a `[B, H, W, C]` batch.
pub fn stack(images: &[&Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Data("cannot stack an empty batch".into()))?;
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(images.len() * first.len());
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "batch mixes {:?} and {:?}",
                first.shape(),
                img.shape()
            )));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(shape, data)
}
