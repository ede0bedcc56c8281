//! Procedural damage images standing in for a labeled photo corpus.
//!
//! Each image is a painted "panel" (base colour, vertical lighting gradient,
//! fine grain) with one class-specific overlay whose footprint spans 36–45% of
//! the image side in each direction:
//!
//! | class            | overlay                                          |
//! |------------------|--------------------------------------------------|
//! | bumper_dent      | shaded dark ellipse, lower band                  |
//! | door_dent        | shaded dark ellipse, upper band                  |
//! | glass_break      | bright radial crack web                          |
//! | headlight_broken | dark lamp cavity with shards, left side          |
//! | taillight_broken | dark red lamp cavity with shards, right side     |
//! | scratch          | thin bright zig-zag polyline                     |
//! | smash            | irregular blob of high-contrast crumple noise    |
//! | no_damage        | nothing                                          |
//!
//! Every modified pixel is recorded in a mask; its bounding box is the ground
//! truth used by the localization checks.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use crate::data::manifest::{self, DatasetManifest, ManifestEntry, Split};
use crate::data::{LabeledImage, CLASS_NAMES, NO_DAMAGE, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const MIN_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub image: LabeledImage,
    /// Row-major `size×size` overlay mask.
    pub mask: Vec<bool>,
    pub bbox: Option<Rect>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: DatasetManifest,
    pub images: Vec<SynthImage>,
}

struct Canvas {
    size: usize,
    px: Vec<[f64; 3]>,
    mask: Vec<bool>,
}

impl Canvas {
    fn background(size: usize, rng: &mut Prng) -> Self {
        let base = [rng.uniform(0.2, 0.75), rng.uniform(0.2, 0.75), rng.uniform(0.2, 0.75)];
        let tilt = rng.uniform(-0.3, 0.3);
        let mut px = Vec::with_capacity(size * size);
        for y in 0..size {
            let light = 1.0 + tilt * (y as f64 / size as f64 - 0.5);
            for _ in 0..size {
                let grain = rng.uniform(-0.03, 0.03);
                px.push(base.map(|c| (c * light + grain).clamp(0.0, 1.0)));
            }
        }
        Self {
            size,
            px,
            mask: vec![false; size * size],
        }
    }

    fn set(&mut self, x: usize, y: usize, f: impl FnOnce([f64; 3]) -> [f64; 3]) {
        let i = y * self.size + x;
        self.px[i] = f(self.px[i]).map(|c| c.clamp(0.0, 1.0));
        self.mask[i] = true;
    }

    /// Pixel rows/cols overlapping `[lo, hi]`, clipped to the canvas.
    fn span(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = lo.floor().max(0.0) as usize;
        let b = (hi.ceil().max(0.0) as usize + 1).min(self.size);
        a..b.max(a)
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, f: impl Fn([f64; 3], f64) -> [f64; 3]) {
        for y in self.span(cy - ry, cy + ry) {
            for x in self.span(cx - rx, cx + rx) {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let r2 = dx * dx + dy * dy;
                if r2 <= 1.0 {
                    self.set(x, y, |p| f(p, r2));
                }
            }
        }
    }

    fn segments(&mut self, pts: &[(f64, f64)], half_width: f64, color: [f64; 3]) {
        for seg in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
            let (lo_x, hi_x) = (x0.min(x1) - half_width, x0.max(x1) + half_width);
            let (lo_y, hi_y) = (y0.min(y1) - half_width, y0.max(y1) + half_width);
            for y in self.span(lo_y, hi_y) {
                for x in self.span(lo_x, hi_x) {
                    if segment_distance(x as f64, y as f64, seg[0], seg[1]) <= half_width {
                        self.set(x, y, |_| color);
                    }
                }
            }
        }
    }

    fn into_tensor(self) -> (Tensor, Vec<bool>) {
        let n = self.size;
        let data = self.px.into_iter().flatten().collect();
        (Tensor::new(vec![n, n, 3], data).expect("square canvas"), self.mask)
    }
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

/// Render one image of `class`. Deterministic in `(seed, id)`.
pub fn synth_image(class: usize, size: usize, id: &str, seed: u64) -> Result<SynthImage> {
    if size < MIN_SIZE {
        return Err(Error::Config(format!("synthetic images need size ≥ {MIN_SIZE}, got {size}")));
    }
    if class >= NUM_CLASSES {
        return Err(Error::Label {
            label: class,
            classes: NUM_CLASSES,
        });
    }
    let mut rng = Prng::derive(seed, id);
    let mut c = Canvas::background(size, &mut rng);
    let s = size as f64;
    let ew = rng.uniform(0.36, 0.45) * s;
    let eh = rng.uniform(0.36, 0.45) * s;
    let hw = (s / 100.0).max(0.6);

    match class {
        0 | 1 => {
            let cx = rng.uniform(0.35, 0.65) * s;
            let cy = if class == 0 { rng.uniform(0.70, 0.74) } else { rng.uniform(0.26, 0.30) } * s;
            c.ellipse(cx, cy, ew / 2.0, eh / 2.0, |p, r2| p.map(|v| v * (0.3 + 0.3 * r2)));
        }
        2 => {
            let (rx, ry) = (ew / 2.0, eh / 2.0);
            let cx = rng.uniform(rx + 1.0, s - rx - 1.0);
            let cy = rng.uniform(ry + 1.0, s - ry - 1.0);
            let rays = 6 + rng.below(4);
            let phase = rng.uniform(0.0, TAU);
            let tips: Vec<(f64, f64, f64)> = (0..rays)
                .map(|k| {
                    let a = phase + TAU * (k as f64 + rng.uniform(-0.2, 0.2)) / rays as f64;
                    (a.cos(), a.sin(), rng.uniform(0.8, 1.0))
                })
                .collect();
            let color = [0.92, 0.96, 1.0];
            for &(ux, uy, reach) in &tips {
                c.segments(&[(cx, cy), (cx + ux * rx * reach, cy + uy * ry * reach)], hw, color);
            }
            let mut ring: Vec<(f64, f64)> =
                tips.iter().map(|&(ux, uy, _)| (cx + 0.5 * ux * rx, cy + 0.5 * uy * ry)).collect();
            ring.push(ring[0]);
            c.segments(&ring, hw, color);
        }
        3 | 4 => {
            let cx = if class == 3 { rng.uniform(0.24, 0.30) } else { rng.uniform(0.70, 0.76) } * s;
            let cy = rng.uniform(0.42, 0.58) * s;
            let (fill, shard) = if class == 3 {
                ([0.06, 0.06, 0.08], [0.9, 0.9, 0.85])
            } else {
                ([0.30, 0.03, 0.03], [0.9, 0.5, 0.5])
            };
            let (x0, y0) = (cx - ew / 2.0, cy - eh / 2.0);
            for y in c.span(y0, y0 + eh - 1.0) {
                for x in c.span(x0, x0 + ew - 1.0) {
                    let color = if rng.bernoulli(0.08) { shard } else { fill };
                    c.set(x, y, |_| color);
                }
            }
        }
        5 => {
            let x0 = rng.uniform(1.0, s - ew - 1.0);
            let y0 = rng.uniform(1.0, s - eh - 1.0);
            let (start, end) = if rng.bernoulli(0.5) {
                ((x0, y0), (x0 + ew, y0 + eh))
            } else {
                ((x0, y0 + eh), (x0 + ew, y0))
            };
            let pts: Vec<(f64, f64)> = (0..=4)
                .map(|i| {
                    let t = i as f64 / 4.0;
                    let jitter = if i == 0 || i == 4 { 0.0 } else { rng.uniform(-0.12, 0.12) };
                    let px = start.0 + t * (end.0 - start.0) + jitter * ew;
                    let py = start.1 + t * (end.1 - start.1) - jitter * eh;
                    (px.clamp(0.0, s - 1.0), py.clamp(0.0, s - 1.0))
                })
                .collect();
            let g = rng.uniform(0.85, 0.95);
            c.segments(&pts, hw, [g, g, g]);
        }
        6 => {
            let (rx, ry) = (ew / 2.0, eh / 2.0);
            let cx = rng.uniform(rx + 1.0, s - rx - 1.0);
            let cy = rng.uniform(ry + 1.0, s - ry - 1.0);
            let (lobes, phase) = (3 + rng.below(4), rng.uniform(0.0, TAU));
            for y in c.span(cy - ry, cy + ry) {
                for x in c.span(cx - rx, cx + rx) {
                    let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                    let edge = 0.85 + 0.15 * (lobes as f64 * dy.atan2(dx) + phase).sin();
                    if (dx * dx + dy * dy).sqrt() <= edge {
                        let n = rng.next_f64();
                        c.set(x, y, |p| p.map(|v| 0.15 * v + 0.85 * n));
                    }
                }
            }
        }
        _ => {}
    }

    let (pixels, mask) = c.into_tensor();
    let bbox = Rect::bounding(&mask, size);
    debug_assert_eq!(bbox.is_none(), class == NO_DAMAGE);
    Ok(SynthImage {
        image: LabeledImage::new(pixels, class, id)?,
        mask,
        bbox,
    })
}

pub fn synth_id(class: usize, index: usize) -> String {
    format!("{}_{index:05}", CLASS_NAMES[class])
}

/// `n_per_class` images of every class; all entries start unassigned.
pub fn synth_dataset(n_per_class: usize, size: usize, seed: u64) -> Result<SynthCorpus> {
    synth_counts(&[n_per_class; NUM_CLASSES], size, seed)
}

/// Like [`synth_dataset`] with a separate count per class.
pub fn synth_counts(counts: &[usize], size: usize, seed: u64) -> Result<SynthCorpus> {
    if counts.len() != NUM_CLASSES {
        return Err(Error::Config(format!("need {NUM_CLASSES} class counts")));
    }
    let mut images = Vec::new();
    let mut entries = Vec::new();
    for (class, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let id = synth_id(class, i);
            images.push(synth_image(class, size, &id, seed)?);
            entries.push(ManifestEntry {
                id,
                class,
                split: Split::Unassigned,
            });
        }
    }
    Ok(SynthCorpus {
        manifest: DatasetManifest::new(entries),
        images,
    })
}

/// Label-free images cycling through all classes, for autoencoder pretraining.
pub fn synth_unlabeled(count: usize, size: usize, seed: u64) -> Result<Vec<Tensor>> {
    (0..count)
        .map(|i| synth_image(i % NUM_CLASSES, size, &format!("unlabeled_{i:05}"), seed).map(|s| s.image.pixels))
        .collect()
}

impl SynthCorpus {
    pub fn labeled(&self) -> Vec<LabeledImage> {
        self.images.iter().map(|s| s.image.clone()).collect()
    }

    pub fn boxes(&self) -> BTreeMap<String, Rect> {
        self.images
            .iter()
            .filter_map(|s| s.bbox.map(|b| (s.image.source_id.clone(), b)))
            .collect()
    }

    /// Images, `manifest.tsv` and `boxes.tsv` under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        manifest::write_images(root, &self.manifest, &self.labeled())?;
        self.manifest.save(root)?;
        let path = root.join(manifest::BOXES_FILE);
        std::fs::write(&path, manifest::boxes_to_tsv(&self.boxes())).map_err(|e| Error::io(&path, e))
    }
}
