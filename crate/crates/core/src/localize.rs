//! Sliding-window damage localization: classify a resized crop around every
//! grid point, keep per-class probability maps, and threshold them into
//! rectangular regions.
//!
//! Grid point `(gy, gx)` sits at pixel `(gy·stride, gx·stride)`; the grid has
//! `ceil(H/stride) × ceil(W/stride)` points. Each crop is `window×window`,
//! centered on its grid point and shifted inward at the borders so it always
//! lies inside the image.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::{CLASS_NAMES, NO_DAMAGE};
use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::nn::Network;
use crate::tensor::{bilinear_resize, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub window: usize,
    pub resize_to: usize,
    pub stride: usize,
    pub threshold: f64,
    /// Classes turned into regions; all damage classes by default.
    pub classes: Vec<usize>,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            window: 100,
            resize_to: 224,
            stride: 10,
            threshold: 0.9,
            classes: (0..CLASS_NAMES.len()).filter(|&c| c != NO_DAMAGE).collect(),
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.resize_to == 0 {
            return Err(Error::Config("window, stride and resize_to must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Anything that maps a resized crop to class probabilities.
pub trait CropClassifier {
    fn classes(&self) -> usize;

    /// Side length the crop must be resized to.
    fn input_size(&self) -> usize;

    /// `window` is where the crop came from in the full image.
    fn classify(&self, crop: &Tensor, window: Rect) -> Result<Vec<f64>>;
}

impl CropClassifier for Network {
    fn classes(&self) -> usize {
        Network::classes(self)
    }

    fn input_size(&self) -> usize {
        self.input_shape()[0]
    }

    fn classify(&self, crop: &Tensor, _window: Rect) -> Result<Vec<f64>> {
        let mut shape = vec![1];
        shape.extend_from_slice(crop.shape());
        Ok(self.predict(&crop.clone().reshape(&shape)?)?.into_data())
    }
}

/// Ground-truth classifier for synthetic images: ignores pixels and reports
/// `p[class] = f`, `p[no_damage] = 1 − f` where `f` is the fraction of the
/// planted mask inside the crop window, provided `f ≥ min_coverage`;
/// otherwise all mass goes to no damage.
#[derive(Debug, Clone)]
pub struct MaskOracle {
    class: usize,
    classes: usize,
    input_size: usize,
    min_coverage: f64,
    width: usize,
    /// `(W+1)×(H+1)` summed-area table of the mask.
    integral: Vec<u64>,
}

impl MaskOracle {
    pub fn new(mask: &[bool], width: usize, class: usize, input_size: usize) -> Self {
        let height = mask.len() / width;
        let mut integral = vec![0u64; (width + 1) * (height + 1)];
        for y in 0..height {
            let mut row = 0;
            for x in 0..width {
                row += u64::from(mask[y * width + x]);
                integral[(y + 1) * (width + 1) + x + 1] = integral[y * (width + 1) + x + 1] + row;
            }
        }
        Self {
            class,
            classes: CLASS_NAMES.len(),
            input_size,
            min_coverage: 0.25,
            width,
            integral,
        }
    }

    fn count(&self, r: Rect) -> u64 {
        let w = self.width + 1;
        let at = |x: usize, y: usize| self.integral[y * w + x];
        at(r.right(), r.bottom()) + at(r.x, r.y) - at(r.x, r.bottom()) - at(r.right(), r.y)
    }

    /// Fraction of mask pixels inside `window`.
    pub fn coverage(&self, window: Rect) -> f64 {
        let total = *self.integral.last().unwrap();
        if total == 0 {
            return 0.0;
        }
        self.count(window) as f64 / total as f64
    }
}

impl CropClassifier for MaskOracle {
    fn classes(&self) -> usize {
        self.classes
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn classify(&self, _crop: &Tensor, window: Rect) -> Result<Vec<f64>> {
        let f = self.coverage(window);
        let mut p = vec![0.0; self.classes];
        if f >= self.min_coverage && self.class != NO_DAMAGE {
            p[self.class] = f;
            p[NO_DAMAGE] = 1.0 - f;
        } else {
            p[NO_DAMAGE] = 1.0;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub image_width: usize,
    pub image_height: usize,
    pub window: usize,
    pub stride: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    /// `values[class][gy·grid_width + gx]`.
    pub values: Vec<Vec<f64>>,
}

impl Heatmap {
    /// Source rectangle of the crop at a grid point.
    pub fn cell_window(&self, gy: usize, gx: usize) -> Rect {
        crop_window(
            self.image_width,
            self.image_height,
            self.window,
            gx * self.stride,
            gy * self.stride,
        )
    }

    pub fn get(&self, class: usize, gy: usize, gx: usize) -> f64 {
        self.values[class][gy * self.grid_width + gx]
    }

    /// Pixel position of the centroid of the grid points holding the
    /// class's maximum value.
    pub fn peak(&self, class: usize) -> (f64, f64, f64) {
        let v = &self.values[class];
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (i, _) in v.iter().enumerate().filter(|(_, &x)| x == max) {
            sx += ((i % self.grid_width) * self.stride) as f64;
            sy += ((i / self.grid_width) * self.stride) as f64;
            n += 1.0;
        }
        (sx / n, sy / n, max)
    }

    /// JSON with grid geometry and one float grid per class name.
    pub fn to_json(&self) -> String {
        let classes: serde_json::Map<String, serde_json::Value> = self
            .values
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let name = CLASS_NAMES.get(c).map_or_else(|| c.to_string(), |n| n.to_string());
                let rows: Vec<&[f64]> = v.chunks(self.grid_width).collect();
                (name, serde_json::json!(rows))
            })
            .collect();
        let doc = serde_json::json!({
            "image_width": self.image_width,
            "image_height": self.image_height,
            "window": self.window,
            "stride": self.stride,
            "grid_width": self.grid_width,
            "grid_height": self.grid_height,
            "classes": classes,
        });
        serde_json::to_string_pretty(&doc).expect("plain data serializes")
    }
}

fn crop_window(width: usize, height: usize, window: usize, cx: usize, cy: usize) -> Rect {
    let x = cx.saturating_sub(window / 2).min(width - window);
    let y = cy.saturating_sub(window / 2).min(height - window);
    Rect::new(x, y, window, window)
}

/// Copy `r` out of an `H×W×C` image and resize it to `size×size`.
pub fn crop_resized(image: &Tensor, r: Rect, size: usize) -> Result<Tensor> {
    let (w, c) = (image.shape()[1], image.shape()[2]);
    let mut data = Vec::with_capacity(r.area() * c);
    for y in r.y..r.bottom() {
        data.extend_from_slice(&image.data()[(y * w + r.x) * c..(y * w + r.right()) * c]);
    }
    let crop = Tensor::new(vec![r.h, r.w, c], data)?;
    if r.w == size && r.h == size {
        Ok(crop)
    } else {
        bilinear_resize(&crop, size, size)
    }
}

pub fn sliding_window_map(image: &Tensor, classifier: &dyn CropClassifier, config: &LocalizeConfig) -> Result<Heatmap> {
    config.validate()?;
    let (h, w) = match image.shape() {
        &[h, w, _] => (h, w),
        s => return Err(Error::Shape(format!("expected an H×W×C image, got {s:?}"))),
    };
    if h < config.window || w < config.window {
        return Err(Error::Shape(format!(
            "image {h}×{w} is smaller than the {0}×{0} window",
            config.window
        )));
    }
    if classifier.input_size() != config.resize_to {
        return Err(Error::Config(format!(
            "classifier takes {0}×{0} crops, resize_to is {1}",
            classifier.input_size(),
            config.resize_to
        )));
    }
    let k = classifier.classes();
    let (gw, gh) = (w.div_ceil(config.stride), h.div_ceil(config.stride));
    let mut values = vec![vec![0.0; gw * gh]; k];
    for gy in 0..gh {
        for gx in 0..gw {
            let r = crop_window(w, h, config.window, gx * config.stride, gy * config.stride);
            let crop = crop_resized(image, r, config.resize_to)?;
            let p = classifier.classify(&crop, r)?;
            if p.len() != k {
                return Err(Error::Shape(format!("classifier returned {} of {k} classes", p.len())));
            }
            for (c, v) in p.into_iter().enumerate() {
                values[c][gy * gw + gx] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Heatmap {
        image_width: w,
        image_height: h,
        window: config.window,
        stride: config.stride,
        grid_width: gw,
        grid_height: gh,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: Rect,
    pub class: usize,
    pub score: f64,
}

/// Per class (in `config.classes` order), group cells `≥ threshold` into
/// 4-connected components; each yields the union of its cells' crop windows
/// and its peak score. Components appear in row-major order of their first
/// cell.
pub fn threshold_regions(heatmap: &Heatmap, config: &LocalizeConfig) -> Vec<Region> {
    let (gw, gh) = (heatmap.grid_width, heatmap.grid_height);
    let mut out = Vec::new();
    for &class in &config.classes {
        let Some(v) = heatmap.values.get(class) else { continue };
        let hot: Vec<bool> = v.iter().map(|&p| p >= config.threshold).collect();
        let mut seen = vec![false; v.len()];
        for start in 0..v.len() {
            if !hot[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let mut bbox: Option<Rect> = None;
            let mut score = f64::NEG_INFINITY;
            while let Some(i) = queue.pop_front() {
                let (gy, gx) = (i / gw, i % gw);
                let r = heatmap.cell_window(gy, gx);
                bbox = Some(bbox.map_or(r, |b| b.union(&r)));
                score = score.max(v[i]);
                let mut push = |j: usize| {
                    if hot[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if gx > 0 {
                    push(i - 1);
                }
                if gx + 1 < gw {
                    push(i + 1);
                }
                if gy > 0 {
                    push(i - gw);
                }
                if gy + 1 < gh {
                    push(i + gw);
                }
            }
            out.push(Region {
                bbox: bbox.expect("component has a cell"),
                class,
                score,
            });
        }
    }
    out
}

/// Highest-scoring region; ties go to the earlier one.
pub fn top_region(regions: &[Region]) -> Option<&Region> {
    regions
        .iter()
        .fold(None, |best: Option<&Region>, r| match best {
            Some(b) if b.score >= r.score => Some(b),
            _ => Some(r),
        })
}

/// RGB per class, indexed by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[f64; 3]>,
}

impl Default for Palette {
    /// Glass break red, smash blue, scratch green; the rest distinct.
    fn default() -> Self {
        Self {
            colors: vec![
                [1.0, 1.0, 0.0], // bumper_dent: yellow
                [1.0, 0.5, 0.0], // door_dent: orange
                [1.0, 0.0, 0.0], // glass_break: red
                [0.0, 1.0, 1.0], // headlight_broken: cyan
                [1.0, 0.0, 1.0], // taillight_broken: magenta
                [0.0, 1.0, 0.0], // scratch: green
                [0.0, 0.0, 1.0], // smash: blue
                [1.0, 1.0, 1.0], // no_damage: white
            ],
        }
    }
}

/// Draw each region's 1-pixel rectangle border in its class colour. Regions
/// are drawn in order, so later borders cover earlier ones where they cross.
/// Gray images are promoted to RGB.
pub fn render_overlay(image: &Tensor, regions: &[Region], palette: &Palette) -> Result<Tensor> {
    let (h, w, c) = match image.shape() {
        &[h, w, c] if c == 1 || c == 3 => (h, w, c),
        s => return Err(Error::Shape(format!("overlay needs an H×W×1 or H×W×3 image, got {s:?}"))),
    };
    let mut out: Vec<f64> = if c == 3 {
        image.data().to_vec()
    } else {
        image.data().iter().flat_map(|&v| [v, v, v]).collect()
    };
    for r in regions {
        let b = r.bbox;
        if b.w == 0 || b.h == 0 || b.right() > w || b.bottom() > h {
            return Err(Error::Shape(format!("region {b:?} outside {w}×{h} image")));
        }
        let color = palette
            .colors
            .get(r.class)
            .copied()
            .ok_or_else(|| Error::Config(format!("no palette colour for class {}", r.class)))?;
        let mut paint = |x: usize, y: usize| {
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
        };
        for x in b.x..b.right() {
            paint(x, b.y);
            paint(x, b.bottom() - 1);
        }
        for y in b.y..b.bottom() {
            paint(b.x, y);
            paint(b.right() - 1, y);
        }
    }
    Tensor::new(vec![h, w, 3], out)
}

/// `class<TAB>x<TAB>y<TAB>w<TAB>h<TAB>score` lines with a header.
pub fn regions_to_tsv(regions: &[Region]) -> String {
    let mut out = String::from("class\tx\ty\tw\th\tscore\n");
    for r in regions {
        let name = CLASS_NAMES.get(r.class).map_or_else(|| r.class.to_string(), |n| n.to_string());
        out.push_str(&format!(
            "{name}\t{}\t{}\t{}\t{}\t{:.6}\n",
            r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.score
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(Vec<f64>, usize);

    impl CropClassifier for Constant {
        fn classes(&self) -> usize {
            self.0.len()
        }
        fn input_size(&self) -> usize {
            self.1
        }
        fn classify(&self, _: &Tensor, _: Rect) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn cfg(window: usize, stride: usize, resize_to: usize) -> LocalizeConfig {
        LocalizeConfig {
            window,
            stride,
            resize_to,
            ..Default::default()
        }
    }

    fn heatmap_from(values: Vec<f64>, gw: usize, gh: usize) -> Heatmap {
        let mut all = vec![vec![0.0; gw * gh]; 8];
        all[2] = values;
        Heatmap {
            image_width: gw * 10,
            image_height: gh * 10,
            window: 10,
            stride: 10,
            grid_width: gw,
            grid_height: gh,
            values: all,
        }
    }

    #[test]
    fn no_damage_classifier_gives_zero_maps() {
        let mut p = vec![0.0; 8];
        p[NO_DAMAGE] = 1.0;
        let img = Tensor::full(&[40, 40, 3], 0.5);
        let hm = sliding_window_map(&img, &Constant(p, 8), &cfg(20, 5, 8)).unwrap();
        assert_eq!((hm.grid_width, hm.grid_height), (8, 8));
        for c in 0..8 {
            let want = if c == NO_DAMAGE { 1.0 } else { 0.0 };
            assert!(hm.values[c].iter().all(|&v| v == want));
        }
        assert!(threshold_regions(&hm, &LocalizeConfig::default()).is_empty());
    }

    #[test]
    fn stride_equal_to_image_is_one_cell() {
        let img = Tensor::full(&[30, 30, 1], 0.1);
        let hm = sliding_window_map(&img, &Constant(vec![0.5, 0.5], 6), &cfg(10, 30, 6)).unwrap();
        assert_eq!((hm.grid_width, hm.grid_height), (1, 1));
        assert_eq!(hm.cell_window(0, 0), Rect::new(0, 0, 10, 10));
    }

    #[test]
    fn errors() {
        let img = Tensor::full(&[30, 30, 1], 0.1);
        let c = Constant(vec![1.0], 6);
        assert!(sliding_window_map(&img, &c, &cfg(31, 5, 6)).is_err());
        assert!(sliding_window_map(&img, &c, &cfg(10, 5, 7)).is_err());
        let bad = LocalizeConfig { threshold: 0.0, ..cfg(10, 5, 6) };
        assert!(sliding_window_map(&img, &c, &bad).is_err());
    }

    #[test]
    fn windows_clamp_inside() {
        let hm = Heatmap { image_width: 50, image_height: 40, ..heatmap_from(vec![0.0; 1], 1, 1) };
        let hm = Heatmap { window: 20, stride: 7, grid_width: 8, grid_height: 6, ..hm };
        assert_eq!(hm.cell_window(0, 0), Rect::new(0, 0, 20, 20));
        assert_eq!(hm.cell_window(5, 7), Rect::new(30, 20, 20, 20));
        assert_eq!(hm.cell_window(2, 3), Rect::new(11, 4, 20, 20));
    }

    #[test]
    fn thresholding() {
        #[rustfmt::skip]
        let v = vec![
            0.95, 0.0, 0.0, 0.0,
            0.92, 0.0, 0.0, 0.97,
            0.0,  0.0, 0.91, 0.93,
        ];
        let hm = heatmap_from(v, 4, 3);
        let regions = threshold_regions(&hm, &LocalizeConfig::default());
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].bbox, Rect::new(0, 0, 10, 15));
        assert_eq!(regions[0].score, 0.95);
        assert_eq!(regions[1].bbox, Rect::new(15, 5, 20, 20));
        assert_eq!(top_region(&regions).unwrap().score, 0.97);
        let high = LocalizeConfig { threshold: 0.99, ..Default::default() };
        assert!(threshold_regions(&hm, &high).is_empty());
    }

    #[test]
    fn single_hot_cell_is_one_window() {
        let mut v = vec![0.0; 9];
        v[4] = 0.9;
        let hm = heatmap_from(v, 3, 3);
        let regions = threshold_regions(&hm, &LocalizeConfig::default());
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].bbox, hm.cell_window(1, 1));
    }

    #[test]
    fn overlay_borders() {
        let img = Tensor::full(&[20, 30, 3], 0.5);
        let palette = Palette::default();
        assert_eq!(render_overlay(&img, &[], &palette).unwrap(), img);
        let r = Region { bbox: Rect::new(3, 4, 10, 6), class: 2, score: 1.0 };
        let out = render_overlay(&img, &[r], &palette).unwrap();
        let changed = (0..20 * 30)
            .filter(|i| out.data()[i * 3..i * 3 + 3] != img.data()[i * 3..i * 3 + 3])
            .count();
        assert_eq!(changed, 2 * 10 + 2 * 6 - 4);
        assert_eq!(out.get(&[4, 3, 0]), 1.0);
        assert_eq!(out.get(&[4, 3, 1]), 0.0);

        let r2 = Region { bbox: Rect::new(8, 2, 10, 10), class: 6, score: 1.0 };
        let both = render_overlay(&img, &[r, r2], &palette).unwrap();
        assert_eq!(both.get(&[9, 3, 0]), 1.0); // left edge of the red box
        assert_eq!(both.get(&[2, 10, 2]), 1.0); // top edge of the blue box
        let oob = Region { bbox: Rect::new(25, 0, 10, 5), class: 0, score: 1.0 };
        assert!(render_overlay(&img, &[oob], &palette).is_err());
    }

    #[test]
    fn oracle_coverage() {
        let mut mask = vec![false; 10 * 10];
        for y in 2..4 {
            for x in 2..6 {
                mask[y * 10 + x] = true;
            }
        }
        let o = MaskOracle::new(&mask, 10, 5, 4);
        assert_eq!(o.coverage(Rect::new(0, 0, 10, 10)), 1.0);
        assert_eq!(o.coverage(Rect::new(0, 0, 4, 10)), 0.5);
        let p = o.classify(&Tensor::zeros(&[4, 4, 1]), Rect::new(0, 0, 3, 3)).unwrap();
        assert_eq!(p[NO_DAMAGE], 1.0);
        let p = o.classify(&Tensor::zeros(&[4, 4, 1]), Rect::new(0, 0, 4, 4)).unwrap();
        assert_eq!((p[5], p[NO_DAMAGE]), (0.5, 0.5));
    }

    #[test]
    fn regions_tsv() {
        let r = Region { bbox: Rect::new(1, 2, 3, 4), class: 5, score: 0.95 };
        assert_eq!(regions_to_tsv(&[r]), "class\tx\ty\tw\th\tscore\nscratch\t1\t2\t3\t4\t0.950000\n");
    }
}
