//! Browser bindings for three operations on synthetic damage images:
//! rendering a sample, augmenting it, and localizing its planted damage with
//! a sliding-window mask oracle.
//!
//! Images cross the boundary as RGBA bytes, row-major, ready for `ImageData`.

use damage_core::data::augment::{augment_one, AugmentSpec};
use damage_core::data::pnm::to_byte;
use damage_core::data::{synth_image, SynthImage, CLASS_NAMES};
use damage_core::localize::{
    regions_to_tsv, render_overlay, sliding_window_map, threshold_regions, LocalizeConfig, MaskOracle, Palette,
};
use damage_core::{Prng, Result, Tensor};
use wasm_bindgen::prelude::*;

/// Side length the oracle resizes crops to. It ignores pixels, so small is fine.
const ORACLE_INPUT: usize = 16;

pub fn rgba(image: &Tensor) -> Vec<u8> {
    let c = image.shape()[2];
    image
        .data()
        .chunks_exact(c)
        .flat_map(|px| {
            let (r, g, b) = if c == 1 { (px[0], px[0], px[0]) } else { (px[0], px[1], px[2]) };
            [to_byte(r), to_byte(g), to_byte(b), 255]
        })
        .collect()
}

fn sample(class: usize, size: usize, seed: u64) -> Result<SynthImage> {
    synth_image(class, size, &format!("demo_{class}_{seed}"), seed)
}

pub fn synth_rgba(class: usize, size: usize, seed: u64) -> Result<Vec<u8>> {
    Ok(rgba(&sample(class, size, seed)?.image.pixels))
}

pub fn augment_rgba(
    class: usize,
    size: usize,
    seed: u64,
    augment_seed: u64,
    rotation_min: f64,
    rotation_max: f64,
    flip_prob: f64,
) -> Result<Vec<u8>> {
    let spec = AugmentSpec {
        rotation_deg: (rotation_min, rotation_max),
        flip_prob,
        ..Default::default()
    };
    spec.validate()?;
    let img = sample(class, size, seed)?.image;
    let out = augment_one(&img, &spec, &mut Prng::new(augment_seed));
    Ok(rgba(&out.pixels))
}

/// Overlay, heatmap of the planted class, and detected regions.
#[wasm_bindgen]
pub struct Localized {
    overlay: Vec<u8>,
    heatmap: Vec<f64>,
    grid_width: usize,
    grid_height: usize,
    regions: String,
}

#[wasm_bindgen]
impl Localized {
    pub fn overlay(&self) -> Vec<u8> {
        self.overlay.clone()
    }

    /// Row-major `grid_height × grid_width` probabilities for the planted class.
    pub fn heatmap(&self) -> Vec<f64> {
        self.heatmap.clone()
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    /// Tab-separated `class x y w h score` rows with a header line.
    pub fn regions(&self) -> String {
        self.regions.clone()
    }
}

pub fn localize_sample(
    class: usize,
    size: usize,
    seed: u64,
    window: usize,
    stride: usize,
    threshold: f64,
) -> Result<Localized> {
    let synth = sample(class, size, seed)?;
    let oracle = MaskOracle::new(&synth.mask, size, class, ORACLE_INPUT);
    let config = LocalizeConfig {
        window,
        resize_to: ORACLE_INPUT,
        stride,
        threshold,
        ..Default::default()
    };
    let pixels = &synth.image.pixels;
    let map = sliding_window_map(pixels, &oracle, &config)?;
    let regions = threshold_regions(&map, &config);
    let overlay = render_overlay(pixels, &regions, &Palette::default())?;
    Ok(Localized {
        overlay: rgba(&overlay),
        heatmap: map.values[class].clone(),
        grid_width: map.grid_width,
        grid_height: map.grid_height,
        regions: regions_to_tsv(&regions),
    })
}

fn js(e: damage_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = classNames)]
pub fn class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

#[wasm_bindgen(js_name = synth)]
pub fn synth_js(class: usize, size: usize, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
    synth_rgba(class, size, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = augment)]
pub fn augment_js(
    class: usize,
    size: usize,
    seed: u32,
    augment_seed: u32,
    rotation_min: f64,
    rotation_max: f64,
    flip_prob: f64,
) -> std::result::Result<Vec<u8>, JsError> {
    augment_rgba(class, size, seed.into(), augment_seed.into(), rotation_min, rotation_max, flip_prob).map_err(js)
}

#[wasm_bindgen(js_name = localize)]
pub fn localize_js(
    class: usize,
    size: usize,
    seed: u32,
    window: usize,
    stride: usize,
    threshold: f64,
) -> std::result::Result<Localized, JsError> {
    localize_sample(class, size, seed.into(), window, stride, threshold).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_rgba_and_deterministic() {
        let a = synth_rgba(2, 64, 9).unwrap();
        assert_eq!(a.len(), 64 * 64 * 4);
        assert!(a.chunks_exact(4).all(|px| px[3] == 255));
        assert_eq!(a, synth_rgba(2, 64, 9).unwrap());
    }

    #[test]
    fn augment_without_rotation_or_flip_is_identity() {
        let plain = synth_rgba(5, 48, 3).unwrap();
        assert_eq!(augment_rgba(5, 48, 3, 1, 0.0, 0.0, 0.0).unwrap(), plain);
        assert!(augment_rgba(5, 48, 3, 1, 30.0, 10.0, 0.5).is_err());
    }

    #[test]
    fn localize_finds_planted_damage() {
        let out = localize_sample(6, 128, 4, 40, 8, 0.5).unwrap();
        assert_eq!(out.overlay().len(), 128 * 128 * 4);
        assert_eq!(out.heatmap().len(), out.grid_width() * out.grid_height());
        let tsv = out.regions();
        let rows: Vec<&str> = tsv.lines().skip(1).collect();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.starts_with("smash\t")));
    }
}
