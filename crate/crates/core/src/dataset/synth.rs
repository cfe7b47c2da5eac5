//! Synthetic vehicle-like images with planted model and identity cues.
//!
//! Every image shares one body layout. The model is encoded by an oriented
//! sinusoidal texture inside `model_cue_region` (the "lower face"); the identity
//! by a block-code decal inside `identity_cue_region` (the "windshield").
//! Per-image nuisance is a random translation plus additive Gaussian noise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::image::{Image, LabeledImage};
use crate::mining::Rect;
use crate::util::rng_for;

const DECAL_COLS: usize = 6;
const DECAL_ROWS: usize = 2;

const STREAM_MODEL: u64 = 1 << 32;
const STREAM_IDENTITY: u64 = 2 << 32;
const STREAM_IMAGE: u64 = 3 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_models: usize,
    pub identities_per_model: usize,
    pub images_per_identity: usize,
    /// Side of the square output images, in pixels.
    pub image_size: usize,
    pub model_cue_region: Rect,
    pub identity_cue_region: Rect,
    pub noise_sigma: f64,
    pub jitter_px: usize,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_models: 10,
            identities_per_model: 5,
            images_per_identity: 6,
            image_size: super::CANONICAL_SIZE,
            model_cue_region: Rect {
                x0: 0.125,
                y0: 0.625,
                x1: 0.875,
                y1: 0.875,
            },
            identity_cue_region: Rect {
                x0: 0.3125,
                y0: 0.1875,
                x1: 0.6875,
                y1: 0.375,
            },
            noise_sigma: 0.02,
            jitter_px: 2,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_models == 0 || self.identities_per_model == 0 || self.images_per_identity == 0 {
            return Err(Error::InvalidConfig(
                "num_models, identities_per_model and images_per_identity must be >= 1".into(),
            ));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidConfig("image_size must be >= 8".into()));
        }
        for r in [&self.model_cue_region, &self.identity_cue_region] {
            Rect::new(r.x0, r.y0, r.x1, r.y1)?;
        }
        if self.model_cue_region.overlaps(&self.identity_cue_region) {
            return Err(Error::InvalidConfig(
                "model_cue_region and identity_cue_region must not overlap".into(),
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        let codes = (1usize << (DECAL_COLS * DECAL_ROWS)) - 2;
        if self.identities_per_model > codes {
            return Err(Error::InvalidConfig(format!(
                "at most {codes} identities per model are encodable"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTruth {
    pub model_id: u64,
    pub orientation: f64,
    /// Cycles per pixel at the configured image size.
    pub frequency: f64,
    pub phase: f64,
    pub tint: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityTruth {
    pub identity_id: u64,
    pub model_id: u64,
    /// Decal block code, row-major bits over a 6×2 grid.
    pub code: u32,
    pub color: [f32; 3],
}

/// Where the cues were planted and what they encode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model_cue_region: Rect,
    pub identity_cue_region: Rect,
    pub models: Vec<ModelTruth>,
    pub identities: Vec<IdentityTruth>,
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let models: Vec<ModelTruth> = (0..config.num_models)
        .map(|m| model_truth(config, m))
        .collect();
    let mut identities = Vec::with_capacity(config.num_models * config.identities_per_model);
    for m in 0..config.num_models {
        let mut used = std::collections::HashSet::new();
        for i in 0..config.identities_per_model {
            let identity_id = (m * config.identities_per_model + i) as u64;
            let mut rng = rng_for(config.rng_seed, STREAM_IDENTITY | identity_id);
            let all = (1u32 << (DECAL_COLS * DECAL_ROWS)) - 1;
            let code = loop {
                let c = rng.random_range(1..all);
                if used.insert(c) {
                    break c;
                }
            };
            let color = [
                rng.random_range(0.55f32..1.0),
                rng.random_range(0.55f32..1.0),
                rng.random_range(0.55f32..1.0),
            ];
            identities.push(IdentityTruth {
                identity_id,
                model_id: m as u64,
                code,
                color,
            });
        }
    }

    let mut images = Vec::with_capacity(identities.len() * config.images_per_identity);
    let mut source_id = 0u64;
    for ident in &identities {
        let clean = render_clean(config, &models[ident.model_id as usize], ident);
        for _ in 0..config.images_per_identity {
            let mut rng = rng_for(config.rng_seed, STREAM_IMAGE | source_id);
            let pixels = apply_nuisance(&clean, config, &mut rng);
            images.push(LabeledImage {
                pixels,
                model_id: ident.model_id,
                identity_id: ident.identity_id,
                source_id,
            });
            source_id += 1;
        }
    }

    let truth = GroundTruth {
        model_cue_region: config.model_cue_region,
        identity_cue_region: config.identity_cue_region,
        models,
        identities,
    };
    Ok((Dataset::new(images)?, truth))
}

fn model_truth(config: &SynthConfig, m: usize) -> ModelTruth {
    let mut rng = rng_for(config.rng_seed, STREAM_MODEL | m as u64);
    let scale = super::CANONICAL_SIZE as f64 / config.image_size as f64;
    let orientation = PI * (m as f64 + rng.random_range(0.0..0.5)) / config.num_models as f64;
    ModelTruth {
        model_id: m as u64,
        orientation,
        frequency: rng.random_range(1.0 / 14.0..1.0 / 6.0) * scale,
        phase: rng.random_range(0.0..2.0 * PI),
        tint: [
            rng.random_range(0.45f32..1.0),
            rng.random_range(0.45f32..1.0),
            rng.random_range(0.45f32..1.0),
        ],
    }
}

fn render_clean(config: &SynthConfig, model: &ModelTruth, ident: &IdentityTruth) -> Image {
    let s = config.image_size;
    let px = |v: f64| (v * s as f64).round() as usize;
    let mut img = Image::filled(s, s, [0.22, 0.22, 0.24]);

    fill(&mut img, px(0.0625), px(0.125), px(0.9375), px(0.9375), [0.62, 0.62, 0.6]);
    fill(&mut img, px(0.1875), px(0.125), px(0.8125), px(0.4375), [0.3, 0.32, 0.36]);

    let r = &config.model_cue_region;
    let (cos_t, sin_t) = (model.orientation.cos(), model.orientation.sin());
    for y in px(r.y0)..px(r.y1) {
        for x in px(r.x0)..px(r.x1) {
            let t = x as f64 * cos_t + y as f64 * sin_t;
            let v = 0.5 + 0.4 * (2.0 * PI * model.frequency * t + model.phase).sin();
            img.set(x, y, model.tint.map(|c| c * v as f32));
        }
    }

    let r = &config.identity_cue_region;
    let (x0, y0, x1, y1) = (px(r.x0), px(r.y0), px(r.x1), px(r.y1));
    let dark = [0.08f32, 0.08, 0.1];
    for y in y0..y1 {
        for x in x0..x1 {
            let col = (x - x0) * DECAL_COLS / (x1 - x0).max(1);
            let row = (y - y0) * DECAL_ROWS / (y1 - y0).max(1);
            let bit = (ident.code >> (row * DECAL_COLS + col)) & 1;
            img.set(x, y, if bit == 1 { ident.color } else { dark });
        }
    }
    img
}

fn fill(img: &mut Image, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [f32; 3]) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.set(x, y, rgb);
        }
    }
}

fn apply_nuisance(clean: &Image, config: &SynthConfig, rng: &mut crate::util::Rng) -> Image {
    let j = config.jitter_px as i64;
    let (dx, dy) = if j > 0 {
        (rng.random_range(-j..=j), rng.random_range(-j..=j))
    } else {
        (0, 0)
    };
    let (w, h) = (clean.width() as i64, clean.height() as i64);
    let mut out = Image::new(clean.width(), clean.height());
    let noise = (config.noise_sigma > 0.0)
        .then(|| Normal::new(0.0f64, config.noise_sigma).expect("sigma validated"));
    for y in 0..h {
        for x in 0..w {
            let sx = (x - dx).clamp(0, w - 1) as usize;
            let sy = (y - dy).clamp(0, h - 1) as usize;
            let mut p = clean.get(sx, sy);
            if let Some(n) = &noise {
                for c in p.iter_mut() {
                    *c = (*c as f64 + n.sample(rng)).clamp(0.0, 1.0) as f32;
                }
            }
            out.set(x as usize, y as usize, p);
        }
    }
    out
}

/// Writes `img_NNNNNN.png` files, `manifest.csv` and `ground_truth.json` into `dir`.
pub fn export_synthetic(dataset: &Dataset, truth: &GroundTruth, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest_path)?;
    writer.write_record(["path", "model_id", "identity_id"])?;
    for img in dataset.images() {
        let name = format!("img_{:06}.png", img.source_id);
        img.pixels.save_png(&dir.join(&name))?;
        writer.write_record([
            name,
            img.model_id.to_string(),
            img.identity_id.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    let truth_path = dir.join("ground_truth.json");
    let json = serde_json::to_vec_pretty(truth).map_err(|e| Error::json(&truth_path, e))?;
    fs::write(&truth_path, json).map_err(|e| Error::io(&truth_path, e))?;
    Ok(())
}
