//! Photometric perturbations for robustness runs: colour jitter, random
//! erasing, and additive Gaussian noise (or a spatial blur instead).

use image::{imageops, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("invalid perturbation config: {0}")]
    InvalidConfig(String),
}

/// What the final stage does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Additive zero-mean Gaussian noise, σ = `noise_sigma` of full range.
    #[default]
    Noise,
    /// Gaussian blur with spatial σ = `blur_sigma_px`.
    Blur,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub enabled: bool,
    /// Brightness factor drawn from U[1 − b, 1 + b].
    pub brightness: f64,
    /// Contrast factor drawn from U[1 − c, 1 + c].
    pub contrast: f64,
    pub erase_prob: f64,
    /// Erased area as a fraction of the image.
    pub erase_scale: [f64; 2],
    /// Erased aspect ratio (h / w), drawn log-uniformly.
    pub erase_ratio: [f64; 2],
    /// Noise σ as a fraction of the intensity range.
    pub noise_sigma: f64,
    pub mode: NoiseMode,
    pub blur_sigma_px: f64,
    /// Fresh draw every iteration; otherwise one draw per trial is reused.
    pub per_iteration: bool,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            brightness: 0.6,
            contrast: 0.4,
            erase_prob: 0.5,
            erase_scale: [0.02, 0.33],
            erase_ratio: [0.3, 3.3],
            noise_sigma: 0.05,
            mode: NoiseMode::Noise,
            blur_sigma_px: 1.0,
            per_iteration: true,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    /// All stages neutral.
    pub fn identity() -> Self {
        Self {
            enabled: true,
            brightness: 0.0,
            contrast: 0.0,
            erase_prob: 0.0,
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        let bad = |m: String| Err(PerturbError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.brightness) || !(0.0..=1.0).contains(&self.contrast) {
            return bad("brightness and contrast must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.erase_prob) {
            return bad(format!("erase_prob {} outside [0, 1]", self.erase_prob));
        }
        let [s0, s1] = self.erase_scale;
        if !(s0 > 0.0 && s0 <= s1 && s1 <= 1.0) {
            return bad(format!("erase_scale {:?} must satisfy 0 < lo ≤ hi ≤ 1", self.erase_scale));
        }
        let [r0, r1] = self.erase_ratio;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad(format!("erase_ratio {:?} must satisfy 0 < lo ≤ hi", self.erase_ratio));
        }
        if !(self.noise_sigma >= 0.0) || !(self.blur_sigma_px >= 0.0) {
            return bad("noise_sigma and blur_sigma_px must be non-negative".into());
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Rectangle `(x, y, w, h)` in pixels.
pub type EraseRect = (u32, u32, u32, u32);

/// Up to ten attempts at a rectangle that fits; `None` if all fail.
fn sample_erase_rect<R: Rng + ?Sized>(rng: &mut R, cfg: &PerturbationConfig, w: u32, h: u32) -> Option<EraseRect> {
    let area = (w * h) as f64;
    let (lr0, lr1) = (cfg.erase_ratio[0].ln(), cfg.erase_ratio[1].ln());
    for _ in 0..10 {
        let target = area * uniform(rng, cfg.erase_scale[0], cfg.erase_scale[1]);
        let aspect = uniform(rng, lr0, lr1).exp();
        let eh = (target * aspect).sqrt().round() as u32;
        let ew = (target / aspect).sqrt().round() as u32;
        if eh == 0 || ew == 0 || eh > h || ew > w {
            continue;
        }
        let x = rng.gen_range(0..=w - ew);
        let y = rng.gen_range(0..=h - eh);
        return Some((x, y, ew, eh));
    }
    None
}

/// Applies the configured stages in order: brightness, contrast, erase,
/// noise (or blur). Deterministic for a given rng state.
pub fn perturb<R: Rng + ?Sized>(image: &RgbImage, cfg: &PerturbationConfig, rng: &mut R) -> RgbImage {
    perturb_traced(image, cfg, rng).0
}

/// As [`perturb`], also returning the erased rectangle if any.
pub fn perturb_traced<R: Rng + ?Sized>(
    image: &RgbImage,
    cfg: &PerturbationConfig,
    rng: &mut R,
) -> (RgbImage, Option<EraseRect>) {
    if !cfg.enabled || image.width() == 0 || image.height() == 0 {
        return (image.clone(), None);
    }
    let (w, h) = image.dimensions();
    let mut px: Vec<f32> = image.as_raw().iter().map(|v| *v as f32 / 255.0).collect();

    let b = uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness).max(0.0) as f32;
    if b != 1.0 {
        px.iter_mut().for_each(|v| *v = (*v * b).clamp(0.0, 1.0));
    }

    let c = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast).max(0.0) as f32;
    if c != 1.0 {
        let n = (w * h) as f32;
        let mean = px
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .sum::<f32>()
            / n;
        px.iter_mut()
            .for_each(|v| *v = (c * *v + (1.0 - c) * mean).clamp(0.0, 1.0));
    }

    let mut erased = None;
    if cfg.erase_prob > 0.0 && rng.gen_bool(cfg.erase_prob) {
        if let Some((x0, y0, ew, eh)) = sample_erase_rect(rng, cfg, w, h) {
            for y in y0..y0 + eh {
                for x in x0..x0 + ew {
                    let i = 3 * (y * w + x) as usize;
                    for v in &mut px[i..i + 3] {
                        *v = rng.gen::<f32>();
                    }
                }
            }
            erased = Some((x0, y0, ew, eh));
        }
    }

    let quantize = |px: &[f32]| -> RgbImage {
        let raw = px.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        RgbImage::from_raw(w, h, raw).expect("buffer size matches")
    };
    let out = match cfg.mode {
        NoiseMode::Noise if cfg.noise_sigma > 0.0 => {
            let normal = Normal::new(0.0f32, cfg.noise_sigma as f32).expect("sigma validated");
            px.iter_mut()
                .for_each(|v| *v = (*v + normal.sample(rng)).clamp(0.0, 1.0));
            quantize(&px)
        }
        NoiseMode::Blur if cfg.blur_sigma_px > 0.0 => imageops::blur(&quantize(&px), cfg.blur_sigma_px as f32),
        _ => quantize(&px),
    };
    (out, erased)
}
