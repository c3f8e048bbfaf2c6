//! Deterministic synthetic benchmark generator: piecewise-constant label
//! images with smooth region boundaries, region-colored RGB images with
//! additive noise, and coarse one-hot score maps whose argmax is corrupted
//! by per-cell flips.
//!
//! Scores live on the 1/8-resolution grid and the ground truth is defined
//! as the argmax of the bilinearly x8-upsampled *clean* scores, so with
//! zero noise the standard upsample-then-argmax pipeline reproduces the
//! ground truth exactly, and every unrefined error is traceable to a flip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atrous::bilinear_upsample;
use crate::error::{Error, Result};
use crate::tensor::{argmax_channels, Image, LabelMap, Tensor3};

/// Upsampling factor between the score grid and the image grid.
pub const SCORE_STRIDE: usize = 8;

/// Logit magnitude of the one-hot score maps.
pub const SCORE_AMPLITUDE: f32 = 3.0;

/// One generated benchmark entry.
pub struct SynthSample {
    pub scores: Tensor3,
    pub image: Image,
    pub gt: LabelMap,
}

/// Evenly spaced, well-separated class colors.
fn palette(classes: usize) -> Vec<[u8; 3]> {
    (0..classes)
        .map(|c| {
            let h = c as f32 / classes as f32 * 6.0;
            let sector = h as usize % 6;
            let f = h - h.floor();
            let (v, p) = (230.0, 46.0);
            let q = v - (v - p) * f;
            let t = p + (v - p) * f;
            let (r, g, b) = match sector {
                0 => (v, t, p),
                1 => (q, v, p),
                2 => (p, v, t),
                3 => (p, q, v),
                4 => (t, p, v),
                _ => (v, p, q),
            };
            [r as u8, g as u8, b as u8]
        })
        .collect()
}

/// Smooth per-class potential on the coarse grid: a short sum of random
/// low-frequency cosine waves plus a per-class bias.
fn smooth_fields(rng: &mut ChaCha8Rng, ch: usize, cw: usize, classes: usize) -> Vec<Vec<f32>> {
    let mut fields = Vec::with_capacity(classes);
    for _ in 0..classes {
        let bias: f32 = rng.gen_range(-0.25..0.25);
        let waves: Vec<(f32, f32, f32, f32)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.4f32..1.0),
                    rng.gen_range(-1.8f32..1.8),
                    rng.gen_range(-1.8f32..1.8),
                    rng.gen_range(0.0f32..std::f32::consts::TAU),
                )
            })
            .collect();
        let mut field = Vec::with_capacity(ch * cw);
        for i in 0..ch {
            for j in 0..cw {
                let xn = j as f32 / (cw.max(2) - 1) as f32;
                let yn = i as f32 / (ch.max(2) - 1) as f32;
                let mut v = bias;
                for &(a, u, w, phase) in &waves {
                    v += a * (std::f32::consts::TAU * (u * xn + w * yn) + phase).cos();
                }
                field.push(v);
            }
        }
        fields.push(field);
    }
    fields
}

/// Generates `count` samples. `size` is the square image side and must be a
/// multiple of the score stride; `noise` is the per-cell probability that
/// the score argmax is flipped to a different class.
pub fn make_synthetic(
    seed: u64,
    size: usize,
    classes: usize,
    noise: f64,
    count: usize,
) -> Result<Vec<SynthSample>> {
    if size == 0 || !size.is_multiple_of(SCORE_STRIDE) {
        return Err(Error::InvalidParam(format!(
            "size must be a positive multiple of {SCORE_STRIDE}, got {size}"
        )));
    }
    if !(2..=64).contains(&classes) {
        return Err(Error::InvalidParam(format!(
            "classes must be in 2..=64, got {classes}"
        )));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidParam(format!(
            "noise must be in [0, 1], got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors = palette(classes);
    let (ch, cw) = (size / SCORE_STRIDE, size / SCORE_STRIDE);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let fields = smooth_fields(&mut rng, ch, cw, classes);
        let mut coarse = vec![0u16; ch * cw];
        for idx in 0..ch * cw {
            let mut best = 0usize;
            for c in 1..classes {
                if fields[c][idx] > fields[best][idx] {
                    best = c;
                }
            }
            coarse[idx] = best as u16;
        }

        // Clean one-hot scores define the ground truth through the same
        // upsample-then-argmax path the pipeline uses.
        let mut clean = Tensor3::new(ch, cw, classes)?;
        for (idx, &l) in coarse.iter().enumerate() {
            clean.as_mut_slice()[idx * classes + l as usize] = SCORE_AMPLITUDE;
        }
        let gt = argmax_channels(&bilinear_upsample(&clean, SCORE_STRIDE)?);

        // Corrupt the coarse argmax cell-by-cell.
        let mut noisy = coarse.clone();
        for cell in noisy.iter_mut() {
            if rng.gen_bool(noise) {
                let other = rng.gen_range(0..classes - 1) as u16;
                *cell = if other >= *cell { other + 1 } else { other };
            }
        }
        let mut scores = Tensor3::new(ch, cw, classes)?;
        for (idx, &l) in noisy.iter().enumerate() {
            scores.as_mut_slice()[idx * classes + l as usize] = SCORE_AMPLITUDE;
        }

        // Region-colored image with additive noise, clamped to 8 bits.
        let mut image = Image::new(size, size)?;
        for y in 0..size {
            for x in 0..size {
                let base = colors[gt.get(y, x) as usize];
                let mut px = [0u8; 3];
                for (out, b) in px.iter_mut().zip(base) {
                    let jitter: i32 = rng.gen_range(-10..=10);
                    *out = (b as i32 + jitter).clamp(0, 255) as u8;
                }
                image.set_pixel(y, x, px);
            }
        }
        samples.push(SynthSample { scores, image, gt });
    }
    Ok(samples)
}
