//! Signature image preprocessing: global thresholding, inversion to a
//! zero background, bounding-box crop, aspect-preserving pad, bilinear
//! resize, and normalization to `[0,1]`.
//!
//! All functions are pure value transforms and safe to call concurrently.

use crate::error::Result;
use crate::image::{GrayImage, NormalizedImage};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Target geometry and binarization mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Output height in pixels.
    pub side_h: usize,
    /// Output width in pixels.
    pub side_w: usize,
    /// When true, strokes are flattened to full intensity instead of
    /// keeping their grayscale ink values. Not the default.
    pub strict_binary: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            side_h: 64,
            side_w: 64,
            strict_binary: false,
        }
    }
}

/// Global threshold maximizing between-class variance of the 256-bin
/// histogram; ties break toward the smallest level. A constant image
/// returns its single value (degenerate: no foreground/background split).
///
/// Scores are compared as exact integer rationals, so the result is the
/// true argmax with no floating-point tie ambiguity.
pub fn otsu_threshold(img: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }

    let total: u64 = img.pixels().len() as u64;
    let sum_total: u64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as u64 * c)
        .sum();

    // Between-class variance at threshold t is proportional to
    // (s0*w1 - s1*w0)^2 / (w0*w1), where w0/s0 are the count/intensity
    // sums of the class <= t. Numerator and denominator stay integral.
    let mut best: Option<(u128, u128, u8)> = None; // (num^2, w0*w1, t)
    let mut w0: u64 = 0;
    let mut s0: u64 = 0;
    for (t, &count) in hist.iter().enumerate() {
        w0 += count;
        s0 += t as u64 * count;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s1 = sum_total - s0;
        let num = (s0 as i128 * w1 as i128 - s1 as i128 * w0 as i128).unsigned_abs();
        let num_sq = num * num;
        let den = w0 as u128 * w1 as u128;
        let better = match &best {
            None => true,
            // strict: first (smallest) t wins ties
            Some((bn, bd, _)) => num_sq * bd > bn * den,
        };
        if better {
            best = Some((num_sq, den, t as u8));
        }
    }

    match best {
        Some((_, _, t)) => t,
        // constant image: the only populated bin is its value
        None => hist
            .iter()
            .position(|&c| c > 0)
            .map(|v| v as u8)
            .unwrap_or(0),
    }
}

/// Sets pixels above `t` to white, then inverts the whole image, so the
/// former background becomes 0 and strokes keep inverted gray intensity.
/// With `strict_binary`, strokes are flattened to 255 instead.
pub fn binarize_invert(img: &GrayImage, t: u8, strict_binary: bool) -> GrayImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| {
            let staged = if p > t {
                255
            } else if strict_binary {
                0
            } else {
                p
            };
            255 - staged
        })
        .collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("shape preserved")
}

/// Tight bounding box (row0, row1, col0, col1), inclusive, of nonzero
/// pixels; `None` when the image is all zero.
fn nonzero_bbox(img: &GrayImage) -> Option<(usize, usize, usize, usize)> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0usize, usize::MAX, 0usize);
    let mut any = false;
    for r in 0..img.height() {
        for c in 0..img.width() {
            if img.get(r, c) != 0 {
                any = true;
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    any.then_some((r0, r1, c0, c1))
}

/// Crops to the nonzero bounding box, pads symmetrically with zeros to the
/// target aspect ratio, bilinearly resamples to (side_h, side_w), and
/// divides by 255. An all-zero image maps to an all-zero output.
pub fn resize_normalize<F: Real>(img: &GrayImage, cfg: &PreprocessConfig) -> NormalizedImage<F> {
    let (side_h, side_w) = (cfg.side_h, cfg.side_w);
    let Some((r0, r1, c0, c1)) = nonzero_bbox(img) else {
        return NormalizedImage::zeros(side_h, side_w);
    };
    let crop_h = r1 - r0 + 1;
    let crop_w = c1 - c0 + 1;

    // Pad the crop so padded_w/padded_h == side_w/side_h (up to integer
    // rounding), growing only — never cutting into the ink.
    let pad_h = crop_h.max((crop_w * side_h).div_ceil(side_w));
    let pad_w = crop_w.max((crop_h * side_w).div_ceil(side_h));
    let off_r = (pad_h - crop_h) / 2;
    let off_c = (pad_w - crop_w) / 2;

    let sample = |r: isize, c: isize| -> f64 {
        // coordinates in padded space; outside the crop it is all zero pad
        let r = r.clamp(0, pad_h as isize - 1) as usize;
        let c = c.clamp(0, pad_w as isize - 1) as usize;
        if r < off_r || c < off_c || r >= off_r + crop_h || c >= off_c + crop_w {
            0.0
        } else {
            f64::from(img.get(r0 + r - off_r, c0 + c - off_c))
        }
    };

    let scale_r = pad_h as f64 / side_h as f64;
    let scale_c = pad_w as f64 / side_w as f64;
    let mut values = Vec::with_capacity(side_h * side_w);
    for dr in 0..side_h {
        // pixel-center mapping, clamped to the source extent
        let sr = ((dr as f64 + 0.5) * scale_r - 0.5).clamp(0.0, (pad_h - 1) as f64);
        let fr = sr.floor();
        let wr = sr - fr;
        for dc in 0..side_w {
            let sc = ((dc as f64 + 0.5) * scale_c - 0.5).clamp(0.0, (pad_w - 1) as f64);
            let fc = sc.floor();
            let wc = sc - fc;
            let (ri, ci) = (fr as isize, fc as isize);
            let v = sample(ri, ci) * (1.0 - wr) * (1.0 - wc)
                + sample(ri, ci + 1) * (1.0 - wr) * wc
                + sample(ri + 1, ci) * wr * (1.0 - wc)
                + sample(ri + 1, ci + 1) * wr * wc;
            values.push(F::cast((v / 255.0).clamp(0.0, 1.0)));
        }
    }
    NormalizedImage::new(side_h, side_w, values).expect("values constructed in range")
}

/// Full pipeline: threshold, binarize + invert, crop/pad/resize/normalize.
pub fn preprocess<F: Real>(img: &GrayImage, cfg: &PreprocessConfig) -> Result<NormalizedImage<F>> {
    let t = otsu_threshold(img);
    let inked = binarize_invert(img, t, cfg.strict_binary);
    Ok(resize_normalize(&inked, cfg))
}
