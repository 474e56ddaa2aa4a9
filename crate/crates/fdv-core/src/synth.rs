//! Deterministic generator of signature-like image corpora.
//!
//! A writer's style is a short chain of cubic Bézier strokes in the unit
//! square. Genuine signatures re-render the style with small Gaussian
//! jitter on the control points; skilled forgeries first re-estimate the
//! style with a larger perturbation (the forger's imperfect knowledge) and
//! then render with genuine-level jitter, so by construction they sit
//! closer to the genuine cluster than other writers' signatures do.
//!
//! Every image derives from named streams keyed by (seed, writer, index),
//! so regeneration is byte-identical regardless of worker count or order.

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::seeds;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// One pen stroke: cubic Bézier control points in the unit square, a width
/// as a fraction of the canvas's shorter side, and an ink intensity in
/// (0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub control: [[f64; 2]; 4],
    pub width: f64,
    pub intensity: f64,
}

/// A writer's signature model; regenerating from the same seed yields an
/// identical style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterStyle {
    pub seed: u64,
    pub strokes: Vec<Stroke>,
}

/// Horizontal extent of the style's control points in normalized units.
fn x_extent(strokes: &[Stroke]) -> f64 {
    let xs = strokes.iter().flat_map(|s| s.control.iter().map(|p| p[0]));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    hi - lo
}

/// Deterministic style for one seed: 3–7 connected strokes drifting left to
/// right, with control points spanning at least 30% of the canvas width.
pub fn gen_writer_style(seed: u64) -> WriterStyle {
    let mut rng = seeds::stream("synth-style", seed, b"");
    let n_strokes = rng.random_range(3..=7usize);
    let mut strokes = Vec::with_capacity(n_strokes);
    let mut cursor = [
        0.08 + 0.17 * rng.random::<f64>(),
        0.30 + 0.40 * rng.random::<f64>(),
    ];
    for _ in 0..n_strokes {
        let dx = 0.08 + 0.20 * rng.random::<f64>();
        let dy = -0.25 + 0.50 * rng.random::<f64>();
        let end = [
            (cursor[0] + dx).min(0.95),
            (cursor[1] + dy).clamp(0.10, 0.90),
        ];
        let chord = |t: f64| {
            [
                cursor[0] + t * (end[0] - cursor[0]),
                cursor[1] + t * (end[1] - cursor[1]),
            ]
        };
        let mut off = || -0.30 + 0.60 * rng.random::<f64>();
        let c1 = chord(1.0 / 3.0);
        let c2 = chord(2.0 / 3.0);
        let p1 = [(c1[0] + off()).clamp(0.02, 0.98), (c1[1] + off()).clamp(0.02, 0.98)];
        let p2 = [(c2[0] + off()).clamp(0.02, 0.98), (c2[1] + off()).clamp(0.02, 0.98)];
        strokes.push(Stroke {
            control: [cursor, p1, p2, end],
            width: 0.015 + 0.020 * rng.random::<f64>(),
            intensity: 0.75 + 0.25 * rng.random::<f64>(),
        });
        cursor = end;
    }
    // Guarantee the minimum horizontal coverage by rescaling around the
    // extent's center; the rescaled points stay well inside the canvas.
    let extent = x_extent(&strokes);
    if extent < 0.30 {
        let xs: Vec<f64> = strokes
            .iter()
            .flat_map(|s| s.control.iter().map(|p| p[0]))
            .collect();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let center = lo + extent / 2.0;
        let scale = if extent > 0.0 { 0.35 / extent } else { 1.0 };
        for s in &mut strokes {
            for p in &mut s.control {
                p[0] = (0.5 + (p[0] - center) * scale).clamp(0.02, 0.98);
            }
        }
        if extent == 0.0 {
            // Degenerate vertical scrawl: spread the stroke endpoints.
            for (k, s) in strokes.iter_mut().enumerate() {
                let shift = 0.35 * (k as f64 / (n_strokes - 1).max(1) as f64 - 0.5);
                for p in &mut s.control {
                    p[0] = (p[0] + shift).clamp(0.02, 0.98);
                }
            }
        }
    }
    WriterStyle { seed, strokes }
}

/// Gaussian perturbation of every control-point coordinate with standard
/// deviation `scale`, clamped to the unit square. Width and intensity are
/// left unchanged.
pub fn jitter_style<R: Rng + ?Sized>(style: &WriterStyle, scale: f64, rng: &mut R) -> WriterStyle {
    let mut out = style.clone();
    if scale == 0.0 {
        return out;
    }
    for s in &mut out.strokes {
        for p in &mut s.control {
            for c in p.iter_mut() {
                let noise: f64 = crate::scalar::Real::sample_standard_normal(rng);
                *c = (*c + scale * noise).clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn bezier(p: &[[f64; 2]; 4], t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    let b = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
    (
        b[0] * p[0][0] + b[1] * p[1][0] + b[2] * p[2][0] + b[3] * p[3][0],
        b[0] * p[0][1] + b[1] * p[1][1] + b[2] * p[2][1] + b[3] * p[3][1],
    )
}

fn draw_style(style: &WriterStyle, width: usize, height: usize) -> GrayImage {
    let mut pixels = vec![255u8; width * height];
    let sx = (width - 1) as f64;
    let sy = (height - 1) as f64;
    let min_side = width.min(height) as f64;
    for s in &style.strokes {
        let px: Vec<(f64, f64)> = s
            .control
            .iter()
            .map(|p| (p[0] * sx, p[1] * sy))
            .collect();
        let poly_len: f64 = px
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
            .sum();
        let steps = ((2.0 * poly_len) as usize).clamp(16, 4096);
        let radius = (s.width * min_side).max(0.6);
        let reach = radius.ceil() as isize + 1;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let (cx, cy) = bezier(&s.control, t);
            let (cx, cy) = (cx * sx, cy * sy);
            let (ix, iy) = (cx.round() as isize, cy.round() as isize);
            for dy in -reach..=reach {
                let y = iy + dy;
                if y < 0 || y >= height as isize {
                    continue;
                }
                for dx in -reach..=reach {
                    let x = ix + dx;
                    if x < 0 || x >= width as isize {
                        continue;
                    }
                    let dist =
                        ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let coverage = (radius + 0.5 - dist).clamp(0.0, 1.0);
                    if coverage <= 0.0 {
                        continue;
                    }
                    let val = (255.0 * (1.0 - coverage * s.intensity)).round() as u8;
                    let idx = y as usize * width + x as usize;
                    pixels[idx] = pixels[idx].min(val);
                }
            }
        }
    }
    GrayImage::new(width, height, pixels).expect("canvas dimensions are positive")
}

/// Rasterize the style with Gaussian control-point jitter onto a white
/// canvas with dark, antialiased ink.
pub fn render<R: Rng + ?Sized>(
    style: &WriterStyle,
    jitter: f64,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<GrayImage> {
    if !(jitter >= 0.0) || !jitter.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "jitter must be finite and >= 0, got {jitter}"
        )));
    }
    if width < 8 || height < 8 {
        return Err(Error::InvalidArgument(format!(
            "canvas must be at least 8x8, got {width}x{height}"
        )));
    }
    Ok(draw_style(&jitter_style(style, jitter, rng), width, height))
}

/// Parameters of a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_writers: usize,
    pub genuine_per_writer: usize,
    pub skilled_per_writer: usize,
    /// Control-point jitter for genuine re-renders.
    pub jitter_genuine: f64,
    /// Style re-estimation error for skilled forgeries; must exceed
    /// `jitter_genuine` so forging is harder to detect than chance but
    /// easier than verifying genuine intra-class variation.
    pub jitter_skilled: f64,
    pub canvas_w: usize,
    pub canvas_h: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_writers: 20,
            genuine_per_writer: 15,
            skilled_per_writer: 10,
            jitter_genuine: 0.010,
            jitter_skilled: 0.035,
            canvas_w: 96,
            canvas_h: 64,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_writers == 0 || self.genuine_per_writer == 0 {
            return Err(Error::InvalidArgument(
                "corpus needs at least one writer and one genuine signature each".into(),
            ));
        }
        if !(self.jitter_genuine > 0.0 && self.jitter_skilled > self.jitter_genuine) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < jitter_genuine < jitter_skilled, got {} and {}",
                self.jitter_genuine, self.jitter_skilled
            )));
        }
        if self.canvas_w < 8 || self.canvas_h < 8 {
            return Err(Error::InvalidArgument(
                "canvas must be at least 8x8".into(),
            ));
        }
        Ok(())
    }
}

/// Writer directory name for index `i` (0-based): `w001`, `w002`, ...
pub fn writer_dir_name(i: usize) -> String {
    format!("w{:03}", i + 1)
}

fn style_for_writer(spec: &CorpusSpec, writer: &str) -> WriterStyle {
    let style_seed = seeds::stream("synth-style-seed", spec.seed, writer.as_bytes()).random();
    gen_writer_style(style_seed)
}

/// Generate the on-disk corpus under `root`:
/// `writers/<id>/genuine/*.png` and `writers/<id>/skilled/*.png`, plus a
/// `corpus.json` recording the generation parameters. Refuses a nonempty
/// `root` unless
/// `force` is set, in which case the previous `writers` tree and manifest
/// are replaced. Writers render in parallel; every file write is atomic.
pub fn gen_corpus(spec: &CorpusSpec, root: &Path, force: bool) -> Result<()> {
    spec.validate()?;
    let io = |e: std::io::Error, p: &Path| Error::io(p.to_path_buf(), e);
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(|e| io(e, root))?;
        if entries.next().is_some() {
            if !force {
                return Err(Error::Data(format!(
                    "target directory {} is not empty (pass --force to replace it)",
                    root.display()
                )));
            }
            let writers = root.join("writers");
            if writers.exists() {
                fs::remove_dir_all(&writers).map_err(|e| io(e, &writers))?;
            }
            let manifest = root.join("corpus.json");
            if manifest.exists() {
                fs::remove_file(&manifest).map_err(|e| io(e, &manifest))?;
            }
        }
    }
    fs::create_dir_all(root).map_err(|e| io(e, root))?;

    (0..spec.n_writers)
        .into_par_iter()
        .try_for_each(|w| -> Result<()> {
            let writer = writer_dir_name(w);
            let style = style_for_writer(spec, &writer);
            let gen_dir = root.join("writers").join(&writer).join("genuine");
            let skl_dir = root.join("writers").join(&writer).join("skilled");
            fs::create_dir_all(&gen_dir).map_err(|e| io(e, &gen_dir))?;
            fs::create_dir_all(&skl_dir).map_err(|e| io(e, &skl_dir))?;
            for k in 0..spec.genuine_per_writer {
                let ctx = format!("{writer}/{k}");
                let mut rng = seeds::stream("synth-genuine", spec.seed, ctx.as_bytes());
                let img = render(
                    &style,
                    spec.jitter_genuine,
                    spec.canvas_w,
                    spec.canvas_h,
                    &mut rng,
                )?;
                img.save_png(&gen_dir.join(format!("g{k:02}.png")))?;
            }
            for k in 0..spec.skilled_per_writer {
                let ctx = format!("{writer}/{k}");
                let mut est_rng =
                    seeds::stream("synth-skilled-style", spec.seed, ctx.as_bytes());
                let estimated = jitter_style(&style, spec.jitter_skilled, &mut est_rng);
                let mut rng = seeds::stream("synth-skilled", spec.seed, ctx.as_bytes());
                let img = render(
                    &estimated,
                    spec.jitter_genuine,
                    spec.canvas_w,
                    spec.canvas_h,
                    &mut rng,
                )?;
                img.save_png(&skl_dir.join(format!("s{k:02}.png")))?;
            }
            Ok(())
        })?;

    let manifest_path = root.join("corpus.json");
    let json = serde_json::to_string_pretty(spec)
        .map_err(|e| Error::Data(format!("corpus manifest: {e}")))?;
    let tmp: PathBuf = manifest_path.with_extension("json.tmp");
    fs::write(&tmp, json.as_bytes()).map_err(|e| io(e, &tmp))?;
    fs::rename(&tmp, &manifest_path).map_err(|e| io(e, &manifest_path))?;
    Ok(())
}
