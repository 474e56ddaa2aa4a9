//! Grayscale image value types and 8-bit PNG/PGM I/O.

use crate::error::{Error, Result};
use crate::scalar::Real;
use std::path::Path;

/// 8-bit grayscale image, row-major, 0 = black and 255 = white.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be nonzero, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimMismatch {
                context: "GrayImage::new",
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.pixels[row * self.width + col] = v;
    }

    /// Loads a PNG or binary PGM file; color inputs are reduced with
    /// luma = round(0.299 R + 0.587 G + 0.114 B).
    pub fn load(path: &Path) -> Result<Self> {
        let dynimg = image::open(path)
            .map_err(|e| Error::Data(format!("cannot decode image {}: {e}", path.display())))?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        let pixels: Vec<u8> = match dynimg {
            image::DynamicImage::ImageLuma8(buf) => buf.into_raw(),
            other => other
                .into_rgb8()
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
                    y.round().clamp(0.0, 255.0) as u8
                })
                .collect(),
        };
        GrayImage::new(w, h, pixels)
    }

    /// Writes an 8-bit grayscale PNG atomically (temp file + rename).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let file_name = path
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("bad path {}", path.display())))?;
        let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
        let mut bytes = Vec::new();
        {
            use image::ImageEncoder;
            let enc = image::codecs::png::PngEncoder::new(&mut bytes);
            enc.write_image(
                &self.pixels,
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::L8,
            )
            .map_err(|e| Error::Data(format!("png encode failed: {e}")))?;
        }
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Fixed-size image normalized to `[0,1]` with background 0 (no ink).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedImage<F> {
    side_h: usize,
    side_w: usize,
    values: Vec<F>,
}

impl<F: Real> NormalizedImage<F> {
    pub fn new(side_h: usize, side_w: usize, values: Vec<F>) -> Result<Self> {
        if values.len() != side_h * side_w {
            return Err(Error::DimMismatch {
                context: "NormalizedImage::new",
                expected: side_h * side_w,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= F::zero() && *v <= F::one())) {
            return Err(Error::InvalidArgument(
                "normalized image values must lie in [0,1]".into(),
            ));
        }
        Ok(NormalizedImage {
            side_h,
            side_w,
            values,
        })
    }

    pub fn zeros(side_h: usize, side_w: usize) -> Self {
        NormalizedImage {
            side_h,
            side_w,
            values: vec![F::zero(); side_h * side_w],
        }
    }

    pub fn side_h(&self) -> usize {
        self.side_h
    }

    pub fn side_w(&self) -> usize {
        self.side_w
    }

    /// Row-major values; this is the flattened network input.
    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A preprocessed image with a stable identifier (usually the source file
/// stem or relative path), carried through training splits so score dumps
/// and diagnostics can name the sample they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<F> {
    pub id: String,
    pub image: NormalizedImage<F>,
}

impl<F: Real> Sample<F> {
    pub fn new(id: impl Into<String>, image: NormalizedImage<F>) -> Self {
        Sample { id: id.into(), image }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn constructor_validates_shape_and_range() {
        assert!(GrayImage::new(2, 2, vec![0, 1, 2]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
        assert!(NormalizedImage::<f64>::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(NormalizedImage::<f64>::new(1, 2, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn png_round_trip_preserves_pixels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = GrayImage::new(3, 2, vec![0, 50, 100, 150, 200, 255]).unwrap();
        img.save_png(&path).unwrap();
        let back = GrayImage::load(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_p5_is_readable() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        // binary P5, 3x2, maxval 255
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        std::fs::write(&path, bytes).unwrap();
        let img = GrayImage::load(&path).unwrap();
        assert_eq!(img.width(), 3);
        assert_eq!(img.height(), 2);
        assert_eq!(img.pixels(), &[10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn color_png_reduces_via_luma() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let mut rgb = image::RgbImage::new(2, 1);
        rgb.put_pixel(0, 0, image::Rgb([255, 0, 0]));
        rgb.put_pixel(1, 0, image::Rgb([10, 200, 30]));
        rgb.save(&path).unwrap();
        let img = GrayImage::load(&path).unwrap();
        // round(0.299*255) = 76; round(0.299*10 + 0.587*200 + 0.114*30) = round(123.81) = 124
        assert_eq!(img.pixels(), &[76, 124]);
    }

    #[test]
    fn corrupted_file_errors_with_path() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png at all").unwrap();
        let err = GrayImage::load(&path).unwrap_err().to_string();
        assert!(err.contains("bad.png"), "{err}");
    }
}
