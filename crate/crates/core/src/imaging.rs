//! Grayscale rasters, PGM file I/O, and patch extraction.
//!
//! Pixels live in `[0, 1]` as `f64` everywhere inside the crate; 8-bit
//! quantization only happens at the file boundary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageReader};
use thiserror::Error;

/// Smallest denominator used by [`standardize`].
pub const STANDARDIZE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image header: {0}")]
    CorruptHeader(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("window of size {size} centered at ({cx}, {cy}) leaves the {width}x{height} image")]
    OutOfBounds {
        cx: i64,
        cy: i64,
        size: usize,
        width: usize,
        height: usize,
    },
}

/// A single-channel raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(ImageError::Invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self, ImageError> {
        for v in &mut pixels {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Applies `f` to every pixel, clamping the result back into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|&v| {
                let m = f(v);
                if m.is_finite() {
                    m.clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Linearly rescales arbitrary finite values to `[0, 1]`. A constant
    /// input maps to all zeros.
    pub fn rescaled(width: usize, height: usize, values: &[f64]) -> Result<Self, ImageError> {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let pixels = values
            .iter()
            .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect();
        Self::new(width, height, pixels)
    }
}

/// A square window of pixels copied out of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    size: usize,
    pixels: Vec<f64>,
    origin: (i64, i64),
}

impl Patch {
    pub fn new(size: usize, pixels: Vec<f64>, origin: (i64, i64)) -> Result<Self, ImageError> {
        if size < 8 || size % 2 != 0 {
            return Err(ImageError::Invalid(format!(
                "patch size must be even and >= 8, got {size}"
            )));
        }
        if pixels.len() != size * size {
            return Err(ImageError::Invalid(format!(
                "patch of size {size} needs {} pixels, got {}",
                size * size,
                pixels.len()
            )));
        }
        Ok(Self {
            size,
            pixels,
            origin,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    /// Center of the window in the source image.
    pub fn origin(&self) -> (i64, i64) {
        self.origin
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.size + x]
    }

    /// View the patch as an image, e.g. for debugging dumps.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_clamped(self.size, self.size, self.pixels.clone())
            .expect("patch dimensions are valid")
    }
}

/// Loads a grayscale raster and maps its stored range linearly to `[0, 1]`.
///
/// PGM (binary P5 and ASCII P2) is always supported; PNG is accepted too.
/// 16-bit rasters are normalized by 65535.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ImageError::FileNotFound(path.display().to_string()));
    }
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(ImageError::IoFailure)?;
    if reader.format().is_none() {
        return Err(ImageError::UnsupportedFormat(path.display().to_string()));
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => ImageError::UnsupportedFormat(u.to_string()),
        image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            ImageError::CorruptHeader(format!("truncated raster: {io}"))
        }
        image::ImageError::IoError(io) => ImageError::IoFailure(io),
        other => ImageError::CorruptHeader(other.to_string()),
    })?;
    let width = decoded.width() as usize;
    let height = decoded.height() as usize;
    let pixels: Vec<f64> = match &decoded {
        DynamicImage::ImageLuma8(buf) => buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => {
            buf.as_raw().iter().map(|&v| v as f64 / 65535.0).collect()
        }
        other => other
            .to_luma8()
            .as_raw()
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
    };
    GrayImage::new(width, height, pixels)
}

/// Quantizes to 8 bits and writes a binary (P5) PGM file.
pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write!(out, "P5\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.pixels.iter().map(|&v| quantize(v)).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

/// Writes an ASCII (P2) PGM file.
pub fn save_gray_ascii(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "P2\n{} {}\n255", img.width, img.height)?;
    for row in img.pixels.chunks(img.width) {
        let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Copies the `size`x`size` window centered at `(cx, cy)`.
///
/// The window spans `[cx - size/2, cx + size/2)` on each axis. Windows
/// crossing an edge are rejected, never padded.
pub fn extract_patch(img: &GrayImage, cx: i64, cy: i64, size: usize) -> Result<Patch, ImageError> {
    let half = (size / 2) as i64;
    let x0 = cx - half;
    let y0 = cy - half;
    let oob = || ImageError::OutOfBounds {
        cx,
        cy,
        size,
        width: img.width,
        height: img.height,
    };
    if x0 < 0 || y0 < 0 || x0 + size as i64 > img.width as i64 || y0 + size as i64 > img.height as i64 {
        return Err(oob());
    }
    let (x0, y0) = (x0 as usize, y0 as usize);
    let mut pixels = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        let row = y * img.width;
        pixels.extend_from_slice(&img.pixels[row + x0..row + x0 + size]);
    }
    Patch::new(size, pixels, (cx, cy))
}

/// Returns true when a `size` window centered at `(cx, cy)` fits inside a
/// `width`x`height` raster.
pub fn window_fits(cx: i64, cy: i64, size: usize, width: usize, height: usize) -> bool {
    let half = (size / 2) as i64;
    cx - half >= 0
        && cy - half >= 0
        && cx - half + size as i64 <= width as i64
        && cy - half + size as i64 <= height as i64
}

/// Rescales a patch to zero mean and unit standard deviation.
pub fn standardize(patch: &Patch) -> Patch {
    let mut out = patch.clone();
    standardize_in_place(&mut out.pixels);
    out
}

/// Zero-mean, unit-deviation normalization of a raw buffer.
/// The deviation is clamped below by [`STANDARDIZE_EPS`].
pub fn standardize_in_place(values: &mut [f64]) {
    let Some(&first) = values.first() else {
        return;
    };
    if values.iter().all(|&v| v == first) {
        values.fill(0.0);
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt().max(STANDARDIZE_EPS);
    for v in values.iter_mut() {
        *v = (*v - mean) / denom;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x + y * w) % 251) as f64 / 250.0).unwrap()
    }

    #[test]
    fn rejects_bad_pixels() {
        assert!(GrayImage::new(2, 2, vec![0.0, 1.0, 0.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn load_normalizes_stored_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.pgm");
        std::fs::write(&path, b"P5\n2 2\n255\n\x00\xff\xff\x00").unwrap();
        let img = load_gray(&path).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 1.0, 0.0]);

        let ascii = dir.path().join("tiny_ascii.pgm");
        std::fs::write(&ascii, "P2\n2 2\n255\n0 255\n255 0\n").unwrap();
        assert_eq!(load_gray(&ascii).unwrap().pixels(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn load_missing_file() {
        let err = load_gray("/definitely/not/here.pgm").unwrap_err();
        assert!(matches!(err, ImageError::FileNotFound(_)));
    }

    #[test]
    fn load_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.dat");
        std::fs::write(&path, b"hello world, not an image").unwrap();
        let err = load_gray(&path).unwrap_err();
        assert!(matches!(err, ImageError::UnsupportedFormat(_)), "{err:?}");

        let named = dir.path().join("junk.pgm");
        std::fs::write(&named, b"hello world, not an image").unwrap();
        let err = load_gray(&named).unwrap_err();
        assert!(matches!(err, ImageError::CorruptHeader(_)), "{err:?}");

        let trunc = dir.path().join("trunc.pgm");
        std::fs::write(&trunc, b"P5\n4 4\n").unwrap();
        let err = load_gray(&trunc).unwrap_err();
        assert!(matches!(err, ImageError::CorruptHeader(_)), "{err:?}");
    }

    #[test]
    fn save_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let zeros = dir.path().join("zeros.pgm");
        save_gray(&GrayImage::filled(5, 3, 0.0).unwrap(), &zeros).unwrap();
        let bytes = std::fs::read(&zeros).unwrap();
        assert!(bytes.ends_with(&[0u8; 15]));
        let ones = dir.path().join("ones.pgm");
        save_gray(&GrayImage::filled(5, 3, 1.0).unwrap(), &ones).unwrap();
        let bytes = std::fs::read(&ones).unwrap();
        assert!(bytes.ends_with(&[255u8; 15]));
    }

    #[test]
    fn roundtrip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(37, 23, |x, y| ((x * 7919 + y * 104729) % 1000) as f64 / 999.0)
            .unwrap();
        for (name, ascii) in [("rt.pgm", false), ("rt_ascii.pgm", true)] {
            let path = dir.path().join(name);
            if ascii {
                save_gray_ascii(&img, &path).unwrap();
            } else {
                save_gray(&img, &path).unwrap();
            }
            let back = load_gray(&path).unwrap();
            let worst = img
                .pixels()
                .iter()
                .zip(back.pixels())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1.0 / 255.0, "worst {worst}");
            // A second cycle is exact.
            save_gray(&back, &path).unwrap();
            assert_eq!(load_gray(&path).unwrap(), back);
        }
    }

    #[test]
    fn extract_indexing() {
        let img = ramp(64, 64);
        let p = extract_patch(&img, 32, 32, 16).unwrap();
        assert_eq!(p.size(), 16);
        assert_eq!(p.get(0, 0), img.get(24, 24));
        assert_eq!(p.get(15, 15), img.get(39, 39));
        assert_eq!(p.origin(), (32, 32));

        let whole = extract_patch(&img, 32, 32, 64).unwrap();
        assert_eq!(whole.pixels(), img.pixels());
    }

    #[test]
    fn extract_out_of_bounds() {
        let img = ramp(64, 64);
        for (cx, cy) in [(0, 0), (7, 32), (32, 7), (57, 32), (32, 57), (-5, 30)] {
            assert!(matches!(
                extract_patch(&img, cx, cy, 16),
                Err(ImageError::OutOfBounds { .. })
            ));
        }
        assert!(extract_patch(&img, 8, 8, 16).is_ok());
        assert!(extract_patch(&img, 56, 56, 16).is_ok());
    }

    #[test]
    fn standardize_constant_is_zero() {
        let p = Patch::new(8, vec![0.3; 64], (0, 0)).unwrap();
        assert!(standardize(&p).pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_fixed_point() {
        // Alternating +-1 already has mean 0 and deviation 1.
        let vals: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let p = Patch::new(8, vals.clone(), (0, 0)).unwrap();
        let s = standardize(&p);
        let mean = s.pixels().iter().sum::<f64>() / 64.0;
        let var = s.pixels().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12 && (var.sqrt() - 1.0).abs() < 1e-12);
        for (a, b) in vals.iter().zip(s.pixels()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    proptest! {
        #[test]
        fn extract_matches_bounds_checked_oracle(
            w in 8usize..48, h in 8usize..48, cx in -10i64..60, cy in -10i64..60,
            half in 4usize..12,
        ) {
            let size = half * 2;
            let img = GrayImage::from_fn(w, h, |x, y| ((x * 31 + y * 17) % 97) as f64 / 96.0).unwrap();
            let fits = cx - half as i64 >= 0 && cy - half as i64 >= 0
                && cx + half as i64 <= w as i64 && cy + half as i64 <= h as i64;
            match extract_patch(&img, cx, cy, size) {
                Ok(p) => {
                    prop_assert!(fits);
                    for y in 0..size {
                        for x in 0..size {
                            let sx = (cx - half as i64 + x as i64) as usize;
                            let sy = (cy - half as i64 + y as i64) as usize;
                            prop_assert_eq!(p.get(x, y), img.get(sx, sy));
                        }
                    }
                }
                Err(_) => prop_assert!(!fits),
            }
        }

        #[test]
        fn standardize_moments_and_idempotence(vals in prop::collection::vec(0.0f64..1.0, 64)) {
            let p = Patch::new(8, vals, (0, 0)).unwrap();
            let once = standardize(&p);
            let mean = once.pixels().iter().sum::<f64>() / 64.0;
            prop_assert!(mean.abs() <= 1e-6);
            let spread = p.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - p.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-3 {
                let twice = standardize(&once);
                for (a, b) in once.pixels().iter().zip(twice.pixels()) {
                    prop_assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }
}
