//! Raster types and the pixel-level primitives the descriptor stack is
//! built from: PNG I/O, factor-2 downsampling, HSV conversion, luminance
//! and Sobel edge magnitude.
//!
//! All derived planes are kept in `[0, 1]` so that downstream descriptor
//! components share a common scale.

use std::path::Path;

use crate::error::{Error, Result};

/// Rec. 601 luma weights.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Self {
        assert!(width >= 1 && height >= 1, "empty image");
        assert_eq!(pixels.len(), width * height, "pixel buffer length");
        RasterImage {
            width,
            height,
            pixels,
        }
    }

    /// Uniform image of one color.
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self::new(width, height, vec![color; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, color: [u8; 3]) {
        self.pixels[y * self.width + x] = color;
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    /// Copy of the top-left `width`x`height` corner.
    pub fn crop(&self, width: usize, height: usize) -> RasterImage {
        assert!(width >= 1 && height >= 1 && width <= self.width && height <= self.height);
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            let row = &self.pixels[y * self.width..y * self.width + width];
            pixels.extend_from_slice(row);
        }
        RasterImage::new(width, height, pixels)
    }
}

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert!(width >= 1 && height >= 1, "empty image");
        assert_eq!(values.len(), width * height, "value buffer length");
        debug_assert!(values
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        GrayImage {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-pixel {0,1} labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert!(width >= 1 && height >= 1, "empty mask");
        assert_eq!(bits.len(), width * height, "bit buffer length");
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    pub fn filled(width: usize, height: usize, bit: bool) -> Self {
        Self::new(width, height, vec![bit; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set_bit(&mut self, x: usize, y: usize, bit: bool) {
        self.bits[y * self.width + x] = bit;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn crop(&self, width: usize, height: usize) -> BinaryMask {
        assert!(width >= 1 && height >= 1 && width <= self.width && height <= self.height);
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            bits.extend_from_slice(&self.bits[y * self.width..y * self.width + width]);
        }
        BinaryMask::new(width, height, bits)
    }
}

/// Per-pixel instrument probability in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        ProbabilityMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        ProbabilityMap {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set_value(&mut self, x: usize, y: usize, p: f64) {
        debug_assert!((0.0..=1.0).contains(&p));
        self.values[y * self.width + x] = p;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fill a square region with one probability.
    pub fn fill_rect(&mut self, x: usize, y: usize, size: usize, p: f64) {
        for yy in y..y + size {
            for xx in x..x + size {
                self.set_value(xx, yy, p);
            }
        }
    }
}

fn decode_error(path: &Path, err: image::ImageError) -> Error {
    match err {
        image::ImageError::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingFile {
                path: path.to_path_buf(),
            }
        }
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Decode an 8-bit RGB PNG. Missing files and undecodable files are
/// reported as distinct errors.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let img = image::open(path).map_err(|e| decode_error(path, e))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "zero-sized image".into(),
        });
    }
    let pixels = rgb.pixels().map(|p| [p[0], p[1], p[2]]).collect();
    Ok(RasterImage::new(w as usize, h as usize, pixels))
}

/// Encode as 8-bit RGB PNG; lossless round-trip with [`load_image`].
pub fn save_image(img: &RasterImage, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for y in 0..img.height() {
        for x in 0..img.width() {
            buf.put_pixel(x as u32, y as u32, image::Rgb(img.pixel(x, y)));
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Decode an 8-bit grayscale PNG as a mask: values >= 128 are foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let img = image::open(path).map_err(|e| decode_error(path, e))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "zero-sized mask".into(),
        });
    }
    let bits = gray.pixels().map(|p| p[0] >= 128).collect();
    Ok(BinaryMask::new(w as usize, h as usize, bits))
}

/// Encode a mask as 8-bit grayscale PNG: foreground 255, background 0.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let mut buf = image::GrayImage::new(mask.width() as u32, mask.height() as u32);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Luma([if mask.bit(x, y) { 255 } else { 0 }]),
            );
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Encode a probability map as 16-bit grayscale PNG, value = round(p * 65535).
pub fn save_probability_map(map: &ProbabilityMap, path: &Path) -> Result<()> {
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        map.width() as u32,
        map.height() as u32,
    );
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = (map.value(x, y) * 65535.0).round() as u16;
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Decode a 16-bit grayscale PNG written by [`save_probability_map`].
pub fn load_probability_map(path: &Path) -> Result<ProbabilityMap> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let img = image::open(path).map_err(|e| decode_error(path, e))?;
    let gray = img.to_luma16();
    let (w, h) = gray.dimensions();
    let values = gray.pixels().map(|p| p[0] as f64 / 65535.0).collect();
    Ok(ProbabilityMap::new(w as usize, h as usize, values))
}

/// Halve both dimensions by averaging each 2x2 block per channel,
/// rounding half-up. A trailing odd row/column is dropped.
pub fn downsample2(img: &RasterImage) -> Result<RasterImage> {
    if img.width() < 2 || img.height() < 2 {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: 2,
        });
    }
    let w = img.width() / 2;
    let h = img.height() / 2;
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut out = [0u8; 3];
            for c in 0..3 {
                let sum: u32 = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|&(dx, dy)| img.pixel(2 * x + dx, 2 * y + dy)[c] as u32)
                    .sum();
                // (sum + 2) / 4 rounds the average half-up.
                out[c] = ((sum + 2) / 4) as u8;
            }
            pixels.push(out);
        }
    }
    Ok(RasterImage::new(w, h, pixels))
}

/// Mask counterpart of [`downsample2`]: a 2x2 block maps to 1 when at
/// least half of its bits are set (the bit average rounded half-up).
pub fn downsample2_mask(mask: &BinaryMask) -> Result<BinaryMask> {
    if mask.width() < 2 || mask.height() < 2 {
        return Err(Error::ImageTooSmall {
            width: mask.width(),
            height: mask.height(),
            min: 2,
        });
    }
    let w = mask.width() / 2;
    let h = mask.height() / 2;
    let mut bits = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let count = [(0, 0), (1, 0), (0, 1), (1, 1)]
                .iter()
                .filter(|&&(dx, dy)| mask.bit(2 * x + dx, 2 * y + dy))
                .count();
            bits.push(count >= 2);
        }
    }
    Ok(BinaryMask::new(w, h, bits))
}

/// Standard hexcone RGB -> HSV on `[0, 1]` inputs. The hue angle is
/// divided by 360 so all three outputs live in `[0, 1]`; H is 0 when
/// S is 0.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    if delta <= 0.0 || max <= 0.0 {
        return (0.0, 0.0, v);
    }
    let s = delta / max;
    let h6 = if max == r {
        (g - b) / delta
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = h6 / 6.0;
    if h < 0.0 {
        h += 1.0;
    }
    (h, s, v)
}

/// Rec. 601 luminance of each pixel on `[0, 1]`-normalized channels.
pub fn luminance(img: &RasterImage) -> GrayImage {
    let values = img
        .pixels()
        .iter()
        .map(|p| {
            LUMA_R * (p[0] as f64 / 255.0)
                + LUMA_G * (p[1] as f64 / 255.0)
                + LUMA_B * (p[2] as f64 / 255.0)
        })
        .collect();
    GrayImage::new(img.width(), img.height(), values)
}

/// 3x3 Sobel gradient magnitude with replicate border handling,
/// normalized by 4*sqrt(2) (the maximum attainable on `[0, 1]` inputs)
/// so the output stays in `[0, 1]`.
pub fn sobel_magnitude(g: &GrayImage) -> GrayImage {
    let norm = 4.0 * std::f64::consts::SQRT_2;
    let (w, h) = (g.width(), g.height());
    let clamped = |x: isize, y: isize| -> f64 {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        g.value(cx, cy)
    };
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            // Factored kernels: identical column/row expressions cancel
            // exactly, so constant regions yield an exact zero gradient.
            let col = |dx: isize| {
                clamped(x + dx, y - 1) + 2.0 * clamped(x + dx, y) + clamped(x + dx, y + 1)
            };
            let row = |dy: isize| {
                clamped(x - 1, y + dy) + 2.0 * clamped(x, y + dy) + clamped(x + 1, y + dy)
            };
            let gx = col(1) - col(-1);
            let gy = row(1) - row(-1);
            values.push((gx * gx + gy * gy).sqrt() / norm);
        }
    }
    GrayImage::new(w, h, values)
}
