//! The 7-plane channel stack (R, G, B, H, S, V, Sobel-of-luminance), its
//! summed-area tables, and O(1) extraction of the 14-element mean/std
//! patch descriptor.

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage, RasterImage};

/// Number of channel planes.
pub const PLANES: usize = 7;
/// Descriptor length: mean and std per plane.
pub const DESCRIPTOR_LEN: usize = 2 * PLANES;

/// Square patch geometry: top-left corner and side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRect {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl PatchRect {
    pub fn new(x: usize, y: usize, size: usize) -> Self {
        assert!(size >= 1, "patch size must be >= 1");
        PatchRect { x, y, size }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x + self.size <= width && self.y + self.size <= height
    }
}

/// 14-element patch descriptor: `[mean, std]` per plane, in plane order
/// `[R, G, B, H, S, V, Sobel]`. Patch descriptors have means in `[0, 1]`
/// and stds in `[0, 0.5]`; change descriptors (componentwise differences)
/// live in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor {
    pub values: [f64; DESCRIPTOR_LEN],
}

impl Descriptor {
    pub fn new(values: [f64; DESCRIPTOR_LEN]) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Descriptor { values }
    }

    pub fn zero() -> Self {
        Descriptor {
            values: [0.0; DESCRIPTOR_LEN],
        }
    }

    /// Euclidean distance over the 14 components.
    pub fn distance(&self, other: &Descriptor) -> f64 {
        distance_sq(self, other).sqrt()
    }
}

/// Squared Euclidean distance; the comparison kernel for searches.
#[inline]
pub fn distance_sq(a: &Descriptor, b: &Descriptor) -> f64 {
    let mut acc = 0.0;
    for i in 0..DESCRIPTOR_LEN {
        let d = a.values[i] - b.values[i];
        acc += d * d;
    }
    acc
}

/// Euclidean distance between two descriptors.
pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> f64 {
    a.distance(b)
}

/// The seven `[0, 1]` channel planes of an image, in fixed order
/// `[R, G, B, H, S, V, Sobel-of-luminance]`.
#[derive(Debug, Clone)]
pub struct ChannelStack {
    width: usize,
    height: usize,
    planes: [GrayImage; PLANES],
}

impl ChannelStack {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane(&self, idx: usize) -> &GrayImage {
        &self.planes[idx]
    }
}

/// Compute the channel planes for an image.
pub fn build_channel_stack(img: &RasterImage) -> ChannelStack {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut rgbhsv: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(n));
    for p in img.pixels() {
        let r = p[0] as f64 / 255.0;
        let g = p[1] as f64 / 255.0;
        let b = p[2] as f64 / 255.0;
        let (hh, ss, vv) = imaging::rgb_to_hsv(r, g, b);
        rgbhsv[0].push(r);
        rgbhsv[1].push(g);
        rgbhsv[2].push(b);
        rgbhsv[3].push(hh);
        rgbhsv[4].push(ss);
        rgbhsv[5].push(vv);
    }
    let sobel = imaging::sobel_magnitude(&imaging::luminance(img));
    let [r, g, b, hh, ss, vv] = rgbhsv;
    ChannelStack {
        width: w,
        height: h,
        planes: [
            GrayImage::new(w, h, r),
            GrayImage::new(w, h, g),
            GrayImage::new(w, h, b),
            GrayImage::new(w, h, hh),
            GrayImage::new(w, h, ss),
            GrayImage::new(w, h, vv),
            sobel,
        ],
    }
}

/// One summed-area table of size `(width+1) x (height+1)`; entry `(x, y)`
/// holds the sum over the source rectangle `[0, x) x [0, y)`.
#[derive(Debug, Clone)]
struct Sat {
    width: usize,
    table: Vec<f64>,
}

impl Sat {
    fn build(values: &[f64], width: usize, height: usize, squared: bool) -> Sat {
        let tw = width + 1;
        let mut table = vec![0.0; tw * (height + 1)];
        for y in 0..height {
            for x in 0..width {
                let mut v = values[y * width + x];
                if squared {
                    v *= v;
                }
                table[(y + 1) * tw + (x + 1)] =
                    v + table[y * tw + (x + 1)] + table[(y + 1) * tw + x] - table[y * tw + x];
            }
        }
        Sat { width: tw, table }
    }

    #[inline]
    fn rect_sum(&self, x: usize, y: usize, size: usize) -> f64 {
        let tw = self.width;
        let (x1, y1) = (x + size, y + size);
        self.table[y1 * tw + x1] + self.table[y * tw + x]
            - self.table[y * tw + x1]
            - self.table[y1 * tw + x]
    }
}

/// Per-plane sum and sum-of-squares tables; supports O(1) patch
/// descriptors anywhere in the image.
#[derive(Debug, Clone)]
pub struct IntegralStats {
    width: usize,
    height: usize,
    sums: [Sat; PLANES],
    sq_sums: [Sat; PLANES],
}

impl IntegralStats {
    pub fn build(stack: &ChannelStack) -> IntegralStats {
        let (w, h) = (stack.width(), stack.height());
        let sums = std::array::from_fn(|i| Sat::build(stack.plane(i).values(), w, h, false));
        let sq_sums = std::array::from_fn(|i| Sat::build(stack.plane(i).values(), w, h, true));
        IntegralStats {
            width: w,
            height: h,
            sums,
            sq_sums,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum of plane values over a rectangle.
    pub fn rect_sum(&self, plane: usize, rect: PatchRect) -> f64 {
        self.sums[plane].rect_sum(rect.x, rect.y, rect.size)
    }

    /// Sum of squared plane values over a rectangle.
    pub fn rect_sq_sum(&self, plane: usize, rect: PatchRect) -> f64 {
        self.sq_sums[plane].rect_sum(rect.x, rect.y, rect.size)
    }
}

/// Convenience bundle: channel stack plus its integral tables.
pub fn image_stats(img: &RasterImage) -> IntegralStats {
    IntegralStats::build(&build_channel_stack(img))
}

/// Mean/std descriptor of a square patch, from the integral tables.
///
/// For each plane, mean = sum/n and std = sqrt(max(0, sq_sum/n - mean^2));
/// the variance is clamped at zero to absorb floating-point cancellation.
pub fn patch_descriptor(stats: &IntegralStats, rect: PatchRect) -> Result<Descriptor> {
    if !rect.fits(stats.width(), stats.height()) {
        return Err(Error::RectOutOfBounds {
            x: rect.x,
            y: rect.y,
            size: rect.size,
            width: stats.width(),
            height: stats.height(),
        });
    }
    Ok(patch_descriptor_unchecked(stats, rect))
}

#[inline]
pub(crate) fn patch_descriptor_unchecked(stats: &IntegralStats, rect: PatchRect) -> Descriptor {
    let inv_n = 1.0 / (rect.size * rect.size) as f64;
    let mut values = [0.0; DESCRIPTOR_LEN];
    for p in 0..PLANES {
        let mean = (stats.rect_sum(p, rect) * inv_n).clamp(0.0, 1.0);
        let var = (stats.rect_sq_sum(p, rect) * inv_n - mean * mean).max(0.0);
        values[2 * p] = mean;
        values[2 * p + 1] = var.sqrt().min(0.5);
    }
    Descriptor { values }
}

/// Precomputed descriptors for every stride-1 patch position of one size.
///
/// Window searches over overlapping candidate patches hit the same
/// positions many times; computing each position once turns a candidate
/// evaluation into a 14-component distance.
#[derive(Debug, Clone)]
pub struct DescriptorField {
    /// Patch side length the field was computed for.
    size: usize,
    /// Number of valid x positions: width - size + 1.
    cols: usize,
    /// Number of valid y positions: height - size + 1.
    rows: usize,
    descriptors: Vec<Descriptor>,
}

impl DescriptorField {
    /// Compute descriptors for all top-left positions of `size`-patches.
    pub fn build(stats: &IntegralStats, size: usize) -> Result<DescriptorField> {
        if size < 1 || size > stats.width() || size > stats.height() {
            return Err(Error::ImageTooSmall {
                width: stats.width(),
                height: stats.height(),
                min: size,
            });
        }
        let cols = stats.width() - size + 1;
        let rows = stats.height() - size + 1;
        let mut descriptors = Vec::with_capacity(cols * rows);
        for y in 0..rows {
            for x in 0..cols {
                descriptors.push(patch_descriptor_unchecked(stats, PatchRect::new(x, y, size)));
            }
        }
        Ok(DescriptorField {
            size,
            cols,
            rows,
            descriptors,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &Descriptor {
        debug_assert!(x < self.cols && y < self.rows);
        &self.descriptors[y * self.cols + x]
    }

    /// Whether a patch at `(x, y)` lies fully inside the source image.
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.cols && y < self.rows
    }
}
