//! Synthetic operating-table scenes: a desk-scale stand-in for real
//! table footage. Images show a noisy green tablecloth with convex
//! metallic or colored instrument-like shapes plus beige towel-like
//! regions that stay out of the ground-truth masks. Dynamic pairs add,
//! remove and jitter shapes between the 'before' and 'after' frames.
//!
//! Generation is deterministic per seed: the same call writes
//! byte-identical files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetKind, DatasetManifest, DynamicRow, ManifestRows, StaticRow};
use crate::error::{Error, Result};
use crate::imaging::{self, BinaryMask, RasterImage};

pub const DEFAULT_WIDTH: usize = 640;
pub const DEFAULT_HEIGHT: usize = 480;

const TABLE_GREEN: [u8; 3] = [54, 118, 74];
const TOWEL_BEIGE: [u8; 3] = [206, 196, 168];
/// Handle colors for non-metallic instruments; green-ish hues excluded
/// so instruments never melt into the tablecloth.
const HANDLE_COLORS: [[u8; 3]; 5] = [
    [45, 65, 185],
    [150, 45, 165],
    [205, 125, 45],
    [175, 35, 35],
    [35, 160, 175],
];
/// Minimum gap between shape hulls; large enough that dynamic jitter
/// (up to 15 px per axis) can never make shapes collide.
const PLACEMENT_GAP: f64 = 38.0;
const BORDER_PAD: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Instrument,
    Towel,
}

#[derive(Debug, Clone)]
struct Shape {
    /// Convex hull vertices, counter-clockwise.
    vertices: Vec<(f64, f64)>,
    radius: f64,
    center: (f64, f64),
    color: [u8; 3],
    kind: ShapeKind,
}

impl Shape {
    fn translated(&self, dx: f64, dy: f64) -> Shape {
        Shape {
            vertices: self.vertices.iter().map(|&(x, y)| (x + dx, y + dy)).collect(),
            center: (self.center.0 + dx, self.center.1 + dy),
            ..self.clone()
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (x0, y0) = self.vertices[i];
            let (x1, y1) = self.vertices[(i + 1) % n];
            if (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0) < 0.0 {
                return false;
            }
        }
        true
    }

    fn bbox(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let xs = self.vertices.iter().map(|v| v.0);
        let ys = self.vertices.iter().map(|v| v.1);
        let x0 = xs.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y0 = ys.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let x1 = (xs.fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(width - 1);
        let y1 = (ys.fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(height - 1);
        (x0, y0, x1, y1)
    }
}

/// Andrew's monotone chain. The hull comes out with interior points on
/// the positive-cross side of every directed edge, matching
/// [`Shape::contains`].
fn convex_hull(mut points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 1);
    for &p in &points {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in points.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn jitter_color(base: [u8; 3], amplitude: i16, rng: &mut ChaCha8Rng) -> [u8; 3] {
    let mut out = [0u8; 3];
    for (o, b) in out.iter_mut().zip(base.iter()) {
        let v = *b as i16 + rng.gen_range(-amplitude..=amplitude);
        *o = v.clamp(0, 255) as u8;
    }
    out
}

/// One random convex shape around `center`, elongated for instruments
/// and broader for towels.
fn make_shape(
    center: (f64, f64),
    scale: f64,
    kind: ShapeKind,
    rng: &mut ChaCha8Rng,
) -> Shape {
    let (a, b) = match kind {
        ShapeKind::Instrument => {
            let a = rng.gen_range(18.0..=55.0) * scale;
            let b = rng.gen_range((a * 0.2).max(7.0 * scale)..=a.max(7.5 * scale));
            (a, b)
        }
        ShapeKind::Towel => {
            let a = rng.gen_range(40.0..=75.0) * scale;
            let b = rng.gen_range(a * 0.5..=a);
            (a, b)
        }
    };
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let m = rng.gen_range(7..=12);
    let mut points = Vec::with_capacity(m);
    for i in 0..m {
        let phi = (i as f64 / m as f64) * std::f64::consts::TAU
            + rng.gen_range(0.0..std::f64::consts::TAU / m as f64);
        let s = rng.gen_range(0.82..=1.0);
        let (ex, ey) = (a * s * phi.cos(), b * s * phi.sin());
        points.push((
            center.0 + ex * theta.cos() - ey * theta.sin(),
            center.1 + ex * theta.sin() + ey * theta.cos(),
        ));
    }
    let color = match kind {
        ShapeKind::Instrument => {
            if rng.gen_bool(0.6) {
                let v = rng.gen_range(120..=210u8);
                jitter_color([v, v, v], 8, rng)
            } else {
                let base = HANDLE_COLORS[rng.gen_range(0..HANDLE_COLORS.len())];
                jitter_color(base, 12, rng)
            }
        }
        ShapeKind::Towel => jitter_color(TOWEL_BEIGE, 6, rng),
    };
    Shape {
        vertices: convex_hull(points),
        radius: a,
        center,
        color,
        kind,
    }
}

/// Rejection-sample non-overlapping shapes. Shapes that cannot be placed
/// within the attempt budget are dropped.
fn place_shapes(
    width: usize,
    height: usize,
    kinds: &[ShapeKind],
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Shape> {
    let mut placed: Vec<Shape> = Vec::new();
    let max_r = 80.0 * scale;
    let (lo_x, hi_x) = (BORDER_PAD + max_r, width as f64 - BORDER_PAD - max_r);
    let (lo_y, hi_y) = (BORDER_PAD + max_r, height as f64 - BORDER_PAD - max_r);
    if lo_x >= hi_x || lo_y >= hi_y {
        return placed;
    }
    for &kind in kinds {
        let mut attempts = 0;
        while attempts < 300 {
            attempts += 1;
            let shape = {
                let cx = rng.gen_range(lo_x..hi_x);
                let cy = rng.gen_range(lo_y..hi_y);
                make_shape((cx, cy), scale, kind, rng)
            };
            let clear = placed.iter().all(|other| {
                let dx = shape.center.0 - other.center.0;
                let dy = shape.center.1 - other.center.1;
                (dx * dx + dy * dy).sqrt() >= shape.radius + other.radius + PLACEMENT_GAP * scale
            });
            if clear {
                placed.push(shape);
                break;
            }
        }
    }
    placed
}

/// Render the tablecloth plus shapes; per-pixel noise gives both the
/// cloth and the shapes a light texture.
fn render(width: usize, height: usize, shapes: &[Shape], rng: &mut ChaCha8Rng) -> RasterImage {
    let mut img = RasterImage::filled(width, height, TABLE_GREEN);
    for y in 0..height {
        for x in 0..width {
            img.set_pixel(x, y, jitter_color(TABLE_GREEN, 10, rng));
        }
    }
    for shape in shapes {
        let (x0, y0, x1, y1) = shape.bbox(width, height);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    img.set_pixel(x, y, jitter_color(shape.color, 7, rng));
                }
            }
        }
    }
    img
}

/// Mask of the instrument shapes in a subset (towels never count).
fn mask_of(width: usize, height: usize, shapes: &[&Shape]) -> BinaryMask {
    let mut mask = BinaryMask::filled(width, height, false);
    for shape in shapes {
        if shape.kind != ShapeKind::Instrument {
            continue;
        }
        let (x0, y0, x1, y1) = shape.bbox(width, height);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    mask.set_bit(x, y, true);
                }
            }
        }
    }
    mask
}

fn item_seed(seed: u64, kind: DatasetKind, index: usize) -> u64 {
    let tag = match kind {
        DatasetKind::Static => 0x53u64,
        DatasetKind::Dynamic => 0x44u64,
    };
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (tag << 56)
}

fn ensure_dir(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Write {
        path: out_dir.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Generate `n` synthetic scenes (or pairs) at the default 640x480
/// resolution, write them plus `manifest.csv` under `out_dir`, and
/// return the manifest.
pub fn generate_synthetic_dataset(
    kind: DatasetKind,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    generate_synthetic_dataset_sized(kind, n, seed, DEFAULT_WIDTH, DEFAULT_HEIGHT, out_dir)
}

/// As [`generate_synthetic_dataset`] with explicit scene dimensions;
/// shape sizes scale with the smaller dimension.
pub fn generate_synthetic_dataset_sized(
    kind: DatasetKind,
    n: usize,
    seed: u64,
    width: usize,
    height: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n < 2 {
        return Err(Error::DatasetTooSmall { have: n, need: 2 });
    }
    if width < 64 || height < 64 {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min: 64,
        });
    }
    ensure_dir(out_dir)?;
    let scale = (width.min(height) as f64 / 480.0).clamp(0.3, 1.0);
    match kind {
        DatasetKind::Static => {
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, kind, i));
                let shapes = static_scene_shapes(width, height, scale, &mut rng);
                let img = render(width, height, &shapes, &mut rng);
                let mask = mask_of(width, height, &shapes.iter().collect::<Vec<_>>());
                let image_name = format!("img_{i:03}.png");
                let mask_name = format!("mask_{i:03}.png");
                imaging::save_image(&img, &out_dir.join(&image_name))?;
                imaging::save_mask(&mask, &out_dir.join(&mask_name))?;
                rows.push(StaticRow {
                    image: image_name.into(),
                    mask: mask_name.into(),
                });
            }
            let manifest = DatasetManifest {
                base_dir: out_dir.to_path_buf(),
                rows: ManifestRows::Static(rows),
            };
            manifest.save(&out_dir.join("manifest.csv"))?;
            Ok(manifest)
        }
        DatasetKind::Dynamic => {
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, kind, i));
                let pair = dynamic_scene(width, height, scale, &mut rng);
                let names = [
                    format!("pair_{i:03}_before.png"),
                    format!("pair_{i:03}_after.png"),
                    format!("pair_{i:03}_appeared.png"),
                    format!("pair_{i:03}_disappeared.png"),
                ];
                imaging::save_image(&pair.0, &out_dir.join(&names[0]))?;
                imaging::save_image(&pair.1, &out_dir.join(&names[1]))?;
                imaging::save_mask(&pair.2, &out_dir.join(&names[2]))?;
                imaging::save_mask(&pair.3, &out_dir.join(&names[3]))?;
                rows.push(DynamicRow {
                    before: PathBuf::from(&names[0]),
                    after: PathBuf::from(&names[1]),
                    appeared_mask: PathBuf::from(&names[2]),
                    disappeared_mask: PathBuf::from(&names[3]),
                });
            }
            let manifest = DatasetManifest {
                base_dir: out_dir.to_path_buf(),
                rows: ManifestRows::Dynamic(rows),
            };
            manifest.save(&out_dir.join("manifest.csv"))?;
            Ok(manifest)
        }
    }
}

fn static_scene_shapes(
    width: usize,
    height: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Shape> {
    let n_instruments = rng.gen_range(3..=8);
    let n_towels = rng.gen_range(0..=2);
    let mut kinds = vec![ShapeKind::Towel; n_towels];
    kinds.extend(std::iter::repeat(ShapeKind::Instrument).take(n_instruments));
    place_shapes(width, height, &kinds, scale, rng)
}

/// Build one before/after pair: kept shapes are jittered by up to
/// 15 px per axis, removed shapes exist only in 'before', added shapes
/// only in 'after'.
fn dynamic_scene(
    width: usize,
    height: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> (RasterImage, RasterImage, BinaryMask, BinaryMask) {
    let kept_n = rng.gen_range(3..=6);
    let (added_n, removed_n) = loop {
        let a = rng.gen_range(0..=2);
        let r = rng.gen_range(0..=2);
        if a + r > 0 {
            break (a, r);
        }
    };
    let towels_n = rng.gen_range(0..=2);
    let mut kinds = vec![ShapeKind::Towel; towels_n];
    kinds.extend(std::iter::repeat(ShapeKind::Instrument).take(kept_n + added_n + removed_n));
    let shapes = place_shapes(width, height, &kinds, scale, rng);

    let (towels, instruments): (Vec<&Shape>, Vec<&Shape>) = shapes
        .iter()
        .partition(|s| s.kind == ShapeKind::Towel);
    // The placement loop may drop shapes in crowded scenes; removed and
    // added sets shrink before the kept set does.
    let have = instruments.len();
    let removed_n = removed_n.min(have.saturating_sub(1));
    let added_n = added_n.min(have.saturating_sub(removed_n));
    let (removed, rest) = instruments.split_at(removed_n);
    let (added, kept) = rest.split_at(added_n.min(rest.len()));

    let max_jitter = (15.0 * scale).round().max(1.0) as i64;
    // 'before': kept + removed (+ towels); 'after': kept (jittered) +
    // added (+ towels, jittered).
    let before_shapes: Vec<Shape> = kept
        .iter()
        .chain(removed.iter())
        .chain(towels.iter())
        .map(|s| (*s).clone())
        .collect();
    let mut after_shapes: Vec<Shape> = Vec::new();
    for shape in kept.iter().map(|s| (*s).clone()) {
        let dx = rng.gen_range(-max_jitter..=max_jitter) as f64;
        let dy = rng.gen_range(-max_jitter..=max_jitter) as f64;
        after_shapes.push(shape.translated(dx, dy));
    }
    after_shapes.extend(added.iter().map(|s| (*s).clone()));
    for shape in towels.iter().map(|s| (*s).clone()) {
        let dx = rng.gen_range(-max_jitter..=max_jitter) as f64;
        let dy = rng.gen_range(-max_jitter..=max_jitter) as f64;
        after_shapes.push(shape.translated(dx, dy));
    }

    let before = render(width, height, &before_shapes, rng);
    let after = render(width, height, &after_shapes, rng);
    let appeared = mask_of(width, height, &added.to_vec());
    let disappeared = mask_of(width, height, &removed.to_vec());
    (before, after, appeared, disappeared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_static_dataset;

    fn dir_digest(dir: &Path) -> Vec<(String, u64)> {
        let mut entries: Vec<(String, u64)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                let bytes = std::fs::read(e.path()).unwrap();
                // FNV-1a over the file contents.
                let mut hash = 0xcbf29ce484222325u64;
                for b in bytes {
                    hash ^= b as u64;
                    hash = hash.wrapping_mul(0x100000001b3);
                }
                (e.file_name().to_string_lossy().into_owned(), hash)
            })
            .collect();
        entries.sort();
        entries
    }

    #[test]
    fn same_seed_writes_identical_files() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_synthetic_dataset_sized(DatasetKind::Static, 2, 7, 160, 128, dir_a.path())
            .unwrap();
        generate_synthetic_dataset_sized(DatasetKind::Static, 2, 7, 160, 128, dir_b.path())
            .unwrap();
        assert_eq!(dir_digest(dir_a.path()), dir_digest(dir_b.path()));
        let dir_c = tempfile::tempdir().unwrap();
        generate_synthetic_dataset_sized(DatasetKind::Static, 2, 8, 160, 128, dir_c.path())
            .unwrap();
        assert_ne!(dir_digest(dir_a.path()), dir_digest(dir_c.path()));
    }

    #[test]
    fn static_manifest_is_complete() {
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            generate_synthetic_dataset_sized(DatasetKind::Static, 2, 3, 192, 160, dir.path())
                .unwrap();
        assert_eq!(manifest.len(), 2);
        // Reload from disk; all files must exist and parse.
        let loaded = DatasetManifest::load(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.len(), 2);
        let data = load_static_dataset(&loaded, false, 1).unwrap();
        for (img, mask) in &data {
            assert_eq!((img.width(), img.height()), (192, 160));
            // Instruments exist and stay well below a third of the frame.
            let fg = mask.count_ones() as f64 / (192.0 * 160.0);
            assert!(fg > 0.0 && fg < 0.30, "foreground fraction {fg}");
        }
    }

    #[test]
    fn masks_exclude_towel_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut towels_seen = 0;
        for _ in 0..10 {
            let shapes = static_scene_shapes(256, 192, 0.4, &mut rng);
            let img = render(256, 192, &shapes, &mut rng);
            let mask = mask_of(256, 192, &shapes.iter().collect::<Vec<_>>());
            for shape in &shapes {
                let (cx, cy) = (shape.center.0 as usize, shape.center.1 as usize);
                if shape.kind == ShapeKind::Towel {
                    towels_seen += 1;
                    // Rendered beige in the image, absent from the mask.
                    assert!(!mask.bit(cx, cy));
                    let [r, g, b] = img.pixel(cx, cy);
                    for (got, want) in [r, g, b].iter().zip(TOWEL_BEIGE) {
                        assert!((*got as i16 - want as i16).abs() <= 13);
                    }
                } else {
                    assert!(mask.bit(cx, cy));
                }
            }
        }
        assert!(towels_seen > 0);
    }

    #[test]
    fn dynamic_pair_masks_match_change_counts() {
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            generate_synthetic_dataset_sized(DatasetKind::Dynamic, 6, 5, 224, 192, dir.path())
                .unwrap();
        let ManifestRows::Dynamic(rows) = &manifest.rows else {
            panic!("expected dynamic rows");
        };
        assert_eq!(rows.len(), 6);
        let mut any_appeared = false;
        let mut any_disappeared = false;
        for row in rows {
            let appeared = imaging::load_mask(&dir.path().join(&row.appeared_mask)).unwrap();
            let disappeared =
                imaging::load_mask(&dir.path().join(&row.disappeared_mask)).unwrap();
            // At least one direction changed in every pair.
            assert!(appeared.count_ones() + disappeared.count_ones() > 0);
            any_appeared |= appeared.count_ones() > 0;
            any_disappeared |= disappeared.count_ones() > 0;
        }
        assert!(any_appeared && any_disappeared);
    }

    #[test]
    fn tiny_datasets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            generate_synthetic_dataset(DatasetKind::Static, 1, 0, dir.path()),
            Err(Error::DatasetTooSmall { .. })
        ));
    }
}
