//! Static instrument segmentation: per-scale reference banks built from
//! manually segmented images, and coarse-to-fine k-NN regression that
//! turns a test image into a per-pixel instrument probability map.
//!
//! Patches are tiled non-overlapping from the image origin at every
//! scale; a patch is subdivided into `tau x tau` children exactly when
//! its predicted probability exceeds the subdivide threshold and a finer
//! level exists. Pixels keep the prediction of the patch whose recursion
//! stopped on them; cropped margins stay at zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{
    image_stats, patch_descriptor_unchecked, IntegralStats, PatchRect,
};
use crate::imaging::{BinaryMask, ProbabilityMap, RasterImage};
use crate::knn::{KnnIndex, KnnMode, KnnParams, LabeledPoint, PointSource};

/// Geometric patch-size schedule: `p_min * tau^i` for each level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleLadder {
    pub p_min: usize,
    pub tau: usize,
    pub levels: usize,
    /// Ascending sizes; `sizes[0] == p_min` is the finest level.
    pub sizes: Vec<usize>,
}

impl ScaleLadder {
    pub fn new(p_min: usize, tau: usize, levels: usize) -> Result<ScaleLadder> {
        let sizes = scale_sizes(p_min, tau, levels)?;
        Ok(ScaleLadder {
            p_min,
            tau,
            levels,
            sizes,
        })
    }

    pub fn coarsest(&self) -> usize {
        *self.sizes.last().unwrap()
    }
}

/// The geometric size list `[p_min, p_min*tau, ...]`, checked against
/// overflow and degenerate inputs.
pub fn scale_sizes(p_min: usize, tau: usize, levels: usize) -> Result<Vec<usize>> {
    if p_min < 1 {
        return Err(Error::InvalidParams("p_min must be >= 1".into()));
    }
    if tau < 2 {
        return Err(Error::InvalidParams("tau must be >= 2".into()));
    }
    if levels < 1 {
        return Err(Error::InvalidParams("levels must be >= 1".into()));
    }
    let mut sizes = Vec::with_capacity(levels);
    let mut size = p_min;
    for i in 0..levels {
        if i > 0 {
            size = size.checked_mul(tau).ok_or_else(|| {
                Error::InvalidParams(format!("patch size overflow at level {i}"))
            })?;
        }
        // Anything beyond this bound cannot fit a real image anyway.
        if size > 1 << 20 {
            return Err(Error::InvalidParams(format!(
                "degenerate patch size {size} at level {i}"
            )));
        }
        sizes.push(size);
    }
    Ok(sizes)
}

/// Tunable parameters of the static detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectParams {
    /// Neighbor count for the k-NN regression.
    pub k: usize,
    pub ladder: ScaleLadder,
    /// A patch is subdivided iff its predicted probability is strictly
    /// greater than this; in `[0, 1)` for real runs. Tests may force a
    /// negative value to subdivide unconditionally.
    pub subdivide_threshold: f64,
}

impl DetectParams {
    pub fn new(k: usize, ladder: ScaleLadder, subdivide_threshold: f64) -> Result<DetectParams> {
        if k < 1 {
            return Err(Error::InvalidParams("k must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&subdivide_threshold) {
            return Err(Error::InvalidParams(
                "subdivide_threshold must be in [0, 1)".into(),
            ));
        }
        Ok(DetectParams {
            k,
            ladder,
            subdivide_threshold,
        })
    }
}

/// How reference-bank indices are built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexConfig {
    pub mode: KnnMode,
    pub knn: KnnParams,
    /// Dataset-level seed; each scale level derives its own.
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            mode: KnnMode::Approximate,
            knn: KnnParams::default(),
            seed: 0,
        }
    }
}

pub(crate) fn level_seed(seed: u64, level: usize) -> u64 {
    seed ^ (level as u64 + 1).wrapping_mul(0x517c_c1b7_2722_0a95)
}

/// Per-scale k-NN indices over reference patches, with the id of the
/// image excluded from them (when built for cross-validation).
#[derive(Debug)]
pub struct ReferenceBank {
    sizes: Vec<usize>,
    indices: Vec<KnnIndex>,
    excluded: Option<u32>,
}

impl ReferenceBank {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn index(&self, level: usize) -> &KnnIndex {
        &self.indices[level]
    }

    pub fn excluded(&self) -> Option<u32> {
        self.excluded
    }

    /// Check that the bank was built for this ladder.
    pub fn matches_ladder(&self, ladder: &ScaleLadder) -> bool {
        self.sizes == ladder.sizes
    }
}

/// Fraction of mask bits set inside a square patch.
pub fn patch_label(mask: &BinaryMask, rect: PatchRect) -> Result<f64> {
    if !rect.fits(mask.width(), mask.height()) {
        return Err(Error::RectOutOfBounds {
            x: rect.x,
            y: rect.y,
            size: rect.size,
            width: mask.width(),
            height: mask.height(),
        });
    }
    let mut count = 0usize;
    for y in rect.y..rect.y + rect.size {
        for x in rect.x..rect.x + rect.size {
            if mask.bit(x, y) {
                count += 1;
            }
        }
    }
    Ok(count as f64 / (rect.size * rect.size) as f64)
}

/// Non-overlapping tiling of one image at every ladder size: one labeled
/// point per tile, trailing partial strips cropped. Results are grouped
/// per level, finest first.
pub fn extract_labeled_points(
    stats: &IntegralStats,
    mask: &BinaryMask,
    ladder: &ScaleLadder,
    image_id: u32,
) -> Result<Vec<Vec<LabeledPoint>>> {
    if stats.width() != mask.width() || stats.height() != mask.height() {
        return Err(Error::DimensionMismatch {
            expected: (stats.width(), stats.height()),
            got: (mask.width(), mask.height()),
            context: "image vs mask".into(),
        });
    }
    if stats.width() < ladder.coarsest() || stats.height() < ladder.coarsest() {
        return Err(Error::ImageTooSmall {
            width: stats.width(),
            height: stats.height(),
            min: ladder.coarsest(),
        });
    }
    let mut per_level = Vec::with_capacity(ladder.sizes.len());
    for &size in &ladder.sizes {
        let tiles_x = stats.width() / size;
        let tiles_y = stats.height() / size;
        let mut points = Vec::with_capacity(tiles_x * tiles_y);
        for ty in 0..tiles_y {
            for tx in 0..tiles_x {
                let rect = PatchRect::new(tx * size, ty * size, size);
                let descriptor = patch_descriptor_unchecked(stats, rect);
                let label = patch_label(mask, rect)?;
                points.push(LabeledPoint::new(
                    descriptor,
                    label,
                    PointSource {
                        image: image_id,
                        rect,
                    },
                ));
            }
        }
        per_level.push(points);
    }
    Ok(per_level)
}

/// Build per-level indices from pre-extracted points, dropping the
/// excluded image's contributions.
pub fn assemble_bank(
    points_per_image: &[Vec<Vec<LabeledPoint>>],
    ladder: &ScaleLadder,
    config: IndexConfig,
    exclude: Option<u32>,
) -> Result<ReferenceBank> {
    let mut indices = Vec::with_capacity(ladder.sizes.len());
    for level in 0..ladder.sizes.len() {
        let mut points = Vec::new();
        for (img_idx, per_level) in points_per_image.iter().enumerate() {
            if Some(img_idx as u32) == exclude {
                continue;
            }
            points.extend(per_level[level].iter().cloned());
        }
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        indices.push(KnnIndex::build(
            points,
            config.mode,
            config.knn,
            level_seed(config.seed, level),
        )?);
    }
    Ok(ReferenceBank {
        sizes: ladder.sizes.clone(),
        indices,
        excluded: exclude,
    })
}

/// Build the reference bank for a dataset of (image, mask) pairs,
/// optionally excluding one image for cross-validation.
pub fn build_reference_bank(
    dataset: &[(RasterImage, BinaryMask)],
    params: &DetectParams,
    config: IndexConfig,
    exclude: Option<u32>,
) -> Result<ReferenceBank> {
    if dataset.len() < 2 {
        return Err(Error::DatasetTooSmall {
            have: dataset.len(),
            need: 2,
        });
    }
    let points: Vec<Vec<Vec<LabeledPoint>>> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, (img, mask))| {
            let stats = image_stats(img);
            extract_labeled_points(&stats, mask, &params.ladder, i as u32)
        })
        .collect::<Result<_>>()?;
    assemble_bank(&points, &params.ladder, config, exclude)
}

/// Per-level query counts recorded during a segmentation, finest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentStats {
    pub queries_per_level: Vec<usize>,
}

impl SegmentStats {
    pub fn finest_queries(&self) -> usize {
        self.queries_per_level[0]
    }
}

/// Coarse-to-fine evaluation of an arbitrary per-patch scorer.
///
/// Coarse tiles are processed in parallel; each tile's subtree is
/// sequential and fills a disjoint region, so the result is independent
/// of scheduling.
pub(crate) fn coarse_to_fine<F>(
    width: usize,
    height: usize,
    ladder: &ScaleLadder,
    threshold: f64,
    query: &F,
) -> (ProbabilityMap, SegmentStats)
where
    F: Fn(usize, PatchRect) -> f64 + Sync,
{
    let coarsest = ladder.coarsest();
    let top = ladder.sizes.len() - 1;
    let tiles_x = width / coarsest;
    let tiles_y = height / coarsest;
    let tiles: Vec<(usize, usize)> = (0..tiles_y)
        .flat_map(|ty| (0..tiles_x).map(move |tx| (tx, ty)))
        .collect();

    struct TileOutcome {
        fills: Vec<(PatchRect, f64)>,
        queries: Vec<usize>,
    }

    fn recurse<F: Fn(usize, PatchRect) -> f64 + Sync>(
        level: usize,
        rect: PatchRect,
        ladder: &ScaleLadder,
        threshold: f64,
        query: &F,
        out: &mut TileOutcome,
    ) {
        let p = query(level, rect);
        out.queries[level] += 1;
        if level > 0 && p > threshold {
            let child = ladder.sizes[level - 1];
            for cy in 0..ladder.tau {
                for cx in 0..ladder.tau {
                    recurse(
                        level - 1,
                        PatchRect::new(rect.x + cx * child, rect.y + cy * child, child),
                        ladder,
                        threshold,
                        query,
                        out,
                    );
                }
            }
        } else {
            out.fills.push((rect, p));
        }
    }

    let outcomes: Vec<TileOutcome> = tiles
        .par_iter()
        .map(|&(tx, ty)| {
            let mut out = TileOutcome {
                fills: Vec::new(),
                queries: vec![0; ladder.sizes.len()],
            };
            recurse(
                top,
                PatchRect::new(tx * coarsest, ty * coarsest, coarsest),
                ladder,
                threshold,
                query,
                &mut out,
            );
            out
        })
        .collect();

    let mut map = ProbabilityMap::zeros(width, height);
    let mut queries = vec![0usize; ladder.sizes.len()];
    for outcome in outcomes {
        for (rect, p) in outcome.fills {
            map.fill_rect(rect.x, rect.y, rect.size, p.clamp(0.0, 1.0));
        }
        for (total, q) in queries.iter_mut().zip(outcome.queries) {
            *total += q;
        }
    }
    (
        map,
        SegmentStats {
            queries_per_level: queries,
        },
    )
}

fn check_segment_inputs(
    width: usize,
    height: usize,
    bank: &ReferenceBank,
    params: &DetectParams,
) -> Result<()> {
    if !bank.matches_ladder(&params.ladder) {
        return Err(Error::InvalidParams(
            "reference bank sizes do not match the ladder".into(),
        ));
    }
    if params.k < 1 {
        return Err(Error::InvalidParams("k must be >= 1".into()));
    }
    if width < params.ladder.coarsest() || height < params.ladder.coarsest() {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min: params.ladder.coarsest(),
        });
    }
    Ok(())
}

/// Segment a test image against a reference bank, coarse-to-fine.
pub fn segment(
    img: &RasterImage,
    bank: &ReferenceBank,
    params: &DetectParams,
) -> Result<ProbabilityMap> {
    Ok(segment_with_stats(img, bank, params)?.0)
}

/// As [`segment`], also returning per-level query counts.
pub fn segment_with_stats(
    img: &RasterImage,
    bank: &ReferenceBank,
    params: &DetectParams,
) -> Result<(ProbabilityMap, SegmentStats)> {
    let stats = image_stats(img);
    segment_stats_with_counts(&stats, bank, params)
}

/// Segmentation over precomputed integral tables.
pub fn segment_stats_with_counts(
    stats: &IntegralStats,
    bank: &ReferenceBank,
    params: &DetectParams,
) -> Result<(ProbabilityMap, SegmentStats)> {
    check_segment_inputs(stats.width(), stats.height(), bank, params)?;
    let query = |level: usize, rect: PatchRect| -> f64 {
        let d = patch_descriptor_unchecked(stats, rect);
        bank.index(level)
            .query_regress(&d, params.k)
            .expect("validated k")
            .probability
    };
    Ok(coarse_to_fine(
        stats.width(),
        stats.height(),
        &params.ladder,
        params.subdivide_threshold,
        &query,
    ))
}

/// Dense evaluation at the finest ladder size only: every finest tile is
/// queried, margins stay zero. The oracle for the coarse-to-fine
/// equivalence and the baseline for query-count comparisons.
pub fn dense_segment(
    img: &RasterImage,
    bank: &ReferenceBank,
    params: &DetectParams,
) -> Result<ProbabilityMap> {
    let stats = image_stats(img);
    dense_segment_stats(&stats, bank, params)
}

/// [`dense_segment`] over precomputed integral tables.
pub fn dense_segment_stats(
    stats: &IntegralStats,
    bank: &ReferenceBank,
    params: &DetectParams,
) -> Result<ProbabilityMap> {
    check_segment_inputs(stats.width(), stats.height(), bank, params)?;
    let size = params.ladder.sizes[0];
    let tiles_x = stats.width() / size;
    let tiles_y = stats.height() / size;
    let rows: Vec<Vec<f64>> = (0..tiles_y)
        .into_par_iter()
        .map(|ty| {
            (0..tiles_x)
                .map(|tx| {
                    let rect = PatchRect::new(tx * size, ty * size, size);
                    let d = patch_descriptor_unchecked(stats, rect);
                    bank.index(0)
                        .query_regress(&d, params.k)
                        .expect("validated k")
                        .probability
                })
                .collect()
        })
        .collect();
    let mut map = ProbabilityMap::zeros(stats.width(), stats.height());
    for (ty, row) in rows.iter().enumerate() {
        for (tx, &p) in row.iter().enumerate() {
            map.fill_rect(tx * size, ty * size, size, p.clamp(0.0, 1.0));
        }
    }
    Ok(map)
}

/// Number of tiles a dense finest-level evaluation scores.
pub fn dense_query_count(width: usize, height: usize, ladder: &ScaleLadder) -> usize {
    (width / ladder.sizes[0]) * (height / ladder.sizes[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..w * h)
            .map(|_| [rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()])
            .collect();
        RasterImage::new(w, h, pixels)
    }

    /// Image with a distinctly colored square of `size` at (x0, y0) on a
    /// noisy dark background, plus the matching mask.
    fn scene(w: usize, h: usize, x0: usize, y0: usize, size: usize, seed: u64)
        -> (RasterImage, BinaryMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = RasterImage::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                let noise = rng.gen_range(0..30u8);
                img.set_pixel(x, y, [noise, noise / 2, noise]);
            }
        }
        let mut mask = BinaryMask::filled(w, h, false);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                img.set_pixel(x, y, [220, 40 + rng.gen_range(0..10u8), 60]);
                mask.set_bit(x, y, true);
            }
        }
        (img, mask)
    }

    fn exact_config() -> IndexConfig {
        IndexConfig {
            mode: KnnMode::Exact,
            knn: KnnParams::default(),
            seed: 9,
        }
    }

    #[test]
    fn scale_sizes_examples() {
        assert_eq!(scale_sizes(5, 4, 3).unwrap(), vec![5, 20, 80]);
        assert_eq!(scale_sizes(7, 2, 1).unwrap(), vec![7]);
        assert_eq!(scale_sizes(3, 3, 3).unwrap(), vec![3, 9, 27]);
    }

    #[test]
    fn scale_sizes_rejects_degenerate_inputs() {
        assert!(scale_sizes(0, 2, 1).is_err());
        assert!(scale_sizes(5, 1, 2).is_err());
        assert!(scale_sizes(5, 4, 0).is_err());
        assert!(scale_sizes(1000, 5, 12).is_err()); // blows past any image
    }

    #[test]
    fn patch_label_ratios() {
        let mut mask = BinaryMask::filled(8, 8, false);
        for y in 0..4 {
            for x in 0..2 {
                mask.set_bit(x, y, true);
            }
        }
        // 8 of 16 bits set in the top-left 4x4.
        assert_eq!(patch_label(&mask, PatchRect::new(0, 0, 4)).unwrap(), 0.5);
        assert_eq!(patch_label(&mask, PatchRect::new(4, 4, 4)).unwrap(), 0.0);
        let full = BinaryMask::filled(8, 8, true);
        assert_eq!(patch_label(&full, PatchRect::new(1, 1, 4)).unwrap(), 1.0);
        assert!(patch_label(&mask, PatchRect::new(6, 6, 4)).is_err());
    }

    #[test]
    fn bank_excludes_the_requested_image() {
        let ladder = ScaleLadder::new(4, 2, 2).unwrap();
        let params = DetectParams::new(1, ladder, 0.0).unwrap();
        let (img0, mask0) = scene(16, 16, 0, 0, 8, 1);
        let (img1, mask1) = scene(16, 16, 8, 8, 8, 2);
        let bank =
            build_reference_bank(&[(img0, mask0), (img1, mask1)], &params, exact_config(), Some(0))
                .unwrap();
        for level in 0..2 {
            assert!(bank
                .index(level)
                .points()
                .iter()
                .all(|p| p.source.image == 1));
        }
        assert_eq!(bank.excluded(), Some(0));
    }

    #[test]
    fn tiling_counts_match_grid() {
        let ladder = ScaleLadder::new(5, 4, 2).unwrap(); // sizes [5, 20]
        let (img, mask) = scene(100, 100, 10, 10, 20, 3);
        let stats = image_stats(&img);
        let points = extract_labeled_points(&stats, &mask, &ladder, 0).unwrap();
        assert_eq!(points[1].len(), 25); // (100/20)^2
        assert_eq!(points[0].len(), 400); // (100/5)^2
    }

    #[test]
    fn bank_labels_match_direct_recount() {
        let ladder = ScaleLadder::new(4, 2, 2).unwrap();
        let (img, mask) = scene(32, 32, 9, 6, 13, 4);
        let stats = image_stats(&img);
        let points = extract_labeled_points(&stats, &mask, &ladder, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let level = rng.gen_range(0..2);
            let p = &points[level][rng.gen_range(0..points[level].len())];
            // Independent nested-loop recount.
            let mut count = 0;
            for y in p.source.rect.y..p.source.rect.y + p.source.rect.size {
                for x in p.source.rect.x..p.source.rect.x + p.source.rect.size {
                    if mask.bit(x, y) {
                        count += 1;
                    }
                }
            }
            let want = count as f64 / (p.source.rect.size * p.source.rect.size) as f64;
            assert_eq!(p.label, want);
        }
    }

    #[test]
    fn dataset_too_small_is_rejected() {
        let ladder = ScaleLadder::new(4, 2, 1).unwrap();
        let params = DetectParams::new(1, ladder, 0.0).unwrap();
        let (img, mask) = scene(16, 16, 0, 0, 4, 6);
        assert!(matches!(
            build_reference_bank(&[(img, mask)], &params, exact_config(), None),
            Err(Error::DatasetTooSmall { .. })
        ));
    }

    #[test]
    fn image_smaller_than_coarsest_is_rejected() {
        let ladder = ScaleLadder::new(8, 4, 2).unwrap(); // coarsest 32
        let (img, mask) = scene(16, 16, 0, 0, 4, 7);
        let stats = image_stats(&img);
        assert!(matches!(
            extract_labeled_points(&stats, &mask, &ladder, 0),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn zero_coarse_prediction_fills_zeros_and_stops() {
        let ladder = ScaleLadder::new(4, 2, 2).unwrap();
        let params = DetectParams::new(1, ladder, 0.0).unwrap();
        // References with empty masks: every stored label is 0.
        let (img0, _) = scene(16, 16, 0, 0, 8, 8);
        let (img1, _) = scene(16, 16, 8, 8, 8, 9);
        let dataset = vec![
            (img0, BinaryMask::filled(16, 16, false)),
            (img1, BinaryMask::filled(16, 16, false)),
        ];
        let bank = build_reference_bank(&dataset, &params, exact_config(), None).unwrap();
        let test = random_image(16, 16, 10);
        let (map, stats) = segment_with_stats(&test, &bank, &params).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
        // No coarse patch passed the threshold, so no finest queries.
        assert_eq!(stats.queries_per_level[0], 0);
        assert_eq!(stats.queries_per_level[1], 4); // 16/8 squared
    }

    #[test]
    fn always_subdivide_equals_dense_finest() {
        let ladder = ScaleLadder::new(4, 2, 2).unwrap();
        let (img0, mask0) = scene(24, 24, 4, 4, 8, 11);
        let (img1, mask1) = scene(24, 24, 12, 8, 8, 12);
        let dataset = vec![(img0, mask0), (img1, mask1)];
        let mut params = DetectParams::new(3, ladder, 0.0).unwrap();
        let bank = build_reference_bank(&dataset, &params, exact_config(), None).unwrap();
        let test = random_image(24, 24, 13);
        params.subdivide_threshold = -1.0; // always subdivide
        let c2f = segment(&test, &bank, &params).unwrap();
        let dense = dense_segment(&test, &bank, &params).unwrap();
        assert_eq!(c2f, dense);
    }

    #[test]
    fn margins_stay_zero() {
        let ladder = ScaleLadder::new(4, 2, 1).unwrap();
        let params = DetectParams::new(1, ladder, 0.0).unwrap();
        // 18x18 with size-4 tiles: 2-pixel margins on both axes.
        let (img0, m0) = scene(18, 18, 0, 0, 8, 14);
        let (img1, m1) = scene(18, 18, 8, 8, 8, 15);
        let bank =
            build_reference_bank(&[(img0, m0), (img1, m1)], &params, exact_config(), None).unwrap();
        let test = RasterImage::filled(18, 18, [220, 45, 60]);
        let map = segment(&test, &bank, &params).unwrap();
        for y in 0..18 {
            assert_eq!(map.value(16, y), 0.0);
            assert_eq!(map.value(17, y), 0.0);
        }
        for x in 0..18 {
            assert_eq!(map.value(x, 16), 0.0);
            assert_eq!(map.value(x, 17), 0.0);
        }
    }

    #[test]
    fn identical_reference_yields_perfect_az() {
        // Two identical images whose mask is aligned to the finest grid:
        // each excluded patch coincides exactly with a reference patch,
        // so every finest-level label is 0 or 1 and ranking is perfect.
        let ladder = ScaleLadder::new(4, 2, 2).unwrap();
        let params = DetectParams::new(1, ladder, 0.0).unwrap();
        let (img, mask) = scene(24, 24, 8, 8, 8, 16);
        let dataset = vec![(img.clone(), mask.clone()), (img.clone(), mask.clone())];
        let bank = build_reference_bank(&dataset, &params, exact_config(), Some(0)).unwrap();
        let map = segment(&img, &bank, &params).unwrap();
        let az = crate::eval::roc_az(&map, &mask).unwrap();
        assert_eq!(az.value, 1.0);
    }

    #[test]
    fn segmentation_is_deterministic() {
        let ladder = ScaleLadder::new(4, 2, 2).unwrap();
        let params = DetectParams::new(5, ladder, 0.0).unwrap();
        let (img0, mask0) = scene(32, 32, 4, 4, 12, 17);
        let (img1, mask1) = scene(32, 32, 16, 8, 12, 18);
        let dataset = vec![(img0, mask0), (img1, mask1)];
        let config = IndexConfig {
            mode: KnnMode::Approximate,
            knn: KnnParams::default(),
            seed: 42,
        };
        let test = random_image(32, 32, 19);
        let bank_a = build_reference_bank(&dataset, &params, config, None).unwrap();
        let bank_b = build_reference_bank(&dataset, &params, config, None).unwrap();
        let a = segment(&test, &bank_a, &params).unwrap();
        let b = segment(&test, &bank_b, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_bank_is_rejected() {
        let ladder_a = ScaleLadder::new(4, 2, 2).unwrap();
        let ladder_b = ScaleLadder::new(5, 2, 2).unwrap();
        let params_a = DetectParams::new(1, ladder_a, 0.0).unwrap();
        let params_b = DetectParams::new(1, ladder_b, 0.0).unwrap();
        let (img0, m0) = scene(40, 40, 0, 0, 8, 20);
        let (img1, m1) = scene(40, 40, 8, 8, 8, 21);
        let bank =
            build_reference_bank(&[(img0, m0), (img1, m1)], &params_a, exact_config(), None)
                .unwrap();
        let test = random_image(40, 40, 22);
        assert!(segment(&test, &bank, &params_b).is_err());
    }
}
