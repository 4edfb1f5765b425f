//! Dynamic instrument detection: given a 'before'/'after' image pair,
//! find instruments that appeared (and, by swapping the pair, those that
//! disappeared) via motion-compensated patch matching and k-NN regression
//! over change descriptors.
//!
//! Each patch of the 'after' image is matched to the closest patch inside
//! a window centered on its position in the 'before' image; the change is
//! described by the componentwise descriptor difference. Instruments that
//! merely moved produce near-zero differences, instruments that entered
//! the scene have no good match and produce large ones.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{
    image_stats, patch_descriptor_unchecked, Descriptor, DescriptorField, IntegralStats,
    PatchRect, DESCRIPTOR_LEN,
};
use crate::imaging::{BinaryMask, ProbabilityMap, RasterImage};
use crate::knn::{LabeledPoint, PointSource};
use crate::segment::{
    assemble_bank, coarse_to_fine, DetectParams, IndexConfig, ReferenceBank, ScaleLadder,
    SegmentStats,
};

/// A 'before'/'after' frame pair with optional ground truth: the
/// appeared mask annotates the 'after' image, the disappeared mask the
/// 'before' image.
#[derive(Debug, Clone)]
pub struct ActionPair {
    pub before: RasterImage,
    pub after: RasterImage,
    pub appeared_mask: Option<BinaryMask>,
    pub disappeared_mask: Option<BinaryMask>,
}

impl ActionPair {
    pub fn new(
        before: RasterImage,
        after: RasterImage,
        appeared_mask: Option<BinaryMask>,
        disappeared_mask: Option<BinaryMask>,
    ) -> Result<ActionPair> {
        if before.width() != after.width() || before.height() != after.height() {
            return Err(Error::DimensionMismatch {
                expected: (before.width(), before.height()),
                got: (after.width(), after.height()),
                context: "'before' vs 'after'".into(),
            });
        }
        for (mask, img, what) in [
            (&appeared_mask, &after, "appeared mask vs 'after'"),
            (&disappeared_mask, &before, "disappeared mask vs 'before'"),
        ] {
            if let Some(m) = mask {
                if m.width() != img.width() || m.height() != img.height() {
                    return Err(Error::DimensionMismatch {
                        expected: (img.width(), img.height()),
                        got: (m.width(), m.height()),
                        context: what.to_string(),
                    });
                }
            }
        }
        Ok(ActionPair {
            before,
            after,
            appeared_mask,
            disappeared_mask,
        })
    }

    /// Exchange 'before' and 'after': appearance detection on the swapped
    /// pair is disappearance detection on the original.
    pub fn swapped(&self) -> ActionPair {
        ActionPair {
            before: self.after.clone(),
            after: self.before.clone(),
            appeared_mask: self.disappeared_mask.clone(),
            disappeared_mask: self.appeared_mask.clone(),
        }
    }
}

/// Static-detector parameters plus the motion-compensation window.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicParams {
    pub base: DetectParams,
    /// Window side length (odd); candidate displacements are bounded by
    /// `(w_size - 1) / 2` per axis.
    pub w_size: usize,
    /// Search step at the finest level; coarser levels use
    /// `max(stride, size / 5)` since they only gate subdivision.
    pub stride: usize,
}

impl DynamicParams {
    pub fn new(base: DetectParams, w_size: usize, stride: usize) -> Result<DynamicParams> {
        if w_size < 1 || w_size % 2 == 0 {
            return Err(Error::InvalidParams("w_size must be odd and >= 1".into()));
        }
        if stride < 1 {
            return Err(Error::InvalidParams("stride must be >= 1".into()));
        }
        Ok(DynamicParams {
            base,
            w_size,
            stride,
        })
    }

    /// Search stride for a ladder level (0 = finest).
    pub fn stride_for(&self, level: usize) -> usize {
        if level == 0 {
            self.stride
        } else {
            self.stride.max(self.base.ladder.sizes[level] / 5)
        }
    }
}

/// Best window match for one query patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    /// Matched patch position in the searched image.
    pub rect: PatchRect,
    /// Displacement (dx, dy) from the query position.
    pub displacement: (isize, isize),
    /// Euclidean descriptor distance at the match.
    pub distance: f64,
    /// Descriptor of the matched patch.
    pub v2: Descriptor,
}

/// Paired detection output: appearance probabilities on the 'after'
/// image, disappearance probabilities on the 'before' image.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMap {
    pub appeared: ProbabilityMap,
    pub disappeared: ProbabilityMap,
}

/// Componentwise `v2 - v1`: the change descriptor of a patch against its
/// matched counterpart.
pub fn change_descriptor(v1: &Descriptor, v2: &Descriptor) -> Descriptor {
    let mut values = [0.0; DESCRIPTOR_LEN];
    for i in 0..DESCRIPTOR_LEN {
        values[i] = v2.values[i] - v1.values[i];
    }
    Descriptor::new(values)
}

/// Candidate displacement steps along one axis: multiples of `stride`
/// within `[-radius, radius]`, always including zero.
#[inline]
fn offsets(radius: usize, stride: usize) -> impl Iterator<Item = isize> {
    let k = (radius / stride) as isize;
    let s = stride as isize;
    (-k..=k).map(move |i| i * s)
}

fn best_match_inner<D>(
    query: &Descriptor,
    rect: PatchRect,
    target_width: usize,
    target_height: usize,
    w_size: usize,
    stride: usize,
    descriptor_at: D,
) -> MatchResult
where
    D: Fn(usize, usize) -> Descriptor,
{
    let radius = (w_size - 1) / 2;
    let mut best: Option<(f64, i64, (isize, isize))> = None;
    let mut best_rect = rect;
    let mut best_desc = Descriptor::zero();
    for dy in offsets(radius, stride) {
        let y = rect.y as isize + dy;
        if y < 0 || y as usize + rect.size > target_height {
            continue;
        }
        for dx in offsets(radius, stride) {
            let x = rect.x as isize + dx;
            if x < 0 || x as usize + rect.size > target_width {
                continue;
            }
            let cand = descriptor_at(x as usize, y as usize);
            let d2 = crate::features::distance_sq(query, &cand);
            let norm = (dx * dx + dy * dy) as i64;
            // Order: distance, then displacement norm, then (dy, dx).
            let better = match &best {
                None => true,
                Some((bd, bn, bdisp)) => {
                    d2 < *bd
                        || (d2 == *bd
                            && (norm < *bn || (norm == *bn && (dy, dx) < *bdisp)))
                }
            };
            if better {
                best = Some((d2, norm, (dy, dx)));
                best_rect = PatchRect::new(x as usize, y as usize, rect.size);
                best_desc = cand;
            }
        }
    }
    let (d2, _, (dy, dx)) = best.expect("window always contains the null displacement");
    MatchResult {
        rect: best_rect,
        displacement: (dx, dy),
        distance: d2.sqrt(),
        v2: best_desc,
    }
}

/// Exhaustively scan a window of side `w_size` centered on `rect` in the
/// target image (clipped at borders) and return the candidate whose
/// descriptor is closest to the query patch descriptor. Ties prefer the
/// smaller displacement norm, then lexicographic (dy, dx).
pub fn best_match(
    query_stats: &IntegralStats,
    rect: PatchRect,
    target_stats: &IntegralStats,
    w_size: usize,
    stride: usize,
) -> Result<MatchResult> {
    if query_stats.width() != target_stats.width()
        || query_stats.height() != target_stats.height()
    {
        return Err(Error::DimensionMismatch {
            expected: (query_stats.width(), query_stats.height()),
            got: (target_stats.width(), target_stats.height()),
            context: "query vs target".into(),
        });
    }
    if !rect.fits(query_stats.width(), query_stats.height()) {
        return Err(Error::RectOutOfBounds {
            x: rect.x,
            y: rect.y,
            size: rect.size,
            width: query_stats.width(),
            height: query_stats.height(),
        });
    }
    if w_size % 2 == 0 || stride < 1 {
        return Err(Error::InvalidParams(
            "w_size must be odd and stride >= 1".into(),
        ));
    }
    let query = patch_descriptor_unchecked(query_stats, rect);
    Ok(best_match_inner(
        &query,
        rect,
        target_stats.width(),
        target_stats.height(),
        w_size,
        stride,
        |x, y| patch_descriptor_unchecked(target_stats, PatchRect::new(x, y, rect.size)),
    ))
}

/// [`best_match`] against a precomputed descriptor field of the target;
/// bit-identical to the integral-table route.
pub fn best_match_field(
    query: &Descriptor,
    rect: PatchRect,
    field: &DescriptorField,
    target_width: usize,
    target_height: usize,
    w_size: usize,
    stride: usize,
) -> MatchResult {
    debug_assert_eq!(field.size(), rect.size);
    best_match_inner(
        query,
        rect,
        target_width,
        target_height,
        w_size,
        stride,
        |x, y| *field.get(x, y),
    )
}

/// Everything needed to score one search direction of a pair: integral
/// tables of the tiled image and per-level descriptor fields of the
/// searched image.
struct PairScorer {
    tiled: IntegralStats,
    searched_fields: Vec<DescriptorField>,
    width: usize,
    height: usize,
}

impl PairScorer {
    /// `tiled` is the image whose patches are described (the 'after'
    /// image for appearance), `searched` the one scanned for matches.
    fn build(tiled: &RasterImage, searched: &RasterImage, ladder: &ScaleLadder) -> Result<PairScorer> {
        let tiled_stats = image_stats(tiled);
        let searched_stats = image_stats(searched);
        let searched_fields = ladder
            .sizes
            .iter()
            .map(|&size| DescriptorField::build(&searched_stats, size))
            .collect::<Result<Vec<_>>>()?;
        Ok(PairScorer {
            tiled: tiled_stats,
            searched_fields,
            width: searched.width(),
            height: searched.height(),
        })
    }

    /// Query descriptor and its change descriptor for one patch.
    fn change_at(&self, level: usize, rect: PatchRect, params: &DynamicParams) -> Descriptor {
        let v1 = patch_descriptor_unchecked(&self.tiled, rect);
        let matched = best_match_field(
            &v1,
            rect,
            &self.searched_fields[level],
            self.width,
            self.height,
            params.w_size,
            params.stride_for(level),
        );
        change_descriptor(&v1, &matched.v2)
    }
}

/// Tile the 'after' image at every ladder size; for each tile, match it
/// in the 'before' image and store the change descriptor labeled by the
/// appeared-mask fraction. Results are grouped per level, finest first.
pub fn extract_change_points(
    pair: &ActionPair,
    params: &DynamicParams,
    pair_id: u32,
) -> Result<Vec<Vec<LabeledPoint>>> {
    let mask = pair.appeared_mask.as_ref().ok_or_else(|| {
        Error::InvalidParams(format!("pair {pair_id} lacks an appeared mask"))
    })?;
    let ladder = &params.base.ladder;
    let (w, h) = (pair.after.width(), pair.after.height());
    if w < ladder.coarsest() || h < ladder.coarsest() {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: ladder.coarsest(),
        });
    }
    let scorer = PairScorer::build(&pair.after, &pair.before, ladder)?;
    let mut per_level = Vec::with_capacity(ladder.sizes.len());
    for (level, &size) in ladder.sizes.iter().enumerate() {
        let tiles_x = w / size;
        let tiles_y = h / size;
        let tiles: Vec<(usize, usize)> = (0..tiles_y)
            .flat_map(|ty| (0..tiles_x).map(move |tx| (tx, ty)))
            .collect();
        let points: Vec<LabeledPoint> = tiles
            .par_iter()
            .map(|&(tx, ty)| {
                let rect = PatchRect::new(tx * size, ty * size, size);
                let descriptor = scorer.change_at(level, rect, params);
                let label = patch_label_for(mask, rect);
                LabeledPoint::new(
                    descriptor,
                    label,
                    PointSource {
                        image: pair_id,
                        rect,
                    },
                )
            })
            .collect();
        per_level.push(points);
    }
    Ok(per_level)
}

fn patch_label_for(mask: &BinaryMask, rect: PatchRect) -> f64 {
    crate::segment::patch_label(mask, rect).expect("tile within bounds")
}

/// Build the appearance reference bank from action pairs with appeared
/// masks. For the disappearance bank, pass swapped pairs.
pub fn build_change_bank(
    pairs: &[ActionPair],
    params: &DynamicParams,
    config: IndexConfig,
    exclude: Option<u32>,
) -> Result<ReferenceBank> {
    if pairs.len() < 2 {
        return Err(Error::DatasetTooSmall {
            have: pairs.len(),
            need: 2,
        });
    }
    let points: Vec<Vec<Vec<LabeledPoint>>> = pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| extract_change_points(pair, params, i as u32))
        .collect::<Result<_>>()?;
    assemble_bank(&points, &params.base.ladder, config, exclude)
}

fn check_pair(pair: &ActionPair, bank: &ReferenceBank, params: &DynamicParams) -> Result<()> {
    if !bank.matches_ladder(&params.base.ladder) {
        return Err(Error::InvalidParams(
            "change bank sizes do not match the ladder".into(),
        ));
    }
    let coarsest = params.base.ladder.coarsest();
    if pair.after.width() < coarsest || pair.after.height() < coarsest {
        return Err(Error::ImageTooSmall {
            width: pair.after.width(),
            height: pair.after.height(),
            min: coarsest,
        });
    }
    Ok(())
}

/// Appearance probability map on the 'after' image, coarse-to-fine; each
/// patch is scored by regressing its change descriptor against the bank.
pub fn detect_appearance(
    pair: &ActionPair,
    bank: &ReferenceBank,
    params: &DynamicParams,
) -> Result<ProbabilityMap> {
    Ok(detect_appearance_with_stats(pair, bank, params)?.0)
}

/// As [`detect_appearance`], also returning per-level query counts.
pub fn detect_appearance_with_stats(
    pair: &ActionPair,
    bank: &ReferenceBank,
    params: &DynamicParams,
) -> Result<(ProbabilityMap, SegmentStats)> {
    check_pair(pair, bank, params)?;
    let scorer = PairScorer::build(&pair.after, &pair.before, &params.base.ladder)?;
    let k = params.base.k;
    let query = |level: usize, rect: PatchRect| -> f64 {
        let q = scorer.change_at(level, rect, params);
        bank.index(level)
            .query_regress(&q, k)
            .expect("validated k")
            .probability
    };
    Ok(coarse_to_fine(
        pair.after.width(),
        pair.after.height(),
        &params.base.ladder,
        params.base.subdivide_threshold,
        &query,
    ))
}

/// Disappearance probability map on the 'before' image: appearance
/// detection on the swapped pair, with a bank built from swapped pairs.
pub fn detect_disappearance(
    pair: &ActionPair,
    bank: &ReferenceBank,
    params: &DynamicParams,
) -> Result<ProbabilityMap> {
    detect_appearance(&pair.swapped(), bank, params)
}

/// Run both directions and bundle the probability maps.
pub fn detect_changes(
    pair: &ActionPair,
    appearance_bank: &ReferenceBank,
    disappearance_bank: &ReferenceBank,
    params: &DynamicParams,
) -> Result<ChangeMap> {
    Ok(ChangeMap {
        appeared: detect_appearance(pair, appearance_bank, params)?,
        disappeared: detect_disappearance(pair, disappearance_bank, params)?,
    })
}

/// Dense finest-level change evaluation: the oracle for coarse-to-fine
/// equivalence under a forced subdivide threshold.
pub fn dense_change_map(
    pair: &ActionPair,
    bank: &ReferenceBank,
    params: &DynamicParams,
) -> Result<ProbabilityMap> {
    check_pair(pair, bank, params)?;
    let scorer = PairScorer::build(&pair.after, &pair.before, &params.base.ladder)?;
    let size = params.base.ladder.sizes[0];
    let (w, h) = (pair.after.width(), pair.after.height());
    let tiles_x = w / size;
    let tiles_y = h / size;
    let rows: Vec<Vec<f64>> = (0..tiles_y)
        .into_par_iter()
        .map(|ty| {
            (0..tiles_x)
                .map(|tx| {
                    let rect = PatchRect::new(tx * size, ty * size, size);
                    let q = scorer.change_at(0, rect, params);
                    bank.index(0)
                        .query_regress(&q, params.base.k)
                        .expect("validated k")
                        .probability
                })
                .collect()
        })
        .collect();
    let mut map = ProbabilityMap::zeros(w, h);
    for (ty, row) in rows.iter().enumerate() {
        for (tx, &p) in row.iter().enumerate() {
            map.fill_rect(tx * size, ty * size, size, p.clamp(0.0, 1.0));
        }
    }
    Ok(map)
}
