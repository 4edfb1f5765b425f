//! ROC construction and Az (area under the ROC curve) scoring of
//! probability maps against binary masks, plus the aggregate mean/std
//! reporting used by the cross-validation runs.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ProbabilityMap};

/// ROC curve from a threshold sweep: (false-positive rate,
/// true-positive rate) points, starting at (0,0) and ending at (1,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        let mut auc = 0.0;
        for w in self.points.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            auc += (x1 - x0) * (y0 + y1) / 2.0;
        }
        auc
    }
}

/// Az score with the class counts it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzScore {
    pub value: f64,
    pub positives: usize,
    pub negatives: usize,
}

fn collect_scores(map: &ProbabilityMap, truth: &BinaryMask) -> Result<Vec<(f64, bool)>> {
    if map.width() != truth.width() || map.height() != truth.height() {
        return Err(Error::DimensionMismatch {
            expected: (map.width(), map.height()),
            got: (truth.width(), truth.height()),
            context: "probability map vs ground truth".into(),
        });
    }
    Ok(map
        .values()
        .iter()
        .zip(truth.bits().iter())
        .map(|(&s, &b)| (s, b))
        .collect())
}

/// ROC curve of a probability map against a binary mask, one curve point
/// per distinct score.
pub fn roc_curve(map: &ProbabilityMap, truth: &BinaryMask) -> Result<RocCurve> {
    let mut scored = collect_scores(map, truth)?;
    let positives = scored.iter().filter(|(_, b)| *b).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTruth {
            positives,
            negatives,
        });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < scored.len() {
        let score = scored[i].0;
        // Consume the whole tie group before emitting a point, so tied
        // scores become one diagonal segment.
        while i < scored.len() && scored[i].0 == score {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    Ok(RocCurve { points })
}

/// Az by trapezoidal integration over all distinct score thresholds;
/// mathematically the tie-corrected Mann-Whitney statistic.
///
/// Truth must contain both classes; a single-class mask is an explicit
/// error, never a silent 0 or 1.
pub fn roc_az(map: &ProbabilityMap, truth: &BinaryMask) -> Result<AzScore> {
    let curve = roc_curve(map, truth)?;
    let positives = truth.count_ones();
    let negatives = truth.width() * truth.height() - positives;
    Ok(AzScore {
        value: curve.area(),
        positives,
        negatives,
    })
}

/// Mean and population standard deviation of a score list.
pub fn aggregate_scores(scores: &[AzScore]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::InvalidParams("no scores to aggregate".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s.value).sum::<f64>() / n;
    let var = scores
        .iter()
        .map(|s| (s.value - mean) * (s.value - mean))
        .sum::<f64>()
        / n;
    Ok((mean, var.sqrt()))
}

/// One report row: an image (or pair) with its score, or the reason it
/// was skipped.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub id: String,
    pub score: Option<AzScore>,
    /// Set when `score` is absent, e.g. "degenerate-truth".
    pub note: Option<String>,
}

/// Write the evaluation CSV: `id,positives,negatives,az` rows followed by
/// an `aggregate` row holding mean and std of the defined scores.
pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<(f64, f64)> {
    let scored: Vec<AzScore> = rows.iter().filter_map(|r| r.score).collect();
    let (mean, std) = aggregate_scores(&scored)?;
    let mut out = String::from("id,positives,negatives,az\n");
    for row in rows {
        match (&row.score, &row.note) {
            (Some(s), _) => out.push_str(&format!(
                "{},{},{},{:.6}\n",
                row.id, s.positives, s.negatives, s.value
            )),
            (None, note) => out.push_str(&format!(
                "{},,,skipped({})\n",
                row.id,
                note.as_deref().unwrap_or("unscored")
            )),
        }
    }
    out.push_str(&format!("aggregate,mean,std,{:.6} / {:.6}\n", mean, std));
    let mut file = std::fs::File::create(path).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    file.write_all(out.as_bytes()).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok((mean, std))
}
