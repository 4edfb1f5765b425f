//! Dataset manifests, run configuration, and ingestion at working
//! resolution.
//!
//! Manifests are header-first CSV files with paths relative to the
//! manifest's directory (no quoting; paths must not contain commas):
//!
//! ```text
//! image,mask                                      # static
//! before,after,appeared_mask,disappeared_mask     # dynamic
//! ```
//!
//! The run configuration is a flat `key = value` text file; `#` starts a
//! comment and unknown keys are rejected. Command-line overrides reuse
//! the same `key=value` syntax.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::change::ActionPair;
use crate::error::{Error, Result};
use crate::imaging::{self, BinaryMask, RasterImage};
use crate::knn::{KnnMode, KnnParams};
use crate::segment::{DetectParams, IndexConfig, ScaleLadder};

/// Which task a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Static,
    Dynamic,
}

/// One static row: an image and its instrument mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticRow {
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// One dynamic row: a pair with both ground-truth masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicRow {
    pub before: PathBuf,
    pub after: PathBuf,
    pub appeared_mask: PathBuf,
    pub disappeared_mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestRows {
    Static(Vec<StaticRow>),
    Dynamic(Vec<DynamicRow>),
}

/// A parsed manifest with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub rows: ManifestRows,
}

const STATIC_HEADER: &str = "image,mask";
const DYNAMIC_HEADER: &str = "before,after,appeared_mask,disappeared_mask";

impl DatasetManifest {
    pub fn kind(&self) -> DatasetKind {
        match self.rows {
            ManifestRows::Static(_) => DatasetKind::Static,
            ManifestRows::Dynamic(_) => DatasetKind::Dynamic,
        }
    }

    pub fn len(&self) -> usize {
        match &self.rows {
            ManifestRows::Static(rows) => rows.len(),
            ManifestRows::Dynamic(rows) => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parse a manifest file; the header row decides the kind.
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            context: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Manifest {
            line: 1,
            reason: "empty manifest".into(),
        })?;
        let rows = match header.trim() {
            STATIC_HEADER => {
                let mut rows = Vec::new();
                for (i, line) in lines {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                    if fields.len() != 2 {
                        return Err(Error::Manifest {
                            line: i + 1,
                            reason: format!("expected 2 fields, got {}", fields.len()),
                        });
                    }
                    rows.push(StaticRow {
                        image: fields[0].into(),
                        mask: fields[1].into(),
                    });
                }
                ManifestRows::Static(rows)
            }
            DYNAMIC_HEADER => {
                let mut rows = Vec::new();
                for (i, line) in lines {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                    if fields.len() != 4 {
                        return Err(Error::Manifest {
                            line: i + 1,
                            reason: format!("expected 4 fields, got {}", fields.len()),
                        });
                    }
                    rows.push(DynamicRow {
                        before: fields[0].into(),
                        after: fields[1].into(),
                        appeared_mask: fields[2].into(),
                        disappeared_mask: fields[3].into(),
                    });
                }
                ManifestRows::Dynamic(rows)
            }
            other => {
                return Err(Error::Manifest {
                    line: 1,
                    reason: format!("unknown header '{other}'"),
                })
            }
        };
        let manifest = DatasetManifest { base_dir, rows };
        manifest.check_files()?;
        Ok(manifest)
    }

    /// Write the manifest next to its files.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        match &self.rows {
            ManifestRows::Static(rows) => {
                out.push_str(STATIC_HEADER);
                out.push('\n');
                for r in rows {
                    out.push_str(&format!("{},{}\n", r.image.display(), r.mask.display()));
                }
            }
            ManifestRows::Dynamic(rows) => {
                out.push_str(DYNAMIC_HEADER);
                out.push('\n');
                for r in rows {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        r.before.display(),
                        r.after.display(),
                        r.appeared_mask.display(),
                        r.disappeared_mask.display()
                    ));
                }
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::Write {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
    }

    fn check_files(&self) -> Result<()> {
        let mut check = |p: &Path| -> Result<()> {
            let full = self.base_dir.join(p);
            if !full.exists() {
                return Err(Error::MissingFile { path: full });
            }
            Ok(())
        };
        match &self.rows {
            ManifestRows::Static(rows) => {
                for r in rows {
                    check(&r.image)?;
                    check(&r.mask)?;
                }
            }
            ManifestRows::Dynamic(rows) => {
                for r in rows {
                    check(&r.before)?;
                    check(&r.after)?;
                    check(&r.appeared_mask)?;
                    check(&r.disappeared_mask)?;
                }
            }
        }
        Ok(())
    }

    /// Row identifiers for reports: the image (or 'after') file stem.
    pub fn row_ids(&self) -> Vec<String> {
        let stem = |p: &Path| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        };
        match &self.rows {
            ManifestRows::Static(rows) => rows.iter().map(|r| stem(&r.image)).collect(),
            ManifestRows::Dynamic(rows) => rows.iter().map(|r| stem(&r.before)).collect(),
        }
    }
}

/// Crop an image (and mask) to multiples of `unit`, downsampling first
/// when requested.
fn ingest_image(
    path: &Path,
    downsample: bool,
    unit: usize,
) -> Result<RasterImage> {
    let img = imaging::load_image(path)?;
    let img = if downsample {
        imaging::downsample2(&img)?
    } else {
        img
    };
    let w = (img.width() / unit) * unit;
    let h = (img.height() / unit) * unit;
    if w == 0 || h == 0 {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: unit,
        });
    }
    Ok(img.crop(w, h))
}

fn ingest_mask(path: &Path, downsample: bool, unit: usize) -> Result<BinaryMask> {
    let mask = imaging::load_mask(path)?;
    let mask = if downsample {
        imaging::downsample2_mask(&mask)?
    } else {
        mask
    };
    let w = (mask.width() / unit) * unit;
    let h = (mask.height() / unit) * unit;
    if w == 0 || h == 0 {
        return Err(Error::ImageTooSmall {
            width: mask.width(),
            height: mask.height(),
            min: unit,
        });
    }
    Ok(mask.crop(w, h))
}

/// Load a static dataset at working resolution: optional factor-2
/// downsampling, then cropping to multiples of the coarsest patch size.
pub fn load_static_dataset(
    manifest: &DatasetManifest,
    downsample: bool,
    crop_unit: usize,
) -> Result<Vec<(RasterImage, BinaryMask)>> {
    let ManifestRows::Static(rows) = &manifest.rows else {
        return Err(Error::InvalidParams(
            "expected a static manifest".into(),
        ));
    };
    rows.iter()
        .map(|r| {
            let img = ingest_image(&manifest.base_dir.join(&r.image), downsample, crop_unit)?;
            let mask = ingest_mask(&manifest.base_dir.join(&r.mask), downsample, crop_unit)?;
            if img.width() != mask.width() || img.height() != mask.height() {
                return Err(Error::DimensionMismatch {
                    expected: (img.width(), img.height()),
                    got: (mask.width(), mask.height()),
                    context: r.image.display().to_string(),
                });
            }
            Ok((img, mask))
        })
        .collect()
}

/// Load a dynamic dataset at working resolution.
pub fn load_dynamic_dataset(
    manifest: &DatasetManifest,
    downsample: bool,
    crop_unit: usize,
) -> Result<Vec<ActionPair>> {
    let ManifestRows::Dynamic(rows) = &manifest.rows else {
        return Err(Error::InvalidParams(
            "expected a dynamic manifest".into(),
        ));
    };
    rows.iter()
        .map(|r| {
            let before = ingest_image(&manifest.base_dir.join(&r.before), downsample, crop_unit)?;
            let after = ingest_image(&manifest.base_dir.join(&r.after), downsample, crop_unit)?;
            let appeared =
                ingest_mask(&manifest.base_dir.join(&r.appeared_mask), downsample, crop_unit)?;
            let disappeared = ingest_mask(
                &manifest.base_dir.join(&r.disappeared_mask),
                downsample,
                crop_unit,
            )?;
            ActionPair::new(before, after, Some(appeared), Some(disappeared))
        })
        .collect()
}

/// How the k-NN banks answer queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnModeConfig {
    Exact,
    Approx,
}

/// All tunables of a pipeline run, parseable from a flat config file
/// plus `key=value` overrides. Every field has a default; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub p_min: usize,
    pub tau: usize,
    pub levels: usize,
    pub subdivide_threshold: f64,
    pub w_size: usize,
    pub stride: usize,
    pub knn_mode: KnnModeConfig,
    pub knn_trees: usize,
    pub knn_leaf_capacity: usize,
    pub knn_checks: usize,
    pub downsample: bool,
    pub threads: usize,
    pub out_dir: PathBuf,
    pub wsize_candidates: Vec<i64>,
    pub n_draws: usize,
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            k: 89,
            p_min: 5,
            tau: 4,
            levels: 3,
            subdivide_threshold: 0.0,
            w_size: 81,
            stride: 1,
            knn_mode: KnnModeConfig::Approx,
            knn_trees: KnnParams::default().trees,
            knn_leaf_capacity: KnnParams::default().leaf_capacity,
            knn_checks: KnnParams::default().checks,
            downsample: true,
            threads: 0,
            out_dir: PathBuf::from("out"),
            wsize_candidates: vec![21, 41, 61, 81, 101],
            n_draws: 5,
            swarm_size: 20,
            iterations: 30,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
        }
    }
}

impl RunConfig {
    /// Parse a config file over the defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            context: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut config = RunConfig::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig {
                    key: line.to_string(),
                    reason: "expected key = value".into(),
                });
            };
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::InvalidConfig {
                key: key.to_string(),
                reason: format!("cannot parse '{value}'"),
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "p_min" => self.p_min = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "levels" => self.levels = parse(key, value)?,
            "subdivide_threshold" => self.subdivide_threshold = parse(key, value)?,
            "w_size" => self.w_size = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "knn_mode" => {
                self.knn_mode = match value {
                    "exact" => KnnModeConfig::Exact,
                    "approx" => KnnModeConfig::Approx,
                    other => {
                        return Err(Error::InvalidConfig {
                            key: key.to_string(),
                            reason: format!("'{other}' is not exact|approx"),
                        })
                    }
                }
            }
            "knn_trees" => self.knn_trees = parse(key, value)?,
            "knn_leaf_capacity" => self.knn_leaf_capacity = parse(key, value)?,
            "knn_checks" => self.knn_checks = parse(key, value)?,
            "downsample" => {
                self.downsample = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    other => {
                        return Err(Error::InvalidConfig {
                            key: key.to_string(),
                            reason: format!("'{other}' is not on|off"),
                        })
                    }
                }
            }
            "threads" => self.threads = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "wsize_candidates" => {
                self.wsize_candidates = value
                    .split(',')
                    .map(|v| parse::<i64>(key, v.trim()))
                    .collect::<Result<_>>()?;
            }
            "n_draws" => self.n_draws = parse(key, value)?,
            "swarm_size" => self.swarm_size = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "inertia" => self.inertia = parse(key, value)?,
            "cognitive" => self.cognitive = parse(key, value)?,
            "social" => self.social = parse(key, value)?,
            unknown => {
                return Err(Error::InvalidConfig {
                    key: unknown.to_string(),
                    reason: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn ladder(&self) -> Result<ScaleLadder> {
        ScaleLadder::new(self.p_min, self.tau, self.levels)
    }

    pub fn detect_params(&self) -> Result<DetectParams> {
        DetectParams::new(self.k, self.ladder()?, self.subdivide_threshold)
    }

    pub fn dynamic_params(&self) -> Result<crate::change::DynamicParams> {
        crate::change::DynamicParams::new(self.detect_params()?, self.w_size, self.stride)
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            mode: match self.knn_mode {
                KnnModeConfig::Exact => KnnMode::Exact,
                KnnModeConfig::Approx => KnnMode::Approximate,
            },
            knn: KnnParams {
                trees: self.knn_trees,
                leaf_capacity: self.knn_leaf_capacity,
                checks: self.knn_checks,
            },
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let mut config = RunConfig::default();
        assert_eq!(config.k, 89);
        assert_eq!(config.tau, 4);
        assert_eq!(config.w_size, 81);
        config.set("k", "12").unwrap();
        config.set("knn_mode", "exact").unwrap();
        config.set("downsample", "off").unwrap();
        config.set("wsize_candidates", "21, 41").unwrap();
        assert_eq!(config.k, 12);
        assert_eq!(config.knn_mode, KnnModeConfig::Exact);
        assert!(!config.downsample);
        assert_eq!(config.wsize_candidates, vec![21, 41]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut config = RunConfig::default();
        assert!(matches!(
            config.set("nope", "1"),
            Err(Error::InvalidConfig { .. })
        ));
        assert!(config.set("k", "not-a-number").is_err());
        assert!(config.set("knn_mode", "fast").is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nk = 7\ntau=2\nsubdivide_threshold = 0.1\n").unwrap();
        let config = RunConfig::from_file(&path).unwrap();
        assert_eq!(config.k, 7);
        assert_eq!(config.tau, 2);
        assert!((config.subdivide_threshold - 0.1).abs() < 1e-12);
        std::fs::write(&path, "k = 7\nmystery = 3\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn manifest_round_trip_static() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.png", "a_mask.png", "b.png", "b_mask.png"] {
            let img = RasterImage::filled(4, 4, [0, 0, 0]);
            imaging::save_image(&img, &dir.path().join(name)).unwrap();
        }
        let manifest = DatasetManifest {
            base_dir: dir.path().to_path_buf(),
            rows: ManifestRows::Static(vec![
                StaticRow {
                    image: "a.png".into(),
                    mask: "a_mask.png".into(),
                },
                StaticRow {
                    image: "b.png".into(),
                    mask: "b_mask.png".into(),
                },
            ]),
        };
        let path = dir.path().join("manifest.csv");
        manifest.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.rows, manifest.rows);
        assert_eq!(loaded.kind(), DatasetKind::Static);
        assert_eq!(loaded.row_ids(), vec!["a", "b"]);
    }

    #[test]
    fn manifest_missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "image,mask\nghost.png,ghost_mask.png\n").unwrap();
        assert!(matches!(
            DatasetManifest::load(&path),
            Err(Error::MissingFile { .. })
        ));
    }

    #[test]
    fn manifest_bad_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "foo,bar\n").unwrap();
        assert!(matches!(
            DatasetManifest::load(&path),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn ingestion_downsamples_and_crops() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::filled(100, 70, [10, 200, 20]);
        let mut mask = BinaryMask::filled(100, 70, false);
        mask.set_bit(0, 0, true);
        mask.set_bit(1, 0, true);
        mask.set_bit(0, 1, true);
        imaging::save_image(&img, &dir.path().join("img.png")).unwrap();
        imaging::save_mask(&mask, &dir.path().join("mask.png")).unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "image,mask\nimg.png,mask.png\n").unwrap();
        let manifest = DatasetManifest::load(&path).unwrap();
        // Downsample to 50x35, then crop to multiples of 16 -> 48x32.
        let data = load_static_dataset(&manifest, true, 16).unwrap();
        assert_eq!((data[0].0.width(), data[0].0.height()), (48, 32));
        assert_eq!((data[0].1.width(), data[0].1.height()), (48, 32));
        // 3 of 4 bits set in the top-left block -> downsampled bit set.
        assert!(data[0].1.bit(0, 0));
    }
}
