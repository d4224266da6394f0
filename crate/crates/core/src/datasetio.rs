//! Demonstration datasets: a folder of frame PNGs, `labels.csv`
//! (`Frame,Throttle,Steering`) and a `meta.toml` sidecar.

use crate::error::{Error, Result};
use crate::image::{ImageU8, IMAGE_SIZE};
use crate::seed;
use crate::simworld::TrackKind;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

pub const LABELS_FILE: &str = "labels.csv";
pub const META_FILE: &str = "meta.toml";
pub const MASK_DIR: &str = "masks";
pub const ZERO_THROTTLE_EPS: f64 = 1e-6;
const HEADER: [&str; 3] = ["Frame", "Throttle", "Steering"];

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub throttle: f64,
    pub steering: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub track_kind: TrackKind,
    pub seed: u64,
    /// Unix seconds.
    pub created_at: u64,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            track_kind: TrackKind::Custom,
            seed: 0,
            created_at: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root_dir: PathBuf,
    pub records: Vec<FrameRecord>,
    pub meta: DatasetMeta,
}

/// Frame file name for a 1-based index.
pub fn frame_name(index: usize) -> String {
    format!("Frame_{index:06}.png")
}

/// Round to the 9 decimals that `labels.csv` stores, so values survive a
/// write/read cycle unchanged.
pub fn quantize(v: f64) -> f64 {
    format!("{v:.9}").parse().expect("formatted float parses")
}

/// Current time in unix seconds, or `SOURCE_DATE_EPOCH` when set.
pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn frame_path(&self, r: &FrameRecord) -> PathBuf {
        self.root_dir.join(&r.frame_id)
    }

    pub fn mask_path(&self, r: &FrameRecord) -> PathBuf {
        self.root_dir.join(MASK_DIR).join(&r.frame_id)
    }

    pub fn has_masks(&self) -> bool {
        self.records.first().is_some_and(|r| self.mask_path(r).is_file())
    }

    pub fn steering(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.steering).collect()
    }

    fn with_records(&self, records: Vec<FrameRecord>) -> DatasetManifest {
        DatasetManifest {
            root_dir: self.root_dir.clone(),
            records,
            meta: self.meta.clone(),
        }
    }
}

fn check_record(r: &FrameRecord) -> std::result::Result<(), String> {
    if !(-0.5..=0.5).contains(&r.steering) {
        return Err(format!("steering {} of {} outside [-0.5, 0.5]", r.steering, r.frame_id));
    }
    if !(0.0..=1.0).contains(&r.throttle) {
        return Err(format!("throttle {} of {} outside [0, 1]", r.throttle, r.frame_id));
    }
    Ok(())
}

/// Write `labels.csv` and `meta.toml` into `manifest.root_dir`. Frame PNGs must
/// already be on disk.
pub fn write_dataset(manifest: &DatasetManifest) -> Result<PathBuf> {
    let root = &manifest.root_dir;
    let mut seen = HashSet::new();
    for r in &manifest.records {
        check_record(r).map_err(Error::Validation)?;
        if !seen.insert(r.frame_id.as_str()) {
            return Err(Error::Validation(format!("duplicate frame id {}", r.frame_id)));
        }
        let p = manifest.frame_path(r);
        if !p.is_file() {
            return Err(Error::io(
                &p,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("missing image for frame {}", r.frame_id),
                ),
            ));
        }
    }
    let path = root.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(HEADER).map_err(|e| csv_err(&path, e))?;
    for r in &manifest.records {
        w.write_record([
            r.frame_id.as_str(),
            &format!("{:.9}", r.throttle),
            &format!("{:.9}", r.steering),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let meta_path = root.join(META_FILE);
    let meta = toml::to_string(&manifest.meta).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    Ok(path)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Parse `labels.csv` (LF or CRLF) and the optional `meta.toml` under `dir`.
pub fn read_dataset(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(LABELS_FILE);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(|e| csv_err(&path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(&path, e))?.clone();
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(Error::Parse {
            path: path.clone(),
            line: 1,
            message: format!("expected header {}, got {:?}", HEADER.join(","), header),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(&path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| Error::Parse {
            path: path.clone(),
            line,
            message,
        };
        if row.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", row.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            row[i]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("bad {name} value `{}`", &row[i])))
        };
        let r = FrameRecord {
            frame_id: row[0].trim().to_string(),
            throttle: num(1, "throttle")?,
            steering: num(2, "steering")?,
        };
        if r.frame_id.is_empty() {
            return Err(parse_err("empty frame id".into()));
        }
        check_record(&r).map_err(|m| Error::Validation(format!("{}: line {line}: {m}", path.display())))?;
        if !seen.insert(r.frame_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate frame id {} at line {line}",
                r.frame_id
            )));
        }
        if !dir.join(&r.frame_id).is_file() {
            return Err(Error::Validation(format!(
                "frame {} listed at line {line} has no image",
                r.frame_id
            )));
        }
        records.push(r);
    }
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.is_file() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: e
                .span()
                .map(|r| crate::error::line_of(&text, r.start) as u64)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?
    } else {
        DatasetMeta::default()
    };
    Ok(DatasetManifest {
        root_dir: dir.to_path_buf(),
        records,
        meta,
    })
}

/// Drop records whose throttle is at most [`ZERO_THROTTLE_EPS`].
pub fn filter_zero_velocity(manifest: &DatasetManifest) -> DatasetManifest {
    manifest.with_records(
        manifest
            .records
            .iter()
            .filter(|r| r.throttle > ZERO_THROTTLE_EPS)
            .cloned()
            .collect(),
    )
}

/// Seeded shuffle, then the first `round(n * val_fraction)` records (at least
/// one, at most `n - 1`) form the validation set.
pub fn split_train_val(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let n = manifest.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 records to split, got {n}")));
    }
    let mut records = manifest.records.clone();
    records.shuffle(&mut seed::rng_for(seed, "split"));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let train = records.split_off(n_val);
    Ok((manifest.with_records(train), manifest.with_records(records)))
}

/// Equal-width bins over `[-0.5, 0.5]`; `0.5` falls in the last bin.
pub fn steering_histogram(manifest: &DatasetManifest, n_bins: usize) -> Result<Vec<(f64, usize)>> {
    histogram(&manifest.steering(), n_bins)
}

pub fn histogram(values: &[f64], n_bins: usize) -> Result<Vec<(f64, usize)>> {
    if n_bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {n_bins}")));
    }
    let width = 1.0 / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        let b = (((v + 0.5) / width).floor().max(0.0) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (-0.5 + (i as f64 + 0.5) * width, c))
        .collect())
}

/// Decoded frames (and masks, when present) held as 8-bit images.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub frame_ids: Vec<String>,
    pub images: Vec<ImageU8>,
    pub masks: Option<Vec<ImageU8>>,
    pub steering: Vec<f64>,
}

impl LoadedDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> LoadedDataset {
        LoadedDataset {
            frame_ids: idx.iter().map(|&i| self.frame_ids[i].clone()).collect(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            masks: self.masks.as_ref().map(|m| idx.iter().map(|&i| m[i].clone()).collect()),
            steering: idx.iter().map(|&i| self.steering[i]).collect(),
        }
    }
}

/// Decode every frame of `manifest`; masks are loaded when `with_masks` is
/// set and the dataset has a `masks/` folder.
pub fn load_images(manifest: &DatasetManifest, with_masks: bool) -> Result<LoadedDataset> {
    let load = |p: PathBuf, channels: usize| -> Result<ImageU8> {
        let img = ImageU8::load_png(&p)?;
        if img.width != IMAGE_SIZE || img.height != IMAGE_SIZE || img.channels != channels {
            return Err(Error::Image {
                path: p,
                message: format!(
                    "expected {IMAGE_SIZE}x{IMAGE_SIZE}x{channels}, got {}x{}x{}",
                    img.width, img.height, img.channels
                ),
            });
        }
        Ok(img)
    };
    let images = manifest
        .records
        .iter()
        .map(|r| load(manifest.frame_path(r), 3))
        .collect::<Result<Vec<_>>>()?;
    let masks = if with_masks && manifest.has_masks() {
        Some(
            manifest
                .records
                .iter()
                .map(|r| load(manifest.mask_path(r), 1))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(LoadedDataset {
        frame_ids: manifest.records.iter().map(|r| r.frame_id.clone()).collect(),
        images,
        masks,
        steering: manifest.steering(),
    })
}
