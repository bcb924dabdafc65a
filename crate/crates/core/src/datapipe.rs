//! Log ingestion, overlapping window augmentation, category balancing and
//! the train/validation split.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use drf_autodiff::rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::DynamicModel;
use crate::encoders::{Window, FEATURES};
use crate::error::{invalid, DrfError, Result};
use crate::io::read_log;
use crate::rcm::{label_residuals, overlap_stride, ResidualSample};
use crate::stats::quantile;
use crate::vehicle::{LogRecord, Pose};

#[derive(Clone, Debug, PartialEq)]
pub struct IngestedLog {
    pub path: PathBuf,
    pub records: Vec<LogRecord>,
    pub dropped: usize,
}

/// Reads log CSVs in parallel, preserving input order.
pub fn ingest(paths: &[PathBuf]) -> Result<Vec<IngestedLog>> {
    paths
        .par_iter()
        .map(|p| {
            let parsed = read_log(p)?;
            if parsed.dropped > 0 {
                log::warn!("{}: dropped {} invalid rows", p.display(), parsed.dropped);
            }
            Ok(IngestedLog {
                path: p.clone(),
                records: parsed.records,
                dropped: parsed.dropped,
            })
        })
        .collect()
}

/// Splits a log wherever consecutive timestamps are not `dt` apart, as
/// happens after invalid rows are dropped. Each segment comes with its
/// starting row.
pub fn contiguous_segments(records: &[LogRecord], dt: f64) -> Vec<(usize, &[LogRecord])> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=records.len() {
        let gap = k == records.len() || ((records[k].t - records[k - 1].t) - dt).abs() > 1e-6 * dt.max(1.0);
        if gap {
            if k > start {
                out.push((start, &records[start..k]));
            }
            start = k;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    /// Index of the source log in the ingest order.
    pub source: usize,
    pub sample: ResidualSample,
}

/// Windows every `max(1, round((1 - overlap) N))` ticks through
/// [`label_residuals`]. Returns the windows and the sanity-bound drop count.
pub fn augment_windows(
    logs: &[&[LogRecord]],
    dm: &DynamicModel,
    window: usize,
    overlap: f64,
    dt: f64,
    sanity_bound: f64,
) -> Result<(Vec<LabeledWindow>, usize)> {
    let stride = overlap_stride(window, overlap)?;
    let per: Vec<(Vec<ResidualSample>, usize)> = logs
        .par_iter()
        .map(|log| {
            let mut samples = Vec::new();
            let mut dropped = 0;
            for (base, seg) in contiguous_segments(log, dt) {
                let (s, d) = label_residuals(seg, dm, window, stride, dt, sanity_bound)?;
                samples.extend(s.into_iter().map(|mut w| {
                    w.window.start += base;
                    w
                }));
                dropped += d;
            }
            Ok((samples, dropped))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut dropped = 0;
    for (source, (samples, d)) in per.into_iter().enumerate() {
        dropped += d;
        out.extend(samples.into_iter().map(|sample| LabeledWindow { source, sample }));
    }
    Ok((out, dropped))
}

/// Grid cell of a window's mean speed, longitudinal command and steering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CategoryKey {
    pub speed_bin: usize,
    pub longitudinal_bin: usize,
    pub steering_bin: usize,
}

/// Interior bin edges; bins are half-open `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategoryGrid {
    /// Mean speed, m/s.
    pub speed_edges: Vec<f64>,
    /// Mean throttle minus mean brake: brake strong, brake light, coast,
    /// throttle light, medium, strong.
    pub longitudinal_edges: Vec<f64>,
    /// Mean steering, ascending: hard right, right, straight, left, hard left.
    pub steering_edges: Vec<f64>,
}

impl Default for CategoryGrid {
    fn default() -> Self {
        CategoryGrid {
            speed_edges: vec![2.0, 5.0, 10.0, 15.0, 25.0],
            longitudinal_edges: vec![-0.3, -0.05, 0.05, 0.3, 0.6],
            steering_edges: vec![-0.3, -0.05, 0.05, 0.3],
        }
    }
}

pub const LONGITUDINAL_NAMES: [&str; 6] = ["brake_strong", "brake_light", "coast", "throttle_light", "throttle_medium", "throttle_strong"];
pub const STEERING_NAMES: [&str; 5] = ["hard_right", "right", "straight", "left", "hard_left"];

fn bin(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e <= v)
}

impl CategoryGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in [("speed", &self.speed_edges), ("longitudinal", &self.longitudinal_edges), ("steering", &self.steering_edges)] {
            if e.iter().any(|v| !v.is_finite()) || e.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("{name} bin edges must be finite and strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> usize {
        (self.speed_edges.len() + 1) * (self.longitudinal_edges.len() + 1) * (self.steering_edges.len() + 1)
    }

    pub fn key(&self, speed: f64, longitudinal: f64, steering: f64) -> CategoryKey {
        CategoryKey {
            speed_bin: bin(&self.speed_edges, speed),
            longitudinal_bin: bin(&self.longitudinal_edges, longitudinal),
            steering_bin: bin(&self.steering_edges, steering),
        }
    }
}

/// Category of a window from its feature means.
pub fn categorize(window: &Window, grid: &CategoryGrid) -> CategoryKey {
    grid.key(window.mean(3), window.mean(0) - window.mean(1), window.mean(2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Categories are downsampled to this quantile of nonempty category sizes.
    pub cap_quantile: f64,
    pub seed: u64,
    pub grid: CategoryGrid,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            cap_quantile: 0.25,
            seed: 0,
            grid: CategoryGrid::default(),
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) || !(0.0..=1.0).contains(&self.cap_quantile) {
            return Err(invalid("train_fraction must be in (0, 1] and cap_quantile in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub key: CategoryKey,
    pub available: usize,
    pub kept: usize,
    pub train: usize,
    pub val: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub window: usize,
    pub overlap: f64,
    pub stride: usize,
    pub dt: f64,
    pub split: SplitConfig,
    /// Per-category sample cap after the quantile rule.
    pub cap: usize,
    pub categories: Vec<CategoryCount>,
    pub train: usize,
    pub val: usize,
    /// Windows rejected by the residual sanity bound.
    pub dropped_windows: usize,
    /// Rows rejected at ingest, per source.
    pub dropped_rows: Vec<usize>,
    pub sources: Vec<String>,
    /// SHA-256 of `windows.bin`, filled in by [`Dataset::save`].
    #[serde(default)]
    pub windows_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledWindow>,
    pub val: Vec<LabeledWindow>,
    pub manifest: DatasetManifest,
}

/// Per-category cap at the configured quantile of nonempty category sizes.
pub fn category_cap(sizes: &[usize], q: f64) -> usize {
    let v: Vec<f64> = sizes.iter().filter(|&&n| n > 0).map(|&n| n as f64).collect();
    quantile(&v, q).map(|c| c.floor() as usize).unwrap_or(0).max(1)
}

/// Train count for a category of `n` kept samples: `ceil(fraction n)`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize
}

/// Downsamples each category to the cap, then splits each category
/// `train_fraction : rest` after a seeded shuffle. The manifest's window
/// fields are left for the caller.
pub fn balance_and_split(stream: Vec<LabeledWindow>, cfg: &SplitConfig) -> Result<(Vec<LabeledWindow>, Vec<LabeledWindow>, Vec<CategoryCount>, usize)> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(DrfError::EmptyDataset("no windows to split".into()));
    }
    let mut groups: BTreeMap<CategoryKey, Vec<LabeledWindow>> = BTreeMap::new();
    for w in stream {
        groups.entry(categorize(&w.sample.window, &cfg.grid)).or_default().push(w);
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let cap = category_cap(&sizes, cfg.cap_quantile);
    let base = rng::derive_seed(cfg.seed, "balance");
    let (mut train, mut val, mut counts) = (Vec::new(), Vec::new(), Vec::new());
    for (key, mut items) in groups {
        let available = items.len();
        let stream_id = (key.speed_bin * 64 + key.longitudinal_bin) * 64 + key.steering_bin;
        let mut r = rng::stream(base, stream_id as u64);
        items.shuffle(&mut r);
        items.truncate(cap);
        let kept = items.len();
        let nt = train_count(kept, cfg.train_fraction);
        let rest = items.split_off(nt);
        counts.push(CategoryCount {
            key,
            available,
            kept,
            train: nt,
            val: rest.len(),
        });
        train.extend(items);
        val.extend(rest);
    }
    let mut r = rng::stream(rng::derive_seed(cfg.seed, "split-order"), 0);
    train.shuffle(&mut r);
    val.shuffle(&mut r);
    Ok((train, val, counts, cap))
}

/// End-to-end: segment, window, label, balance and split.
pub fn prepare(logs: &[IngestedLog], dm: &DynamicModel, window: usize, overlap: f64, dt: f64, sanity_bound: f64, cfg: &SplitConfig) -> Result<Dataset> {
    let recs: Vec<&[LogRecord]> = logs.iter().map(|l| l.records.as_slice()).collect();
    let (stream, dropped) = augment_windows(&recs, dm, window, overlap, dt, sanity_bound)?;
    let (train, val, categories, cap) = balance_and_split(stream, cfg)?;
    let manifest = DatasetManifest {
        window,
        overlap,
        stride: overlap_stride(window, overlap)?,
        dt,
        split: cfg.clone(),
        cap,
        categories,
        train: train.len(),
        val: val.len(),
        dropped_windows: dropped,
        dropped_rows: logs.iter().map(|l| l.dropped).collect(),
        sources: logs.iter().map(|l| l.path.display().to_string()).collect(),
        windows_sha256: String::new(),
    };
    Ok(Dataset { train, val, manifest })
}

const MAGIC: &[u8; 8] = b"DRFWIN01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    split: Split,
    source: usize,
    start: usize,
    start_pose: [f64; 3],
    key: CategoryKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Index {
    window: usize,
    features: usize,
    record_len: usize,
    entries: Vec<IndexEntry>,
}

impl Dataset {
    pub fn train_samples(&self) -> Vec<ResidualSample> {
        self.train.iter().map(|w| w.sample.clone()).collect()
    }

    pub fn val_samples(&self) -> Vec<ResidualSample> {
        self.val.iter().map(|w| w.sample.clone()).collect()
    }

    /// Writes `windows.bin`, `index.json` and `manifest.json` into `dir`.
    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let n = self.manifest.window;
        let record_len = n * FEATURES + 2;
        let all: Vec<(Split, &LabeledWindow)> = self
            .train
            .iter()
            .map(|w| (Split::Train, w))
            .chain(self.val.iter().map(|w| (Split::Val, w)))
            .collect();
        let mut bytes = Vec::with_capacity(24 + all.len() * record_len * 8);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(n as u64).to_le_bytes());
        bytes.extend_from_slice(&(all.len() as u64).to_le_bytes());
        let mut entries = Vec::with_capacity(all.len());
        for (split, w) in &all {
            let s = &w.sample;
            if s.window.data.len() != n * FEATURES {
                return Err(invalid("window length differs from the manifest"));
            }
            for v in s.window.data.iter().chain(&s.target) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let p = s.window.start_pose;
            entries.push(IndexEntry {
                split: *split,
                source: w.source,
                start: s.window.start,
                start_pose: [p.x, p.y, p.heading],
                key: categorize(&s.window, &self.manifest.split.grid),
            });
        }
        self.manifest.windows_sha256 = hex(&Sha256::digest(&bytes));
        BufWriter::new(fs::File::create(dir.join("windows.bin"))?).write_all(&bytes)?;
        let index = Index {
            window: n,
            features: FEATURES,
            record_len,
            entries,
        };
        fs::write(dir.join("index.json"), serde_json::to_string(&index)?)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let index: Index = serde_json::from_str(&fs::read_to_string(dir.join("index.json"))?)?;
        let mut bytes = Vec::new();
        BufReader::new(fs::File::open(dir.join("windows.bin"))?).read_to_end(&mut bytes)?;
        let path = dir.join("windows.bin");
        let bad = |reason: String| DrfError::Parse {
            path: path.clone(),
            line: 0,
            reason,
        };
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(bad("missing DRFWIN01 header".into()));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        let record_len = n * FEATURES + 2;
        if n != index.window || n != manifest.window || count != index.entries.len() || bytes.len() != 24 + count * record_len * 8 {
            return Err(bad("windows.bin does not match index.json".into()));
        }
        if !manifest.windows_sha256.is_empty() && hex(&Sha256::digest(&bytes)) != manifest.windows_sha256 {
            return Err(bad("windows.bin hash differs from manifest".into()));
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (k, e) in index.entries.iter().enumerate() {
            let off = 24 + k * record_len * 8;
            let vals: Vec<f64> = bytes[off..off + record_len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let w = LabeledWindow {
                source: e.source,
                sample: ResidualSample {
                    window: Window {
                        data: vals[..n * FEATURES].to_vec(),
                        start: e.start,
                        start_pose: Pose::new(e.start_pose[0], e.start_pose[1], e.start_pose[2]),
                    },
                    target: [vals[n * FEATURES], vals[n * FEATURES + 1]],
                },
            };
            match e.split {
                Split::Train => train.push(w),
                Split::Val => val.push(w),
            }
        }
        Ok(Dataset { train, val, manifest })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
