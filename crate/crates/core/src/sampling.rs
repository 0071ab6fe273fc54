//! Monte Carlo batch construction.
//!
//! Training and filtering both operate on fixed-size batches drawn uniformly
//! with replacement from a cloud. Each batch owns an independent ChaCha
//! stream keyed by `(seed, batch index)`, so a batch set is identical no
//! matter how many threads produce it or in which order.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{BoneLabel, LabeledCloud, WorldPoint};
use crate::rng::{self, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub target_label: BoneLabel,
    /// Per-axis Gaussian jitter, mm.
    pub jitter_sigma: f64,
    /// Bound on the length of each jitter vector, mm.
    pub jitter_clip: f64,
    /// Half-width of the uniform per-axis translation shared by one run, mm.
    pub translation_range: f64,
}

impl AugmentConfig {
    /// Defaults relative to the cloud's normalization scale: σ 1%, clip 5%,
    /// translation 10%.
    pub fn for_scale(target_label: BoneLabel, scale: f64) -> Self {
        Self {
            target_label,
            jitter_sigma: 0.01 * scale,
            jitter_clip: 0.05 * scale,
            translation_range: 0.1 * scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("jitter_sigma must be >= 0, got {}", self.jitter_sigma)));
        }
        if !(self.jitter_clip > 0.0 && self.jitter_clip.is_finite()) {
            return Err(Error::InvalidConfig(format!("jitter_clip must be > 0, got {}", self.jitter_clip)));
        }
        if !(self.translation_range >= 0.0 && self.translation_range.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "translation_range must be >= 0, got {}",
                self.translation_range
            )));
        }
        Ok(())
    }
}

/// Appends one jittered, translated copy of every `target_label` point.
///
/// Originals are kept verbatim and in order; copies follow them, carry the
/// provenance of their source and have `synthetic` set.
pub fn augment_minority(cloud: &LabeledCloud, cfg: &AugmentConfig, seed: u64) -> Result<LabeledCloud> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot augment an empty cloud".into()));
    }
    let sources: Vec<&WorldPoint> = cloud.points.iter().filter(|p| p.label == cfg.target_label).collect();
    if sources.is_empty() {
        log::warn!("cloud {} has no {} points; augmentation is a no-op", cloud.source, cfg.target_label);
        return Ok(cloud.clone());
    }
    let mut rng = rng::stream_rng(seed, streams::AUGMENT);
    let shift: [f64; 3] = std::array::from_fn(|_| {
        if cfg.translation_range > 0.0 {
            rng.random_range(-cfg.translation_range..=cfg.translation_range)
        } else {
            0.0
        }
    });
    let mut out = cloud.clone();
    out.points.reserve(sources.len());
    for src in sources {
        let mut jitter: [f64; 3] = std::array::from_fn(|_| cfg.jitter_sigma * rng.sample::<f64, _>(StandardNormal));
        let len = jitter.iter().map(|j| j * j).sum::<f64>().sqrt();
        if len > cfg.jitter_clip {
            let s = cfg.jitter_clip / len;
            jitter.iter_mut().for_each(|j| *j *= s);
        }
        let mut p = src.clone();
        for i in 0..3 {
            p.xyz[i] += jitter[i] + shift[i];
        }
        p.synthetic = true;
        out.points.push(p);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub n_clouds: usize,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n_clouds: 500,
            n_points: 1024,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clouds < 1 {
            return Err(Error::InvalidConfig("n_clouds must be >= 1".into()));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidConfig(format!("n_points must be >= 2, got {}", self.n_points)));
        }
        Ok(())
    }
}

/// Centroid and radius used to map a batch into the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub centroid: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (p[i] - self.centroid[i]) / self.scale)
    }

    pub fn invert(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| p[i] * self.scale + self.centroid[i])
    }
}

/// Centres `points` on their centroid and divides by the largest radius
/// (1 when all points coincide).
pub fn normalize(points: &[[f64; 3]]) -> (Vec<[f64; 3]>, Normalization) {
    let n = points.len().max(1) as f64;
    let mut centroid = [0.0; 3];
    for p in points {
        for i in 0..3 {
            centroid[i] += p[i];
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    let radius = points
        .iter()
        .map(|p| (0..3).map(|i| (p[i] - centroid[i]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let norm = Normalization {
        centroid,
        scale: if radius > 0.0 { radius } else { 1.0 },
    };
    (points.iter().map(|&p| norm.apply(p)).collect(), norm)
}

/// One Monte Carlo batch: point indices (duplicates allowed) plus the
/// normalization of the selected coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSample {
    pub cloud_ref: String,
    pub batch_index: usize,
    pub indices: Vec<usize>,
    pub norm: Normalization,
}

impl BatchSample {
    /// Builds a batch over explicit indices, computing its normalization.
    pub fn from_indices(cloud: &LabeledCloud, batch_index: usize, indices: Vec<usize>) -> Self {
        let raw: Vec<[f64; 3]> = indices.iter().map(|&i| cloud.points[i].xyz).collect();
        let (_, norm) = normalize(&raw);
        Self {
            cloud_ref: cloud.source.clone(),
            batch_index,
            indices,
            norm,
        }
    }

    pub fn coords(&self, cloud: &LabeledCloud) -> Vec<[f64; 3]> {
        self.indices.iter().map(|&i| self.norm.apply(cloud.points[i].xyz)).collect()
    }

    pub fn labels(&self, cloud: &LabeledCloud) -> Vec<BoneLabel> {
        self.indices.iter().map(|&i| cloud.points[i].label).collect()
    }

    pub fn class_counts(&self, cloud: &LabeledCloud) -> [usize; 3] {
        let mut counts = [0; 3];
        for &i in &self.indices {
            counts[cloud.points[i].label.index()] += 1;
        }
        counts
    }
}

/// Draws batch `batch_index` of the set described by `cfg`.
pub fn sample_batch(cloud: &LabeledCloud, cfg: &SampleConfig, batch_index: usize) -> BatchSample {
    let mut rng = rng::stream_rng(cfg.seed, streams::BATCH_BASE + batch_index as u64);
    let indices = (0..cfg.n_points).map(|_| rng.random_range(0..cloud.len())).collect();
    BatchSample::from_indices(cloud, batch_index, indices)
}

pub fn sample_batches(cloud: &LabeledCloud, cfg: &SampleConfig) -> Result<Vec<BatchSample>> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyInput(format!("cloud {} is empty", cloud.source)));
    }
    Ok((0..cfg.n_clouds)
        .into_par_iter()
        .map(|b| sample_batch(cloud, cfg, b))
        .collect())
}

pub fn class_histogram(cloud: &LabeledCloud) -> [usize; 3] {
    let mut counts = [0; 3];
    for p in &cloud.points {
        counts[p.label.index()] += 1;
    }
    counts
}

/// Natural log of the binomial coefficient, summed over the shorter side.
fn ln_choose(n: u64, i: u64) -> f64 {
    let m = i.min(n - i);
    (1..=m).map(|j| ((n - m + j) as f64 / j as f64).ln()).sum()
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `ln P[Binomial(n, p) >= k]`, evaluated through whichever tail keeps
/// the most precision.
pub fn ln_binomial_upper_tail(p: f64, n: u64, k: u64) -> f64 {
    if k == 0 || p == 1.0 {
        return 0.0;
    }
    if p == 0.0 || k > n {
        return f64::NEG_INFINITY;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let ln_pmf = |i: u64| ln_choose(n, i) + i as f64 * lp + (n - i) as f64 * lq;
    let lower = log_sum_exp((0..k).map(ln_pmf)).exp();
    if lower <= 0.5 {
        (-lower).ln_1p()
    } else {
        log_sum_exp((k..=n).map(ln_pmf))
    }
}

/// Probability that each of `n_batches` batches of `n_points` uniform draws
/// contains at least `k` points of a class with frequency `p_minority`.
pub fn min_class_guarantee(p_minority: f64, n_points: u64, k: u64, n_batches: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_minority) {
        return Err(Error::Domain(format!("probability {p_minority} is outside [0, 1]")));
    }
    if k > n_points {
        return Err(Error::Domain(format!("k={k} exceeds n_points={n_points}")));
    }
    if k == 0 || n_batches == 0 {
        return Ok(1.0);
    }
    if p_minority == 0.0 {
        return Ok(0.0);
    }
    Ok((n_batches as f64 * ln_binomial_upper_tail(p_minority, n_points, k)).exp())
}

/// Smallest minority fraction whose guarantee reaches `target`, by bisection.
pub fn solve_minority_fraction(target: f64, n_points: u64, k: u64, n_batches: u64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Domain(format!("target {target} must lie in (0, 1)")));
    }
    let f = |p: f64| min_class_guarantee(p, n_points, k, n_batches);
    let (mut lo, mut hi) = (0.0, 1.0);
    if f(hi)? < target {
        return Err(Error::Domain(format!("target {target} unreachable for k={k}, n={n_points}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(hi)
}

#[derive(Serialize, Deserialize)]
struct BatchIndexEntry {
    file: String,
    batch_index: usize,
    n_points: usize,
    centroid: [f64; 3],
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct BatchIndex {
    cloud_ref: String,
    rng: String,
    seed: u64,
    batches: Vec<BatchIndexEntry>,
}

/// Writes one `batch_NNNN.csv` per batch (index, normalized coordinates,
/// label) plus `batches.json` describing the set.
pub fn save_batches(dir: &Path, cloud: &LabeledCloud, batches: &[BatchSample], seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(batches.len());
    for b in batches {
        let file = format!("batch_{:04}.csv", b.batch_index);
        let path = dir.join(&file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
        let write = |w: &mut csv::Writer<fs::File>| -> std::result::Result<(), csv::Error> {
            w.write_record(["index", "x", "y", "z", "label"])?;
            for (&i, c) in b.indices.iter().zip(b.coords(cloud)) {
                w.write_record([
                    i.to_string(),
                    c[0].to_string(),
                    c[1].to_string(),
                    c[2].to_string(),
                    cloud.points[i].label.code().to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        };
        write(&mut w).map_err(|e| Error::io(&path, e.into()))?;
        entries.push(BatchIndexEntry {
            file,
            batch_index: b.batch_index,
            n_points: b.indices.len(),
            centroid: b.norm.centroid,
            scale: b.norm.scale,
        });
    }
    let index = BatchIndex {
        cloud_ref: cloud.source.clone(),
        rng: rng::RNG_ALGORITHM.to_string(),
        seed,
        batches: entries,
    };
    let path = dir.join("batches.json");
    let text = serde_json::to_string_pretty(&index).expect("batch index serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads a directory written by [`save_batches`].
pub fn load_batches(dir: &Path) -> Result<Vec<BatchSample>> {
    let path = dir.join("batches.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: BatchIndex = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    index
        .batches
        .into_iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let mut r = csv::Reader::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
            let mut indices = Vec::with_capacity(entry.n_points);
            for rec in r.records() {
                let rec = rec.map_err(|e| Error::Parse {
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    msg: e.to_string(),
                })?;
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                indices.push(rec[0].parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad index '{}' in {}", &rec[0], entry.file),
                })?);
            }
            if indices.len() != entry.n_points {
                return Err(Error::Corruption(format!(
                    "{} has {} rows, index says {}",
                    entry.file,
                    indices.len(),
                    entry.n_points
                )));
            }
            Ok(BatchSample {
                cloud_ref: index.cloud_ref.clone(),
                batch_index: entry.batch_index,
                indices,
                norm: Normalization {
                    centroid: entry.centroid,
                    scale: entry.scale,
                },
            })
        })
        .collect()
}
