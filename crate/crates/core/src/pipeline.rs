//! Glue between the stages: turning scans into training batches.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::TrainingBatch;
use crate::phantom::{BoneLabel, LabeledCloud};
use crate::sampling::{augment_minority, normalize, sample_batch, AugmentConfig, SampleConfig};

/// Minority augmentation with magnitudes relative to each cloud's
/// normalization radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub enabled: bool,
    pub target_label: BoneLabel,
    pub sigma_fraction: f64,
    pub clip_fraction: f64,
    pub translation_fraction: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            target_label: BoneLabel::Patella,
            sigma_fraction: 0.01,
            clip_fraction: 0.05,
            translation_fraction: 0.1,
        }
    }
}

impl AugmentSpec {
    pub fn config(&self, scale: f64) -> AugmentConfig {
        AugmentConfig {
            target_label: self.target_label,
            jitter_sigma: self.sigma_fraction * scale,
            jitter_clip: self.clip_fraction * scale,
            translation_range: self.translation_fraction * scale,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSetConfig {
    /// Batches per cloud and points per batch; `seed` drives sampling.
    pub sample: SampleConfig,
    pub augment: AugmentSpec,
}

/// Samples `sample.n_clouds` normalized batches from every cloud. Batch `b`
/// of cloud `c` uses the stream of global batch index `c·n_clouds + b`, so
/// all batches of one seed are independent. Batches are grouped by `group`.
pub fn training_batches(clouds: &[(String, LabeledCloud)], cfg: &TrainingSetConfig) -> Result<Vec<TrainingBatch>> {
    cfg.sample.validate()?;
    let mut out = Vec::with_capacity(clouds.len() * cfg.sample.n_clouds);
    for (c, (group, cloud)) in clouds.iter().enumerate() {
        if cloud.is_empty() {
            return Err(crate::Error::EmptyInput(format!("cloud {} is empty", cloud.source)));
        }
        let cloud = if cfg.augment.enabled {
            let (_, norm) = normalize(&cloud.coords());
            augment_minority(cloud, &cfg.augment.config(norm.scale), cfg.sample.seed.wrapping_add(c as u64))?
        } else {
            cloud.clone()
        };
        let base = c * cfg.sample.n_clouds;
        let batches: Vec<TrainingBatch> = (0..cfg.sample.n_clouds)
            .into_par_iter()
            .map(|b| {
                let s = sample_batch(&cloud, &cfg.sample, base + b);
                TrainingBatch {
                    coords: s.coords(&cloud),
                    labels: s.labels(&cloud),
                    group: group.clone(),
                }
            })
            .collect();
        out.extend(batches);
    }
    Ok(out)
}
