//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use dgfilter::filter::{FilterConfig, VoteRule};
use dgfilter::model::{NetworkConfig, TrainConfig};
use dgfilter::phantom::{PhantomConfig, Position, ScanKind};
use dgfilter::pipeline::{AugmentSpec, TrainingSetConfig};
use dgfilter::sampling::SampleConfig;
use dgfilter::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a pipeline run needs. One `seed` drives every stage; each
/// stage derives its own independent random streams from it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: u64,
    pub phantom: PhantomSection,
    pub sample: SampleSection,
    pub augment: AugmentSpec,
    pub network: NetworkConfig,
    pub train: TrainSection,
    pub filter: FilterSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub thorough: Vec<Position>,
    pub partial: Vec<Position>,
    pub frames: usize,
    pub points_per_mm: f64,
    pub artifact_rate: f64,
    pub floater_fraction: f64,
    pub noise_mm: f64,
    pub gap_mm: f64,
    pub pixel_spacing_mm: f64,
    pub partial_frame_keep: f64,
    pub partial_line_keep: f64,
    pub floater_band: [f64; 2],
}

impl Default for PhantomSection {
    fn default() -> Self {
        let d = PhantomConfig::default();
        Self {
            thorough: Position::ALL.to_vec(),
            partial: vec![Position::P1, Position::P2, Position::P3],
            frames: d.frames,
            points_per_mm: d.points_per_mm,
            artifact_rate: d.artifact_rate,
            floater_fraction: d.floater_fraction,
            noise_mm: d.noise_mm,
            gap_mm: d.gap_mm,
            pixel_spacing_mm: d.pixel_spacing_mm,
            partial_frame_keep: d.partial_frame_keep,
            partial_line_keep: d.partial_line_keep,
            floater_band: d.floater_band,
        }
    }
}

impl PhantomSection {
    pub fn config(&self, position: Position, scan_kind: ScanKind) -> PhantomConfig {
        PhantomConfig {
            position,
            scan_kind,
            frames: self.frames,
            points_per_mm: self.points_per_mm,
            artifact_rate: self.artifact_rate,
            floater_fraction: self.floater_fraction,
            noise_mm: self.noise_mm,
            gap_mm: self.gap_mm,
            pixel_spacing_mm: self.pixel_spacing_mm,
            partial_frame_keep: self.partial_frame_keep,
            partial_line_keep: self.partial_line_keep,
            floater_band: self.floater_band,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n_clouds: usize,
    pub n_points: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        let d = SampleConfig::default();
        Self {
            n_clouds: d.n_clouds,
            n_points: d.n_points,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lr: d.lr,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            patience: d.patience,
            max_epochs: d.max_epochs,
            val_fraction: d.val_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub k: usize,
    pub vote_rule: VoteRule,
    pub include_residual_pass: bool,
    pub n_clouds: usize,
    pub n_points: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self {
            k: d.k,
            vote_rule: d.vote_rule,
            include_residual_pass: d.include_residual_pass,
            n_clouds: d.n_clouds,
            n_points: d.n_points,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub cloud_format: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            run_dir: "run".into(),
            cloud_format: "csv".into(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config file: {}", e.message())))
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            n_clouds: self.sample.n_clouds,
            n_points: self.sample.n_points,
            seed: self.seed,
        }
    }

    pub fn training_set(&self) -> TrainingSetConfig {
        TrainingSetConfig {
            sample: self.sample_config(),
            augment: self.augment.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            patience: t.patience,
            max_epochs: t.max_epochs,
            val_fraction: t.val_fraction,
            seed: self.seed,
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        let f = &self.filter;
        FilterConfig {
            k: f.k,
            vote_rule: f.vote_rule,
            include_residual_pass: f.include_residual_pass,
            n_clouds: f.n_clouds,
            n_points: f.n_points,
            seed: self.seed,
        }
    }

    pub fn cloud_ext(&self) -> Result<&'static str> {
        match self.paths.cloud_format.to_ascii_lowercase().as_str() {
            "csv" => Ok("csv"),
            "ply" => Ok("ply"),
            other => Err(Error::InvalidConfig(format!(
                "paths.cloud_format must be csv or ply, got '{other}'"
            ))),
        }
    }
}

/// Config sections, in file order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Root,
    Phantom,
    Sample,
    Augment,
    Network,
    Train,
    Filter,
    Paths,
}

impl Section {
    pub fn name(self) -> &'static str {
        match self {
            Section::Root => "",
            Section::Phantom => "phantom",
            Section::Sample => "sample",
            Section::Augment => "augment",
            Section::Network => "network",
            Section::Train => "train",
            Section::Filter => "filter",
            Section::Paths => "paths",
        }
    }
}

pub const CONFIG_KEYS: &[(Section, &str, &str)] = &[
    (Section::Root, "seed", "master seed for every random stream (overridden by --seed)"),
    (Section::Phantom, "thorough", "positions generated as thorough scans, e.g. [\"P0\", \"P1\"]"),
    (Section::Phantom, "partial", "positions generated as partial scans"),
    (Section::Phantom, "frames", "frames in a thorough sweep"),
    (Section::Phantom, "points_per_mm", "points per mm along each bone line"),
    (Section::Phantom, "artifact_rate", "injected artifacts per true bone point, in [0, 1)"),
    (Section::Phantom, "floater_fraction", "share of artifacts placed between bones"),
    (Section::Phantom, "noise_mm", "depth noise on bone lines, mm"),
    (Section::Phantom, "gap_mm", "minimum distance between different bones, mm"),
    (Section::Phantom, "pixel_spacing_mm", "pixel size, mm"),
    (Section::Phantom, "partial_frame_keep", "fraction of frames a partial scan keeps"),
    (Section::Phantom, "partial_line_keep", "probability a partial scan keeps a line"),
    (Section::Phantom, "floater_band", "[lo, hi] fractions of the inter-bone gap holding floaters"),
    (Section::Sample, "n_clouds", "training batches drawn per scan"),
    (Section::Sample, "n_points", "points per training batch"),
    (Section::Augment, "enabled", "augment the minority class before sampling"),
    (Section::Augment, "target_label", "class to augment: femur, patella or tibia"),
    (Section::Augment, "sigma_fraction", "jitter sigma relative to the cloud radius"),
    (Section::Augment, "clip_fraction", "jitter length bound relative to the cloud radius"),
    (Section::Augment, "translation_fraction", "translation half-width relative to the cloud radius"),
    (Section::Network, "input_dim", "coordinates per point"),
    (Section::Network, "widths", "output width of each EdgeConv layer"),
    (Section::Network, "head_hidden", "hidden width of the per-point head"),
    (Section::Network, "k", "neighbors per point in every EdgeConv graph"),
    (Section::Network, "slope", "negative slope of the leaky rectifier"),
    (Section::Train, "lr", "Adam learning rate"),
    (Section::Train, "beta1", "Adam first-moment decay"),
    (Section::Train, "beta2", "Adam second-moment decay"),
    (Section::Train, "eps", "Adam epsilon"),
    (Section::Train, "patience", "epochs without validation improvement before stopping"),
    (Section::Train, "max_epochs", "upper bound on training epochs"),
    (Section::Train, "val_fraction", "share of each scan's batches held out for validation"),
    (Section::Filter, "k", "neighbors inspected per point"),
    (Section::Filter, "vote_rule", "majority (delete if flagged in most batches) or any"),
    (Section::Filter, "include_residual_pass", "score points no batch sampled"),
    (Section::Filter, "n_clouds", "batches sampled from the cloud"),
    (Section::Filter, "n_points", "points per batch"),
    (Section::Paths, "data_dir", "where gen-phantom writes and train/filter read scans"),
    (Section::Paths, "run_dir", "where checkpoints, reports and overlays go"),
    (Section::Paths, "cloud_format", "csv or ply for written clouds"),
];

/// Config sections each subcommand reads, as listed in its help.
pub const SUBCOMMAND_SECTIONS: [(&str, &[Section]); 7] = [
    ("gen-phantom", &[Section::Root, Section::Phantom, Section::Paths]),
    ("sample", &[Section::Root, Section::Sample, Section::Filter, Section::Paths]),
    (
        "train",
        &[Section::Root, Section::Sample, Section::Augment, Section::Network, Section::Train, Section::Paths],
    ),
    ("filter", &[Section::Root, Section::Filter, Section::Paths]),
    ("invert", &[Section::Paths]),
    ("eval", &[Section::Paths]),
    ("kprob", &[Section::Sample, Section::Filter]),
];

/// Help text listing every key of `sections`.
pub fn keys_help(sections: &[Section]) -> String {
    let mut out = String::from("Config keys (--config FILE, TOML):\n");
    for &section in sections {
        if section != Section::Root {
            out.push_str(&format!("  [{}]\n", section.name()));
        }
        for (_, key, doc) in CONFIG_KEYS.iter().filter(|(s, ..)| *s == section) {
            out.push_str(&format!("    {key:<22} {doc}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn serialized_keys(cfg: &CliConfig) -> BTreeSet<String> {
        let value: toml::Table = toml::from_str(&cfg.to_toml()).unwrap();
        let mut keys = BTreeSet::new();
        for (k, v) in value {
            match v {
                toml::Value::Table(t) => keys.extend(t.keys().map(|sub| format!("{k}.{sub}"))),
                _ => {
                    keys.insert(k);
                }
            }
        }
        keys
    }

    #[test]
    fn documented_keys_match_the_config_struct() {
        let documented: BTreeSet<String> = CONFIG_KEYS
            .iter()
            .map(|(s, k, _)| match s {
                Section::Root => k.to_string(),
                _ => format!("{}.{k}", s.name()),
            })
            .collect();
        assert_eq!(documented, serialized_keys(&CliConfig::default()));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = CliConfig::default();
        cfg.seed = 42;
        cfg.filter.vote_rule = VoteRule::Any;
        cfg.phantom.partial = vec![Position::P2];
        assert_eq!(CliConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(CliConfig::parse("").unwrap(), CliConfig::default());
    }

    #[test]
    fn default_reproduces_the_batch_protocol() {
        let cfg = CliConfig::default();
        assert_eq!((cfg.sample.n_clouds, cfg.sample.n_points), (500, 1024));
        assert_eq!((cfg.filter.n_clouds, cfg.filter.n_points, cfg.filter.k), (500, 1024, 20));
        assert_eq!(cfg.train.patience, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sed = 1", "[train]\nepochs = 3", "[filters]\nk = 3", "[paths]\nout = 'x'"] {
            assert!(matches!(CliConfig::parse(text), Err(Error::InvalidConfig(_))), "{text}");
        }
    }

    #[test]
    fn seed_reaches_every_stage() {
        let cfg = CliConfig::parse("seed = 9").unwrap();
        assert_eq!(cfg.sample_config().seed, 9);
        assert_eq!(cfg.train_config().seed, 9);
        assert_eq!(cfg.filter_config().seed, 9);
        assert_eq!(cfg.training_set().sample.seed, 9);
    }

    #[test]
    fn phantom_section_mirrors_the_generator_defaults() {
        let cfg = PhantomSection::default().config(Position::P0, ScanKind::Thorough);
        assert_eq!(cfg, PhantomConfig::default());
    }

    #[test]
    fn cloud_format_is_checked() {
        let mut cfg = CliConfig::default();
        assert_eq!(cfg.cloud_ext().unwrap(), "csv");
        cfg.paths.cloud_format = "PLY".into();
        assert_eq!(cfg.cloud_ext().unwrap(), "ply");
        cfg.paths.cloud_format = "xyz".into();
        assert!(cfg.cloud_ext().is_err());
    }
}
