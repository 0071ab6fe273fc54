use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use dgfilter::filter::{filter_cloud, FilterReport};
use dgfilter::invert::{
    count_fixture, format_summary_table, frame_precision, invert_cloud, load_overlays, save_overlays,
    FrameOverlay, PrecisionSummary,
};
use dgfilter::model::{load_checkpoint, save_checkpoint, train, EpochMetrics};
use dgfilter::phantom::io::{load_cloud, load_manifest, save_cloud, save_manifest};
use dgfilter::phantom::{build_cloud, gen_phantom, BoneLabel, LabeledCloud, PhantomGeometry, Position, ScanKind, ScanRecord};
use dgfilter::pipeline::training_batches;
use dgfilter::rng::RNG_ALGORITHM;
use dgfilter::sampling::{min_class_guarantee, sample_batches, save_batches, solve_minority_fraction};
use dgfilter::{Error, Result};

use crate::config::CliConfig;
use crate::dataset::{Dataset, DatasetEntry, DATASET_FORMAT};
use crate::table::Table;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Reference per-position counts: frames with deletions and failed frames.
pub const REFERENCE_COUNTS: [(Position, usize, usize); 3] =
    [(Position::P1, 186, 3), (Position::P2, 200, 6), (Position::P3, 249, 2)];

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        })
    }
}

fn bone_counts(cloud: &LabeledCloud) -> [usize; 3] {
    let mut n = [0; 3];
    for p in cloud.points.iter().filter(|p| !p.is_artifact) {
        n[p.label.index()] += 1;
    }
    n
}

pub fn gen_phantom_cmd(cfg: &CliConfig, out: &Path, csv: bool) -> Result<String> {
    let ext = cfg.cloud_ext()?;
    let plan: Vec<(Position, ScanKind)> = cfg
        .phantom
        .thorough
        .iter()
        .map(|&p| (p, ScanKind::Thorough))
        .chain(cfg.phantom.partial.iter().map(|&p| (p, ScanKind::Partial)))
        .collect();
    for (position, kind) in &plan {
        cfg.phantom.config(*position, *kind).validate()?;
    }
    fs::create_dir_all(out).map_err(io(out))?;

    let mut entries = Vec::with_capacity(plan.len());
    for (position, kind) in plan {
        let pcfg = cfg.phantom.config(position, kind);
        let scan = gen_phantom(&pcfg, cfg.seed)?;
        let cloud = build_cloud(&scan)?;
        let geom = PhantomGeometry::new(position, pcfg.gap_mm, pcfg.noise_mm);
        let floaters = scan
            .frames
            .iter()
            .flat_map(|f| f.points.iter().filter(|p| geom.is_floater(&f.transform, p)))
            .count();
        let entry = DatasetEntry {
            scan_id: scan.scan_id.clone(),
            position,
            scan_kind: kind,
            manifest: format!("{}.manifest.json", scan.scan_id),
            cloud: format!("{}.{ext}", scan.scan_id),
            frames: scan.frames.len(),
            points: cloud.len(),
            bone: bone_counts(&cloud),
            artifacts: cloud.points.iter().filter(|p| p.is_artifact).count(),
            floaters,
        };
        save_manifest(&entry.manifest_path(out), &scan)?;
        save_cloud(&entry.cloud_path(out), &cloud)?;
        log::info!("wrote {} ({} points)", entry.scan_id, entry.points);
        entries.push(entry);
    }
    let dataset = Dataset {
        format: DATASET_FORMAT.into(),
        seed: cfg.seed,
        rng: RNG_ALGORITHM.into(),
        phantom: cfg.phantom.clone(),
        scans: entries,
    };
    dataset.save(out)?;

    let mut t = Table::new(&["scan", "position", "kind", "frames", "points", "femur", "patella", "tibia", "artifacts", "floaters"]);
    for e in &dataset.scans {
        t.row(vec![
            e.scan_id.clone(),
            e.position.to_string(),
            e.scan_kind.to_string(),
            e.frames.to_string(),
            e.points.to_string(),
            e.bone[0].to_string(),
            e.bone[1].to_string(),
            e.bone[2].to_string(),
            e.artifacts.to_string(),
            e.floaters.to_string(),
        ]);
    }
    Ok(t.render(csv))
}

pub fn sample_cmd(cfg: &CliConfig, cloud_path: &Path, out: &Path, csv: bool) -> Result<String> {
    let scfg = cfg.sample_config();
    scfg.validate()?;
    let cloud = load_cloud(cloud_path)?;
    let batches = sample_batches(&cloud, &scfg)?;
    save_batches(out, &cloud, &batches, cfg.seed)?;

    let k = cfg.filter.k as u64;
    let mut t = Table::new(&["label", "cloud_fraction", "min_per_batch", "mean_per_batch", "guarantee_k"]);
    let per_batch: Vec<[usize; 3]> = batches.iter().map(|b| b.class_counts(&cloud)).collect();
    for label in BoneLabel::ALL {
        let c = label.index();
        let frac = cloud.points.iter().filter(|p| p.label == label).count() as f64 / cloud.len() as f64;
        let min = per_batch.iter().map(|b| b[c]).min().unwrap_or(0);
        let mean = per_batch.iter().map(|b| b[c]).sum::<usize>() as f64 / per_batch.len() as f64;
        let g = min_class_guarantee(frac, scfg.n_points as u64, k, scfg.n_clouds as u64)?;
        t.row(vec![
            label.name().to_string(),
            format!("{frac:.4}"),
            min.to_string(),
            format!("{mean:.1}"),
            format!("{g:.6}"),
        ]);
    }
    Ok(t.render(csv))
}

fn load_entry_cloud(dir: &Path, e: &DatasetEntry) -> Result<LabeledCloud> {
    let cloud = load_cloud(&e.cloud_path(dir))?;
    if cloud.len() != e.points || cloud.source != e.scan_id {
        return Err(Error::Corruption(format!(
            "{}: cloud holds {} points of '{}', dataset index says {} of '{}'",
            e.cloud,
            cloud.len(),
            cloud.source,
            e.points,
            e.scan_id
        )));
    }
    Ok(cloud)
}

pub fn train_cmd(cfg: &CliConfig, data: &Path, out: &Path, csv: bool) -> Result<String> {
    require(data)?;
    let dataset = Dataset::load(data)?;
    let entries: Vec<&DatasetEntry> = dataset.of_kind(ScanKind::Thorough).collect();
    if entries.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no thorough scans to train on", data.display())));
    }
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    cfg.network.validate()?;
    let set = cfg.training_set();
    let clouds = entries
        .iter()
        .map(|e| Ok((e.scan_id.clone(), load_entry_cloud(data, e)?)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out).map_err(io(out))?;

    let batches = training_batches(&clouds, &set)?;
    log::info!("training on {} batches from {} scans", batches.len(), clouds.len());
    let outcome = train(&batches, &cfg.network, &tcfg, &mut |_| {})?;

    let mut metrics = EpochMetrics::csv_header() + "\n";
    for m in &outcome.metrics {
        metrics.push_str(&m.csv_row());
        metrics.push('\n');
    }
    let metrics_path = out.join(METRICS_FILE);
    fs::write(&metrics_path, metrics).map_err(io(&metrics_path))?;

    let scans: Vec<&str> = clouds.iter().map(|(id, _)| id.as_str()).collect();
    let meta = BTreeMap::from([
        ("seed".to_string(), cfg.seed.to_string()),
        ("rng".to_string(), RNG_ALGORITHM.to_string()),
        ("scans".to_string(), scans.join(",")),
        ("best_epoch".to_string(), outcome.best_epoch.to_string()),
        ("epochs_run".to_string(), outcome.metrics.len().to_string()),
        ("stopped_early".to_string(), outcome.stopped_early.to_string()),
        ("training_set".to_string(), json(&set)),
        ("train".to_string(), json(&tcfg)),
    ]);
    save_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.network, &meta)?;

    let best = &outcome.metrics[outcome.best_epoch - 1];
    let mut t = Table::new(&["best_epoch", "epochs_run", "stopped_early", "val_loss", "accuracy", "patella_f1"]);
    t.row(vec![
        outcome.best_epoch.to_string(),
        outcome.metrics.len().to_string(),
        outcome.stopped_early.to_string(),
        format!("{:.5}", best.val_loss),
        format!("{:.4}", best.accuracy),
        format!("{:.4}", best.per_class[BoneLabel::Patella.index()].f1),
    ]);
    Ok(t.render(csv))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

/// A cloud to filter, optionally with the manifest it must agree with.
pub struct FilterInput {
    pub cloud: PathBuf,
    pub manifest: Option<PathBuf>,
}

/// Fails unless `cloud` is exactly the world-space lift of `scan`.
pub fn check_against_manifest(cloud: &LabeledCloud, scan: &ScanRecord) -> Result<()> {
    let expected = build_cloud(scan)?;
    if cloud.source != expected.source {
        return Err(Error::Validation(format!(
            "cloud is scan '{}' but manifest is scan '{}'",
            cloud.source, expected.source
        )));
    }
    if cloud.len() != expected.len() {
        return Err(Error::Validation(format!(
            "cloud has {} points, manifest {} implies {}",
            cloud.len(),
            scan.scan_id,
            expected.len()
        )));
    }
    let tol = 1e-9;
    for (i, (a, b)) in cloud.points.iter().zip(&expected.points).enumerate() {
        let close = a.xyz.iter().zip(&b.xyz).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()));
        if !close || a.label != b.label || a.provenance.frame_index != b.provenance.frame_index {
            return Err(Error::Validation(format!(
                "point {i} of {} disagrees with its manifest",
                scan.scan_id
            )));
        }
    }
    Ok(())
}

pub fn filter_inputs_from_dataset(data: &Path) -> Result<Vec<FilterInput>> {
    require(data)?;
    let dataset = Dataset::load(data)?;
    let inputs: Vec<FilterInput> = dataset
        .of_kind(ScanKind::Partial)
        .map(|e| FilterInput {
            cloud: e.cloud_path(data),
            manifest: Some(e.manifest_path(data)),
        })
        .collect();
    if inputs.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no partial scans to filter", data.display())));
    }
    Ok(inputs)
}

pub fn filter_cmd(cfg: &CliConfig, checkpoint: &Path, inputs: &[FilterInput], out: &Path, csv: bool) -> Result<String> {
    let fcfg = cfg.filter_config();
    fcfg.validate()?;
    let ext = cfg.cloud_ext()?;
    require(checkpoint)?;
    for input in inputs {
        require(&input.cloud)?;
        if let Some(m) = &input.manifest {
            require(m)?;
        }
    }
    let (net, meta) = load_checkpoint(checkpoint)?;
    let trained_on: BTreeSet<&str> = meta.get("scans").map(|s| s.split(',').collect()).unwrap_or_default();
    fs::create_dir_all(out).map_err(io(out))?;

    let mut t = Table::new(&["scan", "points", "retained", "deleted", "frames_hit", "artifacts_removed", "bone_retained"]);
    for input in inputs {
        let cloud = load_cloud(&input.cloud)?;
        if let Some(m) = &input.manifest {
            check_against_manifest(&cloud, &load_manifest(m)?)?;
        }
        if trained_on.contains(cloud.source.as_str()) {
            log::warn!("{} was part of the training set", cloud.source);
        }
        let (retained, report) = filter_cloud(&cloud, &net, &fcfg)?;
        let deleted = dgfilter::filter::select(&cloud, &report.deleted);
        let id = &report.scan_id;
        save_cloud(&out.join(format!("{id}.retained.{ext}")), &retained)?;
        save_cloud(&out.join(format!("{id}.deleted.{ext}")), &deleted)?;
        let report_path = out.join(format!("{id}.report.json"));
        fs::write(&report_path, report.to_json() + "\n").map_err(io(&report_path))?;

        let artifacts = cloud.points.iter().filter(|p| p.is_artifact).count();
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                "n/a".to_string()
            } else {
                format!("{:.4}", num as f64 / den as f64)
            }
        };
        t.row(vec![
            id.clone(),
            cloud.len().to_string(),
            retained.len().to_string(),
            deleted.len().to_string(),
            report.frame_deletions.len().to_string(),
            ratio(deleted.points.iter().filter(|p| p.is_artifact).count(), artifacts),
            ratio(retained.points.iter().filter(|p| !p.is_artifact).count(), cloud.len() - artifacts),
        ]);
    }
    Ok(t.render(csv))
}

pub fn load_report(path: &Path) -> Result<FilterReport> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    FilterReport::from_json(&text)
}

/// One report to invert with the scan it came from.
pub struct InvertInput {
    pub report: PathBuf,
    pub manifest: PathBuf,
    pub cloud: Option<PathBuf>,
}

pub fn invert_inputs_from_run(reports_dir: &Path, data: &Path) -> Result<Vec<InvertInput>> {
    require(reports_dir)?;
    require(data)?;
    let dataset = Dataset::load(data)?;
    let mut reports: Vec<PathBuf> = fs::read_dir(reports_dir)
        .map_err(io(reports_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".report.json")))
        .collect();
    reports.sort();
    if reports.is_empty() {
        return Err(Error::EmptyInput(format!("no *.report.json in {}", reports_dir.display())));
    }
    reports
        .into_iter()
        .map(|report| {
            let name = report.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let scan_id = name.trim_end_matches(".report.json");
            let e = dataset.find(scan_id).ok_or_else(|| {
                Error::Validation(format!("report {name} names scan '{scan_id}', absent from the dataset"))
            })?;
            Ok(InvertInput {
                report,
                manifest: e.manifest_path(data),
                cloud: Some(e.cloud_path(data)),
            })
        })
        .collect()
}

pub fn invert_cmd(inputs: &[InvertInput], out: &Path, csv: bool) -> Result<String> {
    for input in inputs {
        require(&input.report)?;
        require(&input.manifest)?;
        if let Some(c) = &input.cloud {
            require(c)?;
        }
    }
    let mut by_position: BTreeMap<Position, Vec<FrameOverlay>> = BTreeMap::new();
    for input in inputs {
        let report = load_report(&input.report)?;
        let scan = load_manifest(&input.manifest)?;
        let cloud = match &input.cloud {
            Some(c) => load_cloud(c)?,
            None => build_cloud(&scan)?,
        };
        let overlays = invert_cloud(&report, &cloud, &scan)?;
        save_overlays(&out.join(&scan.scan_id), &overlays)?;
        log::info!("{}: {} frame overlays", scan.scan_id, overlays.len());
        by_position.entry(scan.position).or_default().extend(overlays);
    }
    Ok(precision_table(&by_position, csv))
}

fn precision_table(by_position: &BTreeMap<Position, Vec<FrameOverlay>>, csv: bool) -> String {
    let summaries: Vec<PrecisionSummary> =
        by_position.iter().map(|(&p, overlays)| frame_precision(overlays, p)).collect();
    format_summary_table(&summaries, csv)
}

pub fn overlay_dirs_from_run(root: &Path) -> Result<Vec<PathBuf>> {
    require(root)?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptyInput(format!("no overlay directories under {}", root.display())));
    }
    Ok(dirs)
}

pub fn eval_cmd(dirs: &[PathBuf], csv: bool) -> Result<String> {
    for d in dirs {
        require(d)?;
    }
    let mut by_position: BTreeMap<Position, Vec<FrameOverlay>> = BTreeMap::new();
    for d in dirs {
        for o in load_overlays(d)? {
            by_position.entry(o.position).or_default().push(o);
        }
    }
    if by_position.is_empty() {
        return Err(Error::EmptyInput("no overlays found".into()));
    }
    Ok(precision_table(&by_position, csv))
}

/// Scores synthetic overlays built from [`REFERENCE_COUNTS`].
pub fn reference_counts_cmd(csv: bool) -> Result<String> {
    let by_position: BTreeMap<Position, Vec<FrameOverlay>> = REFERENCE_COUNTS
        .iter()
        .map(|&(p, n, failures)| (p, count_fixture(p, n, failures)))
        .collect();
    Ok(precision_table(&by_position, csv))
}

pub struct KprobArgs {
    pub p: Option<f64>,
    pub n_points: u64,
    pub k: u64,
    pub batches: u64,
    pub target: Option<f64>,
}

pub fn kprob_cmd(a: &KprobArgs, csv: bool) -> Result<String> {
    let mut t = Table::new(&["p_minority", "n_points", "k", "batches", "probability"]);
    let mut row = |p: f64| -> Result<()> {
        let prob = min_class_guarantee(p, a.n_points, a.k, a.batches)?;
        t.row(vec![
            format!("{p:?}"),
            a.n_points.to_string(),
            a.k.to_string(),
            a.batches.to_string(),
            format!("{prob:?}"),
        ]);
        Ok(())
    };
    if let Some(p) = a.p {
        row(p)?;
    }
    if let Some(target) = a.target {
        row(solve_minority_fraction(target, a.n_points, a.k, a.batches)?)?;
    }
    if a.p.is_none() && a.target.is_none() {
        return Err(Error::InvalidInput("kprob needs --p or --target".into()));
    }
    Ok(t.render(csv))
}
