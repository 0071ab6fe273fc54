//! Mapping filter verdicts back onto the 2D frames and scoring them.
//!
//! A frame is scored only when the filter deleted at least one of its
//! pixels. It counts as a failure when a bone line that lost points is left
//! either empty or with a single point, since neither can be reconstructed.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterReport;
use crate::phantom::{BoneLabel, FrameTransform, LabeledCloud, Position, ScanRecord};

/// Largest out-of-plane distance (mm) accepted when inverting a point.
pub const PLANE_TOL_MM: f64 = 1e-6;
/// Largest disagreement (pixels) between a recomputed pixel and its provenance.
pub const PIXEL_TOL: f64 = 1e-6;

/// World point back to in-plane pixel coordinates of frame `t`.
pub fn invert_point(xyz: [f64; 3], t: &FrameTransform) -> Result<(f64, f64)> {
    if xyz.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite point {xyz:?}")));
    }
    let p = t.rotation.transpose() * (Vector3::from(xyz) - t.translation);
    if p.z.abs() > PLANE_TOL_MM || p.z.is_nan() {
        return Err(Error::WrongFrame {
            frame_index: t.frame_index,
            residual_mm: p.z.abs(),
        });
    }
    Ok((p.x / t.pixel_spacing[0], p.y / t.pixel_spacing[1]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayPixel {
    pub u: f64,
    pub v: f64,
    pub label: BoneLabel,
    pub line_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineStats {
    pub line_id: u32,
    pub label: BoneLabel,
    pub total: usize,
    pub retained: usize,
    pub whole_line_deleted: bool,
}

impl LineStats {
    pub fn deleted(&self) -> usize {
        self.total - self.retained
    }

    /// Lost points and is left with nothing or a single point.
    pub fn is_broken(&self) -> bool {
        self.deleted() > 0 && (self.whole_line_deleted || self.retained == 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameOverlay {
    pub scan_id: String,
    pub position: Position,
    pub frame_index: u32,
    pub retained: Vec<OverlayPixel>,
    pub deleted: Vec<OverlayPixel>,
    /// Sorted by line id.
    pub lines: Vec<LineStats>,
}

impl FrameOverlay {
    pub fn has_deletions(&self) -> bool {
        !self.deleted.is_empty()
    }

    pub fn is_failure(&self) -> bool {
        self.lines.iter().any(LineStats::is_broken)
    }
}

/// Routes every cloud point to its provenance frame, re-derives its pixel
/// through the inverse transform and groups the verdicts per frame and line.
pub fn invert_cloud(report: &FilterReport, cloud: &LabeledCloud, scan: &ScanRecord) -> Result<Vec<FrameOverlay>> {
    if report.scan_id != scan.scan_id || cloud.source != scan.scan_id {
        return Err(Error::Corruption(format!(
            "scan id mismatch: report {}, cloud {}, scan {}",
            report.scan_id, cloud.source, scan.scan_id
        )));
    }
    report.check_consistent(cloud.len())?;
    if cloud.len() != scan.point_count() {
        return Err(Error::Corruption(format!(
            "cloud has {} points but scan {} has {}",
            cloud.len(),
            scan.scan_id,
            scan.point_count()
        )));
    }

    let mut lookup: HashMap<(u32, u64, u64), Vec<(BoneLabel, u32)>> = HashMap::new();
    let mut overlays: Vec<FrameOverlay> = Vec::with_capacity(scan.frames.len());
    let mut lines: Vec<BTreeMap<u32, LineStats>> = Vec::with_capacity(scan.frames.len());
    for frame in &scan.frames {
        let mut per_line = BTreeMap::new();
        for p in &frame.points {
            lookup
                .entry((frame.index(), p.u.to_bits(), p.v.to_bits()))
                .or_default()
                .push((p.label, p.line_id));
            per_line
                .entry(p.line_id)
                .or_insert(LineStats {
                    line_id: p.line_id,
                    label: p.label,
                    total: 0,
                    retained: 0,
                    whole_line_deleted: false,
                })
                .total += 1;
        }
        lines.push(per_line);
        overlays.push(FrameOverlay {
            scan_id: scan.scan_id.clone(),
            position: scan.position,
            frame_index: frame.index(),
            retained: Vec::new(),
            deleted: Vec::new(),
            lines: Vec::new(),
        });
    }

    for (i, wp) in cloud.points.iter().enumerate() {
        let prov = &wp.provenance;
        let slot = scan
            .frames
            .binary_search_by_key(&prov.frame_index, |f| f.index())
            .map_err(|_| Error::Corruption(format!("point {i}: frame {} not in scan", prov.frame_index)))?;
        let (u, v) = invert_point(wp.xyz, &scan.frames[slot].transform)
            .map_err(|e| Error::Corruption(format!("point {i}: {e}")))?;
        if (u - prov.u).abs() > PIXEL_TOL || (v - prov.v).abs() > PIXEL_TOL {
            return Err(Error::Corruption(format!(
                "point {i}: inverted pixel ({u}, {v}) disagrees with provenance ({}, {})",
                prov.u, prov.v
            )));
        }
        let key = (prov.frame_index, prov.u.to_bits(), prov.v.to_bits());
        let candidates = lookup.get_mut(&key).filter(|c| !c.is_empty()).ok_or_else(|| {
            Error::Corruption(format!("point {i}: no pixel ({}, {}) in frame {}", prov.u, prov.v, prov.frame_index))
        })?;
        let pick = candidates.iter().position(|(l, _)| *l == wp.label).ok_or_else(|| {
            Error::Corruption(format!("point {i}: label {} disagrees with the scan", wp.label))
        })?;
        let (label, line_id) = candidates.swap_remove(pick);
        let pixel = OverlayPixel {
            u: prov.u,
            v: prov.v,
            label,
            line_id,
        };
        if report.verdicts[i].deleted {
            overlays[slot].deleted.push(pixel);
        } else {
            overlays[slot].retained.push(pixel);
            lines[slot].get_mut(&line_id).expect("line registered from scan").retained += 1;
        }
    }

    for (overlay, per_line) in overlays.iter_mut().zip(lines) {
        overlay.lines = per_line
            .into_values()
            .map(|mut s| {
                s.whole_line_deleted = s.retained == 0;
                s
            })
            .collect();
    }
    Ok(overlays)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSummary {
    pub position: Position,
    pub frames_with_deletions: usize,
    pub ok_frames: usize,
    /// `None` when no frame had deletions.
    pub precision: Option<f64>,
}

impl PrecisionSummary {
    pub fn from_counts(position: Position, frames_with_deletions: usize, failures: usize) -> Self {
        assert!(failures <= frames_with_deletions);
        let ok_frames = frames_with_deletions - failures;
        Self {
            position,
            frames_with_deletions,
            ok_frames,
            precision: (frames_with_deletions > 0).then(|| ok_frames as f64 / frames_with_deletions as f64),
        }
    }

    pub fn failures(&self) -> usize {
        self.frames_with_deletions - self.ok_frames
    }
}

pub fn frame_precision(overlays: &[FrameOverlay], position: Position) -> PrecisionSummary {
    let scored: Vec<&FrameOverlay> = overlays.iter().filter(|o| o.has_deletions()).collect();
    let failures = scored.iter().filter(|o| o.is_failure()).count();
    PrecisionSummary::from_counts(position, scored.len(), failures)
}

/// Unweighted mean over the applicable summaries.
pub fn mean_precision(summaries: &[PrecisionSummary]) -> Result<f64> {
    let vals: Vec<f64> = summaries.iter().filter_map(|s| s.precision).collect();
    if vals.is_empty() {
        return Err(Error::Domain("no position has frames with deletions".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Percentage with one decimal, e.g. `0.98387` → `"98.4"`.
pub fn display_percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

/// Per-position table plus the mean row, fixed-width or CSV.
pub fn format_summary_table(summaries: &[PrecisionSummary], csv: bool) -> String {
    let mean = mean_precision(summaries).ok();
    let pct = |p: Option<f64>| p.map(display_percent).unwrap_or_else(|| "n/a".into());
    let raw = |p: Option<f64>| p.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
    let mut out = String::new();
    if csv {
        out.push_str("position,frames_with_deletions,ok_frames,precision,percent\n");
        for s in summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.position,
                s.frames_with_deletions,
                s.ok_frames,
                raw(s.precision),
                pct(s.precision)
            );
        }
        let _ = writeln!(out, "mean,,,{},{}", raw(mean), pct(mean));
    } else {
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>10} {:>7}", "position", "frames", "ok", "precision", "pct");
        for s in summaries {
            let _ = writeln!(
                out,
                "{:<8} {:>8} {:>8} {:>10} {:>7}",
                s.position.to_string(),
                s.frames_with_deletions,
                s.ok_frames,
                raw(s.precision),
                pct(s.precision)
            );
        }
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>10} {:>7}", "mean", "", "", raw(mean), pct(mean));
    }
    out
}

/// Synthetic overlays with exactly `frames_with_deletions` scored frames, of
/// which `failures` leave a line with a single point. Used to check the
/// scoring arithmetic against known counts.
pub fn count_fixture(position: Position, frames_with_deletions: usize, failures: usize) -> Vec<FrameOverlay> {
    let px = |u: f64, line_id: u32| OverlayPixel {
        u,
        v: 0.0,
        label: BoneLabel::Femur,
        line_id,
    };
    let mut out: Vec<FrameOverlay> = (0..frames_with_deletions)
        .map(|f| {
            let broken = f < failures;
            let kept = if broken { 1 } else { 3 };
            FrameOverlay {
                scan_id: format!("fixture-{position}"),
                position,
                frame_index: f as u32,
                retained: (0..kept).map(|u| px(u as f64, 0)).collect(),
                deleted: vec![px(10.0, 0)],
                lines: vec![LineStats {
                    line_id: 0,
                    label: BoneLabel::Femur,
                    total: kept + 1,
                    retained: kept,
                    whole_line_deleted: false,
                }],
            }
        })
        .collect();
    // An untouched frame with a single-point line must not be scored.
    out.push(FrameOverlay {
        scan_id: format!("fixture-{position}"),
        position,
        frame_index: frames_with_deletions as u32,
        retained: vec![px(0.0, 0)],
        deleted: Vec::new(),
        lines: vec![LineStats {
            line_id: 0,
            label: BoneLabel::Femur,
            total: 1,
            retained: 1,
            whole_line_deleted: false,
        }],
    });
    out
}

/// Writes one JSON file per frame into `dir` as `<scan>_frame_<index>.json`.
pub fn save_overlays(dir: &Path, overlays: &[FrameOverlay]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for o in overlays {
        let path = dir.join(format!("{}_frame_{:04}.json", o.scan_id, o.frame_index));
        let text = serde_json::to_string_pretty(o).expect("overlay serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads every `*.json` overlay in `dir`, sorted by file name.
pub fn load_overlays(dir: &Path) -> Result<Vec<FrameOverlay>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line() as u64,
                msg: format!("{}: {e}", p.display()),
            })
        })
        .collect()
}
