use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BoneLabel, Frame, FramePoint, FrameTransform, Position, ScanKind, ScanRecord};
use crate::error::{Error, Result};
use crate::rng::{self, ChaCha8Rng};

/// Length of the simulated sweep along the frame normal, mm.
const SWEEP_MM: f64 = 120.0;
/// Lateral centre of every bone patch, mm.
const MID_A: f64 = 40.0;
/// Upper bound on how far a jitter outlier ends up from a bone surface in
/// depth: 3 mm displacement, 2σ line noise and the slope picked up by its
/// lateral shift. Floaters must start beyond it (`floater_band[0]` of a gap
/// of at least `1.2·gap_mm`).
pub const JITTER_REACH_MM: f64 = 4.0;
/// Absorbs round-off from recovering `(a, c)` through pixels and transforms.
const EDGE_SLACK_MM: f64 = 1e-6;

/// Parameters of one synthetic scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub position: Position,
    pub scan_kind: ScanKind,
    /// Frames in a thorough sweep; partial scans keep a random subset.
    pub frames: usize,
    /// Sampling density along each bone line, points per mm.
    pub points_per_mm: f64,
    /// Injected artifacts as a fraction of true bone points, in [0, 1).
    pub artifact_rate: f64,
    /// Share of the artifacts placed as inter-bone floaters; the rest are
    /// jitter outliers next to a bone line.
    pub floater_fraction: f64,
    /// Standard deviation of the depth noise on bone lines, mm (clipped at 2σ).
    pub noise_mm: f64,
    /// Minimum distance between true points of different bones, mm.
    pub gap_mm: f64,
    /// Isotropic pixel spacing, mm per pixel.
    pub pixel_spacing_mm: f64,
    /// Fraction of frames a partial scan keeps, evenly spaced along the sweep.
    pub partial_frame_keep: f64,
    /// Probability that a partial scan keeps a bone line within a kept frame.
    pub partial_line_keep: f64,
    /// Floaters are drawn between these fractions of the patella → femur depth gap.
    pub floater_band: [f64; 2],
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            position: Position::P0,
            scan_kind: ScanKind::Thorough,
            frames: 61,
            points_per_mm: 0.5,
            artifact_rate: 0.04,
            floater_fraction: 0.5,
            noise_mm: 0.1,
            gap_mm: 20.0,
            pixel_spacing_mm: 0.2,
            partial_frame_keep: 0.5,
            partial_line_keep: 0.8,
            floater_band: [0.4, 0.6],
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.frames == 0 {
            return fail("phantom needs at least one frame".into());
        }
        if !(self.points_per_mm > 0.0 && self.points_per_mm.is_finite()) {
            return fail(format!(
                "points_per_mm must be positive (zero lines otherwise), got {}",
                self.points_per_mm
            ));
        }
        if !(0.0..1.0).contains(&self.artifact_rate) {
            return fail(format!("artifact_rate must be in [0, 1), got {}", self.artifact_rate));
        }
        if !(0.0..=1.0).contains(&self.floater_fraction) {
            return fail(format!("floater_fraction must be in [0, 1], got {}", self.floater_fraction));
        }
        if !(self.noise_mm >= 0.0 && self.noise_mm.is_finite()) {
            return fail(format!("noise_mm must be non-negative, got {}", self.noise_mm));
        }
        if !(self.gap_mm > 0.0 && self.gap_mm.is_finite()) {
            return fail(format!("gap_mm must be positive, got {}", self.gap_mm));
        }
        if !(self.pixel_spacing_mm > 0.0 && self.pixel_spacing_mm.is_finite()) {
            return fail(format!("pixel_spacing_mm must be positive, got {}", self.pixel_spacing_mm));
        }
        for (name, p) in [
            ("partial_frame_keep", self.partial_frame_keep),
            ("partial_line_keep", self.partial_line_keep),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("{name} must be in (0, 1], got {p}"));
            }
        }
        let [lo, hi] = self.floater_band;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return fail(format!("floater_band must satisfy 0 <= lo <= hi <= 1, got {lo}..{hi}"));
        }
        Ok(())
    }
}

/// Depth polynomial `b = k0 + a1·a + a2·a² + c1·c + c2·c²` over a lateral
/// (`a`) × sweep (`c`) rectangle, all in millimetres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadric {
    pub k0: f64,
    pub a1: f64,
    pub a2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Quadric {
    /// `k0 + ka·(a − a0)² + kc·(c − c0)² + tilt·(c − c0)`.
    fn centered(k0: f64, a0: f64, ka: f64, c0: f64, kc: f64, tilt: f64) -> Self {
        Self {
            k0: k0 + ka * a0 * a0 + kc * c0 * c0 - tilt * c0,
            a1: -2.0 * ka * a0,
            a2: ka,
            c1: -2.0 * kc * c0 + tilt,
            c2: kc,
        }
    }

    fn minus(self, o: Quadric) -> Self {
        Self {
            k0: self.k0 - o.k0,
            a1: self.a1 - o.a1,
            a2: self.a2 - o.a2,
            c1: self.c1 - o.c1,
            c2: self.c2 - o.c2,
        }
    }

    pub fn depth(&self, a: f64, c: f64) -> f64 {
        self.k0 + a * (self.a1 + a * self.a2) + c * (self.c1 + c * self.c2)
    }
}

/// One bone as a quadric depth patch seen by the probe.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneSurface {
    pub label: BoneLabel,
    pub lateral: [f64; 2],
    pub sweep: [f64; 2],
    pub surface: Quadric,
}

impl BoneSurface {
    pub fn covers_sweep(&self, c: f64) -> bool {
        self.sweep[0] <= c && c <= self.sweep[1]
    }
}

/// Bone layout of the phantom knee at one flexion position.
///
/// Scan coordinates: `a` lateral, `b` depth below the probe, `c` along the
/// sweep. The femur spans the proximal sweep, the tibia the distal one, and
/// the patella rides above the femur, sliding distally with flexion. Its
/// underside sits `gap` (plus a slope margin) above the femur at its centre
/// and curls away towards its rim.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomGeometry {
    pub bones: [BoneSurface; 3],
    /// Rig rotation shared by every frame (probe plane → world).
    pub rotation: Matrix3<f64>,
    /// World position of the probe origin at sweep coordinate 0.
    pub origin: Vector3<f64>,
}

impl PhantomGeometry {
    pub fn new(position: Position, gap_mm: f64, noise_mm: f64) -> Self {
        let flex = position.flexion();
        let femur_q = Quadric::centered(45.0, MID_A, 0.008, 30.0, -0.003, 0.0);
        let femur = BoneSurface {
            label: BoneLabel::Femur,
            lateral: [10.0, 70.0],
            sweep: [0.0, 60.0],
            surface: femur_q,
        };
        let p_start = 4.0 + 16.0 * flex;
        let p_mid = p_start + 18.0;
        // The femur slopes by up to ~0.5 under the patella; a 1.2 factor on the
        // vertical offset keeps the perpendicular gap above `gap_mm`, and 4σ
        // absorbs the clipped depth noise on both surfaces.
        let offset = 1.2 * gap_mm + 4.0 * noise_mm;
        let rim = Quadric::centered(offset, MID_A, 0.015, p_mid, 0.015, 0.0);
        let patella = BoneSurface {
            label: BoneLabel::Patella,
            lateral: [MID_A - 22.0, MID_A + 22.0],
            sweep: [p_start, p_start + 36.0],
            surface: femur_q.minus(rim),
        };
        let t_start = 60.0 + 1.5 * gap_mm;
        let tibia = BoneSurface {
            label: BoneLabel::Tibia,
            lateral: [10.0, 70.0],
            sweep: [t_start, SWEEP_MM.max(t_start + 20.0)],
            surface: Quadric::centered(48.0, MID_A, 0.006, t_start, 0.0, 0.1 * flex),
        };
        let base = Matrix3::new(0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let tilt = Rotation3::from_euler_angles(0.1, -0.05, 0.2).into_inner();
        Self {
            bones: [femur, patella, tibia],
            rotation: tilt * base,
            origin: Vector3::new(120.0, -40.0, 60.0),
        }
    }

    pub fn bone(&self, label: BoneLabel) -> &BoneSurface {
        &self.bones[label.index()]
    }

    /// Sweep coordinate of thorough frame `i` out of `frames`.
    pub fn frame_sweep(&self, i: usize, frames: usize) -> f64 {
        let end = self.bones[2].sweep[1];
        if frames == 1 {
            0.0
        } else {
            end * i as f64 / (frames - 1) as f64
        }
    }

    /// Sweep coordinate of a frame built by [`Self::frame_transform`].
    pub fn sweep_of(&self, t: &FrameTransform) -> f64 {
        (t.translation - self.origin).dot(&self.rotation.column(2))
    }

    /// Depth distance from `(a, b)` at sweep `c` to the nearest bone surface
    /// spanning that spot; infinite when no bone does.
    pub fn surface_offset(&self, a: f64, c: f64, b: f64) -> f64 {
        self.bones
            .iter()
            .filter(|bone| {
                let within = |x: f64, [lo, hi]: [f64; 2]| lo - EDGE_SLACK_MM <= x && x <= hi + EDGE_SLACK_MM;
                within(c, bone.sweep) && within(a, bone.lateral)
            })
            .map(|bone| (b - bone.surface.depth(a, c)).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Ground-truth kind of an artifact pixel. Jitter outliers stay within
    /// [`JITTER_REACH_MM`] of a bone surface; floaters sit deeper in the gap.
    pub fn is_floater(&self, t: &FrameTransform, p: &FramePoint) -> bool {
        let [sa, sb] = t.pixel_spacing;
        p.is_artifact && self.surface_offset(p.u * sa, self.sweep_of(t), p.v * sb) > JITTER_REACH_MM
    }

    pub fn frame_transform(&self, frame_index: u32, sweep: f64, spacing: f64) -> FrameTransform {
        let normal = self.rotation.column(2).into_owned();
        FrameTransform {
            frame_index,
            pixel_spacing: [spacing, spacing],
            rotation: self.rotation,
            translation: self.origin + normal * sweep,
        }
    }
}

fn clipped_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z.clamp(-2.0, 2.0)
}

fn stream_for(cfg: &PhantomConfig) -> u64 {
    let kind = match cfg.scan_kind {
        ScanKind::Thorough => 0,
        ScanKind::Partial => 1,
    };
    (rng::streams::PHANTOM << 8) | ((cfg.position.index() as u64) << 1) | kind
}

struct Line {
    label: BoneLabel,
    line_id: u32,
    /// (lateral, depth) in mm.
    points: Vec<(f64, f64)>,
}

struct FrameDraft {
    index: u32,
    sweep: f64,
    lines: Vec<Line>,
    extra: Vec<FramePoint>,
}

/// Generates one synthetic scan. Deterministic in `(cfg, seed)`.
pub fn gen_phantom(cfg: &PhantomConfig, seed: u64) -> Result<ScanRecord> {
    cfg.validate()?;
    let geom = PhantomGeometry::new(cfg.position, cfg.gap_mm, cfg.noise_mm);
    let mut rng = rng::stream_rng(seed, stream_for(cfg));
    let partial = cfg.scan_kind == ScanKind::Partial;
    let step = 1.0 / cfg.points_per_mm;
    let sp = cfg.pixel_spacing_mm;

    let mut next_line = 0u32;
    let mut drafts = Vec::new();
    // Partial sweeps keep evenly spaced frames at the keep rate, from a random phase.
    let phase: f64 = if partial { rng.random() } else { 0.0 };
    let keep_frame = |i: usize| {
        let at = |j: f64| ((j + phase) * cfg.partial_frame_keep).floor();
        !partial || at(i as f64) != at(i as f64 - 1.0)
    };
    for i in 0..cfg.frames {
        let sweep = geom.frame_sweep(i, cfg.frames);
        if !keep_frame(i) {
            continue;
        }
        let mut lines = Vec::new();
        for bone in &geom.bones {
            if !bone.covers_sweep(sweep) {
                continue;
            }
            if partial && rng.random::<f64>() >= cfg.partial_line_keep {
                continue;
            }
            let [lo, hi] = bone.lateral;
            let n = ((hi - lo) / step).floor() as usize + 1;
            let points = (0..n)
                .map(|j| {
                    let a = lo + j as f64 * step;
                    let b = bone.surface.depth(a, sweep) + clipped_normal(&mut rng, cfg.noise_mm);
                    (a, b)
                })
                .collect();
            lines.push(Line {
                label: bone.label,
                line_id: next_line,
                points,
            });
            next_line += 1;
        }
        drafts.push(FrameDraft {
            index: i as u32,
            sweep,
            lines,
            extra: Vec::new(),
        });
    }

    let bone_points: usize = drafts
        .iter()
        .flat_map(|d| d.lines.iter())
        .map(|l| l.points.len())
        .sum();
    let n_artifacts = (cfg.artifact_rate * bone_points as f64).round() as usize;
    let n_floaters = (cfg.floater_fraction * n_artifacts as f64).round() as usize;
    let n_jitter = n_artifacts - n_floaters;

    // Jitter outliers: a bone point pushed off its line, keeping label and line.
    if n_jitter > 0 && bone_points > 0 {
        let index: Vec<(usize, usize, usize)> = drafts
            .iter()
            .enumerate()
            .flat_map(|(d, draft)| {
                draft
                    .lines
                    .iter()
                    .enumerate()
                    .flat_map(move |(l, line)| (0..line.points.len()).map(move |p| (d, l, p)))
            })
            .collect();
        for _ in 0..n_jitter {
            let (d, l, p) = index[rng.random_range(0..index.len())];
            let line = &drafts[d].lines[l];
            let (a, b) = line.points[p];
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let [lo, hi] = geom.bone(line.label).lateral;
            let a = (a + clipped_normal(&mut rng, 0.5)).clamp(lo, hi);
            let b = b + sign * rng.random_range(1.0..3.0);
            let point = FramePoint {
                u: a / sp,
                v: b.max(0.0) / sp,
                label: line.label,
                line_id: line.line_id,
                is_artifact: true,
            };
            drafts[d].extra.push(point);
        }
    }

    // Floaters between the patella and the femur, mislabeled as either bone.
    let patella = geom.bone(BoneLabel::Patella);
    let femur = geom.bone(BoneLabel::Femur);
    let slab: Vec<usize> = drafts
        .iter()
        .enumerate()
        .filter(|(_, d)| patella.covers_sweep(d.sweep) && femur.covers_sweep(d.sweep))
        .map(|(i, _)| i)
        .collect();
    if !slab.is_empty() {
        let [band_lo, band_hi] = cfg.floater_band;
        for _ in 0..n_floaters {
            let d = slab[rng.random_range(0..slab.len())];
            let sweep = drafts[d].sweep;
            let a = rng.random_range(patella.lateral[0]..=patella.lateral[1]);
            let top = patella.surface.depth(a, sweep);
            let bottom = femur.surface.depth(a, sweep);
            let t = band_lo + (band_hi - band_lo) * rng.random::<f64>();
            let b = top + t * (bottom - top);
            let label = if rng.random::<bool>() {
                BoneLabel::Femur
            } else {
                BoneLabel::Patella
            };
            let line_id = match drafts[d].lines.iter().find(|l| l.label == label) {
                Some(line) => line.line_id,
                None => {
                    next_line += 1;
                    next_line - 1
                }
            };
            drafts[d].extra.push(FramePoint {
                u: a / sp,
                v: b / sp,
                label,
                line_id,
                is_artifact: true,
            });
        }
    }

    let frames = drafts
        .into_iter()
        .filter(|d| !d.lines.is_empty() || !d.extra.is_empty())
        .map(|d| {
            let mut points: Vec<FramePoint> = d
                .lines
                .iter()
                .flat_map(|line| {
                    line.points.iter().map(|&(a, b)| FramePoint {
                        u: a / sp,
                        v: b / sp,
                        label: line.label,
                        line_id: line.line_id,
                        is_artifact: false,
                    })
                })
                .collect();
            points.extend(d.extra);
            Frame {
                transform: geom.frame_transform(d.index, d.sweep, sp),
                points,
            }
        })
        .collect();

    Ok(ScanRecord {
        scan_id: format!("{}-{}", cfg.position, cfg.scan_kind),
        position: cfg.position,
        scan_kind: cfg.scan_kind,
        frames,
    })
}
