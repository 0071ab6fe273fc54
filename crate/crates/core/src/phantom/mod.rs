//! Synthetic knee scans, the frame → world transform chain and file formats.
//!
//! A scan is a sweep of parallel 2D frames. Each frame carries labeled bone
//! lines in pixel coordinates and a [`FrameTransform`] that lifts pixels into
//! world millimetres as `world = pose ∘ scaling ∘ plane-embedding`.

mod cloud;
mod generate;
pub mod io;
mod transform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cloud::build_cloud;
pub use generate::{gen_phantom, PhantomConfig, PhantomGeometry, JITTER_REACH_MM};
pub use transform::{project_frame, FrameTransform, ORTHONORMAL_TOL};

use crate::error::{Error, Result};

/// Bone class of a labeled point. Codes are stable: femur 0, patella 1, tibia 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoneLabel {
    Femur,
    Patella,
    Tibia,
}

impl BoneLabel {
    pub const ALL: [BoneLabel; 3] = [BoneLabel::Femur, BoneLabel::Patella, BoneLabel::Tibia];
    pub const COUNT: usize = 3;

    pub fn code(self) -> u8 {
        match self {
            BoneLabel::Femur => 0,
            BoneLabel::Patella => 1,
            BoneLabel::Tibia => 2,
        }
    }

    pub fn index(self) -> usize {
        self.code() as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BoneLabel::Femur),
            1 => Some(BoneLabel::Patella),
            2 => Some(BoneLabel::Tibia),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoneLabel::Femur => "femur",
            BoneLabel::Patella => "patella",
            BoneLabel::Tibia => "tibia",
        }
    }
}

impl fmt::Display for BoneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoneLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoneLabel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown bone label '{s}'")))
    }
}

/// Knee flexion position, P0 (full flexion) through P3 (full extension).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Position {
    P0,
    P1,
    P2,
    P3,
}

impl Position {
    pub const ALL: [Position; 4] = [Position::P0, Position::P1, Position::P2, Position::P3];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Flexion as a fraction: 1 at full flexion, 0 at full extension.
    pub fn flexion(self) -> f64 {
        1.0 - self.index() as f64 / 3.0
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.index())
    }
}

impl FromStr for Position {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Position::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown position '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanKind {
    Thorough,
    Partial,
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanKind::Thorough => "thorough",
            ScanKind::Partial => "partial",
        })
    }
}

impl FromStr for ScanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thorough" => Ok(ScanKind::Thorough),
            "partial" => Ok(ScanKind::Partial),
            _ => Err(Error::InvalidInput(format!("unknown scan kind '{s}'"))),
        }
    }
}

/// A labeled pixel inside one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePoint {
    pub u: f64,
    pub v: f64,
    pub label: BoneLabel,
    pub line_id: u32,
    /// Ground truth: injected soft-tissue or noise false positive.
    pub is_artifact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub transform: FrameTransform,
    pub points: Vec<FramePoint>,
}

impl Frame {
    pub fn index(&self) -> u32 {
        self.transform.frame_index
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub position: Position,
    pub scan_kind: ScanKind,
    pub frames: Vec<Frame>,
}

impl ScanRecord {
    pub fn point_count(&self) -> usize {
        self.frames.iter().map(|f| f.points.len()).sum()
    }

    pub fn frame(&self, frame_index: u32) -> Option<&Frame> {
        self.frames
            .binary_search_by_key(&frame_index, Frame::index)
            .ok()
            .map(|i| &self.frames[i])
    }

    /// Checks transform validity, ascending unique frame indices and finite pixels.
    pub fn validate(&self) -> Result<()> {
        for pair in self.frames.windows(2) {
            if pair[0].index() >= pair[1].index() {
                return Err(Error::Validation(format!(
                    "scan {}: frame indices not strictly ascending ({} then {})",
                    self.scan_id,
                    pair[0].index(),
                    pair[1].index()
                )));
            }
        }
        for frame in &self.frames {
            frame.transform.validate()?;
            if let Some(p) = frame.points.iter().find(|p| !(p.u.is_finite() && p.v.is_finite())) {
                return Err(Error::Validation(format!(
                    "scan {}: frame {} has non-finite pixel ({}, {})",
                    self.scan_id,
                    frame.index(),
                    p.u,
                    p.v
                )));
            }
        }
        Ok(())
    }
}

/// Where a world point came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scan_id: String,
    pub frame_index: u32,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub xyz: [f64; 3],
    pub label: BoneLabel,
    pub provenance: Provenance,
    pub is_artifact: bool,
    /// Set on augmentation copies; never written by the file formats.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCloud {
    pub source: String,
    pub points: Vec<WorldPoint>,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.xyz).collect()
    }

    pub fn labels(&self) -> Vec<BoneLabel> {
        self.points.iter().map(|p| p.label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_codes_are_a_bijection() {
        for l in BoneLabel::ALL {
            assert_eq!(BoneLabel::from_code(l.code()), Some(l));
            assert_eq!(l.name().parse::<BoneLabel>().unwrap(), l);
        }
        assert_eq!(BoneLabel::from_code(3), None);
    }

    #[test]
    fn positions_are_ordered_by_flexion() {
        assert!(Position::P0 < Position::P3);
        assert_eq!(Position::P0.flexion(), 1.0);
        assert_eq!(Position::P3.flexion(), 0.0);
        assert_eq!("p2".parse::<Position>().unwrap(), Position::P2);
    }
}
