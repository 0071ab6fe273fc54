use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the orthonormality and determinant checks on a pose rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Per-frame pixel spacing plus the rigid pose of the probe plane.
///
/// A pixel `(u, v)` is embedded as `(u, v, 0)`, scaled by `(sx, sy)` into
/// millimetres and then moved by `rotation`/`translation` into world space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "TransformRepr", into = "TransformRepr")]
pub struct FrameTransform {
    pub frame_index: u32,
    pub pixel_spacing: [f64; 2],
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl FrameTransform {
    pub fn new(
        frame_index: u32,
        pixel_spacing: [f64; 2],
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let t = Self {
            frame_index,
            pixel_spacing,
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let [sx, sy] = self.pixel_spacing;
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(Error::Validation(format!(
                "frame {}: pixel spacing must be positive, got ({sx}, {sy})",
                self.frame_index
            )));
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err(Error::Validation(format!(
                "frame {}: non-finite translation",
                self.frame_index
            )));
        }
        let r = &self.rotation;
        let deviation = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(deviation <= ORTHONORMAL_TOL) {
            return Err(Error::Validation(format!(
                "frame {}: rotation is not orthonormal (max |RᵀR − I| = {deviation:.3e})",
                self.frame_index
            )));
        }
        let det = r.determinant();
        if !((det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(Error::Validation(format!(
                "frame {}: rotation determinant is {det}, expected +1",
                self.frame_index
            )));
        }
        Ok(())
    }

    /// In-plane millimetre coordinates of a pixel.
    pub fn scale(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new(self.pixel_spacing[0] * u, self.pixel_spacing[1] * v, 0.0)
    }

    /// Sweep direction: the plane normal in world coordinates.
    pub fn normal(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }
}

/// Lifts a pixel of frame `t` into world millimetres.
pub fn project_frame(t: &FrameTransform, u: f64, v: f64) -> Result<[f64; 3]> {
    if !(u.is_finite() && v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "pixel ({u}, {v}) is not finite"
        )));
    }
    let world = t.rotation * t.scale(u, v) + t.translation;
    Ok([world.x, world.y, world.z])
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    frame_index: u32,
    pixel_spacing: [f64; 2],
    /// Row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<FrameTransform> for TransformRepr {
    fn from(t: FrameTransform) -> Self {
        let r = &t.rotation;
        TransformRepr {
            frame_index: t.frame_index,
            pixel_spacing: t.pixel_spacing,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

// Unvalidated on purpose: loaders call `validate` and report a typed error.
impl From<TransformRepr> for FrameTransform {
    fn from(r: TransformRepr) -> Self {
        let m = r.rotation;
        FrameTransform {
            frame_index: r.frame_index,
            pixel_spacing: r.pixel_spacing,
            rotation: Matrix3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            translation: Vector3::from(r.translation),
        }
    }
}
