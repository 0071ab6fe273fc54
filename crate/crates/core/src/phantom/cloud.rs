use super::{project_frame, LabeledCloud, Provenance, ScanRecord, WorldPoint};
use crate::error::{Error, Result};

/// Lifts every frame point of `scan` into world space, frame-major.
pub fn build_cloud(scan: &ScanRecord) -> Result<LabeledCloud> {
    if scan.point_count() == 0 {
        return Err(Error::EmptyInput(format!("scan {} has no points", scan.scan_id)));
    }
    let mut points = Vec::with_capacity(scan.point_count());
    for frame in &scan.frames {
        for fp in &frame.points {
            points.push(WorldPoint {
                xyz: project_frame(&frame.transform, fp.u, fp.v)?,
                label: fp.label,
                provenance: Provenance {
                    scan_id: scan.scan_id.clone(),
                    frame_index: frame.index(),
                    u: fp.u,
                    v: fp.v,
                },
                is_artifact: fp.is_artifact,
                synthetic: false,
            });
        }
    }
    Ok(LabeledCloud {
        source: scan.scan_id.clone(),
        points,
    })
}
