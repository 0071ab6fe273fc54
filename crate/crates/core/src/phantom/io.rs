//! On-disk formats: a columnar text cloud, a binary little-endian PLY cloud
//! and a JSON scan manifest. All three round-trip `f64` values exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoneLabel, LabeledCloud, Provenance, ScanRecord, WorldPoint};
use crate::error::{Error, Result};

pub const CLOUD_COLUMNS: [&str; 9] = ["x", "y", "z", "label", "scan_id", "frame", "u", "v", "artifact"];
pub const MANIFEST_FORMAT: &str = "dgfilter-manifest/1";

/// File format of a point cloud, chosen from the file extension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Csv,
    Ply,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => CloudFormat::Ply,
            _ => CloudFormat::Csv,
        }
    }
}

pub fn save_cloud(path: &Path, cloud: &LabeledCloud) -> Result<()> {
    match CloudFormat::from_path(path) {
        CloudFormat::Csv => save_cloud_csv(path, cloud),
        CloudFormat::Ply => save_cloud_ply(path, cloud),
    }
}

pub fn load_cloud(path: &Path) -> Result<LabeledCloud> {
    match CloudFormat::from_path(path) {
        CloudFormat::Csv => load_cloud_csv(path),
        CloudFormat::Ply => load_cloud_ply(path),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

pub fn write_cloud_csv<W: Write>(writer: W, cloud: &LabeledCloud) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CLOUD_COLUMNS)?;
    for p in &cloud.points {
        // `{}` on f64 prints the shortest string that parses back to the same bits.
        w.write_record([
            p.xyz[0].to_string(),
            p.xyz[1].to_string(),
            p.xyz[2].to_string(),
            p.label.code().to_string(),
            p.provenance.scan_id.clone(),
            p.provenance.frame_index.to_string(),
            p.provenance.u.to_string(),
            p.provenance.v.to_string(),
            u8::from(p.is_artifact).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_cloud_csv(path: &Path, cloud: &LabeledCloud) -> Result<()> {
    write_cloud_csv(create(path)?, cloud).map_err(|e| csv_err(path, e))
}

pub fn read_cloud_csv<R: Read>(reader: R, path: &Path) -> Result<LabeledCloud> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            msg: "empty file: missing header row".into(),
        });
    }
    if headers.iter().ne(CLOUD_COLUMNS) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}, got {}", CLOUD_COLUMNS.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut points = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| &record[i];
        let float = |i: usize| -> Result<f64> {
            let v: f64 = field(i).trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not a number: '{}'", CLOUD_COLUMNS[i], field(i)),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse { line, msg: format!("column {} is not finite", CLOUD_COLUMNS[i]) })
            }
        };
        let int = |i: usize| -> Result<u32> {
            field(i).trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not a non-negative integer: '{}'", CLOUD_COLUMNS[i], field(i)),
            })
        };
        let code = int(3)?;
        let label = u8::try_from(code)
            .ok()
            .and_then(BoneLabel::from_code)
            .ok_or_else(|| Error::Schema {
                row: line,
                msg: format!("unknown label code {code} (valid: 0 femur, 1 patella, 2 tibia)"),
            })?;
        let is_artifact = match field(8).trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Schema {
                    row: line,
                    msg: format!("artifact flag must be 0 or 1, got '{other}'"),
                })
            }
        };
        points.push(WorldPoint {
            xyz: [float(0)?, float(1)?, float(2)?],
            label,
            provenance: Provenance {
                scan_id: field(4).to_string(),
                frame_index: int(5)?,
                u: float(6)?,
                v: float(7)?,
            },
            is_artifact,
            synthetic: false,
        });
    }
    let source = points
        .first()
        .map(|p| p.provenance.scan_id.clone())
        .ok_or_else(|| Error::Parse { line: 2, msg: "no data rows".into() })?;
    Ok(LabeledCloud { source, points })
}

pub fn load_cloud_csv(path: &Path) -> Result<LabeledCloud> {
    read_cloud_csv(open(path)?, path)
}

const PLY_PROPERTIES: [(&str, &str); 9] = [
    ("double", "x"),
    ("double", "y"),
    ("double", "z"),
    ("uchar", "label"),
    ("int", "scan"),
    ("int", "frame"),
    ("double", "u"),
    ("double", "v"),
    ("uchar", "artifact"),
];
const PLY_RECORD_BYTES: usize = 8 * 5 + 4 * 2 + 2;

/// Binary little-endian PLY. Scan ids live in `comment scan_id <i> <id>`
/// header lines and each vertex refers to one by index.
pub fn write_cloud_ply<W: Write>(mut w: W, cloud: &LabeledCloud) -> std::io::Result<()> {
    let mut scans: Vec<&str> = Vec::new();
    let mut scan_of = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let id = p.provenance.scan_id.as_str();
        let idx = match scans.iter().position(|s| *s == id) {
            Some(i) => i,
            None => {
                scans.push(id);
                scans.len() - 1
            }
        };
        scan_of.push(idx as i32);
    }
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "comment source {}", cloud.source)?;
    for (i, s) in scans.iter().enumerate() {
        writeln!(w, "comment scan_id {i} {s}")?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    for (ty, name) in PLY_PROPERTIES {
        writeln!(w, "property {ty} {name}")?;
    }
    writeln!(w, "end_header")?;
    for (p, scan) in cloud.points.iter().zip(scan_of) {
        for c in p.xyz {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&[p.label.code()])?;
        w.write_all(&scan.to_le_bytes())?;
        w.write_all(&(p.provenance.frame_index as i32).to_le_bytes())?;
        w.write_all(&p.provenance.u.to_le_bytes())?;
        w.write_all(&p.provenance.v.to_le_bytes())?;
        w.write_all(&[u8::from(p.is_artifact)])?;
    }
    w.flush()
}

pub fn save_cloud_ply(path: &Path, cloud: &LabeledCloud) -> Result<()> {
    if let Some(p) = cloud.points.iter().find(|p| p.provenance.scan_id.contains(['\n', '\r'])) {
        return Err(Error::InvalidInput(format!(
            "scan id {:?} cannot be stored in a PLY header",
            p.provenance.scan_id
        )));
    }
    write_cloud_ply(create(path)?, cloud).map_err(|e| Error::io(path, e))
}

pub fn read_cloud_ply<R: BufRead>(mut r: R) -> Result<LabeledCloud> {
    let mut line_no = 0u64;
    let mut next_line = |r: &mut R| -> Result<(u64, String)> {
        let mut buf = Vec::new();
        line_no += 1;
        let n = r.read_until(b'\n', &mut buf).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if n == 0 {
            return Err(Error::Parse { line: line_no, msg: "unexpected end of header".into() });
        }
        let s = String::from_utf8(buf).map_err(|_| Error::Parse {
            line: line_no,
            msg: "header is not UTF-8".into(),
        })?;
        Ok((line_no, s.trim_end_matches(['\n', '\r']).to_string()))
    };
    let bad = |line: u64, msg: String| Error::Parse { line, msg };

    let (l, magic) = next_line(&mut r)?;
    if magic != "ply" {
        return Err(bad(l, "missing 'ply' magic".into()));
    }
    let (l, format) = next_line(&mut r)?;
    if format != "format binary_little_endian 1.0" {
        return Err(bad(l, format!("unsupported format line '{format}'")));
    }
    let mut source = None;
    let mut scans: Vec<String> = Vec::new();
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let (l, line) = next_line(&mut r)?;
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("comment source ") {
            source = Some(rest.to_string());
        } else if let Some(rest) = line.strip_prefix("comment scan_id ") {
            let (idx, id) = rest.split_once(' ').unwrap_or((rest, ""));
            if idx.parse::<usize>().ok() != Some(scans.len()) {
                return Err(bad(l, format!("scan ids out of order at '{line}'")));
            }
            scans.push(id.to_string());
        } else if line.starts_with("comment") {
            continue;
        } else if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(rest.trim().parse::<usize>().map_err(|_| bad(l, format!("bad vertex count '{rest}'")))?);
        } else if let Some(rest) = line.strip_prefix("property ") {
            let (ty, name) = rest.split_once(' ').ok_or_else(|| bad(l, format!("bad property '{line}'")))?;
            props.push((l, ty.to_string(), name.to_string()));
        } else {
            return Err(bad(l, format!("unexpected header line '{line}'")));
        }
    }
    let count = count.ok_or_else(|| bad(line_no, "missing 'element vertex'".into()))?;
    if props.len() != PLY_PROPERTIES.len()
        || props.iter().zip(PLY_PROPERTIES).any(|((_, t, n), (et, en))| t != et || n != en)
    {
        return Err(bad(line_no, "vertex properties do not match the cloud schema".into()));
    }
    if count == 0 {
        return Err(bad(line_no, "cloud has no vertices".into()));
    }

    let mut points = Vec::with_capacity(count);
    let mut rec = [0u8; PLY_RECORD_BYTES];
    for row in 0..count {
        r.read_exact(&mut rec).map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("truncated body: vertex {row} of {count} missing"),
        })?;
        let f = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
        let i = |o: usize| i32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        let label = BoneLabel::from_code(rec[24]).ok_or_else(|| Error::Schema {
            row: row as u64,
            msg: format!("unknown label code {}", rec[24]),
        })?;
        let scan = usize::try_from(i(25)).ok().and_then(|s| scans.get(s)).ok_or_else(|| Error::Schema {
            row: row as u64,
            msg: format!("unknown scan index {}", i(25)),
        })?;
        let frame = u32::try_from(i(29)).map_err(|_| Error::Schema {
            row: row as u64,
            msg: format!("negative frame index {}", i(29)),
        })?;
        let is_artifact = match rec[49] {
            0 => false,
            1 => true,
            b => return Err(Error::Schema { row: row as u64, msg: format!("artifact flag {b}") }),
        };
        points.push(WorldPoint {
            xyz: [f(0), f(8), f(16)],
            label,
            provenance: Provenance {
                scan_id: scan.clone(),
                frame_index: frame,
                u: f(33),
                v: f(41),
            },
            is_artifact,
            synthetic: false,
        });
    }
    let source = source.unwrap_or_else(|| points[0].provenance.scan_id.clone());
    Ok(LabeledCloud { source, points })
}

pub fn load_cloud_ply(path: &Path) -> Result<LabeledCloud> {
    read_cloud_ply(open(path)?)
}

#[derive(Serialize, Deserialize)]
struct ManifestFile<S> {
    format: String,
    scan: S,
}

pub fn save_manifest(path: &Path, scan: &ScanRecord) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(
        &mut w,
        &ManifestFile {
            format: MANIFEST_FORMAT.to_string(),
            scan,
        },
    )
    .map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(text: &str) -> Result<ScanRecord> {
    let file: ManifestFile<ScanRecord> = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    if file.format != MANIFEST_FORMAT {
        return Err(Error::Validation(format!(
            "manifest format '{}' is not '{MANIFEST_FORMAT}'",
            file.format
        )));
    }
    file.scan.validate()?;
    Ok(file.scan)
}

pub fn load_manifest(path: &Path) -> Result<ScanRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{build_cloud, gen_phantom, PhantomConfig, ScanKind};
    use proptest::prelude::*;

    fn phantom_cloud() -> (ScanRecord, LabeledCloud) {
        let scan = gen_phantom(&PhantomConfig { scan_kind: ScanKind::Partial, ..Default::default() }, 4).unwrap();
        let cloud = build_cloud(&scan).unwrap();
        (scan, cloud)
    }

    #[test]
    fn csv_and_ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (_, cloud) = phantom_cloud();
        for name in ["c.csv", "c.ply"] {
            let path = dir.path().join(name);
            save_cloud(&path, &cloud).unwrap();
            assert_eq!(load_cloud(&path).unwrap(), cloud, "{name}");
        }
    }

    #[test]
    fn empty_csv_is_a_parse_error() {
        let err = read_cloud_csv("".as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = read_cloud_csv("x,y,z,label,scan_id,frame,u,v,artifact\n".as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn label_code_three_is_a_schema_error_on_its_row() {
        let text = "x,y,z,label,scan_id,frame,u,v,artifact\n\
                    1,2,3,0,s,0,1,1,0\n\
                    1,2,3,3,s,0,1,1,0\n";
        match read_cloud_csv(text.as_bytes(), Path::new("x.csv")) {
            Err(Error::Schema { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains('3'));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_csv_reports_line() {
        let text = "x,y,z,label,scan_id,frame,u,v,artifact\n1,2,3,0,s,0,1,1,0\n1,abc,3,0,s,0,1,1,0\n";
        assert!(matches!(
            read_cloud_csv(text.as_bytes(), Path::new("x.csv")),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn ply_rejects_garbage() {
        assert!(matches!(read_cloud_ply("".as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(read_cloud_ply("ply\nformat ascii 1.0\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
        let (_, cloud) = phantom_cloud();
        let mut bytes = Vec::new();
        write_cloud_ply(&mut bytes, &cloud).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_cloud_ply(bytes.as_slice()), Err(Error::Parse { .. })));
    }

    #[test]
    fn ply_label_code_three_is_a_schema_error() {
        let (_, mut cloud) = phantom_cloud();
        cloud.points.truncate(2);
        let mut bytes = Vec::new();
        write_cloud_ply(&mut bytes, &cloud).unwrap();
        let body = bytes.len() - 2 * PLY_RECORD_BYTES;
        bytes[body + PLY_RECORD_BYTES + 24] = 3;
        assert!(matches!(read_cloud_ply(bytes.as_slice()), Err(Error::Schema { row: 1, .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (scan, _) = phantom_cloud();
        save_manifest(&path, &scan).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), scan);
    }

    #[test]
    fn manifest_malformed_and_invalid() {
        assert!(matches!(parse_manifest("{\n\"format\": "), Err(Error::Parse { .. })));
        let (mut scan, _) = phantom_cloud();
        scan.frames[0].transform.rotation[(0, 1)] += 1e-3;
        let text = serde_json::to_string(&ManifestFile { format: MANIFEST_FORMAT.into(), scan: &scan }).unwrap();
        assert!(matches!(parse_manifest(&text), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn csv_round_trips_arbitrary_floats(
            coords in prop::collection::vec((prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, -1e9f64..1e9, 0u8..3, any::<bool>()), 1..20)
        ) {
            let cloud = LabeledCloud {
                source: "s,with \"quotes\"".into(),
                points: coords.iter().enumerate().map(|(i, &(a, b, l, art))| WorldPoint {
                    xyz: [a, b, -a],
                    label: BoneLabel::from_code(l).unwrap(),
                    provenance: Provenance { scan_id: "s,with \"quotes\"".into(), frame_index: i as u32, u: b, v: a.abs() },
                    is_artifact: art,
                    synthetic: false,
                }).collect(),
            };
            let mut buf = Vec::new();
            write_cloud_csv(&mut buf, &cloud).unwrap();
            prop_assert_eq!(read_cloud_csv(buf.as_slice(), Path::new("p.csv")).unwrap(), cloud.clone());
            let mut buf = Vec::new();
            write_cloud_ply(&mut buf, &cloud).unwrap();
            prop_assert_eq!(read_cloud_ply(buf.as_slice()).unwrap(), cloud);
        }
    }
}
