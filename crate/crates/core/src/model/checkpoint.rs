//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 LE header length, JSON header (network config,
//! tensor layout, free-form metadata), the flat parameter vector as f64 LE,
//! and a trailing SHA-256 over every preceding byte.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Network, NetworkConfig, Params};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DGFCKPT1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: NetworkConfig,
    layout: Vec<(String, Vec<usize>)>,
    n_params: usize,
    meta: BTreeMap<String, String>,
}

pub fn write_checkpoint(w: &mut impl Write, net: &Network, meta: &BTreeMap<String, String>) -> std::io::Result<()> {
    let header = Header {
        config: net.config.clone(),
        layout: net.params.layout(),
        n_params: net.params.len(),
        meta: meta.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let flat = net.params.flatten();
    let mut buf = Vec::with_capacity(12 + header.len() + 8 * flat.len() + 32);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    w.write_all(&buf)
}

/// Parses and verifies a checkpoint. Any structural problem or checksum
/// mismatch is a corruption error.
pub fn read_checkpoint(r: &mut impl Read) -> Result<(Network, BTreeMap<String, String>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::Corruption(format!("reading checkpoint: {e}")))?;
    let corrupt = |m: &str| Error::Corruption(format!("checkpoint: {m}"));
    if buf.len() < 12 + 32 {
        return Err(corrupt("truncated"));
    }
    if &buf[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let header_bytes = body.get(12..12 + hlen).ok_or_else(|| corrupt("header overruns file"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| Error::Corruption(format!("checkpoint header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| Error::Corruption(format!("checkpoint config: {e}")))?;
    let mut params = Params::zeros(&header.config);
    if params.layout() != header.layout || params.len() != header.n_params {
        return Err(corrupt("tensor layout does not match config"));
    }
    let data = &body[12 + hlen..];
    if data.len() != 8 * header.n_params {
        return Err(corrupt("parameter block has the wrong length"));
    }
    let flat: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite parameter"));
    }
    params.load_flat(&flat);
    Ok((
        Network {
            config: header.config,
            params,
        },
        header.meta,
    ))
}

pub fn save_checkpoint(path: &Path, net: &Network, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net, meta).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network {
        let cfg = NetworkConfig {
            widths: vec![4, 4, 8],
            head_hidden: 6,
            k: 3,
            ..Default::default()
        };
        Network::init(cfg, 11).unwrap()
    }

    fn bytes(net: &Network) -> Vec<u8> {
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "11".to_string());
        let mut out = Vec::new();
        write_checkpoint(&mut out, net, &meta).unwrap();
        out
    }

    #[test]
    fn round_trip_is_exact() {
        let net = small();
        let (back, meta) = read_checkpoint(&mut bytes(&net).as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(meta["seed"], "11");
        assert_eq!(bytes(&back), bytes(&net));
    }

    #[test]
    fn flipped_byte_is_detected() {
        let good = bytes(&small());
        for pos in [0, 9, 20, good.len() / 2, good.len() - 40, good.len() - 1] {
            let mut bad = good.clone();
            bad[pos] ^= 0x10;
            assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Corruption(_))), "pos {pos}");
        }
    }

    #[test]
    fn truncation_is_detected() {
        let good = bytes(&small());
        for len in [0, 5, 40, good.len() - 1] {
            assert!(matches!(read_checkpoint(&mut &good[..len]), Err(Error::Corruption(_))));
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(&dir.path().join("none.ckpt")), Err(Error::Io { .. })));
    }
}
