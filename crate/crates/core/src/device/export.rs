//! On-disk artifact formats.
//!
//! * Traces are JSON Lines, one [`TraceRecord`] per line:
//!   `{"seq":0,"kind":"write","location":17,"payload_digest":"<sha256 hex>"}`.
//!   `payload_digest` is `null` for reads and erases.
//! * Snapshots are a raw image file (the cell bytes followed by the spare
//!   bytes, if any) plus a JSON sidecar ([`SnapshotMeta`]).

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Geometry, OpKind, OpTrace, Snapshot};
use crate::crypto::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub kind: OpKind,
    pub location: u64,
    pub payload_digest: Option<String>,
}

pub fn trace_records(trace: &OpTrace) -> Vec<TraceRecord> {
    trace
        .iter()
        .enumerate()
        .map(|(i, e)| TraceRecord {
            seq: i as u64,
            kind: e.kind,
            location: e.location,
            payload_digest: e.data.as_deref().map(sha256_hex),
        })
        .collect()
}

pub fn write_trace<W: Write>(trace: &OpTrace, mut out: W) -> io::Result<()> {
    for rec in trace_records(trace) {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub geometry: Geometry,
    pub seed: u64,
    pub scheme: String,
    pub image_len: usize,
    pub spare_len: usize,
    pub digest: String,
}

/// Writes `<stem>.img` and `<stem>.json` into `dir`.
pub fn write_snapshot(dir: &Path, stem: &str, snap: &Snapshot, seed: u64, scheme: &str) -> io::Result<SnapshotMeta> {
    std::fs::create_dir_all(dir)?;
    let meta = SnapshotMeta {
        geometry: snap.geometry,
        seed,
        scheme: scheme.to_string(),
        image_len: snap.image.len(),
        spare_len: snap.spare.len(),
        digest: snap.digest(),
    };
    let mut raw = Vec::with_capacity(snap.image.len() + snap.spare.len());
    raw.extend_from_slice(&snap.image);
    raw.extend_from_slice(&snap.spare);
    std::fs::write(dir.join(format!("{stem}.img")), raw)?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

pub fn read_snapshot(dir: &Path, stem: &str) -> io::Result<(Snapshot, SnapshotMeta)> {
    let meta: SnapshotMeta = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let raw = std::fs::read(dir.join(format!("{stem}.img")))?;
    if raw.len() != meta.image_len + meta.spare_len {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "image length does not match sidecar"));
    }
    let (image, spare) = raw.split_at(meta.image_len);
    let snap = Snapshot { geometry: meta.geometry, image: image.to_vec(), spare: spare.to_vec() };
    if snap.digest() != meta.digest {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "snapshot digest mismatch"));
    }
    Ok((snap, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SeededRng;
    use crate::device::{wonly, BlockDevice, FlashDevice, Medium, Spare};

    #[test]
    fn trace_roundtrip() {
        let mut dev = BlockDevice::new(4, 16).unwrap();
        dev.write_block(1, &[3; 16]).unwrap();
        dev.read_block(1).unwrap();
        let trace = dev.take_trace();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let parsed = read_trace(&buf[..]).unwrap();
        assert_eq!(parsed, trace_records(&trace));
        assert_eq!(parsed[1].payload_digest, None);
        assert_eq!(parsed[0].kind, OpKind::Write);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"seq\":0,\"kind\":\"write\",\"location\":1,"));

        let mut filtered = Vec::new();
        write_trace(&wonly(&trace), &mut filtered).unwrap();
        assert!(read_trace(&filtered[..]).unwrap().iter().all(|r| r.kind != OpKind::Read));
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let dev = BlockDevice::randomized(8, 32, &mut SeededRng::new(1)).unwrap();
        let snap = dev.snapshot();
        let meta = write_snapshot(dir.path(), "snap", &snap, 1, "hive").unwrap();
        let (back, meta2) = read_snapshot(dir.path(), "snap").unwrap();
        assert_eq!(back, snap);
        assert_eq!(meta, meta2);

        let mut flash = FlashDevice::new(1, 2, 3).unwrap();
        flash.program_page(1, &[1, 0, 1], Spare::GEN2).unwrap();
        let fs = flash.snapshot();
        write_snapshot(dir.path(), "flash", &fs, 0, "pearl").unwrap();
        assert_eq!(read_snapshot(dir.path(), "flash").unwrap().0, fs);
    }

    #[test]
    fn corrupted_image_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let snap = BlockDevice::new(2, 4).unwrap().snapshot();
        write_snapshot(dir.path(), "s", &snap, 0, "x").unwrap();
        std::fs::write(dir.path().join("s.img"), [1u8; 8]).unwrap();
        assert!(read_snapshot(dir.path(), "s").is_err());
    }
}
