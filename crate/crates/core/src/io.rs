//! On-disk raster and flow formats.
//!
//! Label masks go out as 16-bit binary PGM (P5, maxval 65535, big-endian
//! samples per the netpbm spec), uncertainty maps as 8-bit PGM. Flow fields
//! use a small fixed binary layout: the magic `RISFLOW1`, height and width as
//! little-endian u32, then the du plane and the dv plane as little-endian
//! f32, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::scene::{FlowField, LabelMask, UncertaintyMap};

pub const FLOW_MAGIC: &[u8; 8] = b"RISFLOW1";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file format: {0}")]
    BadFormat(String),
}

pub fn write_label_pgm(path: &Path, mask: &LabelMask) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n65535\n", mask.width, mask.height)?;
    for &v in &mask.data {
        w.write_all(&v.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_label_pgm(path: &Path) -> Result<LabelMask, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let (width, height, maxval) = read_pgm_header(&mut r)?;
    if maxval != 65535 {
        return Err(IoError::BadFormat(format!(
            "label mask must have maxval 65535, got {maxval}"
        )));
    }
    let mut raw = vec![0u8; width * height * 2];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok(LabelMask { height, width, data })
}

pub fn write_uncertainty_pgm(path: &Path, map: &UncertaintyMap) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", map.width, map.height)?;
    w.write_all(&map.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_uncertainty_pgm(path: &Path) -> Result<UncertaintyMap, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let (width, height, maxval) = read_pgm_header(&mut r)?;
    if maxval != 255 {
        return Err(IoError::BadFormat(format!(
            "uncertainty map must have maxval 255, got {maxval}"
        )));
    }
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)?;
    Ok(UncertaintyMap { height, width, data })
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FLOW_MAGIC)?;
    w.write_all(&(flow.height as u32).to_le_bytes())?;
    w.write_all(&(flow.width as u32).to_le_bytes())?;
    for plane in [&flow.du, &flow.dv] {
        for &v in plane {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FLOW_MAGIC {
        return Err(IoError::BadFormat("missing RISFLOW1 magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let height = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let width = u32::from_le_bytes(u32buf) as usize;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| IoError::BadFormat("flow dimensions overflow".into()))?;
    let read_plane = |r: &mut BufReader<File>| -> Result<Vec<f64>, IoError> {
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    };
    let du = read_plane(&mut r)?;
    let dv = read_plane(&mut r)?;
    Ok(FlowField { height, width, du, dv })
}

/// Parse a binary (P5) PGM header: returns (width, height, maxval). Accepts
/// `#` comments and arbitrary whitespace between tokens, single whitespace
/// byte after maxval.
fn read_pgm_header<R: Read>(r: &mut R) -> Result<(usize, usize, u32), IoError> {
    let mut byte = [0u8; 1];
    let mut next = |r: &mut R| -> Result<u8, IoError> {
        r.read_exact(&mut byte)?;
        Ok(byte[0])
    };
    let mut token = |r: &mut R| -> Result<Vec<u8>, IoError> {
        let mut b = next(r)?;
        loop {
            if b == b'#' {
                while b != b'\n' {
                    b = next(r)?;
                }
            }
            if b.is_ascii_whitespace() {
                b = next(r)?;
            } else {
                break;
            }
        }
        let mut tok = vec![];
        while !b.is_ascii_whitespace() {
            tok.push(b);
            b = next(r)?;
        }
        Ok(tok)
    };
    let magic = token(r)?;
    if magic != b"P5" {
        return Err(IoError::BadFormat("not a binary PGM (P5)".into()));
    }
    let mut num = |r: &mut R| -> Result<usize, IoError> {
        let tok = token(r)?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoError::BadFormat("bad PGM header number".into()))
    };
    let width = num(r)?;
    let height = num(r)?;
    let maxval = num(r)? as u32;
    Ok((width, height, maxval))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_pgm_round_trip() {
        let mut mask = LabelMask::zeros(3, 4);
        mask.set(0, 0, 1);
        mask.set(1, 2, 300);
        mask.set(2, 3, 65535);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_label_pgm(&path, &mask).unwrap();
        let back = read_label_pgm(&path).unwrap();
        assert_eq!(back.height, 3);
        assert_eq!(back.width, 4);
        assert_eq!(back.data, mask.data);
    }

    #[test]
    fn label_pgm_header_is_16_bit() {
        let mask = LabelMask::zeros(2, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_label_pgm(&path, &mask).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n65535\n"));
        assert_eq!(bytes.len(), 13 + 2 * 2 * 2);
    }

    #[test]
    fn uncertainty_pgm_round_trip() {
        let mut map = UncertaintyMap::zeros(2, 3);
        map.set(0, 1, 130);
        map.set(1, 2, 200);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.pgm");
        write_uncertainty_pgm(&path, &map).unwrap();
        let back = read_uncertainty_pgm(&path).unwrap();
        assert_eq!(back.data, map.data);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 1\n255\n\x07\x09").unwrap();
        let back = read_uncertainty_pgm(&path).unwrap();
        assert_eq!(back.data, vec![7, 9]);
    }

    #[test]
    fn flow_round_trips_at_f32_precision() {
        let mut flow = FlowField::zeros(2, 2);
        flow.set(0, 1, 1.25, -3.5);
        flow.set(1, 0, 0.1, 0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.risflow");
        write_flow(&path, &flow).unwrap();
        let back = read_flow(&path).unwrap();
        for i in 0..4 {
            assert_eq!(back.du[i], flow.du[i] as f32 as f64);
            assert_eq!(back.dv[i], flow.dv[i] as f32 as f64);
        }
    }

    #[test]
    fn flow_magic_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.risflow");
        std::fs::write(&path, b"NOTFLOW!\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_flow(&path), Err(IoError::BadFormat(_))));
    }
}
