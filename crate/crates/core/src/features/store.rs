//! Binary feature store: the interchange format for embeddings.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "EMB1" | dim: u32 | count: u64
//! count x { id: u64 | rotation_deg: u16 | year: u16 | values: dim x f32 }
//! ```
//!
//! Round-trips are bit-identical; embeddings computed elsewhere (e.g. by a
//! neural extractor) can be written in this format and flow through the
//! same indexing pipeline.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

/// One stored feature vector with its provenance tags.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: u64,
    pub rotation_deg: u16,
    pub year: u16,
    pub values: Vec<f32>,
}

/// Serialized size in bytes of a store holding `count` records of `dim`.
pub fn file_size(dim: usize, count: usize) -> u64 {
    (4 + 4 + 8) as u64 + count as u64 * (8 + 2 + 2 + dim as u64 * 4)
}

pub fn write_records(path: &Path, dim: usize, records: &[FeatureRecord]) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        if r.values.len() != dim {
            return Err(Error::invalid(format!(
                "record {} has {} values, store dimension is {}",
                r.id,
                r.values.len(),
                dim
            )));
        }
        w.write_all(&r.id.to_le_bytes())?;
        w.write_all(&r.rotation_deg.to_le_bytes())?;
        w.write_all(&r.year.to_le_bytes())?;
        for v in &r.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<(usize, Vec<FeatureRecord>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Corrupt(format!("{}: missing header", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"EMB1\"",
            path.display(),
            magic
        )));
    }
    let dim = read_u32(&mut r, path)? as usize;
    let count = read_u64(&mut r, path)? as usize;
    if dim == 0 {
        return Err(Error::Format(format!("{}: zero dimension", path.display())));
    }
    let mut records = Vec::with_capacity(count);
    let mut buf = vec![0u8; dim * 4];
    for i in 0..count {
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|_| truncated(path, i, count))?;
        let id = u64::from_le_bytes(head[0..8].try_into().unwrap());
        let rotation_deg = u16::from_le_bytes(head[8..10].try_into().unwrap());
        let year = u16::from_le_bytes(head[10..12].try_into().unwrap());
        r.read_exact(&mut buf).map_err(|_| truncated(path, i, count))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(FeatureRecord {
            id,
            rotation_deg,
            year,
            values,
        });
    }
    // trailing garbage is as suspicious as truncation
    let mut one = [0u8; 1];
    if r.read(&mut one)? != 0 {
        return Err(Error::Corrupt(format!(
            "{}: trailing bytes after {} records",
            path.display(),
            count
        )));
    }
    Ok((dim, records))
}

fn truncated(path: &Path, at: usize, count: usize) -> Error {
    Error::Corrupt(format!(
        "{}: truncated at record {} of {}",
        path.display(),
        at,
        count
    ))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Corrupt(format!("{}: truncated header", path.display())))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Corrupt(format!("{}: truncated header", path.display())))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, dim: usize) -> Vec<FeatureRecord> {
        (0..n)
            .map(|i| FeatureRecord {
                id: i as u64 * 7 + 1,
                rotation_deg: (i % 4) as u16 * 90,
                year: 2018 + (i % 4) as u16,
                values: (0..dim).map(|j| (i * dim + j) as f32 * 0.25 - 3.0).collect(),
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.emb1");
        let recs = sample(10, 6);
        write_records(&path, 6, &recs).unwrap();
        let (dim, back) = read_records(&path).unwrap();
        assert_eq!(dim, 6);
        assert_eq!(back, recs);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len() as u64, file_size(6, 10));
        write_records(&path, 6, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.emb1");
        write_records(&path, 4, &sample(3, 4)).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_records(&path), Err(Error::Format(_))));

        bytes[0] = b'E';
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_records(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.emb1");
        assert!(write_records(&path, 5, &sample(2, 4)).is_err());
    }
}
