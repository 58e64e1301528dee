//! Binary container formats for epoched EEG (EEGT) and feature banks (FEAT).
//!
//! Both formats are little-endian: a 4-byte magic, a u32 version, u64 shape
//! fields, the f32 payload, then a u64-length-prefixed JSON metadata blob.
//! Round-trips are bit-exact. Structural problems map to `Error::Format`
//! (wrong magic, unsupported version, inconsistent metadata) while short or
//! oversized files map to `Error::Corruption`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{Mat, Tensor4};
use crate::{Error, Result};

const EEGT_MAGIC: &[u8; 4] = b"EEGT";
const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub(crate) const FORMAT_VERSION: u32 = 1;

use super::{EEGEpochSet, FeatureBank};

#[derive(Serialize, Deserialize)]
struct EpochMeta {
    sample_rate: f64,
    channel_names: Vec<String>,
    stimulus_ids: Vec<String>,
    concept_ids: Vec<String>,
    repetition_index: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    image_ids: Vec<String>,
    concept_ids: Vec<String>,
    encoder_tag: String,
}

pub(crate) fn read_exact_or_corrupt(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Corruption(format!("file truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_dim(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = read_u64(r, what)?;
    usize::try_from(v).map_err(|_| Error::Corruption(format!("{what} {v} overflows usize")))
}

/// Reads `count` little-endian f32 values in fixed-size chunks.
pub(crate) fn read_f32s(r: &mut impl Read, count: usize, what: &str) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; 1 << 16];
    let mut left = count;
    while left > 0 {
        let take = left.min(buf.len() / 4);
        let bytes = &mut buf[..take * 4];
        read_exact_or_corrupt(r, bytes, what)?;
        out.extend(bytes.chunks_exact(4).map(|c| {
            f32::from_le_bytes([c[0], c[1], c[2], c[3]])
        }));
        left -= take;
    }
    Ok(out)
}

pub(crate) fn write_f32s(w: &mut impl Write, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(1 << 16);
    for chunk in values.chunks(1 << 14) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Checks magic bytes and version, returning a format error naming the file
/// kind on mismatch.
pub(crate) fn check_header(r: &mut impl Read, magic: &[u8; 4], kind: &str) -> Result<()> {
    let mut m = [0u8; 4];
    read_exact_or_corrupt(r, &mut m, "magic")?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?} for {kind} file",
            String::from_utf8_lossy(&m)
        )));
    }
    let version = read_u32(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported {kind} version {version}"
        )));
    }
    Ok(())
}

pub(crate) fn read_json_blob<T: for<'de> Deserialize<'de>>(r: &mut impl Read, kind: &str) -> Result<T> {
    let len = read_dim(r, "metadata length")?;
    let mut bytes = vec![0u8; len];
    read_exact_or_corrupt(r, &mut bytes, "metadata blob")?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("invalid {kind} metadata JSON: {e}")))
}

pub(crate) fn expect_eof(r: &mut impl Read, kind: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Corruption(format!(
            "trailing bytes after {kind} metadata"
        ))),
    }
}

pub(crate) fn write_json_blob<T: Serialize>(w: &mut impl Write, meta: &T) -> Result<()> {
    let bytes = serde_json::to_vec(meta)?;
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(&bytes)?;
    Ok(())
}

/// Writes an epoch set to the EEGT container format.
pub fn save_epochs(path: impl AsRef<Path>, set: &EEGEpochSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let [n, _, c, t] = set.epochs.dims();
    w.write_all(EEGT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for dim in [n, c, t] {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    write_f32s(&mut w, set.epochs.data())?;
    write_json_blob(
        &mut w,
        &EpochMeta {
            sample_rate: set.sample_rate,
            channel_names: set.channel_names.clone(),
            stimulus_ids: set.stimulus_ids.clone(),
            concept_ids: set.concept_ids.clone(),
            repetition_index: set.repetition_index.clone(),
        },
    )?;
    w.flush()?;
    Ok(())
}

/// Loads an EEGT file and validates its invariants.
pub fn load_epochs(path: impl AsRef<Path>) -> Result<EEGEpochSet> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, EEGT_MAGIC, "EEGT")?;
    let n = read_dim(&mut r, "trial count")?;
    let c = read_dim(&mut r, "electrode count")?;
    let t = read_dim(&mut r, "sample count")?;
    let total = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(t))
        .ok_or_else(|| {
            Error::Corruption(format!("epoch dims ({n}, {c}, {t}) overflow"))
        })?;
    let data = read_f32s(&mut r, total, "epoch payload")?;
    let meta: EpochMeta = read_json_blob(&mut r, "EEGT")?;
    expect_eof(&mut r, "EEGT")?;
    let set = EEGEpochSet {
        epochs: Tensor4::from_vec([n, 1, c, t], data)?,
        sample_rate: meta.sample_rate,
        channel_names: meta.channel_names,
        stimulus_ids: meta.stimulus_ids,
        concept_ids: meta.concept_ids,
        repetition_index: meta.repetition_index,
    };
    set.validate()?;
    Ok(set)
}

/// Writes a feature bank to the FEAT container format.
pub fn save_feature_bank(path: impl AsRef<Path>, bank: &FeatureBank) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEAT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for dim in [bank.features.rows(), bank.features.cols()] {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    write_f32s(&mut w, bank.features.data())?;
    write_json_blob(
        &mut w,
        &BankMeta {
            image_ids: bank.image_ids.clone(),
            concept_ids: bank.concept_ids.clone(),
            encoder_tag: bank.encoder_tag.clone(),
        },
    )?;
    w.flush()?;
    Ok(())
}

/// Loads a FEAT file and validates its invariants.
pub fn load_feature_bank(path: impl AsRef<Path>) -> Result<FeatureBank> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, FEAT_MAGIC, "FEAT")?;
    let rows = read_dim(&mut r, "row count")?;
    let d = read_dim(&mut r, "feature dimension")?;
    let total = rows
        .checked_mul(d)
        .ok_or_else(|| Error::Corruption(format!("bank dims ({rows}, {d}) overflow")))?;
    let data = read_f32s(&mut r, total, "feature payload")?;
    let meta: BankMeta = read_json_blob(&mut r, "FEAT")?;
    expect_eof(&mut r, "FEAT")?;
    let bank = FeatureBank {
        features: Mat::from_vec(rows, d, data)?,
        image_ids: meta.image_ids,
        concept_ids: meta.concept_ids,
        encoder_tag: meta.encoder_tag,
    };
    bank.validate()?;
    Ok(bank)
}

/// Writes a headerless f32 matrix: rows u64, cols u64, row-major payload.
pub fn write_raw_matrix(path: impl AsRef<Path>, m: &Mat<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    write_f32s(&mut w, m.data())?;
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_raw_matrix`].
pub fn read_raw_matrix(path: impl AsRef<Path>) -> Result<Mat<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let rows = read_dim(&mut r, "row count")?;
    let cols = read_dim(&mut r, "column count")?;
    let total = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Corruption(format!("matrix dims ({rows}, {cols}) overflow")))?;
    let data = read_f32s(&mut r, total, "matrix payload")?;
    expect_eof(&mut r, "matrix")?;
    Mat::from_vec(rows, cols, data)
}
