//! Flat-file outputs: CSV tables for plotting, JSON manifests for record
//! keeping. Every writer validates its input before touching the disk.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::numerics::Mat;
use crate::{Error, Result};

use super::{Rdm, SweepResult};

/// Quotes a field only when it would break the row.
fn field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn trim3(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// One `label,value,top1,top5` row per sweep point.
pub fn write_sweep_csv(sweep: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    sweep.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "label,value,top1,top5")?;
    for i in 0..sweep.len() {
        writeln!(
            w,
            "{},{},{},{}",
            field(&sweep.labels[i]),
            sweep.values[i],
            sweep.top1[i],
            sweep.top5[i]
        )?;
    }
    Ok(())
}

/// The whole sweep as pretty JSON, metadata included.
pub fn write_sweep_manifest(sweep: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    sweep.validate()?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), sweep)?;
    Ok(())
}

/// Power map with `freq_hz` down the side and sample times (ms) across.
pub fn write_tfr_csv(
    map: &Mat<f64>,
    freqs: &[f64],
    sample_rate: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    if map.rows() != freqs.len() {
        return Err(Error::Dim(format!(
            "{} map rows for {} frequencies",
            map.rows(),
            freqs.len()
        )));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::Argument(format!(
            "sampling rate {sample_rate} Hz is not usable"
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "freq_hz")?;
    for s in 0..map.cols() {
        write!(w, ",{}", trim3(s as f64 / sample_rate * 1000.0))?;
    }
    writeln!(w)?;
    for (fi, &f) in freqs.iter().enumerate() {
        write!(w, "{f}")?;
        for &v in map.row(fi) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Similarity matrix with `concept,category` key columns.
pub fn write_rdm_csv(rdm: &Rdm, path: impl AsRef<Path>) -> Result<()> {
    rdm.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "concept,category")?;
    for c in &rdm.concept_ids {
        write!(w, ",{}", field(c))?;
    }
    writeln!(w)?;
    for i in 0..rdm.n() {
        write!(w, "{},{}", field(&rdm.concept_ids[i]), field(&rdm.categories[i]))?;
        for j in 0..rdm.n() {
            write!(w, ",{}", rdm.matrix.at(i, j))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// One `channel,weight` row per electrode.
pub fn write_topography_csv(
    channel_names: &[String],
    weights: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if channel_names.len() != weights.len() {
        return Err(Error::Dim(format!(
            "{} channel names for {} weights",
            channel_names.len(),
            weights.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "channel,weight")?;
    for (name, weight) in channel_names.iter().zip(weights) {
        writeln!(w, "{},{weight}", field(name))?;
    }
    Ok(())
}
