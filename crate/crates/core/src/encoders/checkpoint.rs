//! Encoder checkpoint container.
//!
//! Layout: `NICE` magic, u32 format version, a JSON blob holding the
//! hyperparameters, a u32 tensor count, then named f32 tensors in a fixed
//! order (u32 name length, name bytes, u32 rank, u64 dims, payload).
//! Parameters are stored at f32 regardless of the in-memory scalar type;
//! batch-norm running statistics ride along so a loaded encoder evaluates
//! exactly like the one that was saved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data_io::format::{
    check_header, expect_eof, read_dim, read_exact_or_corrupt, read_f32s, read_json_blob,
    read_u32, write_f32s, write_json_blob, FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::numerics::layers::BatchNormState;
use crate::numerics::{Mat, Scalar, Tensor4};

use super::{EncoderParams, GaParams, HyperParams, ModuleKind, SaParams, SpatialModule};

const CKPT_MAGIC: &[u8; 4] = b"NICE";
const MAX_NAME: usize = 256;

fn write_tensor(w: &mut impl Write, name: &str, dims: &[usize], data: &[f32]) -> Result<()> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_f32s(w, data)
}

fn to_f32s<S: Scalar>(data: &[S]) -> Vec<f32> {
    data.iter().map(|v| v.as_f64() as f32).collect()
}

/// Writes `params` to `path`. The parameters are validated first so a
/// checkpoint on disk is always internally consistent.
pub fn save_checkpoint<S: Scalar>(path: impl AsRef<Path>, params: &EncoderParams<S>) -> Result<()> {
    params.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    write_json_blob(&mut w, &params.hyper)?;

    let module_tensors = match params.hyper.module {
        ModuleKind::None => 0,
        ModuleKind::Sa => 3,
        ModuleKind::Ga => 2,
    };
    w.write_all(&(15u32 + module_tensors).to_le_bytes())?;

    fn vec1<S: Scalar>(w: &mut impl Write, name: &str, v: &[S]) -> Result<()> {
        write_tensor(w, name, &[v.len()], &to_f32s(v))
    }
    fn mat<S: Scalar>(w: &mut impl Write, name: &str, m: &Mat<S>) -> Result<()> {
        write_tensor(w, name, &[m.rows(), m.cols()], &to_f32s(m.data()))
    }
    fn t4<S: Scalar>(w: &mut impl Write, name: &str, x: &Tensor4<S>) -> Result<()> {
        write_tensor(w, name, &x.dims(), &to_f32s(x.data()))
    }
    fn bn<S: Scalar>(w: &mut impl Write, prefix: &str, state: &BatchNormState<S>) -> Result<()> {
        vec1(w, &format!("{prefix}_gamma"), &state.gamma)?;
        vec1(w, &format!("{prefix}_beta"), &state.beta)?;
        vec1(w, &format!("{prefix}_running_mean"), &state.running_mean)?;
        vec1(w, &format!("{prefix}_running_var"), &state.running_var)
    }

    t4(&mut w, "temporal_w", &params.temporal_w)?;
    vec1(&mut w, "temporal_b", &params.temporal_b)?;
    bn(&mut w, "bn1", &params.bn1)?;
    t4(&mut w, "spatial_w", &params.spatial_w)?;
    vec1(&mut w, "spatial_b", &params.spatial_b)?;
    bn(&mut w, "bn2", &params.bn2)?;
    mat(&mut w, "proj_w", &params.proj_w)?;
    vec1(&mut w, "proj_b", &params.proj_b)?;
    write_tensor(&mut w, "log_t", &[1], &[params.log_t.as_f64() as f32])?;
    match &params.module {
        SpatialModule::None => {}
        SpatialModule::Sa(p) => {
            mat(&mut w, "sa_wq", &p.wq)?;
            mat(&mut w, "sa_wk", &p.wk)?;
            mat(&mut w, "sa_wv", &p.wv)?;
        }
        SpatialModule::Ga(p) => {
            mat(&mut w, "ga_w", &p.w)?;
            vec1(&mut w, "ga_a", &p.a)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_tensor(r: &mut impl Read, want: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    let name_len = read_u32(r, "tensor name length")? as usize;
    if name_len == 0 || name_len > MAX_NAME {
        return Err(Error::Format(format!(
            "tensor name length {name_len} out of range"
        )));
    }
    let mut bytes = vec![0u8; name_len];
    read_exact_or_corrupt(r, &mut bytes, "tensor name")?;
    let name = String::from_utf8(bytes)
        .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
    if name != want {
        return Err(Error::Format(format!(
            "expected tensor '{want}', found '{name}'"
        )));
    }
    let rank = read_u32(r, "tensor rank")? as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::Format(format!("tensor '{name}' has rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count = 1usize;
    for _ in 0..rank {
        let d = read_dim(r, "tensor dim")?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::Format(format!("tensor '{name}' dims overflow")))?;
        dims.push(d);
    }
    let data = read_f32s(r, count, "tensor payload")?;
    Ok((dims, data))
}

fn read_vec(r: &mut impl Read, want: &str, len: usize) -> Result<Vec<f32>> {
    let (dims, data) = read_tensor(r, want)?;
    if dims != [len] {
        return Err(Error::Format(format!(
            "tensor '{want}' has dims {dims:?}, expected [{len}]"
        )));
    }
    Ok(data)
}

fn read_mat(r: &mut impl Read, want: &str, rows: usize, cols: usize) -> Result<Mat<f32>> {
    let (dims, data) = read_tensor(r, want)?;
    if dims != [rows, cols] {
        return Err(Error::Format(format!(
            "tensor '{want}' has dims {dims:?}, expected [{rows}, {cols}]"
        )));
    }
    Ok(Mat::from_vec(rows, cols, data).expect("dims were checked"))
}

fn read_t4(r: &mut impl Read, want: &str, dims4: [usize; 4]) -> Result<Tensor4<f32>> {
    let (dims, data) = read_tensor(r, want)?;
    if dims != dims4 {
        return Err(Error::Format(format!(
            "tensor '{want}' has dims {dims:?}, expected {dims4:?}"
        )));
    }
    Ok(Tensor4::from_vec(dims4, data).expect("dims were checked"))
}

fn read_bn(r: &mut impl Read, prefix: &str, maps: usize) -> Result<BatchNormState<f32>> {
    Ok(BatchNormState {
        gamma: read_vec(r, &format!("{prefix}_gamma"), maps)?,
        beta: read_vec(r, &format!("{prefix}_beta"), maps)?,
        running_mean: read_vec(r, &format!("{prefix}_running_mean"), maps)?,
        running_var: read_vec(r, &format!("{prefix}_running_var"), maps)?,
    })
}

/// Reads a checkpoint back into f32 parameters, rejecting any structural
/// inconsistency between the stored hyperparameters and the tensors.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderParams<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, CKPT_MAGIC, "checkpoint")?;
    let hyper: HyperParams = read_json_blob(&mut r, "checkpoint")?;
    hyper.validate().map_err(|e| Error::Format(format!("checkpoint hyperparameters: {e}")))?;

    let expected = 15 + match hyper.module {
        ModuleKind::None => 0,
        ModuleKind::Sa => 3,
        ModuleKind::Ga => 2,
    };
    let count = read_u32(&mut r, "tensor count")?;
    if count != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, module '{}' requires {expected}",
            hyper.module
        )));
    }

    let temporal_w = read_t4(&mut r, "temporal_w", [hyper.k, 1, 1, hyper.m1])?;
    let temporal_b = read_vec(&mut r, "temporal_b", hyper.k)?;
    let bn1 = read_bn(&mut r, "bn1", hyper.k)?;
    let spatial_w = read_t4(&mut r, "spatial_w", [hyper.k, hyper.k, hyper.c, 1])?;
    let spatial_b = read_vec(&mut r, "spatial_b", hyper.k)?;
    let bn2 = read_bn(&mut r, "bn2", hyper.k)?;
    let proj_w = read_mat(&mut r, "proj_w", hyper.flatten_len(), hyper.d)?;
    let proj_b = read_vec(&mut r, "proj_b", hyper.d)?;
    let log_t = read_vec(&mut r, "log_t", 1)?[0];
    let module = match hyper.module {
        ModuleKind::None => SpatialModule::None,
        ModuleKind::Sa => SpatialModule::Sa(SaParams {
            wq: read_mat(&mut r, "sa_wq", hyper.t, hyper.t)?,
            wk: read_mat(&mut r, "sa_wk", hyper.t, hyper.t)?,
            wv: read_mat(&mut r, "sa_wv", hyper.t, hyper.t)?,
        }),
        ModuleKind::Ga => SpatialModule::Ga(GaParams {
            w: read_mat(&mut r, "ga_w", hyper.t, hyper.t)?,
            a: read_vec(&mut r, "ga_a", 2 * hyper.t)?,
        }),
    };
    expect_eof(&mut r, "checkpoint")?;

    let params = EncoderParams {
        hyper,
        temporal_w,
        temporal_b,
        bn1,
        spatial_w,
        spatial_b,
        bn2,
        proj_w,
        proj_b,
        module,
        log_t,
    };
    params
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint inconsistent: {e}")))?;
    Ok(params)
}
