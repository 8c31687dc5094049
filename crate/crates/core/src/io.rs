//! Binary file formats. All payload numbers are f32 little-endian; the
//! in-memory f64 values are quantized once at write time, so write → read →
//! write reproduces identical bytes.
//!
//! Motion file: `"SMOT"`, version, J, F, D_m, fps, content string, style
//! string, then F*D_m f32 frames row-major.
//!
//! Checkpoint: `"MGCK"`, version, free-form meta string (stage provenance),
//! then named tensors (name, rows, cols, trainable flag, data).

use crate::motion::{MotionSequence, FEATURE_DIM, NUM_JOINTS};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MOTION_MAGIC: &[u8; 4] = b"SMOT";
const CKPT_MAGIC: &[u8; 4] = b"MGCK";
const FORMAT_VERSION: u32 = 1;

fn wu32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn ru32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn wstr(w: &mut impl Write, s: &str) -> Result<()> {
    wu32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn rstr(r: &mut impl Read) -> Result<String> {
    let n = ru32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Format(format!("unreasonable string length {n}")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("bad utf-8: {e}")))
}

fn wf32s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn rf32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn check_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!("{what}: bad magic {m:?}")));
    }
    let v = ru32(r)?;
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!("{what}: unsupported version {v}")));
    }
    Ok(())
}

/// Write one motion clip.
pub fn write_motion(m: &MotionSequence, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MOTION_MAGIC)?;
    wu32(&mut w, FORMAT_VERSION)?;
    wu32(&mut w, NUM_JOINTS as u32)?;
    wu32(&mut w, m.num_frames() as u32)?;
    wu32(&mut w, FEATURE_DIM as u32)?;
    wu32(&mut w, m.fps)?;
    wstr(&mut w, &m.content)?;
    wstr(&mut w, &m.style)?;
    wf32s(&mut w, m.raw())?;
    w.flush()?;
    Ok(())
}

/// Read one motion clip.
pub fn read_motion(path: &Path) -> Result<MotionSequence> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MOTION_MAGIC, "motion file")?;
    let j = ru32(&mut r)? as usize;
    let f = ru32(&mut r)? as usize;
    let d = ru32(&mut r)? as usize;
    let fps = ru32(&mut r)?;
    if j != NUM_JOINTS || d != FEATURE_DIM {
        return Err(Error::Format(format!(
            "motion file geometry J={j}, D={d}; this build expects J={NUM_JOINTS}, D={FEATURE_DIM}"
        )));
    }
    let content = rstr(&mut r)?;
    let style = rstr(&mut r)?;
    let frames = rf32s(&mut r, f * d)?;
    MotionSequence::new(frames, content, style, fps)
}

/// Save all parameters of a store with a provenance string.
pub fn save_params(store: &ParamStore, meta: &str, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    wu32(&mut w, FORMAT_VERSION)?;
    wstr(&mut w, meta)?;
    wu32(&mut w, store.len() as u32)?;
    for (name, tensor, trainable) in store.iter() {
        wstr(&mut w, name)?;
        wu32(&mut w, tensor.rows() as u32)?;
        wu32(&mut w, tensor.cols() as u32)?;
        w.write_all(&[trainable as u8])?;
        wf32s(&mut w, tensor.data())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint into raw (meta, entries) form.
pub fn read_params_raw(path: &Path) -> Result<(String, Vec<(String, Tensor, bool)>)> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, CKPT_MAGIC, "checkpoint")?;
    let meta = rstr(&mut r)?;
    let count = ru32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = rstr(&mut r)?;
        let rows = ru32(&mut r)? as usize;
        let cols = ru32(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let data = rf32s(&mut r, rows * cols)?;
        entries.push((name, Tensor::new(rows, cols, data), flag[0] != 0));
    }
    Ok((meta, entries))
}

/// Load a checkpoint into an existing store. Every store parameter must be
/// present with a matching shape; trainable flags are restored too.
pub fn load_params_into(store: &mut ParamStore, path: &Path) -> Result<String> {
    let (meta, entries) = read_params_raw(path)?;
    for (name, tensor, trainable) in entries {
        let p = store.find(&name).ok_or_else(|| {
            Error::Format(format!("checkpoint has unknown parameter '{name}'"))
        })?;
        if store.get(p).shape() != tensor.shape() {
            return Err(Error::Format(format!(
                "parameter '{name}': checkpoint shape {:?} vs model {:?}",
                tensor.shape(),
                store.get(p).shape()
            )));
        }
        store.set(p, tensor);
        store.set_trainable(p, trainable);
    }
    Ok(meta)
}

/// FNV-1a over a byte slice; handy for freeze checks and test fingerprints.
pub fn bytes_hash64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// FNV-1a of a file's contents.
pub fn file_hash64(path: &Path) -> Result<u64> {
    let mut f = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    Ok(bytes_hash64(&buf))
}
