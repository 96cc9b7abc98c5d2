//! Binary checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "PHCS"  u32 version  f64 b  f64 c_offset  f64 m_floor
//! u8 kind (0 cascade, 1 replicated)  u32 layers  u32 replicas
//! per layer: u32 k  u32 n_in  u32 n_out  f64 sigma2
//!            C (k·n_in f64, row-major)  then Y (k·n_out f64) per replica
//! SHA-256 of every preceding byte
//! ```
//!
//! `U` and `Λ` are not stored; they are recomputed on load.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cascade::{CascadeState, ReplicatedCascade};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::package::{KernelConstants, PackageState};
use crate::trainer::Model;

pub const MAGIC: &[u8; 4] = b"PHCS";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let (kind, slices): (u8, Vec<&CascadeState>) = match model {
        Model::Cascade(c) => (0, vec![c]),
        Model::Replicated(r) => (1, r.slices().iter().collect()),
    };
    let base = slices[0];
    let k = base.k_const();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_f64s(&mut out, &[k.b, k.c_offset, k.m_floor]);
    out.push(kind);
    put_u32(&mut out, base.depth());
    put_u32(&mut out, slices.len());
    for (tau, layer) in base.layers().iter().enumerate() {
        put_u32(&mut out, layer.k());
        put_u32(&mut out, layer.n_in());
        put_u32(&mut out, layer.n_out());
        put_f64s(&mut out, &[layer.sigma2()]);
        put_f64s(&mut out, layer.c().as_slice());
        for s in &slices {
            put_f64s(&mut out, s.layers()[tau].y().as_slice());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint: unexpected end of data at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows.checked_mul(cols).filter(|n| n.checked_mul(8).is_some()).ok_or_else(|| {
            Error::Format(format!("checkpoint: implausible matrix {rows}x{cols}"))
        })?;
        let bytes = self.take(n * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Matrix::from_vec(rows, cols, data)
            .map_err(|e| Error::Format(format!("checkpoint: bad matrix at offset {}: {e}", self.pos)))
    }
}

/// Checks magic, version and digest (in that order), then rebuilds the model.
pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Format(format!("checkpoint: file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("checkpoint: bad magic, not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint: unsupported version {version}, expected {VERSION}"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint: digest mismatch (file corrupt or truncated)".into()));
    }

    let mut rd = Reader { bytes: body, pos: 8 };
    let k_const = KernelConstants::new(rd.f64()?, rd.f64()?, rd.f64()?)
        .map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
    let kind = rd.u8()?;
    let n_layers = rd.u32()?;
    let n_replicas = rd.u32()?;
    if kind > 1 || n_layers == 0 || n_replicas == 0 || (kind == 0 && n_replicas != 1) {
        return Err(Error::Format(format!(
            "checkpoint: bad header (kind {kind}, {n_layers} layers, {n_replicas} replicas)"
        )));
    }
    let mut per_replica: Vec<Vec<PackageState>> = vec![Vec::with_capacity(n_layers); n_replicas];
    for tau in 0..n_layers {
        let k = rd.u32()?;
        let n_in = rd.u32()?;
        let n_out = rd.u32()?;
        let sigma2 = rd.f64()?;
        let c = rd.matrix(k, n_in)?;
        let y0 = rd.matrix(k, n_out)?;
        let first = PackageState::new(c, y0, sigma2, &k_const).map_err(|e| e.in_layer(tau + 1))?;
        for slot in per_replica.iter_mut().skip(1) {
            let y = rd.matrix(k, n_out)?;
            slot.push(first.replicate(y)?);
        }
        per_replica[0].push(first);
    }
    if rd.pos != body.len() {
        return Err(Error::Format(format!(
            "checkpoint: {} trailing bytes after layer data",
            body.len() - rd.pos
        )));
    }
    let slices = per_replica
        .into_iter()
        .map(|layers| CascadeState::new(layers, k_const))
        .collect::<Result<Vec<_>>>()?;
    Ok(if kind == 0 {
        Model::Cascade(slices.into_iter().next().expect("one replica"))
    } else {
        Model::Replicated(ReplicatedCascade::new(slices)?)
    })
}

/// Writes through a temporary file so a crash never leaves a half-written
/// checkpoint behind.
pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, encode(model))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    decode(&fs::read(path)?)
}
