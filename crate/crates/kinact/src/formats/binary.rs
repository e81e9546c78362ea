//! Little-endian binary weight files.
//!
//! `KALW1` (marker augmenter, 32-bit floats):
//!
//! ```text
//! "KALW1"
//! u32 input  u32 output  u32 hidden  u32 layers
//! per layer:  w_ih [in × 4H]  w_hh [H × 4H]  bias [4H]
//! w_out [H × output]  b_out [output]
//! input mean [input]  input std [input]  output mean [output]  output std [output]
//! ```
//!
//! Matrices are row-major, gate blocks ordered input, forget, cell, output.
//!
//! `KADC1` (named tensors, 64-bit floats):
//!
//! ```text
//! "KADC1"  u32 count
//! per tensor:  u32 name_len  name (UTF-8)  u32 rank  u64 dims[rank]  f64 data[prod(dims)]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use kinact_core::act::{ActConfig, ActModel, Head};
use kinact_core::augment::{LstmLayer, LstmWeights, Normalization, INPUT_SIZE, OUTPUT_SIZE};
use kinact_core::autodiff::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{Error, Result};

pub const KALW_MAGIC: &[u8; 5] = b"KALW1";
pub const KADC_MAGIC: &[u8; 5] = b"KADC1";
const MAX_RANK: usize = 8;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn magic(&mut self, magic: &[u8; 5]) -> Result<(), String> {
        if self.take(5).ok() != Some(&magic[..]) {
            return Err(format!("missing {} magic", String::from_utf8_lossy(magic)));
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), String> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn put_f32s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
}

pub fn encode_kalw(w: &LstmWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + 4 * (w.num_scalars() + 2 * (INPUT_SIZE + OUTPUT_SIZE)));
    out.extend_from_slice(KALW_MAGIC);
    for d in [INPUT_SIZE, OUTPUT_SIZE, w.hidden, w.layers.len()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for l in &w.layers {
        put_f32s(&mut out, &l.w_ih);
        put_f32s(&mut out, &l.w_hh);
        put_f32s(&mut out, &l.bias);
    }
    put_f32s(&mut out, &w.w_out);
    put_f32s(&mut out, &w.b_out);
    for n in [&w.input_norm, &w.output_norm] {
        put_f32s(&mut out, &n.mean);
        put_f32s(&mut out, &n.std);
    }
    out
}

pub fn decode_kalw(buf: &[u8]) -> Result<LstmWeights, String> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(KALW_MAGIC)?;
    let (input, output) = (r.u32()? as usize, r.u32()? as usize);
    let (hidden, n_layers) = (r.u32()? as usize, r.u32()? as usize);
    if input != INPUT_SIZE || output != OUTPUT_SIZE {
        return Err(format!("dimensions {input}→{output}, expected {INPUT_SIZE}→{OUTPUT_SIZE}"));
    }
    if hidden == 0 || n_layers == 0 || hidden > 1 << 16 || n_layers > 64 {
        return Err(format!("implausible header: hidden {hidden}, layers {n_layers}"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let in_dim = if l == 0 { input } else { hidden };
        layers.push(LstmLayer {
            w_ih: r.f32s(in_dim * 4 * hidden)?,
            w_hh: r.f32s(hidden * 4 * hidden)?,
            bias: r.f32s(4 * hidden)?,
        });
    }
    let w_out = r.f32s(hidden * output)?;
    let b_out = r.f32s(output)?;
    let input_norm = Normalization {
        mean: r.f32s(input)?,
        std: r.f32s(input)?,
    };
    let output_norm = Normalization {
        mean: r.f32s(output)?,
        std: r.f32s(output)?,
    };
    r.finish()?;
    let w = LstmWeights {
        hidden,
        layers,
        w_out,
        b_out,
        input_norm,
        output_norm,
    };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

pub fn read_kalw(path: &Path) -> Result<LstmWeights> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_kalw(&buf).map_err(|m| Error::format(path, m))
}

pub fn write_kalw(path: &Path, w: &LstmWeights) -> Result<()> {
    fs::write(path, encode_kalw(w)).map_err(|e| Error::io(path, e))
}

pub fn encode_kadc(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 8 * params.num_scalars() + 64 * params.len());
    out.extend_from_slice(KADC_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_kadc(buf: &[u8]) -> Result<ParamStore, String> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(KADC_MAGIC)?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?.to_owned();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(format!("{name}: rank {rank}"));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("size overflow")?;
        let data = r.f64s(n)?;
        if store.id(&name).is_ok() {
            return Err(format!("duplicate tensor {name}"));
        }
        let t = Tensor::new(&shape, data).map_err(|e| format!("{name}: {e}"))?;
        store.add(name, t);
    }
    r.finish()?;
    Ok(store)
}

pub fn read_kadc(path: &Path) -> Result<ParamStore> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_kadc(&buf).map_err(|m| Error::format(path, m))
}

pub fn write_kadc(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, encode_kadc(params)).map_err(|e| Error::io(path, e))
}

/// Classifier checkpoint: parameters plus the head it serves and the joint
/// indices it reads.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ActModel,
    pub head: Head,
    pub dofs: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    head: Head,
    dofs: Vec<usize>,
    #[serde(flatten)]
    config: ActConfig,
}

/// `weights.kadc` → `weights.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let side = sidecar_path(path);
    if side == path {
        return Err(Error::Input(format!("{}: checkpoint needs an extension other than .json", path.display())));
    }
    write_kadc(path, ck.model.params())?;
    write_json(
        &side,
        &Sidecar {
            head: ck.head,
            dofs: ck.dofs.clone(),
            config: ck.model.config().clone(),
        },
    )
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let side = sidecar_path(path);
    let sc: Sidecar = read_json(&side)?;
    let params = read_kadc(path)?;
    let model = ActModel::from_params(sc.config, params).map_err(|e| Error::format(path, e.to_string()))?;
    if sc.dofs.len() != model.config().input_dim || model.config().classes != sc.head.classes() {
        return Err(Error::format(&side, "head, joint list and configuration disagree"));
    }
    Ok(Checkpoint {
        model,
        head: sc.head,
        dofs: sc.dofs,
    })
}
