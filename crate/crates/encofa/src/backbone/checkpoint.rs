//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic b"ENCKPT01" (format + version)
//! bytes 8..12   u32 length of the architecture descriptor
//! ...           architecture descriptor, JSON-encoded [`ModelArch`]
//! ...           u32 tensor count, then per tensor: u64 element count
//!               followed by that many f64 values (raw IEEE-754 bits)
//! ```
//!
//! Tensors appear in the model's canonical order; parameters round-trip
//! bit-exactly.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{Model, ModelArch};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ENCKPT01";

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let arch_json = serde_json::to_vec(&model.arch)
        .map_err(|e| Error::Runtime(format!("serializing model arch: {e}")))?;
    let tensors = model.flat_tensors();
    let mut buf = Vec::with_capacity(
        8 + 4 + arch_json.len() + 4 + tensors.iter().map(|t| 8 + t.len() * 8).sum::<usize>(),
    );
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(arch_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&arch_json);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in *t {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Data(format!("{}: {what}", path.display()));
    if bytes.len() < 12 || &bytes[0..8] != MAGIC {
        return Err(bad("not an ENCKPT01 checkpoint"));
    }
    let arch_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let arch_end = 12 + arch_len;
    if bytes.len() < arch_end + 4 {
        return Err(bad("truncated architecture descriptor"));
    }
    let arch: ModelArch = serde_json::from_slice(&bytes[12..arch_end])
        .map_err(|e| bad(&format!("bad architecture descriptor: {e}")))?;
    // Seed is irrelevant: every parameter is overwritten below.
    let mut model = Model::new(arch, 0)?;

    let mut off = arch_end;
    let tensor_count = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    off += 4;
    let mut tensors = model.flat_tensors_mut();
    if tensor_count != tensors.len() {
        return Err(bad(&format!(
            "tensor count {tensor_count} does not match architecture ({} expected)",
            tensors.len()
        )));
    }
    for (ti, tensor) in tensors.iter_mut().enumerate() {
        if bytes.len() < off + 8 {
            return Err(bad("truncated tensor header"));
        }
        let len = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        off += 8;
        if len != tensor.len() {
            return Err(bad(&format!(
                "tensor {ti} length {len} does not match architecture ({})",
                tensor.len()
            )));
        }
        if bytes.len() < off + len * 8 {
            return Err(bad("truncated tensor data"));
        }
        for v in tensor.iter_mut() {
            *v = f64::from_bits(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(model)
}
