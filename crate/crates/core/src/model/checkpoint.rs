//! Single-file checkpoints.
//!
//! Layout (integers little-endian): magic `DARTCKPT`, `u32` format version,
//! `u64` byte length of the JSON config, the config, `u32` block count, then
//! each block as `u32` name length, UTF-8 name, `u32` rank, `rank` x `u64`
//! extents and the values as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::network::{build_model, Model, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vq::{Branch, Codebook};

const MAGIC: &[u8; 8] = b"DARTCKPT";
const VERSION: u32 = 1;

fn usage_block(book: &Codebook) -> Tensor {
    let values = book.usage_counts().iter().map(|&c| c as f64).collect();
    Tensor::from_parts(vec![book.size()], values)
}

fn blocks(model: &Model) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    for b in Branch::ALL {
        out.push((format!("usage.{b}"), usage_block(model.codebook(b))));
    }
    out
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let config = serde_json::to_vec(model.config())?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;
    let blocks = blocks(model);
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for (name, t) in &blocks {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

fn read_array<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r, what)?))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r, what)?))
}

fn read_bytes<R: Read>(r: &mut R, len: u64, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf)?;
    if buf.len() as u64 != len {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    if &read_array::<8, _>(&mut r, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u64(&mut r, "config length")?;
    let config: ModelConfig = serde_json::from_slice(&read_bytes(&mut r, len, "config")?)?;
    let mut model = build_model(&config)?;

    let count = read_u32(&mut r, "block count")?;
    let mut seen = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r, "block name length")?;
        let name = String::from_utf8(read_bytes(&mut r, name_len as u64, "block name")?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")?;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r, "extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = read_bytes(&mut r, 8 * n as u64, &name)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let tensor = Tensor::new(&shape, values)?;
        install(&mut model, &name, tensor)?;
        seen.push(name);
    }
    let expected = blocks(&model);
    if let Some((missing, _)) = expected.iter().find(|(n, _)| !seen.contains(n)) {
        return Err(Error::Checkpoint(format!("missing block `{missing}`")));
    }
    Ok(model)
}

fn install(model: &mut Model, name: &str, tensor: Tensor) -> Result<()> {
    let mismatch = |want: &[usize], got: &[usize]| {
        Error::Checkpoint(format!("block `{name}` has shape {got:?}, config implies {want:?}"))
    };
    if let Some(p) = Param::ALL.iter().find(|p| p.name() == name) {
        let slot = &mut model.params[*p as usize];
        if slot.shape() != tensor.shape() {
            return Err(mismatch(slot.shape(), tensor.shape()));
        }
        *slot = tensor;
        return Ok(());
    }
    for b in Branch::ALL {
        let book = model.codebook(b);
        if name == format!("codebook.{b}") {
            if book.entries().shape() != tensor.shape() {
                return Err(mismatch(book.entries().shape(), tensor.shape()));
            }
            let usage = book.usage_counts().to_vec();
            *model.codebook_mut(b) = Codebook::from_tensor(b, tensor, Some(usage))?;
            return Ok(());
        }
        if name == format!("usage.{b}") {
            if tensor.shape() != [book.size()] {
                return Err(mismatch(&[book.size()], tensor.shape()));
            }
            let counts = tensor.values().iter().map(|&c| c as u64).collect();
            let entries = book.entries().clone();
            *model.codebook_mut(b) = Codebook::from_tensor(b, entries, Some(counts))?;
            return Ok(());
        }
    }
    Err(Error::Checkpoint(format!("unknown block `{name}`")))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
