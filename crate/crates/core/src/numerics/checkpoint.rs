//! Binary parameter container.
//!
//! Layout: the 8-byte magic `BATCKPT1`, a little-endian `u64` header length,
//! a JSON header `{"params": [{"name", "shape"}...], "meta": ...}`, then each
//! parameter's values as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{numel, Tensor};
use crate::error::{BatError, Result};

pub const MAGIC: &[u8; 8] = b"BATCKPT1";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    params: Vec<Entry>,
    meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let header = Header {
        params: store.iter().map(|p| Entry { name: p.name.clone(), shape: p.tensor.shape().to_vec() }).collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in store.iter() {
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParamStore, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(BatError::Checkpoint("missing BATCKPT1 magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut store = ParamStore::new();
    let mut buf = [0u8; 8];
    for e in header.params {
        let n = numel(&e.shape);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| BatError::Checkpoint(format!("truncated data for {}", e.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        store.insert(&e.name, Tensor::new(e.shape, data)?)?;
    }
    Ok((store, header.meta))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), store, meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
