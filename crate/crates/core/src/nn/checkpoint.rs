//! Binary checkpoint: `GSNNCKPT` magic, `u32` version, `u64` header length,
//! a JSON header, then every tensor as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, NnError, ParamStore};

const MAGIC: &[u8; 8] = b"GSNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus optional optimizer state and free-form metadata (model
/// config, seed, training history).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: Kind,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
    adam: Option<AdamHeader>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io { path: path.to_path_buf(), source }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), NnError> {
    let mut tensors = Vec::new();
    let mut buffers: Vec<&[f64]> = Vec::new();
    for (name, p) in ck.params.iter() {
        tensors.push(Entry { name: name.clone(), kind: Kind::Param, shape: p.shape.clone() });
        buffers.push(&p.data);
    }
    if let Some(adam) = &ck.adam {
        for (kind, map) in [(Kind::AdamM, &adam.m), (Kind::AdamV, &adam.v)] {
            for (name, buf) in map {
                tensors.push(Entry { name: name.clone(), kind, shape: vec![buf.len()] });
                buffers.push(buf);
            }
        }
    }
    let header = Header {
        meta: ck.meta.clone(),
        tensors,
        adam: ck.adam.as_ref().map(|a| AdamHeader { beta1: a.beta1, beta2: a.beta2, eps: a.eps, step: a.step }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path).map_err(io(path))?);
    w.write_all(MAGIC).map_err(io(path))?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io(path))?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io(path))?;
    w.write_all(&json).map_err(io(path))?;
    for buf in buffers {
        for v in buf {
            w.write_all(&v.to_le_bytes()).map_err(io(path))?;
        }
    }
    w.flush().map_err(io(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let mut r = BufReader::new(File::open(path).map_err(io(path))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io(path))?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io(path))?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io(path))?;
    let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut json).map_err(io(path))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(e.to_string()))?;

    let mut params = ParamStore::new();
    let mut adam = header.adam.map(|a| AdamState { beta1: a.beta1, beta2: a.beta2, eps: a.eps, step: a.step, ..AdamState::default() });
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(io(path))?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        match (e.kind, adam.as_mut()) {
            (Kind::Param, _) => params.insert(e.name, &e.shape, data)?,
            (Kind::AdamM, Some(a)) => {
                a.m.insert(e.name, data);
            }
            (Kind::AdamV, Some(a)) => {
                a.v.insert(e.name, data);
            }
            (_, None) => return Err(NnError::Checkpoint("optimizer moments without optimizer header".into())),
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io(path))?;
    if !rest.is_empty() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { meta: header.meta, params, adam })
}
