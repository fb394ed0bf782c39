//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes  "AFGCKPT\0"
//! version     u32      currently 1
//! config      u32 length + UTF-8 JSON of ModelConfig
//! vocab       u32 length + UTF-8 JSON array of tokens, in id order
//! n_params    u32
//! per param:  u32 name length, name bytes, u8 trainable,
//!             u32 rank, rank x u64 dims, product(dims) x f64
//! n_adapters  u32
//! per adapter u32 length + UTF-8 JSON {target, rank, alpha, down, up}
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a load reproduces the saved
//! weights exactly.

use std::fs;
use std::path::Path;

use afg_core::model::{E2eModel, ModelConfig, Vocab};
use afg_core::numerics::{LoraAdapter, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"AFGCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] afg_core::Error),
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<(), CheckpointError> {
    let n = u32::try_from(n).map_err(|_| CheckpointError::Corrupt(format!("length {n} exceeds u32")))?;
    put_u32(out, n);
    Ok(())
}

fn put_blob(out: &mut Vec<u8>, bytes: &[u8]) -> Result<(), CheckpointError> {
    put_len(out, bytes.len())?;
    out.extend_from_slice(bytes);
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("plain data serializes")
}

pub fn encode(model: &E2eModel) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_blob(&mut out, &json(&model.config))?;
    put_blob(&mut out, &json(&model.vocab.tokens()))?;
    let params: Vec<_> = model.params.iter().collect();
    put_len(&mut out, params.len())?;
    for (_, p) in params {
        put_blob(&mut out, p.name.as_bytes())?;
        out.push(u8::from(p.trainable));
        put_len(&mut out, p.value.shape().len())?;
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let adapters: Vec<&LoraAdapter> = model.params.adapters().collect();
    put_len(&mut out, adapters.len())?;
    for a in adapters {
        put_blob(&mut out, &json(a))?;
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T, CheckpointError> {
        let b = self.blob()?;
        serde_json::from_slice(b).map_err(|e| CheckpointError::Corrupt(format!("{what}: {e}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<E2eModel, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config: ModelConfig = r.json("config")?;
    let tokens: Vec<String> = r.json("vocab")?;
    let vocab = Vocab::from_tokens(tokens)?;
    let n_params = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let name = std::str::from_utf8(r.blob()?)
            .map_err(|e| CheckpointError::Corrupt(format!("parameter name: {e}")))?
            .to_string();
        let trainable = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(CheckpointError::Corrupt(format!("`{name}`: trainable flag {b}"))),
        };
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| CheckpointError::Corrupt(format!("`{name}`: dim overflow")))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Corrupt(format!("`{name}`: size overflow")))?;
        let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(r.pos))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(&name, Tensor::new(shape, data)?, trainable)?;
    }
    let n_adapters = r.u32()?;
    for _ in 0..n_adapters {
        let a: LoraAdapter = r.json("adapter")?;
        store.restore_adapter(a)?;
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(E2eModel::from_parts(config, vocab, store)?)
}

pub fn save(model: &E2eModel, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode(model)?;
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

pub fn load(path: &Path) -> Result<E2eModel, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
