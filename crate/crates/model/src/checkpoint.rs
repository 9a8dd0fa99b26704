//! Binary checkpoints: magic, format version, a JSON header with the model
//! config and vocabulary, then every named tensor as little-endian `f64`.

use std::fs;
use std::path::Path;

use oqgen_tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::generator::Generator;
use crate::vocab::{OutputKind, Vocabulary};

const MAGIC: &[u8; 8] = b"OQGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Generator,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Kind-specific settings (output vocabulary, classifier role, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn usize(&mut self) -> Option<usize> {
        usize::try_from(self.u64()?).ok()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| ModelError::InvalidArgument(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(64 + header.len() + 8 * self.store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.header.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.store.len() as u64).to_le_bytes());
        for (_, name, t) in self.store.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// `origin` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| ModelError::checkpoint(origin, reason);
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()) != Some(&MAGIC[..]) {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated version"))?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let header_len = r.usize().ok_or_else(|| bad("truncated header length"))?;
        let raw = r.take(header_len).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(raw).map_err(|e| bad(&format!("header: {e}")))?;
        if header.format_version != version {
            return Err(bad("header version disagrees with file version"));
        }
        let count = r.usize().ok_or_else(|| bad("truncated tensor count"))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32().ok_or_else(|| bad("truncated tensor name"))? as usize;
            let name = std::str::from_utf8(r.take(name_len).ok_or_else(|| bad("truncated tensor name"))?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let rows = r.usize().ok_or_else(|| bad("truncated tensor shape"))?;
            let cols = r.usize().ok_or_else(|| bad("truncated tensor shape"))?;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| bad("tensor too large"))?;
            let raw = r.take(n).ok_or_else(|| bad(&format!("truncated data for `{name}`")))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.insert(name, Tensor::from_vec(rows, cols, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Checkpoint { header, store })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| ModelError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| ModelError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

impl Generator {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: CheckpointKind::Generator,
                config: self.config.clone(),
                vocab: self.vocab.clone(),
                meta: serde_json::json!({ "output": self.output }),
            },
            store: self.store.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, origin: &Path) -> Result<Self> {
        if ckpt.header.kind != CheckpointKind::Generator {
            return Err(ModelError::checkpoint(origin, "not a generator checkpoint"));
        }
        let output: OutputKind = serde_json::from_value(ckpt.header.meta["output"].clone())
            .map_err(|e| ModelError::checkpoint(origin, format!("output kind: {e}")))?;
        Generator::from_parts(ckpt.header.config, ckpt.header.vocab, output, ckpt.store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint(Checkpoint::load(path)?, path)
    }
}
