//! Checkpoint files.
//!
//! ```text
//! magic    b"LSEGCKPT"
//! version  u32 LE
//! config   u32 LE length + NetConfig as JSON
//! count    u32 LE
//! count ×  u32 LE name length + UTF-8 name + tensor (LTNS record)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{NetConfig, SegModel, SegNetError};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LSEGCKPT";

fn read_u32(r: &mut impl Read) -> Result<u32, SegNetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| SegNetError::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String, SegNetError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(SegNetError::Format(format!("implausible {what} length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| SegNetError::Format(format!("truncated {what}: {e}")))?;
    String::from_utf8(buf).map_err(|e| SegNetError::Format(format!("{what} is not UTF-8: {e}")))
}

impl<T: Scalar> SegModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.names.iter().zip(&self.params) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&p.to_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, SegNetError> {
        let r = &mut bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| SegNetError::Format("file too short for a checkpoint".into()))?;
        if &magic != MAGIC {
            return Err(SegNetError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(SegNetError::Format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let cfg_json = read_string(r, "config")?;
        let config: NetConfig =
            serde_json::from_str(&cfg_json).map_err(|e| SegNetError::Format(format!("config: {e}")))?;
        let count = read_u32(r)? as usize;
        let mut names = Vec::with_capacity(count.min(4096));
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = read_string(r, "parameter name")?;
            let t = Tensor::read_from(r).map_err(|e| SegNetError::Format(format!("parameter {name}: {e}")))?;
            names.push(name);
            params.push(t);
        }
        if !r.is_empty() {
            return Err(SegNetError::Format(format!("{} trailing bytes", r.len())));
        }
        Self::from_parts(config, names, params)
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<(), SegNetError> {
        let io = |e| SegNetError::Io { path: path.to_path_buf(), source: e };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, SegNetError> {
        let bytes = fs::read(path).map_err(|e| SegNetError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_bytes(&bytes)
    }
}
