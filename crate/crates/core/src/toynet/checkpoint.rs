//! Binary checkpoint files.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! "F3CK"  magic
//! u16     version (1)
//! u64     config hash: first 8 bytes of SHA-256 of the config text
//! u64     step count
//! [u8;32] shuffle RNG seed
//! u128    shuffle RNG word position
//! u32     config text length, then UTF-8 `key = value` lines
//! u32     tensor count, then per tensor:
//!         u16 name length, name bytes, u8 ndim, u32 dims..., f64 payload
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::model::{ToyNet, ToyNetConfig};

pub const MAGIC: &[u8; 4] = b"F3CK";
pub const VERSION: u16 = 1;

pub fn config_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
}

/// A model snapshot with its training position.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ToyNet,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.model.config().to_kv();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&config_hash(&text).to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let tensors = self.model.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(origin, msg);
        let mut r = Cursor::new(bytes);
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)
                .map_err(|_| bad("truncated checkpoint".into()))?;
            Ok(buf)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic, not a checkpoint".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hash = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let seed: [u8; 32] = take(32)?.try_into().unwrap();
        let word_pos = u128::from_le_bytes(take(16)?.try_into().unwrap());
        let text_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let text = String::from_utf8(take(text_len)?)
            .map_err(|_| bad("config text is not UTF-8".into()))?;
        if config_hash(&text) != hash {
            return Err(bad("config hash mismatch".into()));
        }
        let config = ToyNetConfig::from_kv(&text)?;
        let mut model = ToyNet::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut slots = model.tensors_mut();
        if count != slots.len() {
            return Err(bad(format!(
                "checkpoint has {count} tensors, model expects {}",
                slots.len()
            )));
        }
        for slot in slots.iter_mut() {
            let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len)?)
                .map_err(|_| bad("tensor name is not UTF-8".into()))?;
            if name != slot.name {
                return Err(bad(format!("expected tensor {}, found {name}", slot.name)));
            }
            let ndim = take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            if dims != slot.dims {
                return Err(bad(format!(
                    "tensor {name} has dims {dims:?}, expected {:?}",
                    slot.dims
                )));
            }
            let payload = take(8 * slot.data.len())?;
            for (v, chunk) in slot.data.iter_mut().zip(payload.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        drop(slots);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        Ok(Self { model, step, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
