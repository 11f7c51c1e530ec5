//! LATS container for generated latents.
//!
//! ```text
//! "LATS" | u32 version=1 | u32 N | u32 C | u32 H | u32 W
//! N × ( u64 caption_id | C·H·W × f32 )
//! ```
//!
//! Same shape as TEMB; `N = 0` is allowed.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LATS_MAGIC: &[u8; 4] = b"LATS";
pub const LATS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    /// `[C, H, W]`.
    pub shape: [usize; 3],
    pub records: Vec<(u64, Tensor)>,
}

impl LatentFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(LATS_MAGIC);
        w.u32(LATS_VERSION);
        w.u32(self.records.len() as u32);
        for d in self.shape {
            w.u32(d as u32);
        }
        for (id, z) in &self.records {
            if z.shape() != self.shape {
                return Err(Error::shape("encode_lats", z.shape(), &self.shape));
            }
            w.u64(*id);
            w.f32s(z.data());
        }
        Ok(w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("LATS", bytes);
        r.magic(LATS_MAGIC)?;
        let version = r.u32("version")?;
        if version != LATS_VERSION {
            return Err(Error::BadVersion {
                what: "LATS",
                expected: LATS_VERSION,
                found: version,
            });
        }
        let n = r.u32("record count")? as usize;
        let shape = [r.u32("channels")? as usize, r.u32("height")? as usize, r.u32("width")? as usize];
        if shape.contains(&0) {
            return Err(Error::Corrupted {
                what: "LATS",
                msg: format!("latent shape {shape:?} has a zero extent"),
            });
        }
        let numel = shape.iter().product();
        let mut records = Vec::with_capacity(n.min(r.remaining() / 8));
        for i in 0..n {
            let id = r.u64(&format!("caption id of record {i}"))?;
            let data = r.f32s(numel, &format!("payload of record {i}"))?;
            records.push((id, Tensor::new(shape.to_vec(), data)?));
        }
        r.finish()?;
        Ok(Self { shape, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
