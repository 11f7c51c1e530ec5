//! Frozen teacher text embeddings and the TEMB container.
//!
//! TEMB v1 layout, all integers little-endian:
//!
//! ```text
//! "TEMB" | u32 version=1 | u32 N | u32 K | u32 e
//! N × ( u64 caption_id | K·e × f32, token-major )
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const TEMB_MAGIC: &[u8; 4] = b"TEMB";
pub const TEMB_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// `K` frozen token embeddings of width `e` for one caption.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEmbedding {
    caption_id: u64,
    vectors: Tensor,
}

impl TeacherEmbedding {
    pub fn new(caption_id: u64, vectors: Tensor) -> Result<Self> {
        vectors.dims2("teacher_embedding")?;
        if !vectors.all_finite() {
            return Err(Error::invalid(
                "teacher_embedding",
                format!("caption {caption_id} has non-finite entries"),
            ));
        }
        Ok(Self { caption_id, vectors })
    }

    pub fn caption_id(&self) -> u64 {
        self.caption_id
    }

    /// `[K × e]` token vectors.
    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn tokens(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.vectors.shape()[1]
    }

    /// L2-normalized mean of the token vectors, `[e]`. All-zero tokens pool to zeros.
    pub fn pooled(&self) -> Tensor {
        let (k, e) = (self.tokens(), self.width());
        let mut mean = vec![0.0; e];
        for r in 0..k {
            for (m, v) in mean.iter_mut().zip(self.vectors.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k as f64);
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            mean.iter_mut().for_each(|m| *m /= norm);
        }
        Tensor::from_vec(mean)
    }
}

/// Deterministic stand-in for a frozen text encoder: seeded Gaussian rows,
/// each L2-normalized. A pure function of `(caption_id, seed)`.
pub fn synthetic_teacher(caption_id: u64, width: usize, tokens: usize, seed: u64) -> Result<TeacherEmbedding> {
    if width == 0 || tokens == 0 {
        return Err(Error::invalid("synthetic_teacher", "width and token count must be positive"));
    }
    let mut r = rng::keyed(seed, caption_id);
    let mut vectors = Tensor::randn([tokens, width], &mut r);
    for row in vectors.data_mut().chunks_mut(width) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    TeacherEmbedding::new(caption_id, vectors)
}

/// Embeddings for a set of captions, all with the same `K` and `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSet {
    tokens: usize,
    width: usize,
    map: BTreeMap<u64, TeacherEmbedding>,
}

impl TeacherSet {
    pub fn new(embeddings: impl IntoIterator<Item = TeacherEmbedding>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dims: Option<(usize, usize)> = None;
        for emb in embeddings {
            let d = (emb.tokens(), emb.width());
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::invalid(
                        "teacher_set",
                        format!("caption {} has K×e = {:?}, expected {:?}", emb.caption_id(), d, prev),
                    ))
                }
                _ => {}
            }
            let id = emb.caption_id();
            if map.insert(id, emb).is_some() {
                return Err(Error::DuplicateCaption(id));
            }
        }
        let (tokens, width) = dims.ok_or_else(|| Error::invalid("teacher_set", "no embeddings"))?;
        Ok(Self { tokens, width, map })
    }

    pub fn synthetic(ids: impl IntoIterator<Item = u64>, width: usize, tokens: usize, seed: u64) -> Result<Self> {
        Self::new(
            ids.into_iter()
                .map(|id| synthetic_teacher(id, width, tokens, seed))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn get(&self, caption_id: u64) -> Result<&TeacherEmbedding> {
        self.map.get(&caption_id).ok_or(Error::MissingCaption(caption_id))
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TeacherEmbedding> {
        self.map.values()
    }

    pub fn bit_eq(&self, other: &TeacherSet) -> bool {
        self.map.len() == other.map.len()
            && self
                .map
                .iter()
                .zip(&other.map)
                .all(|((a, ea), (b, eb))| a == b && ea.vectors.bit_eq(&eb.vectors))
    }
}

/// Serializes to TEMB v1. Values are narrowed to `f32`.
pub fn encode_temb(set: &TeacherSet) -> Vec<u8> {
    let (k, e) = (set.tokens, set.width);
    let mut out = Vec::with_capacity(HEADER_LEN + set.len() * (8 + 4 * k * e));
    out.extend_from_slice(TEMB_MAGIC);
    out.extend_from_slice(&TEMB_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(e as u32).to_le_bytes());
    for emb in set.iter() {
        out.extend_from_slice(&emb.caption_id.to_le_bytes());
        for &v in emb.vectors.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Parses TEMB v1, widening payload floats to `f64`.
pub fn decode_temb(bytes: &[u8]) -> Result<TeacherSet> {
    let mut r = Reader::new("TEMB", bytes);
    r.magic(TEMB_MAGIC)?;
    let version = r.u32("version")?;
    if version != TEMB_VERSION {
        return Err(Error::BadVersion {
            what: "TEMB",
            expected: TEMB_VERSION,
            found: version,
        });
    }
    let count = r.u32("record count")? as usize;
    let k = r.u32("token count")? as usize;
    let e = r.u32("embedding width")? as usize;
    if count == 0 || k == 0 || e == 0 {
        return Err(Error::Corrupted {
            what: "TEMB",
            msg: format!("header declares N={count}, K={k}, e={e}; all must be positive"),
        });
    }
    let mut records = Vec::with_capacity(count);
    let mut seen = std::collections::BTreeSet::new();
    for i in 0..count {
        let id = r.u64(&format!("caption id of record {i} of {count}"))?;
        if !seen.insert(id) {
            return Err(Error::DuplicateCaption(id));
        }
        let data = r.f32s(k * e, &format!("payload of record {i} of {count}"))?;
        records.push(TeacherEmbedding::new(id, Tensor::new([k, e], data)?)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Corrupted {
            what: "TEMB",
            msg: format!("{} trailing bytes after {count} records", r.remaining()),
        });
    }
    TeacherSet::new(records)
}

pub fn store_teacher_file(set: &TeacherSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_temb(set)).map_err(|e| Error::io(path, e))
}

pub fn load_teacher_file(path: impl AsRef<Path>) -> Result<TeacherSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_temb(&bytes)
}
