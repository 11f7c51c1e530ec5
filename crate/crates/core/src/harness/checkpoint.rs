//! CKPT container: run config, parameters, optimiser moments and batch RNG.
//!
//! Layout, little-endian:
//!
//! ```text
//! "CKPT" | u32 version=1 | str config_toml | u64 step | u32 teacher_width
//! params(model) | adam(model)
//! u8 has_head [ params(head) | adam(head) ]
//! rng: [u8; 32] seed | u64 stream | u128 word_pos
//!
//! str       = u32 len | utf-8
//! tensor    = u32 rank | rank × u32 | f64 values
//! params    = u32 count | count × (str name | tensor)
//! adam      = u64 step | count × tensor m | count × tensor v
//! ```

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::supervision::TrainState;
use crate::tensor::Tensor;

use super::config::RunConfig;

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub teacher_width: usize,
    pub state: TrainState,
    /// Position of the batch stream, so a resumed run draws the same batches.
    pub batch_rng: RngState,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.state.step_count()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CKPT_MAGIC);
        w.u32(CKPT_VERSION);
        w.string(&self.config.to_toml());
        w.u64(self.step());
        w.u32(self.teacher_width as u32);
        write_params(&mut w, &self.state.params);
        write_adam(&mut w, &self.state.adam);
        match &self.state.head {
            Some(h) => {
                w.u8(1);
                write_params(&mut w, &h.params);
                write_adam(&mut w, &h.adam);
            }
            None => w.u8(0),
        }
        w.bytes(&self.batch_rng.seed);
        w.u64(self.batch_rng.stream);
        w.u128(self.batch_rng.word_pos);
        w.into_bytes()
    }

    /// Parses and validates a checkpoint. Nothing is returned unless every
    /// byte is accounted for and every tensor matches the model layout.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("CKPT", bytes);
        r.magic(CKPT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CKPT_VERSION {
            return Err(Error::BadVersion {
                what: "CKPT",
                expected: CKPT_VERSION,
                found: version,
            });
        }
        let config = RunConfig::from_toml(&r.string("config")?)?;
        let step = r.u64("step")?;
        let teacher_width = r.u32("teacher width")? as usize;
        let mut state = TrainState::new(config.model.clone(), &config.align, teacher_width, config.run.seed)?;

        read_params_into(&mut r, &mut state.params)?;
        state.adam = read_adam(&mut r, &state.params)?;
        let has_head = r.u8("head flag")?;
        match (has_head, state.head.as_mut()) {
            (1, Some(h)) => {
                read_params_into(&mut r, &mut h.params)?;
                h.adam = read_adam(&mut r, &h.params)?;
            }
            (0, None) => {}
            (flag, _) => {
                return Err(corrupted(format!(
                    "head flag {flag} disagrees with align.enabled = {}",
                    config.align.enabled
                )))
            }
        }
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos = r.u128("rng position")?;
        r.finish()?;
        if state.adam.step != step {
            return Err(corrupted(format!("header step {step} but optimiser step {}", state.adam.step)));
        }
        Ok(Self {
            config,
            teacher_width,
            state,
            batch_rng: RngState { seed, stream, word_pos },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn corrupted(msg: String) -> Error {
    Error::Corrupted { what: "CKPT", msg }
}

fn write_params(w: &mut Writer, p: &ParamStore) {
    w.u32(p.len() as u32);
    for (name, t) in p.iter() {
        w.string(name);
        w.tensor(t);
    }
}

fn write_adam(w: &mut Writer, a: &AdamState) {
    w.u64(a.step);
    for t in a.m.iter().chain(&a.v) {
        w.tensor(t);
    }
}

fn read_params_into(r: &mut Reader<'_>, target: &mut ParamStore) -> Result<()> {
    let count = r.u32("parameter count")? as usize;
    if count != target.len() {
        return Err(corrupted(format!("{count} parameters stored, layout has {}", target.len())));
    }
    let mut loaded = ParamStore::new();
    for _ in 0..count {
        let name = r.string("parameter name")?;
        let t = r.tensor(&name)?;
        loaded.add(name, t);
    }
    target.load_from(&loaded)
}

fn read_adam(r: &mut Reader<'_>, params: &ParamStore) -> Result<AdamState> {
    let step = r.u64("optimiser step")?;
    let mut read_moments = |kind: &str| -> Result<Vec<Tensor>> {
        params
            .iter()
            .map(|(name, p)| {
                let t = r.tensor(&format!("{kind} of {name}"))?;
                if t.shape() != p.shape() {
                    return Err(corrupted(format!("{kind} of {name} has shape {:?}, expected {:?}", t.shape(), p.shape())));
                }
                Ok(t)
            })
            .collect()
    };
    let m = read_moments("first moment")?;
    let v = read_moments("second moment")?;
    Ok(AdamState { step, m, v })
}
