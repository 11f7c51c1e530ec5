//! Joint attention across the image and text streams.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, Linear, ParamStore};

/// Per-stream Q/K/V and output projections.
#[derive(Debug, Clone, Copy)]
pub struct StreamAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl StreamAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
        }
    }

    fn qkv(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<(Var, Var, Var)> {
        Ok((
            self.query.forward(tape, p, x)?,
            self.key.forward(tape, p, x)?,
            self.value.forward(tape, p, x)?,
        ))
    }
}

/// Multi-head scaled dot-product attention, `softmax(q·kᵀ/√dₕ)·v`, no masking.
pub fn multi_head_attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (_, d) = tape.value(q).dims2("attention")?;
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, scale)?;
        let weights = tape.softmax(logits, 1)?;
        outs.push(tape.matmul(weights, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Each stream projects its own Q/K/V; attention runs over the concatenated
/// `P + T` sequence and the result is split back and projected per stream.
pub fn joint_attention(
    tape: &mut Tape,
    p: &Bound,
    img: Var,
    txt: Var,
    img_attn: &StreamAttention,
    txt_attn: &StreamAttention,
    heads: usize,
) -> Result<(Var, Var)> {
    let img_len = tape.value(img).shape()[0];
    let txt_len = tape.value(txt).shape()[0];
    let (qi, ki, vi) = img_attn.qkv(tape, p, img)?;
    let (qt, kt, vt) = txt_attn.qkv(tape, p, txt)?;
    let q = tape.concat_rows(&[qi, qt])?;
    let k = tape.concat_rows(&[ki, kt])?;
    let v = tape.concat_rows(&[vi, vt])?;
    let joint = multi_head_attention(tape, q, k, v, heads)?;
    let img_part = tape.slice_rows(joint, 0, img_len)?;
    let txt_part = tape.slice_rows(joint, img_len, txt_len)?;
    Ok((
        img_attn.out.forward(tape, p, img_part)?,
        txt_attn.out.forward(tape, p, txt_part)?,
    ))
}
