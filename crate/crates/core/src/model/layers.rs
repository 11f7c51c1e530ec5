//! Building blocks shared by the MM-DiT: timestep features, patch layout, AdaLN.

use crate::autograd::{Tape, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest sinusoid frequency; frequencies are log-spaced on `[1, MAX_FREQUENCY]`.
pub const MAX_FREQUENCY: f64 = 1e4;

/// Sinusoidal features `[sin(t·ω₀..), cos(t·ω₀..)]` with `dim/2` log-spaced `ωᵢ`.
pub fn timestep_embedding(t: f64, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid("timestep_embedding", format!("dimension {dim} must be positive and even")));
    }
    let half = dim / 2;
    let freq = |i: usize| {
        if half == 1 {
            1.0
        } else {
            (MAX_FREQUENCY.ln() * i as f64 / (half - 1) as f64).exp()
        }
    };
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let arg = t * freq(i);
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Tensor::new([1, dim], out)
}

/// For each element of the `[P × C·p²]` token matrix, its flat index in the `C×H×W` latent.
///
/// Tokens are patches in row-major order; within a token the layout is `(c, dy, dx)`.
pub fn patch_index(shape: [usize; 3], patch: usize) -> Result<Vec<usize>> {
    let [c, h, w] = shape;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(
            "patchify",
            format!("patch size {patch} does not divide latent {h}x{w}"),
        ));
    }
    let (ph, pw) = (h / patch, w / patch);
    let mut index = Vec::with_capacity(c * h * w);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        index.push(ch * h * w + (py * patch + dy) * w + px * patch + dx);
                    }
                }
            }
        }
    }
    Ok(index)
}

fn latent_dims(latent: &Tensor) -> Result<[usize; 3]> {
    match latent.shape() {
        [c, h, w] => Ok([*c, *h, *w]),
        s => Err(Error::invalid("patchify", format!("expected a C×H×W latent, got {s:?}"))),
    }
}

pub fn patchify(latent: &Tensor, patch: usize) -> Result<Tensor> {
    let shape = latent_dims(latent)?;
    let index = patch_index(shape, patch)?;
    let tokens = (shape[1] / patch) * (shape[2] / patch);
    let data = index.iter().map(|&i| latent.data()[i]).collect();
    Tensor::new([tokens, shape[0] * patch * patch], data)
}

/// Inverse of [`patchify`] as a gather map: latent position → token-matrix position.
pub fn unpatch_index(shape: [usize; 3], patch: usize) -> Result<Vec<usize>> {
    let forward = patch_index(shape, patch)?;
    let mut inverse = vec![0; forward.len()];
    for (token_pos, &latent_pos) in forward.iter().enumerate() {
        inverse[latent_pos] = token_pos;
    }
    Ok(inverse)
}

pub fn unpatchify(tokens: &Tensor, shape: [usize; 3], patch: usize) -> Result<Tensor> {
    let index = unpatch_index(shape, patch)?;
    if tokens.numel() != index.len() {
        return Err(Error::shape("unpatchify", tokens.shape(), &shape));
    }
    Tensor::new(shape.to_vec(), index.iter().map(|&i| tokens.data()[i]).collect())
}

/// Shift, scale and gate for one modulated sub-layer, each `[1×d]`.
#[derive(Debug, Clone, Copy)]
pub struct Modulation {
    pub shift: Var,
    pub scale: Var,
    pub gate: Var,
}

impl Modulation {
    /// Splits a `[1 × k·3d]` modulation head output into `k` sub-layer triples.
    pub fn split(tape: &mut Tape, head_out: Var, d: usize, count: usize) -> Result<Vec<Modulation>> {
        (0..count)
            .map(|i| {
                let base = 3 * d * i;
                Ok(Modulation {
                    shift: tape.slice_cols(head_out, base, d)?,
                    scale: tape.slice_cols(head_out, base + d, d)?,
                    gate: tape.slice_cols(head_out, base + 2 * d, d)?,
                })
            })
            .collect()
    }
}

/// `layer_norm(x) · (1 + scale) + shift`, row-broadcast over tokens.
pub fn adaln_modulate(tape: &mut Tape, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let normed = tape.layer_norm(x, LAYER_NORM_EPS)?;
    let factor = tape.add_const(scale, 1.0)?;
    let scaled = tape.mul_row(normed, factor)?;
    tape.add_row(scaled, shift)
}

/// `x + gate ⊙ branch`.
pub fn gated_residual(tape: &mut Tape, x: Var, gate: Var, branch: Var) -> Result<Var> {
    let gated = tape.mul_row(branch, gate)?;
    tape.add(x, gated)
}
