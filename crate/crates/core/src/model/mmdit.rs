//! The dual-stream MM-DiT velocity network.

use rand::Rng;

use super::attention::{joint_attention, StreamAttention};
use super::config::ModelConfig;
use super::layers::{adaln_modulate, gated_residual, patchify, timestep_embedding, unpatch_index, Modulation};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Linear, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Std of the learned image positional embedding at init.
const POS_EMBED_STD: f64 = 0.02;

/// Captures image-stream hidden states after block `depth_n` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureTap {
    depth_n: usize,
}

impl FeatureTap {
    pub fn new(depth_n: usize, model_depth: usize) -> Result<Self> {
        if depth_n == 0 || depth_n > model_depth {
            return Err(Error::invalid(
                "feature_tap",
                format!("depth {depth_n} outside 1..={model_depth}"),
            ));
        }
        Ok(Self { depth_n })
    }

    pub fn depth(self) -> usize {
        self.depth_n
    }
}

#[derive(Debug, Clone)]
struct StreamBlock {
    attn: StreamAttention,
    fc1: Linear,
    fc2: Linear,
    /// `d → 6d`: (shift, scale, gate) for attention then MLP. Zero at init.
    modulation: Linear,
}

impl StreamBlock {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.hidden_dim;
        let hidden = d * cfg.mlp_ratio;
        Self {
            attn: StreamAttention::new(store, &format!("{name}.attn"), d, rng),
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), d, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), hidden, d, rng),
            modulation: Linear::zeros(store, &format!("{name}.modulation"), d, 6 * d),
        }
    }

    fn mlp(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.silu(h)?;
        self.fc2.forward(tape, p, h)
    }
}

#[derive(Debug, Clone)]
struct Block {
    img: StreamBlock,
    txt: StreamBlock,
}

/// Graph outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Predicted velocity, `C×H×W`.
    pub velocity: Var,
    /// Image-stream features `[P×d]` at the tap, if one was requested.
    pub tapped: Option<Var>,
}

/// Parameter layout and forward pass. Values live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct MmDit {
    config: ModelConfig,
    img_embed: Linear,
    pos_embed: ParamId,
    txt_embed: Linear,
    time_fc1: Linear,
    time_fc2: Linear,
    blocks: Vec<Block>,
    /// `d → 2d`: (shift, scale) before the output head. Zero at init.
    final_modulation: Linear,
    final_out: Linear,
    unpatch: Vec<usize>,
}

impl MmDit {
    /// Builds the layout and initial parameter values.
    ///
    /// AdaLN modulation heads and the output head start at zero, so every
    /// block is an identity residual and the velocity is zero at init.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut store = ParamStore::new();
        let img_embed = Linear::new(&mut store, "img_embed", config.patch_dim(), d, rng);
        let pos = Tensor::randn([config.num_patches(), d], rng).map(|x| x * POS_EMBED_STD);
        let pos_embed = store.add("pos_embed", pos);
        let txt_embed = Linear::new(&mut store, "txt_embed", config.text_embed_dim, d, rng);
        let time_fc1 = Linear::new(&mut store, "time.fc1", config.time_embed_dim, d, rng);
        let time_fc2 = Linear::new(&mut store, "time.fc2", d, d, rng);
        let blocks = (0..config.depth)
            .map(|i| Block {
                img: StreamBlock::new(&mut store, &format!("blocks.{i}.img"), &config, rng),
                txt: StreamBlock::new(&mut store, &format!("blocks.{i}.txt"), &config, rng),
            })
            .collect();
        let final_modulation = Linear::zeros(&mut store, "final.modulation", d, 2 * d);
        let final_out = Linear::zeros(&mut store, "final.out", d, config.patch_dim());
        let unpatch = unpatch_index(config.latent_shape(), config.patch_size)?;
        Ok((
            Self {
                config,
                img_embed,
                pos_embed,
                txt_embed,
                time_fc1,
                time_fc2,
                blocks,
                final_modulation,
                final_out,
                unpatch,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_inputs(&self, z_t: &Tensor, t: f64, text: &Tensor) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid("mmdit_forward", format!("t = {t} outside [0, 1]")));
        }
        let latent = self.config.latent_shape();
        if z_t.shape() != latent {
            return Err(Error::shape("mmdit_forward", z_t.shape(), &latent));
        }
        let text_shape = [self.config.text_tokens, self.config.text_embed_dim];
        if text.shape() != text_shape {
            return Err(Error::shape("mmdit_forward", text.shape(), &text_shape));
        }
        Ok(())
    }

    /// Time conditioning vector `[1×d]`, before the SiLU that feeds the modulation heads.
    fn time_condition(&self, tape: &mut Tape, p: &Bound, t: f64) -> Result<Var> {
        let feats = tape.constant(timestep_embedding(t, self.config.time_embed_dim)?);
        let h = self.time_fc1.forward(tape, p, feats)?;
        let h = tape.silu(h)?;
        self.time_fc2.forward(tape, p, h)
    }

    /// Full forward pass on `tape`. The tap only records a handle; it never
    /// changes what is computed.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        z_t: &Tensor,
        t: f64,
        text: &Tensor,
        tap: Option<FeatureTap>,
    ) -> Result<ForwardOutput> {
        self.check_inputs(z_t, t, text)?;
        if let Some(tap) = tap {
            FeatureTap::new(tap.depth_n, self.config.depth)?;
        }
        let d = self.config.hidden_dim;

        let tokens = tape.constant(patchify(z_t, self.config.patch_size)?);
        let img = self.img_embed.forward(tape, p, tokens)?;
        let mut img = tape.add(img, p.var(self.pos_embed))?;
        let text = tape.constant(text.clone());
        let mut txt = self.txt_embed.forward(tape, p, text)?;

        let cond = self.time_condition(tape, p, t)?;
        let cond = tape.silu(cond)?;

        let mut tapped = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let img_mod = block.img.modulation.forward(tape, p, cond)?;
            let img_mod = Modulation::split(tape, img_mod, d, 2)?;
            let txt_mod = block.txt.modulation.forward(tape, p, cond)?;
            let txt_mod = Modulation::split(tape, txt_mod, d, 2)?;

            let h_img = adaln_modulate(tape, img, img_mod[0].shift, img_mod[0].scale)?;
            let h_txt = adaln_modulate(tape, txt, txt_mod[0].shift, txt_mod[0].scale)?;
            let (a_img, a_txt) = joint_attention(tape, p, h_img, h_txt, &block.img.attn, &block.txt.attn, self.config.heads)?;
            img = gated_residual(tape, img, img_mod[0].gate, a_img)?;
            txt = gated_residual(tape, txt, txt_mod[0].gate, a_txt)?;

            let h_img = adaln_modulate(tape, img, img_mod[1].shift, img_mod[1].scale)?;
            let m_img = block.img.mlp(tape, p, h_img)?;
            img = gated_residual(tape, img, img_mod[1].gate, m_img)?;
            let h_txt = adaln_modulate(tape, txt, txt_mod[1].shift, txt_mod[1].scale)?;
            let m_txt = block.txt.mlp(tape, p, h_txt)?;
            txt = gated_residual(tape, txt, txt_mod[1].gate, m_txt)?;

            if tap.is_some_and(|tap| tap.depth_n == i + 1) {
                tapped = Some(img);
            }
        }

        let fin = self.final_modulation.forward(tape, p, cond)?;
        let shift = tape.slice_cols(fin, 0, d)?;
        let scale = tape.slice_cols(fin, d, d)?;
        let h = adaln_modulate(tape, img, shift, scale)?;
        let patches = self.final_out.forward(tape, p, h)?;
        let velocity = tape.gather(patches, self.unpatch.clone(), self.config.latent_shape().to_vec())?;
        Ok(ForwardOutput { velocity, tapped })
    }

    /// Gradient-free forward pass returning plain tensors.
    pub fn predict(
        &self,
        params: &ParamStore,
        z_t: &Tensor,
        t: f64,
        text: &Tensor,
        tap: Option<FeatureTap>,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, z_t, t, text, tap)?;
        let velocity = tape.value(out.velocity).clone();
        let tapped = out.tapped.map(|v| tape.value(v).clone());
        Ok((velocity, tapped))
    }
}
