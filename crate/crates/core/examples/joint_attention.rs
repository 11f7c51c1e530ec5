//! One forward pass through the dual-stream model, reading the image-stream
//! features after each block without changing the predicted velocity.
//!
//!     cargo run --release --example joint_attention

use mmdit_align::model::{FeatureTap, MmDit, ModelConfig};
use mmdit_align::rng::{self, Stream};
use mmdit_align::tensor::Tensor;

fn main() -> mmdit_align::error::Result<()> {
    let cfg = ModelConfig::default();
    let mut r = rng::stream(0, Stream::Init);
    let (model, mut params) = MmDit::new(cfg.clone(), &mut r)?;
    // Freshly initialised gates are zero; perturb so blocks actually mix.
    for v in params.values_mut() {
        *v = v.map(|x| x + 0.02);
    }
    println!("{} parameter tensors, {} scalars", params.len(), params.num_scalars());

    let z = Tensor::randn(cfg.latent_shape().to_vec(), &mut r);
    let text = Tensor::randn([cfg.text_tokens, cfg.text_embed_dim], &mut r);
    let (plain, _) = model.predict(&params, &z, 0.5, &text, None)?;
    for n in 1..=cfg.depth {
        let (v, feats) = model.predict(&params, &z, 0.5, &text, Some(FeatureTap::new(n, cfg.depth)?))?;
        let f = feats.expect("tap requested");
        let rms = (f.data().iter().map(|x| x * x).sum::<f64>() / f.numel() as f64).sqrt();
        println!("block {n}: features {:?}, rms {rms:.4}, velocity unchanged {}", f.shape(), v.bit_eq(&plain));
    }
    Ok(())
}
