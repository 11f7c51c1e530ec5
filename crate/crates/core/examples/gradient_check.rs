//! Checks every parameter gradient of the training objective against
//! central differences on a small model.
//!
//!     cargo run --release --example gradient_check

use mmdit_align::autograd::Tape;
use mmdit_align::flow::FlowSample;
use mmdit_align::gradcheck::check_params;
use mmdit_align::model::ModelConfig;
use mmdit_align::rng::{self, Stream};
use mmdit_align::supervision::{sample_objective, AlignmentConfig, TeacherSet, TrainExample, TrainState};
use mmdit_align::tensor::Tensor;

fn main() -> mmdit_align::error::Result<()> {
    let cfg = ModelConfig {
        depth: 1,
        hidden_dim: 8,
        heads: 2,
        latent_channels: 2,
        latent_height: 4,
        latent_width: 4,
        text_tokens: 2,
        text_embed_dim: 6,
        time_embed_dim: 4,
        mlp_ratio: 1,
        ..ModelConfig::default()
    };
    let align = AlignmentConfig {
        depth_n: 1,
        ..AlignmentConfig::default()
    };
    let mut state = TrainState::new(cfg.clone(), &align, 5, 0)?;
    let mut r = rng::stream(7, Stream::Init);
    // Zero-initialised modulation heads would hide most of the network.
    for v in state.params.values_mut() {
        *v = Tensor::rand_uniform(v.shape().to_vec(), -0.3, 0.3, &mut r);
    }
    let teachers = TeacherSet::synthetic([0], 5, 3, 1)?;
    let sample = FlowSample::new(
        Tensor::randn(cfg.latent_shape().to_vec(), &mut r),
        Tensor::randn(cfg.latent_shape().to_vec(), &mut r),
        0.4,
    )?;
    let text = Tensor::randn([2, 6], &mut r);
    let example = TrainExample {
        sample: &sample,
        caption_id: 0,
        text: &text,
    };
    let head = state.head.as_ref().unwrap();

    let loss = |params: &mmdit_align::params::ParamStore, grad: bool| {
        let mut tape = Tape::new();
        let mb = params.bind(&mut tape, grad);
        let hb = head.params.bind(&mut tape, false);
        let obj = sample_objective(&mut tape, &state.model, &mb, Some((&head.head, &hb)), &example, Some(teachers.get(0)?), &align)?;
        Ok::<_, mmdit_align::error::Error>((tape, mb, obj.total))
    };

    let (mut tape, mb, total) = loss(&state.params, true)?;
    let grads = tape.backward(total)?;
    let analytic: Vec<Tensor> = mb.vars().iter().map(|&v| grads.get(v)).collect();
    let report = check_params(&state.params, &analytic, |p| {
        let (t, _, l) = loss(p, false).unwrap();
        t.value(l).item()
    }, 1e-5);

    println!("{:<36} {:>6} {:>12} {:>12}", "tensor", "numel", "norm rel", "max abs");
    for c in &report {
        println!("{:<36} {:>6} {:>12.2e} {:>12.2e}", c.name, c.numel, c.norm_relative_error, c.max_abs_error);
    }
    Ok(())
}
