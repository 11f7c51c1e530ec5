//! The straight noise-to-data path and its flow-matching loss.
//!
//!     cargo run --example flow_path

use mmdit_align::autograd::Tape;
use mmdit_align::flow::{fm_loss, interpolate, target_velocity};
use mmdit_align::rng::{self, Stream};
use mmdit_align::tensor::Tensor;

fn main() -> mmdit_align::error::Result<()> {
    let mut r = rng::stream(0, Stream::Dataset);
    let z0 = Tensor::randn([1, 2, 2], &mut r);
    let z1 = Tensor::randn([1, 2, 2], &mut r);
    let u = target_velocity(&z0, &z1)?;
    println!("noise z0 = {:.3?}", z0.data());
    println!("data  z1 = {:.3?}", z1.data());
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("t = {t:.2}: z_t = {:.3?}", interpolate(&z0, &z1, t)?.data());
    }
    println!("target velocity u = {:.3?}", u.data());

    // A predictor that returns u exactly scores zero; anything else is its MSE.
    for (label, pred) in [("exact", u.clone()), ("zero", Tensor::zeros([1, 2, 2])), ("half", u.map(|x| 0.5 * x))] {
        let mut tape = Tape::new();
        let v = tape.constant(pred);
        let loss = fm_loss(&mut tape, v, &z0, &z1)?;
        println!("fm loss ({label}) = {:.6}", tape.value(loss).item());
    }
    Ok(())
}
