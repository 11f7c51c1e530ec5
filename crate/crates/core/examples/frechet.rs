//! Diagonal-Gaussian Fréchet distance between two sets of samples.
//!
//!     cargo run --example frechet

use mmdit_align::metrics::{fit_gaussian, frechet_between, frechet_distance, GaussianFit};
use mmdit_align::rng;
use mmdit_align::tensor::Tensor;

fn main() -> mmdit_align::error::Result<()> {
    let unit = GaussianFit {
        mean: vec![0.0],
        var: vec![1.0],
        count: 2,
    };
    let shifted = GaussianFit { mean: vec![1.0], ..unit.clone() };
    let wide = GaussianFit { var: vec![4.0], ..unit.clone() };
    println!("d(N(0,1), N(1,1)) = {}", frechet_distance(&unit, &shifted)?);
    println!("d(N(0,1), N(0,4)) = {}", frechet_distance(&unit, &wide)?);

    let mut r = rng::keyed(3, 0);
    let a = Tensor::randn([500, 8], &mut r);
    let b = Tensor::randn([500, 8], &mut r).map(|x| 1.5 * x + 0.3);
    let fit = fit_gaussian(&a)?;
    println!("fitted mean of a (first 3) {:.3?}", &fit.mean[..3]);
    println!("d(a, a) = {}", frechet_between(&a, &a)?);
    println!("d(a, b) = {:.4}", frechet_between(&a, &b)?);
    Ok(())
}
