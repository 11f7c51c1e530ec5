//! Fixed-step Euler on dz/dt = z, whose exact solution at t = 1 is e.
//! Doubling N roughly halves the error.
//!
//!     cargo run --example euler_convergence

use mmdit_align::flow::euler_integrate;
use mmdit_align::tensor::Tensor;

fn main() -> mmdit_align::error::Result<()> {
    let field = |z: &Tensor, _t: f64| Ok(z.clone());
    let mut prev = None;
    println!("{:>5} {:>14} {:>8}", "N", "|z(1) - e|", "ratio");
    for n in [4, 8, 16, 32, 64, 128] {
        let z = euler_integrate(&field, Tensor::from_vec(vec![1.0]), n)?;
        let err = (z.item() - std::f64::consts::E).abs();
        let ratio = prev.map_or(String::new(), |p: f64| format!("{:.4}", p / err));
        println!("{n:>5} {err:>14.6e} {ratio:>8}");
        prev = Some(err);
    }
    Ok(())
}
