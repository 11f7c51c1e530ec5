//! A small (λ, depth) grid with every cell starting from the same weights,
//! followed by the Pareto table over FID analogue and alignment score.
//!
//!     cargo run --release --example sweep_grid

use mmdit_align::harness::{depth_stages, run_sweep, RunConfig};

fn main() -> mmdit_align::error::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.run.steps = 20;
    cfg.run.batch_size = 2;
    cfg.eval.count = 16;
    cfg.eval.sampling_steps = 5;

    let out = std::env::temp_dir().join("mmdit-align-sweep");
    let depths = depth_stages(cfg.model.depth);
    let sweep = run_sweep(&cfg, &[0.1, 0.3, 0.6], &depths, &out)?;
    println!("shared initial weights hash {:016x}", sweep.initial_hash);
    for c in &sweep.cells {
        println!("{:<22} final total loss {:.4}", c.label(), c.final_total.unwrap_or(f64::NAN));
    }
    print!("{}", sweep.report.to_table());
    println!("per-cell outputs and pareto.csv under {}", out.display());
    Ok(())
}
