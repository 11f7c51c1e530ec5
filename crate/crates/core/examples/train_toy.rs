//! Trains the toy model on synthetic class-conditional latents and reports
//! probe losses and held-out metrics before and after.
//!
//!     cargo run --release --example train_toy -- [steps] [lambda]
//!
//! The default config at 2000 steps takes a few minutes on one core.

use mmdit_align::harness::{metrics_csv, RunConfig, Trainer};

fn main() -> mmdit_align::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(200, |s| s.parse().expect("steps"));
    let lambda: f64 = args.next().map_or(0.1, |s| s.parse().expect("lambda"));

    let mut cfg = RunConfig::default();
    cfg.run.steps = steps;
    cfg.run.log_interval = (steps / 10).max(1);
    cfg.align.lambda = lambda;

    let mut trainer = Trainer::new(&cfg)?;
    let before = trainer.probe_losses()?;
    trainer.run_until(steps)?;
    let after = trainer.probe_losses()?;

    print!("{}", metrics_csv(trainer.log()));
    println!("probe fm    {:.4} -> {:.4}", before.fm, after.fm);
    if let (Some(a), Some(b)) = (before.align, after.align) {
        println!("probe align {a:.4} -> {b:.4}");
    }
    let eval = trainer.evaluate()?;
    println!(
        "held-out ({} samples): fid analogue {:.4}, alignment score {:.4}",
        eval.count, eval.fid, eval.alignment_score
    );
    Ok(())
}
