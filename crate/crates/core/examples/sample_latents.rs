//! Trains briefly, checkpoints, then draws latents for one caption into a
//! LATS file. The supervision settings passed to the sampler have no effect
//! on what it produces.
//!
//!     cargo run --release --example sample_latents

use mmdit_align::harness::{run_sample, Checkpoint, LatentFile, RunConfig, SampleRequest, Trainer};
use mmdit_align::supervision::AlignmentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("mmdit-align-sample");
    std::fs::create_dir_all(&dir)?;

    let mut cfg = RunConfig::default();
    cfg.run.batch_size = 4;
    let mut trainer = Trainer::new(&cfg)?;
    trainer.run_until(30)?;
    let ckpt_path = dir.join("toy.ckpt");
    trainer.checkpoint().save(&ckpt_path)?;

    let ckpt = Checkpoint::load(&ckpt_path)?;
    let mut req = SampleRequest {
        caption_id: 3,
        steps: 20,
        count: 4,
        seed: 11,
        align: None,
    };
    let plain = run_sample(&ckpt, &req)?;
    req.align = Some(AlignmentConfig {
        depth_n: 6,
        lambda: 0.6,
        ..AlignmentConfig::default()
    });
    let tapped = run_sample(&ckpt, &req)?;

    let lats = dir.join("caption3.lats");
    plain.save(&lats)?;
    let back = LatentFile::load(&lats)?;
    println!("wrote {} latents of shape {:?} to {}", back.records.len(), back.shape, lats.display());
    println!("tapped forward gives identical bytes: {}", plain.encode()? == tapped.encode()?);
    for (id, z) in &back.records {
        let norm = z.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("caption {id}: |z| = {norm:.3}");
    }
    Ok(())
}
