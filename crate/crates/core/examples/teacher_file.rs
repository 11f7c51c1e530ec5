//! Writes per-caption teacher embeddings to a TEMB file, reads them back and
//! trains against the file instead of the built-in synthetic teachers.
//!
//!     cargo run --release --example teacher_file

use mmdit_align::harness::{RunConfig, TeacherSource, Trainer};
use mmdit_align::supervision::{encode_temb, load_teacher_file, store_teacher_file, TeacherSet};

fn main() -> mmdit_align::error::Result<()> {
    let cfg = RunConfig::default();
    let ids = 0..cfg.dataset.num_classes as u64;
    let set = TeacherSet::synthetic(ids, 16, 4, 2024)?;
    let path = std::env::temp_dir().join("mmdit-align-teachers.temb");
    store_teacher_file(&set, &path)?;

    // Values are stored as f32, so the file holds the narrowed copy.
    let back = load_teacher_file(&path)?;
    println!(
        "{}: {} captions, {} tokens of width {}, re-encodes to the same bytes {}",
        path.display(),
        back.len(),
        back.tokens(),
        back.width(),
        encode_temb(&back) == encode_temb(&set)
    );
    for emb in back.iter().take(3) {
        println!("caption {} pooled: {:.3?}", emb.caption_id(), &emb.pooled().data()[..4]);
    }

    let mut cfg = cfg;
    cfg.teacher.source = TeacherSource::File(path);
    cfg.teacher.tokens = 4;
    cfg.teacher.width = 16;
    cfg.run.batch_size = 4;
    let mut trainer = Trainer::new(&cfg)?;
    let before = trainer.probe_losses()?;
    trainer.run_until(40)?;
    let after = trainer.probe_losses()?;
    println!("probe align {:.4} -> {:.4}", before.align.unwrap(), after.align.unwrap());
    Ok(())
}
