//! Vision-aligned text supervision: teacher embeddings, projection heads,
//! the alignment loss and the training step that combines it with flow matching.

pub mod loss;
pub mod projection;
pub mod teacher;
pub mod train;

pub use loss::{alignment_distance, alignment_loss, total_loss, AlignmentLoss};
pub use projection::{ProjectionHead, ProjectionVariant};
pub use teacher::{
    decode_temb, encode_temb, load_teacher_file, store_teacher_file, synthetic_teacher, TeacherEmbedding, TeacherSet,
    TEMB_MAGIC, TEMB_VERSION,
};
pub use train::{sample_objective, AlignmentConfig, HeadState, LossBreakdown, SampleObjective, TrainExample, TrainState};
