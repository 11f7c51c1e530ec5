//! Alignment distance and the combined objective.

use crate::autograd::{Tape, Var, ZERO_NORM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::teacher::TeacherEmbedding;

/// Alignment loss node plus diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentLoss {
    pub loss: Var,
    /// Projected rows with (near) zero norm; each contributed a distance of 1.
    pub zero_norm_rows: usize,
}

/// `mean_i (1 − cos(rowᵢ, t̄))` where `t̄` is the teacher's pooled vector.
///
/// The teacher enters as a constant, so gradients flow only into `projected`.
pub fn alignment_loss(tape: &mut Tape, teacher: &TeacherEmbedding, projected: Var) -> Result<AlignmentLoss> {
    let value = tape.value(projected);
    let (_, e) = value.dims2("alignment_loss")?;
    if e != teacher.width() {
        return Err(Error::shape("alignment_loss", value.shape(), teacher.vectors().shape()));
    }
    let zero_norm_rows = value
        .data()
        .chunks(e)
        .filter(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt() < ZERO_NORM)
        .count();

    let target = teacher.pooled().reshape([e, 1])?;
    let target = tape.constant(target);
    let rows = tape.l2_normalize(projected)?;
    let cos = tape.matmul(rows, target)?;
    let neg = tape.scale(cos, -1.0)?;
    let dist = tape.add_const(neg, 1.0)?;
    let loss = tape.mean(dist)?;
    Ok(AlignmentLoss { loss, zero_norm_rows })
}

/// Plain-value version of [`alignment_loss`].
pub fn alignment_distance(teacher: &TeacherEmbedding, projected: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(projected.clone());
    let out = alignment_loss(&mut tape, teacher, p)?;
    Ok(tape.value(out.loss).item())
}

/// `fm + λ·align`. At `λ = 0` the result equals `fm` bitwise.
pub fn total_loss(tape: &mut Tape, fm: Var, align: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("total_loss", format!("λ = {lambda} must be finite and non-negative")));
    }
    let weighted = tape.scale(align, lambda)?;
    tape.add(fm, weighted)
}
