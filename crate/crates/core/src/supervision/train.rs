//! One optimisation step of `fm + λ·align`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::flow::{fm_loss, FlowSample};
use crate::model::{FeatureTap, MmDit, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{Bound, ParamStore};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

use super::loss::{alignment_loss, total_loss, AlignmentLoss};
use super::projection::{ProjectionHead, ProjectionVariant};
use super::teacher::{TeacherEmbedding, TeacherSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentConfig {
    /// When false no tap, head or alignment term is built at all.
    pub enabled: bool,
    /// 1-based block after which image tokens are tapped.
    pub depth_n: usize,
    pub lambda: f64,
    pub variant: ProjectionVariant,
    /// Query count for [`ProjectionVariant::QueryPooler`].
    pub queries: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            depth_n: 2,
            lambda: 0.1,
            variant: ProjectionVariant::Mlp,
            queries: 4,
        }
    }
}

impl AlignmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self, model_depth: usize) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            problems.push(format!("align.lambda = {} must be finite and non-negative", self.lambda));
        }
        if self.depth_n == 0 || self.depth_n > model_depth {
            problems.push(format!(
                "align.depth_n = {} must lie in 1..={model_depth}",
                self.depth_n
            ));
        }
        if self.variant == ProjectionVariant::QueryPooler && self.queries == 0 {
            problems.push("align.queries must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// The tap requested by this config, `None` when supervision is off.
    pub fn tap(&self, model_depth: usize) -> Result<Option<FeatureTap>> {
        if !self.enabled {
            return Ok(None);
        }
        FeatureTap::new(self.depth_n, model_depth).map(Some)
    }
}

/// One conditioned training example.
#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub sample: &'a FlowSample,
    pub caption_id: u64,
    pub text: &'a Tensor,
}

/// Batch means of each term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub fm: f64,
    /// `None` when supervision is disabled.
    pub align: Option<f64>,
    pub total: f64,
    pub zero_norm_rows: usize,
}

/// Graph nodes for one example.
#[derive(Debug, Clone, Copy)]
pub struct SampleObjective {
    pub fm: Var,
    pub align: Option<AlignmentLoss>,
    pub total: Var,
}

/// Projection head with its own parameters and optimiser moments.
#[derive(Debug, Clone)]
pub struct HeadState {
    pub head: ProjectionHead,
    pub params: ParamStore,
    pub adam: AdamState,
}

/// Builds the per-example objective on `tape`.
///
/// `head` must be present exactly when `align.enabled` is set.
pub fn sample_objective(
    tape: &mut Tape,
    model: &MmDit,
    model_bound: &Bound,
    head: Option<(&ProjectionHead, &Bound)>,
    example: &TrainExample<'_>,
    teacher: Option<&TeacherEmbedding>,
    align: &AlignmentConfig,
) -> Result<SampleObjective> {
    let tap = align.tap(model.config().depth)?;
    let s = example.sample;
    let out = model.forward(tape, model_bound, &s.z_t, s.t, example.text, tap)?;
    let fm = fm_loss(tape, out.velocity, &s.z0, &s.z1)?;
    let Some(tapped) = out.tapped else {
        return Ok(SampleObjective { fm, align: None, total: fm });
    };
    let (head, head_bound) = head.ok_or_else(|| Error::invalid("train_step", "alignment enabled without a projection head"))?;
    let teacher = teacher.ok_or_else(|| Error::invalid("train_step", "alignment enabled without teacher embeddings"))?;
    let projected = head.project(tape, head_bound, tapped)?;
    let al = alignment_loss(tape, teacher, projected)?;
    let total = total_loss(tape, fm, al.loss, align.lambda)?;
    Ok(SampleObjective {
        fm,
        align: Some(al),
        total,
    })
}

/// Model, head and optimiser state for a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: MmDit,
    pub params: ParamStore,
    pub adam: AdamState,
    pub head: Option<HeadState>,
}

impl TrainState {
    /// Model weights come from the `Init` stream and the head from `HeadInit`,
    /// so switching supervision on or off leaves the model's start point alone.
    pub fn new(model_cfg: ModelConfig, align: &AlignmentConfig, teacher_width: usize, seed: u64) -> Result<Self> {
        align.validate(model_cfg.depth)?;
        let (model, params) = MmDit::new(model_cfg, &mut rng::stream(seed, Stream::Init))?;
        let head = if align.enabled {
            let (head, params) = ProjectionHead::new(
                align.variant,
                model.config().hidden_dim,
                teacher_width,
                align.queries,
                &mut rng::stream(seed, Stream::HeadInit),
            )?;
            let adam = AdamState::new(&params);
            Some(HeadState { head, params, adam })
        } else {
            None
        };
        let adam = AdamState::new(&params);
        Ok(Self { model, params, adam, head })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    /// One Adam step on the batch mean of `fm + λ·align`.
    ///
    /// Every caption is resolved before any graph is built, so a missing
    /// teacher leaves the state untouched.
    pub fn train_step(
        &mut self,
        batch: &[TrainExample<'_>],
        teachers: Option<&TeacherSet>,
        align: &AlignmentConfig,
        adam: &AdamConfig,
    ) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::invalid("train_step", "empty batch"));
        }
        if align.enabled != self.head.is_some() {
            return Err(Error::invalid(
                "train_step",
                "alignment config does not match the state's projection head",
            ));
        }
        let resolved: Vec<Option<&TeacherEmbedding>> = if align.enabled {
            let set = teachers.ok_or_else(|| Error::invalid("train_step", "alignment enabled without teacher embeddings"))?;
            batch.iter().map(|ex| set.get(ex.caption_id).map(Some)).collect::<Result<_>>()?
        } else {
            vec![None; batch.len()]
        };

        let mut model_grads: Vec<Tensor> = zeros_like(&self.params);
        let mut head_grads: Vec<Tensor> = self.head.as_ref().map(|h| zeros_like(&h.params)).unwrap_or_default();
        let (mut fm_sum, mut align_sum, mut total_sum, mut zero_rows) = (0.0, 0.0, 0.0, 0);

        for (example, teacher) in batch.iter().zip(&resolved) {
            let mut tape = Tape::new();
            let model_bound = self.params.bind(&mut tape, true);
            let head_bound = self.head.as_ref().map(|h| (&h.head, h.params.bind(&mut tape, true)));
            let obj = sample_objective(
                &mut tape,
                &self.model,
                &model_bound,
                head_bound.as_ref().map(|(h, b)| (*h, b)),
                example,
                *teacher,
                align,
            )?;
            fm_sum += tape.value(obj.fm).item();
            total_sum += tape.value(obj.total).item();
            if let Some(al) = obj.align {
                align_sum += tape.value(al.loss).item();
                zero_rows += al.zero_norm_rows;
            }
            let grads = tape.backward(obj.total)?;
            accumulate(&mut model_grads, model_bound.vars().iter().map(|&v| grads.get(v)));
            if let Some((_, b)) = &head_bound {
                accumulate(&mut head_grads, b.vars().iter().map(|&v| grads.get(v)));
            }
        }

        let n = batch.len() as f64;
        for g in model_grads.iter_mut().chain(head_grads.iter_mut()) {
            g.data_mut().iter_mut().for_each(|x| *x /= n);
        }
        self.adam.update(adam, &mut self.params, &model_grads);
        if let Some(h) = &mut self.head {
            h.adam.update(adam, &mut h.params, &head_grads);
        }
        Ok(LossBreakdown {
            fm: fm_sum / n,
            align: align.enabled.then_some(align_sum / n),
            total: total_sum / n,
            zero_norm_rows: zero_rows,
        })
    }
}

fn zeros_like(params: &ParamStore) -> Vec<Tensor> {
    params.values().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect()
}

fn accumulate(acc: &mut [Tensor], grads: impl Iterator<Item = Tensor>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += y;
        }
    }
}
