//! Training, sampling and evaluation runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::flow::{euler_sample, sample_batch, ConditionedModel, FlowSample};
use crate::metrics::{alignment_score, frechet_between, stack_flat, ScoringHead};
use crate::rng::{self, RngState, Stream};
use crate::supervision::{
    load_teacher_file, sample_objective, AlignmentConfig, LossBreakdown, TeacherSet, TrainExample, TrainState,
};
use crate::tensor::Tensor;

use super::checkpoint::Checkpoint;
use super::config::{RunConfig, TeacherConfig, TeacherSource};
use super::dataset::SyntheticDataset;
use super::latents::LatentFile;

/// Seed of the frozen scoring head; shared by every run.
pub const SCORING_HEAD_SEED: u64 = 0x5C08E;
/// Seed of synthetic teacher embeddings; a stand-in for fixed pretrained weights.
pub const SYNTHETIC_TEACHER_SEED: u64 = 0x7EAC_4E55;
/// Held-out items in the fixed loss probe.
pub const PROBE_SIZE: usize = 64;
const PROBE_KEY: u64 = 0x9_20BE;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_HEADER: &str = "step,fm_loss,align_loss,total_loss";

/// Teachers for captions `0..num_classes`, synthetic or loaded from TEMB.
pub fn load_teachers(cfg: &TeacherConfig, num_classes: usize) -> Result<TeacherSet> {
    let set = match &cfg.source {
        TeacherSource::Synthetic => {
            TeacherSet::synthetic(0..num_classes as u64, cfg.width, cfg.tokens, SYNTHETIC_TEACHER_SEED)?
        }
        TeacherSource::File(path) => load_teacher_file(path)?,
    };
    for c in 0..num_classes as u64 {
        set.get(c)?;
    }
    Ok(set)
}

/// Frozen data, teachers and scoring head for one config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub teachers: TeacherSet,
    pub scoring: ScoringHead,
    pub dataset: SyntheticDataset,
}

impl Experiment {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let teachers = load_teachers(&config.teacher, config.dataset.num_classes)?;
        let numel = config.model.latent_numel();
        if teachers.width() > numel {
            return Err(Error::Config(format!(
                "teacher width {} exceeds latent size {numel}",
                teachers.width()
            )));
        }
        let scoring = ScoringHead::new(numel, teachers.width(), &mut rng::keyed(SCORING_HEAD_SEED, numel as u64))?;
        let dataset = SyntheticDataset::generate(&config.dataset, &config.model, &teachers, &scoring, config.run.seed)?;
        Ok(Self {
            config: config.clone(),
            teachers,
            scoring,
            dataset,
        })
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub losses: LossBreakdown,
}

/// Renders rows as CSV. The alignment column is empty when supervision is off.
pub fn metrics_csv(rows: &[LogRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let align = r.losses.align.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.step, r.losses.fm, align, r.losses.total);
    }
    out
}

/// Mean losses over the fixed held-out probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeLosses {
    pub fm: f64,
    pub align: Option<f64>,
}

/// Held-out evaluation of generated samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Diagonal Fréchet distance between real and generated held-out latents.
    pub fid: f64,
    pub alignment_score: f64,
    pub count: usize,
}

/// A training run in progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub experiment: Experiment,
    pub state: TrainState,
    batch_rng: rng::Rng,
    log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let experiment = Experiment::new(config)?;
        let state = TrainState::new(
            config.model.clone(),
            &config.align,
            experiment.teachers.width(),
            config.run.seed,
        )?;
        Ok(Self {
            experiment,
            state,
            batch_rng: rng::stream(config.run.seed, Stream::Batches),
            log: Vec::new(),
        })
    }

    /// Continues from a checkpoint, including the batch stream position.
    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        let experiment = Experiment::new(&ckpt.config)?;
        if experiment.teachers.width() != ckpt.teacher_width {
            return Err(Error::Config(format!(
                "checkpoint was trained with teacher width {}, teachers now have {}",
                ckpt.teacher_width,
                experiment.teachers.width()
            )));
        }
        Ok(Self {
            experiment,
            state: ckpt.state,
            batch_rng: ckpt.batch_rng.restore(),
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.experiment.config
    }

    pub fn step_count(&self) -> u64 {
        self.state.step_count()
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.experiment.config.clone(),
            teacher_width: self.experiment.teachers.width(),
            state: self.state.clone(),
            batch_rng: RngState::capture(&self.batch_rng),
        }
    }

    /// One optimiser step on a fresh batch.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let cfg = &self.experiment.config;
        let ds = &self.experiment.dataset;
        let drawn = sample_batch(ds.train_indices(), |i| ds.latent(i), cfg.run.batch_size, &mut self.batch_rng)?;
        let batch = drawn
            .iter()
            .map(|d| {
                let caption_id = ds.caption(d.index);
                Ok(TrainExample {
                    sample: &d.sample,
                    caption_id,
                    text: ds.text(caption_id)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let teachers = cfg.align.enabled.then_some(&self.experiment.teachers);
        self.state.train_step(&batch, teachers, &cfg.align, &cfg.optimizer)
    }

    /// Trains until the step counter reaches `total`, logging every
    /// `log_interval` steps and at `total`.
    pub fn run_until(&mut self, total: u64) -> Result<()> {
        let interval = self.experiment.config.run.log_interval;
        while self.step_count() < total {
            let losses = self.step()?;
            let step = self.step_count();
            if step % interval == 0 || step == total {
                self.log.push(LogRow { step, losses });
            }
        }
        Ok(())
    }

    /// Losses on a fixed set of held-out tuples, independent of the batch stream.
    pub fn probe_losses(&self) -> Result<ProbeLosses> {
        let cfg = &self.experiment.config;
        let ds = &self.experiment.dataset;
        let mut r = rng::keyed(cfg.run.seed, PROBE_KEY);
        let (mut fm, mut align, mut n) = (0.0, 0.0, 0usize);
        for &i in ds.heldout_indices().iter().take(PROBE_SIZE) {
            let z1 = ds.latent(i).clone();
            let z0 = Tensor::randn(z1.shape().to_vec(), &mut r);
            let t: f64 = rand::Rng::gen(&mut r);
            let sample = FlowSample::new(z0, z1, t)?;
            let caption_id = ds.caption(i);
            let example = TrainExample {
                sample: &sample,
                caption_id,
                text: ds.text(caption_id)?,
            };
            let mut tape = Tape::new();
            let model_bound = self.state.params.bind(&mut tape, false);
            let head = self.state.head.as_ref().map(|h| (&h.head, h.params.bind(&mut tape, false)));
            let teacher = match head {
                Some(_) => Some(self.experiment.teachers.get(caption_id)?),
                None => None,
            };
            let obj = sample_objective(
                &mut tape,
                &self.state.model,
                &model_bound,
                head.as_ref().map(|(h, b)| (*h, b)),
                &example,
                teacher,
                &cfg.align,
            )?;
            fm += tape.value(obj.fm).item();
            if let Some(al) = obj.align {
                align += tape.value(al.loss).item();
            }
            n += 1;
        }
        let n = n as f64;
        Ok(ProbeLosses {
            fm: fm / n,
            align: self.state.head.as_ref().map(|_| align / n),
        })
    }

    /// Generates one latent per held-out item (up to `eval.count`) and scores them.
    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(&self.experiment, &self.state)
    }
}

/// See [`Trainer::evaluate`].
pub fn evaluate(experiment: &Experiment, state: &TrainState) -> Result<EvalReport> {
    let cfg = &experiment.config;
    let ds = &experiment.dataset;
    let picked: Vec<usize> = ds.heldout_indices().iter().take(cfg.eval.count).copied().collect();
    if picked.len() < 2 {
        return Err(Error::Config(format!(
            "evaluation needs at least 2 held-out items, have {}",
            picked.len()
        )));
    }
    let shape = cfg.model.latent_shape().to_vec();
    let mut r = rng::stream(cfg.run.seed, Stream::Sampling);
    let mut generated = Vec::with_capacity(picked.len());
    for &i in &picked {
        let caption_id = ds.caption(i);
        let field = ConditionedModel {
            model: &state.model,
            params: &state.params,
            text: ds.text(caption_id)?,
            tap: None,
        };
        generated.push((caption_id, euler_sample(&field, &shape, cfg.eval.sampling_steps, &mut r)?));
    }
    let real = stack_flat(picked.iter().map(|&i| ds.latent(i)))?;
    let fake = stack_flat(generated.iter().map(|(_, z)| z))?;
    Ok(EvalReport {
        fid: frechet_between(&real, &fake)?,
        alignment_score: alignment_score(&experiment.teachers, &generated, &experiment.scoring)?,
        count: picked.len(),
    })
}

/// Files written by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub log: Vec<LogRow>,
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn finish_run(trainer: &Trainer, out: &Path) -> Result<TrainOutput> {
    let checkpoint = out.join(CHECKPOINT_FILE);
    let metrics = out.join(METRICS_FILE);
    write_text(&out.join(CONFIG_FILE), &trainer.config().to_toml())?;
    write_text(&metrics, &metrics_csv(trainer.log()))?;
    trainer.checkpoint().save(&checkpoint)?;
    Ok(TrainOutput {
        checkpoint,
        metrics,
        log: trainer.log().to_vec(),
    })
}

/// Trains `config.run.steps` steps and writes config, metrics and checkpoint into `out`.
pub fn run_train(config: &RunConfig, out: &Path) -> Result<TrainOutput> {
    config.validate()?;
    prepare_out(out)?;
    let mut trainer = Trainer::new(config)?;
    trainer.run_until(config.run.steps)?;
    finish_run(&trainer, out)
}

/// Continues a checkpoint until `total_steps` and writes a fresh set of outputs.
/// The metrics file holds only the rows logged by this invocation.
pub fn run_resume(checkpoint: &Path, total_steps: u64, out: &Path) -> Result<TrainOutput> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if total_steps < ckpt.step() {
        return Err(Error::Config(format!(
            "checkpoint is already at step {}, past the requested {total_steps}",
            ckpt.step()
        )));
    }
    prepare_out(out)?;
    let mut trainer = Trainer::resume(ckpt)?;
    trainer.experiment.config.run.steps = total_steps;
    trainer.run_until(total_steps)?;
    finish_run(&trainer, out)
}

/// Sampling request for [`run_sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRequest {
    pub caption_id: u64,
    pub steps: usize,
    pub count: usize,
    pub seed: u64,
    /// Supervision settings to honour during the forward pass. Any tapped
    /// features are discarded, so the output never depends on this.
    pub align: Option<AlignmentConfig>,
}

/// Draws `count` latents for one caption by Euler integration.
pub fn run_sample(ckpt: &Checkpoint, req: &SampleRequest) -> Result<LatentFile> {
    let experiment = Experiment::new(&ckpt.config)?;
    sample_latents(&experiment, &ckpt.state, req)
}

/// [`run_sample`] against an already-built experiment.
pub fn sample_latents(experiment: &Experiment, state: &TrainState, req: &SampleRequest) -> Result<LatentFile> {
    let model_cfg = state.model.config();
    let text = experiment.dataset.text(req.caption_id)?;
    let tap = match &req.align {
        Some(a) => {
            a.validate(model_cfg.depth)?;
            a.tap(model_cfg.depth)?
        }
        None => None,
    };
    let field = ConditionedModel {
        model: &state.model,
        params: &state.params,
        text,
        tap,
    };
    let shape = model_cfg.latent_shape();
    let mut r = rng::stream(req.seed, Stream::Sampling);
    let records = (0..req.count)
        .map(|_| Ok((req.caption_id, euler_sample(&field, &shape, req.steps, &mut r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentFile { shape, records })
}

/// Held-out evaluation of a checkpoint.
pub fn run_eval(ckpt: &Checkpoint) -> Result<EvalReport> {
    let experiment = Experiment::new(&ckpt.config)?;
    evaluate(&experiment, &ckpt.state)
}
