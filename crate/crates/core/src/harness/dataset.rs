//! Synthetic paired dataset: class prototypes with Gaussian jitter.
//!
//! Class `c` has caption id `c`, a fixed text conditioning `[T×text_dim]`
//! and a latent prototype `g_c + α·Wᵀ t̄_c`, where `g_c ~ N(0, I)`, `W` is
//! the frozen scoring head and `t̄_c` the pooled teacher vector. Real data
//! therefore scores well under the alignment metric.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::metrics::ScoringHead;
use crate::model::ModelConfig;
use crate::rng::{self, Stream};
use crate::supervision::TeacherSet;
use crate::tensor::Tensor;

use super::config::DatasetConfig;

/// Prototypes closer than this are rejected at build time.
pub const MIN_PROTOTYPE_GAP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    prototypes: Vec<Tensor>,
    texts: Vec<Tensor>,
    latents: Vec<Tensor>,
    captions: Vec<u64>,
    train: Vec<usize>,
    heldout: Vec<usize>,
}

impl SyntheticDataset {
    pub fn generate(
        cfg: &DatasetConfig,
        model: &ModelConfig,
        teachers: &TeacherSet,
        head: &ScoringHead,
        seed: u64,
    ) -> Result<Self> {
        if cfg.num_classes == 0 || cfg.size == 0 {
            return Err(Error::invalid("synthetic_dataset", "needs at least one class and one sample"));
        }
        let shape = model.latent_shape().to_vec();
        let numel = model.latent_numel();
        if head.latent_numel() != numel {
            return Err(Error::shape("synthetic_dataset", &[head.latent_numel()], &shape));
        }
        let mut r = rng::stream(seed, Stream::Dataset);

        let mut prototypes = Vec::with_capacity(cfg.num_classes);
        for c in 0..cfg.num_classes as u64 {
            let pooled = teachers.get(c)?.pooled();
            let lift = head.lift(pooled.data())?;
            let g = Tensor::randn(shape.clone(), &mut r);
            let data = g.data().iter().zip(&lift).map(|(a, b)| a + cfg.prototype_alignment * b).collect();
            prototypes.push(Tensor::new(shape.clone(), data)?);
        }
        for i in 0..prototypes.len() {
            for j in i + 1..prototypes.len() {
                let gap = prototypes[i].zip_map(&prototypes[j], "prototype_gap", |a, b| a - b)?.norm();
                if gap <= MIN_PROTOTYPE_GAP {
                    return Err(Error::invalid(
                        "synthetic_dataset",
                        format!("prototypes {i} and {j} are only {gap} apart"),
                    ));
                }
            }
        }
        let texts = (0..cfg.num_classes)
            .map(|_| Tensor::randn([model.text_tokens, model.text_embed_dim], &mut r))
            .collect();

        let mut latents = Vec::with_capacity(cfg.size);
        let mut captions = Vec::with_capacity(cfg.size);
        for i in 0..cfg.size {
            let c = i % cfg.num_classes;
            let jitter = Tensor::randn(shape.clone(), &mut r);
            latents.push(prototypes[c].zip_map(&jitter, "jitter", |p, n| p + cfg.jitter * n)?);
            captions.push(c as u64);
        }

        let mut order: Vec<usize> = (0..cfg.size).collect();
        order.shuffle(&mut rng::stream(seed, Stream::Split));
        let n_held = ((cfg.size as f64 * cfg.holdout_fraction).round() as usize).clamp(1, cfg.size.saturating_sub(1).max(1));
        let heldout = order[..n_held].to_vec();
        let mut train = order[n_held..].to_vec();
        train.sort_unstable();
        if train.is_empty() {
            return Err(Error::invalid("synthetic_dataset", "held-out split leaves no training data"));
        }
        Ok(Self {
            prototypes,
            texts,
            latents,
            captions,
            train,
            heldout,
        })
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn latent(&self, i: usize) -> &Tensor {
        &self.latents[i]
    }

    pub fn caption(&self, i: usize) -> u64 {
        self.captions[i]
    }

    pub fn prototype(&self, class: usize) -> &Tensor {
        &self.prototypes[class]
    }

    /// Text conditioning of a caption, or `MissingCaption`.
    pub fn text(&self, caption_id: u64) -> Result<&Tensor> {
        usize::try_from(caption_id)
            .ok()
            .and_then(|c| self.texts.get(c))
            .ok_or(Error::MissingCaption(caption_id))
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    /// Held-out indices in shuffled order.
    pub fn heldout_indices(&self) -> &[usize] {
        &self.heldout
    }

    /// A random training index.
    pub fn draw_train<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.train[rng.gen_range(0..self.train.len())]
    }

    pub fn bit_eq(&self, other: &SyntheticDataset) -> bool {
        self.captions == other.captions
            && self.train == other.train
            && self.heldout == other.heldout
            && self.latents.iter().zip(&other.latents).all(|(a, b)| a.bit_eq(b))
            && self.texts.iter().zip(&other.texts).all(|(a, b)| a.bit_eq(b))
    }
}
