//! Evaluation: a diagonal-Gaussian Fréchet distance (a toy FID analogue), a
//! cosine text/latent alignment score, and Pareto reporting over both.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::supervision::TeacherSet;
use crate::tensor::Tensor;

/// Per-dimension Gaussian fit. Covariance is diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl GaussianFit {
    pub fn width(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased variance of each column of `[N×e]` features.
pub fn fit_gaussian(features: &Tensor) -> Result<GaussianFit> {
    let (n, e) = features.dims2("fit_gaussian")?;
    if n < 2 {
        return Err(Error::invalid("fit_gaussian", format!("need at least 2 samples, got {n}")));
    }
    let mut mean = vec![0.0; e];
    for row in features.data().chunks(e) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; e];
    for row in features.data().chunks(e) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    Ok(GaussianFit { mean, var, count: n })
}

/// `Σᵢ (μₐᵢ − μᵦᵢ)² + (√varₐᵢ − √varᵦᵢ)²`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.width() != b.width() {
        return Err(Error::shape("frechet_distance", &[a.width()], &[b.width()]));
    }
    let mut d = 0.0;
    for i in 0..a.width() {
        let dm = a.mean[i] - b.mean[i];
        let ds = a.var[i].sqrt() - b.var[i].sqrt();
        d += dm * dm + ds * ds;
    }
    Ok(d)
}

/// Fits both `[N×e]` feature sets and returns their Fréchet distance.
pub fn frechet_between(real: &Tensor, generated: &Tensor) -> Result<f64> {
    frechet_distance(&fit_gaussian(real)?, &fit_gaussian(generated)?)
}

/// Stacks flattened latents into `[N×numel]` rows.
pub fn stack_flat<'a>(latents: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut width = None;
    let mut n = 0;
    for z in latents {
        match width {
            None => width = Some(z.numel()),
            Some(w) if w != z.numel() => return Err(Error::shape("stack_flat", &[w], z.shape())),
            Some(_) => {}
        }
        data.extend_from_slice(z.data());
        n += 1;
    }
    let width = width.ok_or_else(|| Error::invalid("stack_flat", "no latents"))?;
    Tensor::new(vec![n, width], data)
}

/// Frozen linear map from a flattened latent to teacher width.
///
/// Rows are orthonormal, so the map is a projection onto an `e`-dimensional
/// subspace of latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringHead {
    /// `[e×D]`.
    weight: Tensor,
}

impl ScoringHead {
    pub fn new<R: Rng + ?Sized>(latent_numel: usize, width: usize, rng: &mut R) -> Result<Self> {
        if width == 0 || width > latent_numel {
            return Err(Error::invalid(
                "scoring_head",
                format!("width {width} must lie in 1..={latent_numel}"),
            ));
        }
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(width);
        while rows.len() < width {
            let mut v: Vec<f64> = (0..latent_numel).map(|_| rng.sample(StandardNormal)).collect();
            // Two Gram-Schmidt passes keep the rows orthogonal to rounding.
            for _ in 0..2 {
                for r in &rows {
                    let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                rows.push(v);
            }
        }
        Ok(Self {
            weight: Tensor::from_rows(&rows),
        })
    }

    pub fn width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn latent_numel(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// `W · vec(z)`.
    pub fn features(&self, latent: &Tensor) -> Result<Vec<f64>> {
        if latent.numel() != self.latent_numel() {
            return Err(Error::shape("scoring_head", latent.shape(), self.weight.shape()));
        }
        Ok(self
            .weight
            .data()
            .chunks(self.latent_numel())
            .map(|row| row.iter().zip(latent.data()).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `Wᵀ · v`: a latent-space vector whose features are `v`.
    pub fn lift(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.width() {
            return Err(Error::shape("scoring_head_lift", &[v.len()], self.weight.shape()));
        }
        let mut out = vec![0.0; self.latent_numel()];
        for (row, &c) in self.weight.data().chunks(self.latent_numel()).zip(v) {
            out.iter_mut().zip(row).for_each(|(o, w)| *o += c * w);
        }
        Ok(out)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine between each latent's scoring features and its caption's pooled teacher vector.
pub fn alignment_score(teachers: &TeacherSet, scored: &[(u64, Tensor)], head: &ScoringHead) -> Result<f64> {
    if scored.is_empty() {
        return Err(Error::invalid("alignment_score", "nothing to score"));
    }
    if head.width() != teachers.width() {
        return Err(Error::shape("alignment_score", &[head.width()], &[teachers.width()]));
    }
    let mut total = 0.0;
    for (caption_id, latent) in scored {
        let pooled = teachers.get(*caption_id)?.pooled();
        total += cosine(&head.features(latent)?, pooled.data());
    }
    Ok(total / scored.len() as f64)
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub label: String,
    /// Lower is better.
    pub fid: f64,
    /// Higher is better.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub result: GridResult,
    pub non_dominated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoReport {
    pub rows: Vec<ParetoRow>,
}

/// `a` dominates `b`: no worse on both axes and strictly better on one.
pub fn dominates(a: &GridResult, b: &GridResult) -> bool {
    a.fid <= b.fid && a.score >= b.score && (a.fid < b.fid || a.score > b.score)
}

/// Flags non-dominated results. Rows are ordered by FID-analogue ascending,
/// then score descending, then label.
pub fn pareto_report(results: &[GridResult]) -> ParetoReport {
    let mut rows: Vec<ParetoRow> = results
        .iter()
        .map(|r| ParetoRow {
            result: r.clone(),
            non_dominated: !results.iter().any(|other| dominates(other, r)),
        })
        .collect();
    rows.sort_by(|a, b| {
        a.result
            .fid
            .total_cmp(&b.result.fid)
            .then_with(|| b.result.score.total_cmp(&a.result.score))
            .then_with(|| a.result.label.cmp(&b.result.label))
            .then(Ordering::Equal)
    });
    ParetoReport { rows }
}

impl ParetoReport {
    pub const CSV_HEADER: &'static str = "config,fid_analogue,alignment_score,non_dominated";

    /// Columns: config, fid_analogue, alignment_score, non_dominated (0/1).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let r = &row.result;
            let _ = writeln!(out, "{},{},{},{}", r.label, r.fid, r.score, u8::from(row.non_dominated));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.result.label.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}  {:>14}  {:>15}  pareto\n", "config", "fid_analogue", "alignment_score");
        for row in &self.rows {
            let r = &row.result;
            let _ = writeln!(
                out,
                "{:<width$}  {:>14.6}  {:>15.6}  {}",
                r.label,
                r.fid,
                r.score,
                if row.non_dominated { "*" } else { "" }
            );
        }
        out
    }
}
