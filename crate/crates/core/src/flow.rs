//! Rectified-flow objective and ODE sampling.
//!
//! Time runs from noise at `t = 0` to data at `t = 1`: the training path is
//! `z_t = t·z₁ + (1 − t)·z₀`, whose velocity `z₁ − z₀` does not depend on `t`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{FeatureTap, MmDit};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Default number of Euler steps when sampling.
pub const DEFAULT_SAMPLING_STEPS: usize = 20;

fn check_t(op: &'static str, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(op, format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// Point on the straight path between noise `z0` and data `z1`.
pub fn interpolate(z0: &Tensor, z1: &Tensor, t: f64) -> Result<Tensor> {
    check_t("interpolate", t)?;
    // The endpoints are special-cased so they come out bitwise exact.
    if t == 0.0 {
        return z0.zip_map(z1, "interpolate", |a, _| a);
    }
    if t == 1.0 {
        return z0.zip_map(z1, "interpolate", |_, b| b);
    }
    z0.zip_map(z1, "interpolate", |a, b| t * b + (1.0 - t) * a)
}

/// `z1 − z0`.
pub fn target_velocity(z0: &Tensor, z1: &Tensor) -> Result<Tensor> {
    z1.zip_map(z0, "target_velocity", |b, a| b - a)
}

/// One training tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub z0: Tensor,
    pub z1: Tensor,
    pub t: f64,
    pub z_t: Tensor,
    pub u_t: Tensor,
}

impl FlowSample {
    pub fn new(z0: Tensor, z1: Tensor, t: f64) -> Result<Self> {
        let z_t = interpolate(&z0, &z1, t)?;
        let u_t = target_velocity(&z0, &z1)?;
        Ok(Self { z0, z1, t, z_t, u_t })
    }
}

/// Mean squared error between `v_pred` and `z1 − z0`, on the tape.
pub fn fm_loss(tape: &mut Tape, v_pred: Var, z0: &Tensor, z1: &Tensor) -> Result<Var> {
    let target = target_velocity(z0, z1)?;
    if tape.value(v_pred).shape() != target.shape() {
        return Err(Error::shape("fm_loss", tape.value(v_pred).shape(), target.shape()));
    }
    let target = tape.constant(target);
    let residual = tape.sub(v_pred, target)?;
    let sq = tape.square(residual)?;
    tape.mean(sq)
}

/// A draw of one training example: which dataset item plus its flow tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnSample {
    pub index: usize,
    pub sample: FlowSample,
}

/// Draws `batch_size` tuples: `z1` uniformly from `pool`, `z0 ~ N(0, I)`, `t ~ U(0, 1)`.
///
/// `pool` lists the eligible dataset indices; `latent(i)` returns item `i`.
pub fn sample_batch<'a, R: Rng + ?Sized>(
    pool: &[usize],
    latent: impl Fn(usize) -> &'a Tensor,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<DrawnSample>> {
    if pool.is_empty() {
        return Err(Error::invalid("sample_batch", "dataset is empty"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("sample_batch", "batch size must be at least 1"));
    }
    (0..batch_size)
        .map(|_| {
            let index = pool[rng.gen_range(0..pool.len())];
            let z1 = latent(index).clone();
            let z0 = Tensor::randn(z1.shape().to_vec(), rng);
            let t: f64 = rng.gen();
            Ok(DrawnSample {
                index,
                sample: FlowSample::new(z0, z1, t)?,
            })
        })
        .collect()
}

/// Anything that yields `dz/dt` at `(z, t)`.
pub trait VelocityField {
    fn velocity(&self, z: &Tensor, t: f64) -> Result<Tensor>;
}

impl<F: Fn(&Tensor, f64) -> Result<Tensor>> VelocityField for F {
    fn velocity(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        self(z, t)
    }
}

/// The trained network bound to one caption's text conditioning.
///
/// The optional tap is honoured by the forward pass and its features are
/// dropped; sampling output is independent of it.
#[derive(Debug, Clone, Copy)]
pub struct ConditionedModel<'a> {
    pub model: &'a MmDit,
    pub params: &'a ParamStore,
    pub text: &'a Tensor,
    pub tap: Option<FeatureTap>,
}

impl VelocityField for ConditionedModel<'_> {
    fn velocity(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        let (v, _discarded) = self.model.predict(self.params, z, t, self.text, self.tap)?;
        Ok(v)
    }
}

/// Fixed-step Euler from `z0` at `t = 0` to `t = 1`: `z ← z + v(z, k/N)/N`.
pub fn euler_integrate(field: &impl VelocityField, z0: Tensor, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("euler_sample", "steps must be at least 1"));
    }
    let dt = 1.0 / steps as f64;
    let mut z = z0;
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let v = field.velocity(&z, t)?;
        if v.shape() != z.shape() {
            return Err(Error::shape("euler_sample", v.shape(), z.shape()));
        }
        for (zi, vi) in z.data_mut().iter_mut().zip(v.data()) {
            *zi += dt * vi;
        }
    }
    Ok(z)
}

/// Draws `z0 ~ N(0, I)` of `shape` and integrates it with [`euler_integrate`].
pub fn euler_sample<R: Rng + ?Sized>(
    field: &impl VelocityField,
    shape: &[usize],
    steps: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let numel = shape.iter().product();
    let z0 = Tensor::new(shape.to_vec(), (0..numel).map(|_| rng.sample(StandardNormal)).collect())?;
    euler_integrate(field, z0, steps)
}
