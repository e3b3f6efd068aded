//! Forward noising, the clean-sequence regression objective, and a
//! deterministic few-step DDIM sampler for x0-predicting denoisers.

use std::cell::Cell;

use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::conditioning::ConditionVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 2e-2;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// JSON-serializable description sufficient to rebuild a schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDescriptor {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

/// Per-step `alpha_t` for `t = 1..=T` and their running products.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit `alpha_t` values, each in `(0, 1]`.
    pub fn from_alphas(kind: ScheduleKind, alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("alpha {a} outside (0, 1]")));
        }
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { kind, alphas, alpha_bars })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Cumulative product at step `t`; `t = 0` is the clean signal with value 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.steps() => Ok(self.alpha_bars[t - 1]),
            t => Err(Error::Index(format!("diffusion step {t} outside 1..={}", self.steps()))),
        }
    }

    pub fn descriptor(&self) -> ScheduleDescriptor {
        ScheduleDescriptor {
            kind: self.kind,
            steps: self.steps(),
            beta_start: LINEAR_BETA_START,
            beta_end: LINEAR_BETA_END,
        }
    }

    pub fn from_descriptor(d: &ScheduleDescriptor) -> Result<Self> {
        match d.kind {
            ScheduleKind::Linear => linear(d.steps, d.beta_start, d.beta_end),
            ScheduleKind::Cosine => make_schedule(d.steps, ScheduleKind::Cosine),
        }
    }
}

fn linear(steps: usize, start: f64, end: f64) -> Result<NoiseSchedule> {
    let betas = (0..steps).map(|i| {
        if steps == 1 {
            start
        } else {
            start + (end - start) * i as f64 / (steps - 1) as f64
        }
    });
    NoiseSchedule::from_alphas(ScheduleKind::Linear, betas.map(|b| 1.0 - b).collect())
}

/// Builds a `T`-step schedule. The linear kind spaces `beta_t = 1 - alpha_t`
/// evenly from `1e-4` to `2e-2`; the cosine kind follows the squared-cosine
/// cumulative curve with per-step betas capped at 0.999.
pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::Config("diffusion needs T >= 1".into()));
    }
    match kind {
        ScheduleKind::Linear => linear(steps, LINEAR_BETA_START, LINEAR_BETA_END),
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let alphas = (1..=steps)
                .map(|t| {
                    let beta = (1.0 - f(t as f64) / f((t - 1) as f64)).min(0.999);
                    1.0 - beta
                })
                .collect();
            NoiseSchedule::from_alphas(ScheduleKind::Cosine, alphas)
        }
    }
}

/// `sqrt(abar_t) * clean + sqrt(1 - abar_t) * noise`.
pub fn q_sample<S: Scalar>(clean: &ArrayD<S>, t: usize, schedule: &NoiseSchedule, noise: &ArrayD<S>) -> Result<ArrayD<S>> {
    if clean.shape() != noise.shape() {
        return Err(Error::Shape(format!("clean {:?} vs noise {:?}", clean.shape(), noise.shape())));
    }
    if t == 0 {
        return Err(Error::Index("diffusion step must be >= 1".into()));
    }
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (S::c(ab.sqrt()), S::c((1.0 - ab).max(0.0).sqrt()));
    let mut out = clean.mapv(|x| x * a);
    out.zip_mut_with(noise, |o, &n| *o += b * n);
    Ok(out)
}

/// An x0-predicting network: maps noisy `(B, N, D)` sequences, fused
/// conditions `(B, N, C)`, and per-item steps to clean-sequence predictions.
pub trait Denoiser<S: Scalar> {
    fn predict(&self, noisy: &Var<S>, condition: &Var<S>, t: &[usize]) -> Result<Var<S>>;

    /// Coefficient dimension `D` of the sequences it denoises.
    fn coeff_dim(&self) -> usize;
}

impl<S: Scalar, T: Denoiser<S> + ?Sized> Denoiser<S> for &T {
    fn predict(&self, noisy: &Var<S>, condition: &Var<S>, t: &[usize]) -> Result<Var<S>> {
        (**self).predict(noisy, condition, t)
    }

    fn coeff_dim(&self) -> usize {
        (**self).coeff_dim()
    }
}

/// Wraps a denoiser and counts its evaluations.
pub struct CountingDenoiser<D> {
    inner: D,
    calls: Cell<usize>,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<S: Scalar, D: Denoiser<S>> Denoiser<S> for CountingDenoiser<D> {
    fn predict(&self, noisy: &Var<S>, condition: &Var<S>, t: &[usize]) -> Result<Var<S>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(noisy, condition, t)
    }

    fn coeff_dim(&self) -> usize {
        self.inner.coeff_dim()
    }
}

/// Clean sequences with their sampled steps and noise.
#[derive(Clone, Debug)]
pub struct DiffusionBatch<S> {
    pub clean: Array3<S>,
    pub t: Vec<usize>,
    pub noise: Array3<S>,
}

impl<S: Scalar> DiffusionBatch<S> {
    pub fn new(clean: Array3<S>, t: Vec<usize>, noise: Array3<S>, schedule: &NoiseSchedule) -> Result<Self> {
        if clean.shape() != noise.shape() {
            return Err(Error::Shape(format!("clean {:?} vs noise {:?}", clean.shape(), noise.shape())));
        }
        if t.len() != clean.shape()[0] {
            return Err(Error::Shape(format!("{} steps for a batch of {}", t.len(), clean.shape()[0])));
        }
        if let Some(bad) = t.iter().find(|&&s| s < 1 || s > schedule.steps()) {
            return Err(Error::Index(format!("diffusion step {bad} outside 1..={}", schedule.steps())));
        }
        Ok(Self { clean, t, noise })
    }

    /// The noised inputs `beta_t` for every item.
    pub fn noisy(&self, schedule: &NoiseSchedule) -> Result<Array3<S>> {
        let mut out = Array3::zeros(self.clean.raw_dim());
        for (b, &t) in self.t.iter().enumerate() {
            let c = self.clean.index_axis(Axis(0), b).to_owned().into_dyn();
            let n = self.noise.index_axis(Axis(0), b).to_owned().into_dyn();
            let x = q_sample(&c, t, schedule, &n)?;
            out.index_axis_mut(Axis(0), b).assign(&x.into_dimensionality::<ndarray::Ix2>().unwrap());
        }
        Ok(out)
    }
}

/// Stacks per-item fused conditions into a `(B, N, C)` constant.
pub fn stack_conditions<S: Scalar>(conditions: &[ConditionVector<S>]) -> Result<Array3<S>> {
    let first = conditions.first().ok_or_else(|| Error::Shape("no conditions supplied".into()))?.fused();
    let (n, c) = first.dim();
    let mut out = Array3::zeros((conditions.len(), n, c));
    for (b, cond) in conditions.iter().enumerate() {
        let f = cond.fused();
        if f.dim() != (n, c) {
            return Err(Error::Shape(format!("condition {b} has shape {:?}, expected {:?}", f.dim(), (n, c))));
        }
        out.index_axis_mut(Axis(0), b).assign(&f);
    }
    Ok(out)
}

/// Mean squared error between clean sequences and the denoiser's
/// predictions from their noised versions. Differentiable through the
/// denoiser's parameters.
pub fn training_loss<S: Scalar, D: Denoiser<S> + ?Sized>(
    denoiser: &D,
    batch: &DiffusionBatch<S>,
    conditions: &[ConditionVector<S>],
    schedule: &NoiseSchedule,
) -> Result<Var<S>> {
    if conditions.len() != batch.t.len() {
        return Err(Error::Shape(format!("{} conditions for a batch of {}", conditions.len(), batch.t.len())));
    }
    let noisy = Var::constant(batch.noisy(schedule)?.into_dyn());
    let cond = Var::constant(stack_conditions(conditions)?.into_dyn());
    let pred = denoiser.predict(&noisy, &cond, &batch.t)?;
    if pred.shape() != batch.clean.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match clean {:?}",
            pred.shape(),
            batch.clean.shape()
        )));
    }
    let clean = Var::constant(batch.clean.clone().into_dyn());
    Ok((&pred - &clean).square().mean())
}

/// Evenly spaced descending steps `ceil(k T / K)` for `k = K..=1`; always starts at `T`.
pub fn ddim_timesteps(total: usize, num_steps: usize) -> Result<Vec<usize>> {
    if num_steps < 1 || num_steps > total {
        return Err(Error::Config(format!("DDIM needs 1 <= steps <= T = {total}, got {num_steps}")));
    }
    Ok((1..=num_steps).rev().map(|k| (k * total).div_ceil(num_steps)).collect())
}

/// Draws `x_T ~ N(0, I)` and runs `num_steps` deterministic DDIM updates,
/// returning the final clean-sequence estimate `(N, D)`.
///
/// At each visited step `t` with successor `t'` (0 after the last):
/// `eps = (x_t - sqrt(abar_t) x0) / sqrt(1 - abar_t)` and
/// `x_t' = sqrt(abar_t') x0 + sqrt(1 - abar_t') eps`.
pub fn ddim_sample<S: Scalar, D: Denoiser<S> + ?Sized>(
    denoiser: &D,
    condition: &ConditionVector<S>,
    schedule: &NoiseSchedule,
    num_steps: usize,
    seed: u64,
) -> Result<Array2<S>> {
    let steps = ddim_timesteps(schedule.steps(), num_steps)?;
    let n = condition.num_frames();
    let d = denoiser.coeff_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = ArrayD::from_shape_fn(IxDyn(&[1, n, d]), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        S::c(z)
    });
    let cond = Var::constant(condition.fused().insert_axis(Axis(0)).into_dyn());
    let mut x0 = ArrayD::zeros(x.raw_dim());
    for (i, &t) in steps.iter().enumerate() {
        let pred = denoiser.predict(&Var::constant(x.clone()), &cond, &[t])?;
        if pred.shape() != x.shape() {
            return Err(Error::Shape(format!("denoiser returned {:?}, expected {:?}", pred.shape(), x.shape())));
        }
        x0 = pred.value().clone();
        if !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("denoiser produced non-finite values at step {t}")));
        }
        let next = steps.get(i + 1).copied().unwrap_or(0);
        let ab = schedule.alpha_bar(t)?;
        let ab_next = schedule.alpha_bar(next)?;
        let (sa, sn) = (S::c(ab.sqrt()), S::c((1.0 - ab).max(0.0).sqrt()));
        let (sa_next, sn_next) = (S::c(ab_next.sqrt()), S::c((1.0 - ab_next).max(0.0).sqrt()));
        ndarray::Zip::from(&mut x).and(&x0).for_each(|xv, &x0v| {
            let eps = if sn > S::zero() { (*xv - sa * x0v) / sn } else { S::zero() };
            *xv = sa_next * x0v + sn_next * eps;
        });
    }
    Ok(x0.index_axis_move(Axis(0), 0).into_dimensionality().unwrap())
}
