//! Linear noise schedule, forward noising, the x0-prediction Chamfer
//! objective and the ancestral reverse sampler. Steps are 1-indexed:
//! `t ∈ 1..=T`, with `ᾱ_0 ≡ 1`.

use crate::error::{contract, Result};
use crate::{PointCloud, Scalar, SeededRng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(contract("diffusion steps must be at least 1"));
        }
        if !(self.beta_1 > 0.0 && self.beta_1 <= self.beta_t && self.beta_t < 1.0) {
            return Err(contract(format!(
                "need 0 < beta_1 ≤ beta_T < 1, got beta_1={} beta_T={}",
                self.beta_1, self.beta_t
            )));
        }
        Ok(())
    }
}

/// `β_t`, `α_t = 1 − β_t` and `ᾱ_t = Π_{i≤t} α_i`, held in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(cfg: &DiffusionConfig) -> Result<Self> {
        cfg.validate()?;
        let t = cfg.steps;
        let betas: Vec<f64> = if t == 1 {
            vec![cfg.beta_1]
        } else {
            (0..t)
                .map(|i| cfg.beta_1 + i as f64 / (t - 1) as f64 * (cfg.beta_t - cfg.beta_1))
                .collect()
        };
        Ok(Self::from_betas(betas))
    }

    pub fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut acc = 1.0;
        let alpha_bars = alphas
            .iter()
            .map(|a| {
                acc *= a;
                acc
            })
            .collect();
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(contract(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Coefficients of the posterior `q(x_{t−1} | x_t, x_0)`:
    /// `(coef_x0, coef_xt, variance)`.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check(t)?;
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let coef_xt = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
        Ok((coef_x0, coef_xt, var))
    }
}

/// Image-derived conditioning vector, one token wide.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionEmbedding<T>(pub Vec<T>);

impl<T: Scalar> ConditionEmbedding<T> {
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, self.0.len()], self.0.clone()).expect("non-empty condition")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A network predicting the clean cloud `x̂⁰` from `(x_t, t, c)`.
pub trait Denoiser<T: Scalar> {
    fn predict(
        &self,
        tape: &mut Tape<T>,
        xt: &PointCloud<T>,
        t: usize,
        cond: Var,
        train: bool,
        rng: &mut SeededRng,
    ) -> Result<Var>;
}

impl<T, F> Denoiser<T> for F
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &PointCloud<T>, usize, Var) -> Result<Var>,
{
    fn predict(
        &self,
        tape: &mut Tape<T>,
        xt: &PointCloud<T>,
        t: usize,
        cond: Var,
        _train: bool,
        _rng: &mut SeededRng,
    ) -> Result<Var> {
        self(tape, xt, t, cond)
    }
}

/// `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε`.
pub fn q_sample<T: Scalar>(x0: &PointCloud<T>, t: usize, eps: &[T], sched: &NoiseSchedule) -> Result<PointCloud<T>> {
    sched.check(t)?;
    if eps.len() != x0.flat().len() {
        return Err(contract(format!(
            "noise has {} values, cloud has {}",
            eps.len(),
            x0.flat().len()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    let data: Vec<T> = x0.flat().iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect();
    PointCloud::from_flat(&data)
}

/// Chamfer distance between the model's clean-cloud prediction from
/// `q_sample(x0, t, eps)` and `x0`.
#[allow(clippy::too_many_arguments)]
pub fn training_loss<T: Scalar, M: Denoiser<T> + ?Sized>(
    tape: &mut Tape<T>,
    model: &M,
    x0: &PointCloud<T>,
    t: usize,
    eps: &[T],
    cond: Var,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Var> {
    let xt = q_sample(x0, t, eps, sched)?;
    let pred = model.predict(tape, &xt, t, cond, true, rng)?;
    if tape.shape(pred) != [x0.len(), 3] {
        return Err(contract(format!(
            "prediction shape {:?} does not match target [{}, 3]",
            tape.shape(pred),
            x0.len()
        )));
    }
    let target = tape.constant(x0.to_tensor());
    tape.chamfer_l1(pred, target)
}

/// One ancestral step `x_t → x_{t−1}`; the final step (`t = 1`) returns the
/// posterior mean, which is exactly `x̂⁰`.
pub fn p_sample_step<T: Scalar>(
    xt: &PointCloud<T>,
    x0_hat: &PointCloud<T>,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<PointCloud<T>> {
    let (c0, ct, var) = sched.posterior(t)?;
    if xt.len() != x0_hat.len() {
        return Err(contract(format!(
            "x_t has {} points but prediction has {}",
            xt.len(),
            x0_hat.len()
        )));
    }
    if t == 1 {
        return Ok(x0_hat.clone());
    }
    let (c0, ct, sigma) = (T::of(c0), T::of(ct), T::of(var.sqrt()));
    let data: Vec<T> = x0_hat
        .flat()
        .iter()
        .zip(xt.flat())
        .map(|(&x0, &x)| c0 * x0 + ct * x + sigma * T::of(rng.normal()))
        .collect();
    PointCloud::from_flat(&data)
}

/// Runs the reverse chain from `x_T ~ N(0, I)` down to `x_0`.
pub fn sample<T: Scalar, M: Denoiser<T> + ?Sized>(
    model: &M,
    cond: &ConditionEmbedding<T>,
    n_points: usize,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<PointCloud<T>> {
    if n_points == 0 {
        return Err(contract("cannot sample an empty cloud"));
    }
    let mut x = PointCloud::from_flat(&rng.normal_vec::<T>(n_points * 3))?;
    for t in (1..=sched.steps()).rev() {
        let mut tape = Tape::new();
        let c = tape.constant(cond.to_tensor());
        let pred = model.predict(&mut tape, &x, t, c, false, rng)?;
        let x0_hat = PointCloud::from_tensor(tape.value(pred))?;
        x = p_sample_step(&x, &x0_hat, t, sched, rng)?;
    }
    Ok(x)
}
