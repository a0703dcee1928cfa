//! Noise schedule, forward diffusion, and the deterministic sampler update.

use ndarray::ArrayD;

use crate::error::{Error, Result};

/// Variance schedule with cached cumulative products.
///
/// `alpha_bars[t]` is ᾱ after applying steps 0..=t; ᾱ before any noising
/// is 1 by convention and queried via [`NoiseSchedule::alpha_bar_before`].
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("empty beta schedule".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "beta[{i}] = {b} outside (0, 1)"
                )));
            }
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Linear β from `beta_start` to `beta_end` over `t_train` steps.
    pub fn linear(t_train: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        let betas = (0..t_train)
            .map(|i| {
                if t_train == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_train - 1) as f64
                }
            })
            .collect();
        Self::new(betas)
    }

    pub fn default_toy() -> Self {
        Self::linear(200, 1e-4, 0.02).unwrap()
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// ᾱ for the state preceding step `t` (1 at t = 0).
    pub fn alpha_bar_before(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε.
pub fn forward_diffuse(
    x0: &ArrayD<f64>,
    t: usize,
    eps: &ArrayD<f64>,
    schedule: &NoiseSchedule,
) -> Result<ArrayD<f64>> {
    if eps.shape() != x0.shape() {
        return Err(Error::shape("forward_diffuse", x0.shape(), eps.shape()));
    }
    if t >= schedule.len() {
        return Err(Error::InvalidArgument(format!(
            "step {t} out of range (T = {})",
            schedule.len()
        )));
    }
    Ok(diffuse_at(x0, eps, schedule.alpha_bar(t)))
}

/// The Eq. above with an explicit ᾱ, shared by the degenerate-ᾱ tests.
pub fn diffuse_at(x0: &ArrayD<f64>, eps: &ArrayD<f64>, alpha_bar: f64) -> ArrayD<f64> {
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    x0.mapv(|v| v * a) + &eps.mapv(|v| v * b)
}

/// Deterministic (η = 0) sampler update between two ᾱ levels:
/// x̂₀ = (x − √(1−ᾱ_t)·ε̂)/√ᾱ_t, then re-noise to ᾱ_prev with the same ε̂.
pub fn ddim_update(
    x: &ArrayD<f64>,
    eps_hat: &ArrayD<f64>,
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
) -> ArrayD<f64> {
    let at = alpha_bar_t.sqrt();
    let bt = (1.0 - alpha_bar_t).sqrt();
    let ap = alpha_bar_prev.sqrt();
    let bp = (1.0 - alpha_bar_prev).sqrt();
    let x0 = (x - &eps_hat.mapv(|v| v * bt)).mapv(|v| v / at);
    x0.mapv(|v| v * ap) + &eps_hat.mapv(|v| v * bp)
}

/// One sampler step from training-step `t` down to `t_prev`
/// (`None` means all the way to the clean image, ᾱ = 1).
pub fn ddim_step(
    x: &ArrayD<f64>,
    eps_hat: &ArrayD<f64>,
    t: usize,
    t_prev: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<ArrayD<f64>> {
    if eps_hat.shape() != x.shape() {
        return Err(Error::shape("ddim_step", x.shape(), eps_hat.shape()));
    }
    if t >= schedule.len() {
        return Err(Error::InvalidArgument(format!("step {t} out of range")));
    }
    let abar_prev = match t_prev {
        Some(p) => {
            if p >= t {
                return Err(Error::InvalidArgument(format!(
                    "t_prev = {p} must be below t = {t}"
                )));
            }
            schedule.alpha_bar(p)
        }
        None => 1.0,
    };
    Ok(ddim_update(x, eps_hat, schedule.alpha_bar(t), abar_prev))
}

/// Evenly spaced decreasing training-step indices for an `n`-step sampler.
pub fn inference_timesteps(t_train: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > t_train {
        return Err(Error::InvalidArgument(format!(
            "cannot take {n} inference steps from {t_train} training steps"
        )));
    }
    let stride = t_train as f64 / n as f64;
    let mut ts: Vec<usize> = (0..n).map(|i| (i as f64 * stride) as usize).collect();
    ts.reverse();
    ts.dedup();
    Ok(ts)
}
