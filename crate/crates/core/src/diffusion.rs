//! Noise schedule, forward noising and DDPM/DDIM update rules.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::nn::batch_scalars;
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const ALPHA_BAR_FLOOR: f64 = 1e-12;

/// `T` steps of linearly spaced betas from 1e-4 to 2e-2.
pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::config("diffusion needs at least one step"));
    }
    let ScheduleKind::Linear = kind;
    let (b0, b1) = (1e-4, 2e-2);
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                b0
            } else {
                b0 + (b1 - b0) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.steps() {
            return Err(Error::config(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// Descending inference grid `t_k = round(k T / n)`, `k = n..1`.
    pub fn sub_grid(&self, n: usize) -> Result<Vec<usize>> {
        if n < 1 || n > self.steps() {
            return Err(Error::config(format!(
                "cannot take {n} sampling steps from a {}-step schedule",
                self.steps()
            )));
        }
        let t = self.steps() as f64;
        Ok((1..=n)
            .rev()
            .map(|k| ((k as f64 * t / n as f64).round() as usize).max(1))
            .collect())
    }
}

/// `z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps` with one timestep per batch row.
pub fn q_sample(z0: &Tensor, ts: &[usize], eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    check_batch(z0, ts)?;
    let mut a = Vec::with_capacity(ts.len());
    let mut b = Vec::with_capacity(ts.len());
    for &t in ts {
        s.check(t)?;
        a.push(s.alpha_bar(t).sqrt());
        b.push((1.0 - s.alpha_bar(t)).sqrt());
    }
    let rank = z0.rank();
    Ok((z0.broadcast_mul(&batch_scalars(&a, rank)?)? + eps.broadcast_mul(&batch_scalars(&b, rank)?)?)?)
}

fn check_batch(z: &Tensor, ts: &[usize]) -> Result<()> {
    if z.dim(0)? != ts.len() {
        return Err(Error::shape(format!("{} timesteps for batch {}", ts.len(), z.dim(0)?)));
    }
    Ok(())
}

/// `z0_hat = (z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)` at a shared timestep.
pub fn predict_clean(z_t: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check(t)?;
    let ab = s.alpha_bar(t);
    if ab < ALPHA_BAR_FLOOR {
        return Err(Error::Numeric(format!("alpha_bar_{t} = {ab:e} is too small to invert")));
    }
    Ok(((z_t - (eps * (1.0 - ab).sqrt())?)? / ab.sqrt())?)
}

/// Deterministic DDIM update `t -> t_prev` (`eta = 0`).
pub fn ddim_step(z_t: &Tensor, t: usize, t_prev: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    if t_prev >= t {
        return Err(Error::config(format!("DDIM step must go down in time, got {t} -> {t_prev}")));
    }
    let z0 = predict_clean(z_t, t, eps, s)?;
    let ab = s.alpha_bar(t_prev);
    Ok(((z0 * ab.sqrt())? + (eps * (1.0 - ab).sqrt())?)?)
}

/// Stochastic DDIM update with `eta > 0`; `eta = 1` matches DDPM variance on the sub-grid.
pub fn ddim_step_eta(
    z_t: &Tensor,
    t: usize,
    t_prev: usize,
    eps: &Tensor,
    eta: f64,
    s: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Tensor> {
    if eta == 0.0 {
        return ddim_step(z_t, t, t_prev, eps, s);
    }
    if t_prev >= t {
        return Err(Error::config(format!("DDIM step must go down in time, got {t} -> {t_prev}")));
    }
    let z0 = predict_clean(z_t, t, eps, s)?;
    let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t_prev));
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let noise = rng::normal_tensor(rng, z_t.shape().clone())?;
    Ok(((z0 * ab_prev.sqrt())? + (eps * dir)? + (noise * sigma)?)?)
}

/// Ancestral DDPM update `t -> t-1`.
pub fn ddpm_step(z_t: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule, rng: &mut Rng) -> Result<Tensor> {
    s.check(t)?;
    let beta = s.beta(t);
    let ab = s.alpha_bar(t);
    let alpha = 1.0 - beta;
    let mean = ((z_t - (eps * (beta / (1.0 - ab).sqrt()))?)? / alpha.sqrt())?;
    if t == 1 {
        return Ok(mean);
    }
    let var = beta * (1.0 - s.alpha_bar(t - 1)) / (1.0 - ab);
    let noise = rng::normal_tensor(rng, z_t.shape().clone())?;
    Ok((mean + (noise * var.sqrt())?)?)
}

/// Deterministic DDIM inversion `t -> t_next` using the noise predicted at
/// `t_next` for the current state.
pub fn ddim_invert_step(z: &Tensor, t: usize, t_next: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    if t_next <= t {
        return Err(Error::config(format!("inversion must go up in time, got {t} -> {t_next}")));
    }
    let (ab, ab_next) = (s.alpha_bar(t), s.alpha_bar(t_next));
    let z0 = ((z - (eps * (1.0 - ab).sqrt())?)? / ab.sqrt())?;
    Ok(((z0 * ab_next.sqrt())? + (eps * (1.0 - ab_next).sqrt())?)?)
}
