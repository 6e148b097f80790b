//! Two-part classifier-free guidance and classifier-based style guidance.

use std::path::Path;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::control::predict_eps_styled;
use crate::denoiser::{Conditioning, Denoiser};
use crate::diffusion::{predict_clean, NoiseSchedule};
use crate::pipeline::StyleModel;
use crate::style::Classifier;
use crate::vae::Vae;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Ddim,
    /// Ancestral sampling on the same sub-grid (DDIM with eta = 1).
    Ddpm,
}

/// How `tau` enters the noise correction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceSign {
    /// `eps' = eps - tau * grad G`: negative `tau` lowers the style distance.
    #[default]
    Descent,
    /// `eps' = eps + tau * grad G`.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub w_c: f64,
    pub w_s: f64,
    pub tau: f64,
    pub steps: usize,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default = "yes")]
    pub content_cfg: bool,
    #[serde(default = "yes")]
    pub style_cfg: bool,
    #[serde(default = "yes")]
    pub classifier: bool,
    /// L2 clip on the style-distance gradient.
    #[serde(default)]
    pub clip: Option<f64>,
    /// Differentiate through the noise prediction as well.
    #[serde(default)]
    pub full_grad: bool,
    /// Number of gradient corrections per step.
    #[serde(default = "one")]
    pub iterations: usize,
    #[serde(default)]
    pub sign: GuidanceSign,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl GuidanceConfig {
    pub fn generation() -> Self {
        Self {
            w_c: 15.0,
            w_s: 1.6,
            tau: -0.2,
            steps: 50,
            sampler: SamplerKind::Ddim,
            content_cfg: true,
            style_cfg: true,
            classifier: true,
            clip: None,
            full_grad: false,
            iterations: 1,
            sign: GuidanceSign::Descent,
        }
    }

    pub fn transfer() -> Self {
        Self {
            steps: 30,
            w_s: 6.5,
            tau: -0.4,
            ..Self::generation()
        }
    }

    /// Weights for desk-scale models: a mini base trained on a few texts
    /// over-amplifies its content direction at `w_c = 15`, and the
    /// unclipped style gradient grows like `1 / sqrt(alpha_bar)` at high noise.
    pub fn mini() -> Self {
        Self {
            w_c: 2.0,
            w_s: 2.0,
            clip: Some(10.0),
            ..Self::generation()
        }
    }

    pub fn unguided(steps: usize) -> Self {
        Self {
            w_c: 0.0,
            w_s: 0.0,
            tau: 0.0,
            steps,
            content_cfg: false,
            style_cfg: false,
            classifier: false,
            ..Self::generation()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_c", self.w_c), ("w_s", self.w_s), ("tau", self.tau)] {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        if self.steps == 0 {
            return Err(Error::config("guidance needs at least one sampling step"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::config("clip must be positive"));
            }
        }
        Ok(())
    }

    /// Effective content weight (0 when the term is disabled).
    pub fn content_weight(&self) -> f64 {
        if self.content_cfg {
            self.w_c
        } else {
            0.0
        }
    }

    pub fn style_weight(&self) -> f64 {
        if self.style_cfg {
            self.w_s
        } else {
            0.0
        }
    }

    pub fn classifier_strength(&self) -> f64 {
        if self.classifier {
            self.tau
        } else {
            0.0
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `e_uu + w_c (e_cu - e_uu) + w_s (e_cs - e_cu)`.
pub fn cfg_combine(e_uu: &Tensor, e_cu: &Tensor, e_cs: &Tensor, w_c: f64, w_s: f64) -> Result<Tensor> {
    if e_uu.dims() != e_cu.dims() || e_cu.dims() != e_cs.dims() {
        return Err(Error::shape("guidance inputs differ in shape"));
    }
    // Rearranged around e_cs so both w = 1 and equal branches are exact.
    let style = ((e_cs - e_cu)? * (w_s - 1.0))?;
    let content = ((e_cu - e_uu)? * (w_c - 1.0))?;
    Ok(((e_cs + style)? + content)?)
}

/// Models used while sampling.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub base: &'a Denoiser,
    pub style: Option<&'a StyleModel>,
    pub vae: &'a Vae,
    pub classifier: Option<&'a Classifier>,
    pub schedule: &'a NoiseSchedule,
}

/// Per-batch conditioning for one sampling run.
#[derive(Clone, Debug)]
pub struct StepCondition<'a> {
    pub texts: &'a [Option<&'a str>],
    /// `[B, style_dim]`, when a style signal is present.
    pub style_emb: Option<&'a Tensor>,
    /// `[B, d_f]` classifier features of the style references.
    pub ref_features: Option<&'a Tensor>,
    pub frames: usize,
}

/// The three guidance branches; absent ones are never evaluated.
pub struct Branches {
    pub e_uu: Tensor,
    pub e_cu: Option<Tensor>,
    pub e_cs: Option<Tensor>,
}

pub fn branches(m: &Models, z_t: &Tensor, t: usize, cond: &StepCondition, w_c: f64, w_s: f64) -> Result<Branches> {
    let b = z_t.dim(0)?;
    let ts = vec![t; b];
    let styled = w_s != 0.0 && cond.style_emb.is_some();
    let need_cu = w_c != 0.0 || styled;
    let nulls: Vec<Option<&str>> = vec![None; b];
    let (e_uu, e_cu) = if need_cu {
        // Both base branches in one batch.
        let mut texts = nulls.clone();
        texts.extend_from_slice(cond.texts);
        let z2 = Tensor::cat(&[z_t, z_t], 0)?;
        let e = m.base.forward(&z2, &[ts.clone(), ts.clone()].concat(), &texts)?;
        (e.narrow(0, 0, b)?, Some(e.narrow(0, b, b)?))
    } else {
        (m.base.forward(z_t, &ts, &nulls)?, None)
    };
    let e_cs = if styled {
        let style = m
            .style
            .ok_or_else(|| Error::config("a style signal needs a trained style network"))?;
        let c = m.base.conditioning(&ts, cond.texts)?;
        Some(style.eps(m.base, z_t, &c, cond.style_emb.unwrap())?)
    } else {
        None
    };
    Ok(Branches { e_uu, e_cu, e_cs })
}

/// Combined classifier-free prediction.
pub fn cfg_eps(m: &Models, z_t: &Tensor, t: usize, cond: &StepCondition, cfg: &GuidanceConfig) -> Result<Tensor> {
    let (w_c, w_s) = (cfg.content_weight(), cfg.style_weight());
    let br = branches(m, z_t, t, cond, w_c, w_s)?;
    match (&br.e_cu, &br.e_cs) {
        (None, _) => Ok(br.e_uu),
        (Some(cu), None) => cfg_combine(&br.e_uu, cu, cu, w_c, 0.0),
        (Some(cu), Some(cs)) => cfg_combine(&br.e_uu, cu, cs, w_c, w_s),
    }
}

/// Style distance of the predicted clean motion: per-sample
/// `|f(decode(z0_hat)) - f_ref|_1` and its gradient with respect to `z_t`.
///
/// With `full_grad` the noise prediction is recomputed inside the graph;
/// otherwise `eps` is a constant.
pub fn style_distance(
    m: &Models,
    z_t: &Tensor,
    t: usize,
    eps: &Tensor,
    cond: &StepCondition,
    cfg: &GuidanceConfig,
) -> Result<(Vec<f64>, Tensor)> {
    let clf = m
        .classifier
        .ok_or_else(|| Error::config("classifier guidance needs a style classifier"))?;
    let reference = cond
        .ref_features
        .ok_or_else(|| Error::config("classifier guidance needs reference style features"))?;
    let var = Var::from_tensor(&z_t.detach())?;
    let z = var.as_tensor();
    let eps = if cfg.full_grad {
        cfg_eps(m, z, t, cond, cfg)?
    } else {
        eps.detach()
    };
    let z0 = predict_clean(z, t, &eps, m.schedule)?;
    let g = distance_of_clean(m, clf, &z0, reference, cond.frames)?;
    let per_sample = g.to_vec1::<f64>()?;
    if per_sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite style distance at t={t}")));
    }
    let grads = g.sum_all()?.backward()?;
    let grad = grads
        .get(z)
        .cloned()
        .unwrap_or(z.zeros_like()?);
    Ok((per_sample, grad.detach()))
}

/// Per-sample L1 feature distance for whitened clean latents.
pub fn distance_of_clean(m: &Models, clf: &Classifier, z0: &Tensor, reference: &Tensor, frames: usize) -> Result<Tensor> {
    let z = m.base.config.latent_norm.unwhiten(z0)?;
    let (mean, std) = m.vae.stats.tensors()?;
    let x = m.vae.decode(&z, frames)?.broadcast_mul(&std)?.broadcast_add(&mean)?;
    let f = clf.features(&x)?;
    Ok((f - reference)?.abs()?.sum(1)?)
}

/// `eps' = eps -/+ tau * grad`, with the gradient clipped to L2 norm `clip` per sample.
pub fn apply_classifier_guidance(
    eps: &Tensor,
    grad: &Tensor,
    tau: f64,
    clip: Option<f64>,
    sign: GuidanceSign,
) -> Result<Tensor> {
    if tau == 0.0 {
        return Ok(eps.clone());
    }
    let grad = match clip {
        Some(c) => {
            let b = grad.dim(0)?;
            let flat = grad.reshape((b, ()))?;
            let norms = flat.sqr()?.sum_keepdim(1)?.sqrt()?.to_vec2::<f64>()?;
            let scales: Vec<f64> = norms.iter().map(|n| if n[0] > c { c / n[0] } else { 1.0 }).collect();
            grad.broadcast_mul(&crate::nn::batch_scalars(&scales, grad.rank())?)?
        }
        None => grad.clone(),
    };
    let k = match sign {
        GuidanceSign::Descent => -tau,
        GuidanceSign::Literal => tau,
    };
    Ok((eps + (grad * k)?)?)
}

/// Final guided noise prediction for one step.
pub fn guided_eps(m: &Models, z_t: &Tensor, t: usize, cond: &StepCondition, cfg: &GuidanceConfig) -> Result<Tensor> {
    let mut eps = cfg_eps(m, z_t, t, cond, cfg)?;
    let tau = cfg.classifier_strength();
    if tau == 0.0 || cond.ref_features.is_none() || m.classifier.is_none() {
        return Ok(eps);
    }
    for _ in 0..cfg.iterations.max(1) {
        let (_, grad) = style_distance(m, z_t, t, &eps, cond, cfg)?;
        eps = apply_classifier_guidance(&eps, &grad, tau, cfg.clip, cfg.sign)?;
    }
    Ok(eps)
}

impl StyleModel {
    pub fn eps(&self, base: &Denoiser, z_t: &Tensor, c: &Conditioning, style_emb: &Tensor) -> Result<Tensor> {
        predict_eps_styled(base, &self.net, z_t, c, style_emb)
    }
}
