//! Trained-model bundle, style signals, sampling, DDIM inversion and style transfer.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::control::{StyleNet, StyleNetConfig, Variant};
use crate::denoiser::Denoiser;
use crate::diffusion::{ddim_invert_step, ddim_step, ddim_step_eta, NoiseSchedule};
use crate::guidance::{guided_eps, GuidanceConfig, Models, SamplerKind, StepCondition};
use crate::motion::{MotionSequence, NormStats};
use crate::nn::{ParamStore, Params};
use crate::rng::{self, Rng};
use crate::style::{Adaptor, Classifier, SemanticEmbedding, StyleEncoderConfig, StyleMotionEncoder};
use crate::vae::Vae;
use crate::{Error, Result};

/// Metadata stored with a style-network checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleCheckpoint {
    pub net: StyleNetConfig,
    pub encoder: StyleEncoderConfig,
    pub stats: NormStats,
    pub base_hash: String,
    pub vae_hash: String,
    #[serde(default)]
    pub training: serde_json::Value,
}

/// Style network, fusion stack and style motion encoder.
#[derive(Clone, Debug)]
pub struct StyleModel {
    pub net: StyleNet,
    pub encoder: StyleMotionEncoder,
    pub meta: StyleCheckpoint,
    params: Params,
}

impl StyleModel {
    pub fn new(meta: StyleCheckpoint, p: &Params) -> Result<Self> {
        Ok(Self {
            net: StyleNet::new(meta.net.clone(), &p.pp("net"))?,
            encoder: StyleMotionEncoder::new(meta.encoder.clone(), &p.pp("encoder"))?,
            meta,
            params: p.clone(),
        })
    }

    pub fn params(&self) -> ParamStore {
        self.params.store()
    }

    pub fn variant(&self) -> Variant {
        self.meta.net.variant
    }

    /// Style embeddings `[B, style_dim]` of raw motions.
    pub fn embed_motions(&self, seqs: &[&MotionSequence]) -> Result<Tensor> {
        let normed: Vec<MotionSequence> = seqs.iter().map(|s| self.meta.stats.normalize(s)).collect::<Result<_>>()?;
        let x = MotionSequence::stack(&normed.iter().collect::<Vec<_>>())?;
        self.encoder.forward(&x, None)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, checkpoint::STYLENET, &self.meta, &self.params())
    }

    /// Loads a frozen style model; `variant`, when given, must match the checkpoint.
    pub fn load(path: &Path, variant: Option<Variant>) -> Result<Self> {
        let loaded = checkpoint::load::<StyleCheckpoint>(path, checkpoint::STYLENET)?;
        if let Some(v) = variant {
            if v != loaded.config.net.variant {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!(
                        "checkpoint holds variant {}, variant {} was requested",
                        loaded.config.net.variant.tag(),
                        v.tag()
                    ),
                });
            }
        }
        Self::new(loaded.config, &Params::from_tensors(loaded.tensors, false))
    }
}

/// Style control for one generation.
#[derive(Clone, Debug)]
pub enum StyleSignal {
    /// Reference style motion (raw features).
    Motion(MotionSequence),
    /// External text or image embedding, mapped through the adaptor.
    Embedding(SemanticEmbedding),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundlePaths {
    pub vae: PathBuf,
    pub denoiser: PathBuf,
    #[serde(default)]
    pub style: Option<PathBuf>,
    #[serde(default)]
    pub classifier: Option<PathBuf>,
    #[serde(default)]
    pub adaptor: Option<PathBuf>,
}

pub struct Bundle {
    pub vae: Vae,
    pub base: Denoiser,
    pub style: Option<StyleModel>,
    pub classifier: Option<Classifier>,
    pub adaptor: Option<Adaptor>,
    pub schedule: NoiseSchedule,
}

impl Bundle {
    pub fn new(vae: Vae, base: Denoiser) -> Result<Self> {
        if vae.latent_shape() != (base.config.n_z, base.config.d_z) {
            return Err(Error::config("denoiser latent shape does not match the VAE"));
        }
        let schedule = base.config.schedule()?;
        Ok(Self {
            vae,
            base,
            style: None,
            classifier: None,
            adaptor: None,
            schedule,
        })
    }

    pub fn load(paths: &BundlePaths, variant: Option<Variant>) -> Result<Self> {
        let (vae, _) = Vae::load(&paths.vae)?;
        let mut b = Self::new(vae, Denoiser::load(&paths.denoiser)?)?;
        if let Some(p) = &paths.style {
            let style = StyleModel::load(p, variant)?;
            style.net.check_compatible(&b.base)?;
            b.style = Some(style);
        }
        if let Some(p) = &paths.classifier {
            b.classifier = Some(Classifier::load(p)?);
        }
        if let Some(p) = &paths.adaptor {
            b.adaptor = Some(Adaptor::load(p)?);
        }
        Ok(b)
    }

    pub fn models(&self) -> Models<'_> {
        Models {
            base: &self.base,
            style: self.style.as_ref(),
            vae: &self.vae,
            classifier: self.classifier.as_ref(),
            schedule: &self.schedule,
        }
    }

    /// Style embeddings and, for motion references, classifier reference features.
    pub fn resolve_styles(&self, signals: &[&StyleSignal]) -> Result<(Tensor, Option<Tensor>)> {
        let style = self
            .style
            .as_ref()
            .ok_or_else(|| Error::config("style control needs a trained style network"))?;
        let mut rows = Vec::with_capacity(signals.len());
        let mut refs = Vec::new();
        for s in signals {
            match s {
                StyleSignal::Motion(m) => {
                    rows.push(style.embed_motions(&[m])?);
                    refs.push(m);
                }
                StyleSignal::Embedding(e) => {
                    let adaptor = self
                        .adaptor
                        .as_ref()
                        .ok_or_else(|| Error::config("embedding style control needs a trained adaptor"))?;
                    rows.push(adaptor.adapt(e)?);
                }
            }
        }
        let emb = Tensor::cat(&rows, 0)?;
        let features = match (&self.classifier, refs.len() == signals.len()) {
            (Some(clf), true) => Some(clf.features_of(&refs)?),
            _ => None,
        };
        Ok((emb, features))
    }

    /// Whitened posterior-mean latents of raw motions.
    pub fn encode_latents(&self, seqs: &[&MotionSequence]) -> Result<Tensor> {
        self.base.config.latent_norm.whiten(&self.vae.encode_motions(seqs)?)
    }

    /// Raw motions from whitened latents, contacts snapped to {0, 1}.
    pub fn decode_latents(&self, z: &Tensor, frames: usize) -> Result<Vec<MotionSequence>> {
        let z = self.base.config.latent_norm.unwhiten(z)?;
        let mut out = self.vae.decode_motions(&z, frames)?;
        for m in &mut out {
            m.binarize_contacts()?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SampleRequest {
    pub text: Option<String>,
    pub style: Option<StyleSignal>,
}

/// Conditioning prepared for a batch of requests.
pub struct Prepared {
    pub texts: Vec<Option<String>>,
    pub style_emb: Option<Tensor>,
    pub ref_features: Option<Tensor>,
}

pub fn prepare(bundle: &Bundle, requests: &[SampleRequest]) -> Result<Prepared> {
    let texts = requests.iter().map(|r| r.text.clone()).collect();
    let signals: Vec<&StyleSignal> = requests.iter().filter_map(|r| r.style.as_ref()).collect();
    let (style_emb, ref_features) = if signals.is_empty() {
        (None, None)
    } else if signals.len() == requests.len() {
        let (e, f) = bundle.resolve_styles(&signals)?;
        (Some(e), f)
    } else {
        return Err(Error::config("either every request in a batch has a style signal or none does"));
    };
    Ok(Prepared {
        texts,
        style_emb,
        ref_features,
    })
}

/// Guided reverse process from `z_start` at the top of the `cfg.steps` grid
/// (or from the given `grid`) down to a clean whitened latent.
pub fn denoise(
    m: &Models,
    prepared: &Prepared,
    z_start: &Tensor,
    grid: &[usize],
    cfg: &GuidanceConfig,
    frames: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    let texts: Vec<Option<&str>> = prepared.texts.iter().map(|t| t.as_deref()).collect();
    let cond = StepCondition {
        texts: &texts,
        style_emb: prepared.style_emb.as_ref(),
        ref_features: prepared.ref_features.as_ref(),
        frames,
    };
    let mut z = z_start.clone();
    for (k, &t) in grid.iter().enumerate() {
        let t_prev = grid.get(k + 1).copied().unwrap_or(0);
        let eps = guided_eps(m, &z, t, &cond, cfg)?;
        z = match cfg.sampler {
            SamplerKind::Ddim => ddim_step(&z, t, t_prev, &eps, m.schedule)?,
            SamplerKind::Ddpm => ddim_step_eta(&z, t, t_prev, &eps, 1.0, m.schedule, rng)?,
        };
    }
    Ok(z)
}

/// Samples motions for a batch of requests.
pub fn sample(
    bundle: &Bundle,
    requests: &[SampleRequest],
    cfg: &GuidanceConfig,
    frames: usize,
    rng: &mut Rng,
) -> Result<Vec<MotionSequence>> {
    let (n, d) = bundle.vae.latent_shape();
    let z_t = rng::normal_tensor(rng, (requests.len(), n, d))?;
    sample_from(bundle, requests, &z_t, cfg, frames, rng)
}

/// Like [`sample`], starting from the given initial noise `[B, n_z, d_z]`.
pub fn sample_from(
    bundle: &Bundle,
    requests: &[SampleRequest],
    z_t: &Tensor,
    cfg: &GuidanceConfig,
    frames: usize,
    rng: &mut Rng,
) -> Result<Vec<MotionSequence>> {
    cfg.validate()?;
    if z_t.dim(0)? != requests.len() {
        return Err(Error::shape("initial noise batch differs from the request count"));
    }
    let prepared = prepare(bundle, requests)?;
    let grid = bundle.schedule.sub_grid(cfg.steps)?;
    let z0 = denoise(&bundle.models(), &prepared, z_t, &grid, cfg, frames, rng)?;
    bundle.decode_latents(&z0, frames)
}

/// Deterministic DDIM inversion of whitened latents over the `steps` grid
/// with the base network only (no style, no guidance). `refine` extra
/// fixed-point iterations per step re-evaluate the noise at the new point.
pub fn ddim_invert(
    base: &Denoiser,
    schedule: &NoiseSchedule,
    z0: &Tensor,
    steps: usize,
    texts: &[Option<&str>],
    refine: usize,
) -> Result<Tensor> {
    if steps == 0 {
        return Ok(z0.clone());
    }
    let mut grid = schedule.sub_grid(steps)?;
    grid.reverse();
    let b = z0.dim(0)?;
    let mut z = z0.clone();
    let mut t = 0;
    for &t_next in &grid {
        let ts = vec![t_next; b];
        let eps = base.forward(&z, &ts, texts)?;
        let mut z_next = ddim_invert_step(&z, t, t_next, &eps, schedule)?;
        for _ in 0..refine {
            let eps = base.forward(&z_next, &ts, texts)?;
            z_next = ddim_invert_step(&z, t, t_next, &eps, schedule)?;
        }
        z = z_next;
        t = t_next;
    }
    Ok(z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub guidance: GuidanceConfig,
    /// Inversion steps; defaults to the guidance step count.
    #[serde(default)]
    pub inversion_steps: Option<usize>,
    /// Fixed-point refinements per inversion step.
    #[serde(default = "default_refine")]
    pub refine: usize,
}

/// Plain inversion evaluates the noise at the start of each step and drifts;
/// two refinements bring the invert-denoise round trip under 1e-2.
pub const DEFAULT_REFINE: usize = 2;

fn default_refine() -> usize {
    DEFAULT_REFINE
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::transfer(),
            inversion_steps: None,
            refine: DEFAULT_REFINE,
        }
    }
}

/// Re-renders `content` in the style of `style`: DDIM inversion of the
/// content latent, then guided denoising on the same grid.
pub fn transfer(
    bundle: &Bundle,
    content: &MotionSequence,
    content_text: Option<&str>,
    style: StyleSignal,
    cfg: &TransferConfig,
    rng: &mut Rng,
) -> Result<MotionSequence> {
    cfg.guidance.validate()?;
    let steps = cfg.inversion_steps.unwrap_or(cfg.guidance.steps);
    let frames = content.frames();
    let z0 = bundle.encode_latents(&[content])?;
    let z_inv = ddim_invert(&bundle.base, &bundle.schedule, &z0, steps, &[content_text], cfg.refine)?;
    let z = if steps == 0 {
        z_inv
    } else {
        let prepared = prepare(
            bundle,
            &[SampleRequest {
                text: content_text.map(str::to_string),
                style: Some(style),
            }],
        )?;
        let grid = bundle.schedule.sub_grid(steps)?;
        denoise(&bundle.models(), &prepared, &z_inv, &grid, &cfg.guidance, frames, rng)?
    };
    Ok(bundle.decode_latents(&z, frames)?.remove(0))
}
