//! Base denoiser training and style-network training against a frozen base.

use std::io::Write;
use std::path::Path;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::control::{Placement, StyleNetConfig, Variant};
use crate::denoiser::{Denoiser, DenoiserConfig, LatentNorm};
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::motion::dataset::{Dataset, Split};
use crate::motion::MotionSequence;
use crate::nn::{build_vocab, Params};
use crate::pipeline::{StyleCheckpoint, StyleModel};
use crate::rng::{self, Rng};
use crate::style::{frame_mask, StyleEncoderConfig};
use crate::vae::Vae;
use crate::{Error, Result};

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

/// Mean squared error between predicted and true noise.
pub fn eps_mse(pred: &Tensor, eps: &Tensor) -> Result<Tensor> {
    Ok((pred - eps)?.sqr()?.mean_all()?)
}

/// Uniform timesteps in `1..=T`.
pub fn sample_timesteps(rng: &mut Rng, batch: usize, schedule: &NoiseSchedule) -> Vec<usize> {
    (0..batch).map(|_| 1 + rng::index(rng, schedule.steps())).collect()
}

/// Replaces each text by the null condition with probability `p_null`.
pub fn drop_texts(texts: &[Option<String>], p_null: f64, rng: &mut Rng) -> Vec<Option<String>> {
    texts
        .iter()
        .map(|t| if rng::bernoulli(rng, p_null) { None } else { t.clone() })
        .collect()
}

/// Whitened posterior-mean latents of raw motions, encoded in chunks.
pub fn encode_all(vae: &Vae, norm: &LatentNorm, motions: &[&MotionSequence]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(motions.len());
    for chunk in motions.chunks(64) {
        let z = norm.whiten(&vae.encode_motions(chunk)?)?;
        for i in 0..chunk.len() {
            out.push(z.get(i)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BaseTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub p_null: f64,
    pub seed: u64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            lr: 1e-3,
            p_null: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Trains the text-conditioned denoiser on the training split of `content`.
pub fn train_base(content: &Dataset, vae: &Vae, config: &BaseTrainConfig) -> Result<(Denoiser, Vec<BaseEpoch>)> {
    check_prob("p_null", config.p_null)?;
    let train = content.indices(Split::Train, &[]);
    if train.is_empty() {
        return Err(Error::Dataset("base training needs a non-empty training split".into()));
    }
    let motions: Vec<&MotionSequence> = train.iter().map(|&i| &content.motions[i]).collect();
    let (n_z, d_z) = vae.latent_shape();
    let raw = Tensor::stack(&encode_all(vae, &LatentNorm::identity(n_z * d_z), &motions)?, 0)?;
    let norm = LatentNorm::fit(&raw)?;
    let latents = norm.whiten(&raw)?;
    let vocab = build_vocab(content.manifest.content_texts.iter().map(String::as_str));
    let mut arch = DenoiserConfig::mini(n_z, d_z, vocab);
    arch.latent_norm = norm;
    let params = Params::fresh(config.seed);
    let base = Denoiser::new(arch, &params)?;
    let schedule = base.config.schedule()?;
    let texts: Vec<Option<String>> = train.iter().map(|&i| Some(content.manifest.entries[i].content_text.clone())).collect();

    let mut opt = AdamW::new(
        params.store().vars(),
        ParamsAdamW {
            lr: config.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = rng::substream(config.seed, 1);
    let bs = config.batch_size.max(1);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = rng::permutation(&mut rng, train.len());
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in order.chunks(bs) {
            let idx = Tensor::new(chunk.iter().map(|&i| i as u32).collect::<Vec<_>>(), latents.device())?;
            let z0 = latents.index_select(&idx, 0)?;
            let batch_texts: Vec<Option<String>> = chunk.iter().map(|&i| texts[i].clone()).collect();
            let dropped = drop_texts(&batch_texts, config.p_null, &mut rng);
            let refs: Vec<Option<&str>> = dropped.iter().map(|t| t.as_deref()).collect();
            let ts = sample_timesteps(&mut rng, chunk.len(), &schedule);
            let eps = rng::normal_tensor(&mut rng, z0.shape().clone())?;
            let z_t = q_sample(&z0, &ts, &eps, &schedule)?;
            let loss = eps_mse(&base.forward(&z_t, &ts, &refs)?, &eps)?;
            opt.backward_step(&loss)?;
            sum += loss.to_scalar::<f64>()? * chunk.len() as f64;
            n += chunk.len();
        }
        let loss = sum / n as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("base loss diverged at epoch {epoch}")));
        }
        log::debug!("base epoch {epoch}: loss {loss:.5}");
        log.push(BaseEpoch {
            epoch,
            loss,
            lr: config.lr,
        });
    }
    Ok((base, log))
}

/// Which motion serves as the style reference of a style-dataset sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum StyleReference {
    /// The target motion itself.
    SelfMotion,
    /// Another training motion of the same style, drawn at random.
    SameStyle,
    /// A motion of the same style but a different content (any same-style
    /// motion when none exists), so content can only come from the text.
    #[default]
    OtherContent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StyleTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub lambda_pr: f64,
    pub mask_fraction: f64,
    #[serde(default = "default_true")]
    pub contiguous_mask: bool,
    pub p_null: f64,
    pub seed: u64,
    pub variant: Variant,
    #[serde(default)]
    pub placement: Placement,
    pub style_dim: usize,
    #[serde(default)]
    pub reference: StyleReference,
    /// Style groups left out of training.
    #[serde(default)]
    pub exclude_groups: Vec<String>,
}

fn default_weight_decay() -> f64 {
    0.01
}

fn default_true() -> bool {
    true
}

impl StyleTrainConfig {
    pub fn mini(variant: Variant) -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: default_weight_decay(),
            lambda_pr: 1.0,
            mask_fraction: 0.1,
            contiguous_mask: true,
            p_null: 0.1,
            seed: 0,
            variant,
            placement: Placement::PreBlock,
            style_dim: 16,
            reference: StyleReference::OtherContent,
            exclude_groups: Vec::new(),
        }
    }

    pub fn full(variant: Variant) -> Self {
        Self {
            epochs: 600,
            batch_size: 256,
            lr: 1e-5,
            ..Self::mini(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("p_null", self.p_null)?;
        check_prob("mask_fraction", self.mask_fraction)?;
        if self.lambda_pr < 0.0 || !self.lambda_pr.is_finite() {
            return Err(Error::config("lambda_pr must be non-negative"));
        }
        if self.lr < 0.0 || self.batch_size == 0 || self.style_dim == 0 {
            return Err(Error::config("need lr >= 0, batch_size > 0 and style_dim > 0"));
        }
        Ok(())
    }
}

/// One training batch for the style network.
#[derive(Clone, Debug)]
pub struct StyleBatch {
    /// Whitened clean latents `[B, n_z, d_z]`.
    pub z0: Tensor,
    pub texts: Vec<Option<String>>,
    /// Normalized style reference motions `[B, L, D]`.
    pub style_x: Tensor,
    /// `[B, L]`, ones on hidden frames.
    pub mask: Option<Tensor>,
}

/// Null-text dropout plus temporal masking of the style reference.
pub fn condition_dropout(batch: &StyleBatch, p_null: f64, mask_fraction: f64, contiguous: bool, rng: &mut Rng) -> Result<StyleBatch> {
    check_prob("p_null", p_null)?;
    check_prob("mask_fraction", mask_fraction)?;
    let texts = drop_texts(&batch.texts, p_null, rng);
    let mask = if mask_fraction > 0.0 {
        let (b, l, _) = batch.style_x.dims3()?;
        Some(frame_mask(b, l, mask_fraction, contiguous, rng)?)
    } else {
        batch.mask.clone()
    };
    Ok(StyleBatch {
        texts,
        mask,
        ..batch.clone()
    })
}

/// Noise-prediction MSE of the styled network at explicit `ts` and `eps`.
pub fn styled_noise_loss(
    base: &Denoiser,
    style: &StyleModel,
    schedule: &NoiseSchedule,
    batch: &StyleBatch,
    ts: &[usize],
    eps: &Tensor,
) -> Result<Tensor> {
    let z_t = q_sample(&batch.z0, ts, eps, schedule)?;
    let texts: Vec<Option<&str>> = batch.texts.iter().map(|t| t.as_deref()).collect();
    let c = base.conditioning(ts, &texts)?;
    let s = style.encoder.forward(&batch.style_x, batch.mask.as_ref())?;
    eps_mse(&style.eps(base, &z_t, &c, &s)?, eps)
}

fn random_noise_loss(base: &Denoiser, style: &StyleModel, schedule: &NoiseSchedule, batch: &StyleBatch, rng: &mut Rng) -> Result<Tensor> {
    let ts = sample_timesteps(rng, batch.z0.dim(0)?, schedule);
    let eps = rng::normal_tensor(rng, batch.z0.shape().clone())?;
    styled_noise_loss(base, style, schedule, batch, &ts, &eps)
}

/// Denoising loss on a style-dataset batch.
pub fn std_loss(base: &Denoiser, style: &StyleModel, schedule: &NoiseSchedule, batch: &StyleBatch, rng: &mut Rng) -> Result<Tensor> {
    random_noise_loss(base, style, schedule, batch, rng)
}

/// Content prior preservation loss: the same objective on a content-dataset
/// batch whose style references are the content motions themselves.
pub fn prior_loss(base: &Denoiser, style: &StyleModel, schedule: &NoiseSchedule, batch: &StyleBatch, rng: &mut Rng) -> Result<Tensor> {
    random_noise_loss(base, style, schedule, batch, rng)
}

pub fn total_loss(std: &Tensor, pr: &Tensor, lambda_pr: f64) -> Result<Tensor> {
    if lambda_pr < 0.0 {
        return Err(Error::config("lambda_pr must be non-negative"));
    }
    Ok((std + (pr * lambda_pr)?)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleEpoch {
    pub epoch: usize,
    pub std_loss: f64,
    pub pr_loss: f64,
    pub total: f64,
    pub lr: f64,
}

/// Precomputed training material of one dataset.
struct Pool {
    latents: Tensor,
    motions: Tensor,
    texts: Vec<Option<String>>,
    styles: Vec<usize>,
    contents: Vec<usize>,
}

impl Pool {
    fn new(data: &Dataset, indices: &[usize], base: &Denoiser, vae: &Vae) -> Result<Self> {
        let motions: Vec<&MotionSequence> = indices.iter().map(|&i| &data.motions[i]).collect();
        let z = encode_all(vae, &base.config.latent_norm, &motions)?;
        let normed: Vec<MotionSequence> = motions.iter().map(|m| vae.stats.normalize(m)).collect::<Result<_>>()?;
        Ok(Self {
            latents: Tensor::stack(&z, 0)?,
            motions: MotionSequence::stack(&normed.iter().collect::<Vec<_>>())?,
            texts: indices.iter().map(|&i| Some(data.manifest.entries[i].content_text.clone())).collect(),
            styles: indices.iter().map(|&i| data.manifest.entries[i].style).collect(),
            contents: indices.iter().map(|&i| data.manifest.entries[i].content).collect(),
        })
    }

    fn len(&self) -> usize {
        self.texts.len()
    }

    fn batch(&self, rows: &[usize], refs: &[usize]) -> Result<StyleBatch> {
        let idx = |v: &[usize]| Tensor::new(v.iter().map(|&i| i as u32).collect::<Vec<_>>(), self.latents.device());
        Ok(StyleBatch {
            z0: self.latents.index_select(&idx(rows)?, 0)?,
            texts: rows.iter().map(|&i| self.texts[i].clone()).collect(),
            style_x: self.motions.index_select(&idx(refs)?, 0)?,
            mask: None,
        })
    }

    fn references(&self, rows: &[usize], mode: StyleReference, rng: &mut Rng) -> Vec<usize> {
        match mode {
            StyleReference::SelfMotion => rows.to_vec(),
            StyleReference::SameStyle => rows
                .iter()
                .map(|&i| {
                    let same: Vec<usize> = (0..self.len()).filter(|&j| self.styles[j] == self.styles[i]).collect();
                    same[rng::index(rng, same.len())]
                })
                .collect(),
            StyleReference::OtherContent => rows
                .iter()
                .map(|&i| {
                    let same: Vec<usize> = (0..self.len()).filter(|&j| self.styles[j] == self.styles[i]).collect();
                    let other: Vec<usize> =
                        same.iter().copied().filter(|&j| self.contents[j] != self.contents[i]).collect();
                    let pick = if other.is_empty() { &same } else { &other };
                    pick[rng::index(rng, pick.len())]
                })
                .collect(),
        }
    }
}

pub struct StyleTrainOutput {
    pub model: StyleModel,
    pub log: Vec<StyleEpoch>,
    pub base_hash: String,
    pub vae_hash: String,
}

/// Trains the style network and fusion maps; the base denoiser and VAE stay frozen.
pub fn train_style_network(
    style_data: &Dataset,
    content_data: &Dataset,
    base: &Denoiser,
    vae: &Vae,
    config: &StyleTrainConfig,
) -> Result<StyleTrainOutput> {
    config.validate()?;
    let base = base.frozen_copy()?;
    let base_hash = base.params().hash()?;
    let vae_hash = vae.params().hash()?;
    let schedule = base.config.schedule()?;

    let style_idx = style_data.indices(Split::Train, &config.exclude_groups);
    let content_idx = content_data.indices(Split::Train, &[]);
    if style_idx.is_empty() || (config.lambda_pr > 0.0 && content_idx.is_empty()) {
        return Err(Error::Dataset("style training needs non-empty style and content training splits".into()));
    }
    let styles = Pool::new(style_data, &style_idx, &base, vae)?;
    let contents = Pool::new(content_data, &content_idx, &base, vae)?;

    let meta = StyleCheckpoint {
        net: StyleNetConfig {
            width: base.width(),
            heads: base.config.heads,
            blocks: base.blocks(),
            mlp_ratio: base.config.mlp_ratio,
            n_z: base.config.n_z,
            d_z: base.config.d_z,
            style_dim: config.style_dim,
            variant: config.variant,
            placement: config.placement,
        },
        encoder: StyleEncoderConfig {
            dim: style_data.manifest.dim,
            width: base.width(),
            heads: base.config.heads,
            style_dim: config.style_dim,
        },
        stats: vae.stats.clone(),
        base_hash: base_hash.clone(),
        vae_hash: vae_hash.clone(),
        training: serde_json::to_value(config)?,
    };
    let params = Params::fresh(config.seed);
    let model = StyleModel::new(meta, &params)?;
    model.net.check_compatible(&base)?;

    let mut opt = AdamW::new(
        model.params().vars(),
        ParamsAdamW {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
    )?;
    let mut rng = rng::substream(config.seed, 1);
    let bs = config.batch_size;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = rng::permutation(&mut rng, styles.len());
        let (mut s_sum, mut p_sum, mut t_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(bs) {
            let refs = styles.references(chunk, config.reference, &mut rng);
            let batch = condition_dropout(
                &styles.batch(chunk, &refs)?,
                config.p_null,
                config.mask_fraction,
                config.contiguous_mask,
                &mut rng,
            )?;
            let l_std = std_loss(&base, &model, &schedule, &batch, &mut rng)?;
            let (l_pr, total) = if config.lambda_pr > 0.0 {
                let rows: Vec<usize> = (0..chunk.len()).map(|_| rng::index(&mut rng, contents.len())).collect();
                let prior = condition_dropout(
                    &contents.batch(&rows, &rows)?,
                    config.p_null,
                    config.mask_fraction,
                    config.contiguous_mask,
                    &mut rng,
                )?;
                let l_pr = prior_loss(&base, &model, &schedule, &prior, &mut rng)?;
                let total = total_loss(&l_std, &l_pr, config.lambda_pr)?;
                (l_pr.to_scalar::<f64>()?, total)
            } else {
                (0.0, l_std.clone())
            };
            opt.backward_step(&total)?;
            s_sum += l_std.to_scalar::<f64>()?;
            p_sum += l_pr;
            t_sum += total.to_scalar::<f64>()?;
            steps += 1;
        }
        let n = steps as f64;
        let row = StyleEpoch {
            epoch,
            std_loss: s_sum / n,
            pr_loss: p_sum / n,
            total: t_sum / n,
            lr: config.lr,
        };
        if !row.total.is_finite() {
            return Err(Error::Numeric(format!("style loss diverged at epoch {epoch}")));
        }
        log::debug!("style epoch {epoch}: std {:.5} pr {:.5}", row.std_loss, row.pr_loss);
        log.push(row);
    }

    if base.params().hash()? != base_hash || vae.params().hash()? != vae_hash {
        return Err(Error::Numeric("frozen parameters changed during style training".into()));
    }
    Ok(StyleTrainOutput {
        model,
        log,
        base_hash,
        vae_hash,
    })
}
