//! Transformer motion VAE with learned latent query tokens.

use std::path::Path;

use candle_core::{Device, Module, Tensor, D};
use candle_nn::{AdamW, Linear, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::motion::dataset::{Dataset, Split};
use crate::motion::{MotionSequence, NormStats};
use crate::nn::{linear, sinusoidal, Init, ParamStore, Params, TransformerBlock};
use crate::rng::{self, Rng};
use crate::{Error, Result, DTYPE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub dim: usize,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub n_z: usize,
    pub d_z: usize,
    pub mlp_ratio: usize,
    pub kl_weight: f64,
}

impl VaeConfig {
    pub fn mini(dim: usize) -> Self {
        Self {
            dim,
            width: 32,
            heads: 4,
            blocks: 2,
            n_z: 2,
            d_z: 16,
            mlp_ratio: 2,
            kl_weight: 1e-4,
        }
    }

    pub fn full(dim: usize) -> Self {
        Self {
            width: 128,
            d_z: 64,
            ..Self::mini(dim)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Vae {
    pub config: VaeConfig,
    /// Normalization statistics of the data the VAE was trained on.
    pub stats: NormStats,
    params: Params,
    enc_in: Linear,
    enc_queries: Tensor,
    enc_blocks: Vec<TransformerBlock>,
    enc_out: Linear,
    dec_in: Linear,
    dec_len: Linear,
    dec_blocks: Vec<TransformerBlock>,
    dec_out: Linear,
}

#[derive(Serialize, Deserialize)]
struct VaeCheckpoint {
    config: VaeConfig,
    stats: NormStats,
    log: Vec<VaeEpoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl Vae {
    pub fn new(config: VaeConfig, stats: NormStats, p: &Params) -> Result<Self> {
        if stats.dim() != config.dim {
            return Err(Error::shape("normalization stats do not match VAE dimension"));
        }
        let w = config.width;
        let block = |i: usize, prefix: &str| {
            TransformerBlock::new(w, config.heads, config.mlp_ratio, &p.pp(prefix).pp(i))
        };
        Ok(Self {
            enc_in: linear(config.dim, w, &p.pp("enc_in"))?,
            enc_queries: p.get((2 * config.n_z, w), "enc_queries", Init::Normal(0.5))?,
            enc_blocks: (0..config.blocks).map(|i| block(i, "enc")).collect::<Result<_>>()?,
            enc_out: linear(w, config.d_z, &p.pp("enc_out"))?,
            dec_in: linear(config.d_z, w, &p.pp("dec_in"))?,
            dec_len: linear(w, w, &p.pp("dec_len"))?,
            dec_blocks: (0..config.blocks).map(|i| block(i, "dec")).collect::<Result<_>>()?,
            dec_out: linear(w, config.dim, &p.pp("dec_out"))?,
            params: p.clone(),
            config,
            stats,
        })
    }

    pub fn params(&self) -> ParamStore {
        self.params.store()
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        (self.config.n_z, self.config.d_z)
    }

    /// Posterior mean and log-variance, each `[B, n_z, d_z]`, for normalized `[B, L, D]` input.
    pub fn encode_dist(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, l, d) = x.dims3()?;
        if d != self.config.dim {
            return Err(Error::shape(format!("VAE expects D={}, got {d}", self.config.dim)));
        }
        let positions: Vec<f64> = (0..l).map(|i| i as f64).collect();
        let pos = sinusoidal(&positions, self.config.width)?;
        let h = self.enc_in.forward(x)?.broadcast_add(&pos)?;
        let q = self.enc_queries.unsqueeze(0)?.broadcast_as((b, 2 * self.config.n_z, self.config.width))?;
        let mut h = Tensor::cat(&[&q, &h], 1)?;
        for blk in &self.enc_blocks {
            h = blk.forward(&h)?;
        }
        let out = self.enc_out.forward(&h.narrow(1, 0, 2 * self.config.n_z)?)?;
        let mu = out.narrow(1, 0, self.config.n_z)?;
        let logvar = out.narrow(1, self.config.n_z, self.config.n_z)?.clamp(-20.0, 10.0)?;
        Ok((mu, logvar))
    }

    /// Posterior mean latent.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode_dist(x)?.0)
    }

    /// Reparameterized posterior sample.
    pub fn encode_sample(&self, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let (mu, logvar) = self.encode_dist(x)?;
        let eps = rng::normal_tensor(rng, mu.shape().clone())?;
        Ok((mu + (logvar * 0.5)?.exp()?.mul(&eps)?)?)
    }

    /// Normalized motion `[B, L, D]` from latents `[B, n_z, d_z]`.
    pub fn decode(&self, z: &Tensor, frames: usize) -> Result<Tensor> {
        let (b, n, dz) = z.dims3()?;
        if (n, dz) != self.latent_shape() {
            return Err(Error::shape(format!(
                "latent {n}x{dz} does not match VAE latent {:?}",
                self.latent_shape()
            )));
        }
        let w = self.config.width;
        let positions: Vec<f64> = (0..frames).map(|i| i as f64).collect();
        let len = self.dec_len.forward(&sinusoidal(&[frames as f64], w)?)?;
        let queries = sinusoidal(&positions, w)?.broadcast_add(&len)?;
        let queries = queries.unsqueeze(0)?.broadcast_as((b, frames, w))?;
        let mut h = Tensor::cat(&[&self.dec_in.forward(z)?, &queries], 1)?;
        for blk in &self.dec_blocks {
            h = blk.forward(&h)?;
        }
        Ok(self.dec_out.forward(&h.narrow(1, n, frames)?)?)
    }

    /// Denormalized motions from latents.
    pub fn decode_motions(&self, z: &Tensor, frames: usize) -> Result<Vec<MotionSequence>> {
        let (mean, std) = self.stats.tensors()?;
        let x = self.decode(z, frames)?.broadcast_mul(&std)?.broadcast_add(&mean)?;
        MotionSequence::batch_from_tensor(&x)
    }

    /// Posterior-mean latents of raw (denormalized) motions.
    pub fn encode_motions(&self, seqs: &[&MotionSequence]) -> Result<Tensor> {
        let normed: Vec<MotionSequence> =
            seqs.iter().map(|s| self.stats.normalize(s)).collect::<Result<_>>()?;
        self.encode(&MotionSequence::stack(&normed.iter().collect::<Vec<_>>())?)
    }

    pub fn save(&self, path: &Path, log: &[VaeEpoch]) -> Result<()> {
        let ckpt = VaeCheckpoint {
            config: self.config.clone(),
            stats: self.stats.clone(),
            log: log.to_vec(),
        };
        checkpoint::save(path, checkpoint::VAE, &ckpt, &self.params())
    }

    /// Loads a frozen VAE and its training log.
    pub fn load(path: &Path) -> Result<(Self, Vec<VaeEpoch>)> {
        let loaded = checkpoint::load::<VaeCheckpoint>(path, checkpoint::VAE)?;
        let p = Params::from_tensors(loaded.tensors, false);
        let vae = Self::new(loaded.config.config, loaded.config.stats, &p)?;
        Ok((vae, loaded.config.log))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub kl_weight: f64,
    pub seed: u64,
    #[serde(default)]
    pub full: bool,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            lr: 2e-3,
            kl_weight: 1e-4,
            seed: 0,
            full: false,
        }
    }
}

/// Negative ELBO pieces for a normalized batch: (reconstruction MSE, KL).
pub fn vae_loss(vae: &Vae, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    let (_, l, _) = x.dims3()?;
    let (mu, logvar) = vae.encode_dist(x)?;
    let eps = rng::normal_tensor(rng, mu.shape().clone())?;
    let z = (&mu + (&logvar * 0.5)?.exp()?.mul(&eps)?)?;
    let recon = (vae.decode(&z, l)? - x)?.sqr()?.mean_all()?;
    let kl = ((mu.sqr()? + logvar.exp()? - &logvar)? - 1.0)?
        .sum(D::Minus1)?
        .mean_all()?
        .affine(0.5, 0.0)?;
    Ok((recon, kl))
}

/// Trains on the union of the training splits of `datasets`, with
/// normalization statistics fitted on that union.
pub fn train_vae(datasets: &[&Dataset], config: &VaeTrainConfig) -> Result<(Vae, Vec<VaeEpoch>)> {
    let dim = datasets
        .first()
        .ok_or_else(|| Error::Dataset("VAE training needs at least one dataset".into()))?
        .manifest
        .dim;
    let mut raw = Vec::new();
    for d in datasets {
        if d.manifest.dim != dim {
            return Err(Error::Dataset(format!("feature dims {} and {dim} differ", d.manifest.dim)));
        }
        raw.extend(d.indices(Split::Train, &[]).into_iter().map(|i| &d.motions[i]));
    }
    if raw.is_empty() {
        return Err(Error::Dataset("VAE training needs a non-empty training split".into()));
    }
    let stats = NormStats::fit(raw.iter().copied())?;
    let mut arch = if config.full { VaeConfig::full(dim) } else { VaeConfig::mini(dim) };
    arch.kl_weight = config.kl_weight;
    let params = Params::fresh(config.seed);
    let normed: Vec<MotionSequence> = raw.iter().map(|m| stats.normalize(m)).collect::<Result<_>>()?;
    let vae = Vae::new(arch, stats, &params)?;
    let mut opt = AdamW::new(
        params.store().vars(),
        ParamsAdamW {
            lr: config.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = rng::substream(config.seed, 1);
    let mut log = Vec::with_capacity(config.epochs);
    let bs = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        let order = rng::permutation(&mut rng, normed.len());
        let (mut rsum, mut ksum, mut n) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(bs) {
            let batch = MotionSequence::stack(&chunk.iter().map(|&i| &normed[i]).collect::<Vec<_>>())?;
            let (recon, kl) = vae_loss(&vae, &batch, &mut rng)?;
            let loss = (&recon + (&kl * config.kl_weight)?)?;
            opt.backward_step(&loss)?;
            rsum += recon.to_scalar::<f64>()? * chunk.len() as f64;
            ksum += kl.to_scalar::<f64>()? * chunk.len() as f64;
            n += chunk.len();
        }
        let (recon, kl) = (rsum / n as f64, ksum / n as f64);
        if !recon.is_finite() {
            return Err(Error::Numeric(format!("VAE loss diverged at epoch {epoch}")));
        }
        log::debug!("vae epoch {epoch}: recon {recon:.5} kl {kl:.3}");
        log.push(VaeEpoch {
            epoch,
            recon,
            kl,
            total: recon + config.kl_weight * kl,
        });
    }
    Ok((vae, log))
}

/// Reconstruction MSE (normalized with the VAE's statistics, posterior mean) over `indices`.
pub fn reconstruction_mse(vae: &Vae, data: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(64) {
        let normed: Vec<MotionSequence> =
            chunk.iter().map(|&i| vae.stats.normalize(&data.motions[i])).collect::<Result<_>>()?;
        let x = MotionSequence::stack(&normed.iter().collect::<Vec<_>>())?;
        let l = x.dim(1)?;
        let err = (vae.decode(&vae.encode(&x)?, l)? - &x)?.sqr()?.mean_all()?.to_scalar::<f64>()?;
        total += err * chunk.len() as f64;
    }
    Ok(total / indices.len().max(1) as f64)
}

pub fn zeros_latent(vae: &Vae, batch: usize) -> Result<Tensor> {
    let (n, d) = vae.latent_shape();
    Ok(Tensor::zeros((batch, n, d), DTYPE, &Device::Cpu)?)
}
