//! Content-conditioned latent noise predictor with explicit encoder, middle
//! and decoder blocks.

use std::path::Path;

use candle_core::{Device, Module, Tensor};
use candle_nn::Linear;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::diffusion::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::nn::{linear, row_mask, sinusoidal, BagOfWords, Init, LayerNorm, Mlp, ParamStore, Params, TransformerBlock};
use crate::{Error, Result, DTYPE};

/// Affine whitening applied to VAE latents before diffusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentNorm {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl LatentNorm {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: 1.0,
        }
    }

    /// Fits a per-entry mean and a single global scale to `[B, n_z, d_z]` latents.
    pub fn fit(z: &Tensor) -> Result<Self> {
        let (b, n, d) = z.dims3()?;
        let flat = z.reshape((b, n * d))?;
        let mean = flat.mean(0)?;
        let var = flat.broadcast_sub(&mean)?.sqr()?.mean_all()?.to_scalar::<f64>()?;
        Ok(Self {
            mean: mean.to_vec1::<f64>()?,
            std: var.sqrt().max(1e-6),
        })
    }

    fn mean_tensor(&self, n: usize, d: usize) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.mean.clone(), (1, n, d), &Device::Cpu)?.to_dtype(DTYPE)?)
    }

    pub fn whiten(&self, z: &Tensor) -> Result<Tensor> {
        let (_, n, d) = z.dims3()?;
        Ok((z.broadcast_sub(&self.mean_tensor(n, d)?)? / self.std)?)
    }

    pub fn unwhiten(&self, z: &Tensor) -> Result<Tensor> {
        let (_, n, d) = z.dims3()?;
        Ok((z * self.std)?.broadcast_add(&self.mean_tensor(n, d)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub n_z: usize,
    pub d_z: usize,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub word_dim: usize,
    pub vocab: Vec<String>,
    pub diffusion_steps: usize,
    pub latent_norm: LatentNorm,
}

impl DenoiserConfig {
    pub fn mini(n_z: usize, d_z: usize, vocab: Vec<String>) -> Self {
        Self {
            n_z,
            d_z,
            width: 64,
            heads: 4,
            blocks: 4,
            mlp_ratio: 2,
            word_dim: 32,
            vocab,
            diffusion_steps: 1000,
            latent_norm: LatentNorm::identity(n_z * d_z),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.diffusion_steps, ScheduleKind::Linear)
    }
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    params: Params,
    text: BagOfWords,
    null_cond: Tensor,
    time_mlp: Mlp,
    z_in: Linear,
    pos: Tensor,
    enc: Vec<TransformerBlock>,
    mid: TransformerBlock,
    skips: Vec<Linear>,
    dec: Vec<TransformerBlock>,
    out_ln: LayerNorm,
    out: Linear,
}

/// Per-call conditioning shared by every block.
#[derive(Clone, Debug)]
pub struct Conditioning {
    /// `[B, W]` timestep embedding added to every block input.
    pub temb: Tensor,
    /// `[B, 1, W]` content token.
    pub cond: Tensor,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, p: &Params) -> Result<Self> {
        let w = config.width;
        let blk = |name: &str, i: usize| TransformerBlock::new(w, config.heads, config.mlp_ratio, &p.pp(name).pp(i));
        Ok(Self {
            text: BagOfWords::new(config.vocab.clone(), config.word_dim, w, &p.pp("text"))?,
            null_cond: p.get(w, "null_cond", Init::Normal(0.5))?,
            time_mlp: Mlp::new(w, 2 * w, w, &p.pp("time"))?,
            z_in: linear(config.d_z, w, &p.pp("z_in"))?,
            pos: p.get((config.n_z, w), "pos", Init::Normal(0.5))?,
            enc: (0..config.blocks).map(|i| blk("enc", i)).collect::<Result<_>>()?,
            mid: TransformerBlock::new(w, config.heads, config.mlp_ratio, &p.pp("mid"))?,
            skips: (0..config.blocks)
                .map(|i| linear(2 * w, w, &p.pp("skip").pp(i)))
                .collect::<Result<_>>()?,
            dec: (0..config.blocks).map(|i| blk("dec", i)).collect::<Result<_>>()?,
            out_ln: LayerNorm::new(w, &p.pp("out_ln"))?,
            out: linear(w, config.d_z, &p.pp("out"))?,
            params: p.clone(),
            config,
        })
    }

    pub fn params(&self) -> ParamStore {
        self.params.store()
    }

    pub fn blocks(&self) -> usize {
        self.config.blocks
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    /// Sinusoidal timestep features passed through the time MLP, `[B, W]`.
    pub fn time_embed(&self, ts: &[usize]) -> Result<Tensor> {
        let t: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
        Ok(self.time_mlp.forward(&sinusoidal(&t, self.config.width)?)?)
    }

    /// Text embeddings `[B, W]`; `None` rows take the learned null embedding.
    pub fn text_embed(&self, texts: &[Option<&str>]) -> Result<Tensor> {
        let emb = self.text.forward(texts)?;
        let keep = row_mask(&texts.iter().map(Option::is_some).collect::<Vec<_>>())?;
        let null = self.null_cond.unsqueeze(0)?;
        let drop = (1.0 - &keep)?;
        Ok((emb.broadcast_mul(&keep)? + drop.broadcast_mul(&null)?)?)
    }

    pub fn conditioning(&self, ts: &[usize], texts: &[Option<&str>]) -> Result<Conditioning> {
        if ts.len() != texts.len() {
            return Err(Error::shape("timesteps and texts disagree on batch size"));
        }
        Ok(Conditioning {
            temb: self.time_embed(ts)?,
            cond: self.text_embed(texts)?.unsqueeze(1)?,
        })
    }

    /// Content-network input tokens `[B, 1 + n_z, W]`.
    pub fn input_tokens(&self, z_t: &Tensor, c: &Conditioning) -> Result<Tensor> {
        let (_, n, d) = z_t.dims3()?;
        if (n, d) != (self.config.n_z, self.config.d_z) {
            return Err(Error::shape(format!(
                "latent {n}x{d} does not match denoiser {}x{}",
                self.config.n_z, self.config.d_z
            )));
        }
        let z = self.z_in.forward(z_t)?.broadcast_add(&self.pos)?;
        Ok(Tensor::cat(&[&c.cond, &z], 1)?)
    }

    pub fn encoder_block(&self, i: usize, h: &Tensor, c: &Conditioning) -> Result<Tensor> {
        Ok(self.enc[i].forward(&h.broadcast_add(&c.temb.unsqueeze(1)?)?)?)
    }

    pub fn middle_block(&self, h: &Tensor, c: &Conditioning) -> Result<Tensor> {
        Ok(self.mid.forward(&h.broadcast_add(&c.temb.unsqueeze(1)?)?)?)
    }

    /// Decoder stack over the middle output, with long skips from the encoder
    /// features (`enc_feats[i]` is the output of encoder block `i`). `inject[j]`,
    /// when given, is added to the input of decoder block `j`.
    pub fn decoder(
        &self,
        h: &Tensor,
        enc_feats: &[Tensor],
        c: &Conditioning,
        inject: Option<&[Tensor]>,
    ) -> Result<Tensor> {
        let n = self.config.blocks;
        let temb = c.temb.unsqueeze(1)?;
        let mut h = h.clone();
        for j in 0..n {
            let skip = &enc_feats[n - 1 - j];
            let mut x = self.skips[j].forward(&Tensor::cat(&[&h, skip], 2)?)?;
            if let Some(inj) = inject {
                x = (x + &inj[j])?;
            }
            h = self.dec[j].forward(&x.broadcast_add(&temb)?)?;
        }
        Ok(h)
    }

    /// Noise prediction `[B, n_z, d_z]` from the final token features.
    pub fn output(&self, h: &Tensor) -> Result<Tensor> {
        let n = self.config.n_z;
        let tokens = h.narrow(1, 1, n)?;
        Ok(self.out.forward(&self.out_ln.forward(&tokens)?)?)
    }

    /// Base (style-free) prediction.
    pub fn forward(&self, z_t: &Tensor, ts: &[usize], texts: &[Option<&str>]) -> Result<Tensor> {
        let c = self.conditioning(ts, texts)?;
        self.forward_with(z_t, &c)
    }

    pub fn forward_with(&self, z_t: &Tensor, c: &Conditioning) -> Result<Tensor> {
        let mut h = self.input_tokens(z_t, c)?;
        let mut feats = Vec::with_capacity(self.config.blocks);
        for i in 0..self.config.blocks {
            h = self.encoder_block(i, &h, c)?;
            feats.push(h.clone());
        }
        let h = self.middle_block(&h, c)?;
        let h = self.decoder(&h, &feats, c, None)?;
        self.output(&h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, checkpoint::DENOISER, &self.config, &self.params())
    }

    /// Loads a frozen denoiser.
    pub fn load(path: &Path) -> Result<Self> {
        let loaded = checkpoint::load::<DenoiserConfig>(path, checkpoint::DENOISER)?;
        Self::new(loaded.config, &Params::from_tensors(loaded.tensors, false))
    }

    /// Same network with trainable handles on the same values.
    pub fn frozen_copy(&self) -> Result<Self> {
        let tensors = self.params().tensors().into_iter().collect();
        Self::new(self.config.clone(), &Params::from_tensors(tensors, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny() -> Denoiser {
        let mut cfg = DenoiserConfig::mini(2, 4, crate::nn::build_vocab(["a person walks"]));
        cfg.width = 16;
        cfg.blocks = 2;
        Denoiser::new(cfg, &Params::fresh(0)).unwrap()
    }

    #[test]
    fn output_shape_matches_latent() {
        let d = tiny();
        let z = rng::normal_tensor(&mut rng::seeded(0), (3, 2, 4)).unwrap();
        let eps = d.forward(&z, &[1, 500, 1000], &[Some("a person walks"), None, None]).unwrap();
        assert_eq!(eps.dims(), &[3, 2, 4]);
    }

    #[test]
    fn null_rows_use_null_embedding() {
        let d = tiny();
        let e = d.text_embed(&[None, Some("a person walks")]).unwrap();
        let null = d.null_cond.to_vec1::<f64>().unwrap();
        assert_eq!(e.get(0).unwrap().to_vec1::<f64>().unwrap(), null);
        assert_ne!(e.get(1).unwrap().to_vec1::<f64>().unwrap(), null);
    }

    #[test]
    fn latent_norm_round_trip() {
        let z = rng::normal_tensor(&mut rng::seeded(1), (8, 2, 4)).unwrap();
        let z = ((z * 3.0).unwrap() + 1.0).unwrap();
        let norm = LatentNorm::fit(&z).unwrap();
        let back = norm.unwhiten(&norm.whiten(&z).unwrap()).unwrap();
        let err = (back - &z).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(err < 1e-12);
    }
}
