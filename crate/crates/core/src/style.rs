//! Style classifier / feature extractor, style motion encoder, contrastive
//! adaptor and semantic-embedding ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{Device, Module, Tensor, D};
use candle_nn::{AdamW, Linear, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::motion::{MotionSequence, NormStats};
use crate::nn::{linear, sinusoidal, Init, Mlp, ParamStore, Params, TemporalConv, TransformerBlock};
use crate::rng::{self, Rng};
use crate::{Error, Result, DTYPE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub kernel: usize,
    pub classes: Vec<String>,
    pub stats: NormStats,
}

/// Temporal-convolution classifier. The backbone up to the penultimate layer
/// is the feature extractor `f`.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub config: ClassifierConfig,
    params: Params,
    conv1: TemporalConv,
    conv2: TemporalConv,
    fc: Linear,
    head: Linear,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, p: &Params) -> Result<Self> {
        if config.classes.len() < 2 {
            return Err(Error::config("a classifier needs at least two classes"));
        }
        Ok(Self {
            conv1: TemporalConv::new(config.dim, config.hidden, config.kernel, &p.pp("conv1"))?,
            conv2: TemporalConv::new(config.hidden, config.hidden, config.kernel, &p.pp("conv2"))?,
            fc: linear(config.hidden, config.feature_dim, &p.pp("fc"))?,
            head: linear(config.feature_dim, config.classes.len(), &p.pp("head"))?,
            params: p.clone(),
            config,
        })
    }

    pub fn params(&self) -> ParamStore {
        self.params.store()
    }

    pub fn num_classes(&self) -> usize {
        self.config.classes.len()
    }

    /// Features `[B, d_f]` of raw (denormalized) motion `[B, L, D]`; differentiable.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let (mean, std) = self.config.stats.tensors()?;
        let x = x.broadcast_sub(&mean)?.broadcast_div(&std)?;
        let h = self.conv1.forward(&x)?.gelu()?;
        let h = self.conv2.forward(&h)?.gelu()?;
        Ok(self.fc.forward(&h.mean(1)?)?.gelu()?)
    }

    pub fn head(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.head.forward(features)?)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.head(&self.features(x)?)
    }

    pub fn classify(&self, x: &Tensor) -> Result<Vec<usize>> {
        argmax_rows(&self.logits(x)?)
    }

    pub fn features_of(&self, seqs: &[&MotionSequence]) -> Result<Tensor> {
        let mut out = Vec::new();
        for chunk in seqs.chunks(128) {
            out.push(self.features(&MotionSequence::stack(chunk)?)?);
        }
        Ok(Tensor::cat(&out, 0)?)
    }

    pub fn classify_motions(&self, seqs: &[&MotionSequence]) -> Result<Vec<usize>> {
        argmax_rows(&self.head(&self.features_of(seqs)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, checkpoint::STYLE_CLASSIFIER, &self.config, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let loaded = checkpoint::load::<ClassifierConfig>(path, checkpoint::STYLE_CLASSIFIER)?;
        Self::new(loaded.config, &Params::from_tensors(loaded.tensors, false))
    }
}

pub fn argmax_rows(t: &Tensor) -> Result<Vec<usize>> {
    let rows = t.to_vec2::<f64>()?;
    Ok(rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub feature_dim: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 3e-3,
            hidden: 32,
            feature_dim: 16,
            kernel: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub train_accuracy: f64,
    pub losses: Vec<f64>,
}

/// Trains a classifier on `(motion, label)` pairs.
pub fn train_classifier(
    motions: &[&MotionSequence],
    labels: &[usize],
    classes: Vec<String>,
    stats: NormStats,
    config: &ClassifierTrainConfig,
) -> Result<(Classifier, ClassifierReport)> {
    if motions.is_empty() || motions.len() != labels.len() {
        return Err(Error::Dataset("classifier training needs labelled motions".into()));
    }
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::Dataset("classifier training needs at least two distinct labels".into()));
    }
    if let Some(&l) = seen.iter().find(|&&l| l >= classes.len()) {
        return Err(Error::Dataset(format!("label {l} outside the {}-class taxonomy", classes.len())));
    }
    let dim = motions[0].dim();
    let cfg = ClassifierConfig {
        dim,
        hidden: config.hidden,
        feature_dim: config.feature_dim,
        kernel: config.kernel,
        classes,
        stats,
    };
    let params = Params::fresh(config.seed);
    let clf = Classifier::new(cfg, &params)?;
    let mut opt = AdamW::new(
        params.store().vars(),
        ParamsAdamW {
            lr: config.lr,
            weight_decay: 1e-4,
            ..Default::default()
        },
    )?;
    let mut rng = rng::substream(config.seed, 1);
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let order = rng::permutation(&mut rng, motions.len());
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let x = MotionSequence::stack(&chunk.iter().map(|&i| motions[i]).collect::<Vec<_>>())?;
            let y = Tensor::from_vec(
                chunk.iter().map(|&i| labels[i] as u32).collect::<Vec<_>>(),
                chunk.len(),
                &Device::Cpu,
            )?;
            let loss = candle_nn::loss::cross_entropy(&clf.logits(&x)?, &y)?;
            opt.backward_step(&loss)?;
            total += loss.to_scalar::<f64>()? * chunk.len() as f64;
        }
        losses.push(total / motions.len() as f64);
    }
    let pred = clf.classify_motions(motions)?;
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    let report = ClassifierReport {
        train_accuracy: 100.0 * correct as f64 / motions.len() as f64,
        losses,
    };
    Ok((clf, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleEncoderConfig {
    pub dim: usize,
    pub width: usize,
    pub heads: usize,
    pub style_dim: usize,
}

/// Single transformer encoder turning a (normalized) style motion into a
/// style embedding. Masked frames are replaced by a learned token.
#[derive(Clone, Debug)]
pub struct StyleMotionEncoder {
    pub config: StyleEncoderConfig,
    input: Linear,
    mask_token: Tensor,
    block: TransformerBlock,
    out: Linear,
}

impl StyleMotionEncoder {
    pub fn new(config: StyleEncoderConfig, p: &Params) -> Result<Self> {
        Ok(Self {
            input: linear(config.dim, config.width, &p.pp("input"))?,
            mask_token: p.get(config.width, "mask_token", Init::Normal(0.5))?,
            block: TransformerBlock::new(config.width, config.heads, 2, &p.pp("block"))?,
            out: linear(config.width, config.style_dim, &p.pp("out"))?,
            config,
        })
    }

    /// `[B, style_dim]` from normalized `[B, L, D]`; `mask` is `[B, L]` with
    /// ones on frames to hide.
    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (_, l, _) = x.dims3()?;
        let mut h = self.input.forward(x)?;
        if let Some(m) = mask {
            let m = m.unsqueeze(2)?;
            let keep = (1.0 - &m)?;
            h = (h.broadcast_mul(&keep)? + m.broadcast_mul(&self.mask_token.reshape((1, 1, ()))?)?)?;
        }
        let positions: Vec<f64> = (0..l).map(|i| i as f64).collect();
        let h = h.broadcast_add(&sinusoidal(&positions, self.config.width)?)?;
        let h = self.block.forward(&h)?;
        Ok(self.out.forward(&h.mean(1)?)?)
    }
}

/// InfoNCE with text anchors: `-(1/N) sum_i log softmax_k(cos(t_i, s_k)/tau)[i]`,
/// optionally averaged with the style-anchored direction.
pub fn infonce_loss(t: &Tensor, s: &Tensor, tau: f64, symmetric: bool) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::config("temperature must be positive"));
    }
    let (n, d) = t.dims2()?;
    if s.dims2()? != (n, d) {
        return Err(Error::shape("text and style batches differ in shape"));
    }
    if n < 2 {
        return Err(Error::shape("InfoNCE needs a batch of at least two pairs"));
    }
    let tn = unit_rows(t)?;
    let sn = unit_rows(s)?;
    let logits = (tn.matmul(&sn.t()?)? / tau)?;
    let ident = Tensor::eye(n, DTYPE, &Device::Cpu)?;
    let row = (candle_nn::ops::log_softmax(&logits, D::Minus1)? * &ident)?.sum_all()?.affine(-1.0 / n as f64, 0.0)?;
    if !symmetric {
        return Ok(row);
    }
    let col = (candle_nn::ops::log_softmax(&logits.t()?, D::Minus1)? * &ident)?.sum_all()?.affine(-1.0 / n as f64, 0.0)?;
    Ok(((row + col)? * 0.5)?)
}

fn unit_rows(x: &Tensor) -> Result<Tensor> {
    let norms = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let min = norms.min_all()?.to_scalar::<f64>()?;
    if min < 1e-12 {
        return Err(Error::Numeric("zero-norm embedding in contrastive batch".into()));
    }
    Ok(x.broadcast_div(&norms)?)
}

/// Cosine similarity matrix `[N, M]`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(unit_rows(a)?.matmul(&unit_rows(b)?.t()?)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

/// External embedding of a style prompt (text or image).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SemanticEmbedding {
    pub id: String,
    pub modality: Modality,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl SemanticEmbedding {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.dim {
            return Err(Error::shape(format!(
                "embedding {:?} declares dim {} but has {} values",
                self.id,
                self.dim,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("embedding {:?} has non-finite values", self.id)));
        }
        Ok(())
    }
}

/// Reads a JSON-lines embedding file.
pub fn read_embeddings(path: &Path) -> Result<Vec<SemanticEmbedding>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let e: SemanticEmbedding = serde_json::from_str(line)?;
        e.validate()?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, embeddings: &[SemanticEmbedding]) -> Result<()> {
    let mut text = String::new();
    for e in embeddings {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Deterministic stand-in for a text encoder: each label maps to one row of
/// a seeded random orthogonal matrix.
#[derive(Clone, Debug)]
pub struct OrthogonalProvider {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

impl OrthogonalProvider {
    pub const DEFAULT_DIM: usize = 32;

    pub fn new(labels: &[String], dim: usize, seed: u64) -> Result<Self> {
        if labels.len() > dim {
            return Err(Error::config(format!("{} labels do not fit {dim} orthogonal directions", labels.len())));
        }
        let mut r = rng::seeded(seed);
        let m = nalgebra::DMatrix::from_vec(dim, dim, rng::normal_vec(&mut r, dim * dim));
        let q = m.qr().q();
        let table = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), q.column(i).iter().copied().collect()))
            .collect();
        Ok(Self { dim, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, label: &str, modality: Modality) -> Result<SemanticEmbedding> {
        let values = self
            .table
            .get(label)
            .ok_or_else(|| Error::config(format!("no embedding for label {label:?}")))?
            .clone();
        Ok(SemanticEmbedding {
            id: label.to_string(),
            modality,
            dim: self.dim,
            values,
        })
    }

    pub fn all(&self, modality: Modality) -> Vec<SemanticEmbedding> {
        self.table
            .iter()
            .map(|(id, v)| SemanticEmbedding {
                id: id.clone(),
                modality,
                dim: self.dim,
                values: v.clone(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptorConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub style_dim: usize,
    pub temperature: f64,
    /// Style labels in the order used for training.
    pub labels: Vec<String>,
    /// Mean norm of the centered training style embeddings; adapted outputs
    /// are rescaled to it since the contrastive objective fixes only direction.
    #[serde(default)]
    pub target_norm: Option<f64>,
    /// Mean training style embedding, added back after rescaling.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

/// MLP from semantic embeddings to the style-embedding space.
#[derive(Clone, Debug)]
pub struct Adaptor {
    pub config: AdaptorConfig,
    params: Params,
    mlp: Mlp,
}

impl Adaptor {
    pub fn new(config: AdaptorConfig, p: &Params) -> Result<Self> {
        if config.temperature <= 0.0 {
            return Err(Error::config("adaptor temperature must be positive"));
        }
        Ok(Self {
            mlp: Mlp::new(config.embed_dim, config.hidden, config.style_dim, &p.pp("mlp"))?,
            params: p.clone(),
            config,
        })
    }

    pub fn params(&self) -> ParamStore {
        self.params.store()
    }

    pub fn forward(&self, e: &Tensor) -> Result<Tensor> {
        Ok(self.mlp.forward(e)?)
    }

    /// Style embedding `[1, style_dim]` for a text or image embedding.
    pub fn adapt(&self, e: &SemanticEmbedding) -> Result<Tensor> {
        e.validate()?;
        if e.dim != self.config.embed_dim {
            return Err(Error::shape(format!(
                "adaptor expects {}-dim embeddings, got {}",
                self.config.embed_dim, e.dim
            )));
        }
        let x = Tensor::from_vec(e.values.clone(), (1, e.dim), &Device::Cpu)?.to_dtype(DTYPE)?;
        let mut y = self.forward(&x)?;
        if let Some(n) = self.config.target_norm {
            let norm = y.sqr()?.sum_all()?.sqrt()?.to_scalar::<f64>()?.max(1e-12);
            y = (y * (n / norm))?;
        }
        if let Some(c) = &self.config.center {
            let c = Tensor::from_vec(c.clone(), (1, c.len()), &Device::Cpu)?.to_dtype(DTYPE)?;
            y = (y + c)?;
        }
        Ok(y)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, checkpoint::ADAPTOR, &self.config, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let loaded = checkpoint::load::<AdaptorConfig>(path, checkpoint::ADAPTOR)?;
        Self::new(loaded.config, &Params::from_tensors(loaded.tensors, false))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AdaptorTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub temperature: f64,
    pub symmetric: bool,
    pub seed: u64,
}

impl Default for AdaptorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 3e-3,
            hidden: 64,
            temperature: 0.07,
            symmetric: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptorReport {
    pub losses: Vec<f64>,
    /// Top-1 text-to-style retrieval over label centroids, percent.
    pub retrieval_top1: f64,
}

/// Aligns `embeddings[i]` with the style embeddings of label `i`
/// (`style[i]` is `[n_i, style_dim]`).
pub fn train_adaptor(
    labels: Vec<String>,
    embeddings: &[SemanticEmbedding],
    style: &[Tensor],
    config: &AdaptorTrainConfig,
) -> Result<(Adaptor, AdaptorReport)> {
    let n = labels.len();
    if n < 2 || embeddings.len() != n || style.len() != n {
        return Err(Error::Dataset("adaptor training needs at least two labels with embeddings on both sides".into()));
    }
    for (i, s) in style.iter().enumerate() {
        if s.dim(0)? == 0 {
            return Err(Error::Dataset(format!("label {:?} has no style embeddings", labels[i])));
        }
    }
    let embed_dim = embeddings[0].dim;
    for e in embeddings {
        e.validate()?;
        if e.dim != embed_dim {
            return Err(Error::shape("semantic embeddings disagree on dimension"));
        }
    }
    let style_dim = style[0].dim(1)?;
    let center = Tensor::cat(style, 0)?.mean_keepdim(0)?;
    let style: Vec<Tensor> = style.iter().map(|s| s.broadcast_sub(&center)).collect::<candle_core::Result<_>>()?;
    let target_norm = Tensor::cat(&style, 0)?.sqr()?.sum(1)?.sqrt()?.mean_all()?.to_scalar::<f64>()?;
    let params = Params::fresh(config.seed);
    let adaptor = Adaptor::new(
        AdaptorConfig {
            embed_dim,
            hidden: config.hidden,
            style_dim,
            temperature: config.temperature,
            labels: labels.clone(),
            target_norm: Some(target_norm),
            center: Some(center.flatten_all()?.to_vec1::<f64>()?),
        },
        &params,
    )?;
    let e_rows: Vec<f64> = embeddings.iter().flat_map(|e| e.values.iter().copied()).collect();
    let e = Tensor::from_vec(e_rows, (n, embed_dim), &Device::Cpu)?.to_dtype(DTYPE)?;
    let mut opt = AdamW::new(
        params.store().vars(),
        ParamsAdamW {
            lr: config.lr,
            weight_decay: 1e-4,
            ..Default::default()
        },
    )?;
    let mut rng = rng::substream(config.seed, 1);
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let picks = style
            .iter()
            .map(|s| s.get(rng::index(&mut rng, s.dim(0).unwrap_or(1))))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let s = Tensor::stack(&picks, 0)?;
        let loss = infonce_loss(&adaptor.forward(&e)?, &s, config.temperature, config.symmetric)?;
        opt.backward_step(&loss)?;
        losses.push(loss.to_scalar::<f64>()?);
    }
    let retrieval_top1 = retrieval_accuracy(&adaptor.forward(&e)?, &style)?;
    Ok((adaptor, AdaptorReport { losses, retrieval_top1 }))
}

/// Percent of adapted rows whose most cosine-similar style centroid is their own label.
pub fn retrieval_accuracy(adapted: &Tensor, style: &[Tensor]) -> Result<f64> {
    let centroids = Tensor::stack(&style.iter().map(|s| s.mean(0)).collect::<candle_core::Result<Vec<_>>>()?, 0)?;
    let best = argmax_rows(&cosine_matrix(adapted, &centroids)?)?;
    let hits = best.iter().enumerate().filter(|(i, b)| i == *b).count();
    Ok(100.0 * hits as f64 / best.len() as f64)
}

/// Row-wise frame mask `[B, L]` hiding `fraction` of the frames, either as
/// one contiguous run or as random frames.
pub fn frame_mask(batch: usize, frames: usize, fraction: f64, contiguous: bool, rng: &mut Rng) -> Result<Tensor> {
    let k = ((fraction * frames as f64).round() as usize).min(frames);
    let mut data = vec![0f64; batch * frames];
    if k > 0 {
        for b in 0..batch {
            if contiguous {
                let start = rng::index(rng, frames - k + 1);
                for t in start..start + k {
                    data[b * frames + t] = 1.0;
                }
            } else {
                for &t in rng::permutation(rng, frames)[..k].iter() {
                    data[b * frames + t] = 1.0;
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (batch, frames), &Device::Cpu)?.to_dtype(DTYPE)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provider_vectors_are_orthonormal() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let p = OrthogonalProvider::new(&labels, 8, 0).unwrap();
        for x in &labels {
            for y in &labels {
                let a = p.embed(x, Modality::Text).unwrap().values;
                let b = p.embed(y, Modality::Image).unwrap().values;
                let d: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
                let want = if x == y { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
        assert!(p.embed("zzz", Modality::Text).is_err());
    }

    #[test]
    fn frame_mask_fraction() {
        let mut r = rng::seeded(0);
        for contiguous in [true, false] {
            let m = frame_mask(3, 40, 0.1, contiguous, &mut r).unwrap();
            for row in m.to_vec2::<f64>().unwrap() {
                assert_eq!(row.iter().sum::<f64>(), 4.0);
            }
        }
        let m = frame_mask(2, 40, 0.0, true, &mut r).unwrap();
        assert_eq!(m.sum_all().unwrap().to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn zero_embedding_adapts_to_finite_output() {
        let cfg = AdaptorConfig {
            embed_dim: 4,
            hidden: 8,
            style_dim: 3,
            temperature: 0.07,
            labels: vec![],
            target_norm: Some(2.0),
            center: None,
        };
        let a = Adaptor::new(cfg, &Params::fresh(0)).unwrap();
        let e = SemanticEmbedding {
            id: "x".into(),
            modality: Modality::Image,
            dim: 4,
            values: vec![0.0; 4],
        };
        let out = a.adapt(&e).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        let bad = SemanticEmbedding { dim: 5, values: vec![0.0; 5], ..e };
        assert!(a.adapt(&bad).is_err());
    }
}
