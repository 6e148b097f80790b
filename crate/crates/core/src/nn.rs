//! Parameter storage and the small set of layers shared by every network.
//!
//! Parameters are created from a seeded generator (never from the tensor
//! backend's global RNG) so that initialization is reproducible. A [`Params`]
//! handle is either trainable, in which case the returned tensors are tracked
//! variables, or frozen, in which case they are detached constants and receive
//! no gradient at all.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use candle_core::{Device, Module, Shape, Tensor, Var, D};
use candle_nn::Linear;
use sha2::{Digest, Sha256};

use crate::rng::{self, Rng};
use crate::{Error, Result, DTYPE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    Uniform(f64),
}

enum Source {
    Fresh(Rng),
    Loaded(HashMap<String, Tensor>),
}

struct State {
    vars: BTreeMap<String, Var>,
    source: Source,
    trainable: bool,
}

/// Hierarchical parameter namespace, cheap to clone.
#[derive(Clone)]
pub struct Params {
    state: Arc<Mutex<State>>,
    prefix: Option<String>,
}

impl std::fmt::Debug for Params {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Params").field("prefix", &self.prefix).finish_non_exhaustive()
    }
}

impl Params {
    /// Fresh trainable parameters drawn from `seed`.
    pub fn fresh(seed: u64) -> Self {
        Self::with_source(Source::Fresh(rng::seeded(seed)), true)
    }

    /// Parameters backed by previously saved tensors.
    pub fn from_tensors(tensors: HashMap<String, Tensor>, trainable: bool) -> Self {
        Self::with_source(Source::Loaded(tensors), trainable)
    }

    fn with_source(source: Source, trainable: bool) -> Self {
        Self {
            state: Arc::new(Mutex::new(State {
                vars: BTreeMap::new(),
                source,
                trainable,
            })),
            prefix: None,
        }
    }

    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        Self {
            state: self.state.clone(),
            prefix: Some(self.path(&name.to_string())),
        }
    }

    fn path(&self, name: &str) -> String {
        match &self.prefix {
            Some(p) => format!("{p}.{name}"),
            None => name.to_string(),
        }
    }

    pub fn trainable(&self) -> bool {
        self.state.lock().unwrap().trainable
    }

    pub fn get<S: Into<Shape>>(&self, shape: S, name: &str, init: Init) -> Result<Tensor> {
        let shape = shape.into();
        let path = self.path(name);
        let mut state = self.state.lock().unwrap();
        let trainable = state.trainable;
        if let Some(var) = state.vars.get(&path) {
            if var.shape() != &shape {
                return Err(Error::shape(format!(
                    "parameter {path} requested as {shape:?}, exists as {:?}",
                    var.shape()
                )));
            }
            return Ok(handle(var, trainable));
        }
        let tensor = match &mut state.source {
            Source::Fresh(rng) => init_tensor(rng, &shape, init)?,
            Source::Loaded(map) => {
                let t = map.get(&path).ok_or_else(|| Error::MissingParam(path.clone()))?;
                if t.shape() != &shape {
                    return Err(Error::shape(format!(
                        "stored parameter {path} has shape {:?}, model expects {shape:?}",
                        t.shape()
                    )));
                }
                t.to_dtype(DTYPE)?
            }
        };
        let var = Var::from_tensor(&tensor)?;
        let out = handle(&var, trainable);
        state.vars.insert(path, var);
        Ok(out)
    }

    /// Snapshot of every parameter created so far.
    pub fn store(&self) -> ParamStore {
        ParamStore {
            vars: self.state.lock().unwrap().vars.clone(),
        }
    }
}

fn handle(var: &Var, trainable: bool) -> Tensor {
    if trainable {
        var.as_tensor().clone()
    } else {
        var.as_detached_tensor()
    }
}

fn init_tensor(rng: &mut Rng, shape: &Shape, init: Init) -> Result<Tensor> {
    let n = shape.elem_count();
    let data: Vec<f64> = match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Normal(std) => rng::normal_vec(rng, n).into_iter().map(|v| v * std).collect(),
        Init::Uniform(bound) => (0..n).map(|_| rng::uniform(rng, -bound, bound)).collect(),
    };
    Ok(Tensor::from_vec(data, shape.clone(), &Device::Cpu)?.to_dtype(DTYPE)?)
}

/// Named collection of parameter variables.
#[derive(Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_detached_tensor()))
            .collect()
    }

    /// Subset of parameters whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            vars: self
                .vars
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in &self.vars {
            hasher.update(name.as_bytes());
            for d in var.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let values = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

pub fn linear(in_dim: usize, out_dim: usize, p: &Params) -> Result<Linear> {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let w = p.get((out_dim, in_dim), "weight", Init::Uniform(bound))?;
    let b = p.get(out_dim, "bias", Init::Uniform(bound))?;
    Ok(Linear::new(w, Some(b)))
}

/// Affine map whose weight and bias start at exactly zero.
pub fn zero_linear(in_dim: usize, out_dim: usize, p: &Params) -> Result<Linear> {
    let w = p.get((out_dim, in_dim), "weight", Init::Zeros)?;
    let b = p.get(out_dim, "bias", Init::Zeros)?;
    Ok(Linear::new(w, Some(b)))
}

/// Layer normalization over the last dimension, composed from differentiable ops.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize, p: &Params) -> Result<Self> {
        Ok(Self {
            gamma: p.get(dim, "gamma", Init::Ones)?,
            beta: p.get(dim, "beta", Init::Zeros)?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, p: &Params) -> Result<Self> {
        Ok(Self {
            fc1: linear(in_dim, hidden, &p.pp("fc1"))?,
            fc2: linear(hidden, out_dim, &p.pp("fc2"))?,
        })
    }
}

impl Module for Mlp {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttention {
    qkv: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(width: usize, heads: usize, p: &Params) -> Result<Self> {
        if width % heads != 0 {
            return Err(Error::config(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            qkv: linear(width, 3 * width, &p.pp("qkv"))?,
            out: linear(width, width, &p.pp("out"))?,
            heads,
        })
    }
}

impl Module for SelfAttention {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, t, w) = x.dims3()?;
        let hd = w / self.heads;
        let qkv = self.qkv.forward(x)?;
        let split = |i: usize| -> candle_core::Result<Tensor> {
            qkv.narrow(2, i * w, w)?
                .reshape((b, t, self.heads, hd))?
                .transpose(1, 2)?
                .contiguous()
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let y = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, w))?;
        self.out.forward(&y)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(width: usize, heads: usize, mlp_ratio: usize, p: &Params) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(width, &p.pp("ln1"))?,
            attn: SelfAttention::new(width, heads, &p.pp("attn"))?,
            ln2: LayerNorm::new(width, &p.pp("ln2"))?,
            mlp: Mlp::new(width, width * mlp_ratio, width, &p.pp("mlp"))?,
        })
    }
}

impl Module for TransformerBlock {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?)?)?;
        &x + self.mlp.forward(&self.ln2.forward(&x)?)?
    }
}

/// Temporal convolution over `[B, L, C]` with zero padding ("same" length),
/// expressed as shifted windows followed by a linear map.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    kernel: usize,
    proj: Linear,
}

impl TemporalConv {
    pub fn new(in_dim: usize, out_dim: usize, kernel: usize, p: &Params) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config("temporal kernel must be odd"));
        }
        Ok(Self {
            kernel,
            proj: linear(in_dim * kernel, out_dim, p)?,
        })
    }
}

impl Module for TemporalConv {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (_, l, _) = x.dims3()?;
        let pad = self.kernel / 2;
        let padded = x.pad_with_zeros(1, pad, pad)?;
        let windows = (0..self.kernel)
            .map(|k| padded.narrow(1, k, l))
            .collect::<candle_core::Result<Vec<_>>>()?;
        self.proj.forward(&Tensor::cat(&windows, 2)?)
    }
}

/// Sinusoidal encoding of scalar positions, `[n, dim]`.
pub fn sinusoidal(positions: &[f64], dim: usize) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &pos in positions {
        for i in 0..dim {
            let k = (i % half) as f64;
            let freq = (-(10_000f64.ln()) * k / half as f64).exp();
            let v = if i < half { (pos * freq).sin() } else { (pos * freq).cos() };
            data.push(v);
        }
    }
    Ok(Tensor::from_vec(data, (positions.len(), dim), &Device::Cpu)?.to_dtype(DTYPE)?)
}

/// Lower-case word tokens of a sentence.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Bag-of-words sentence embedder over a fixed vocabulary: mean of word
/// vectors followed by a linear map.
#[derive(Clone, Debug)]
pub struct BagOfWords {
    vocab: Vec<String>,
    table: Tensor,
    proj: Linear,
}

impl BagOfWords {
    pub fn new(vocab: Vec<String>, dim: usize, out_dim: usize, p: &Params) -> Result<Self> {
        let table = p.get((vocab.len().max(1), dim), "table", Init::Normal(0.5))?;
        Ok(Self {
            proj: linear(dim, out_dim, &p.pp("proj"))?,
            vocab,
            table,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Row-stochastic word-count matrix `[B, V]`; `None` rows stay zero.
    pub fn bag_matrix(&self, texts: &[Option<&str>]) -> Result<Tensor> {
        let v = self.vocab.len().max(1);
        let mut data = vec![0f64; texts.len() * v];
        for (row, text) in texts.iter().enumerate() {
            let Some(text) = text else { continue };
            let ids: Vec<usize> = tokenize(text)
                .iter()
                .filter_map(|w| self.vocab.binary_search(w).ok())
                .collect();
            if ids.is_empty() {
                return Err(Error::config(format!("no known words in text {text:?}")));
            }
            for id in &ids {
                data[row * v + id] += 1.0 / ids.len() as f64;
            }
        }
        Ok(Tensor::from_vec(data, (texts.len(), v), &Device::Cpu)?.to_dtype(DTYPE)?)
    }

    /// Embeds texts to `[B, out_dim]`. Rows for `None` are garbage and are
    /// expected to be replaced by the caller.
    pub fn forward(&self, texts: &[Option<&str>]) -> Result<Tensor> {
        let bags = self.bag_matrix(texts)?;
        Ok(self.proj.forward(&bags.matmul(&self.table)?)?)
    }
}

/// Sorted unique vocabulary over a set of sentences.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut words: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
    words.sort();
    words.dedup();
    words
}

/// Mask tensor `[B, 1]` with ones where `flags` is true.
pub fn row_mask(flags: &[bool]) -> Result<Tensor> {
    let data: Vec<f64> = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(data, (flags.len(), 1), &Device::Cpu)?.to_dtype(DTYPE)?)
}

/// Per-row scalar coefficients broadcastable against `[B, ...]`.
pub fn batch_scalars(values: &[f64], rank: usize) -> Result<Tensor> {
    let mut shape = vec![values.len()];
    shape.extend(std::iter::repeat(1).take(rank.saturating_sub(1)));
    Ok(Tensor::from_vec(values.to_vec(), shape, &Device::Cpu)?.to_dtype(DTYPE)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_params_are_reproducible() {
        let a = Params::fresh(3);
        let b = Params::fresh(3);
        let ta = linear(4, 5, &a.pp("l")).unwrap();
        let tb = linear(4, 5, &b.pp("l")).unwrap();
        let da = ta.weight().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let db = tb.weight().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(da, db);
        assert_eq!(a.store().hash().unwrap(), b.store().hash().unwrap());
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let p = Params::fresh(1);
        let l = linear(3, 2, &p).unwrap();
        let frozen = Params::from_tensors(p.store().tensors().into_iter().collect(), false);
        let lf = linear(3, 2, &frozen).unwrap();
        let x = Tensor::ones((1, 3), DTYPE, &Device::Cpu).unwrap();
        let grads = lf.forward(&x).unwrap().sum_all().unwrap().backward().unwrap();
        for var in frozen.store().vars() {
            assert!(grads.get(var.as_tensor()).is_none());
        }
        let grads = l.forward(&x).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(grads.get(l.weight()).is_some());
    }

    #[test]
    fn layer_norm_matches_definition() {
        let p = Params::fresh(0);
        let ln = LayerNorm::new(4, &p).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 6.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean = 3.0;
        let var: f64 = [4.0, 1.0, 0.0, 9.0].iter().sum::<f64>() / 4.0;
        for (i, v) in [1.0, 2.0, 3.0, 6.0].iter().enumerate() {
            let expect = (v - mean) / (var + 1e-5f64).sqrt();
            assert!((y[0][i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_conv_preserves_length() {
        let p = Params::fresh(0);
        let conv = TemporalConv::new(3, 5, 5, &p).unwrap();
        let x = Tensor::ones((2, 7, 3), DTYPE, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[2, 7, 5]);
    }

    #[test]
    fn bag_of_words_rejects_unknown_sentences() {
        let p = Params::fresh(0);
        let bow = BagOfWords::new(build_vocab(["a person walks"]), 4, 4, &p).unwrap();
        assert!(bow.forward(&[Some("a person walks")]).is_ok());
        assert!(bow.forward(&[Some("zzz")]).is_err());
    }
}
