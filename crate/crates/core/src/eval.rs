//! Evaluation metrics, the text/motion retrieval model and the sampling
//! protocol that produces an evaluation report.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::guidance::GuidanceConfig;
use crate::motion::dataset::{Dataset, Split};
use crate::motion::{recover_joints, JointTrajectory, MotionSequence, NormStats, Skeleton, DT};
use crate::nn::{build_vocab, BagOfWords, ParamStore, Params};
use crate::pipeline::{sample_from, Bundle, SampleRequest, StyleSignal};
use crate::rng::{self, Rng};
use crate::style::{infonce_loss, Classifier, SemanticEmbedding, StyleEncoderConfig, StyleMotionEncoder};
use crate::{Error, Result, DTYPE};

/// Percentage of `predicted` labels equal to `intended`.
pub fn recognition_accuracy(predicted: &[usize], intended: &[usize], classes: usize) -> Result<f64> {
    if predicted.len() != intended.len() || predicted.is_empty() {
        return Err(Error::shape("accuracy needs equally long, non-empty label lists"));
    }
    if let Some(l) = predicted.iter().chain(intended).find(|&&l| l >= classes) {
        return Err(Error::Dataset(format!("label {l} outside the {classes}-class taxonomy")));
    }
    let hits = predicted.iter().zip(intended).filter(|(p, i)| p == i).count();
    Ok(100.0 * hits as f64 / predicted.len() as f64)
}

/// Style recognition accuracy of `motions` against their intended style labels.
pub fn sra(motions: &[&MotionSequence], intended: &[usize], classifier: &Classifier) -> Result<f64> {
    recognition_accuracy(&classifier.classify_motions(motions)?, intended, classifier.num_classes())
}

/// Content recognition accuracy with a classifier trained on content labels.
pub fn cra(motions: &[&MotionSequence], intended: &[usize], classifier: &Classifier) -> Result<f64> {
    recognition_accuracy(&classifier.classify_motions(motions)?, intended, classifier.num_classes())
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape("feature rows differ in length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

fn mean_and_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n.saturating_sub(1).max(1)) as f64;
    if n <= d {
        // Too few samples for a full-rank estimate: shrink towards a scaled identity.
        let alpha = d as f64 / (n + d) as f64;
        let scale = cov.trace() / d as f64;
        cov = cov * (1.0 - alpha) + DMatrix::identity(d, d) * (alpha * scale);
    }
    (mean, cov)
}

/// Square root of a symmetric positive semi-definite matrix; eigenvalues
/// below zero are clipped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    let roots = eig.eigenvalues.map(|l| {
        if l < -1e-8 * scale {
            log::warn!("clipping eigenvalue {l:e} of a covariance product");
        }
        l.max(0.0).sqrt()
    });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussians fitted to two feature sets.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("FID needs at least two samples per set"));
    }
    let (xa, xb) = (to_matrix(a)?, to_matrix(b)?);
    if xa.ncols() != xb.ncols() {
        return Err(Error::shape("FID feature sets differ in dimension"));
    }
    let (ma, ca) = mean_and_cov(&xa);
    let (mb, cb) = mean_and_cov(&xb);
    let sa = psd_sqrt(&ca);
    let cross = psd_sqrt(&(&sa * &cb * &sa)).trace();
    let value = (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean L2 distance over `n_pairs` random pairs of distinct samples.
pub fn diversity(features: &[Vec<f64>], n_pairs: usize, rng: &mut Rng) -> Result<f64> {
    let n = features.len();
    if n < 2 || n_pairs == 0 {
        return Err(Error::shape("diversity needs at least two samples and one pair"));
    }
    let mut sum = 0.0;
    for _ in 0..n_pairs {
        let i = rng::index(rng, n);
        let mut j = rng::index(rng, n - 1);
        if j >= i {
            j += 1;
        }
        sum += l2(&features[i], &features[j]);
    }
    Ok(sum / n_pairs as f64)
}

pub fn tensor_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DTYPE)?.to_vec2::<f64>()?)
}

/// Mean L2 distance between matched text and motion embeddings.
pub fn mm_dist(text: &[Vec<f64>], motion: &[Vec<f64>]) -> Result<f64> {
    if text.len() != motion.len() || text.is_empty() {
        return Err(Error::shape("mm_dist needs equally many text and motion embeddings"));
    }
    Ok(text.iter().zip(motion).map(|(a, b)| l2(a, b)).sum::<f64>() / text.len() as f64)
}

/// Top-1/2/3 retrieval precision in percent. Every text query ranks its own
/// motion against `pool - 1` distractor motions whose text differs from the
/// query's; ties are resolved in favour of the true motion.
pub fn r_precision(
    text: &[Vec<f64>],
    motion: &[Vec<f64>],
    labels: &[String],
    pool: usize,
    rng: &mut Rng,
) -> Result<[f64; 3]> {
    let n = text.len();
    if n < 2 || motion.len() != n || labels.len() != n || pool < 2 {
        return Err(Error::shape("r_precision needs at least two matched pairs and a pool of two"));
    }
    let mut warned = false;
    let mut hits = [0usize; 3];
    for i in 0..n {
        let candidates: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if candidates.len() < pool - 1 && !warned {
            log::warn!("only {} distractors available, retrieval pool shrinks below {pool}", candidates.len());
            warned = true;
        }
        let k = candidates.len().min(pool - 1);
        let picks = rng::permutation(rng, candidates.len());
        let d_true = l2(&text[i], &motion[i]);
        let closer = picks[..k]
            .iter()
            .filter(|&&p| l2(&text[i], &motion[candidates[p]]) < d_true)
            .count();
        for (top, h) in hits.iter_mut().enumerate() {
            if closer <= top {
                *h += 1;
            }
        }
    }
    Ok(hits.map(|h| 100.0 * h as f64 / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SkateThresholds {
    /// Foot height below which a foot counts as on the ground, metres.
    pub h_contact: f64,
    /// Horizontal speed above which a grounded foot is skating, m/s.
    pub v_skate: f64,
}

impl Default for SkateThresholds {
    fn default() -> Self {
        Self {
            h_contact: 0.05,
            v_skate: 0.5,
        }
    }
}

/// Fraction of frame transitions where any foot joint is low and moving
/// horizontally faster than the skate threshold.
pub fn foot_skate_ratio(traj: &JointTrajectory, feet: &[usize], th: SkateThresholds) -> Result<f64> {
    let l = traj.frames();
    if l < 2 {
        return Err(Error::shape("foot skating needs at least two frames"));
    }
    if let Some(&f) = feet.iter().find(|&&f| f >= traj.joints()) {
        return Err(Error::shape(format!("foot joint {f} out of range")));
    }
    let skating = (0..l - 1)
        .filter(|&t| {
            feet.iter().any(|&f| {
                let (a, b) = (traj.pos(t, f), traj.pos(t + 1, f));
                let speed = (b[0] - a[0]).hypot(b[2] - a[2]) / DT;
                a[1] < th.h_contact && speed > th.v_skate
            })
        })
        .count();
    Ok(skating as f64 / (l - 1) as f64)
}

/// Mean foot-skate ratio of feature-space motions.
pub fn mean_foot_skate(motions: &[&MotionSequence], th: SkateThresholds) -> Result<f64> {
    let mut sum = 0.0;
    for m in motions {
        let traj = recover_joints(m)?;
        let skel = Skeleton::for_joints(traj.joints())?;
        sum += foot_skate_ratio(&traj, &skel.foot_joints, th)?;
    }
    Ok(sum / motions.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    pub motion: StyleEncoderConfig,
    pub word_dim: usize,
    pub vocab: Vec<String>,
    pub stats: NormStats,
    pub temperature: f64,
}

/// Joint text/motion embedding used for MM-Dist and R-precision.
#[derive(Clone, Debug)]
pub struct RetrievalModel {
    pub config: RetrievalConfig,
    params: Params,
    text: BagOfWords,
    motion: StyleMotionEncoder,
}

fn unit_rows(x: &Tensor) -> Result<Tensor> {
    let n = x.sqr()?.sum_keepdim(1)?.sqrt()?.clamp(1e-12, f64::INFINITY)?;
    Ok(x.broadcast_div(&n)?)
}

impl RetrievalModel {
    pub fn new(config: RetrievalConfig, p: &Params) -> Result<Self> {
        Ok(Self {
            text: BagOfWords::new(config.vocab.clone(), config.word_dim, config.motion.style_dim, &p.pp("text"))?,
            motion: StyleMotionEncoder::new(config.motion.clone(), &p.pp("motion"))?,
            params: p.clone(),
            config,
        })
    }

    pub fn params(&self) -> ParamStore {
        self.params.store()
    }

    /// Unit-norm text embeddings `[B, E]`.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Tensor> {
        let t: Vec<Option<&str>> = texts.iter().map(|t| Some(*t)).collect();
        unit_rows(&self.text.forward(&t)?)
    }

    /// Unit-norm embeddings `[B, E]` of raw motions.
    pub fn embed_motions(&self, seqs: &[&MotionSequence]) -> Result<Tensor> {
        let mut out = Vec::new();
        for chunk in seqs.chunks(64) {
            let normed: Vec<MotionSequence> =
                chunk.iter().map(|s| self.config.stats.normalize(s)).collect::<Result<_>>()?;
            let x = MotionSequence::stack(&normed.iter().collect::<Vec<_>>())?;
            out.push(self.embed_normalized(&x)?);
        }
        Ok(Tensor::cat(&out, 0)?)
    }

    fn embed_normalized(&self, x: &Tensor) -> Result<Tensor> {
        unit_rows(&self.motion.forward(x, None)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, checkpoint::RETRIEVAL, &self.config, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let loaded = checkpoint::load::<RetrievalConfig>(path, checkpoint::RETRIEVAL)?;
        Self::new(loaded.config, &Params::from_tensors(loaded.tensors, false))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RetrievalTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub width: usize,
    pub embed_dim: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for RetrievalTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            lr: 2e-3,
            width: 32,
            embed_dim: 16,
            temperature: 0.07,
            seed: 0,
        }
    }
}

/// Contrastive text/motion training on the training splits of `datasets`.
/// Each step draws one motion per distinct text so that no batch holds
/// duplicate positives.
pub fn train_retrieval(datasets: &[&Dataset], config: &RetrievalTrainConfig) -> Result<(RetrievalModel, Vec<f64>)> {
    let mut by_text: BTreeMap<String, Vec<&MotionSequence>> = BTreeMap::new();
    for d in datasets {
        for i in d.indices(Split::Train, &[]) {
            by_text.entry(d.manifest.entries[i].content_text.clone()).or_default().push(&d.motions[i]);
        }
    }
    if by_text.len() < 2 {
        return Err(Error::Dataset("retrieval training needs at least two distinct texts".into()));
    }
    let all: Vec<&MotionSequence> = by_text.values().flatten().copied().collect();
    let stats = NormStats::fit(all.iter().copied())?;
    let texts: Vec<String> = by_text.keys().cloned().collect();
    let config_r = RetrievalConfig {
        motion: StyleEncoderConfig {
            dim: all[0].dim(),
            width: config.width,
            heads: 4,
            style_dim: config.embed_dim,
        },
        word_dim: 16,
        vocab: build_vocab(texts.iter().map(String::as_str)),
        stats: stats.clone(),
        temperature: config.temperature,
    };
    let params = Params::fresh(config.seed);
    let model = RetrievalModel::new(config_r, &params)?;
    let normed: Vec<Vec<MotionSequence>> = by_text
        .values()
        .map(|v| v.iter().map(|m| stats.normalize(m)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut opt = AdamW::new(
        params.store().vars(),
        ParamsAdamW {
            lr: config.lr,
            weight_decay: 1e-4,
            ..Default::default()
        },
    )?;
    let mut rng = rng::substream(config.seed, 1);
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let picks: Vec<&MotionSequence> = normed.iter().map(|v| &v[rng::index(&mut rng, v.len())]).collect();
        let x = MotionSequence::stack(&picks)?;
        let t = model.embed_texts(&text_refs)?;
        let m = model.embed_normalized(&x)?;
        let loss = infonce_loss(&t, &m, config.temperature, true)?;
        opt.backward_step(&loss)?;
        losses.push(loss.to_scalar::<f64>()?);
    }
    Ok((model, losses))
}

/// Motions of the chosen split with their style or content labels.
pub fn labelled<'a>(datasets: &[&'a Dataset], split: Split, content: bool) -> (Vec<&'a MotionSequence>, Vec<usize>) {
    let mut motions = Vec::new();
    let mut labels = Vec::new();
    for d in datasets {
        for i in d.indices(split, &[]) {
            let e = &d.manifest.entries[i];
            motions.push(&d.motions[i]);
            labels.push(if content { e.content } else { e.style });
        }
    }
    (motions, labels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum StyleSource {
    /// A reference motion of the intended style.
    #[default]
    Motion,
    /// The text embedding of the intended style label, through the adaptor.
    Text,
    /// No style control (base model only).
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub style_source: StyleSource,
    pub guidance: GuidanceConfig,
    pub frames: usize,
    /// Style groups excluded before pairing.
    #[serde(default)]
    pub exclude_groups: Vec<String>,
    #[serde(default)]
    pub skate: SkateThresholds,
    pub diversity_pairs: usize,
    pub r_precision_pool: usize,
    pub batch_size: usize,
}

impl EvalConfig {
    pub fn new(n_samples: usize, frames: usize, guidance: GuidanceConfig) -> Self {
        Self {
            n_samples,
            seed: 0,
            style_source: StyleSource::Motion,
            guidance,
            frames,
            exclude_groups: Vec::new(),
            skate: SkateThresholds::default(),
            diversity_pairs: 300,
            r_precision_pool: 32,
            batch_size: 16,
        }
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

/// Models and data an evaluation run draws on.
pub struct EvalInputs<'a> {
    pub bundle: &'a Bundle,
    /// Style dataset providing taxonomy, references and real features.
    pub data: &'a Dataset,
    pub style_classifier: &'a Classifier,
    pub content_classifier: Option<&'a Classifier>,
    pub retrieval: Option<&'a RetrievalModel>,
    /// Text embeddings of style labels, for [`StyleSource::Text`].
    pub embeddings: &'a [SemanticEmbedding],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub seed: u64,
    pub style_source: StyleSource,
    pub sra: f64,
    pub cra: Option<f64>,
    pub fid: f64,
    pub diversity: f64,
    pub real_diversity: f64,
    pub mm_dist: Option<f64>,
    pub r_precision: Option<[f64; 3]>,
    pub foot_skate_ratio: f64,
    pub skate_thresholds: SkateThresholds,
    pub feature_space: String,
    pub config_hash: String,
    #[serde(default)]
    pub checkpoints: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// One planned evaluation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub content: usize,
    pub style: usize,
    /// Dataset index of the style reference motion.
    pub reference: usize,
}

/// Random (content, style, reference) triples. References come from the test
/// split and, where possible, show a different content than the target.
pub fn plan_pairs(data: &Dataset, n: usize, exclude_groups: &[String], seed: u64) -> Result<Vec<EvalPair>> {
    let m = &data.manifest;
    let test = data.indices(Split::Test, exclude_groups);
    let styles: Vec<usize> = (0..m.style_taxonomy.len())
        .filter(|&s| test.iter().any(|&i| m.entries[i].style == s))
        .collect();
    if styles.is_empty() {
        return Err(Error::Dataset("no test-split style references left after group exclusion".into()));
    }
    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let mut rng = rng::substream(seed, 1 << 32 | k as u64);
        let content = rng::index(&mut rng, m.content_taxonomy.len());
        let style = styles[rng::index(&mut rng, styles.len())];
        let same: Vec<usize> = test.iter().copied().filter(|&i| m.entries[i].style == style).collect();
        let other: Vec<usize> = same.iter().copied().filter(|&i| m.entries[i].content != content).collect();
        let pool = if other.is_empty() { &same } else { &other };
        pairs.push(EvalPair {
            content,
            style,
            reference: pool[rng::index(&mut rng, pool.len())],
        });
    }
    Ok(pairs)
}

/// Generates one motion per pair; sample `k` uses noise stream `k` of `seed`.
pub fn generate_pairs(inputs: &EvalInputs, pairs: &[EvalPair], config: &EvalConfig) -> Result<Vec<MotionSequence>> {
    let m = &inputs.data.manifest;
    let (n_z, d_z) = inputs.bundle.vae.latent_shape();
    let mut out = Vec::with_capacity(pairs.len());
    for (b, chunk) in pairs.chunks(config.batch_size.max(1)).enumerate() {
        let mut requests = Vec::with_capacity(chunk.len());
        let mut noise = Vec::with_capacity(chunk.len());
        for (j, p) in chunk.iter().enumerate() {
            let k = b * config.batch_size.max(1) + j;
            let mut rng = rng::substream(config.seed, k as u64);
            noise.push(rng::normal_tensor(&mut rng, (n_z, d_z))?);
            let style = match config.style_source {
                StyleSource::None => None,
                StyleSource::Motion => Some(StyleSignal::Motion(inputs.data.motions[p.reference].clone())),
                StyleSource::Text => {
                    let label = &m.style_taxonomy[p.style];
                    let e = inputs
                        .embeddings
                        .iter()
                        .find(|e| &e.id == label)
                        .ok_or_else(|| Error::Dataset(format!("no text embedding for style {label:?}")))?;
                    Some(StyleSignal::Embedding(e.clone()))
                }
            };
            requests.push(SampleRequest {
                text: Some(m.content_texts[p.content].clone()),
                style,
            });
        }
        let z_t = Tensor::stack(&noise, 0)?;
        let mut rng = rng::substream(config.seed, 1 << 40 | b as u64);
        out.extend(sample_from(inputs.bundle, &requests, &z_t, &config.guidance, config.frames, &mut rng)?);
    }
    Ok(out)
}

/// Runs the sampling protocol and computes every metric.
pub fn evaluate(inputs: &EvalInputs, config: &EvalConfig) -> Result<EvalReport> {
    if config.n_samples == 0 {
        return Err(Error::config("n_samples must be positive"));
    }
    let m = &inputs.data.manifest;
    if inputs.style_classifier.config.classes != m.style_taxonomy {
        return Err(Error::Dataset("style classifier taxonomy differs from the dataset".into()));
    }
    if let Some(c) = inputs.content_classifier {
        if c.config.classes != m.content_taxonomy {
            return Err(Error::Dataset("content classifier taxonomy differs from the dataset".into()));
        }
    }
    let pairs = plan_pairs(inputs.data, config.n_samples, &config.exclude_groups, config.seed)?;
    let generated = generate_pairs(inputs, &pairs, config)?;
    let gen_refs: Vec<&MotionSequence> = generated.iter().collect();
    let styles: Vec<usize> = pairs.iter().map(|p| p.style).collect();
    let contents: Vec<usize> = pairs.iter().map(|p| p.content).collect();

    let clf = inputs.style_classifier;
    let gen_feats = clf.features_of(&gen_refs)?;
    let sra = recognition_accuracy(&crate::style::argmax_rows(&clf.head(&gen_feats)?)?, &styles, clf.num_classes())?;
    let cra = inputs.content_classifier.map(|c| cra(&gen_refs, &contents, c)).transpose()?;

    let real: Vec<&MotionSequence> = inputs
        .data
        .indices(Split::Test, &config.exclude_groups)
        .into_iter()
        .map(|i| &inputs.data.motions[i])
        .collect();
    let gen_rows = tensor_rows(&gen_feats)?;
    let real_rows = tensor_rows(&clf.features_of(&real)?)?;
    let mut rng = rng::substream(config.seed, 1 << 48);
    let fid = fid(&gen_rows, &real_rows)?;
    let diversity = diversity(&gen_rows, config.diversity_pairs, &mut rng)?;
    let real_diversity = self::diversity(&real_rows, config.diversity_pairs, &mut rng)?;

    let (mm, rp) = match inputs.retrieval {
        Some(r) => {
            let texts: Vec<&str> = contents.iter().map(|&c| m.content_texts[c].as_str()).collect();
            let t = tensor_rows(&r.embed_texts(&texts)?)?;
            let mo = tensor_rows(&r.embed_motions(&gen_refs)?)?;
            let labels: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
            (
                Some(mm_dist(&t, &mo)?),
                Some(r_precision(&t, &mo, &labels, config.r_precision_pool, &mut rng)?),
            )
        }
        None => (None, None),
    };
    Ok(EvalReport {
        n_samples: config.n_samples,
        seed: config.seed,
        style_source: config.style_source,
        sra,
        cra,
        fid,
        diversity,
        real_diversity,
        mm_dist: mm,
        r_precision: rp,
        foot_skate_ratio: mean_foot_skate(&gen_refs, config.skate)?,
        skate_thresholds: config.skate,
        feature_space: "style-classifier-penultimate".into(),
        config_hash: config.hash()?,
        checkpoints: BTreeMap::new(),
    })
}

/// Features `[N, d]` as a tensor, for callers holding plain rows.
pub fn rows_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let mut r = rng::seeded(1);
        let a: Vec<Vec<f64>> = (0..50).map(|_| rng::normal_vec(&mut r, 4)).collect();
        assert!(fid(&a, &a).unwrap().abs() < 1e-6);
    }

    #[test]
    fn fid_mean_shift_is_squared_distance() {
        let mut r = rng::seeded(2);
        let a: Vec<Vec<f64>> = (0..40).map(|_| rng::normal_vec(&mut r, 3)).collect();
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 1.0, v[1] - 2.0, v[2]]).collect();
        assert!((fid(&a, &b).unwrap() - 5.0).abs() < 1e-6);
    }

    #[test]
    fn skate_ratio_extremes() {
        let skel = Skeleton::mini();
        let frames = 10;
        let mut still = Vec::new();
        let mut slide = Vec::new();
        for t in 0..frames {
            for j in 0..skel.joints() {
                let mut p = skel.rest[j];
                p[1] = if skel.foot_joints.contains(&j) { 0.0 } else { p[1] };
                still.push(p);
                slide.push([p[0] + t as f64 * 0.1, p[1], p[2]]);
            }
        }
        let th = SkateThresholds::default();
        let a = JointTrajectory::new(frames, skel.joints(), still).unwrap();
        let b = JointTrajectory::new(frames, skel.joints(), slide).unwrap();
        assert_eq!(foot_skate_ratio(&a, &skel.foot_joints, th).unwrap(), 0.0);
        assert_eq!(foot_skate_ratio(&b, &skel.foot_joints, th).unwrap(), 1.0);
    }
}
