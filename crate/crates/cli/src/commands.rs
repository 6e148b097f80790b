use std::path::{Path, PathBuf};
use std::time::Instant;

use mulsmo_core::control::Variant;
use mulsmo_core::eval::{
    evaluate, labelled, train_retrieval, EvalConfig, EvalInputs, EvalReport, RetrievalModel, RetrievalTrainConfig,
    StyleSource,
};
use mulsmo_core::guidance::GuidanceConfig;
use mulsmo_core::motion::dataset::{read_motion, synth_dataset, Dataset, Split};
use mulsmo_core::motion::synth::SynthConfig;
use mulsmo_core::motion::{MotionSequence, NormStats};
use mulsmo_core::pipeline::{sample, transfer, Bundle, BundlePaths, SampleRequest, StyleSignal, TransferConfig};
use mulsmo_core::rng;
use mulsmo_core::style::{
    read_embeddings, train_adaptor, train_classifier, write_embeddings, AdaptorTrainConfig, Classifier,
    ClassifierTrainConfig, Modality, OrthogonalProvider, SemanticEmbedding,
};
use mulsmo_core::training::{train_base, train_style_network, write_jsonl, BaseTrainConfig, StyleTrainConfig};
use mulsmo_core::vae::{train_vae, Vae, VaeTrainConfig};
use mulsmo_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::export::write_outputs;
use crate::layout::{require, Layout};
use crate::runlog::RunLog;
use crate::{ClassifierTarget, Cli, Command, Common, StyleArgs};

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn config_or<T: DeserializeOwned>(common: &Common, default: T) -> Result<T> {
    match &common.config {
        Some(p) => read_config(p),
        None => Ok(default),
    }
}

fn training_profile(common: &Common) -> Result<bool> {
    match common.profile.as_deref() {
        None | Some("mini") => Ok(false),
        Some("full") => Ok(true),
        Some(p) => Err(Error::config(format!("unknown training profile {p:?} (expected mini or full)"))),
    }
}

/// Guidance settings from a named profile or a JSON file.
pub fn guidance_profile(name: Option<&str>, default: &str) -> Result<GuidanceConfig> {
    let cfg = match name.unwrap_or(default) {
        "generation" => GuidanceConfig::generation(),
        "transfer" => GuidanceConfig::transfer(),
        "mini" => GuidanceConfig::mini(),
        path => GuidanceConfig::load(Path::new(path))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    require(&path.join(mulsmo_core::motion::dataset::MANIFEST_FILE), "dataset", "synth-data")?;
    Dataset::load(path)
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

pub fn dispatch(cli: Cli) -> Result<()> {
    std::env::set_var("RAYON_NUM_THREADS", cli.threads.max(1).to_string());
    let layout = Layout::new(&cli.data_dir);
    match cli.command {
        Command::SynthData { common } => synth_data(&layout, &common),
        Command::TrainVae { common } => cmd_train_vae(&layout, &common),
        Command::TrainBase { common } => cmd_train_base(&layout, &common),
        Command::TrainClassifier { common, target } => cmd_train_classifier(&layout, &common, target),
        Command::TrainStyle { common, variant } => cmd_train_style(&layout, &common, variant).map(|_| ()),
        Command::TrainAdaptor {
            common,
            variant,
            embeddings,
        } => cmd_train_adaptor(&layout, &common, variant, embeddings.as_deref()),
        Command::Generate {
            common,
            style,
            content,
            variant,
            frames,
            count,
        } => cmd_generate(&layout, &common, &style, &content, variant, frames, count),
        Command::Transfer {
            common,
            style,
            content_motion,
            content,
            variant,
            inversion_steps,
            refine,
        } => cmd_transfer(
            &layout,
            &common,
            &style,
            &content_motion,
            content.as_deref(),
            variant,
            inversion_steps,
            refine,
        ),
        Command::Evaluate {
            common,
            variant,
            style_source,
            n_samples,
        } => cmd_evaluate(&layout, &common, variant, style_source.into(), n_samples).map(|_| ()),
        Command::Ablate {
            common,
            variants,
            retrain,
            n_samples,
        } => cmd_ablate(&layout, &common, &variants, retrain, n_samples),
        Command::ReportTiming {
            common,
            variant,
            runs,
            frames,
        } => cmd_timing(&layout, &common, variant, runs, frames),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SynthDataConfig {
    pub style: SynthConfig,
    pub content: SynthConfig,
}

impl Default for SynthDataConfig {
    fn default() -> Self {
        Self {
            style: SynthConfig::default(),
            content: SynthConfig {
                samples_per_pair: 60,
                test_per_pair: 10,
                neutral: true,
                ..SynthConfig::default()
            },
        }
    }
}

fn synth_data(layout: &Layout, common: &Common) -> Result<()> {
    let mut cfg: SynthDataConfig = config_or(common, SynthDataConfig::default())?;
    if let Some(s) = common.seed {
        cfg.style.seed = s;
        cfg.content.seed = s;
    }
    cfg.style.validate()?;
    cfg.content.validate()?;
    if cfg.style.neutral || !cfg.content.neutral {
        return Err(Error::config("the style dataset must be styled and the content dataset neutral"));
    }
    let mut log = RunLog::start("synth-data", cfg.style.seed);
    log.config(&cfg)?;
    let out = common.out.clone().unwrap_or_else(|| layout.root.clone());
    let target = Layout::new(&out);
    for (dir, c) in [(target.style_data(), &cfg.style), (target.content_data(), &cfg.content)] {
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let m = synth_dataset(c, &dir)?;
        log::info!("wrote {} motions to {}", m.entries.len(), dir.display());
        log.output(&dir);
    }
    log.finish(&target.runs())?;
    Ok(())
}

fn cmd_train_vae(layout: &Layout, common: &Common) -> Result<()> {
    let mut cfg: VaeTrainConfig = config_or(common, VaeTrainConfig::default())?;
    if common.config.is_none() {
        cfg.full = training_profile(common)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let style = load_dataset(&layout.style_data())?;
    let content = load_dataset(&layout.content_data())?;
    let mut log = RunLog::start("train-vae", cfg.seed);
    log.config(&cfg)?;
    log.input(&layout.style_data());
    log.input(&layout.content_data());
    let (vae, epochs) = train_vae(&[&style, &content], &cfg)?;
    vae.save(&layout.vae(), &epochs)?;
    let log_path = layout.logs().join("vae.jsonl");
    write_jsonl(&log_path, &epochs)?;
    if let Some(last) = epochs.last() {
        log::info!("vae: final reconstruction {:.5}", last.recon);
    }
    log.output(&layout.vae());
    log.output(&log_path);
    log.finish(&layout.runs())?;
    Ok(())
}

fn load_vae(layout: &Layout) -> Result<Vae> {
    require(&layout.vae(), "VAE checkpoint", "train-vae")?;
    Ok(Vae::load(&layout.vae())?.0)
}

fn cmd_train_base(layout: &Layout, common: &Common) -> Result<()> {
    let mut cfg: BaseTrainConfig = config_or(common, BaseTrainConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let content = load_dataset(&layout.content_data())?;
    let vae = load_vae(layout)?;
    let mut log = RunLog::start("train-base", cfg.seed);
    log.config(&cfg)?;
    log.input(&layout.content_data());
    log.input(&layout.vae());
    let (base, epochs) = train_base(&content, &vae, &cfg)?;
    base.save(&layout.denoiser())?;
    let log_path = layout.logs().join("base.jsonl");
    write_jsonl(&log_path, &epochs)?;
    log.output(&layout.denoiser());
    log.output(&log_path);
    log.finish(&layout.runs())?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorTrainConfig {
    #[serde(default)]
    pub style: ClassifierTrainConfig,
    #[serde(default)]
    pub content: ClassifierTrainConfig,
    #[serde(default)]
    pub retrieval: RetrievalTrainConfig,
}

#[derive(Serialize)]
struct ClassifierSummary {
    target: &'static str,
    train_accuracy: f64,
    test_accuracy: f64,
}

fn accuracy(clf: &Classifier, motions: &[&MotionSequence], labels: &[usize]) -> Result<f64> {
    if motions.is_empty() {
        return Ok(0.0);
    }
    mulsmo_core::eval::recognition_accuracy(&clf.classify_motions(motions)?, labels, clf.num_classes())
}

fn cmd_train_classifier(layout: &Layout, common: &Common, target: ClassifierTarget) -> Result<()> {
    let mut cfg: EvaluatorTrainConfig = config_or(common, EvaluatorTrainConfig::default())?;
    if let Some(s) = common.seed {
        cfg.style.seed = s;
        cfg.content.seed = s;
        cfg.retrieval.seed = s;
    }
    let style = load_dataset(&layout.style_data())?;
    let content = load_dataset(&layout.content_data())?;
    if style.manifest.content_taxonomy != content.manifest.content_taxonomy {
        return Err(Error::Dataset("style and content datasets use different content taxonomies".into()));
    }
    let mut log = RunLog::start("train-classifier", cfg.style.seed);
    log.config(&cfg)?;
    log.input(&layout.style_data());
    log.input(&layout.content_data());
    let mut summaries = Vec::new();
    let both = [&style, &content];
    if matches!(target, ClassifierTarget::Style | ClassifierTarget::All) {
        let (m, l) = labelled(&[&style], Split::Train, false);
        let (clf, report) = train_classifier(&m, &l, style.manifest.style_taxonomy.clone(), style.manifest.stats.clone(), &cfg.style)?;
        let (tm, tl) = labelled(&[&style], Split::Test, false);
        summaries.push(ClassifierSummary {
            target: "style",
            train_accuracy: report.train_accuracy,
            test_accuracy: accuracy(&clf, &tm, &tl)?,
        });
        clf.save(&layout.classifier())?;
        log.output(&layout.classifier());
    }
    if matches!(target, ClassifierTarget::Content | ClassifierTarget::All) {
        let (m, l) = labelled(&both, Split::Train, true);
        let stats = NormStats::fit(m.iter().copied())?;
        let (clf, report) = train_classifier(&m, &l, style.manifest.content_taxonomy.clone(), stats, &cfg.content)?;
        let (tm, tl) = labelled(&both, Split::Test, true);
        summaries.push(ClassifierSummary {
            target: "content",
            train_accuracy: report.train_accuracy,
            test_accuracy: accuracy(&clf, &tm, &tl)?,
        });
        clf.save(&layout.content_classifier())?;
        log.output(&layout.content_classifier());
    }
    if matches!(target, ClassifierTarget::Retrieval | ClassifierTarget::All) {
        let (model, losses) = train_retrieval(&both, &cfg.retrieval)?;
        model.save(&layout.retrieval())?;
        let path = layout.logs().join("retrieval.jsonl");
        write_jsonl(&path, &losses)?;
        log.output(&layout.retrieval());
        log.output(&path);
    }
    let summary = layout.logs().join("classifiers.json");
    save_json(&summary, &summaries)?;
    for s in &summaries {
        log::info!("{} classifier: train {:.1}% test {:.1}%", s.target, s.train_accuracy, s.test_accuracy);
    }
    log.output(&summary);
    log.finish(&layout.runs())?;
    Ok(())
}

fn cmd_train_style(layout: &Layout, common: &Common, variant: Variant) -> Result<PathBuf> {
    let default = if training_profile(common)? {
        StyleTrainConfig::full(variant)
    } else {
        StyleTrainConfig::mini(variant)
    };
    let mut cfg: StyleTrainConfig = config_or(common, default)?;
    cfg.variant = variant;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    train_style_variant(layout, &cfg)
}

/// Trains one variant and writes its checkpoint and loss log.
pub fn train_style_variant(layout: &Layout, cfg: &StyleTrainConfig) -> Result<PathBuf> {
    let style = load_dataset(&layout.style_data())?;
    let content = load_dataset(&layout.content_data())?;
    let vae = load_vae(layout)?;
    require(&layout.denoiser(), "base denoiser checkpoint", "train-base")?;
    let base = mulsmo_core::denoiser::Denoiser::load(&layout.denoiser())?;
    let mut log = RunLog::start("train-style", cfg.seed);
    log.config(cfg)?;
    for p in [layout.style_data(), layout.content_data(), layout.vae(), layout.denoiser()] {
        log.input(&p);
    }
    let out = train_style_network(&style, &content, &base, &vae, cfg)?;
    let path = layout.style(cfg.variant);
    out.model.save(&path)?;
    let log_path = layout.logs().join(format!("style_{}.jsonl", cfg.variant.tag()));
    write_jsonl(&log_path, &out.log)?;
    log.output(&path);
    log.output(&log_path);
    log.finish(&layout.runs())?;
    Ok(path)
}

fn cmd_train_adaptor(layout: &Layout, common: &Common, variant: Variant, embeddings: Option<&Path>) -> Result<()> {
    let mut cfg: AdaptorTrainConfig = config_or(common, AdaptorTrainConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let style_path = layout.style(variant);
    require(&style_path, "style network checkpoint", "train-style")?;
    let model = mulsmo_core::pipeline::StyleModel::load(&style_path, Some(variant))?;
    let data = load_dataset(&layout.style_data())?;
    let labels = data.manifest.style_taxonomy.clone();
    let mut log = RunLog::start("train-adaptor", cfg.seed);
    log.config(&cfg)?;
    log.input(&style_path);
    log.input(&layout.style_data());

    let table = match embeddings {
        Some(p) => {
            log.input(p);
            read_embeddings(p)?
        }
        None if layout.embeddings().exists() => {
            log.input(&layout.embeddings());
            read_embeddings(&layout.embeddings())?
        }
        None => {
            let provider = OrthogonalProvider::new(&labels, OrthogonalProvider::DEFAULT_DIM, cfg.seed)?;
            let all = provider.all(Modality::Text);
            write_embeddings(&layout.embeddings(), &all)?;
            log.output(&layout.embeddings());
            all
        }
    };
    let mut ordered = Vec::with_capacity(labels.len());
    let mut style_embs = Vec::with_capacity(labels.len());
    for (s, label) in labels.iter().enumerate() {
        let e = table
            .iter()
            .find(|e| &e.id == label)
            .ok_or_else(|| Error::Dataset(format!("no embedding for style label {label:?}")))?;
        ordered.push(e.clone());
        let motions: Vec<&MotionSequence> = data
            .indices(Split::Train, &[])
            .into_iter()
            .filter(|&i| data.manifest.entries[i].style == s)
            .map(|i| &data.motions[i])
            .collect();
        let mut rows = Vec::new();
        for chunk in motions.chunks(64) {
            rows.push(model.embed_motions(chunk)?);
        }
        style_embs.push(candle_cat(&rows)?);
    }
    let (adaptor, report) = train_adaptor(labels, &ordered, &style_embs, &cfg)?;
    log::info!("adaptor retrieval top-1 {:.1}%", report.retrieval_top1);
    let path = layout.adaptor(variant);
    adaptor.save(&path)?;
    let log_path = layout.logs().join(format!("adaptor_{}.json", variant.tag()));
    save_json(&log_path, &report)?;
    log.output(&path);
    log.output(&log_path);
    log.finish(&layout.runs())?;
    Ok(())
}

fn candle_cat(rows: &[mulsmo_core::candle::Tensor]) -> Result<mulsmo_core::candle::Tensor> {
    Ok(mulsmo_core::candle::Tensor::cat(rows, 0)?)
}

/// Resolves the style flags into a signal; `None` when no flag is given.
fn style_signal(layout: &Layout, style: &StyleArgs) -> Result<Option<StyleSignal>> {
    if let Some(p) = &style.style_motion {
        return Ok(Some(StyleSignal::Motion(read_motion(p)?)));
    }
    if let Some(label) = &style.style_text {
        require(&layout.embeddings(), "style text embeddings", "train-adaptor")?;
        let table = read_embeddings(&layout.embeddings())?;
        let e = table
            .into_iter()
            .find(|e| &e.id == label && e.modality == Modality::Text)
            .ok_or_else(|| Error::config(format!("no text embedding for style label {label:?}")))?;
        return Ok(Some(StyleSignal::Embedding(e)));
    }
    if let Some(p) = &style.style_embedding {
        let mut table = read_embeddings(p)?;
        if table.len() != 1 {
            return Err(Error::config(format!("{} must hold exactly one embedding", p.display())));
        }
        return Ok(Some(StyleSignal::Embedding(table.remove(0))));
    }
    Ok(None)
}

/// Checkpoints needed for sampling with `signal`.
fn bundle_paths(layout: &Layout, variant: Variant, signal: Option<&StyleSignal>, guidance: &GuidanceConfig) -> Result<BundlePaths> {
    require(&layout.vae(), "VAE checkpoint", "train-vae")?;
    require(&layout.denoiser(), "base denoiser checkpoint", "train-base")?;
    let mut paths = BundlePaths {
        vae: layout.vae(),
        denoiser: layout.denoiser(),
        ..Default::default()
    };
    if let Some(s) = signal {
        require(&layout.style(variant), "style network checkpoint", "train-style")?;
        paths.style = Some(layout.style(variant));
        match s {
            StyleSignal::Motion(_) => {
                if guidance.classifier_strength() != 0.0 {
                    require(&layout.classifier(), "style classifier checkpoint", "train-classifier")?;
                    paths.classifier = Some(layout.classifier());
                }
            }
            StyleSignal::Embedding(_) => {
                require(&layout.adaptor(variant), "adaptor checkpoint", "train-adaptor")?;
                paths.adaptor = Some(layout.adaptor(variant));
            }
        }
    }
    Ok(paths)
}

fn log_bundle_inputs(log: &mut RunLog, paths: &BundlePaths) {
    log.input(&paths.vae);
    log.input(&paths.denoiser);
    for p in [&paths.style, &paths.classifier, &paths.adaptor].into_iter().flatten() {
        log.input(p);
    }
}

fn cmd_generate(
    layout: &Layout,
    common: &Common,
    style: &StyleArgs,
    content: &str,
    variant: Variant,
    frames: usize,
    count: usize,
) -> Result<()> {
    if count == 0 || frames < 2 {
        return Err(Error::config("need --count >= 1 and --frames >= 2"));
    }
    let guidance = guidance_profile(common.profile.as_deref(), "generation")?;
    let seed = common.seed.unwrap_or(0);
    let signal = style_signal(layout, style)?;
    let paths = bundle_paths(layout, variant, signal.as_ref(), &guidance)?;
    let bundle = Bundle::load(&paths, Some(variant))?;
    let mut log = RunLog::start("generate", seed);
    log.config(&guidance)?;
    log_bundle_inputs(&mut log, &paths);
    if let Some(p) = &style.style_motion {
        log.input(p);
    }
    let requests: Vec<SampleRequest> = (0..count)
        .map(|_| SampleRequest {
            text: Some(content.to_string()),
            style: signal.clone(),
        })
        .collect();
    let mut rng = rng::seeded(seed);
    let motions = sample(&bundle, &requests, &guidance, frames, &mut rng)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("generated"));
    for (i, m) in motions.iter().enumerate() {
        for p in write_outputs(&out, &format!("sample_{i:03}"), m)? {
            log.output(&p);
        }
    }
    log.finish(&out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_transfer(
    layout: &Layout,
    common: &Common,
    style: &StyleArgs,
    content_motion: &Path,
    content: Option<&str>,
    variant: Variant,
    inversion_steps: Option<usize>,
    refine: usize,
) -> Result<()> {
    let guidance = guidance_profile(common.profile.as_deref(), "transfer")?;
    let seed = common.seed.unwrap_or(0);
    let signal = style_signal(layout, style)?
        .ok_or_else(|| Error::config("transfer needs --style-motion, --style-text or --style-embedding"))?;
    let paths = bundle_paths(layout, variant, Some(&signal), &guidance)?;
    let bundle = Bundle::load(&paths, Some(variant))?;
    let source = read_motion(content_motion)?;
    let cfg = TransferConfig {
        guidance,
        inversion_steps,
        refine,
    };
    let mut log = RunLog::start("transfer", seed);
    log.config(&cfg)?;
    log_bundle_inputs(&mut log, &paths);
    log.input(content_motion);
    let mut rng = rng::seeded(seed);
    let motion = transfer(&bundle, &source, content, signal, &cfg, &mut rng)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("transferred"));
    for p in write_outputs(&out, "transfer", &motion)? {
        log.output(&p);
    }
    log.finish(&out)?;
    Ok(())
}

fn default_eval_config(common: &Common, source: StyleSource, n_samples: Option<usize>, frames: usize) -> Result<EvalConfig> {
    let mut cfg = match &common.config {
        Some(p) => read_config(p)?,
        None => {
            let mut c = EvalConfig::new(96, frames, guidance_profile(common.profile.as_deref(), "generation")?);
            c.style_source = source;
            c
        }
    };
    if common.config.is_some() {
        cfg.style_source = source;
    }
    if let Some(n) = n_samples {
        cfg.n_samples = n;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.guidance.validate()?;
    Ok(cfg)
}

/// Evaluates one variant (or the base model for [`StyleSource::None`]).
pub fn run_evaluation(layout: &Layout, variant: Variant, cfg: &EvalConfig, out: &Path) -> Result<EvalReport> {
    let data = load_dataset(&layout.style_data())?;
    require(&layout.classifier(), "style classifier checkpoint", "train-classifier")?;
    let style_classifier = Classifier::load(&layout.classifier())?;
    let content_classifier = if layout.content_classifier().exists() {
        Some(Classifier::load(&layout.content_classifier())?)
    } else {
        None
    };
    let retrieval = if layout.retrieval().exists() {
        Some(RetrievalModel::load(&layout.retrieval())?)
    } else {
        None
    };
    let probe = match cfg.style_source {
        StyleSource::None => None,
        StyleSource::Motion => Some(StyleSignal::Motion(data.motions[0].clone())),
        StyleSource::Text => Some(StyleSignal::Embedding(SemanticEmbedding {
            id: String::new(),
            modality: Modality::Text,
            dim: 1,
            values: vec![0.0],
        })),
    };
    let mut paths = bundle_paths(layout, variant, probe.as_ref(), &cfg.guidance)?;
    if paths.style.is_some() && cfg.guidance.classifier_strength() != 0.0 {
        paths.classifier = Some(layout.classifier());
    }
    let bundle = Bundle::load(&paths, Some(variant))?;
    let embeddings = match cfg.style_source {
        StyleSource::Text => {
            require(&layout.embeddings(), "style text embeddings", "train-adaptor")?;
            read_embeddings(&layout.embeddings())?
        }
        _ => Vec::new(),
    };
    let inputs = EvalInputs {
        bundle: &bundle,
        data: &data,
        style_classifier: &style_classifier,
        content_classifier: content_classifier.as_ref(),
        retrieval: retrieval.as_ref(),
        embeddings: &embeddings,
    };
    let mut log = RunLog::start("evaluate", cfg.seed);
    log.config(cfg)?;
    log_bundle_inputs(&mut log, &paths);
    let mut report = evaluate(&inputs, cfg)?;
    let mut hashes = vec![("vae", paths.vae.clone()), ("denoiser", paths.denoiser.clone()), ("style_classifier", layout.classifier())];
    for (name, p) in [("style", &paths.style), ("adaptor", &paths.adaptor)] {
        if let Some(p) = p {
            hashes.push((name, p.clone()));
        }
    }
    if content_classifier.is_some() {
        hashes.push(("content_classifier", layout.content_classifier()));
    }
    if retrieval.is_some() {
        hashes.push(("retrieval", layout.retrieval()));
    }
    for (name, p) in hashes {
        report.checkpoints.insert(name.to_string(), mulsmo_core::checkpoint::file_hash(&p)?);
    }
    let path = out.join("eval_report.json");
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.save(&path)?;
    log.output(&path);
    log.finish(out)?;
    Ok(report)
}

fn dataset_frames(layout: &Layout) -> usize {
    Dataset::load(&layout.style_data())
        .ok()
        .and_then(|d| d.motions.first().map(MotionSequence::frames))
        .unwrap_or(40)
}

fn cmd_evaluate(layout: &Layout, common: &Common, variant: Variant, source: StyleSource, n: Option<usize>) -> Result<EvalReport> {
    let cfg = default_eval_config(common, source, n, dataset_frames(layout))?;
    let out = common.out.clone().unwrap_or_else(|| layout.root.join("eval"));
    let report = run_evaluation(layout, variant, &cfg, &out)?;
    log::info!(
        "SRA {:.1}%  FID {:.3}  diversity {:.3}  foot skate {:.3}",
        report.sra,
        report.fid,
        report.diversity,
        report.foot_skate_ratio
    );
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub sra: f64,
    pub fid: f64,
    pub foot_skate_ratio: f64,
    pub diversity: f64,
    pub r_precision_top3: Option<f64>,
}

impl AblationRow {
    fn from_report(variant: &str, r: &EvalReport) -> Self {
        Self {
            variant: variant.to_string(),
            sra: r.sra,
            fid: r.fid,
            foot_skate_ratio: r.foot_skate_ratio,
            diversity: r.diversity,
            r_precision_top3: r.r_precision.map(|p| p[2]),
        }
    }
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("| Variant | SRA (%) | FID | Foot skate | Diversity | R-prec top-3 (%) |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let rp = r.r_precision_top3.map_or("-".to_string(), |v| format!("{v:.1}"));
        s.push_str(&format!(
            "| {} | {:.1} | {:.3} | {:.3} | {:.3} | {} |\n",
            r.variant, r.sra, r.fid, r.foot_skate_ratio, r.diversity, rp
        ));
    }
    s
}

fn cmd_ablate(layout: &Layout, common: &Common, variants: &[Variant], retrain: bool, n: Option<usize>) -> Result<()> {
    if variants.is_empty() {
        return Err(Error::config("no variants to ablate"));
    }
    let seed = common.seed.unwrap_or(0);
    let eval_common = Common {
        config: None,
        ..common.clone()
    };
    let mut cfg = default_eval_config(&eval_common, StyleSource::Motion, n, dataset_frames(layout))?;
    cfg.seed = seed;
    let out = common.out.clone().unwrap_or_else(|| layout.root.join("ablation"));
    let mut rows = Vec::new();
    for &v in variants {
        if retrain || !layout.style(v).exists() {
            let mut train: StyleTrainConfig = config_or(common, StyleTrainConfig::mini(v))?;
            train.variant = v;
            train.seed = seed;
            train_style_variant(layout, &train)?;
        }
        let report = run_evaluation(layout, v, &cfg, &out.join(v.tag()))?;
        rows.push(AblationRow::from_report(v.tag(), &report));
    }
    save_json(&out.join("ablation.json"), &rows)?;
    let table = ablation_table(&rows);
    std::fs::write(out.join("ablation.md"), &table).map_err(|e| Error::io(&out, e))?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    runs: usize,
    frames: usize,
    steps: usize,
    mean_seconds: f64,
    std_seconds: f64,
    per_run_seconds: Vec<f64>,
}

fn cmd_timing(layout: &Layout, common: &Common, variant: Variant, runs: usize, frames: usize) -> Result<()> {
    if runs == 0 {
        return Err(Error::config("--runs must be positive"));
    }
    let guidance = guidance_profile(common.profile.as_deref(), "generation")?;
    let data = load_dataset(&layout.style_data())?;
    let signal = StyleSignal::Motion(data.motions[0].clone());
    let paths = bundle_paths(layout, variant, Some(&signal), &guidance)?;
    let bundle = Bundle::load(&paths, Some(variant))?;
    let text = data.manifest.content_texts[0].clone();
    let mut rng = rng::seeded(common.seed.unwrap_or(0));
    let request = [SampleRequest {
        text: Some(text),
        style: Some(signal),
    }];
    sample(&bundle, &request, &guidance, frames, &mut rng)?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        sample(&bundle, &request, &guidance, frames, &mut rng)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / runs as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / runs as f64;
    let report = Timing {
        runs,
        frames,
        steps: guidance.steps,
        mean_seconds: mean,
        std_seconds: var.sqrt(),
        per_run_seconds: times,
    };
    let out = common.out.clone().unwrap_or_else(|| layout.root.join("timing"));
    save_json(&out.join("timing.json"), &report)?;
    println!("AITS {:.3} s (± {:.3}) over {runs} runs", report.mean_seconds, report.std_seconds);
    Ok(())
}
