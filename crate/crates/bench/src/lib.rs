//! Freshly initialized mini models for benchmarks.

use mulsmo_core::control::{Placement, StyleNetConfig, Variant};
use mulsmo_core::denoiser::{Denoiser, DenoiserConfig};
use mulsmo_core::motion::NormStats;
use mulsmo_core::nn::Params;
use mulsmo_core::pipeline::{Bundle, StyleCheckpoint, StyleModel};
use mulsmo_core::style::{Classifier, ClassifierConfig, StyleEncoderConfig};
use mulsmo_core::vae::{Vae, VaeConfig};
use mulsmo_core::Result;

pub const DIM: usize = 95;
pub const FRAMES: usize = 40;

pub fn vocab() -> Vec<String> {
    ["a", "person", "walks", "runs", "jumps", "turns", "forward"].map(String::from).to_vec()
}

/// Untrained bundle with a style network of `variant` and a style classifier.
pub fn mini_bundle(variant: Variant, seed: u64) -> Result<Bundle> {
    let stats = NormStats::identity(DIM);
    let vae = Vae::new(VaeConfig::mini(DIM), stats.clone(), &Params::fresh(seed))?;
    let (n_z, d_z) = vae.latent_shape();
    let base = Denoiser::new(DenoiserConfig::mini(n_z, d_z, vocab()), &Params::fresh(seed + 1))?;
    let net = StyleNetConfig {
        width: base.width(),
        heads: base.config.heads,
        blocks: base.blocks(),
        mlp_ratio: base.config.mlp_ratio,
        n_z,
        d_z,
        style_dim: 16,
        variant,
        placement: Placement::default(),
    };
    let meta = StyleCheckpoint {
        net,
        encoder: StyleEncoderConfig {
            dim: DIM,
            width: 32,
            heads: 4,
            style_dim: 16,
        },
        stats: stats.clone(),
        base_hash: String::new(),
        vae_hash: String::new(),
        training: serde_json::Value::Null,
    };
    let style = StyleModel::new(meta, &Params::fresh(seed + 2))?;
    let classifier = Classifier::new(
        ClassifierConfig {
            dim: DIM,
            hidden: 32,
            feature_dim: 16,
            kernel: 5,
            classes: (0..6).map(|i| format!("s{i}")).collect(),
            stats,
        },
        &Params::fresh(seed + 3),
    )?;
    let mut bundle = Bundle::new(vae, base)?;
    bundle.style = Some(style);
    bundle.classifier = Some(classifier);
    Ok(bundle)
}
