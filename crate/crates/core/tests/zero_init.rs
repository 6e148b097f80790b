use mulsmo_core::control::{Placement, StyleNetConfig, Variant};
use mulsmo_core::denoiser::{Denoiser, DenoiserConfig};
use mulsmo_core::motion::NormStats;
use mulsmo_core::nn::Params;
use mulsmo_core::pipeline::{StyleCheckpoint, StyleModel};
use mulsmo_core::rng;
use mulsmo_core::style::StyleEncoderConfig;
use proptest::prelude::*;

fn models(variant: Variant, placement: Placement, seed: u64) -> (Denoiser, StyleModel) {
    let vocab = ["a", "person", "walks"].map(String::from).to_vec();
    let base = Denoiser::new(DenoiserConfig::mini(2, 8, vocab), &Params::fresh(seed)).unwrap();
    let meta = StyleCheckpoint {
        net: StyleNetConfig {
            width: base.width(),
            heads: base.config.heads,
            blocks: base.blocks(),
            mlp_ratio: base.config.mlp_ratio,
            n_z: 2,
            d_z: 8,
            style_dim: 8,
            variant,
            placement,
        },
        encoder: StyleEncoderConfig {
            dim: 95,
            width: 16,
            heads: 2,
            style_dim: 8,
        },
        stats: NormStats::identity(95),
        base_hash: String::new(),
        vae_hash: String::new(),
        training: serde_json::Value::Null,
    };
    let style = StyleModel::new(meta, &Params::fresh(seed ^ 0x5eed)).unwrap();
    (base, style)
}

fn variants() -> impl Strategy<Value = (Variant, Placement)> {
    (prop::sample::select(Variant::ALL.to_vec()), prop::sample::select(vec![Placement::PreBlock, Placement::Literal]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fresh_style_network_reproduces_the_base((variant, placement) in variants(), seed in 0u64..1000, t in 1usize..=1000, with_text in any::<bool>()) {
        let (base, style) = models(variant, placement, seed);
        let mut r = rng::seeded(seed);
        let z = rng::normal_tensor(&mut r, (3, 2, 8)).unwrap();
        let s = rng::normal_tensor(&mut r, (3, 8)).unwrap();
        let texts = vec![if with_text { Some("a person walks") } else { None }; 3];
        let c = base.conditioning(&[t; 3], &texts).unwrap();
        let styled = style.eps(&base, &z, &c, &s).unwrap();
        let plain = base.forward(&z, &[t; 3], &texts).unwrap();
        let diff = (styled - plain).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap();
        prop_assert_eq!(diff, 0.0);
    }
}
