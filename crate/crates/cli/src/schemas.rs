//! JSON schemas of every config document the CLI accepts.

use mulsmo_core::eval::EvalConfig;
use mulsmo_core::guidance::GuidanceConfig;
use mulsmo_core::pipeline::TransferConfig;
use mulsmo_core::style::{AdaptorTrainConfig, SemanticEmbedding};
use mulsmo_core::training::{BaseTrainConfig, StyleTrainConfig};
use mulsmo_core::vae::VaeTrainConfig;
use schemars::schema_for;

use crate::commands::{EvaluatorTrainConfig, SynthDataConfig};

/// `(file name, pretty JSON)` for each shipped schema.
pub fn all() -> Vec<(&'static str, String)> {
    let docs = [
        ("synth_data.schema.json", schema_for!(SynthDataConfig)),
        ("train_vae.schema.json", schema_for!(VaeTrainConfig)),
        ("train_base.schema.json", schema_for!(BaseTrainConfig)),
        ("train_classifier.schema.json", schema_for!(EvaluatorTrainConfig)),
        ("train_style.schema.json", schema_for!(StyleTrainConfig)),
        ("train_adaptor.schema.json", schema_for!(AdaptorTrainConfig)),
        ("guidance.schema.json", schema_for!(GuidanceConfig)),
        ("transfer.schema.json", schema_for!(TransferConfig)),
        ("evaluate.schema.json", schema_for!(EvalConfig)),
        ("embedding.schema.json", schema_for!(SemanticEmbedding)),
    ];
    docs.into_iter()
        .map(|(name, s)| (name, serde_json::to_string_pretty(&s).expect("schema serializes") + "\n"))
        .collect()
}
