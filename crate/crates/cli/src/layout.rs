//! On-disk layout of a data root.

use std::path::{Path, PathBuf};

use mulsmo_core::control::Variant;
use mulsmo_core::{Error, Result};

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn style_data(&self) -> PathBuf {
        self.root.join("datasets/style")
    }

    pub fn content_data(&self) -> PathBuf {
        self.root.join("datasets/content")
    }

    fn ckpt(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn vae(&self) -> PathBuf {
        self.ckpt("vae.safetensors")
    }

    pub fn denoiser(&self) -> PathBuf {
        self.ckpt("denoiser.safetensors")
    }

    pub fn classifier(&self) -> PathBuf {
        self.ckpt("style_classifier.safetensors")
    }

    pub fn content_classifier(&self) -> PathBuf {
        self.ckpt("content_classifier.safetensors")
    }

    pub fn retrieval(&self) -> PathBuf {
        self.ckpt("retrieval.safetensors")
    }

    pub fn style(&self, v: Variant) -> PathBuf {
        self.ckpt(&format!("style_{}.safetensors", v.tag()))
    }

    pub fn adaptor(&self, v: Variant) -> PathBuf {
        self.ckpt(&format!("adaptor_{}.safetensors", v.tag()))
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings/style_text.jsonl")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
}

/// Fails with the command that produces `path` when it does not exist.
pub fn require(path: &Path, what: &str, command: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingDependency {
            what: format!("{what} ({})", path.display()),
            command,
        })
    }
}
