//! On-disk motion files and the dataset manifest.
//!
//! A motion `<name>.mot` is a raw little-endian `f32` row-major `L x D` array
//! with a `<name>.mot.json` sidecar `{frames, dim, joints, fps}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{self, SynthConfig};
use super::{validate_motion, FeatureLayout, MotionSequence, NormStats, FPS};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSidecar {
    pub frames: usize,
    pub dim: usize,
    pub joints: usize,
    pub fps: f64,
}

/// Path of the JSON sidecar that accompanies a motion file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_motion(path: &Path, seq: &MotionSequence) -> Result<()> {
    let layout = FeatureLayout::from_dim(seq.dim())?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes: Vec<u8> = seq.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = MotionSidecar {
        frames: seq.frames(),
        dim: seq.dim(),
        joints: layout.joints,
        fps: FPS,
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn read_motion(path: &Path) -> Result<MotionSequence> {
    let side = sidecar_path(path);
    let meta: MotionSidecar =
        serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    if FeatureLayout::new(meta.joints).dim() != meta.dim {
        return Err(Error::Dataset(format!(
            "{}: dim {} does not match {} joints",
            side.display(),
            meta.dim,
            meta.joints
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != meta.frames * meta.dim * 4 {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, sidecar declares {}x{} f32",
            path.display(),
            bytes.len(),
            meta.frames,
            meta.dim
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    MotionSequence::new(meta.frames, meta.dim, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub content: usize,
    pub content_text: String,
    pub style: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema: u32,
    pub fps: f64,
    pub joints: usize,
    pub dim: usize,
    pub style_taxonomy: Vec<String>,
    /// Group tag (CHAR, PER, EMO, ACT, MOT, OBJ) of each style.
    pub style_groups: Vec<String>,
    pub content_taxonomy: Vec<String>,
    pub content_texts: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Normalization statistics fitted on the training split.
    pub stats: NormStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthConfig>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dataset(m));
        if self.schema != MANIFEST_SCHEMA {
            return bad(format!("unsupported manifest schema {}", self.schema));
        }
        if FeatureLayout::new(self.joints).dim() != self.dim {
            return bad(format!("dim {} does not match {} joints", self.dim, self.joints));
        }
        if self.stats.dim() != self.dim {
            return bad(format!("stats have dimension {}, data {}", self.stats.dim(), self.dim));
        }
        if self.style_groups.len() != self.style_taxonomy.len() {
            return bad("style_groups and style_taxonomy lengths differ".into());
        }
        if self.content_texts.len() != self.content_taxonomy.len() {
            return bad("content_texts and content_taxonomy lengths differ".into());
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.style >= self.style_taxonomy.len() {
                return bad(format!("entry {i}: style id {} out of range", e.style));
            }
            if e.content >= self.content_taxonomy.len() {
                return bad(format!("entry {i}: content id {} out of range", e.content));
            }
        }
        Ok(())
    }

    pub fn style_id(&self, name: &str) -> Option<usize> {
        self.style_taxonomy.iter().position(|s| s == name)
    }

    pub fn content_id(&self, name_or_text: &str) -> Option<usize> {
        self.content_taxonomy
            .iter()
            .position(|s| s == name_or_text)
            .or_else(|| self.content_texts.iter().position(|s| s == name_or_text))
    }
}

/// A manifest with every motion loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub motions: Vec<MotionSequence>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let manifest: DatasetManifest =
            serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        manifest.validate()?;
        let mut motions = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let seq = read_motion(&root.join(&e.file))?;
            let report = validate_motion(&seq, manifest.joints);
            if !report.is_valid() {
                return Err(Error::Dataset(format!("{}: {:?}", e.file, report.issues)));
            }
            motions.push(seq);
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            motions,
        })
    }

    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }

    /// Indices of entries in `split`, optionally excluding style groups.
    pub fn indices(&self, split: Split, exclude_groups: &[String]) -> Vec<usize> {
        self.manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .filter(|(_, e)| !exclude_groups.contains(&self.manifest.style_groups[e.style]))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn normalized(&self, i: usize) -> Result<MotionSequence> {
        self.manifest.stats.normalize(&self.motions[i])
    }
}

/// Writes the procedural dataset under `out` and returns its manifest.
pub fn synth_dataset(config: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    let samples = synth::generate(config)?;
    let names = synth::content_names(config.n_content);
    let (styles, groups) = config.styles();
    let texts = synth::content_texts(config.n_content);
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let file = format!("motions/{}_{}_{:03}.mot", names[s.content], styles[s.style], s.index);
        write_motion(&out.join(&file), &s.motion)?;
        entries.push(ManifestEntry {
            file,
            content: s.content,
            content_text: texts[s.content].clone(),
            style: s.style,
            split: if s.test { Split::Test } else { Split::Train },
        });
    }
    let stats = NormStats::fit(samples.iter().filter(|s| !s.test).map(|s| &s.motion))?;
    let dim = samples[0].motion.dim();
    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA,
        fps: FPS,
        joints: config.joints,
        dim,
        style_taxonomy: styles,
        style_groups: groups,
        content_taxonomy: names,
        content_texts: texts,
        entries,
        stats,
        generator: Some(config.clone()),
    };
    write_manifest(&manifest, out)?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(manifest)?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motion_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..3 * 95).map(|i| (i as f32 * 0.25) as f64).collect();
        let seq = MotionSequence::new(3, 95, data).unwrap();
        let path = dir.path().join("a.mot");
        write_motion(&path, &seq).unwrap();
        assert_eq!(read_motion(&path).unwrap(), seq);
        assert_eq!(fs::metadata(&path).unwrap().len(), 3 * 95 * 4);
    }

    #[test]
    fn truncated_motion_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mot");
        write_motion(&path, &MotionSequence::zeros(3, 95)).unwrap();
        fs::write(&path, [0u8; 10]).unwrap();
        assert!(read_motion(&path).is_err());
    }
}
