//! Motion representation: per-frame root-velocity features, skeletons, joint
//! recovery, normalization and the procedural stylized-motion dataset.
//!
//! Frame layout for a skeleton with `J` joints (`D = 12J - 1`):
//!
//! ```text
//! [0]                     root angular velocity about +y (rad/s)
//! [1..3]                  root linear velocity, x/z in the root heading frame (m/s)
//! [3]                     root height (m)
//! [4 .. 4+3(J-1)]         joint positions relative to the root, heading frame, y absolute
//! [.. + 6(J-1)]           joint rotations, 6-D continuous representation
//! [.. + 3J]               joint velocities in the heading frame (m/s)
//! [D-4 .. D]              foot contacts (left ankle, left toe, right ankle, right toe)
//! ```

pub mod dataset;
pub mod features;
pub mod synth;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, DTYPE};

pub use features::{encode_joints, recover_joints};

pub const FPS: f64 = 20.0;
pub const DT: f64 = 1.0 / FPS;

/// Channel offsets of the feature layout for a given joint count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub joints: usize,
}

impl FeatureLayout {
    pub const ROOT_ROT_VEL: usize = 0;
    pub const ROOT_LIN_VEL: usize = 1;
    pub const ROOT_Y: usize = 3;

    pub fn new(joints: usize) -> Self {
        Self { joints }
    }

    pub fn from_dim(dim: usize) -> Result<Self> {
        if (dim + 1) % 12 != 0 || dim < 23 {
            return Err(Error::shape(format!("{dim} is not a valid feature dimension (12J-1)")));
        }
        Ok(Self::new((dim + 1) / 12))
    }

    pub fn dim(&self) -> usize {
        12 * self.joints - 1
    }

    /// Root-relative position of joint `j` (1-based over non-root joints).
    pub fn ric(&self, j: usize) -> usize {
        4 + 3 * (j - 1)
    }

    pub fn rot(&self, j: usize) -> usize {
        4 + 3 * (self.joints - 1) + 6 * (j - 1)
    }

    pub fn vel(&self, j: usize) -> usize {
        4 + 9 * (self.joints - 1) + 3 * j
    }

    pub fn contacts(&self) -> usize {
        self.dim() - 4
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl MotionSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::shape(format!(
                "{} values for a {frames}x{dim} motion",
                data.len()
            )));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.dim + c]
    }

    pub fn set(&mut self, t: usize, c: usize, v: f64) {
        self.data[t * self.dim + c] = v;
    }

    /// `[L, D]` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), (self.frames, self.dim), &Device::Cpu)?
            .to_dtype(DTYPE)?)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (frames, dim) = t.dims2()?;
        let data = t.to_dtype(DTYPE)?.flatten_all()?.to_vec1::<f64>()?;
        Self::new(frames, dim, data)
    }

    /// Splits a `[B, L, D]` tensor into sequences.
    pub fn batch_from_tensor(t: &Tensor) -> Result<Vec<Self>> {
        let b = t.dim(0)?;
        (0..b).map(|i| Self::from_tensor(&t.get(i)?)).collect()
    }

    /// Stacks equal-shape sequences into `[B, L, D]`.
    pub fn stack(seqs: &[&MotionSequence]) -> Result<Tensor> {
        let first = seqs.first().ok_or_else(|| Error::shape("empty motion batch"))?;
        let (l, d) = (first.frames, first.dim);
        let mut data = Vec::with_capacity(seqs.len() * l * d);
        for s in seqs {
            if s.frames != l || s.dim != d {
                return Err(Error::shape("motions in a batch must share L and D"));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor::from_vec(data, (seqs.len(), l, d), &Device::Cpu)?.to_dtype(DTYPE)?)
    }

    /// Frames in reverse temporal order.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        for t in 0..self.frames {
            out.row_mut(t).copy_from_slice(self.row(self.frames - 1 - t));
        }
        out
    }

    /// Snaps the contact channels to {0, 1}.
    pub fn binarize_contacts(&mut self) -> Result<()> {
        let c0 = FeatureLayout::from_dim(self.dim)?.contacts();
        for t in 0..self.frames {
            for c in c0..c0 + 4 {
                let v = self.get(t, c);
                self.set(t, c, if v >= 0.5 { 1.0 } else { 0.0 });
            }
        }
        Ok(())
    }
}

/// World-space joint positions, `[L x J x 3]`, metres.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTrajectory {
    frames: usize,
    joints: usize,
    positions: Vec<[f64; 3]>,
}

impl JointTrajectory {
    pub fn new(frames: usize, joints: usize, positions: Vec<[f64; 3]>) -> Result<Self> {
        if positions.len() != frames * joints {
            return Err(Error::shape(format!(
                "{} positions for {frames} frames x {joints} joints",
                positions.len()
            )));
        }
        Ok(Self {
            frames,
            joints,
            positions,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn pos(&self, t: usize, j: usize) -> [f64; 3] {
        self.positions[t * self.joints + j]
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn max_abs_diff(&self, other: &JointTrajectory) -> f64 {
        self.positions
            .iter()
            .zip(&other.positions)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0, f64::max)
    }
}

/// Kinematic tree with rest pose (y up, +z forward, +x to the body's left).
#[derive(Clone, Debug)]
pub struct Skeleton {
    pub name: &'static str,
    pub parents: Vec<Option<usize>>,
    pub rest: Vec<[f64; 3]>,
    /// Left ankle, left toe, right ankle, right toe.
    pub foot_joints: [usize; 4],
    /// Index of each joint in the 22-joint procedural rig.
    pub rig_index: Vec<usize>,
}

const RIG_PARENTS: [i32; 22] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19];

pub(crate) const RIG_REST: [[f64; 3]; 22] = [
    [0.0, 0.93, 0.0],     // pelvis
    [0.09, 0.84, 0.0],    // l_hip
    [-0.09, 0.84, 0.0],   // r_hip
    [0.0, 1.03, -0.01],   // spine1
    [0.10, 0.48, 0.01],   // l_knee
    [-0.10, 0.48, 0.01],  // r_knee
    [0.0, 1.16, -0.01],   // spine2
    [0.10, 0.08, -0.02],  // l_ankle
    [-0.10, 0.08, -0.02], // r_ankle
    [0.0, 1.22, 0.0],     // spine3
    [0.11, 0.02, 0.11],   // l_toe
    [-0.11, 0.02, 0.11],  // r_toe
    [0.0, 1.45, 0.0],     // neck
    [0.07, 1.37, 0.0],    // l_collar
    [-0.07, 1.37, 0.0],   // r_collar
    [0.0, 1.56, 0.04],    // head
    [0.18, 1.40, 0.0],    // l_shoulder
    [-0.18, 1.40, 0.0],   // r_shoulder
    [0.20, 1.12, 0.0],    // l_elbow
    [-0.20, 1.12, 0.0],   // r_elbow
    [0.21, 0.86, 0.02],   // l_wrist
    [-0.21, 0.86, 0.02],  // r_wrist
];

impl Skeleton {
    /// The 22-joint body (D = 263).
    pub fn full() -> Self {
        Self {
            name: "full22",
            parents: RIG_PARENTS
                .iter()
                .map(|&p| (p >= 0).then_some(p as usize))
                .collect(),
            rest: RIG_REST.to_vec(),
            foot_joints: [7, 10, 8, 11],
            rig_index: (0..22).collect(),
        }
    }

    /// Reduced 8-joint body for fast experiments (D = 95): pelvis, ankles,
    /// toes, head and wrists.
    pub fn mini() -> Self {
        let rig_index = vec![0, 7, 10, 8, 11, 15, 20, 21];
        Self {
            name: "mini8",
            parents: vec![None, Some(0), Some(1), Some(0), Some(3), Some(0), Some(5), Some(5)],
            rest: rig_index.iter().map(|&i| RIG_REST[i]).collect(),
            foot_joints: [1, 2, 3, 4],
            rig_index,
        }
    }

    pub fn for_joints(joints: usize) -> Result<Self> {
        match joints {
            22 => Ok(Self::full()),
            8 => Ok(Self::mini()),
            j => Err(Error::config(format!("no built-in skeleton with {j} joints (use 8 or 22)"))),
        }
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.joints())
    }

    /// Joints belonging to the arms (wrists and, when present, elbows).
    pub fn arm_joints(&self) -> Vec<usize> {
        self.rig_index
            .iter()
            .enumerate()
            .filter(|(_, &r)| matches!(r, 18..=21))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    Empty,
    DimensionMismatch { expected: usize, found: usize },
    NonFinite { frame: usize, channel: usize },
    NonBinaryContact { frame: usize, channel: usize, value: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks shape, finiteness and contact-flag binarity. Never fails; problems
/// are reported.
pub fn validate_motion(seq: &MotionSequence, joints: usize) -> ValidationReport {
    let mut issues = Vec::new();
    let layout = FeatureLayout::new(joints);
    if seq.frames() == 0 {
        issues.push(ValidationIssue::Empty);
    }
    if seq.dim() != layout.dim() {
        issues.push(ValidationIssue::DimensionMismatch {
            expected: layout.dim(),
            found: seq.dim(),
        });
    }
    for t in 0..seq.frames() {
        for (c, v) in seq.row(t).iter().enumerate() {
            if !v.is_finite() {
                issues.push(ValidationIssue::NonFinite { frame: t, channel: c });
            }
        }
        if seq.dim() == layout.dim() {
            let c0 = layout.contacts();
            for c in c0..c0 + 4 {
                let v = seq.get(t, c);
                if v.is_finite() && v != 0.0 && v != 1.0 {
                    issues.push(ValidationIssue::NonBinaryContact {
                        frame: t,
                        channel: c,
                        value: v,
                    });
                }
            }
        }
    }
    ValidationReport { issues }
}

/// Per-dimension feature statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Builds stats, clamping degenerate standard deviations to [`STD_FLOOR`].
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::shape("mean and std lengths differ"));
        }
        let std = std
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if s < STD_FLOOR {
                    log::warn!("feature dimension {i} has std {s:e}; clamped to {STD_FLOOR:e}");
                    STD_FLOOR
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation over every frame of `seqs`.
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a MotionSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        let seqs: Vec<_> = seqs.into_iter().collect();
        for s in &seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.dim()];
                sq = vec![0.0; s.dim()];
            }
            if s.dim() != sum.len() {
                return Err(Error::shape("sequences disagree on feature dimension"));
            }
            for t in 0..s.frames() {
                for (c, v) in s.row(t).iter().enumerate() {
                    sum[c] += v;
                }
            }
            n += s.frames();
        }
        if n == 0 {
            return Err(Error::Dataset("cannot fit statistics on an empty set".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for s in &seqs {
            for t in 0..s.frames() {
                for (c, v) in s.row(t).iter().enumerate() {
                    sq[c] += (v - mean[c]).powi(2);
                }
            }
        }
        let std = sq.iter().map(|s| (s / n as f64).sqrt()).collect();
        Self::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, seq: &MotionSequence) -> Result<()> {
        if seq.dim() != self.dim() {
            return Err(Error::shape(format!(
                "stats have dimension {}, motion has {}",
                self.dim(),
                seq.dim()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        self.check(seq)?;
        let mut out = seq.clone();
        for t in 0..seq.frames() {
            for (c, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c].max(STD_FLOOR);
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        self.check(seq)?;
        let mut out = seq.clone();
        for t in 0..seq.frames() {
            for (c, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = *v * self.std[c].max(STD_FLOOR) + self.mean[c];
            }
        }
        Ok(out)
    }

    /// `(mean, std)` as `[D]` tensors for batched, differentiable use.
    pub fn tensors(&self) -> Result<(Tensor, Tensor)> {
        let mean = Tensor::new(self.mean.as_slice(), &Device::Cpu)?.to_dtype(DTYPE)?;
        let std: Vec<f64> = self.std.iter().map(|s| s.max(STD_FLOOR)).collect();
        let std = Tensor::new(std.as_slice(), &Device::Cpu)?.to_dtype(DTYPE)?;
        Ok((mean, std))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_dimensions() {
        assert_eq!(FeatureLayout::new(22).dim(), 263);
        assert_eq!(FeatureLayout::new(8).dim(), 95);
        assert_eq!(FeatureLayout::from_dim(263).unwrap().joints, 22);
        assert!(FeatureLayout::from_dim(100).is_err());
        let l = FeatureLayout::new(22);
        assert_eq!(l.vel(21) + 3, l.contacts());
    }

    #[test]
    fn validate_examples() {
        let ok = MotionSequence::zeros(40, 263);
        assert!(validate_motion(&ok, 22).is_valid());

        let wrong = MotionSequence::zeros(40, 100);
        let report = validate_motion(&wrong, 22);
        assert!(matches!(
            report.issues[0],
            ValidationIssue::DimensionMismatch { expected: 263, found: 100 }
        ));

        let mut nan = MotionSequence::zeros(40, 263);
        nan.set(3, 10, f64::NAN);
        assert!(validate_motion(&nan, 22)
            .issues
            .contains(&ValidationIssue::NonFinite { frame: 3, channel: 10 }));

        let mut contact = MotionSequence::zeros(2, 95);
        contact.set(1, 92, 0.5);
        assert!(matches!(
            validate_motion(&contact, 8).issues[0],
            ValidationIssue::NonBinaryContact { frame: 1, channel: 92, .. }
        ));
    }

    #[test]
    fn identity_stats_leave_motion_unchanged() {
        let seq = MotionSequence::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.25, -1.0]).unwrap();
        let stats = NormStats::identity(3);
        assert_eq!(stats.normalize(&seq).unwrap(), seq);
        assert_eq!(stats.denormalize(&seq).unwrap(), seq);
    }

    #[test]
    fn constant_dimension_is_clamped_to_zero_output() {
        let seqs = [
            MotionSequence::new(2, 2, vec![1.0, 7.0, 2.0, 7.0]).unwrap(),
            MotionSequence::new(1, 2, vec![3.0, 7.0]).unwrap(),
        ];
        let stats = NormStats::fit(seqs.iter()).unwrap();
        assert_eq!(stats.std[1], STD_FLOOR);
        let n = stats.normalize(&seqs[0]).unwrap();
        assert_eq!(n.get(0, 1), 0.0);
        assert_eq!(n.get(1, 1), 0.0);
    }

    #[test]
    fn stats_dimension_mismatch_is_an_error() {
        let stats = NormStats::identity(4);
        assert!(stats.normalize(&MotionSequence::zeros(1, 3)).is_err());
    }
}
