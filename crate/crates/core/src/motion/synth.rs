//! Procedural stylized motion: parametric content actions on a 22-joint rig,
//! composed with parametric style transforms.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::features::{encode_joints, yaw};
use super::{JointTrajectory, MotionSequence, Skeleton, DT, RIG_REST};
use crate::rng::{self, Rng};
use crate::{Error, Result};

type V3 = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Action {
    Locomotion,
    Jump,
    Kick,
}

struct ContentSpec {
    name: &'static str,
    text: &'static str,
    action: Action,
    speed: f64,
    yaw_rate: f64,
    freq: f64,
    duty: f64,
    step_height: f64,
    bounce: f64,
    arm_swing: f64,
}

const CONTENTS: [ContentSpec; 5] = [
    ContentSpec { name: "walk", text: "a person walks forward", action: Action::Locomotion, speed: 1.1, yaw_rate: 0.0, freq: 1.0, duty: 0.6, step_height: 0.10, bounce: 0.02, arm_swing: 0.35 },
    ContentSpec { name: "run", text: "a person runs forward quickly", action: Action::Locomotion, speed: 2.4, yaw_rate: 0.0, freq: 1.4, duty: 0.38, step_height: 0.18, bounce: 0.05, arm_swing: 0.7 },
    ContentSpec { name: "jump", text: "a person jumps up and down in place", action: Action::Jump, speed: 0.0, yaw_rate: 0.0, freq: 1.1, duty: 0.5, step_height: 0.22, bounce: 0.0, arm_swing: 0.5 },
    ContentSpec { name: "turn", text: "a person walks in a circle turning left", action: Action::Locomotion, speed: 0.9, yaw_rate: 0.9, freq: 0.9, duty: 0.62, step_height: 0.09, bounce: 0.02, arm_swing: 0.3 },
    ContentSpec { name: "kick", text: "a person kicks with the right leg", action: Action::Kick, speed: 0.0, yaw_rate: 0.0, freq: 0.6, duty: 0.0, step_height: 1.0, bounce: 0.0, arm_swing: 0.25 },
];

#[derive(Clone, Copy, Default)]
struct StyleSpec {
    name: &'static str,
    group: &'static str,
    flap_amp: f64,
    flap_freq: f64,
    arm_swing_scale: f64,
    arm_raise: f64,
    elbow_bend: f64,
    spine_pitch: f64,
    spine_roll: f64,
    pelvis_drop: f64,
    bounce: f64,
    tempo: f64,
    step_scale: f64,
    left_step_scale: f64,
    left_duty_extra: f64,
    swim_rate: f64,
    robot: bool,
}

const NEUTRAL: StyleSpec = StyleSpec {
    name: "",
    group: "",
    flap_amp: 0.0,
    flap_freq: 0.0,
    arm_swing_scale: 1.0,
    arm_raise: 0.0,
    elbow_bend: 0.0,
    spine_pitch: 0.0,
    spine_roll: 0.0,
    pelvis_drop: 0.0,
    bounce: 0.0,
    tempo: 1.0,
    step_scale: 1.0,
    left_step_scale: 1.0,
    left_duty_extra: 0.0,
    swim_rate: 0.0,
    robot: false,
};

const STYLES: [StyleSpec; 8] = [
    StyleSpec { name: "flapping", group: "OBJ", flap_amp: 0.9, flap_freq: 2.5, arm_swing_scale: 0.3, ..NEUTRAL },
    StyleSpec { name: "lean", group: "ACT", spine_pitch: -0.4, arm_swing_scale: 0.6, ..NEUTRAL },
    StyleSpec { name: "limp", group: "ACT", left_step_scale: 0.35, left_duty_extra: 0.12, spine_roll: 0.15, tempo: 0.8, ..NEUTRAL },
    StyleSpec { name: "elated", group: "EMO", bounce: 0.05, arm_raise: 0.6, tempo: 1.15, step_scale: 1.5, ..NEUTRAL },
    StyleSpec { name: "crouched", group: "MOT", pelvis_drop: 0.22, spine_pitch: 0.3, elbow_bend: 0.6, arm_swing_scale: 0.5, ..NEUTRAL },
    StyleSpec { name: "robot", group: "CHAR", elbow_bend: 1.4, arm_swing_scale: 1.3, robot: true, tempo: 0.9, ..NEUTRAL },
    StyleSpec { name: "old", group: "PER", spine_pitch: 0.4, tempo: 0.75, step_scale: 0.5, arm_swing_scale: 0.3, pelvis_drop: 0.06, ..NEUTRAL },
    StyleSpec { name: "swimming", group: "OBJ", swim_rate: 0.8, spine_pitch: 0.25, arm_swing_scale: 0.0, ..NEUTRAL },
];

pub const MAX_CONTENTS: usize = CONTENTS.len();
pub const MAX_STYLES: usize = STYLES.len();

/// Style label of neutral (unstyled) datasets.
pub const NEUTRAL_STYLE: &str = "neutral";

pub fn content_names(n: usize) -> Vec<String> {
    CONTENTS[..n.min(MAX_CONTENTS)].iter().map(|c| c.name.to_string()).collect()
}

pub fn content_texts(n: usize) -> Vec<String> {
    CONTENTS[..n.min(MAX_CONTENTS)].iter().map(|c| c.text.to_string()).collect()
}

pub fn style_names(n: usize) -> Vec<String> {
    STYLES[..n.min(MAX_STYLES)].iter().map(|s| s.name.to_string()).collect()
}

pub fn style_groups(n: usize) -> Vec<String> {
    STYLES[..n.min(MAX_STYLES)].iter().map(|s| s.group.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_content: usize,
    pub n_style: usize,
    pub samples_per_pair: usize,
    /// Trailing samples of every pair assigned to the test split.
    #[serde(default)]
    pub test_per_pair: usize,
    pub frames: usize,
    pub joints: usize,
    pub seed: u64,
    /// Generate unstyled motion only; `n_style` is then ignored and the
    /// dataset carries the single label [`NEUTRAL_STYLE`].
    #[serde(default)]
    pub neutral: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_content: 4,
            n_style: 6,
            samples_per_pair: 25,
            test_per_pair: 5,
            frames: 40,
            joints: 8,
            seed: 0,
            neutral: false,
        }
    }
}

impl SynthConfig {
    /// Style taxonomy and group tags of the generated dataset.
    pub fn styles(&self) -> (Vec<String>, Vec<String>) {
        if self.neutral {
            (vec![NEUTRAL_STYLE.to_string()], vec!["NONE".to_string()])
        } else {
            (style_names(self.n_style), style_groups(self.n_style))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CONTENTS).contains(&self.n_content) {
            return Err(Error::config(format!("n_content must be in 2..={MAX_CONTENTS}")));
        }
        if !self.neutral && !(2..=MAX_STYLES).contains(&self.n_style) {
            return Err(Error::config(format!("n_style must be in 2..={MAX_STYLES}")));
        }
        if self.samples_per_pair == 0 || self.test_per_pair >= self.samples_per_pair {
            return Err(Error::config("need samples_per_pair > test_per_pair"));
        }
        if self.frames < 2 {
            return Err(Error::config("frames must be at least 2"));
        }
        Skeleton::for_joints(self.joints)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub content: usize,
    pub style: usize,
    pub index: usize,
    pub test: bool,
    pub motion: MotionSequence,
}

/// Generates every sample of the dataset in manifest order.
pub fn generate(config: &SynthConfig) -> Result<Vec<SynthSample>> {
    config.validate()?;
    let skeleton = Skeleton::for_joints(config.joints)?;
    let mut out = Vec::new();
    let styles: Vec<Option<usize>> = if config.neutral { vec![None] } else { (0..config.n_style).map(Some).collect() };
    for c in 0..config.n_content {
        for (s, &spec) in styles.iter().enumerate() {
            for k in 0..config.samples_per_pair {
                let slot = spec.unwrap_or(MAX_STYLES);
                let stream = ((c * (MAX_STYLES + 1) + slot) * config.samples_per_pair + k) as u64;
                let mut rng = rng::substream(config.seed, stream);
                let motion = sample_motion(c, spec, config.frames, &skeleton, &mut rng)?;
                out.push(SynthSample {
                    content: c,
                    style: s,
                    index: k,
                    test: k >= config.samples_per_pair - config.test_per_pair,
                    motion,
                });
            }
        }
    }
    Ok(out)
}

/// One motion of `content` performed in `style` (`None` for neutral), with
/// per-sample jitter from `rng`.
/// Values are rounded to `f32` so the in-memory and on-disk forms agree.
pub fn sample_motion(
    content: usize,
    style: Option<usize>,
    frames: usize,
    skeleton: &Skeleton,
    rng: &mut Rng,
) -> Result<MotionSequence> {
    let (traj, contacts) = rig_trajectory(content, style, frames, rng)?;
    let positions = (0..frames)
        .flat_map(|t| skeleton.rig_index.iter().map(move |&r| (t, r)))
        .map(|(t, r)| traj.pos(t, r))
        .collect();
    let traj = JointTrajectory::new(frames, skeleton.joints(), positions)?;
    let seq = encode_joints(&traj, &contacts, skeleton)?;
    let data = seq.data().iter().map(|&v| v as f32 as f64).collect();
    MotionSequence::new(frames, seq.dim(), data)
}

struct Motion {
    action: Action,
    speed: f64,
    yaw_rate: f64,
    freq: f64,
    duty: [f64; 2],
    step_height: [f64; 2],
    bounce: f64,
    arm_swing: f64,
    arm_raise: f64,
    elbow_bend: f64,
    spine_pitch: f64,
    spine_roll: f64,
    pelvis_drop: f64,
    flap_amp: f64,
    flap_freq: f64,
    swim_rate: f64,
    robot: bool,
    phase0: f64,
}

fn mix(base: f64, scale: f64, k: f64) -> f64 {
    base * (1.0 + (scale - 1.0) * k)
}

fn build_motion(content: usize, style: Option<usize>, rng: &mut Rng) -> Result<Motion> {
    let c = CONTENTS
        .get(content)
        .ok_or_else(|| Error::config(format!("content id {content} out of range")))?;
    let s = match style {
        Some(i) => STYLES
            .get(i)
            .ok_or_else(|| Error::config(format!("style id {i} out of range")))?,
        None => &NEUTRAL,
    };
    let k = rng::uniform(rng, 0.8, 1.2);
    let tempo = mix(1.0, s.tempo, k) * rng::uniform(rng, 0.93, 1.07);
    let step = c.step_height * mix(1.0, s.step_scale, k) * rng::uniform(rng, 0.85, 1.15);
    let left_step = mix(1.0, s.left_step_scale, k);
    let duty = c.duty.max(0.0);
    Ok(Motion {
        action: c.action,
        speed: c.speed * tempo * rng::uniform(rng, 0.9, 1.1),
        yaw_rate: c.yaw_rate * tempo,
        freq: c.freq * tempo,
        duty: [(duty + s.left_duty_extra * k).min(0.85), duty],
        step_height: [step * left_step, step],
        bounce: c.bounce + s.bounce * k,
        arm_swing: c.arm_swing * mix(1.0, s.arm_swing_scale, k) * rng::uniform(rng, 0.85, 1.15),
        arm_raise: s.arm_raise * k,
        elbow_bend: 0.2 + s.elbow_bend * k,
        spine_pitch: s.spine_pitch * k + rng::uniform(rng, -0.03, 0.03),
        spine_roll: s.spine_roll * k,
        pelvis_drop: s.pelvis_drop * k,
        flap_amp: s.flap_amp * k,
        flap_freq: s.flap_freq * tempo,
        swim_rate: s.swim_rate * tempo,
        robot: s.robot,
        phase0: rng::uniform(rng, 0.0, 1.0),
    })
}

const THIGH: f64 = 0.36;
const SHIN: f64 = 0.40;
const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.26;
const ANKLE_Y: f64 = 0.08;
const FOOT_X: f64 = 0.10;
const HIP_DROP: f64 = 0.09;

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: V3, k: f64) -> V3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn len(a: V3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn rot_x(a: f64, v: V3) -> V3 {
    let (s, c) = a.sin_cos();
    [v[0], v[1] * c - v[2] * s, v[1] * s + v[2] * c]
}

fn rot_z(a: f64, v: V3) -> V3 {
    let (s, c) = a.sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c, v[2]]
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

impl Motion {
    fn heading(&self, sigma: f64) -> f64 {
        self.yaw_rate * sigma
    }

    fn path(&self, sigma: f64) -> V3 {
        if self.yaw_rate.abs() < 1e-9 {
            [0.0, 0.0, self.speed * sigma]
        } else {
            let r = self.speed / self.yaw_rate;
            let a = self.yaw_rate * sigma;
            [r * (1.0 - a.cos()), 0.0, r * a.sin()]
        }
    }

    fn cycles(&self, sigma: f64) -> f64 {
        self.freq * sigma + self.phase0
    }

    /// World ankle position of a stance foot planted during cycle `n`.
    fn plant(&self, leg: usize, n: f64) -> V3 {
        let offset = leg as f64 * 0.5;
        let sigma = (n + self.duty[leg] / 2.0 - offset - self.phase0) / self.freq;
        let side = if leg == 0 { FOOT_X } else { -FOOT_X };
        add(add(self.path(sigma), yaw(self.heading(sigma), [side, 0.0, 0.0])), [0.0, ANKLE_Y, 0.0])
    }

    fn pelvis_height(&self) -> f64 {
        let reach = 0.98 * (THIGH + SHIN);
        let duty = self.duty[0].max(self.duty[1]);
        let half = if self.action == Action::Locomotion {
            self.speed * duty / self.freq / 2.0
        } else {
            0.0
        };
        let vertical = (reach * reach - half * half).max(0.25).sqrt();
        (ANKLE_Y + vertical + HIP_DROP).min(RIG_REST[0][1]) - self.pelvis_drop - self.bounce
    }

    /// Ankle position, foot yaw and toe pitch of `leg` at time `sigma`.
    fn foot(&self, leg: usize, sigma: f64) -> (V3, f64, f64) {
        let side = if leg == 0 { FOOT_X } else { -FOOT_X };
        match self.action {
            Action::Locomotion => {
                let g = self.cycles(sigma) + leg as f64 * 0.5;
                let n = g.floor();
                let phi = g - n;
                let d = self.duty[leg];
                let psi_n = self.heading((n + d / 2.0 - leg as f64 * 0.5 - self.phase0) / self.freq);
                if phi < d {
                    (self.plant(leg, n), psi_n, 0.0)
                } else {
                    let u = (phi - d) / (1.0 - d);
                    let (a, b) = (self.plant(leg, n), self.plant(leg, n + 1.0));
                    let psi_m = self.heading((n + 1.0 + d / 2.0 - leg as f64 * 0.5 - self.phase0) / self.freq);
                    let w = smoothstep(u);
                    let lift = self.step_height[leg] * (PI * u).sin();
                    let p = add(add(a, scale(sub(b, a), w)), [0.0, lift, 0.0]);
                    (p, psi_n + (psi_m - psi_n) * w, -0.4 * (PI * u).sin())
                }
            }
            Action::Jump => {
                let base = [side, ANKLE_Y, 0.0];
                let phi = self.cycles(sigma).fract();
                let d = self.duty[1];
                if phi < d {
                    (base, 0.0, 0.0)
                } else {
                    let u = (phi - d) / (1.0 - d);
                    let h = self.step_height[leg] * (PI * u).sin();
                    (add(base, [0.0, 0.9 * h, 0.0]), 0.0, -0.3 * (PI * u).sin())
                }
            }
            Action::Kick => {
                let base = [side, ANKLE_Y, 0.0];
                let phi = self.cycles(sigma).fract();
                if leg == 0 || !(0.25..0.75).contains(&phi) {
                    (base, 0.0, 0.0)
                } else {
                    let k = (PI * (phi - 0.25) / 0.5).sin() * self.step_height[1];
                    (add(base, [0.0, 0.38 * k, 0.45 * k]), 0.0, 0.0)
                }
            }
        }
    }

    fn pelvis(&self, sigma: f64) -> V3 {
        let g = self.cycles(sigma);
        let psi = self.heading(sigma);
        let base = self.pelvis_height();
        let (y, xz) = match self.action {
            Action::Locomotion => {
                let bob = self.bounce * (0.5 + 0.5 * (2.0 * TAU * g).cos());
                let sway = yaw(psi, [0.02 * (TAU * g).sin(), 0.0, 0.0]);
                (base + bob, add(self.path(sigma), sway))
            }
            Action::Jump => {
                let phi = g.fract();
                let d = self.duty[1];
                let y = if phi < d {
                    base - 0.12 * (PI * phi / d).sin()
                } else {
                    let u = (phi - d) / (1.0 - d);
                    base + self.step_height[1] * (PI * u).sin()
                };
                (y, [0.0; 3])
            }
            Action::Kick => (base - 0.02, [0.0; 3]),
        };
        [xz[0], y, xz[2]]
    }

    /// Forward and backward arm swing angles (left, right).
    fn arm_swing(&self, sigma: f64) -> [f64; 2] {
        let g = self.cycles(sigma);
        if self.swim_rate > 0.0 {
            let a = TAU * self.swim_rate * sigma + self.phase0 * TAU;
            return [a, a + PI];
        }
        let wave = |x: f64| {
            let s = (TAU * x).sin();
            if self.robot {
                (3.0 * s).tanh()
            } else {
                s
            }
        };
        match self.action {
            Action::Jump => [self.arm_swing * wave(g); 2],
            _ => [self.arm_swing * wave(g + 0.5), self.arm_swing * wave(g)],
        }
    }

    fn arm_abduction(&self, sigma: f64) -> f64 {
        let flap = if self.flap_amp > 0.0 {
            self.flap_amp * (0.5 + 0.5 * (TAU * self.flap_freq * sigma + self.phase0 * TAU).sin())
        } else {
            0.0
        };
        let swim = if self.swim_rate > 0.0 { 0.25 } else { 0.0 };
        0.12 + self.arm_raise + flap + swim
    }
}

/// Knee position for a two-bone chain bending towards `forward`.
fn knee(hip: V3, ankle: V3, forward: V3) -> (V3, V3) {
    let reach = 0.999 * (THIGH + SHIN);
    let delta = sub(ankle, hip);
    let mut d = len(delta);
    let dir = if d > 1e-9 { scale(delta, 1.0 / d) } else { [0.0, -1.0, 0.0] };
    let ankle = if d > reach {
        d = reach;
        add(hip, scale(dir, reach))
    } else {
        ankle
    };
    let d = d.max(THIGH - SHIN + 0.05).max(0.05);
    let a = (THIGH * THIGH - SHIN * SHIN + d * d) / (2.0 * d);
    let h = (THIGH * THIGH - a * a).max(0.0).sqrt();
    let f_dot = forward[0] * dir[0] + forward[1] * dir[1] + forward[2] * dir[2];
    let b = sub(forward, scale(dir, f_dot));
    let nb = len(b);
    let b = if nb > 1e-9 { scale(b, 1.0 / nb) } else { forward };
    (add(add(hip, scale(dir, a)), scale(b, h)), ankle)
}

/// Full-rig joint positions and foot contacts (left ankle, left toe, right
/// ankle, right toe).
pub(crate) fn rig_trajectory(
    content: usize,
    style: Option<usize>,
    frames: usize,
    rng: &mut Rng,
) -> Result<(JointTrajectory, Vec<[f64; 4]>)> {
    let m = build_motion(content, style, rng)?;
    let mut positions = Vec::with_capacity(frames * 22);
    for f in 0..frames {
        let sigma = f as f64 * DT;
        let psi = m.heading(sigma);
        let pelvis = m.pelvis(sigma);
        let g = m.cycles(sigma);
        let roll = m.spine_roll * (1.0 + 0.5 * (TAU * g).sin());
        let torso = |v: V3| yaw(psi, rot_x(m.spine_pitch, rot_z(roll, v)));
        let rel = |j: usize| sub(RIG_REST[j], RIG_REST[0]);

        let mut p = [[0.0; 3]; 22];
        p[0] = pelvis;
        for j in [3, 6, 9, 12, 13, 14, 15, 16, 17] {
            p[j] = add(pelvis, torso(rel(j)));
        }
        p[1] = add(pelvis, yaw(psi, rel(1)));
        p[2] = add(pelvis, yaw(psi, rel(2)));
        let forward = yaw(psi, [0.0, 0.0, 1.0]);
        for (leg, (hip, kn, ank, toe)) in [(1, 4, 7, 10), (2, 5, 8, 11)].into_iter().enumerate() {
            let (target, foot_yaw, pitch) = m.foot(leg, sigma);
            let (k, a) = knee(p[hip], target, forward);
            p[kn] = k;
            p[ank] = a;
            let side = if leg == 0 { 0.01 } else { -0.01 };
            p[toe] = add(a, yaw(foot_yaw, rot_x(pitch, [side, -0.06, 0.13])));
        }
        let swing = m.arm_swing(sigma);
        let abduct = m.arm_abduction(sigma);
        for (i, (shoulder, elbow, wrist)) in [(16, 18, 20), (17, 19, 21)].into_iter().enumerate() {
            let s = if i == 0 { 1.0 } else { -1.0 };
            let upper = rot_z(s * abduct, rot_x(-swing[i], [0.0, -1.0, 0.0]));
            let lower = rot_z(s * abduct, rot_x(-(swing[i] + m.elbow_bend), [0.0, -1.0, 0.0]));
            p[elbow] = add(p[shoulder], torso(scale(upper, UPPER_ARM)));
            p[wrist] = add(p[elbow], torso(scale(lower, FOREARM)));
        }
        positions.extend_from_slice(&p);
    }
    let traj = JointTrajectory::new(frames, 22, positions)?;
    let contacts = foot_contacts(&traj, [7, 10, 8, 11]);
    Ok((traj, contacts))
}

/// Contact when a foot joint is near its rest height and nearly still.
fn foot_contacts(traj: &JointTrajectory, feet: [usize; 4]) -> Vec<[f64; 4]> {
    let l = traj.frames();
    (0..l)
        .map(|t| {
            let (a, b) = if t + 1 < l { (t, t + 1) } else { (t.saturating_sub(1), t) };
            let mut c = [0.0; 4];
            for (i, &j) in feet.iter().enumerate() {
                let p = traj.pos(t, j);
                let d = sub(traj.pos(b, j), traj.pos(a, j));
                let speed = d[0].hypot(d[2]) / DT;
                if p[1] < RIG_REST[j][1] + 0.03 && speed < 0.3 {
                    c[i] = 1.0;
                }
            }
            c
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        let bad = SynthConfig { n_content: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { joints: 5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn knee_keeps_bone_lengths() {
        let hip = [0.09, 0.84, 0.0];
        let (k, a) = knee(hip, [0.1, 0.08, 0.2], [0.0, 0.0, 1.0]);
        assert!((len(sub(k, hip)) - THIGH).abs() < 1e-9);
        assert!((len(sub(a, k)) - SHIN).abs() < 1e-9);
    }

    #[test]
    fn stance_feet_stay_planted() {
        let mut rng = rng::seeded(4);
        let (traj, contacts) = rig_trajectory(0, Some(1), 40, &mut rng).unwrap();
        let (mut contact, mut still) = (0, 0);
        for t in 0..39 {
            if contacts[t][0] == 1.0 {
                contact += 1;
                if len(sub(traj.pos(t + 1, 7), traj.pos(t, 7))) < 1e-12 {
                    still += 1;
                }
            }
        }
        assert!(contact > 10);
        assert!(still as f64 >= 0.8 * contact as f64, "{still} of {contact}");
    }
}
