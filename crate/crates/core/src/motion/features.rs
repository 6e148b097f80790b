//! Joint positions <-> root-velocity feature encoding.

use super::{FeatureLayout, JointTrajectory, MotionSequence, Skeleton, DT};
use crate::{Error, Result};

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: V3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Rotation about +y by `psi`, heading frame to world.
pub(crate) fn yaw(psi: f64, v: V3) -> V3 {
    let (s, c) = psi.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

/// Facing angle from the toe-minus-ankle directions of both feet.
fn heading(traj: &JointTrajectory, t: usize, feet: [usize; 4], fallback: f64) -> f64 {
    let mut f = [0.0; 2];
    for (ankle, toe) in [(feet[0], feet[1]), (feet[2], feet[3])] {
        let d = sub(traj.pos(t, toe), traj.pos(t, ankle));
        f[0] += d[0];
        f[1] += d[2];
    }
    if f[0].hypot(f[1]) < 1e-9 {
        fallback
    } else {
        f[0].atan2(f[1])
    }
}

fn wrap(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = a.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w - tau
    } else {
        w
    }
}

fn unwrapped_headings(traj: &JointTrajectory, feet: [usize; 4]) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.frames());
    let mut prev = heading(traj, 0, feet, 0.0);
    out.push(prev);
    for t in 1..traj.frames() {
        let raw = heading(traj, t, feet, prev);
        prev += wrap(raw - prev);
        out.push(prev);
    }
    out
}

/// Moves the first-frame root to the xz origin and rotates about +y so the
/// first frame faces +z. Encoding is defined relative to this frame.
pub fn canonicalize(traj: &JointTrajectory, skeleton: &Skeleton) -> JointTrajectory {
    let r0 = traj.pos(0, 0);
    let psi0 = heading(traj, 0, skeleton.foot_joints, 0.0);
    let positions = traj
        .positions()
        .iter()
        .map(|p| yaw(-psi0, [p[0] - r0[0], p[1], p[2] - r0[2]]))
        .collect();
    JointTrajectory {
        frames: traj.frames(),
        joints: traj.joints(),
        positions,
    }
}

/// Column-pair 6-D form of the shortest-arc rotation taking `from` onto `to`.
fn arc_6d(from: V3, to: V3) -> [f64; 6] {
    let (nf, nt) = (norm(from), norm(to));
    if nf < 1e-12 || nt < 1e-12 {
        return [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    }
    let a = [from[0] / nf, from[1] / nf, from[2] / nf];
    let b = [to[0] / nt, to[1] / nt, to[2] / nt];
    let v = cross(a, b);
    let c = dot(a, b);
    let mut m = [[0.0; 3]; 3];
    if c < -1.0 + 1e-9 {
        // Half turn about an axis orthogonal to `a`.
        let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = cross(a, helper);
        let nu = norm(u);
        let u = [u[0] / nu, u[1] / nu, u[2] / nu];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = 2.0 * u[i] * u[j] - if i == j { 1.0 } else { 0.0 };
            }
        }
    } else {
        let k = [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]];
        let s = 1.0 / (1.0 + c);
        for i in 0..3 {
            for j in 0..3 {
                let kk: f64 = (0..3).map(|l| k[i][l] * k[l][j]).sum();
                m[i][j] = if i == j { 1.0 } else { 0.0 } + k[i][j] + kk * s;
            }
        }
    }
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// Encodes world joint positions plus per-frame foot contacts into features.
///
/// The trajectory is first put in its canonical frame (see [`canonicalize`]);
/// velocities of the last frame repeat those of the frame before it.
pub fn encode_joints(
    traj: &JointTrajectory,
    contacts: &[[f64; 4]],
    skeleton: &Skeleton,
) -> Result<MotionSequence> {
    let l = traj.frames();
    let j = traj.joints();
    if l < 2 {
        return Err(Error::shape(format!("encoding needs at least 2 frames, got {l}")));
    }
    if j != skeleton.joints() {
        return Err(Error::shape(format!(
            "trajectory has {j} joints, skeleton {} has {}",
            skeleton.name,
            skeleton.joints()
        )));
    }
    if contacts.len() != l {
        return Err(Error::shape(format!("{} contact rows for {l} frames", contacts.len())));
    }
    let traj = canonicalize(traj, skeleton);
    let layout = FeatureLayout::new(j);
    let psi = unwrapped_headings(&traj, skeleton.foot_joints);
    let mut seq = MotionSequence::zeros(l, layout.dim());

    let local = |t: usize, p: V3| -> V3 {
        let r = traj.pos(t, 0);
        yaw(-psi[t], [p[0] - r[0], p[1], p[2] - r[2]])
    };

    for t in 0..l {
        let tv = if t + 1 < l { t } else { t - 1 };
        let row = seq.row_mut(t);
        row[FeatureLayout::ROOT_ROT_VEL] = (psi[tv + 1] - psi[tv]) / DT;
        let v = yaw(-psi[tv], sub(traj.pos(tv + 1, 0), traj.pos(tv, 0)));
        row[FeatureLayout::ROOT_LIN_VEL] = v[0] / DT;
        row[FeatureLayout::ROOT_LIN_VEL + 1] = v[2] / DT;
        row[FeatureLayout::ROOT_Y] = traj.pos(t, 0)[1];

        let ric: Vec<V3> = (0..j).map(|k| local(t, traj.pos(t, k))).collect();
        for k in 1..j {
            row[layout.ric(k)..layout.ric(k) + 3].copy_from_slice(&ric[k]);
            let parent = skeleton.parents[k].unwrap_or(0);
            let bone = sub(ric[k], ric[parent]);
            let rest = sub(skeleton.rest[k], skeleton.rest[parent]);
            row[layout.rot(k)..layout.rot(k) + 6].copy_from_slice(&arc_6d(rest, bone));
        }
        for k in 0..j {
            let d = yaw(-psi[tv], sub(traj.pos(tv + 1, k), traj.pos(tv, k)));
            row[layout.vel(k)..layout.vel(k) + 3].copy_from_slice(&[d[0] / DT, d[1] / DT, d[2] / DT]);
        }
        let c0 = layout.contacts();
        row[c0..c0 + 4].copy_from_slice(&contacts[t]);
    }
    Ok(seq)
}

/// Integrates root velocities and places joints in the world frame.
pub fn recover_joints(seq: &MotionSequence) -> Result<JointTrajectory> {
    let layout = FeatureLayout::from_dim(seq.dim())?;
    let j = layout.joints;
    let l = seq.frames();
    let mut positions = Vec::with_capacity(l * j);
    let mut psi = 0.0;
    let mut root = [0.0, 0.0];
    for t in 0..l {
        if t > 0 {
            let prev = seq.row(t - 1);
            let v = yaw(
                psi,
                [prev[FeatureLayout::ROOT_LIN_VEL], 0.0, prev[FeatureLayout::ROOT_LIN_VEL + 1]],
            );
            root[0] += v[0] * DT;
            root[1] += v[2] * DT;
            psi += prev[FeatureLayout::ROOT_ROT_VEL] * DT;
        }
        let row = seq.row(t);
        positions.push([root[0], row[FeatureLayout::ROOT_Y], root[1]]);
        for k in 1..j {
            let c = layout.ric(k);
            let p = yaw(psi, [row[c], row[c + 1], row[c + 2]]);
            positions.push([p[0] + root[0], p[1], p[2] + root[1]]);
        }
    }
    JointTrajectory::new(l, j, positions)
}

/// Per-frame contact flags carried in the feature channels.
pub fn contacts(seq: &MotionSequence) -> Result<Vec<[f64; 4]>> {
    let c0 = FeatureLayout::from_dim(seq.dim())?.contacts();
    Ok((0..seq.frames())
        .map(|t| {
            let r = seq.row(t);
            [r[c0], r[c0 + 1], r[c0 + 2], r[c0 + 3]]
        })
        .collect())
}
