//! Skeleton keypoint JSON and top-down trajectory plots of generated motion.

use std::fmt::Write as _;
use std::path::Path;

use mulsmo_core::motion::dataset::{sidecar_path, write_motion};
use mulsmo_core::motion::{recover_joints, JointTrajectory, MotionSequence, Skeleton, FPS};
use mulsmo_core::{Error, Result};
use serde::Serialize;

#[derive(Serialize)]
struct Keypoints<'a> {
    fps: f64,
    skeleton: &'a str,
    parents: Vec<Option<usize>>,
    /// `frames[t][j] = [x, y, z]` in metres, y up.
    frames: Vec<Vec<[f64; 3]>>,
}

pub fn keypoints_json(traj: &JointTrajectory, skel: &Skeleton) -> Result<Vec<u8>> {
    let frames = (0..traj.frames())
        .map(|t| (0..traj.joints()).map(|j| round3(traj.pos(t, j))).collect())
        .collect();
    Ok(serde_json::to_vec(&Keypoints {
        fps: FPS,
        skeleton: skel.name,
        parents: skel.parents.clone(),
        frames,
    })?)
}

fn round3(p: [f64; 3]) -> [f64; 3] {
    p.map(|v| (v * 1e4).round() / 1e4)
}

/// Top-down (x, z) plot of the root and foot paths.
pub fn trajectory_svg(traj: &JointTrajectory, skel: &Skeleton) -> String {
    let mut tracks: Vec<(usize, &str)> = vec![(0, "#222")];
    tracks.push((skel.foot_joints[0], "#c33"));
    tracks.push((skel.foot_joints[2], "#36c"));
    let pts: Vec<[f64; 3]> = traj.positions().to_vec();
    let (mut x0, mut x1, mut z0, mut z1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        z0 = z0.min(p[2]);
        z1 = z1.max(p[2]);
    }
    let span = (x1 - x0).max(z1 - z0).max(0.5);
    let (size, pad) = (400.0, 20.0);
    let sx = |v: f64| pad + (v - x0) / span * (size - 2.0 * pad);
    let sz = |v: f64| size - pad - (v - z0) / span * (size - 2.0 * pad);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    svg.push_str(r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    for (j, color) in tracks {
        let mut d = String::new();
        for t in 0..traj.frames() {
            let p = traj.pos(t, j);
            let _ = write!(d, "{}{:.1},{:.1} ", if t == 0 { "M" } else { "L" }, sx(p[0]), sz(p[2]));
        }
        let _ = write!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `<stem>.mot` (+ sidecar), `<stem>.joints.json` and `<stem>.svg`.
pub fn write_outputs(dir: &Path, stem: &str, seq: &MotionSequence) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let traj = recover_joints(seq)?;
    let skel = Skeleton::for_joints(traj.joints())?;
    let mot = dir.join(format!("{stem}.mot"));
    write_motion(&mot, seq)?;
    let joints = dir.join(format!("{stem}.joints.json"));
    std::fs::write(&joints, keypoints_json(&traj, &skel)?).map_err(|e| Error::io(&joints, e))?;
    let svg = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg, trajectory_svg(&traj, &skel)).map_err(|e| Error::io(&svg, e))?;
    Ok(vec![sidecar_path(&mot), mot, joints, svg])
}
