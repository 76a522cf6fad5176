//! Pinhole projection, the 2D pose loss, kinematic statistics and pose
//! distance metrics.
//!
//! Scalar routines work on skeleton values and compute in `f64`. The
//! `*_on_tape` variants are the differentiable batch forms used in training;
//! batches are flattened row-major, one sample per row (`[m, J·2]` for 2D,
//! `[m, J·3]` for 3D).

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::pose::{Camera, JointLayout, Skeleton2D, Skeleton3D};

/// Default minimum camera-frame depth, millimeters.
pub const DEFAULT_Z_MIN: f64 = 1.0;

/// Width of the soft depth clamp used while training, millimeters.
const SOFT_DEPTH_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// `K(R·y + t)` followed by division by the third coordinate.
    #[default]
    Perspective,
    /// `K(R·y + t)` taken literally: the first two coordinates, undivided.
    Affine,
}

impl std::str::FromStr for ProjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perspective" => Ok(Self::Perspective),
            "affine" => Ok(Self::Affine),
            other => Err(Error::Config(format!("unknown projection mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectOptions {
    pub mode: ProjectionMode,
    pub z_min: f64,
    /// Replace the hard depth check with a smooth clamp at `z_min`.
    pub soft_depth: bool,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        Self {
            mode: ProjectionMode::Perspective,
            z_min: DEFAULT_Z_MIN,
            soft_depth: false,
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Projects one joint and returns the pixel with its 2×3 Jacobian with
/// respect to the world-space joint.
fn project_joint(
    y: [f64; 3],
    cam: &Camera,
    opts: &ProjectOptions,
    joint: usize,
) -> Result<([f64; 2], [[f64; 3]; 2])> {
    let q = cam.to_camera(y);
    match opts.mode {
        ProjectionMode::Affine => {
            let p = [cam.fx * q[0] + cam.cx * q[2], cam.fy * q[1] + cam.cy * q[2]];
            let mut jac = [[0.0; 3]; 2];
            for k in 0..3 {
                jac[0][k] = cam.fx * cam.r[0][k] + cam.cx * cam.r[2][k];
                jac[1][k] = cam.fy * cam.r[1][k] + cam.cy * cam.r[2][k];
            }
            Ok((p, jac))
        }
        ProjectionMode::Perspective => {
            let (z, dz) = if opts.soft_depth {
                let s = SOFT_DEPTH_WIDTH;
                let u = (q[2] - opts.z_min) / s;
                (opts.z_min + s * softplus(u), sigmoid(u))
            } else {
                if !(q[2] > opts.z_min) {
                    return Err(Error::Projection {
                        joint,
                        depth: q[2] as f32,
                        z_min: opts.z_min as f32,
                    });
                }
                (q[2], 1.0)
            };
            let p = [cam.fx * q[0] / z + cam.cx, cam.fy * q[1] / z + cam.cy];
            // d(pixel)/dq, then chain through q = R·y + t.
            let dq = [
                [cam.fx / z, 0.0, -cam.fx * q[0] / (z * z) * dz],
                [0.0, cam.fy / z, -cam.fy * q[1] / (z * z) * dz],
            ];
            let mut jac = [[0.0; 3]; 2];
            for (row, dqr) in jac.iter_mut().zip(&dq) {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = (0..3).map(|i| dqr[i] * cam.r[i][k]).sum();
                }
            }
            Ok((p, jac))
        }
    }
}

/// Projects a 3D pose to pixels. Output confidences are all 1.
pub fn project(pose: &Skeleton3D, cam: &Camera, opts: &ProjectOptions) -> Result<Skeleton2D> {
    let mut joints = Vec::with_capacity(pose.num_joints());
    for (j, y) in pose.joints.iter().enumerate() {
        let (p, _) = project_joint([y[0] as f64, y[1] as f64, y[2] as f64], cam, opts, j)?;
        joints.push([p[0] as f32, p[1] as f32]);
    }
    Ok(Skeleton2D::new(joints))
}

/// Differentiable batch projection: `pose` is `[m, J·3]`, one camera per
/// row; the result is `[m, J·2]` raw pixels.
///
/// Second-order terms through the projection itself are not tracked.
pub fn project_on_tape(
    tape: &mut Tape,
    pose: Var,
    cams: &[Camera],
    opts: &ProjectOptions,
) -> Result<Var> {
    let pv = tape.value(pose);
    let (m, w) = pv.dims2();
    if w % 3 != 0 || cams.len() != m {
        return Err(Error::Shape {
            op: "project",
            left: pv.shape().to_vec(),
            right: vec![cams.len(), 3],
        });
    }
    let nj = w / 3;
    let (rows_out, cols_in) = (2 * nj, 3 * nj);
    let mut out = vec![0.0f32; m * rows_out];
    let mut jacs = vec![0.0f32; m * rows_out * cols_in];
    for r in 0..m {
        let row = &pv.data()[r * w..(r + 1) * w];
        let block = &mut jacs[r * rows_out * cols_in..(r + 1) * rows_out * cols_in];
        for j in 0..nj {
            let y = [row[3 * j] as f64, row[3 * j + 1] as f64, row[3 * j + 2] as f64];
            let (p, jac) = project_joint(y, &cams[r], opts, j)?;
            out[r * rows_out + 2 * j] = p[0] as f32;
            out[r * rows_out + 2 * j + 1] = p[1] as f32;
            for c in 0..2 {
                for k in 0..3 {
                    block[(2 * j + c) * cols_in + 3 * j + k] = jac[c][k] as f32;
                }
            }
        }
    }
    let jacs: Rc<[f32]> = jacs.into();
    let value = Tensor::new(vec![m, rows_out], out)?;
    Ok(tape.custom(
        vec![pose],
        value,
        Rc::new(move |tape, g| {
            Ok(vec![tape.row_linear(g, jacs.clone(), rows_out, cols_in, true)?])
        }),
    ))
}

/// Subtracts joint `root` from every joint of each row of a flattened
/// `[m, J·dim]` batch.
pub fn center_on_tape(tape: &mut Tape, x: Var, dim: usize, root: usize) -> Result<Var> {
    let w = tape.value(x).cols();
    let mut c = vec![0.0f32; w * w];
    for k in 0..w {
        c[k * w + k] = 1.0;
        let coord = k % dim;
        c[(root * dim + coord) * w + k] -= 1.0;
    }
    let c = tape.leaf(Tensor::matrix(w, w, c)?);
    tape.matmul(x, c)
}

/// Squared-error loss between predicted and target 2D poses, averaged over
/// the target's visible joints.
pub fn pose2d_loss(pred: &Skeleton2D, target: &Skeleton2D) -> Result<f64> {
    if pred.num_joints() != target.num_joints() {
        return Err(Error::Shape {
            op: "pose2d_loss",
            left: vec![pred.num_joints(), 2],
            right: vec![target.num_joints(), 2],
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..target.num_joints() {
        if !target.visible(j) {
            continue;
        }
        let dx = (pred.joints[j][0] - target.joints[j][0]) as f64;
        let dy = (pred.joints[j][1] - target.joints[j][1]) as f64;
        sum += dx * dx + dy * dy;
        count += 1;
    }
    if count == 0 {
        return Err(Error::LossUndefined("every target joint is masked".into()));
    }
    Ok(sum / count as f64)
}

/// Batch form of [`pose2d_loss`]: per-sample mean over visible joints, then
/// the mean over samples that have at least one visible joint.
///
/// `target` is `[m, J·2]`; `mask` holds `m·J` visibility weights (0 or 1).
pub fn pose2d_loss_on_tape(tape: &mut Tape, pred: Var, target: &Tensor, mask: &[f32]) -> Result<Var> {
    let pv = tape.value(pred);
    let (m, w) = pv.dims2();
    if target.dims2() != (m, w) || mask.len() * 2 != m * w {
        return Err(Error::Shape {
            op: "pose2d_loss",
            left: pv.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let nj = w / 2;
    let counts: Vec<f32> = mask
        .chunks(nj.max(1))
        .map(|r| r.iter().filter(|&&v| v > 0.0).count() as f32)
        .collect();
    let valid = counts.iter().filter(|&&c| c > 0.0).count();
    if valid == 0 {
        return Err(Error::LossUndefined(
            "every target joint in the batch is masked".into(),
        ));
    }
    let mut weights = vec![0.0f32; m * w];
    for r in 0..m {
        if counts[r] == 0.0 {
            continue;
        }
        for j in 0..nj {
            if mask[r * nj + j] > 0.0 {
                let v = 1.0 / (counts[r] * valid as f32);
                weights[r * w + 2 * j] = v;
                weights[r * w + 2 * j + 1] = v;
            }
        }
    }
    let t = tape.leaf(target.clone());
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    let wv = tape.leaf(Tensor::matrix(m, w, weights)?);
    let weighted = tape.mul(sq, wv)?;
    Ok(tape.sum_all(weighted))
}

/// Bone vectors and their Gram matrix `Ψ = BᵀB`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicStats {
    /// Column `i` of `B`: child minus parent of bone `i`.
    pub bones: Vec<[f64; 3]>,
    /// Row-major `B×B`.
    pub psi: Vec<f64>,
}

impl KinematicStats {
    pub fn num_bones(&self) -> usize {
        self.bones.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.psi[i * self.bones.len() + j]
    }

    /// Upper triangle (including the diagonal), row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let b = self.bones.len();
        let mut out = Vec::with_capacity(b * (b + 1) / 2);
        for i in 0..b {
            for j in i..b {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.bones.len()).map(|i| self.get(i, i)).sum()
    }
}

pub fn kinematic_stats(pose: &Skeleton3D, layout: &JointLayout) -> KinematicStats {
    let bones: Vec<[f64; 3]> = layout
        .bones
        .iter()
        .map(|&(p, c)| {
            let (a, b) = (pose.joints[p], pose.joints[c]);
            [
                b[0] as f64 - a[0] as f64,
                b[1] as f64 - a[1] as f64,
                b[2] as f64 - a[2] as f64,
            ]
        })
        .collect();
    let n = bones.len();
    let mut psi = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            psi[i * n + j] = (0..3).map(|k| bones[i][k] * bones[j][k]).sum();
        }
    }
    KinematicStats { bones, psi }
}

pub fn bone_lengths(pose: &Skeleton3D, layout: &JointLayout) -> Vec<f64> {
    layout
        .bones
        .iter()
        .map(|&(p, c)| {
            let (a, b) = (pose.joints[p], pose.joints[c]);
            (0..3)
                .map(|k| {
                    let d = b[k] as f64 - a[k] as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Differentiable upper triangle of `Ψ` for a `[m, J·3]` batch, giving
/// `[m, B(B+1)/2]` in [`KinematicStats::upper_triangle`] order.
///
/// Built from linear maps and an elementwise product, so it supports
/// higher-order gradients.
pub fn psi_upper_on_tape(tape: &mut Tape, pose: Var, layout: &JointLayout) -> Result<Var> {
    let w = tape.value(pose).cols();
    let nj = layout.num_joints();
    if w != nj * 3 {
        return Err(Error::Shape {
            op: "psi",
            left: tape.value(pose).shape().to_vec(),
            right: vec![nj, 3],
        });
    }
    let nb = layout.num_bones();
    let pairs: Vec<(usize, usize)> = (0..nb).flat_map(|i| (i..nb).map(move |j| (i, j))).collect();
    let np = pairs.len();
    let mut total: Option<Var> = None;
    for coord in 0..3 {
        // left[:, p] = bone_i coordinate, right[:, p] = bone_j coordinate.
        let mut u = vec![0.0f32; w * np];
        let mut v = vec![0.0f32; w * np];
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let (pi, ci) = layout.bones[i];
            let (pj, cj) = layout.bones[j];
            u[(ci * 3 + coord) * np + p] += 1.0;
            u[(pi * 3 + coord) * np + p] -= 1.0;
            v[(cj * 3 + coord) * np + p] += 1.0;
            v[(pj * 3 + coord) * np + p] -= 1.0;
        }
        let u = tape.leaf(Tensor::matrix(w, np, u)?);
        let v = tape.leaf(Tensor::matrix(w, np, v)?);
        let bu = tape.matmul(pose, u)?;
        let bv = tape.matmul(pose, v)?;
        let prod = tape.mul(bu, bv)?;
        total = Some(match total {
            Some(t) => tape.add(t, prod)?,
            None => prod,
        });
    }
    Ok(total.expect("three coordinates"))
}

/// Mean Euclidean pixel distance over steps and visible target joints.
pub fn mpjpe_2d(pred: &[Skeleton2D], target: &[Skeleton2D]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Contract("MPJPE of an empty sequence".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::Contract(format!(
            "MPJPE needs equal lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.num_joints() != t.num_joints() {
            return Err(Error::Shape {
                op: "mpjpe",
                left: vec![p.num_joints(), 2],
                right: vec![t.num_joints(), 2],
            });
        }
        for j in 0..t.num_joints() {
            if !t.visible(j) {
                continue;
            }
            let dx = (p.joints[j][0] - t.joints[j][0]) as f64;
            let dy = (p.joints[j][1] - t.joints[j][1]) as f64;
            sum += dx.hypot(dy);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("MPJPE with every joint masked".into()));
    }
    Ok(sum / count as f64)
}

/// Mean absolute length difference between mirrored left/right bones, mm.
pub fn symmetry_error(pose: &Skeleton3D, layout: &JointLayout) -> f64 {
    let lengths = bone_lengths(pose, layout);
    let pairs = layout.mirrored_bone_pairs();
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|&(a, b)| (lengths[a] - lengths[b]).abs())
        .sum::<f64>()
        / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{joint, rotation_yx, NUM_JOINTS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ident() -> [[f64; 3]; 3] {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn hand_computed_pinhole() {
        let cam = Camera::new(2.0, 2.0, 0.0, 0.0, ident(), [0.0, 0.0, 2000.0]).unwrap();
        let pose = Skeleton3D::new(vec![[1000.0, -1000.0, 0.0]]);
        let p = project(&pose, &cam, &ProjectOptions::default()).unwrap();
        assert_eq!(p.joints[0], [1.0, -1.0]);
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = Camera::new(800.0, 900.0, 320.0, 240.0, ident(), [0.0, 0.0, 0.0]).unwrap();
        let pose = Skeleton3D::new(vec![[0.0, 0.0, 1500.0]]);
        let p = project(&pose, &cam, &ProjectOptions::default()).unwrap();
        assert_eq!(p.joints[0], [320.0, 240.0]);
    }

    #[test]
    fn joint_behind_camera_is_named() {
        let cam = Camera::new(1.0, 1.0, 0.0, 0.0, ident(), [0.0, 0.0, 0.0]).unwrap();
        let pose = Skeleton3D::new(vec![[0.0, 0.0, 100.0], [0.0, 0.0, 0.5]]);
        match project(&pose, &cam, &ProjectOptions::default()).unwrap_err() {
            Error::Projection { joint, .. } => assert_eq!(joint, 1),
            e => panic!("{e}"),
        }
        // The soft clamp keeps the same pose finite.
        let soft = ProjectOptions {
            soft_depth: true,
            ..Default::default()
        };
        assert!(project(&pose, &cam, &soft).unwrap().is_finite());
    }

    #[test]
    fn depth_scaling_follows_pinhole_law() {
        // Scaling camera-frame coordinates about the camera center leaves
        // perspective pixels unchanged.
        let cam = Camera::new(1000.0, 1000.0, 50.0, 60.0, ident(), [0.0; 3]).unwrap();
        let y = Skeleton3D::new(vec![[120.0, -40.0, 2500.0]]);
        let y2 = Skeleton3D::new(vec![[240.0, -80.0, 5000.0]]);
        let opts = ProjectOptions::default();
        let a = project(&y, &cam, &opts).unwrap();
        let b = project(&y2, &cam, &opts).unwrap();
        assert_eq!(a.joints[0], [98.0, 44.0]);
        assert_eq!(a, b);
    }

    /// Independent f64 pinhole: `K(R·y + t)` divided by depth.
    fn pinhole_f64(cam: &Camera, y: [f64; 3]) -> [f64; 2] {
        let mut q = cam.t;
        for i in 0..3 {
            for k in 0..3 {
                q[i] += cam.r[i][k] * y[k];
            }
        }
        let p = [
            cam.fx * q[0] + cam.cx * q[2],
            cam.fy * q[1] + cam.cy * q[2],
            q[2],
        ];
        [p[0] / p[2], p[1] / p[2]]
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n_out = NUM_JOINTS * 2;
        let n_in = NUM_JOINTS * 3;
        for _ in 0..20 {
            let cam = Camera::new(
                rng.random_range(800.0..1200.0),
                rng.random_range(800.0..1200.0),
                960.0,
                540.0,
                rotation_yx(rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2)),
                [0.0, 0.0, rng.random_range(2500.0..3500.0)],
            )
            .unwrap();
            let pose: Vec<f32> = (0..n_in).map(|_| rng.random_range(-500.0f32..500.0)).collect();

            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::matrix(1, n_in, pose.clone()).unwrap());
            let y = project_on_tape(&mut tape, x, std::slice::from_ref(&cam), &ProjectOptions::default()).unwrap();
            for o in 0..n_out {
                let mut sel = vec![0.0f32; n_out];
                sel[o] = 1.0;
                let s = tape.leaf(Tensor::matrix(1, n_out, sel).unwrap());
                let picked = tape.mul(y, s).unwrap();
                let picked = tape.sum_all(picked);
                let g = tape.grad(picked, &[x]).unwrap()[0];
                let analytic = tape.value(g).data().to_vec();

                let h = 0.1f64;
                let (joint, coord) = (o / 2, o % 2);
                for k in 0..n_in {
                    let numeric = if k / 3 != joint {
                        0.0
                    } else {
                        let mut y3 = [0.0f64; 3];
                        for c in 0..3 {
                            y3[c] = pose[joint * 3 + c] as f64;
                        }
                        y3[k % 3] += h;
                        let plus = pinhole_f64(&cam, y3)[coord];
                        y3[k % 3] -= 2.0 * h;
                        let minus = pinhole_f64(&cam, y3)[coord];
                        (plus - minus) / (2.0 * h)
                    };
                    let a = analytic[k] as f64;
                    // Absolute floor covers entries that cancel to near zero.
                    let tol = 1e-3 * a.abs().max(numeric.abs()) + 1e-6;
                    assert!(
                        (a - numeric).abs() <= tol,
                        "d pixel {o} / d coord {k}: {a} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn pose2d_loss_examples() {
        let t = Skeleton2D::new(vec![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(pose2d_loss(&t, &t).unwrap(), 0.0);
        let shifted = Skeleton2D::new(vec![[4.0, 6.0], [6.0, 8.0]]);
        assert_eq!(pose2d_loss(&shifted, &t).unwrap(), 25.0);
        let masked = Skeleton2D::with_confidence(t.joints.clone(), vec![0.0, 0.0]).unwrap();
        assert!(matches!(pose2d_loss(&t, &masked), Err(Error::LossUndefined(_))));
    }

    #[test]
    fn batch_pose2d_loss_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 6;
        let w = NUM_JOINTS * 2;
        let pred: Vec<f32> = (0..m * w).map(|_| rng.random_range(-300.0..300.0)).collect();
        let target: Vec<f32> = (0..m * w).map(|_| rng.random_range(-300.0..300.0)).collect();
        let mask: Vec<f32> = (0..m * NUM_JOINTS)
            .map(|i| if i % 4 == 1 || i < NUM_JOINTS { 0.0 } else { 1.0 })
            .collect();

        // Sample 0 is fully masked and drops out of the mean.
        let mut per_sample = Vec::new();
        for r in 0..m {
            let (mut s, mut c) = (0.0f64, 0);
            for j in 0..NUM_JOINTS {
                if mask[r * NUM_JOINTS + j] > 0.0 {
                    for k in 0..2 {
                        let d = (pred[r * w + 2 * j + k] - target[r * w + 2 * j + k]) as f64;
                        s += d * d;
                    }
                    c += 1;
                }
            }
            if c > 0 {
                per_sample.push(s / c as f64);
            }
        }
        let expected = per_sample.iter().sum::<f64>() / per_sample.len() as f64;

        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::matrix(m, w, pred).unwrap());
        let l = pose2d_loss_on_tape(&mut tape, p, &Tensor::matrix(m, w, target).unwrap(), &mask).unwrap();
        let got = tape.value(l).data()[0] as f64;
        assert!((got - expected).abs() <= 1e-6 * expected, "{got} vs {expected}");
    }

    #[test]
    fn orthonormal_bones_give_identity_psi() {
        let layout = JointLayout {
            joints: vec!["a".into(), "b".into(), "c".into()],
            bones: vec![(0, 1), (0, 2)],
            mirror_pairs: vec![],
            root: 0,
        };
        let pose = Skeleton3D::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let k = kinematic_stats(&pose, &layout);
        assert_eq!(k.psi, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn psi_on_tape_matches_scalar_route() {
        let layout = JointLayout::upper_body();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let poses: Vec<Skeleton3D> = (0..4)
            .map(|_| {
                Skeleton3D::new(
                    (0..NUM_JOINTS)
                        .map(|_| [rng.random_range(-1.0f32..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                        .collect(),
                )
            })
            .collect();
        let flat: Vec<f32> = poses.iter().flat_map(|p| p.flat().collect::<Vec<_>>()).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(4, NUM_JOINTS * 3, flat).unwrap());
        let psi = psi_upper_on_tape(&mut tape, x, &layout).unwrap();
        for (r, p) in poses.iter().enumerate() {
            let expected = kinematic_stats(p, &layout).upper_triangle();
            for (a, b) in tape.value(psi).row(r).iter().zip(&expected) {
                assert!((*a as f64 - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn mpjpe_examples() {
        let a = vec![Skeleton2D::new(vec![[0.0, 0.0], [1.0, 1.0]]); 3];
        assert_eq!(mpjpe_2d(&a, &a).unwrap(), 0.0);
        let b: Vec<_> = a
            .iter()
            .map(|p| Skeleton2D::new(p.joints.iter().map(|&[x, y]| [x + 3.0, y + 4.0]).collect()))
            .collect();
        assert_eq!(mpjpe_2d(&b, &a).unwrap(), 5.0);
        assert!(mpjpe_2d(&[], &[]).is_err());
    }

    fn mirrored_pose(extra_right: f32) -> Skeleton3D {
        let mut j = vec![[0.0f32; 3]; NUM_JOINTS];
        j[joint::HEAD] = [0.0, -200.0, 0.0];
        j[joint::HIP] = [0.0, 500.0, 0.0];
        j[joint::LEFT_SHOULDER] = [180.0, 0.0, 0.0];
        j[joint::LEFT_ELBOW] = [180.0, 280.0, 0.0];
        j[joint::LEFT_HAND] = [180.0, 530.0, 0.0];
        j[joint::RIGHT_SHOULDER] = [-180.0 - extra_right, 0.0, 0.0];
        j[joint::RIGHT_ELBOW] = [-180.0 - extra_right, 280.0 + extra_right, 0.0];
        j[joint::RIGHT_HAND] = [-180.0 - extra_right, 530.0 + 2.0 * extra_right, 0.0];
        Skeleton3D::new(j)
    }

    #[test]
    fn symmetry_examples() {
        let layout = JointLayout::upper_body();
        assert_eq!(symmetry_error(&mirrored_pose(0.0), &layout), 0.0);
        assert!((symmetry_error(&mirrored_pose(10.0), &layout) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn centering_on_tape_zeroes_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 6, vec![1.0, 2.0, 5.0, 7.0, -1.0, 0.0]).unwrap());
        let c = center_on_tape(&mut tape, x, 2, 1).unwrap();
        assert_eq!(tape.value(c).data(), &[-4.0, -5.0, 0.0, 0.0, -6.0, -7.0]);
    }
}
