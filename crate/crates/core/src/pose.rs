//! Skeletons, cameras, labels and windowed samples.
//!
//! Conventions: pixels have their origin at the top-left with x to the right
//! and y down; 3D coordinates are millimeters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint count of the canonical upper-body layout.
pub const NUM_JOINTS: usize = 9;

pub mod joint {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const RIGHT_SHOULDER: usize = 2;
    pub const RIGHT_ELBOW: usize = 3;
    pub const RIGHT_HAND: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const LEFT_ELBOW: usize = 6;
    pub const LEFT_HAND: usize = 7;
    pub const HIP: usize = 8;
}

/// Ordered joint names, bones as `(parent, child)` pairs and left/right
/// mirror pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLayout {
    pub joints: Vec<String>,
    pub bones: Vec<(usize, usize)>,
    pub mirror_pairs: Vec<(usize, usize)>,
    pub root: usize,
}

impl Default for JointLayout {
    fn default() -> Self {
        Self::upper_body()
    }
}

impl JointLayout {
    /// The 9-joint upper-body layout, indices matching the first nine
    /// OpenPose body joints.
    pub fn upper_body() -> Self {
        use joint::*;
        let joints = [
            "head",
            "neck",
            "right_shoulder",
            "right_elbow",
            "right_hand",
            "left_shoulder",
            "left_elbow",
            "left_hand",
            "hip",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        Self {
            joints,
            bones: vec![
                (NECK, HEAD),
                (NECK, RIGHT_SHOULDER),
                (RIGHT_SHOULDER, RIGHT_ELBOW),
                (RIGHT_ELBOW, RIGHT_HAND),
                (NECK, LEFT_SHOULDER),
                (LEFT_SHOULDER, LEFT_ELBOW),
                (LEFT_ELBOW, LEFT_HAND),
                (NECK, HIP),
            ],
            mirror_pairs: vec![
                (RIGHT_SHOULDER, LEFT_SHOULDER),
                (RIGHT_ELBOW, LEFT_ELBOW),
                (RIGHT_HAND, LEFT_HAND),
            ],
            root: NECK,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_bones(&self) -> usize {
        self.bones.len()
    }

    /// Index of the mirrored joint; joints on the midline map to themselves.
    pub fn mirror(&self, j: usize) -> usize {
        for &(a, b) in &self.mirror_pairs {
            if a == j {
                return b;
            }
            if b == j {
                return a;
            }
        }
        j
    }

    /// Pairs of bone indices whose endpoints mirror each other.
    pub fn mirrored_bone_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, &(p, c)) in self.bones.iter().enumerate() {
            let (mp, mc) = (self.mirror(p), self.mirror(c));
            if (mp, mc) == (p, c) {
                continue;
            }
            if let Some(k) = self.bones.iter().position(|&b| b == (mp, mc)) {
                if i < k {
                    out.push((i, k));
                }
            }
        }
        out
    }

    /// Checks that bones form a tree rooted at `root` spanning every joint
    /// and that mirroring is an involution.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_joints();
        if n == 0 || self.root >= n {
            return Err(Error::Validation("layout root out of range".into()));
        }
        if self.bones.len() + 1 != n {
            return Err(Error::Validation(format!(
                "{} bones cannot form a tree over {n} joints",
                self.bones.len()
            )));
        }
        let mut parent = vec![None; n];
        for &(p, c) in &self.bones {
            if p >= n || c >= n || c == self.root || parent[c].is_some() {
                return Err(Error::Validation(format!("invalid bone ({p}, {c})")));
            }
            parent[c] = Some(p);
        }
        for j in 0..n {
            let mut cur = j;
            let mut hops = 0;
            while cur != self.root {
                cur = parent[cur]
                    .ok_or_else(|| Error::Validation(format!("joint {j} not connected")))?;
                hops += 1;
                if hops > n {
                    return Err(Error::Validation("bone list contains a cycle".into()));
                }
            }
        }
        for &(a, b) in &self.mirror_pairs {
            if a >= n || b >= n || a == b {
                return Err(Error::Validation(format!("invalid mirror pair ({a}, {b})")));
            }
        }
        if (0..n).any(|j| self.mirror(self.mirror(j)) != j) {
            return Err(Error::Validation("mirror map is not an involution".into()));
        }
        Ok(())
    }
}

/// 2D joints in pixels with per-joint detection confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton2D {
    pub joints: Vec<[f32; 2]>,
    pub confidence: Vec<f32>,
}

impl Skeleton2D {
    pub fn new(joints: Vec<[f32; 2]>) -> Self {
        let confidence = vec![1.0; joints.len()];
        Self { joints, confidence }
    }

    pub fn with_confidence(joints: Vec<[f32; 2]>, confidence: Vec<f32>) -> Result<Self> {
        if joints.len() != confidence.len() {
            return Err(Error::Shape {
                op: "skeleton2d",
                left: vec![joints.len(), 2],
                right: vec![confidence.len()],
            });
        }
        Ok(Self { joints, confidence })
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![[0.0; 2]; n])
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Joints with nonzero confidence.
    pub fn visible(&self, j: usize) -> bool {
        self.confidence[j] > 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    pub fn flat(&self) -> impl Iterator<Item = f32> + '_ {
        self.joints.iter().flatten().copied()
    }

    pub fn center_at(&self, root: usize) -> Self {
        let [rx, ry] = self.joints[root];
        Self {
            joints: self.joints.iter().map(|&[x, y]| [x - rx, y - ry]).collect(),
            confidence: self.confidence.clone(),
        }
    }

    pub fn center_at_neck(&self) -> Self {
        self.center_at(joint::NECK)
    }
}

/// 3D joints in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub joints: Vec<[f32; 3]>,
}

impl Skeleton3D {
    pub fn new(joints: Vec<[f32; 3]>) -> Self {
        Self { joints }
    }

    pub fn from_flat(data: &[f32]) -> Self {
        Self {
            joints: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    pub fn flat(&self) -> impl Iterator<Item = f32> + '_ {
        self.joints.iter().flatten().copied()
    }

    pub fn center_at(&self, root: usize) -> Self {
        let [rx, ry, rz] = self.joints[root];
        Self {
            joints: self
                .joints
                .iter()
                .map(|&[x, y, z]| [x - rx, y - ry, z - rz])
                .collect(),
        }
    }

    pub fn center_at_neck(&self) -> Self {
        self.center_at(joint::NECK)
    }

    /// Applies a row-major 3×3 rotation to every joint.
    pub fn rotated(&self, r: &[[f64; 3]; 3]) -> Self {
        Self {
            joints: self
                .joints
                .iter()
                .map(|&j| {
                    let v = [j[0] as f64, j[1] as f64, j[2] as f64];
                    let mut out = [0.0f32; 3];
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = (r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]) as f32;
                    }
                    out
                })
                .collect(),
        }
    }
}

/// Pinhole camera: zero-skew intrinsics plus world-to-camera rotation and
/// translation (millimeters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major rotation.
    #[serde(rename = "R", with = "row_major")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

mod row_major {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &[[f64; 3]; 3], s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<f64> = r.iter().flatten().copied().collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[[f64; 3]; 3], D::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        if flat.len() != 9 {
            return Err(serde::de::Error::custom(format!(
                "R must have 9 entries, got {}",
                flat.len()
            )));
        }
        let mut r = [[0.0; 3]; 3];
        for (i, v) in flat.into_iter().enumerate() {
            r[i / 3][i % 3] = v;
        }
        Ok(r)
    }
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, r: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, r, t };
        cam.validate()?;
        Ok(cam)
    }

    /// Checks positive focal lengths and that `R` is a proper rotation.
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let all = [self.fx, self.fy, self.cx, self.cy]
            .into_iter()
            .chain(self.r.iter().flatten().copied())
            .chain(self.t);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("camera contains non-finite values".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.r[k][i] * self.r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-6 {
                    return Err(Error::Validation(format!(
                        "R is not orthonormal: (RᵀR)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        if (det3(&self.r) - 1.0).abs() > 1e-6 {
            return Err(Error::Validation("R must have determinant +1".into()));
        }
        Ok(())
    }

    /// World point to camera frame, `R·y + t`.
    pub fn to_camera(&self, y: [f64; 3]) -> [f64; 3] {
        let mut q = self.t;
        for (i, qi) in q.iter_mut().enumerate() {
            *qi += self.r[i][0] * y[0] + self.r[i][1] * y[1] + self.r[i][2] * y[2];
        }
        q
    }
}

pub(crate) fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Rotation about the y axis followed by one about the x axis.
pub fn rotation_yx(yaw: f64, pitch: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| rx[i][k] * ry[k][j]).sum();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLabel(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectLabel(pub usize);

pub fn one_hot(index: usize, vocab_size: usize) -> Result<Vec<f32>> {
    if index >= vocab_size {
        return Err(Error::Vocabulary {
            index,
            size: vocab_size,
        });
    }
    let mut v = vec![0.0; vocab_size];
    v[index] = 1.0;
    Ok(v)
}

/// Sum of one-hot vectors; several objects may be present at once.
pub fn multi_hot(indices: &[usize], vocab_size: usize) -> Result<Vec<f32>> {
    let mut v = vec![0.0; vocab_size];
    for &i in indices {
        if i >= vocab_size {
            return Err(Error::Vocabulary {
                index: i,
                size: vocab_size,
            });
        }
        v[i] += 1.0;
    }
    Ok(v)
}

impl ActionLabel {
    pub fn one_hot(self, vocab_size: usize) -> Result<Vec<f32>> {
        one_hot(self.0, vocab_size)
    }
}

impl ObjectLabel {
    pub fn one_hot(self, vocab_size: usize) -> Result<Vec<f32>> {
        one_hot(self.0, vocab_size)
    }
}

/// One observed step: characteristic 2D pose plus its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub pose: Skeleton2D,
    pub action: ActionLabel,
    pub objects: Vec<ObjectLabel>,
}

/// A window of `N` observed steps and the step that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub history: Vec<Step>,
    pub target_action: ActionLabel,
    pub target_pose: Skeleton2D,
    pub camera: Camera,
    pub sequence_id: String,
    /// Index of the target step within its sequence.
    pub step_index: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_layout_is_valid() {
        let l = JointLayout::upper_body();
        l.validate().unwrap();
        assert_eq!(l.num_joints(), NUM_JOINTS);
        assert_eq!(l.mirrored_bone_pairs(), vec![(1, 4), (2, 5), (3, 6)]);
    }

    #[test]
    fn mirror_is_involutive() {
        let l = JointLayout::upper_body();
        for j in 0..l.num_joints() {
            assert_eq!(l.mirror(l.mirror(j)), j);
        }
        assert_eq!(l.mirror(joint::RIGHT_HAND), joint::LEFT_HAND);
        assert_eq!(l.mirror(joint::HEAD), joint::HEAD);
    }

    #[test]
    fn layout_rejects_cycles_and_bad_mirrors() {
        let mut l = JointLayout::upper_body();
        l.bones[7] = (joint::HIP, joint::HEAD);
        assert!(l.validate().is_err());
        let mut l = JointLayout::upper_body();
        l.mirror_pairs.push((joint::HEAD, joint::HEAD));
        assert!(l.validate().is_err());
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(2, 4).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 1).unwrap(), vec![1.0]);
        assert!(matches!(
            one_hot(4, 4),
            Err(Error::Vocabulary { index: 4, size: 4 })
        ));
    }

    #[test]
    fn centered_pose_is_unchanged() {
        let p = Skeleton2D::new(vec![[3.0, -4.0], [0.0, 0.0], [10.0, 2.0]]);
        assert_eq!(p.center_at_neck(), p);
    }

    #[test]
    fn integer_shift_is_removed_exactly() {
        let p = Skeleton2D::new(vec![[3.0, -4.0], [7.0, 1.0], [10.0, 2.0]]);
        let shifted = Skeleton2D::new(p.joints.iter().map(|&[x, y]| [x + 10.0, y + 20.0]).collect());
        assert_eq!(shifted.center_at_neck(), p.center_at_neck());
    }

    #[test]
    fn camera_rejects_non_rotation() {
        let ok = rotation_yx(0.3, -0.1);
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, ok, [0.0; 3]).is_ok());
        let mut bad = ok;
        bad[0][0] *= 1.01;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, bad, [0.0; 3]).is_err());
        let reflect = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, reflect, [0.0; 3]).is_err());
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, ok, [0.0; 3]).is_err());
    }

    #[test]
    fn camera_json_uses_flat_rotation() {
        let cam = Camera::new(2.0, 3.0, 4.0, 5.0, rotation_yx(0.0, 0.0), [0.0, 0.0, 2000.0]).unwrap();
        let v = serde_json::to_value(&cam).unwrap();
        assert_eq!(v["R"].as_array().unwrap().len(), 9);
        let back: Camera = serde_json::from_value(v).unwrap();
        assert_eq!(back, cam);
    }

    fn pairwise(p: &Skeleton2D) -> Vec<f64> {
        let mut out = Vec::new();
        for a in &p.joints {
            for b in &p.joints {
                out.push(((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn centering_zeroes_neck_and_keeps_distances(
            coords in proptest::collection::vec(-2000.0f32..2000.0, NUM_JOINTS * 2)
        ) {
            let p = Skeleton2D::new(coords.chunks(2).map(|c| [c[0], c[1]]).collect());
            let c = p.center_at_neck();
            prop_assert_eq!(c.joints[joint::NECK], [0.0, 0.0]);
            // Relative to the pose's coordinate scale; f32 subtraction rounds
            // at that scale, not at the scale of each distance.
            let scale = coords.iter().fold(1.0f64, |m, v| m.max(v.abs() as f64));
            for (a, b) in pairwise(&p).iter().zip(pairwise(&c)) {
                prop_assert!((a - b).abs() <= 1e-6 * scale);
            }
            prop_assert_eq!(c.center_at_neck(), c.clone());
        }

        #[test]
        fn one_hot_sums_to_one(size in 1usize..50, idx in 0usize..50) {
            prop_assume!(idx < size);
            let v = one_hot(idx, size).unwrap();
            prop_assert_eq!(v.iter().sum::<f32>(), 1.0);
        }
    }
}
