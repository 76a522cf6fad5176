//! Synthetic "puppet grammar" datasets.
//!
//! Actions follow a Markov chain; each action owns a canonical 3D
//! characteristic pose. Every emitted step perturbs that pose by at most
//! `pose_noise_mm` per joint, projects it through a random camera, and
//! stores the 2D keypoints. A separate pose database is drawn from
//! angle-jittered canonical poses and never coincides with a sequence pose.
//! Each sequence, and each database pose, has its own body proportions.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    write_camera, write_manifest, write_pose_db, write_sequence_file, Dataset, DatasetManifest, Sequence,
    SequenceEntry, Splits, StepRecord, FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::geometry::{project, ProjectOptions};
use crate::pose::{joint, rotation_yx, Camera, JointLayout, Skeleton3D, NUM_JOINTS};

const HEAD_MM: f32 = 200.0;
const SHOULDER_MM: f32 = 180.0;
const UPPER_ARM_MM: f32 = 280.0;
const FOREARM_MM: f32 = 250.0;
const TORSO_MM: f32 = 500.0;

/// Arm configuration in degrees: `raise` lifts the arm sideways from
/// hanging, `forward` swings it toward the camera, `elbow` flexes the
/// forearm further forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmAngles {
    pub raise: f32,
    pub forward: f32,
    pub elbow: f32,
}

impl ArmAngles {
    pub const fn new(raise: f32, forward: f32, elbow: f32) -> Self {
        Self { raise, forward, elbow }
    }

    fn jittered<R: Rng + ?Sized>(self, deg: f32, rng: &mut R) -> Self {
        let mut j = || rng.random_range(-deg..=deg);
        Self::new(self.raise + j(), self.forward + j(), self.elbow + j())
    }
}

fn normalize(v: [f32; 3]) -> [f32; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Per-subject bone-length multipliers; left and right share a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyShape {
    pub head: f32,
    pub shoulder: f32,
    pub upper_arm: f32,
    pub forearm: f32,
    pub torso: f32,
}

impl Default for BodyShape {
    fn default() -> Self {
        Self {
            head: 1.0,
            shoulder: 1.0,
            upper_arm: 1.0,
            forearm: 1.0,
            torso: 1.0,
        }
    }
}

impl BodyShape {
    /// A global size factor in `1 ± scale` times per-bone factors in
    /// `1 ± bone`, all uniform.
    pub fn random<R: Rng + ?Sized>(scale: f32, bone: f32, rng: &mut R) -> Self {
        let mut u = |w: f32| if w > 0.0 { 1.0 + rng.random_range(-w..=w) } else { 1.0 };
        let g = u(scale);
        Self {
            head: g * u(bone),
            shoulder: g * u(bone),
            upper_arm: g * u(bone),
            forearm: g * u(bone),
            torso: g * u(bone),
        }
    }
}

fn arm(shoulder: [f32; 3], side: f32, a: ArmAngles, body: &BodyShape) -> ([f32; 3], [f32; 3]) {
    let (r, f, e) = (a.raise.to_radians(), a.forward.to_radians(), a.elbow.to_radians());
    let d = [side * r.sin() * f.cos(), r.cos() * f.cos(), -f.sin()];
    let ahead = [0.0, 0.0, -1.0f32];
    let along = d[2] * ahead[2];
    let mut perp = [ahead[0] - along * d[0], ahead[1] - along * d[1], ahead[2] - along * d[2]];
    if perp.iter().map(|v| v * v).sum::<f32>() < 1e-8 {
        perp = [0.0, -1.0, 0.0];
    }
    let perp = normalize(perp);
    let d2 = normalize([
        d[0] * e.cos() + perp[0] * e.sin(),
        d[1] * e.cos() + perp[1] * e.sin(),
        d[2] * e.cos() + perp[2] * e.sin(),
    ]);
    let (ua, fa) = (UPPER_ARM_MM * body.upper_arm, FOREARM_MM * body.forearm);
    let elbow = [shoulder[0] + ua * d[0], shoulder[1] + ua * d[1], shoulder[2] + ua * d[2]];
    let hand = [elbow[0] + fa * d2[0], elbow[1] + fa * d2[1], elbow[2] + fa * d2[2]];
    (elbow, hand)
}

/// Neck-centered upper-body pose with mirrored bone lengths. Axes: x to the
/// puppet's left, y down, z away from the camera.
pub fn puppet_pose(right: ArmAngles, left: ArmAngles) -> Skeleton3D {
    shaped_puppet_pose(right, left, &BodyShape::default())
}

pub fn shaped_puppet_pose(right: ArmAngles, left: ArmAngles, body: &BodyShape) -> Skeleton3D {
    let sh = SHOULDER_MM * body.shoulder;
    let rs = [-sh, 0.0, 0.0];
    let ls = [sh, 0.0, 0.0];
    let (re, rh) = arm(rs, -1.0, right, body);
    let (le, lh) = arm(ls, 1.0, left, body);
    let mut j = vec![[0.0f32; 3]; NUM_JOINTS];
    j[joint::HEAD] = [0.0, -HEAD_MM * body.head, 0.0];
    j[joint::RIGHT_SHOULDER] = rs;
    j[joint::RIGHT_ELBOW] = re;
    j[joint::RIGHT_HAND] = rh;
    j[joint::LEFT_SHOULDER] = ls;
    j[joint::LEFT_ELBOW] = le;
    j[joint::LEFT_HAND] = lh;
    j[joint::HIP] = [0.0, TORSO_MM * body.torso, 0.0];
    Skeleton3D::new(j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub right: ArmAngles,
    pub left: ArmAngles,
    /// Objects this action involves.
    #[serde(default)]
    pub objects: Vec<usize>,
    /// `(next action, weight)`; weights need not sum to one.
    pub successors: Vec<(usize, f64)>,
}

impl ActionSpec {
    pub fn canonical_pose(&self) -> Skeleton3D {
        puppet_pose(self.right, self.left)
    }

    pub fn pose_for(&self, body: &BodyShape) -> Skeleton3D {
        shaped_puppet_pose(self.right, self.left, body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub actions: Vec<ActionSpec>,
    #[serde(default)]
    pub objects: Vec<String>,
}

impl Default for Grammar {
    fn default() -> Self {
        let a = ArmAngles::new;
        let table = [
            ("reach", a(60.0, 60.0, 10.0), a(10.0, 0.0, 20.0)),
            ("grasp", a(30.0, 45.0, 80.0), a(30.0, 45.0, 80.0)),
            ("lift", a(150.0, 20.0, 30.0), a(20.0, 0.0, 20.0)),
            ("pour", a(90.0, 30.0, 60.0), a(40.0, 30.0, 90.0)),
            ("stir", a(20.0, 40.0, 100.0), a(20.0, 10.0, 30.0)),
            ("place", a(10.0, 0.0, 20.0), a(60.0, 60.0, 10.0)),
            ("wave", a(20.0, 0.0, 20.0), a(150.0, 20.0, 30.0)),
            ("rest", a(15.0, 10.0, 40.0), a(15.0, 10.0, 40.0)),
        ];
        let n = table.len();
        Self {
            actions: table
                .iter()
                .enumerate()
                .map(|(i, (name, right, left))| ActionSpec {
                    name: name.to_string(),
                    right: *right,
                    left: *left,
                    objects: vec![i % 4],
                    successors: vec![((i + 1) % n, 1.0)],
                })
                .collect(),
            objects: ["bowl", "knife", "cup", "board"].map(String::from).to_vec(),
        }
    }
}

impl Grammar {
    /// A deterministic cycle over `num_actions` procedurally posed actions.
    pub fn procedural(num_actions: usize, num_objects: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arm = || ArmAngles::new(rng.random_range(0.0..160.0), rng.random_range(0.0..80.0), rng.random_range(0.0..110.0));
        let actions = (0..num_actions)
            .map(|i| ActionSpec {
                name: format!("action_{i:02}"),
                right: arm(),
                left: arm(),
                objects: if num_objects > 0 { vec![i % num_objects] } else { vec![] },
                successors: vec![((i + 1) % num_actions, 1.0)],
            })
            .collect();
        Self {
            actions,
            objects: (0..num_objects).map(|i| format!("object_{i:02}")).collect(),
        }
    }

    /// Cooking-scale grammar: 37 actions with objects.
    pub fn cooking() -> Self {
        Self::procedural(37, 17, 37)
    }

    /// Assembly-scale grammar: 31 actions, no object labels.
    pub fn assembly() -> Self {
        Self::procedural(31, 0, 31)
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions.len() < 2 {
            return Err(Error::Config("grammar needs at least two actions".into()));
        }
        let n = self.actions.len();
        for a in &self.actions {
            if a.successors.is_empty() {
                return Err(Error::Config(format!("action `{}` is absorbing: no successors", a.name)));
            }
            for &(s, w) in &a.successors {
                if s >= n {
                    return Err(Error::Config(format!("action `{}` has unknown successor {s}", a.name)));
                }
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::Config(format!("action `{}` has non-positive weight", a.name)));
                }
            }
            if let Some(&o) = a.objects.iter().find(|&&o| o >= self.objects.len()) {
                return Err(Error::Config(format!("action `{}` uses unknown object {o}", a.name)));
            }
            if !a.canonical_pose().is_finite() {
                return Err(Error::Config(format!("action `{}` has a non-finite pose", a.name)));
            }
        }
        Ok(())
    }

    /// True when every action has exactly one successor.
    pub fn is_deterministic(&self) -> bool {
        self.actions.iter().all(|a| a.successors.len() == 1)
    }

    fn next<R: Rng + ?Sized>(&self, action: usize, rng: &mut R) -> usize {
        let succ = &self.actions[action].successors;
        if succ.len() == 1 {
            return succ[0].0;
        }
        let total: f64 = succ.iter().map(|s| s.1).sum();
        let mut u = rng.random::<f64>() * total;
        for &(s, w) in succ {
            if u < w {
                return s;
            }
            u -= w;
        }
        succ[succ.len() - 1].0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_sequences: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Bound on the per-joint displacement of sequence poses.
    pub pose_noise_mm: f32,
    pub db_size: usize,
    /// Per-angle jitter of database poses, in degrees.
    pub db_angle_jitter_deg: f32,
    /// Bound on the per-joint displacement of database poses.
    pub db_noise_mm: f32,
    /// Half-width of the uniform per-subject size factor.
    pub body_scale_range: f32,
    /// Half-width of the uniform per-bone length factor.
    pub bone_scale_range: f32,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub distance_mm: [f64; 2],
    pub focal_px: [f64; 2],
    pub principal_point: [f64; 2],
    /// Bound on the lateral camera offset.
    pub offset_mm: f64,
    pub frames_per_step: [u64; 2],
    /// Probability that a non-neck joint is marked occluded.
    pub occlusion_prob: f64,
    /// Train and validation fractions; the test split takes the rest.
    pub split: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_sequences: 715,
            min_steps: 8,
            max_steps: 14,
            pose_noise_mm: 20.0,
            db_size: 5000,
            db_angle_jitter_deg: 12.0,
            db_noise_mm: 5.0,
            body_scale_range: 0.10,
            bone_scale_range: 0.08,
            yaw_deg: 30.0,
            pitch_deg: 10.0,
            distance_mm: [2500.0, 3500.0],
            focal_px: [900.0, 1100.0],
            principal_point: [960.0, 540.0],
            offset_mm: 200.0,
            frames_per_step: [20, 60],
            occlusion_prob: 0.0,
            split: [0.70, 0.15],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_sequences == 0 {
            return bad("num_sequences must be positive");
        }
        if self.min_steps == 0 || self.min_steps > self.max_steps {
            return bad("step range must satisfy 0 < min_steps <= max_steps");
        }
        if !(self.distance_mm[0] > 0.0 && self.distance_mm[0] <= self.distance_mm[1]) {
            return bad("distance range must be positive and ordered");
        }
        if !(self.focal_px[0] > 0.0 && self.focal_px[0] <= self.focal_px[1]) {
            return bad("focal range must be positive and ordered");
        }
        if self.frames_per_step[0] == 0 || self.frames_per_step[0] > self.frames_per_step[1] {
            return bad("frames_per_step must be positive and ordered");
        }
        if !(0.0..1.0).contains(&self.occlusion_prob) {
            return bad("occlusion_prob must lie in [0, 1)");
        }
        let [tr, va] = self.split;
        if !(tr > 0.0 && va >= 0.0 && tr + va <= 1.0) {
            return bad("split fractions must be non-negative and sum to at most 1");
        }
        if self.pose_noise_mm < 0.0 || self.db_noise_mm < 0.0 || self.db_angle_jitter_deg < 0.0 {
            return bad("noise bounds must be non-negative");
        }
        if !(0.0..0.5).contains(&self.body_scale_range) || !(0.0..0.5).contains(&self.bone_scale_range) {
            return bad("body and bone scale ranges must lie in [0, 0.5)");
        }
        Ok(())
    }
}

/// Everything `cmd_synth` reads from its spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "super::default_version")]
    pub format_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub grammar: Grammar,
    #[serde(default)]
    pub config: SynthConfig,
}

fn default_name() -> String {
    "puppet".into()
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            name: default_name(),
            grammar: Grammar::default(),
            config: SynthConfig::default(),
        }
    }
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = super::read_json_file(path)?;
        if spec.format_version != FORMAT_VERSION {
            return Err(Error::Version(format!(
                "{}: synth spec format_version {}",
                path.display(),
                spec.format_version
            )));
        }
        Ok(spec)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let grammar = match name {
            "default" | "puppet" => Grammar::default(),
            "cooking" => Grammar::cooking(),
            "assembly" => Grammar::assembly(),
            _ => return Err(Error::Config(format!("unknown synth preset `{name}`"))),
        };
        Ok(Self {
            name: name.to_string(),
            grammar,
            ..Self::default()
        })
    }
}

/// One generated sequence with its hidden 3D ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub id: String,
    pub camera: Camera,
    pub body: BodyShape,
    /// Raw (uncentered) pixel keypoints.
    pub records: Vec<StepRecord>,
    /// Neck-centered 3D characteristic pose of every step.
    pub poses3d: Vec<Skeleton3D>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub sequences: Vec<SynthSequence>,
    pub pose_db: Vec<Skeleton3D>,
}

fn bounded_noise<R: Rng + ?Sized>(pose: &Skeleton3D, bound: f32, rng: &mut R) -> Skeleton3D {
    if bound == 0.0 {
        return pose.clone();
    }
    let joints = pose
        .joints
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if j == joint::NECK {
                return *p;
            }
            // Rejection sampling keeps the displacement inside the ball.
            loop {
                let d: [f32; 3] = std::array::from_fn(|_| rng.random_range(-1.0f32..=1.0));
                if d.iter().map(|v| v * v).sum::<f32>() <= 1.0 {
                    break [p[0] + bound * d[0], p[1] + bound * d[1], p[2] + bound * d[2]];
                }
            }
        })
        .collect();
    Skeleton3D::new(joints)
}

fn pose_key(p: &Skeleton3D) -> Vec<u32> {
    p.flat().map(f32::to_bits).collect()
}

fn random_camera<R: Rng + ?Sized>(c: &SynthConfig, rng: &mut R) -> Result<Camera> {
    let yaw = rng.random_range(-c.yaw_deg..=c.yaw_deg).to_radians();
    let pitch = rng.random_range(-c.pitch_deg..=c.pitch_deg).to_radians();
    let dist = rng.random_range(c.distance_mm[0]..=c.distance_mm[1]);
    let f = rng.random_range(c.focal_px[0]..=c.focal_px[1]);
    let tx = rng.random_range(-c.offset_mm..=c.offset_mm);
    let ty = rng.random_range(-c.offset_mm..=c.offset_mm) * 0.5;
    Camera::new(
        f,
        f,
        c.principal_point[0],
        c.principal_point[1],
        rotation_yx(yaw, pitch),
        [tx, ty, dist],
    )
}

/// Generates a dataset in memory. Identical `(spec, seed)` always yields
/// identical output.
pub fn generate_puppet_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    let grammar = &spec.grammar;
    let cfg = &spec.config;
    grammar.validate()?;
    cfg.validate()?;
    let layout = JointLayout::upper_body();

    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(k);
        r
    };
    let mut seq_rng = stream(1);
    let mut cam_rng = stream(2);
    let mut db_rng = stream(3);
    let mut split_rng = stream(4);
    let mut body_rng = stream(5);

    let proj = ProjectOptions::default();
    let mut sequences = Vec::with_capacity(cfg.num_sequences);
    let mut seen = HashSet::new();
    for s in 0..cfg.num_sequences {
        let id = format!("seq_{s:04}");
        let camera = random_camera(cfg, &mut cam_rng)?;
        let body = BodyShape::random(cfg.body_scale_range, cfg.bone_scale_range, &mut body_rng);
        let canon: Vec<Skeleton3D> = grammar.actions.iter().map(|a| a.pose_for(&body)).collect();
        let len = seq_rng.random_range(cfg.min_steps..=cfg.max_steps);
        let mut chain = vec![seq_rng.random_range(0..grammar.actions.len())];
        while chain.len() < len {
            let next = grammar.next(*chain.last().unwrap(), &mut seq_rng);
            chain.push(next);
        }
        let objects: Vec<usize> = chain
            .iter()
            .flat_map(|&a| grammar.actions[a].objects.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut frame = 0u64;
        let mut records = Vec::with_capacity(len);
        let mut poses3d = Vec::with_capacity(len);
        for &a in &chain {
            let pose = bounded_noise(&canon[a], cfg.pose_noise_mm, &mut seq_rng);
            let px = project(&pose, &camera, &proj)?;
            let span = seq_rng.random_range(cfg.frames_per_step[0]..=cfg.frames_per_step[1]);
            let charpose = frame + seq_rng.random_range(0..span);
            let pose2d = px
                .joints
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let occluded = j != layout.root
                        && cfg.occlusion_prob > 0.0
                        && seq_rng.random::<f64>() < cfg.occlusion_prob;
                    [p[0], p[1], if occluded { 0.0 } else { 1.0 }]
                })
                .collect();
            records.push(StepRecord {
                frame,
                end_frame: frame + span,
                action_id: a,
                object_ids: objects.clone(),
                charpose_frame: charpose,
                pose2d,
            });
            seen.insert(pose_key(&pose));
            poses3d.push(pose);
            frame += span;
        }
        sequences.push(SynthSequence {
            id,
            camera,
            body,
            records,
            poses3d,
        });
    }

    let mut pose_db = Vec::with_capacity(cfg.db_size);
    while pose_db.len() < cfg.db_size {
        let a = &grammar.actions[db_rng.random_range(0..grammar.actions.len())];
        let jitter = cfg.db_angle_jitter_deg;
        let body = BodyShape::random(cfg.body_scale_range, cfg.bone_scale_range, &mut db_rng);
        let base = shaped_puppet_pose(
            a.right.jittered(jitter, &mut db_rng),
            a.left.jittered(jitter, &mut db_rng),
            &body,
        );
        let pose = bounded_noise(&base, cfg.db_noise_mm, &mut db_rng);
        if !seen.contains(&pose_key(&pose)) {
            pose_db.push(pose);
        }
    }

    let mut ids: Vec<String> = sequences.iter().map(|s| s.id.clone()).collect();
    for i in (1..ids.len()).rev() {
        let j = split_rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let n = ids.len();
    let n_train = ((n as f64) * cfg.split[0]).floor() as usize;
    let n_val = ((n as f64) * cfg.split[1]).floor() as usize;
    let sorted = |v: &[String]| {
        let mut v = v.to_vec();
        v.sort();
        v
    };
    let splits = Splits {
        train: sorted(&ids[..n_train]),
        val: sorted(&ids[n_train..n_train + n_val]),
        test: sorted(&ids[n_train + n_val..]),
    };

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        name: spec.name.clone(),
        joint_layout: layout,
        action_vocab: grammar.actions.iter().map(|a| a.name.clone()).collect(),
        object_vocab: grammar.objects.clone(),
        sequences: sequences
            .iter()
            .map(|s| SequenceEntry {
                id: s.id.clone(),
                file: format!("sequences/{}.jsonl", s.id),
                camera: format!("cameras/{}.json", s.id),
            })
            .collect(),
        splits,
        pose_db: (cfg.db_size > 0).then(|| "pose_db.p3db".to_string()),
    };
    manifest.validate()?;
    Ok(SynthDataset {
        manifest,
        sequences,
        pose_db,
    })
}

impl SynthDataset {
    /// Writes the manifest, sequence, camera and pose database files under
    /// `dir`.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        for s in &self.sequences {
            let entry = self.manifest.entry(&s.id)?;
            write_sequence_file(&dir.join(&entry.file), &s.records)?;
            write_camera(&dir.join(&entry.camera), &s.camera)?;
        }
        if let Some(db) = &self.manifest.pose_db {
            write_pose_db(&dir.join(db), &self.pose_db, self.manifest.joint_layout.num_joints())?;
        }
        let path = dir.join("manifest.json");
        write_manifest(&path, &self.manifest)?;
        Ok(path)
    }

    /// The same data as [`Dataset::load`] would return after [`Self::write`].
    pub fn dataset(&self) -> Dataset {
        let root = self.manifest.joint_layout.root;
        let sequences = self
            .sequences
            .iter()
            .map(|s| {
                let records = s
                    .records
                    .iter()
                    .map(|r| {
                        let mut r = r.clone();
                        let neck = r.pose2d[root];
                        for p in r.pose2d.iter_mut() {
                            p[0] -= neck[0];
                            p[1] -= neck[1];
                        }
                        r
                    })
                    .collect();
                (
                    s.id.clone(),
                    Sequence {
                        id: s.id.clone(),
                        camera: s.camera.clone(),
                        records,
                    },
                )
            })
            .collect();
        Dataset {
            manifest: self.manifest.clone(),
            root: Default::default(),
            sequences,
        }
    }

    pub fn sequence(&self, id: &str) -> Option<&SynthSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }
}
