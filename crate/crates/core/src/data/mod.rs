//! Dataset manifests, per-sequence annotation files, the binary 3D pose
//! database and the synthetic puppet-grammar generator.
//!
//! On-disk layout of a dataset:
//!
//! ```text
//! manifest.json            names, vocabularies, layout, splits
//! sequences/<id>.jsonl     one annotated step per line
//! cameras/<id>.json        intrinsics + extrinsics
//! pose_db.p3db             uncorrelated 3D poses
//! ```

pub mod openpose;
pub mod p3db;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{ActionLabel, Camera, JointLayout, ObjectLabel, SequenceSample, Skeleton2D, Step};

pub use p3db::{read_pose_db, write_pose_db};
pub use synth::{generate_puppet_dataset, Grammar, SynthConfig, SynthDataset, SynthSpec};

pub const FORMAT_VERSION: u32 = 1;

/// Environment variable consulted for relative dataset paths.
pub const DATA_ROOT_ENV: &str = "DATA_ROOT";

fn default_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    /// Step annotations, relative to the manifest directory.
    pub file: String,
    /// Camera JSON, relative to the manifest directory.
    pub camera: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Input(format!("unknown split `{s}`"))),
        }
    }
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub name: String,
    pub joint_layout: JointLayout,
    pub action_vocab: Vec<String>,
    #[serde(default)]
    pub object_vocab: Vec<String>,
    pub sequences: Vec<SequenceEntry>,
    pub splits: Splits,
    /// Optional 3D pose database, relative to the manifest directory.
    #[serde(default)]
    pub pose_db: Option<String>,
}

impl DatasetManifest {
    /// Checks everything that does not need the file system.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version(format!(
                "manifest format_version {} (supported: {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.joint_layout.validate()?;
        if self.action_vocab.is_empty() {
            return Err(Error::Validation("empty action vocabulary".into()));
        }
        let mut ids = HashSet::new();
        for s in &self.sequences {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sequence id `{}`", s.id)));
            }
        }
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (name, list) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for id in list {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Validation(format!(
                        "{name} split references unknown sequence `{id}`"
                    )));
                }
                if let Some(prev) = seen.insert(id, name) {
                    return Err(Error::Validation(format!(
                        "sequence `{id}` appears in both {prev} and {name} splits"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Result<&SequenceEntry> {
        self.sequences
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Input(format!("no sequence `{id}` in manifest `{}`", self.name)))
    }
}

/// Resolves a dataset path: absolute paths pass through, relative ones are
/// joined to `DATA_ROOT` when set.
pub fn resolve_data_path(path: impl AsRef<Path>) -> PathBuf {
    let p = path.as_ref();
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if !root.is_empty() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    #[serde(default = "default_version")]
    pub format_version: u32,
    #[serde(flatten)]
    pub camera: Camera,
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let file: CameraFile = read_json(path)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Version(format!(
            "{}: camera format_version {}",
            path.display(),
            file.format_version
        )));
    }
    file.camera.validate()?;
    Ok(file.camera)
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    ensure_parent(path)?;
    write_json(
        path,
        &CameraFile {
            format_version: FORMAT_VERSION,
            camera: camera.clone(),
        },
    )
}

/// One line of a sequence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// First frame of the action segment.
    pub frame: u64,
    /// One past the last frame of the segment.
    pub end_frame: u64,
    pub action_id: usize,
    #[serde(default)]
    pub object_ids: Vec<usize>,
    /// Frame holding the characteristic pose.
    pub charpose_frame: u64,
    /// `J` entries of `[x, y, confidence]`.
    pub pose2d: Vec<[f32; 3]>,
}

impl StepRecord {
    pub fn skeleton(&self) -> Result<Skeleton2D> {
        Skeleton2D::with_confidence(
            self.pose2d.iter().map(|p| [p[0], p[1]]).collect(),
            self.pose2d.iter().map(|p| p[2]).collect(),
        )
    }

    pub fn step(&self) -> Result<Step> {
        Ok(Step {
            pose: self.skeleton()?,
            action: ActionLabel(self.action_id),
            objects: self.object_ids.iter().map(|&o| ObjectLabel(o)).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub camera: Camera,
    pub records: Vec<StepRecord>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn steps(&self) -> Result<Vec<Step>> {
        self.records.iter().map(StepRecord::step).collect()
    }
}

/// Parses a sequence file. Poses are neck-centered, records are checked
/// against the layout and vocabularies and must be ordered by frame.
pub fn read_sequence_file(
    path: &Path,
    layout: &JointLayout,
    num_actions: usize,
    num_objects: usize,
) -> Result<Vec<StepRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<StepRecord> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), lineno + 1);
        let mut rec: StepRecord = serde_json::from_str(&line).map_err(|e| Error::json(at(), e))?;
        if rec.pose2d.len() != layout.num_joints() {
            return Err(Error::Validation(format!(
                "{}: {} joints, layout has {}",
                at(),
                rec.pose2d.len(),
                layout.num_joints()
            )));
        }
        if rec.pose2d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{}: non-finite keypoint", at())));
        }
        if rec.pose2d.iter().any(|p| !(0.0..=1.0).contains(&p[2])) {
            return Err(Error::Validation(format!("{}: confidence outside [0, 1]", at())));
        }
        if !(rec.frame <= rec.charpose_frame && rec.charpose_frame < rec.end_frame) {
            return Err(Error::Validation(format!(
                "{}: characteristic frame {} outside action range [{}, {})",
                at(),
                rec.charpose_frame,
                rec.frame,
                rec.end_frame
            )));
        }
        if rec.action_id >= num_actions {
            return Err(Error::Vocabulary {
                index: rec.action_id,
                size: num_actions,
            });
        }
        if let Some(&o) = rec.object_ids.iter().find(|&&o| o >= num_objects) {
            return Err(Error::Vocabulary {
                index: o,
                size: num_objects,
            });
        }
        if let Some(prev) = out.last() {
            if rec.frame < prev.frame {
                return Err(Error::Validation(format!("{}: steps not ordered by frame", at())));
            }
        }
        let neck = rec.pose2d[layout.root];
        for p in rec.pose2d.iter_mut() {
            p[0] -= neck[0];
            p[1] -= neck[1];
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_sequence_file(path: &Path, records: &[StepRecord]) -> Result<()> {
    ensure_parent(path)?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("serializable record");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Sliding windows of `n` steps, each paired with the step that follows.
pub fn window_samples(sequence: &Sequence, n: usize) -> Result<Vec<SequenceSample>> {
    if n == 0 {
        return Err(Error::Contract("window length must be positive".into()));
    }
    let steps = sequence.steps()?;
    if steps.len() <= n {
        return Ok(Vec::new());
    }
    Ok((n..steps.len())
        .map(|k| SequenceSample {
            history: steps[k - n..k].to_vec(),
            target_action: steps[k].action,
            target_pose: steps[k].pose.clone(),
            camera: sequence.camera.clone(),
            sequence_id: sequence.id.clone(),
            step_index: k,
        })
        .collect())
}

/// A manifest with all of its sequences loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub sequences: BTreeMap<String, Sequence>,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = resolve_data_path(manifest_path);
        let manifest: DatasetManifest = read_json(&path)?;
        manifest.validate()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut sequences = BTreeMap::new();
        for entry in &manifest.sequences {
            let seq = load_sequence(&manifest, &root, &entry.id)?;
            sequences.insert(entry.id.clone(), seq);
        }
        if let Some(db) = &manifest.pose_db {
            let p = root.join(db);
            if !p.is_file() {
                return Err(Error::Input(format!("pose database {} does not exist", p.display())));
            }
        }
        Ok(Self {
            manifest,
            root,
            sequences,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.manifest.action_vocab.len()
    }

    pub fn num_objects(&self) -> usize {
        self.manifest.object_vocab.len().max(1)
    }

    pub fn split(&self, split: Split) -> Vec<&Sequence> {
        self.manifest
            .splits
            .get(split)
            .iter()
            .map(|id| &self.sequences[id])
            .collect()
    }

    /// Windows of every sequence in `split`, plus the number of sequences
    /// too short to yield one.
    pub fn windows(&self, split: Split, n: usize) -> Result<(Vec<SequenceSample>, usize)> {
        let mut out = Vec::new();
        let mut skipped = 0;
        for seq in self.split(split) {
            let w = window_samples(seq, n)?;
            if w.is_empty() {
                skipped += 1;
            }
            out.extend(w);
        }
        if skipped > 0 {
            log::warn!("{skipped} {split:?} sequences shorter than {} steps skipped", n + 1);
        }
        Ok((out, skipped))
    }

    pub fn pose_db_path(&self) -> Option<PathBuf> {
        self.manifest.pose_db.as_ref().map(|p| self.root.join(p))
    }
}

/// Loads one sequence (annotations and camera) listed in `manifest`.
pub fn load_sequence(manifest: &DatasetManifest, root: &Path, id: &str) -> Result<Sequence> {
    let entry = manifest.entry(id)?;
    let seq_path = root.join(&entry.file);
    let cam_path = root.join(&entry.camera);
    for p in [&seq_path, &cam_path] {
        if !p.is_file() {
            return Err(Error::Input(format!("{} does not exist", p.display())));
        }
    }
    let records = read_sequence_file(
        &seq_path,
        &manifest.joint_layout,
        manifest.action_vocab.len(),
        manifest.object_vocab.len().max(1),
    )?;
    Ok(Sequence {
        id: id.to_string(),
        camera: read_camera(&cam_path)?,
        records,
    })
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    ensure_parent(path)?;
    write_json(path, manifest)
}

pub fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    write_json(path, value)
}

pub(crate) fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::rotation_yx;

    fn record(frame: u64, action: usize, x: f32) -> StepRecord {
        StepRecord {
            frame,
            end_frame: frame + 10,
            action_id: action,
            object_ids: vec![0],
            charpose_frame: frame + 3,
            pose2d: (0..9).map(|j| [x + j as f32, 2.0 * j as f32, 1.0]).collect(),
        }
    }

    fn sequence(len: usize) -> Sequence {
        Sequence {
            id: "s".into(),
            camera: Camera::new(1000.0, 1000.0, 960.0, 540.0, rotation_yx(0.1, 0.0), [0.0, 0.0, 3000.0]).unwrap(),
            records: (0..len).map(|k| record(10 * k as u64, k % 3, k as f32)).collect(),
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_samples(&sequence(5), 3).unwrap().len(), 2);
        assert_eq!(window_samples(&sequence(3), 3).unwrap().len(), 0);
    }

    #[test]
    fn window_contents_match_enumeration() {
        let seq = sequence(10);
        let w = window_samples(&seq, 3).unwrap();
        assert_eq!(w.len(), 7);
        for (i, s) in w.iter().enumerate() {
            assert_eq!(s.step_index, i + 3);
            for k in 0..3 {
                assert_eq!(s.history[k], seq.records[i + k].step().unwrap());
            }
            assert_eq!(s.target_action.0, seq.records[i + 3].action_id);
            assert_eq!(s.target_pose, seq.records[i + 3].skeleton().unwrap());
        }
    }

    #[test]
    fn sequence_file_centers_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        write_sequence_file(&p, &[record(0, 1, 5.0)]).unwrap();
        let layout = JointLayout::upper_body();
        let recs = read_sequence_file(&p, &layout, 4, 1).unwrap();
        assert_eq!(recs[0].pose2d[1], [0.0, 0.0, 1.0]);

        let mut bad = record(0, 1, 0.0);
        bad.charpose_frame = 10;
        write_sequence_file(&p, &[bad]).unwrap();
        assert!(matches!(read_sequence_file(&p, &layout, 4, 1), Err(Error::Validation(_))));

        write_sequence_file(&p, &[record(0, 7, 0.0)]).unwrap();
        assert!(matches!(
            read_sequence_file(&p, &layout, 4, 1),
            Err(Error::Vocabulary { index: 7, size: 4 })
        ));
    }

    #[test]
    fn camera_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cam.json");
        let cam = sequence(1).camera;
        write_camera(&p, &cam).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"format_version\": 1"));
        assert_eq!(read_camera(&p).unwrap(), cam);
    }

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            format_version: FORMAT_VERSION,
            name: "t".into(),
            joint_layout: JointLayout::upper_body(),
            action_vocab: vec!["a".into(), "b".into()],
            object_vocab: vec![],
            sequences: ["x", "y", "z"]
                .iter()
                .map(|id| SequenceEntry {
                    id: id.to_string(),
                    file: format!("{id}.jsonl"),
                    camera: format!("{id}.json"),
                })
                .collect(),
            splits: Splits {
                train: vec!["x".into()],
                val: vec!["y".into()],
                test: vec!["z".into()],
            },
            pose_db: None,
        }
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let mut m = manifest();
        m.validate().unwrap();
        m.splits.test.push("x".into());
        assert!(matches!(m.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut m = manifest();
        m.format_version = 2;
        assert!(matches!(m.validate(), Err(Error::Version(_))));
    }
}
