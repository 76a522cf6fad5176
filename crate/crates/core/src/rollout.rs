//! Autoregressive multi-step forecasting.
//!
//! Each predicted 3D pose is projected with the sequence camera,
//! neck-centered and pushed into the sliding window together with the fed
//! back action. Objects stay fixed to those of the first observed step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::eval::argmax;
use crate::forecaster::{ForecastInput, Forecaster};
use crate::geometry::{project, ProjectOptions};
use crate::pose::{joint, ActionLabel, Camera, Skeleton2D, Skeleton3D, Step};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoisePolicy {
    Zero,
    /// Fresh standard-normal noise at every step.
    #[default]
    Resample,
    Fixed {
        values: Vec<f32>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionFeedback {
    /// Highest logit, lowest index on ties.
    #[default]
    Argmax,
    /// Categorical draw from `softmax(logits / temperature)`.
    Sample { temperature: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub steps: usize,
    pub noise: NoisePolicy,
    pub feedback: ActionFeedback,
    pub projection: ProjectOptions,
}

impl RolloutConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            noise: NoisePolicy::default(),
            feedback: ActionFeedback::default(),
            projection: ProjectOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub action: ActionLabel,
    pub logits: Vec<f32>,
    pub pose3d: Skeleton3D,
    /// Neck-centered projection of `pose3d`.
    pub pose2d: Skeleton2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutFailure {
    /// Zero-based index of the step that could not be completed.
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub failure: Option<RolloutFailure>,
}

fn sample_action<R: Rng + ?Sized>(logits: &[f32], temperature: f32, rng: &mut R) -> usize {
    let t = temperature.max(1e-6) as f64;
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let w: Vec<f64> = logits.iter().map(|&v| ((v as f64 - max) / t).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

/// Rolls out `config.steps` steps for every `(history, camera)` start,
/// batching active sequences into one forward pass per step.
pub fn rollout_batch<R: Rng + ?Sized>(
    model: &Forecaster,
    starts: &[(&[Step], &Camera)],
    config: &RolloutConfig,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    if config.steps == 0 {
        return Err(Error::Contract("rollout needs at least one step".into()));
    }
    let c = &model.config;
    if let NoisePolicy::Fixed { values } = &config.noise {
        if values.len() != c.noise_dim {
            return Err(Error::Shape {
                op: "fixed rollout noise",
                left: vec![values.len()],
                right: vec![c.noise_dim],
            });
        }
    }
    let mut windows: Vec<Vec<Step>> = Vec::with_capacity(starts.len());
    for (h, _) in starts {
        if h.len() != c.history {
            return Err(Error::Shape {
                op: "rollout history",
                left: vec![h.len()],
                right: vec![c.history],
            });
        }
        windows.push(h.to_vec());
    }
    let objects: Vec<_> = starts.iter().map(|(h, _)| h[0].objects.clone()).collect();
    let mut out: Vec<Rollout> = starts
        .iter()
        .map(|_| Rollout {
            steps: Vec::with_capacity(config.steps),
            failure: None,
        })
        .collect();
    let mut active: Vec<usize> = (0..starts.len()).collect();

    for t in 0..config.steps {
        if active.is_empty() {
            break;
        }
        let rows = active.len();
        let noise = match &config.noise {
            NoisePolicy::Zero => vec![0.0; rows * c.noise_dim],
            NoisePolicy::Resample => model.sample_noise(rows, rng),
            NoisePolicy::Fixed { values } => values.iter().copied().cycle().take(rows * c.noise_dim).collect(),
        };
        let hist: Vec<&[Step]> = active.iter().map(|&i| windows[i].as_slice()).collect();
        let input = ForecastInput::from_histories(c, &hist, noise)?;
        let preds = model.predict(&input)?;
        let mut still = Vec::with_capacity(rows);
        for (&i, pred) in active.iter().zip(preds) {
            let action = match config.feedback {
                ActionFeedback::Argmax => argmax(&pred.action_logits),
                ActionFeedback::Sample { temperature } => sample_action(&pred.action_logits, temperature, rng),
            };
            match project(&pred.pose3d, starts[i].1, &config.projection) {
                Ok(px) => {
                    let pose2d = px.center_at(joint::NECK);
                    windows[i].remove(0);
                    windows[i].push(Step {
                        pose: pose2d.clone(),
                        action: ActionLabel(action),
                        objects: objects[i].clone(),
                    });
                    out[i].steps.push(RolloutStep {
                        action: ActionLabel(action),
                        logits: pred.action_logits,
                        pose3d: pred.pose3d,
                        pose2d,
                    });
                    still.push(i);
                }
                Err(e) => {
                    out[i].failure = Some(RolloutFailure {
                        step: t,
                        message: e.to_string(),
                    });
                }
            }
        }
        active = still;
    }
    Ok(out)
}

pub fn rollout<R: Rng + ?Sized>(
    model: &Forecaster,
    history: &[Step],
    camera: &Camera,
    config: &RolloutConfig,
    rng: &mut R,
) -> Result<Rollout> {
    Ok(rollout_batch(model, &[(history, camera)], config, rng)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub action_id: usize,
    pub action_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_logits: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose3d_mm: Option<Vec<[f32; 3]>>,
    pub pose2d_px: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRollout {
    pub sequence_id: String,
    /// Index of the first forecast step within the sequence.
    pub start_step: usize,
    pub steps: Vec<RolloutRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RolloutFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutFile {
    pub format_version: u32,
    pub dataset: String,
    pub split: Split,
    pub history: usize,
    pub horizon: usize,
    pub sequences: Vec<SequenceRollout>,
}

impl RolloutFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f: Self = crate::data::read_json_file(path)?;
        if f.format_version != FORMAT_VERSION {
            return Err(Error::Version(format!(
                "{}: rollout format_version {}",
                path.display(),
                f.format_version
            )));
        }
        Ok(f)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::data::write_pretty_json(path, self)
    }
}

/// Rolls out every sequence of `split` from its first `N` ground-truth
/// steps. Sequences with fewer than `N + 1` steps are skipped.
pub fn rollout_dataset(
    model: &Forecaster,
    dataset: &Dataset,
    split: Split,
    config: &RolloutConfig,
    seed: u64,
) -> Result<RolloutFile> {
    let n = model.config.history;
    let vocab = &dataset.manifest.action_vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(21);
    let seqs: Vec<_> = dataset.split(split).into_iter().filter(|s| s.len() > n).collect();
    let steps: Vec<Vec<Step>> = seqs.iter().map(|s| s.steps()).collect::<Result<_>>()?;
    let mut sequences = Vec::with_capacity(seqs.len());
    for (chunk_seqs, chunk_steps) in seqs.chunks(1024).zip(steps.chunks(1024)) {
        let starts: Vec<(&[Step], &Camera)> = chunk_seqs
            .iter()
            .zip(chunk_steps)
            .map(|(s, st)| (&st[..n], &s.camera))
            .collect();
        for (s, r) in chunk_seqs.iter().zip(rollout_batch(model, &starts, config, &mut rng)?) {
            sequences.push(SequenceRollout {
                sequence_id: s.id.clone(),
                start_step: n,
                steps: r
                    .steps
                    .into_iter()
                    .map(|st| RolloutRecord {
                        action_id: st.action.0,
                        action_name: vocab.get(st.action.0).cloned().unwrap_or_default(),
                        action_logits: Some(st.logits),
                        pose3d_mm: Some(st.pose3d.joints),
                        pose2d_px: st.pose2d.joints,
                    })
                    .collect(),
                error: r.failure,
            });
        }
    }
    Ok(RolloutFile {
        format_version: FORMAT_VERSION,
        dataset: dataset.manifest.name.clone(),
        split,
        history: n,
        horizon: config.steps,
        sequences,
    })
}

/// A rollout file whose "predictions" are the ground truth, for checking
/// the evaluation pipeline.
pub fn ground_truth_rollouts(dataset: &Dataset, split: Split, history: usize, horizon: usize) -> Result<RolloutFile> {
    let vocab = &dataset.manifest.action_vocab;
    let mut sequences = Vec::new();
    for s in dataset.split(split) {
        if s.len() <= history {
            continue;
        }
        let steps = s.records[history..(history + horizon).min(s.len())]
            .iter()
            .map(|r| RolloutRecord {
                action_id: r.action_id,
                action_name: vocab[r.action_id].clone(),
                action_logits: None,
                pose3d_mm: None,
                pose2d_px: r.pose2d.iter().map(|p| [p[0], p[1]]).collect(),
            })
            .collect();
        sequences.push(SequenceRollout {
            sequence_id: s.id.clone(),
            start_step: history,
            steps,
            error: None,
        });
    }
    Ok(RolloutFile {
        format_version: FORMAT_VERSION,
        dataset: dataset.manifest.name.clone(),
        split,
        history,
        horizon,
        sequences,
    })
}
