//! Scoring rollout files against a dataset split.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quality::{quality_metric, QualityConfig};
use super::{
    label_accuracy, most_common_baseline, per_step_accuracy, repeat_last_baseline, topk_accuracy,
    train_average_baseline, zero_velocity_baseline,
};
use crate::data::{Dataset, Split, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{mpjpe_2d, symmetry_error};
use crate::pose::{Skeleton2D, Skeleton3D};
use crate::rollout::RolloutFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub zero_velocity_mpjpe_px: f64,
    pub train_average_mpjpe_px: f64,
    pub repeat_last_top1: f64,
    pub most_common_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub split: Split,
    pub num_sequences: usize,
    pub mpjpe_px: f64,
    pub quality: Option<f64>,
    pub top1: f64,
    pub top3: f64,
    pub symmetry_mm: Option<f64>,
    /// Top-1 accuracy at each forecast step.
    pub per_step_accuracy: Vec<f64>,
    pub per_step_top3: Vec<f64>,
    pub baselines: BaselineReport,
}

/// Scores `rollouts` against the ground truth of their split. `pose_db`
/// enables the quality metric when predictions carry 3D poses.
pub fn evaluate_rollouts(
    rollouts: &RolloutFile,
    dataset: &Dataset,
    pose_db: Option<&[Skeleton3D]>,
    quality: &QualityConfig,
) -> Result<EvalReport> {
    let na = dataset.num_actions();
    let layout = &dataset.manifest.joint_layout;
    let mut logits = Vec::new();
    let mut gt_actions = Vec::new();
    let mut pred2d = Vec::new();
    let mut gt2d = Vec::new();
    let mut zero_vel = Vec::new();
    let mut repeat_last = Vec::new();
    let mut fakes = Vec::new();
    let mut spans = Vec::new();

    for r in &rollouts.sequences {
        let seq = dataset
            .sequences
            .get(&r.sequence_id)
            .ok_or_else(|| Error::Input(format!("rollout sequence `{}` not in manifest", r.sequence_id)))?;
        if r.start_step == 0 || r.start_step > seq.len() {
            return Err(Error::Input(format!(
                "rollout of `{}` starts at step {} of {}",
                r.sequence_id,
                r.start_step,
                seq.len()
            )));
        }
        let steps = seq.steps()?;
        let n = r.steps.len().min(seq.len() - r.start_step);
        if n == 0 {
            continue;
        }
        let gt = &steps[r.start_step..r.start_step + n];
        let mut ls = Vec::with_capacity(n);
        for rec in &r.steps[..n] {
            if rec.action_id >= na {
                return Err(Error::Vocabulary {
                    index: rec.action_id,
                    size: na,
                });
            }
            if rec.pose2d_px.len() != layout.num_joints() {
                return Err(Error::Shape {
                    op: "rollout pose2d",
                    left: vec![rec.pose2d_px.len(), 2],
                    right: vec![layout.num_joints(), 2],
                });
            }
            ls.push(match &rec.action_logits {
                Some(l) if l.len() == na => l.clone(),
                Some(l) => {
                    return Err(Error::Shape {
                        op: "rollout logits",
                        left: vec![l.len()],
                        right: vec![na],
                    })
                }
                None => (0..na).map(|k| if k == rec.action_id { 1.0 } else { 0.0 }).collect(),
            });
            pred2d.push(Skeleton2D::new(rec.pose2d_px.clone()));
            if let Some(p) = &rec.pose3d_mm {
                fakes.push(Skeleton3D::new(p.clone()));
            }
        }
        logits.push(ls);
        gt_actions.push(gt.iter().map(|s| s.action.0).collect::<Vec<_>>());
        gt2d.extend(gt.iter().map(|s| s.pose.clone()));
        let history = &steps[..r.start_step];
        zero_vel.extend(zero_velocity_baseline(&[history[history.len() - 1].pose.clone()], n)?);
        let hist_actions: Vec<usize> = history.iter().map(|s| s.action.0).collect();
        repeat_last.push(repeat_last_baseline(&hist_actions, n)?);
        spans.push(n);
    }
    if logits.is_empty() {
        return Err(Error::Input("no rollout step overlaps the ground truth".into()));
    }

    let mut train_poses = Vec::new();
    let mut train_actions = Vec::new();
    for s in dataset.split(Split::Train) {
        for r in &s.records {
            train_poses.push(r.skeleton()?);
            train_actions.push(r.action_id);
        }
    }
    let avg = train_average_baseline(&train_poses)?;
    let avg_pred = vec![avg; gt2d.len()];
    let mode = most_common_baseline(&train_actions, na, 1)?[0];
    let most_common: Vec<Vec<usize>> = spans.iter().map(|&n| vec![mode; n]).collect();

    let k3 = 3.min(na);
    let symmetry_mm = (!fakes.is_empty())
        .then(|| fakes.iter().map(|p| symmetry_error(p, layout)).sum::<f64>() / fakes.len() as f64);
    let quality = match pose_db {
        Some(db) if !db.is_empty() && fakes.len() >= 10 => {
            let stride = (db.len() / fakes.len()).max(1);
            let real: Vec<Skeleton3D> = db.iter().step_by(stride).take(fakes.len()).cloned().collect();
            Some(quality_metric(&real, &fakes, layout, quality)?.quality)
        }
        _ => None,
    };

    Ok(EvalReport {
        format_version: FORMAT_VERSION,
        split: rollouts.split,
        num_sequences: logits.len(),
        mpjpe_px: mpjpe_2d(&pred2d, &gt2d)?,
        quality,
        top1: topk_accuracy(&logits, &gt_actions, 1)?,
        top3: topk_accuracy(&logits, &gt_actions, k3)?,
        symmetry_mm,
        per_step_accuracy: per_step_accuracy(&logits, &gt_actions, 1)?,
        per_step_top3: per_step_accuracy(&logits, &gt_actions, k3)?,
        baselines: BaselineReport {
            zero_velocity_mpjpe_px: mpjpe_2d(&zero_vel, &gt2d)?,
            train_average_mpjpe_px: mpjpe_2d(&avg_pred, &gt2d)?,
            repeat_last_top1: label_accuracy(&repeat_last, &gt_actions)?,
            most_common_top1: label_accuracy(&most_common, &gt_actions)?,
        },
    })
}

/// `step,top1,top3` with 1-based steps.
pub fn curve_csv(report: &EvalReport) -> String {
    let mut s = String::from("step,top1,top3\n");
    for (i, (a, b)) in report.per_step_accuracy.iter().zip(&report.per_step_top3).enumerate() {
        writeln!(s, "{},{a},{b}", i + 1).unwrap();
    }
    s
}

pub fn write_curve_csv(path: &Path, report: &EvalReport) -> Result<()> {
    std::fs::write(path, curve_csv(report)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_puppet_dataset, SynthSpec};
    use crate::rollout::ground_truth_rollouts;

    #[test]
    fn ground_truth_scores_perfectly() {
        let mut spec = SynthSpec::default();
        spec.config.num_sequences = 20;
        spec.config.db_size = 10;
        let ds = generate_puppet_dataset(&spec, 0).unwrap().dataset();
        let r = ground_truth_rollouts(&ds, Split::Test, 3, 5).unwrap();
        let rep = evaluate_rollouts(&r, &ds, None, &QualityConfig::default()).unwrap();
        assert_eq!(rep.mpjpe_px, 0.0);
        assert_eq!(rep.top1, 1.0);
        assert_eq!(rep.per_step_accuracy, vec![1.0; 5]);
        assert!(rep.quality.is_none());
        let csv = curve_csv(&rep);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("step,top1,top3\n1,1,1\n"));
    }
}
