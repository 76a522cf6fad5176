//! Forecast metrics, statistical baselines and the real-vs-generated
//! quality classifier.

pub mod quality;
pub mod report;

use crate::error::{Error, Result};
use crate::pose::Skeleton2D;

pub use quality::{quality_metric, QualityClassifier, QualityConfig, QualityReport};
pub use report::{evaluate_rollouts, write_curve_csv, BaselineReport, EvalReport};

/// Rank of `target` among `logits`: the number of entries scoring strictly
/// higher, or equal with a lower index.
pub fn rank_of(logits: &[f32], target: usize) -> usize {
    let t = logits[target];
    logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > t || (v == t && j < target))
        .count()
}

pub fn in_top_k(logits: &[f32], target: usize, k: usize) -> bool {
    target < logits.len() && rank_of(logits, target) < k
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = j;
        }
    }
    best
}

fn check_aligned<T, U>(pred: &[Vec<T>], gt: &[Vec<U>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!(
            "{} predicted sequences vs {} ground-truth sequences",
            pred.len(),
            gt.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Contract(format!(
                "sequence {i}: {} predicted steps vs {} ground-truth steps",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Mean over sequences of the per-sequence fraction of steps whose
/// ground-truth label is among the `k` best logits. Sequences without
/// steps are ignored.
pub fn topk_accuracy(logits: &[Vec<Vec<f32>>], gt: &[Vec<usize>], k: usize) -> Result<f64> {
    check_aligned(logits, gt)?;
    let mut per_seq = Vec::with_capacity(gt.len());
    for (ls, gs) in logits.iter().zip(gt) {
        if gs.is_empty() {
            continue;
        }
        let mut hits = 0usize;
        for (l, &g) in ls.iter().zip(gs) {
            if k == 0 || k > l.len() {
                return Err(Error::Contract(format!("k = {k} outside 1..={}", l.len())));
            }
            if g >= l.len() {
                return Err(Error::Vocabulary { index: g, size: l.len() });
            }
            hits += in_top_k(l, g, k) as usize;
        }
        per_seq.push(hits as f64 / gs.len() as f64);
    }
    if per_seq.is_empty() {
        return Err(Error::Contract("no predicted steps".into()));
    }
    Ok(per_seq.iter().sum::<f64>() / per_seq.len() as f64)
}

/// Top-1 accuracy of hard labels, with the same averaging as
/// [`topk_accuracy`].
pub fn label_accuracy(pred: &[Vec<usize>], gt: &[Vec<usize>]) -> Result<f64> {
    check_aligned(pred, gt)?;
    let per_seq: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter(|(_, g)| !g.is_empty())
        .map(|(p, g)| p.iter().zip(g).filter(|(a, b)| a == b).count() as f64 / g.len() as f64)
        .collect();
    if per_seq.is_empty() {
        return Err(Error::Contract("no predicted steps".into()));
    }
    Ok(per_seq.iter().sum::<f64>() / per_seq.len() as f64)
}

/// Top-`k` accuracy at each rollout step, over the sequences that reach
/// that step.
pub fn per_step_accuracy(logits: &[Vec<Vec<f32>>], gt: &[Vec<usize>], k: usize) -> Result<Vec<f64>> {
    check_aligned(logits, gt)?;
    let horizon = gt.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let mut hits = 0usize;
        let mut n = 0usize;
        for (ls, gs) in logits.iter().zip(gt) {
            if let (Some(l), Some(&g)) = (ls.get(step), gs.get(step)) {
                if k == 0 || k > l.len() {
                    return Err(Error::Contract(format!("k = {k} outside 1..={}", l.len())));
                }
                hits += in_top_k(l, g, k) as usize;
                n += 1;
            }
        }
        out.push(hits as f64 / n as f64);
    }
    Ok(out)
}

/// Repeats the last observed pose for `m` steps.
pub fn zero_velocity_baseline(history: &[Skeleton2D], m: usize) -> Result<Vec<Skeleton2D>> {
    let last = history
        .last()
        .ok_or_else(|| Error::Contract("zero-velocity baseline needs a history".into()))?;
    let mut p = last.clone();
    p.confidence = vec![1.0; p.num_joints()];
    Ok(vec![p; m])
}

/// Per-joint mean of the visible training target poses.
pub fn train_average_baseline(targets: &[Skeleton2D]) -> Result<Skeleton2D> {
    let first = targets
        .first()
        .ok_or_else(|| Error::Contract("train-average baseline needs training poses".into()))?;
    let nj = first.num_joints();
    let mut sum = vec![[0.0f64; 2]; nj];
    let mut count = vec![0usize; nj];
    for t in targets {
        if t.num_joints() != nj {
            return Err(Error::Shape {
                op: "train average",
                left: vec![t.num_joints(), 2],
                right: vec![nj, 2],
            });
        }
        for j in 0..nj {
            if t.visible(j) {
                sum[j][0] += t.joints[j][0] as f64;
                sum[j][1] += t.joints[j][1] as f64;
                count[j] += 1;
            }
        }
    }
    Ok(Skeleton2D::new(
        (0..nj)
            .map(|j| {
                let c = count[j].max(1) as f64;
                [(sum[j][0] / c) as f32, (sum[j][1] / c) as f32]
            })
            .collect(),
    ))
}

/// Repeats the last observed action label for `m` steps.
pub fn repeat_last_baseline(history: &[usize], m: usize) -> Result<Vec<usize>> {
    let last = *history
        .last()
        .ok_or_else(|| Error::Contract("repeat-last baseline needs a history".into()))?;
    Ok(vec![last; m])
}

/// The most frequent training label (lowest index on ties), repeated.
pub fn most_common_baseline(train_labels: &[usize], num_actions: usize, m: usize) -> Result<Vec<usize>> {
    if train_labels.is_empty() {
        return Err(Error::Contract("most-common baseline needs training labels".into()));
    }
    let mut counts = vec![0usize; num_actions];
    for &l in train_labels {
        if l >= num_actions {
            return Err(Error::Vocabulary {
                index: l,
                size: num_actions,
            });
        }
        counts[l] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Ok(vec![best; m])
}
