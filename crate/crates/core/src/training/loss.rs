//! Action cross-entropy and the weighted generator objective.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::geometry::{center_on_tape, pose2d_loss_on_tape, project_on_tape, ProjectOptions};
use crate::nn::{Bound, Tape, Tensor, Var};

/// Weights of the three generator loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub action: f32,
    pub pose2d: f32,
    pub adv3d: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            action: 1e6,
            pose2d: 1.0,
            adv3d: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("action", self.action), ("pose2d", self.pose2d), ("adv3d", self.adv3d)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted terms and their weighted sum. Disabled terms are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub action: Option<f64>,
    pub pose2d: Option<f64>,
    pub adv3d: Option<f64>,
    pub total: f64,
}

/// Weighted sum of whichever terms are present.
pub fn combine(weights: &LossWeights, action: Option<f64>, pose2d: Option<f64>, adv3d: Option<f64>) -> LossBreakdown {
    let total = action.map_or(0.0, |v| weights.action as f64 * v)
        + pose2d.map_or(0.0, |v| weights.pose2d as f64 * v)
        + adv3d.map_or(0.0, |v| weights.adv3d as f64 * v);
    LossBreakdown {
        action,
        pose2d,
        adv3d,
        total,
    }
}

fn log_softmax_row(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v as f64 - lse).collect()
}

/// Softmax cross-entropy of one logit vector against `target`.
pub fn cross_entropy(logits: &[f32], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::Vocabulary {
            index: target,
            size: logits.len(),
        });
    }
    Ok(-log_softmax_row(logits)[target])
}

/// Mean cross-entropy over the rows of `logits` `[m, N_a]`.
pub fn cross_entropy_on_tape(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let lv = tape.value(logits);
    let (m, n) = lv.dims2();
    if targets.len() != m || m == 0 {
        return Err(Error::Shape {
            op: "cross entropy",
            left: lv.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let mut total = 0.0f64;
    let mut dlogits = vec![0.0f32; m * n];
    for (r, &t) in targets.iter().enumerate() {
        if t >= n {
            return Err(Error::Vocabulary { index: t, size: n });
        }
        let ls = log_softmax_row(lv.row(r));
        total -= ls[t];
        for (k, l) in ls.iter().enumerate() {
            let onehot = if k == t { 1.0 } else { 0.0 };
            dlogits[r * n + k] = ((l.exp() - onehot) / m as f64) as f32;
        }
    }
    let dlogits = Tensor::matrix(m, n, dlogits)?;
    let value = Tensor::scalar((total / m as f64) as f32);
    Ok(tape.custom(
        vec![logits],
        value,
        Rc::new(move |tape, g| {
            let gx = tape.expand(g, &[m, n])?;
            let d = tape.leaf(dlogits.clone());
            Ok(vec![tape.mul(gx, d)?])
        }),
    ))
}

/// Targets of one generator batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets<'a> {
    pub actions: &'a [usize],
    /// `[m, J·2]` neck-centered pixels.
    pub pose2d: &'a Tensor,
    /// `m·J` visibility weights.
    pub mask: &'a [f32],
    pub cameras: &'a [crate::pose::Camera],
    pub root: usize,
}

/// Loss nodes on a tape; disabled terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossVars {
    pub total: Var,
    pub action: Option<Var>,
    pub pose2d: Option<Var>,
    pub adv3d: Option<Var>,
}

impl GeneratorLossVars {
    pub fn breakdown(&self, tape: &Tape, weights: &LossWeights) -> LossBreakdown {
        let read = |v: Option<Var>| v.map(|v| tape.value(v).data()[0] as f64);
        let mut b = combine(weights, read(self.action), read(self.pose2d), read(self.adv3d));
        b.total = tape.value(self.total).data()[0] as f64;
        b
    }
}

/// Builds the weighted generator objective from forecaster outputs. Terms
/// with zero weight are skipped; the adversarial term needs a critic.
pub fn generator_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    pose_mm: Var,
    targets: &LossTargets<'_>,
    critic: Option<(&Critic, &Bound)>,
    weights: &LossWeights,
    projection: &ProjectOptions,
) -> Result<GeneratorLossVars> {
    let mut terms = Vec::new();
    let action = if weights.action > 0.0 {
        let v = cross_entropy_on_tape(tape, logits, targets.actions)?;
        terms.push(tape.scale(v, weights.action));
        Some(v)
    } else {
        None
    };
    let pose2d = if weights.pose2d > 0.0 {
        let px = project_on_tape(tape, pose_mm, targets.cameras, projection)?;
        let centered = center_on_tape(tape, px, 2, targets.root)?;
        let v = pose2d_loss_on_tape(tape, centered, targets.pose2d, targets.mask)?;
        terms.push(tape.scale(v, weights.pose2d));
        Some(v)
    } else {
        None
    };
    let adv3d = if weights.adv3d > 0.0 {
        let (c, b) = critic.ok_or_else(|| Error::Config("adversarial loss enabled without a critic".into()))?;
        let v = c.generator_term_on_tape(tape, b, pose_mm)?;
        terms.push(tape.scale(v, weights.adv3d));
        Some(v)
    } else {
        None
    };
    let mut total = match terms.first() {
        Some(&t) => t,
        None => return Err(Error::Config("every loss weight is zero".into())),
    };
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(GeneratorLossVars {
        total,
        action,
        pose2d,
        adv3d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_n() {
        assert!((cross_entropy(&[0.3; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn saturated_margin() {
        assert!(cross_entropy(&[20.0, 0.0, 0.0], 0).unwrap() < 1e-8);
    }

    #[test]
    fn out_of_range_target() {
        assert!(matches!(cross_entropy(&[0.0; 3], 3), Err(Error::Vocabulary { index: 3, size: 3 })));
    }

    fn naive_ce(logits: &[f32], t: usize) -> f64 {
        let z: f64 = logits.iter().map(|&v| (v as f64).exp()).sum();
        -((logits[t] as f64).exp() / z).ln()
    }

    #[test]
    fn matches_direct_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let l: Vec<f32> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = rng.random_range(0..7);
            assert!((cross_entropy(&l, t).unwrap() - naive_ce(&l, t)).abs() < 1e-6);
        }
    }

    #[test]
    fn tape_gradient_is_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap());
        let l = cross_entropy_on_tape(&mut tape, x, &[2, 0]).unwrap();
        let expected = (naive_ce(&[1.0, 2.0, 3.0], 2) + 3f64.ln()) / 2.0;
        assert!((tape.value(l).data()[0] as f64 - expected).abs() < 1e-6);
        let g = tape.grad(l, &[x]).unwrap()[0];
        let gv = tape.value(g).data().to_vec();
        let z: f32 = [1.0f32, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let want = [
            1f32.exp() / z / 2.0,
            2f32.exp() / z / 2.0,
            (3f32.exp() / z - 1.0) / 2.0,
            (1.0 / 3.0 - 1.0) / 2.0,
            1.0 / 6.0,
            1.0 / 6.0,
        ];
        for (a, b) in gv.iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_weights_leave_only_action() {
        let w = LossWeights {
            action: 3.0,
            pose2d: 0.0,
            adv3d: 0.0,
        };
        assert_eq!(combine(&w, Some(0.5), None, None).total, 1.5);
    }

    #[test]
    fn default_weights_arithmetic() {
        let b = combine(&LossWeights::default(), Some(1.0), Some(1.0), Some(1.0));
        assert_eq!(b.total, 1e6 + 1.0 + 1.0);
    }
}
