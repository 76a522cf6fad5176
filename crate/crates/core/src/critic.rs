//! Wasserstein critic over 3D poses.
//!
//! Two branches read the same pose: a joint branch of four linear layers over
//! the flattened joints, and a kinematic branch of three linear layers over
//! the upper triangle of `Ψ = BᵀB`. Two linear layers merge them into one
//! score. Higher scores mean "more like the database".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::psi_upper_on_tape;
use crate::nn::{Bound, Mlp, ParamStore, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};
use crate::pose::{JointLayout, Skeleton3D};

/// How the critic is kept (approximately) 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Lipschitz {
    /// Penalize `(‖∇D(x̂)‖ − 1)²` at random real/fake interpolates.
    GradientPenalty(f32),
    /// Clamp every critic weight to `[−c, c]` after each update.
    Clip(f32),
}

impl std::str::FromStr for Lipschitz {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s.split_once(':').unwrap_or((s, ""));
        let parse = |default: f32| -> Result<f32> {
            if value.is_empty() {
                Ok(default)
            } else {
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad lipschitz value `{value}`")))
            }
        };
        match kind {
            "gp" | "penalty" => Ok(Lipschitz::GradientPenalty(parse(10.0)?)),
            "clip" => Ok(Lipschitz::Clip(parse(0.01)?)),
            _ => Err(Error::Config(format!("unknown lipschitz mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub num_joints: usize,
    /// Output widths of the four joint-branch layers.
    pub joint_widths: Vec<usize>,
    /// Output widths of the three kinematic-branch layers.
    pub kinematic_widths: Vec<usize>,
    /// Hidden width of the first merge layer; the second emits the score.
    pub merge_width: usize,
    pub leaky_slope: f32,
    /// Multiplier taking millimeters to network units.
    pub input_scale: f32,
    pub lipschitz: Lipschitz,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            num_joints: crate::pose::NUM_JOINTS,
            joint_widths: vec![256; 4],
            kinematic_widths: vec![256; 3],
            merge_width: 256,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            input_scale: 0.01,
            lipschitz: Lipschitz::GradientPenalty(10.0),
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.joint_widths.len() != 4 {
            return Err(Error::Config("critic joint branch needs 4 layer widths".into()));
        }
        if self.kinematic_widths.len() != 3 {
            return Err(Error::Config("critic kinematic branch needs 3 layer widths".into()));
        }
        if self
            .joint_widths
            .iter()
            .chain(&self.kinematic_widths)
            .chain([&self.merge_width, &self.num_joints])
            .any(|&w| w == 0)
        {
            return Err(Error::Config("critic widths must be positive".into()));
        }
        if !(self.input_scale > 0.0) {
            return Err(Error::Config("critic input scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    pub config: CriticConfig,
    pub layout: JointLayout,
    pub params: ParamStore,
    joint_branch: Mlp,
    kinematic_branch: Mlp,
    merge: Mlp,
}

/// Nodes produced by [`Critic::critic_loss_on_tape`].
#[derive(Debug, Clone, Copy)]
pub struct CriticLossVars {
    /// Wasserstein term plus weighted penalty.
    pub loss: Var,
    /// `mean D(fake) − mean D(real)`.
    pub wasserstein: Var,
    /// Unweighted gradient penalty (zero when clipping).
    pub gp: Var,
}

impl Critic {
    pub fn new(config: CriticConfig, layout: JointLayout, seed: u64) -> Result<Self> {
        config.validate()?;
        layout.validate()?;
        if layout.num_joints() != config.num_joints {
            return Err(Error::Config(format!(
                "critic expects {} joints, layout has {}",
                config.num_joints,
                layout.num_joints()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let s = config.leaky_slope;
        let nb = layout.num_bones();
        let mut jw = vec![config.num_joints * 3];
        jw.extend(&config.joint_widths);
        let mut kw = vec![nb * (nb + 1) / 2];
        kw.extend(&config.kinematic_widths);
        let joint_branch = Mlp::new(&mut p, "critic.joints", &jw, s, true, &mut rng);
        let kinematic_branch = Mlp::new(&mut p, "critic.kinematic", &kw, s, true, &mut rng);
        let merge = Mlp::new(
            &mut p,
            "critic.merge",
            &[jw[4] + kw[3], config.merge_width, 1],
            s,
            false,
            &mut rng,
        );
        Ok(Self {
            config,
            layout,
            params: p,
            joint_branch,
            kinematic_branch,
            merge,
        })
    }

    /// Raw network output for poses already multiplied by `input_scale`;
    /// `[m, 1]`.
    pub fn score_scaled_on_tape(&self, tape: &mut Tape, params: &Bound, scaled: Var) -> Result<Var> {
        let j = self.joint_branch.forward(tape, params, scaled)?;
        let psi = psi_upper_on_tape(tape, scaled, &self.layout)?;
        let k = self.kinematic_branch.forward(tape, params, psi)?;
        let both = tape.concat_cols(&[j, k])?;
        self.merge.forward(tape, params, both)
    }

    /// Scores `[m, J·3]` poses in millimeters; `[m, 1]`. The score is
    /// expressed in millimeters too, so the gradient penalty bounds its
    /// slope per millimeter of joint displacement.
    pub fn score_on_tape(&self, tape: &mut Tape, params: &Bound, pose_mm: Var) -> Result<Var> {
        let s = self.config.input_scale;
        let scaled = tape.scale(pose_mm, s);
        let f = self.score_scaled_on_tape(tape, params, scaled)?;
        Ok(tape.scale(f, 1.0 / s))
    }

    pub fn score(&self, pose: &Skeleton3D) -> Result<f32> {
        Ok(self.scores(std::slice::from_ref(pose))?[0])
    }

    pub fn scores(&self, poses: &[Skeleton3D]) -> Result<Vec<f32>> {
        if let Some(i) = poses.iter().position(|p| !p.is_finite()) {
            return Err(Error::Input(format!("pose {i} passed to the critic is not finite")));
        }
        let t = poses_to_tensor(poses, self.config.num_joints)?;
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let x = tape.leaf(t);
        let s = self.score_on_tape(&mut tape, &b, x)?;
        Ok(tape.value(s).data().to_vec())
    }

    /// Critic objective for one batch. `real` and `fake` are constant
    /// `[m, J·3]` millimeter poses; `eps` holds one interpolation weight per
    /// row for the gradient penalty.
    pub fn critic_loss_on_tape(
        &self,
        tape: &mut Tape,
        params: &Bound,
        real: &Tensor,
        fake: &Tensor,
        eps: &[f32],
    ) -> Result<CriticLossVars> {
        if real.rows() == 0 || fake.rows() == 0 {
            return Err(Error::Contract("adversarial loss on an empty batch".into()));
        }
        let rv = tape.leaf(real.clone());
        let fv = tape.leaf(fake.clone());
        let real_scores = self.score_on_tape(tape, params, rv)?;
        let fake_scores = self.score_on_tape(tape, params, fv)?;
        let (wasserstein, _) = adversarial_terms(tape, real_scores, fake_scores);

        match self.config.lipschitz {
            Lipschitz::GradientPenalty(weight) => {
                if real.dims2() != fake.dims2() || eps.len() != real.rows() {
                    return Err(Error::Shape {
                        op: "gradient penalty",
                        left: real.shape().to_vec(),
                        right: fake.shape().to_vec(),
                    });
                }
                let w = real.cols();
                let mut mix = Vec::with_capacity(real.len());
                for (r, &e) in eps.iter().enumerate() {
                    for (a, b) in real.row(r).iter().zip(fake.row(r)) {
                        mix.push(e * a + (1.0 - e) * b);
                    }
                }
                let x = tape.leaf(Tensor::matrix(real.rows(), w, mix)?);
                let scores = self.score_on_tape(tape, params, x)?;
                let gp = gradient_penalty(tape, x, scores)?;
                let weighted = tape.scale(gp, weight);
                let loss = tape.add(wasserstein, weighted)?;
                Ok(CriticLossVars { loss, wasserstein, gp })
            }
            Lipschitz::Clip(_) => {
                let gp = tape.leaf(Tensor::scalar(0.0));
                Ok(CriticLossVars {
                    loss: wasserstein,
                    wasserstein,
                    gp,
                })
            }
        }
    }

    /// Generator-side term `−mean D(fake)`; gradients flow into `fake`.
    pub fn generator_term_on_tape(&self, tape: &mut Tape, params: &Bound, fake: Var) -> Result<Var> {
        let scores = self.score_on_tape(tape, params, fake)?;
        let mean = tape.mean_all(scores);
        Ok(tape.scale(mean, -1.0))
    }

    /// Weight clamp for [`Lipschitz::Clip`]; a no-op otherwise.
    pub fn enforce_clip(&mut self) {
        if let Lipschitz::Clip(c) = self.config.lipschitz {
            let ids: Vec<_> = self.params.ids().collect();
            for id in ids {
                for v in self.params.get_mut(id).data_mut() {
                    *v = v.clamp(-c, c);
                }
            }
        }
    }
}

/// From per-sample scores: `(mean fake − mean real, −mean fake)`, i.e. the
/// critic's Wasserstein objective and the generator's adversarial term.
pub fn adversarial_terms(tape: &mut Tape, real_scores: Var, fake_scores: Var) -> (Var, Var) {
    let mf = tape.mean_all(fake_scores);
    let mr = tape.mean_all(real_scores);
    let neg_mr = tape.scale(mr, -1.0);
    let critic = tape
        .add(mf, neg_mr)
        .expect("both means are scalars");
    let gen = tape.scale(mf, -1.0);
    (critic, gen)
}

/// `mean_r (‖∂ score_r / ∂ x_r‖ − 1)²` for scores `[m, 1]` computed row-wise
/// from `input` `[m, d]`. The result stays differentiable with respect to
/// whatever produced the scores.
pub fn gradient_penalty(tape: &mut Tape, input: Var, scores: Var) -> Result<Var> {
    let total = tape.sum_all(scores);
    let g = tape.grad(total, &[input])?[0];
    let sq = tape.mul(g, g)?;
    let row = tape.sum_cols(sq)?;
    let row = tape.add_scalar(row, 1e-12);
    let norm = tape.sqrt(row);
    let dev = tape.add_scalar(norm, -1.0);
    let dev2 = tape.mul(dev, dev)?;
    Ok(tape.mean_all(dev2))
}

pub fn poses_to_tensor(poses: &[Skeleton3D], num_joints: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(poses.len() * num_joints * 3);
    for p in poses {
        if p.num_joints() != num_joints {
            return Err(Error::Shape {
                op: "pose batch",
                left: vec![p.num_joints(), 3],
                right: vec![num_joints, 3],
            });
        }
        data.extend(p.flat());
    }
    Tensor::matrix(poses.len(), num_joints * 3, data)
}

/// Uniform interpolation weights for the gradient penalty.
pub fn sample_interpolation<R: Rng + ?Sized>(rows: usize, rng: &mut R) -> Vec<f32> {
    (0..rows).map(|_| rng.random::<f32>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CriticConfig {
        CriticConfig {
            joint_widths: vec![8; 4],
            kinematic_widths: vec![8; 3],
            merge_width: 8,
            ..Default::default()
        }
    }

    fn pose(seed: u64) -> Skeleton3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Skeleton3D::new((0..9).map(|_| [rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)]).collect())
            .center_at_neck()
    }

    #[test]
    fn fresh_critic_scores_are_finite() {
        let c = Critic::new(small(), JointLayout::upper_body(), 0).unwrap();
        for s in 0..5 {
            assert!(c.score(&pose(s)).unwrap().is_finite());
        }
    }

    #[test]
    fn non_finite_pose_is_rejected() {
        let c = Critic::new(small(), JointLayout::upper_body(), 0).unwrap();
        let mut p = pose(1);
        p.joints[3][1] = f32::NAN;
        assert!(matches!(c.score(&p), Err(Error::Input(_))));
    }

    #[test]
    fn identical_batches_without_penalty_cancel() {
        let mut cfg = small();
        cfg.lipschitz = Lipschitz::GradientPenalty(0.0);
        let c = Critic::new(cfg, JointLayout::upper_body(), 2).unwrap();
        let batch = poses_to_tensor(&[pose(1), pose(2), pose(3)], 9).unwrap();
        let mut tape = Tape::new();
        let b = c.params.bind(&mut tape);
        let out = c.critic_loss_on_tape(&mut tape, &b, &batch, &batch, &[0.3, 0.5, 0.9]).unwrap();
        assert_eq!(tape.value(out.loss).data()[0], 0.0);
    }

    #[test]
    fn score_arithmetic() {
        let mut tape = Tape::new();
        let real = tape.leaf(Tensor::matrix(3, 1, vec![-1.0; 3]).unwrap());
        let fake = tape.leaf(Tensor::matrix(2, 1, vec![1.0; 2]).unwrap());
        let (critic, gen) = adversarial_terms(&mut tape, real, fake);
        assert_eq!(tape.value(critic).data(), &[2.0]);
        assert_eq!(tape.value(gen).data(), &[-1.0]);
    }

    #[test]
    fn unit_gradient_linear_score_has_zero_penalty() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -4.0, 0.5, 9.0]).unwrap());
        let w = tape.leaf(Tensor::matrix(3, 1, vec![0.6, 0.0, 0.8]).unwrap());
        let s = tape.matmul(x, w).unwrap();
        let gp = gradient_penalty(&mut tape, x, s).unwrap();
        assert!(tape.value(gp).data()[0].abs() < 1e-10);

        let w2 = tape.leaf(Tensor::matrix(3, 1, vec![0.0, 3.0, 0.0]).unwrap());
        let s2 = tape.matmul(x, w2).unwrap();
        let gp2 = gradient_penalty(&mut tape, x, s2).unwrap();
        assert!((tape.value(gp2).data()[0] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn clip_mode_bounds_weights() {
        let mut cfg = small();
        cfg.lipschitz = "clip:0.01".parse().unwrap();
        let mut c = Critic::new(cfg, JointLayout::upper_body(), 0).unwrap();
        c.enforce_clip();
        assert!(c.params.values().iter().all(|t| t.data().iter().all(|v| v.abs() <= 0.01)));
    }

    #[test]
    fn wrong_branch_counts_are_rejected() {
        let mut cfg = small();
        cfg.joint_widths.pop();
        assert!(Critic::new(cfg, JointLayout::upper_body(), 0).is_err());
    }
}
