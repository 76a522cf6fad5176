//! The generator: encodes a window of 2D poses, action history, objects and
//! noise into a latent code, then decodes next-action logits and the next
//! characteristic 3D pose.
//!
//! ```text
//! poses  ─ linear ─ 3× residual ─┐
//! actions ─ MLP ─────────────────┼─ concat(+noise) ─ fusion ─┬─ action decoder ─ logits
//! objects ─ MLP ─────────────────┘                           └─ pose decoder ─ J×3 mm
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::center_on_tape;
use crate::nn::{Bound, Linear, Mlp, ParamStore, ResidualBlock, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};
use crate::pose::{joint, multi_hot, one_hot, SequenceSample, Skeleton3D, Step, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    /// Observed window length `N`.
    pub history: usize,
    pub num_joints: usize,
    pub num_actions: usize,
    pub num_objects: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub noise_dim: usize,
    pub leaky_slope: f32,
    /// Multiplier taking neck-centered pixels to network units.
    pub pose_input_scale: f32,
    /// Millimeters per unit of pose-decoder output.
    pub pose_output_scale_mm: f32,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            history: 3,
            num_joints: NUM_JOINTS,
            num_actions: 8,
            num_objects: 4,
            latent_dim: 512,
            hidden_dim: 512,
            noise_dim: 32,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            pose_input_scale: 0.01,
            pose_output_scale_mm: 100.0,
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("history", self.history),
            ("num_joints", self.num_joints),
            ("num_actions", self.num_actions),
            ("num_objects", self.num_objects),
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("noise_dim", self.noise_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("forecaster {name} must be positive")));
            }
        }
        if self.num_joints <= joint::NECK {
            return Err(Error::Config("layout has no neck joint".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    pub fn pose_input_width(&self) -> usize {
        self.history * self.num_joints * 2
    }
}

/// Network inputs for a batch of `m` windows, flattened per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastInput {
    /// `[m, N·J·2]` neck-centered pixels, oldest step first.
    pub poses: Tensor,
    /// `[m, N·N_a]` one-hot actions.
    pub actions: Tensor,
    /// `[m, N·N_o]` multi-hot objects.
    pub objects: Tensor,
    /// `[m, noise_dim]`.
    pub noise: Tensor,
}

impl ForecastInput {
    pub fn rows(&self) -> usize {
        self.poses.rows()
    }

    /// Builds inputs from observed windows; `noise` holds `m·noise_dim`
    /// values.
    pub fn from_histories(config: &ForecasterConfig, histories: &[&[Step]], noise: Vec<f32>) -> Result<Self> {
        let m = histories.len();
        let mut poses = Vec::with_capacity(m * config.pose_input_width());
        let mut actions = Vec::with_capacity(m * config.history * config.num_actions);
        let mut objects = Vec::with_capacity(m * config.history * config.num_objects);
        for h in histories {
            if h.len() != config.history {
                return Err(Error::Shape {
                    op: "pose history window",
                    left: vec![h.len()],
                    right: vec![config.history],
                });
            }
            for step in h.iter() {
                if step.pose.num_joints() != config.num_joints {
                    return Err(Error::Shape {
                        op: "pose history joints",
                        left: vec![step.pose.num_joints(), 2],
                        right: vec![config.num_joints, 2],
                    });
                }
                poses.extend(step.pose.flat());
                actions.extend(one_hot(step.action.0, config.num_actions)?);
                let ids: Vec<usize> = step.objects.iter().map(|o| o.0).collect();
                objects.extend(multi_hot(&ids, config.num_objects)?);
            }
        }
        if noise.len() != m * config.noise_dim {
            return Err(Error::Shape {
                op: "noise",
                left: vec![noise.len()],
                right: vec![m, config.noise_dim],
            });
        }
        Ok(Self {
            poses: Tensor::matrix(m, config.pose_input_width(), poses)?,
            actions: Tensor::matrix(m, config.history * config.num_actions, actions)?,
            objects: Tensor::matrix(m, config.history * config.num_objects, objects)?,
            noise: Tensor::matrix(m, config.noise_dim, noise)?,
        })
    }

    pub fn from_samples(config: &ForecasterConfig, samples: &[&SequenceSample], noise: Vec<f32>) -> Result<Self> {
        let histories: Vec<&[Step]> = samples.iter().map(|s| s.history.as_slice()).collect();
        Self::from_histories(config, &histories, noise)
    }
}

/// Output nodes of a batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForecastVars {
    /// `[m, N_a]`.
    pub logits: Var,
    /// `[m, J·3]` neck-centered millimeters.
    pub pose: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterOutput {
    pub action_logits: Vec<f32>,
    pub pose3d: Skeleton3D,
}

#[derive(Debug, Clone)]
pub struct Forecaster {
    pub config: ForecasterConfig,
    pub params: ParamStore,
    pose_in: Linear,
    pose_blocks: Vec<ResidualBlock>,
    action_encoder: Mlp,
    object_encoder: Mlp,
    fusion: Mlp,
    action_decoder: Mlp,
    pose_decoder: Mlp,
}

/// Parameter-name prefixes of the generator's sub-networks.
pub const PARAM_GROUPS: [&str; 6] = [
    "pose_encoder",
    "action_encoder",
    "object_encoder",
    "fusion",
    "action_decoder",
    "pose_decoder",
];

impl Forecaster {
    pub fn new(config: ForecasterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let s = config.leaky_slope;
        let (h, z) = (config.hidden_dim, config.latent_dim);
        let pose_in = Linear::new(&mut p, "pose_encoder.in", config.pose_input_width(), h, s, &mut rng);
        let pose_blocks = (0..3)
            .map(|i| ResidualBlock::new(&mut p, &format!("pose_encoder.block{i}"), h, s, &mut rng))
            .collect();
        let action_encoder = Mlp::new(
            &mut p,
            "action_encoder",
            &[config.history * config.num_actions, h, h],
            s,
            true,
            &mut rng,
        );
        let object_encoder = Mlp::new(
            &mut p,
            "object_encoder",
            &[config.history * config.num_objects, h, h],
            s,
            true,
            &mut rng,
        );
        let fusion = Mlp::new(&mut p, "fusion", &[3 * h + config.noise_dim, z, z], s, true, &mut rng);
        let action_decoder = Mlp::new(&mut p, "action_decoder", &[z, h, config.num_actions], s, false, &mut rng);
        let pose_decoder = Mlp::new(
            &mut p,
            "pose_decoder",
            &[z, h, config.num_joints * 3],
            s,
            false,
            &mut rng,
        );
        Ok(Self {
            config,
            params: p,
            pose_in,
            pose_blocks,
            action_encoder,
            object_encoder,
            fusion,
            action_decoder,
            pose_decoder,
        })
    }

    /// Pose-history feature, `[m, hidden_dim]`.
    pub fn encode_pose_history(&self, tape: &mut Tape, params: &Bound, poses: &Tensor) -> Result<Var> {
        if poses.cols() != self.config.pose_input_width() {
            return Err(Error::Shape {
                op: "pose encoder",
                left: poses.shape().to_vec(),
                right: vec![poses.rows(), self.config.pose_input_width()],
            });
        }
        let x = tape.leaf(poses.clone());
        let x = tape.scale(x, self.config.pose_input_scale);
        let mut h = self.pose_in.forward(tape, params, x)?;
        for block in &self.pose_blocks {
            h = block.forward(tape, params, h)?;
        }
        Ok(h)
    }

    /// Action and object features concatenated, `[m, 2·hidden_dim]`.
    pub fn encode_labels(&self, tape: &mut Tape, params: &Bound, actions: &Tensor, objects: &Tensor) -> Result<Var> {
        let c = &self.config;
        if actions.cols() != c.history * c.num_actions {
            return Err(Error::Shape {
                op: "action encoder",
                left: actions.shape().to_vec(),
                right: vec![actions.rows(), c.history * c.num_actions],
            });
        }
        if objects.cols() != c.history * c.num_objects {
            return Err(Error::Shape {
                op: "object encoder",
                left: objects.shape().to_vec(),
                right: vec![objects.rows(), c.history * c.num_objects],
            });
        }
        let a = tape.leaf(actions.clone());
        let a = self.action_encoder.forward(tape, params, a)?;
        let o = tape.leaf(objects.clone());
        let o = self.object_encoder.forward(tape, params, o)?;
        tape.concat_cols(&[a, o])
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, params: &Bound, input: &ForecastInput) -> Result<ForecastVars> {
        let pose_feat = self.encode_pose_history(tape, params, &input.poses)?;
        let label_feat = self.encode_labels(tape, params, &input.actions, &input.objects)?;
        if input.noise.cols() != self.config.noise_dim || input.noise.rows() != input.rows() {
            return Err(Error::Shape {
                op: "fusion noise",
                left: input.noise.shape().to_vec(),
                right: vec![input.rows(), self.config.noise_dim],
            });
        }
        let noise = tape.leaf(input.noise.clone());
        let fused = tape.concat_cols(&[pose_feat, label_feat, noise])?;
        let z = self.fusion.forward(tape, params, fused)?;
        let logits = self.action_decoder.forward(tape, params, z)?;
        let raw = self.pose_decoder.forward(tape, params, z)?;
        let mm = tape.scale(raw, self.config.pose_output_scale_mm);
        let pose = center_on_tape(tape, mm, 3, joint::NECK)?;
        Ok(ForecastVars { logits, pose })
    }

    /// Forward pass on plain values; row `i` of the result belongs to row
    /// `i` of the input.
    pub fn predict(&self, input: &ForecastInput) -> Result<Vec<ForecasterOutput>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.forward_on_tape(&mut tape, &bound, input)?;
        let logits = tape.value(out.logits);
        let pose = tape.value(out.pose);
        Ok((0..input.rows())
            .map(|r| ForecasterOutput {
                action_logits: logits.row(r).to_vec(),
                pose3d: Skeleton3D::from_flat(pose.row(r)),
            })
            .collect())
    }

    pub fn forward(&self, sample: &SequenceSample, noise: &[f32]) -> Result<ForecasterOutput> {
        let input = ForecastInput::from_samples(&self.config, &[sample], noise.to_vec())?;
        Ok(self.predict(&input)?.remove(0))
    }

    /// Standard-normal noise for `rows` forward passes.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<f32> {
        (0..rows * self.config.noise_dim)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect()
    }

    /// Ids of all parameters whose name starts with `group`.
    pub fn group_ids(&self, group: &str) -> Vec<crate::nn::ParamId> {
        self.params
            .ids()
            .filter(|&id| self.params.name(id).starts_with(group))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{ActionLabel, ObjectLabel, Skeleton2D};

    fn small_config() -> ForecasterConfig {
        ForecasterConfig {
            latent_dim: 16,
            hidden_dim: 16,
            noise_dim: 4,
            ..Default::default()
        }
    }

    fn random_history(rng: &mut ChaCha8Rng, cfg: &ForecasterConfig) -> Vec<Step> {
        (0..cfg.history)
            .map(|_| Step {
                pose: Skeleton2D::new(
                    (0..cfg.num_joints)
                        .map(|_| [rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0)])
                        .collect(),
                )
                .center_at_neck(),
                action: ActionLabel(rng.random_range(0..cfg.num_actions)),
                objects: vec![ObjectLabel(rng.random_range(0..cfg.num_objects))],
            })
            .collect()
    }

    fn encode(model: &Forecaster, poses: &Tensor) -> Vec<f32> {
        let mut tape = Tape::new();
        let b = model.params.bind(&mut tape);
        let f = model.encode_pose_history(&mut tape, &b, poses).unwrap();
        tape.value(f).data().to_vec()
    }

    #[test]
    fn pose_encoder_zero_input_finite_deterministic_and_order_sensitive() {
        let cfg = small_config();
        let model = Forecaster::new(cfg.clone(), 1).unwrap();
        let zeros = Tensor::zeros(&[1, cfg.pose_input_width()]);
        let f0 = encode(&model, &zeros);
        assert!(f0.iter().all(|v| v.is_finite()));
        assert_eq!(f0.len(), cfg.hidden_dim);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hist = random_history(&mut rng, &cfg);
        let input = ForecastInput::from_histories(&cfg, &[&hist], vec![0.0; cfg.noise_dim]).unwrap();
        assert_eq!(encode(&model, &input.poses), encode(&model, &input.poses));

        let mut permuted = hist.clone();
        permuted.swap(0, 2);
        let input2 = ForecastInput::from_histories(&cfg, &[&permuted], vec![0.0; cfg.noise_dim]).unwrap();
        assert_ne!(encode(&model, &input.poses), encode(&model, &input2.poses));
    }

    #[test]
    fn label_encoder_zero_input_finite_deterministic_and_sensitive() {
        let cfg = small_config();
        let model = Forecaster::new(cfg.clone(), 1).unwrap();
        let run = |a: &Tensor, o: &Tensor| {
            let mut tape = Tape::new();
            let b = model.params.bind(&mut tape);
            let f = model.encode_labels(&mut tape, &b, a, o).unwrap();
            tape.value(f).data().to_vec()
        };
        let za = Tensor::zeros(&[1, cfg.history * cfg.num_actions]);
        let zo = Tensor::zeros(&[1, cfg.history * cfg.num_objects]);
        let f0 = run(&za, &zo);
        assert!(f0.iter().all(|v| v.is_finite()));
        assert_eq!(f0.len(), 2 * cfg.hidden_dim);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hist = random_history(&mut rng, &cfg);
        let input = ForecastInput::from_histories(&cfg, &[&hist], vec![0.0; cfg.noise_dim]).unwrap();
        assert_eq!(run(&input.actions, &input.objects), run(&input.actions, &input.objects));
        let mut changed = hist.clone();
        changed[2].action = ActionLabel((hist[2].action.0 + 1) % cfg.num_actions);
        let input2 = ForecastInput::from_histories(&cfg, &[&changed], vec![0.0; cfg.noise_dim]).unwrap();
        assert_ne!(run(&input.actions, &input.objects), run(&input2.actions, &input2.objects));
    }

    #[test]
    fn wrong_window_length_is_a_shape_error() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut hist = random_history(&mut rng, &cfg);
        hist.pop();
        let err = ForecastInput::from_histories(&cfg, &[&hist], vec![0.0; cfg.noise_dim]).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "pose history window", .. }));
    }

    #[test]
    fn fresh_network_outputs_are_finite_and_bounded() {
        let cfg = ForecasterConfig::default();
        let model = Forecaster::new(cfg.clone(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let hist = random_history(&mut rng, &cfg);
            let noise = model.sample_noise(1, &mut rng);
            let input = ForecastInput::from_histories(&cfg, &[&hist], noise).unwrap();
            let out = model.predict(&input).unwrap().remove(0);
            assert!(out.action_logits.iter().all(|v| v.is_finite()));
            assert!(out.pose3d.is_finite());
            assert_eq!(out.pose3d.joints[joint::NECK], [0.0, 0.0, 0.0]);
            let max = out.pose3d.flat().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!(max < 1e4, "pose magnitude {max}");
        }
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let cfg = small_config();
        let model = Forecaster::new(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hist = random_history(&mut rng, &cfg);
        let noise = model.sample_noise(1, &mut rng);
        let mut batch_noise = noise.clone();
        batch_noise.extend(&noise);
        batch_noise.extend(&noise);
        let input = ForecastInput::from_histories(&cfg, &[&hist, &hist, &hist], batch_noise).unwrap();
        let out = model.predict(&input).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[1], out[2]);
    }

    #[test]
    fn zeroing_pose_decoder_leaves_logits_unchanged() {
        let cfg = small_config();
        let mut model = Forecaster::new(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hist = random_history(&mut rng, &cfg);
        let noise = model.sample_noise(1, &mut rng);
        let input = ForecastInput::from_histories(&cfg, &[&hist], noise).unwrap();
        let before = model.predict(&input).unwrap().remove(0);
        for id in model.group_ids("pose_decoder") {
            model.params.get_mut(id).data_mut().fill(0.0);
        }
        let after = model.predict(&input).unwrap().remove(0);
        assert_eq!(before.action_logits, after.action_logits);
        assert!(after.pose3d.flat().all(|v| v == 0.0));
    }

    #[test]
    fn every_parameter_belongs_to_a_group() {
        let model = Forecaster::new(small_config(), 0).unwrap();
        for name in model.params.names() {
            assert!(PARAM_GROUPS.iter().any(|g| name.starts_with(g)), "{name}");
        }
    }
}
