use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::loss::{generator_loss_on_tape, LossTargets};
use super::TrainConfig;
use crate::critic::{poses_to_tensor, sample_interpolation, Critic, CriticConfig};
use crate::data::{read_pose_db, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::in_top_k;
use crate::forecaster::{ForecastInput, Forecaster, ForecasterConfig};
use crate::geometry::{mpjpe_2d, project, symmetry_error};
use crate::nn::{checkpoint, AdamConfig, AdamState, ParamStore, Tape, Tensor};
use crate::pose::{Camera, JointLayout, SequenceSample, Skeleton2D, Skeleton3D};

/// Dataset facts a checkpoint must agree with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub joint_layout: JointLayout,
    pub action_vocab: Vec<String>,
    pub object_vocab: Vec<String>,
}

impl DatasetInfo {
    pub fn of(dataset: &Dataset) -> Self {
        let m = &dataset.manifest;
        Self {
            name: m.name.clone(),
            joint_layout: m.joint_layout.clone(),
            action_vocab: m.action_vocab.clone(),
            object_vocab: m.object_vocab.clone(),
        }
    }

    /// Errors with [`Error::Version`] when `other` is not interchangeable.
    pub fn check_compatible(&self, other: &DatasetInfo) -> Result<()> {
        if self.joint_layout != other.joint_layout {
            return Err(Error::Version("checkpoint joint layout differs from the manifest".into()));
        }
        if self.action_vocab != other.action_vocab {
            return Err(Error::Version("checkpoint action vocabulary differs from the manifest".into()));
        }
        if self.object_vocab != other.object_vocab {
            return Err(Error::Version("checkpoint object vocabulary differs from the manifest".into()));
        }
        Ok(())
    }
}

/// Windowed training and validation samples plus the 3D pose database.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub info: DatasetInfo,
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub pose_db: Vec<Skeleton3D>,
}

impl TrainData {
    /// Windows the train and validation splits; reads the pose database
    /// named by the manifest when present.
    pub fn from_dataset(dataset: &Dataset, history: usize) -> Result<Self> {
        let pose_db = match dataset.pose_db_path() {
            Some(p) => read_pose_db(&p, &dataset.manifest.joint_layout)?,
            None => Vec::new(),
        };
        Self::with_pose_db(dataset, history, pose_db)
    }

    pub fn with_pose_db(dataset: &Dataset, history: usize, pose_db: Vec<Skeleton3D>) -> Result<Self> {
        let (train, _) = dataset.windows(Split::Train, history)?;
        let (val, _) = dataset.windows(Split::Val, history)?;
        Ok(Self {
            info: DatasetInfo::of(dataset),
            train,
            val,
            pose_db,
        })
    }

    /// Sets vocabulary sizes and joint counts of `config` from the data.
    pub fn fit_config(&self, config: &mut TrainConfig) {
        let j = self.info.joint_layout.num_joints();
        config.forecaster.num_joints = j;
        config.critic.num_joints = j;
        config.forecaster.num_actions = self.info.action_vocab.len();
        config.forecaster.num_objects = self.info.object_vocab.len().max(1);
    }
}

/// One micro-batch, ready for the forward pass except for noise.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input: ForecastInput,
    pub actions: Vec<usize>,
    /// `[m, J·2]` neck-centered target pixels.
    pub target2d: Tensor,
    pub mask: Vec<f32>,
    pub cameras: Vec<Camera>,
}

impl Batch {
    pub fn from_samples(config: &ForecasterConfig, samples: &[&SequenceSample]) -> Result<Self> {
        let m = samples.len();
        let input = ForecastInput::from_samples(config, samples, vec![0.0; m * config.noise_dim])?;
        let mut target = Vec::with_capacity(m * config.num_joints * 2);
        let mut mask = Vec::with_capacity(m * config.num_joints);
        for s in samples {
            if s.target_pose.num_joints() != config.num_joints {
                return Err(Error::Shape {
                    op: "target pose",
                    left: vec![s.target_pose.num_joints(), 2],
                    right: vec![config.num_joints, 2],
                });
            }
            target.extend(s.target_pose.flat());
            mask.extend((0..config.num_joints).map(|j| if s.target_pose.visible(j) { 1.0 } else { 0.0 }));
        }
        Ok(Self {
            input,
            actions: samples.iter().map(|s| s.target_action.0).collect(),
            target2d: Tensor::matrix(m, config.num_joints * 2, target)?,
            mask,
            cameras: samples.iter().map(|s| s.camera.clone()).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.actions.len()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    #[serde(rename = "L_action")]
    pub l_action: Option<f64>,
    #[serde(rename = "L_pose2d")]
    pub l_pose2d: Option<f64>,
    #[serde(rename = "L_adv3d")]
    pub l_adv3d: Option<f64>,
    #[serde(rename = "L_critic")]
    pub l_critic: Option<f64>,
    pub gp: Option<f64>,
    pub lr: f32,
    #[serde(rename = "L_total")]
    pub l_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub top1: f64,
    pub top3: f64,
    pub mpjpe_px: f64,
    pub symmetry_mm: f64,
    /// `mean D(database) − mean D(generated)`.
    pub critic_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: u64,
    /// Sample-weighted mean of the step totals.
    pub train_loss: f64,
    pub val: Option<ValidationMetrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub checkpoints: Vec<PathBuf>,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.next_u64()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn add_scaled(acc: &mut [Tensor], grads: &[Tensor], w: f32) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += w * y;
        }
    }
}

/// Owns both networks, their optimizers and all training randomness.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub info: DatasetInfo,
    pub generator: Forecaster,
    pub critic: Critic,
    gen_adam: AdamState,
    critic_adam: AdamState,
    step: u64,
    epoch: usize,
    shuffle_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    critic_rng: ChaCha8Rng,
    last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig, info: DatasetInfo) -> Result<Self> {
        config.validate()?;
        if info.joint_layout.num_joints() != config.forecaster.num_joints {
            return Err(Error::Config("forecaster joint count differs from dataset layout".into()));
        }
        if info.action_vocab.len() != config.forecaster.num_actions {
            return Err(Error::Config(format!(
                "forecaster expects {} actions, dataset has {}",
                config.forecaster.num_actions,
                info.action_vocab.len()
            )));
        }
        let s = &config.streams;
        let generator = Forecaster::new(config.forecaster.clone(), derive_seed(config.seed, s.generator_init))?;
        let critic = Critic::new(
            config.critic.clone(),
            info.joint_layout.clone(),
            derive_seed(config.seed, s.critic_init),
        )?;
        let gen_adam = AdamState::new(
            AdamConfig {
                lr: config.lr,
                weight_decay: config.weight_decay,
                ..AdamConfig::default()
            },
            &generator.params,
        );
        let critic_adam = AdamState::new(
            AdamConfig {
                lr: config.critic_lr,
                weight_decay: config.critic_weight_decay,
                ..AdamConfig::default()
            },
            &critic.params,
        );
        Ok(Self {
            shuffle_rng: stream_rng(config.seed, s.shuffle),
            noise_rng: stream_rng(config.seed, s.noise),
            critic_rng: stream_rng(config.seed, s.critic_batch),
            config,
            info,
            generator,
            critic,
            gen_adam,
            critic_adam,
            step: 0,
            epoch: 0,
            last_checkpoint: None,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn adversarial(&self) -> bool {
        self.config.weights.adv3d > 0.0
    }

    fn nan_error(&self, what: String) -> Error {
        let last = match &self.last_checkpoint {
            Some(p) => p.display().to_string(),
            None => "none written yet".into(),
        };
        Error::NonFinite(format!("{what} at step {}; last good checkpoint: {last}", self.step))
    }

    /// One critic update against a fresh database batch. Returns the critic
    /// loss and the unweighted gradient penalty.
    pub fn critic_step(&mut self, fake: &Tensor, pose_db: &[Skeleton3D]) -> Result<(f64, f64)> {
        let m = fake.rows();
        let real: Vec<Skeleton3D> = (0..m)
            .map(|_| pose_db[self.critic_rng.random_range(0..pose_db.len())].clone())
            .collect();
        let real = poses_to_tensor(&real, self.critic.config.num_joints)?;
        let eps = sample_interpolation(m, &mut self.critic_rng);
        let mut tape = Tape::new();
        let bound = self.critic.params.bind(&mut tape);
        let out = self.critic.critic_loss_on_tape(&mut tape, &bound, &real, fake, &eps)?;
        let loss = tape.value(out.loss).data()[0] as f64;
        let gp = tape.value(out.gp).data()[0] as f64;
        if !loss.is_finite() {
            return Err(self.nan_error("critic loss is not finite".into()));
        }
        let gvars = tape.grad(out.loss, bound.vars())?;
        let grads: Vec<Tensor> = gvars.iter().map(|&g| tape.value(g).clone()).collect();
        self.critic_adam
            .step(&mut self.critic.params, &grads)
            .map_err(|e| self.nan_error(e.to_string()))?;
        self.critic.enforce_clip();
        Ok((loss, gp))
    }

    /// Forward, critic update(s) and generator gradients for one micro-batch.
    /// Returns the generator gradients and a partial log line.
    fn micro_step(&mut self, batch: &Batch, pose_db: &[Skeleton3D]) -> Result<(Vec<Tensor>, StepLog)> {
        let m = batch.rows();
        let mut input = batch.input.clone();
        input.noise = Tensor::matrix(m, self.config.forecaster.noise_dim, self.generator.sample_noise(m, &mut self.noise_rng))?;
        let mut tape = Tape::new();
        let gb = self.generator.params.bind(&mut tape);
        let out = self.generator.forward_on_tape(&mut tape, &gb, &input)?;

        let mut critic_loss = None;
        let mut gp = None;
        if self.adversarial() {
            let fake = tape.value(out.pose).clone();
            if !fake.is_finite() {
                return Err(self.nan_error("generated pose is not finite".into()));
            }
            let (mut cl, mut g) = (0.0, 0.0);
            for _ in 0..self.config.n_critic {
                (cl, g) = self.critic_step(&fake, pose_db)?;
            }
            critic_loss = Some(cl);
            gp = Some(g);
        }

        let critic_bound = self.adversarial().then(|| self.critic.params.bind(&mut tape));
        let targets = LossTargets {
            actions: &batch.actions,
            pose2d: &batch.target2d,
            mask: &batch.mask,
            cameras: &batch.cameras,
            root: self.info.joint_layout.root,
        };
        let loss = generator_loss_on_tape(
            &mut tape,
            out.logits,
            out.pose,
            &targets,
            critic_bound.as_ref().map(|b| (&self.critic, b)),
            &self.config.weights,
            &self.config.train_projection(),
        )?;
        let b = loss.breakdown(&tape, &self.config.weights);
        if !b.total.is_finite() {
            return Err(self.nan_error("generator loss is not finite".into()));
        }
        let gvars = tape.grad(loss.total, gb.vars())?;
        let grads = gvars.iter().map(|&g| tape.value(g).clone()).collect();
        Ok((
            grads,
            StepLog {
                step: 0,
                epoch: self.epoch,
                l_action: b.action,
                l_pose2d: b.pose2d,
                l_adv3d: b.adv3d,
                l_critic: critic_loss,
                gp,
                lr: self.config.lr,
                l_total: b.total,
            },
        ))
    }

    /// One optimizer step over `micro` batches whose rows sum to the batch.
    fn optimizer_step(&mut self, micro: &[Batch], pose_db: &[Skeleton3D]) -> Result<StepLog> {
        let total: usize = micro.iter().map(Batch::rows).sum();
        let mut acc: Vec<Tensor> = self
            .generator
            .params
            .values()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        let mut log: Option<StepLog> = None;
        for b in micro {
            let w = b.rows() as f64 / total as f64;
            let (g, l) = self.micro_step(b, pose_db)?;
            add_scaled(&mut acc, &g, w as f32);
            let mix = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => Some(a + w * b),
                (None, Some(b)) => Some(w * b),
                (a, None) => a,
            };
            log = Some(match log {
                None => StepLog {
                    l_action: l.l_action.map(|v| w * v),
                    l_pose2d: l.l_pose2d.map(|v| w * v),
                    l_adv3d: l.l_adv3d.map(|v| w * v),
                    l_critic: l.l_critic.map(|v| w * v),
                    gp: l.gp.map(|v| w * v),
                    l_total: w * l.l_total,
                    ..l
                },
                Some(p) => StepLog {
                    l_action: mix(p.l_action, l.l_action),
                    l_pose2d: mix(p.l_pose2d, l.l_pose2d),
                    l_adv3d: mix(p.l_adv3d, l.l_adv3d),
                    l_critic: mix(p.l_critic, l.l_critic),
                    gp: mix(p.gp, l.gp),
                    l_total: p.l_total + w * l.l_total,
                    ..p
                },
            });
        }
        self.gen_adam
            .step(&mut self.generator.params, &acc)
            .map_err(|e| self.nan_error(e.to_string()))?;
        self.step += 1;
        let mut log = log.ok_or_else(|| Error::Contract("optimizer step without batches".into()))?;
        log.step = self.step;
        Ok(log)
    }

    /// One pass over `data.train` in a seeded order. Batches are assembled
    /// on a loader thread and handed over through a two-slot queue.
    pub fn train_epoch(&mut self, data: &TrainData, mut log: Option<&mut dyn Write>) -> Result<(f64, u64)> {
        if data.train.is_empty() {
            return Err(Error::Input("no training windows".into()));
        }
        if self.adversarial() && data.pose_db.is_empty() {
            return Err(Error::Config("adversarial loss enabled but the 3D pose database is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = self.shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let batch = self.config.batch_size;
        let micro = self.config.micro_batch();
        let fcfg = self.config.forecaster.clone();
        let samples = &data.train;
        let mut weighted = 0.0;
        let mut steps = 0;

        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<Vec<Batch>>>(2);
            let order = &order;
            scope.spawn(move || {
                for chunk in order.chunks(batch) {
                    let built: Result<Vec<Batch>> = chunk
                        .chunks(micro)
                        .map(|c| {
                            let refs: Vec<&SequenceSample> = c.iter().map(|&i| &samples[i]).collect();
                            Batch::from_samples(&fcfg, &refs)
                        })
                        .collect();
                    if tx.send(built).is_err() {
                        break;
                    }
                }
            });
            for built in rx {
                let micro_batches = built?;
                let rows: usize = micro_batches.iter().map(Batch::rows).sum();
                let line = self.optimizer_step(&micro_batches, &data.pose_db)?;
                weighted += line.l_total * rows as f64;
                steps += 1;
                if let Some(w) = log.as_deref_mut() {
                    let mut text = serde_json::to_string(&line).expect("serializable log line");
                    text.push('\n');
                    w.write_all(text.as_bytes()).map_err(|e| Error::io("metrics log", e))?;
                }
            }
            Ok(())
        })?;
        self.epoch += 1;
        Ok((weighted / data.train.len() as f64, steps))
    }

    /// Single-step metrics on `samples` with zero noise.
    pub fn validate(&self, samples: &[SequenceSample], pose_db: &[Skeleton3D]) -> Result<ValidationMetrics> {
        validation_metrics(
            &self.generator,
            Some(&self.critic),
            &self.info.joint_layout,
            samples,
            pose_db,
            &self.config,
        )
    }

    pub fn metadata(&self, kind: &str) -> Value {
        let mut v = json!({
            "kind": kind,
            "train": self.config,
            "dataset": self.info,
            "epoch": self.epoch,
            "step": self.step,
        });
        match kind {
            "generator" => v["forecaster"] = serde_json::to_value(&self.generator.config).unwrap(),
            _ => v["critic"] = serde_json::to_value(&self.critic.config).unwrap(),
        }
        v
    }

    /// Writes `<stem>.cpf` (generator), `<stem>.critic.cpf` and Adam
    /// sidecars for both; returns the generator path.
    pub fn save_checkpoint(&mut self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let gen = dir.join(format!("{stem}.cpf"));
        let critic = dir.join(format!("{stem}.critic.cpf"));
        checkpoint::save(&gen, &self.metadata("generator"), &self.generator.params)?;
        checkpoint::save_adam(&gen, &self.generator.params, &self.gen_adam)?;
        checkpoint::save(&critic, &self.metadata("critic"), &self.critic.params)?;
        checkpoint::save_adam(&critic, &self.critic.params, &self.critic_adam)?;
        self.last_checkpoint = Some(gen.clone());
        Ok(gen)
    }

    /// Trains until `epochs` or early stopping, restoring the parameters of
    /// the best validation epoch. With `out_dir`, writes `metrics.jsonl`,
    /// `epochs.jsonl` and checkpoints there.
    pub fn fit<F>(&mut self, data: &TrainData, out_dir: Option<&Path>, mut on_epoch: F) -> Result<TrainReport>
    where
        F: FnMut(&EpochReport, &Trainer),
    {
        let mut report = TrainReport::default();
        let mut metrics = match out_dir {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                let p = d.join("metrics.jsonl");
                Some(fs::File::create(&p).map_err(|e| Error::io(p, e))?)
            }
            None => None,
        };
        let mut epochs_log = match out_dir {
            Some(d) => {
                let p = d.join("epochs.jsonl");
                Some(fs::File::create(&p).map_err(|e| Error::io(p, e))?)
            }
            None => None,
        };
        let mut best: Option<(f64, usize, ParamStore, ParamStore)> = None;
        let mut since_best = 0;
        for _ in 0..self.config.epochs {
            let (train_loss, _) = self.train_epoch(data, metrics.as_mut().map(|f| f as &mut dyn Write))?;
            let epoch = self.epoch;
            let val = if data.val.is_empty() {
                None
            } else {
                Some(self.validate(&data.val, &data.pose_db)?)
            };
            let rep = EpochReport {
                epoch,
                steps: self.step,
                train_loss,
                val: val.clone(),
            };
            if let Some(f) = epochs_log.as_mut() {
                let mut text = serde_json::to_string(&rep).expect("serializable report");
                text.push('\n');
                f.write_all(text.as_bytes()).map_err(|e| Error::io("epochs log", e))?;
            }
            on_epoch(&rep, self);
            report.epochs.push(rep);

            if let Some(d) = out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && epoch.is_multiple_of(every) {
                    report.checkpoints.push(self.save_checkpoint(d, &format!("epoch_{epoch:04}"))?);
                }
            }
            let score = val.as_ref().map(|v| v.mpjpe_px).filter(|v| v.is_finite());
            match (score, &best) {
                (Some(s), Some((b, ..))) if s >= *b => since_best += 1,
                (Some(s), _) => {
                    best = Some((s, epoch, self.generator.params.clone(), self.critic.params.clone()));
                    since_best = 0;
                    if let Some(d) = out_dir {
                        let p = self.save_checkpoint(d, "best")?;
                        if !report.checkpoints.contains(&p) {
                            report.checkpoints.push(p);
                        }
                    }
                }
                (None, _) => {}
            }
            if self.config.patience > 0 && since_best >= self.config.patience {
                report.stopped_early = true;
                break;
            }
        }
        if let Some((_, epoch, g, c)) = best {
            self.generator.params = g;
            self.critic.params = c;
            report.best_epoch = Some(epoch);
        }
        if let Some(d) = out_dir {
            report.checkpoints.push(self.save_checkpoint(d, "final")?);
        }
        Ok(report)
    }
}

/// Single-step validation metrics of `generator` on `samples`.
pub(crate) fn validation_metrics(
    generator: &Forecaster,
    critic: Option<&Critic>,
    layout: &JointLayout,
    samples: &[SequenceSample],
    pose_db: &[Skeleton3D],
    config: &TrainConfig,
) -> Result<ValidationMetrics> {
    if samples.is_empty() {
        return Err(Error::Input("no validation windows".into()));
    }
    let fcfg = &generator.config;
    let opts = config.train_projection();
    let mut hits1 = 0usize;
    let mut hits3 = 0usize;
    let mut pred2d: Vec<Skeleton2D> = Vec::with_capacity(samples.len());
    let mut poses = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(1024) {
        let refs: Vec<&SequenceSample> = chunk.iter().collect();
        let input = ForecastInput::from_samples(fcfg, &refs, vec![0.0; refs.len() * fcfg.noise_dim])?;
        for (s, out) in chunk.iter().zip(generator.predict(&input)?) {
            let t = s.target_action.0;
            hits1 += in_top_k(&out.action_logits, t, 1) as usize;
            hits3 += in_top_k(&out.action_logits, t, 3.min(fcfg.num_actions)) as usize;
            pred2d.push(project(&out.pose3d, &s.camera, &opts)?.center_at(layout.root));
            poses.push(out.pose3d);
        }
    }
    let targets: Vec<Skeleton2D> = samples.iter().map(|s| s.target_pose.clone()).collect();
    let mpjpe_px = mpjpe_2d(&pred2d, &targets)?;
    let symmetry_mm = poses.iter().map(|p| symmetry_error(p, layout)).sum::<f64>() / poses.len() as f64;
    let critic_gap = match critic {
        Some(c) if !pose_db.is_empty() => {
            let stride = (pose_db.len() / 1024).max(1);
            let real: Vec<Skeleton3D> = pose_db.iter().step_by(stride).take(1024).cloned().collect();
            let mean = |v: Vec<f32>| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
            let fake: Vec<Skeleton3D> = poses.iter().take(1024).cloned().collect();
            Some(mean(c.scores(&real)?) - mean(c.scores(&fake)?))
        }
        _ => None,
    };
    let n = samples.len() as f64;
    Ok(ValidationMetrics {
        top1: hits1 as f64 / n,
        top3: hits3 as f64 / n,
        mpjpe_px,
        symmetry_mm,
        critic_gap,
    })
}

fn read_kind(path: &Path, meta: &Value, kind: &str) -> Result<()> {
    if meta["kind"] != kind {
        return Err(Error::Version(format!(
            "{}: expected a {kind} checkpoint, found {}",
            path.display(),
            meta["kind"]
        )));
    }
    Ok(())
}

fn read_info(path: &Path, meta: &Value) -> Result<DatasetInfo> {
    serde_json::from_value(meta["dataset"].clone())
        .map_err(|e| Error::Version(format!("{}: dataset metadata: {e}", path.display())))
}

/// Rebuilds a generator from a checkpoint written by [`Trainer::save_checkpoint`].
pub fn load_generator(path: &Path) -> Result<(Forecaster, DatasetInfo, TrainConfig)> {
    let ck = checkpoint::load(path)?;
    read_kind(path, &ck.metadata, "generator")?;
    let config: ForecasterConfig = serde_json::from_value(ck.metadata["forecaster"].clone())
        .map_err(|e| Error::Version(format!("{}: forecaster metadata: {e}", path.display())))?;
    let train: TrainConfig = serde_json::from_value(ck.metadata["train"].clone())
        .map_err(|e| Error::Version(format!("{}: train metadata: {e}", path.display())))?;
    let info = read_info(path, &ck.metadata)?;
    let mut f = Forecaster::new(config, 0)?;
    checkpoint::restore_into(&mut f.params, &ck.params, path)?;
    Ok((f, info, train))
}

pub fn load_critic(path: &Path) -> Result<(Critic, DatasetInfo)> {
    let ck = checkpoint::load(path)?;
    read_kind(path, &ck.metadata, "critic")?;
    let config: CriticConfig = serde_json::from_value(ck.metadata["critic"].clone())
        .map_err(|e| Error::Version(format!("{}: critic metadata: {e}", path.display())))?;
    let info = read_info(path, &ck.metadata)?;
    let mut c = Critic::new(config, info.joint_layout.clone(), 0)?;
    checkpoint::restore_into(&mut c.params, &ck.params, path)?;
    Ok((c, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_puppet_dataset, SynthSpec};
    use crate::forecaster::PARAM_GROUPS;

    fn tiny_config() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.forecaster.hidden_dim = 16;
        c.forecaster.latent_dim = 16;
        c.forecaster.noise_dim = 4;
        c.critic.joint_widths = vec![16; 4];
        c.critic.kinematic_widths = vec![16; 3];
        c.critic.merge_width = 16;
        c.batch_size = 32;
        c.micro_batch_size = 16;
        c.epochs = 2;
        c.lr = 1e-3;
        c
    }

    fn tiny_data() -> TrainData {
        let mut spec = SynthSpec::default();
        spec.config.num_sequences = 12;
        spec.config.db_size = 64;
        let ds = generate_puppet_dataset(&spec, 1).unwrap();
        TrainData::with_pose_db(&ds.dataset(), 3, ds.pose_db.clone()).unwrap()
    }

    fn trainer(mut c: TrainConfig, data: &TrainData) -> Trainer {
        data.fit_config(&mut c);
        Trainer::new(c, data.info.clone()).unwrap()
    }

    #[test]
    fn two_runs_are_bitwise_identical() {
        let data = tiny_data();
        let run = || {
            let mut t = trainer(tiny_config(), &data);
            let mut log = Vec::new();
            for _ in 0..2 {
                t.train_epoch(&data, Some(&mut log)).unwrap();
            }
            (log, t.generator.params.clone(), t.critic.params.clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn log_lines_carry_required_fields() {
        let data = tiny_data();
        let mut t = trainer(tiny_config(), &data);
        let mut log = Vec::new();
        t.train_epoch(&data, Some(&mut log)).unwrap();
        let first: Value = serde_json::from_str(std::str::from_utf8(&log).unwrap().lines().next().unwrap()).unwrap();
        for key in ["step", "epoch", "L_action", "L_pose2d", "L_adv3d", "L_critic", "gp", "lr"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert!(!first.to_string().contains("time"));
    }

    #[test]
    fn breakdown_sums_to_total() {
        let data = tiny_data();
        let mut t = trainer(tiny_config(), &data);
        let mut log = Vec::new();
        t.train_epoch(&data, Some(&mut log)).unwrap();
        let w = t.config.weights;
        for line in std::str::from_utf8(&log).unwrap().lines() {
            let l: StepLog = serde_json::from_str(line).unwrap();
            let sum = w.action as f64 * l.l_action.unwrap()
                + w.pose2d as f64 * l.l_pose2d.unwrap()
                + w.adv3d as f64 * l.l_adv3d.unwrap();
            assert!((sum - l.l_total).abs() <= 1e-4 * l.l_total.abs().max(1.0), "{sum} vs {}", l.l_total);
        }
    }

    #[test]
    fn critic_step_leaves_generator_untouched() {
        let data = tiny_data();
        let mut t = trainer(tiny_config(), &data);
        let before = t.generator.params.clone();
        let critic_before = t.critic.params.clone();
        let fake = poses_to_tensor(&data.pose_db[..8], 9).unwrap();
        t.critic_step(&fake, &data.pose_db).unwrap();
        assert_eq!(t.generator.params, before);
        assert_ne!(t.critic.params, critic_before);
    }

    #[test]
    fn generator_step_leaves_critic_untouched() {
        let data = tiny_data();
        let mut c = tiny_config();
        c.n_critic = 1;
        let mut t = trainer(c, &data);
        let refs: Vec<&SequenceSample> = data.train.iter().take(8).collect();
        let b = Batch::from_samples(&t.config.forecaster, &refs).unwrap();
        let (grads, _) = t.micro_step(&b, &data.pose_db).unwrap();
        let critic_after_update = t.critic.params.clone();
        t.gen_adam.step(&mut t.generator.params, &grads).unwrap();
        assert_eq!(t.critic.params, critic_after_update);
    }

    #[test]
    fn every_group_receives_gradient() {
        let data = tiny_data();
        let mut c = tiny_config();
        c.weights.action = 1.0;
        let mut t = trainer(c, &data);
        let refs: Vec<&SequenceSample> = data.train.iter().take(8).collect();
        let b = Batch::from_samples(&t.config.forecaster, &refs).unwrap();
        let (grads, _) = t.micro_step(&b, &data.pose_db).unwrap();
        for g in PARAM_GROUPS {
            let norm: f64 = t
                .generator
                .group_ids(g)
                .iter()
                .map(|id| grads[id.index()].squared_norm())
                .sum();
            assert!(norm > 0.0, "group {g} got no gradient");
        }
    }

    #[test]
    fn action_only_gives_zero_pose_decoder_gradient() {
        let data = tiny_data();
        let mut c = tiny_config();
        c.weights.pose2d = 0.0;
        c.weights.adv3d = 0.0;
        let mut t = trainer(c, &data);
        let refs: Vec<&SequenceSample> = data.train.iter().take(8).collect();
        let b = Batch::from_samples(&t.config.forecaster, &refs).unwrap();
        let (grads, log) = t.micro_step(&b, &data.pose_db).unwrap();
        assert!(log.l_pose2d.is_none() && log.l_critic.is_none());
        for id in t.generator.group_ids("pose_decoder") {
            assert!(grads[id.index()].data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn empty_database_with_adversarial_loss_is_config_error() {
        let mut data = tiny_data();
        data.pose_db.clear();
        let mut t = trainer(tiny_config(), &data);
        assert!(matches!(t.train_epoch(&data, None), Err(Error::Config(_))));
    }

    #[test]
    fn nan_parameters_abort_with_checkpoint_hint() {
        let data = tiny_data();
        let mut t = trainer(tiny_config(), &data);
        let dir = tempfile::tempdir().unwrap();
        let saved = t.save_checkpoint(dir.path(), "ok").unwrap();
        let id = t.generator.params.find("pose_decoder.1.bias").unwrap();
        t.generator.params.get_mut(id).data_mut()[0] = f32::NAN;
        match t.train_epoch(&data, None) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains(&saved.display().to_string()), "{msg}"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn fit_writes_logs_and_reloadable_checkpoints() {
        let data = tiny_data();
        let mut c = tiny_config();
        c.checkpoint_every = 1;
        let mut t = trainer(c, &data);
        let dir = tempfile::tempdir().unwrap();
        let mut seen = 0;
        let report = t.fit(&data, Some(dir.path()), |_, _| seen += 1).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(report.epochs.len(), 2);
        assert!(dir.path().join("metrics.jsonl").is_file());
        let (g, info, _) = load_generator(&dir.path().join("final.cpf")).unwrap();
        assert_eq!(g.params, t.generator.params);
        assert_eq!(info, data.info);
        let (c, _) = load_critic(&dir.path().join("final.critic.cpf")).unwrap();
        assert_eq!(c.params, t.critic.params);
        assert!(matches!(load_critic(&dir.path().join("final.cpf")), Err(Error::Version(_))));
    }
}
