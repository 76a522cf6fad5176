//! Pose quality as `1 − a`, where `a` is the held-out accuracy of a small
//! classifier trained to tell database poses from generated ones.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::bone_lengths;
use crate::nn::{AdamConfig, AdamState, Mlp, ParamStore, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};
use crate::pose::{JointLayout, Skeleton3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub hidden: Vec<usize>,
    pub leaky_slope: f32,
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of each class used for training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            lr: 1e-3,
            epochs: 30,
            batch_size: 128,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub quality: f64,
    pub accuracy: f64,
    pub held_out: usize,
}

/// Neck-centered joints followed by bone lengths.
pub fn pose_features(pose: &Skeleton3D, layout: &JointLayout) -> Vec<f32> {
    let c = pose.center_at(layout.root);
    let mut f: Vec<f32> = c.flat().collect();
    f.extend(bone_lengths(pose, layout).into_iter().map(|l| l as f32));
    f
}

/// Mean binary cross-entropy with logits `[m, 1]` against `labels`.
fn bce_with_logits(tape: &mut Tape, logits: Var, labels: &[f32]) -> Result<Var> {
    let lv = tape.value(logits);
    let m = lv.rows();
    let mut total = 0.0f64;
    let mut d = vec![0.0f32; m];
    for (r, (&z, &y)) in lv.data().iter().zip(labels).enumerate() {
        let z = z as f64;
        let y = y as f64;
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let p = 1.0 / (1.0 + (-z).exp());
        d[r] = ((p - y) / m as f64) as f32;
    }
    let d = Tensor::matrix(m, 1, d)?;
    let value = Tensor::scalar((total / m as f64) as f32);
    Ok(tape.custom(
        vec![logits],
        value,
        Rc::new(move |tape, g| {
            let gx = tape.expand(g, &[m, 1])?;
            let dv = tape.leaf(d.clone());
            Ok(vec![tape.mul(gx, dv)?])
        }),
    ))
}

fn split_indices(n: usize, train_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let cut = ((n as f64) * train_fraction).floor() as usize;
    let held = idx.split_off(cut);
    (idx, held)
}

/// Trained real-vs-generated classifier with its feature standardization.
#[derive(Debug, Clone)]
pub struct QualityClassifier {
    pub layout: JointLayout,
    params: ParamStore,
    net: Mlp,
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl QualityClassifier {
    /// Trains on the given poses (real labelled 1, fake 0).
    pub fn fit(real: &[Skeleton3D], fake: &[Skeleton3D], layout: &JointLayout, config: &QualityConfig) -> Result<Self> {
        if real.is_empty() || fake.is_empty() {
            return Err(Error::Contract("quality classifier needs both pools".into()));
        }
        let feats: Vec<Vec<f32>> = real.iter().chain(fake).map(|p| pose_features(p, layout)).collect();
        let labels: Vec<f32> = std::iter::repeat_n(1.0, real.len())
            .chain(std::iter::repeat_n(0.0, fake.len()))
            .collect();
        let w = feats[0].len();
        let n = feats.len() as f64;
        let mut mean = vec![0.0f64; w];
        for f in &feats {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += *v as f64 / n;
            }
        }
        let mut var = vec![0.0f64; w];
        for f in &feats {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (*v as f64 - m).powi(2) / n;
            }
        }
        let mean: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
        let std: Vec<f32> = var.iter().map(|&v| (v.sqrt() as f32).max(1e-3)).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut widths = vec![w];
        widths.extend(&config.hidden);
        widths.push(1);
        let net = Mlp::new(&mut params, "quality", &widths, config.leaky_slope, false, &mut rng);
        let mut clf = Self {
            layout: layout.clone(),
            params,
            net,
            mean,
            std,
        };
        let x: Vec<Vec<f32>> = feats.iter().map(|f| clf.standardize(f)).collect();
        let mut adam = AdamState::new(
            AdamConfig {
                lr: config.lr,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            &clf.params,
        );
        let mut order: Vec<usize> = (0..x.len()).collect();
        for _ in 0..config.epochs {
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(config.batch_size.max(1)) {
                let data: Vec<f32> = chunk.iter().flat_map(|&i| x[i].iter().copied()).collect();
                let y: Vec<f32> = chunk.iter().map(|&i| labels[i]).collect();
                let mut tape = Tape::new();
                let b = clf.params.bind(&mut tape);
                let xv = tape.leaf(Tensor::matrix(chunk.len(), w, data)?);
                let z = clf.net.forward(&mut tape, &b, xv)?;
                let loss = bce_with_logits(&mut tape, z, &y)?;
                let g = tape.grad(loss, b.vars())?;
                let grads: Vec<Tensor> = g.iter().map(|&v| tape.value(v).clone()).collect();
                adam.step(&mut clf.params, &grads)?;
            }
        }
        Ok(clf)
    }

    fn standardize(&self, f: &[f32]) -> Vec<f32> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Logits; positive means "judged real".
    pub fn logits(&self, poses: &[Skeleton3D]) -> Result<Vec<f32>> {
        if poses.is_empty() {
            return Ok(Vec::new());
        }
        let w = self.mean.len();
        let data: Vec<f32> = poses
            .iter()
            .flat_map(|p| self.standardize(&pose_features(p, &self.layout)))
            .collect();
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let x = tape.leaf(Tensor::matrix(poses.len(), w, data)?);
        let z = self.net.forward(&mut tape, &b, x)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Accuracy on a labelled set of real and fake poses.
    pub fn accuracy(&self, real: &[Skeleton3D], fake: &[Skeleton3D]) -> Result<f64> {
        let n = real.len() + fake.len();
        if n == 0 {
            return Err(Error::Contract("accuracy of an empty set".into()));
        }
        let right = self.logits(real)?.iter().filter(|&&z| z > 0.0).count()
            + self.logits(fake)?.iter().filter(|&&z| z <= 0.0).count();
        Ok(right as f64 / n as f64)
    }
}

/// Splits each pool into train and held-out parts with a seeded shuffle.
pub fn stratified_split(
    real: &[Skeleton3D],
    fake: &[Skeleton3D],
    config: &QualityConfig,
) -> Result<[Vec<Skeleton3D>; 4]> {
    let min = (1.0 / (1.0 - config.train_fraction)).ceil() as usize;
    if real.len() < min.max(2) || fake.len() < min.max(2) {
        return Err(Error::Contract(format!(
            "quality pools of {} real and {} fake poses are too small for a {:.0}/{:.0} split",
            real.len(),
            fake.len(),
            config.train_fraction * 100.0,
            (1.0 - config.train_fraction) * 100.0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (rt, rh) = split_indices(real.len(), config.train_fraction, &mut rng);
    let (ft, fh) = split_indices(fake.len(), config.train_fraction, &mut rng);
    let pick = |pool: &[Skeleton3D], idx: &[usize]| idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
    Ok([pick(real, &rt), pick(real, &rh), pick(fake, &ft), pick(fake, &fh)])
}

/// Trains a classifier on a stratified split of the pools and reports
/// `1 − held-out accuracy`.
pub fn quality_metric(
    real: &[Skeleton3D],
    fake: &[Skeleton3D],
    layout: &JointLayout,
    config: &QualityConfig,
) -> Result<QualityReport> {
    let [rt, rh, ft, fh] = stratified_split(real, fake, config)?;
    let clf = QualityClassifier::fit(&rt, &ft, layout, config)?;
    let accuracy = clf.accuracy(&rh, &fh)?;
    Ok(QualityReport {
        quality: 1.0 - accuracy,
        accuracy,
        held_out: rh.len() + fh.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{puppet_pose, ArmAngles};

    fn pool(n: usize, seed: u64) -> Vec<Skeleton3D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arm = || ArmAngles::new(rng.random_range(0.0..120.0), rng.random_range(0.0..60.0), rng.random_range(0.0..90.0));
        (0..n).map(|_| puppet_pose(arm(), arm())).collect()
    }

    fn fast() -> QualityConfig {
        QualityConfig {
            epochs: 15,
            ..QualityConfig::default()
        }
    }

    #[test]
    fn tiny_pools_are_rejected() {
        let p = pool(4, 0);
        let r = quality_metric(&p, &p, &JointLayout::upper_body(), &fast());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn stretched_arm_is_detected() {
        let layout = JointLayout::upper_body();
        let real = pool(400, 1);
        let fake: Vec<Skeleton3D> = pool(400, 2)
            .into_iter()
            .map(|mut p| {
                let s = p.joints[crate::pose::joint::RIGHT_SHOULDER];
                for j in [crate::pose::joint::RIGHT_ELBOW, crate::pose::joint::RIGHT_HAND] {
                    for k in 0..3 {
                        p.joints[j][k] = s[k] + 3.0 * (p.joints[j][k] - s[k]);
                    }
                }
                p
            })
            .collect();
        let q = quality_metric(&real, &fake, &layout, &fast()).unwrap();
        assert!(q.quality < 0.1, "{q:?}");
    }

    #[test]
    fn bce_matches_closed_form() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap());
        let l = bce_with_logits(&mut tape, z, &[1.0, 0.0]).unwrap();
        let want = (2f64.ln() + (1.0 + 2f64.exp()).ln()) / 2.0;
        assert!((tape.value(l).data()[0] as f64 - want).abs() < 1e-6);
    }
}
