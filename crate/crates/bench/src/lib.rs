//! Seeded fixtures shared by the benchmarks.

use charpose::data::synth::{puppet_pose, ArmAngles};
use charpose::data::{generate_puppet_dataset, SynthSpec};
use charpose::pose::{rotation_yx, Camera, Skeleton3D};
use charpose::training::TrainData;
use charpose::{Result, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_poses(n: usize, seed: u64) -> Vec<Skeleton3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arm = |r: &mut ChaCha8Rng| {
        ArmAngles::new(r.random_range(0.0..120.0), r.random_range(0.0..60.0), r.random_range(0.0..90.0))
    };
    (0..n)
        .map(|_| {
            let (a, b) = (arm(&mut rng), arm(&mut rng));
            puppet_pose(a, b)
        })
        .collect()
}

pub fn front_camera() -> Camera {
    Camera::new(1000.0, 1000.0, 960.0, 540.0, rotation_yx(0.3, 0.1), [0.0, 0.0, 3000.0]).expect("valid camera")
}

/// A small synthetic dataset windowed for training with `config`.
pub fn training_fixture(config: &mut TrainConfig, sequences: usize) -> Result<TrainData> {
    let mut spec = SynthSpec::default();
    spec.config.num_sequences = sequences;
    spec.config.db_size = 2000;
    let synth = generate_puppet_dataset(&spec, 0)?;
    let data = TrainData::with_pose_db(&synth.dataset(), config.forecaster.history, synth.pose_db)?;
    data.fit_config(config);
    Ok(data)
}
