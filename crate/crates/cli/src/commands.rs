use std::fs;
use std::path::{Path, PathBuf};

use charpose::data::{read_pose_db, write_pretty_json, Dataset, Split, SynthSpec, DATA_ROOT_ENV};
use charpose::eval::{evaluate_rollouts, write_curve_csv, QualityConfig};
use charpose::overrides::{apply_override, merge_json};
use charpose::rollout::{ground_truth_rollouts, rollout_dataset, ActionFeedback, NoisePolicy, RolloutConfig, RolloutFile};
use charpose::training::{load_generator, DatasetInfo, TrainData};
use charpose::{Error, Result, TrainConfig, Trainer};
use serde_json::Value;

use crate::{Cli, Command, EvalArgs, RolloutArgs, SynthArgs, TrainArgs};

/// Runs the selected command and returns the artifacts it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    if let Some(root) = &cli.data_root {
        std::env::set_var(DATA_ROOT_ENV, root);
    }
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Rollout(a) => rollout(cli, a),
        Command::Eval(a) => eval(cli, a),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let mut spec = match args.spec.as_ref().or(cli.config.as_ref()) {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::Input(format!("synth spec {} does not exist", p.display())));
            }
            SynthSpec::load(p)?
        }
        None => SynthSpec::preset(cli.preset.as_deref().unwrap_or("default"))?,
    };
    for o in &cli.overrides {
        apply_override(&mut spec, o)?;
    }
    let data = charpose::data::generate_puppet_dataset(&spec, cli.seed.unwrap_or(0))?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Input(format!("{}: {e}", args.out.display())))?;
    Ok(vec![data.write(&args.out)?])
}

/// Preset, then `--config`, then `--set`, then `--seed`.
fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let base = TrainConfig::preset(cli.preset.as_deref().unwrap_or("default"))?;
    let mut tree = serde_json::to_value(&base).expect("config serializes");
    if let Some(p) = &cli.config {
        merge_json(&mut tree, read_json(p)?);
    }
    let mut cfg: TrainConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = train_config(cli)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let ds = Dataset::load(&args.manifest)?;
    let data = TrainData::from_dataset(&ds, cfg.forecaster.history)?;
    data.fit_config(&mut cfg);
    fs::create_dir_all(&args.out).map_err(|e| Error::Input(format!("{}: {e}", args.out.display())))?;
    let config_path = args.out.join("config.json");
    write_pretty_json(&config_path, &cfg)?;
    let mut trainer = Trainer::new(cfg, data.info.clone())?;
    let report = trainer.fit(&data, Some(&args.out), |r, _| {
        log::info!(
            "epoch {} loss {:.4} {}",
            r.epoch,
            r.train_loss,
            r.val
                .as_ref()
                .map(|v| format!("val top1 {:.3} mpjpe {:.2} px", v.top1, v.mpjpe_px))
                .unwrap_or_default()
        );
    })?;
    let report_path = args.out.join("train_report.json");
    write_pretty_json(&report_path, &report)?;
    let mut out = vec![config_path, args.out.join("metrics.jsonl"), report_path];
    out.extend(report.checkpoints);
    Ok(out)
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|_| Error::Input(format!("unknown split `{s}`")))
}

fn rollout(cli: &Cli, args: &RolloutArgs) -> Result<Vec<PathBuf>> {
    let ds = Dataset::load(&args.manifest)?;
    let split = parse_split(&args.split)?;
    let file = match (&args.checkpoint, args.ground_truth) {
        (_, true) => ground_truth_rollouts(&ds, split, args.history, args.steps.unwrap_or(5))?,
        (Some(ck), false) => {
            if !ck.is_file() {
                return Err(Error::Input(format!("checkpoint {} does not exist", ck.display())));
            }
            let (model, info, train) = load_generator(ck)?;
            info.check_compatible(&DatasetInfo::of(&ds))?;
            let mut cfg = RolloutConfig::new(args.steps.unwrap_or(train.rollout_steps));
            cfg.projection = train.eval_projection();
            cfg.noise = match args.noise.as_str() {
                "zero" => NoisePolicy::Zero,
                "resample" => NoisePolicy::Resample,
                other => return Err(Error::Input(format!("unknown noise policy `{other}`"))),
            };
            if let Some(t) = args.temperature {
                cfg.feedback = ActionFeedback::Sample { temperature: t };
            }
            rollout_dataset(&model, &ds, split, &cfg, cli.seed.unwrap_or(train.seed))?
        }
        (None, false) => unreachable!("clap requires --checkpoint"),
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Input(format!("{}: {e}", parent.display())))?;
    }
    file.save(&args.out)?;
    Ok(vec![args.out.clone()])
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<Vec<PathBuf>> {
    let ds = Dataset::load(&args.manifest)?;
    let rollouts = RolloutFile::load(&args.rollouts)?;
    if rollouts.dataset != ds.manifest.name {
        return Err(Error::Version(format!(
            "rollouts were made on dataset `{}`, manifest is `{}`",
            rollouts.dataset, ds.manifest.name
        )));
    }
    let pose_db = match (args.no_quality, ds.pose_db_path()) {
        (false, Some(p)) => Some(read_pose_db(&p, &ds.manifest.joint_layout)?),
        _ => None,
    };
    let quality = QualityConfig {
        seed: cli.seed.unwrap_or(0),
        ..QualityConfig::default()
    };
    let report = evaluate_rollouts(&rollouts, &ds, pose_db.as_deref(), &quality)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Input(format!("{}: {e}", args.out.display())))?;
    let report_path = args.out.join("report.json");
    let curve_path = args.out.join("curve.csv");
    write_pretty_json(&report_path, &report)?;
    write_curve_csv(&curve_path, &report)?;
    Ok(vec![report_path, curve_path])
}
