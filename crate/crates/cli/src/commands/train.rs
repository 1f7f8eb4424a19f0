//! `train`: run one training stage and write a checkpoint plus loss log.

use std::path::{Path, PathBuf};

use anyhow::Context;
use hazeflow_core::asm::HazePair;
use hazeflow_core::image::{AtmosphericLight, ImageRGB};
use hazeflow_core::io::{atomic_write, load_image};
use hazeflow_core::manifest::Manifest;
use hazeflow_core::rng::Rng;
use hazeflow_flow::net::NetConfig;
use hazeflow_flow::train::{distill, loss_log_csv, pretrain, reflow, LossRecord, TrainConfig};
use hazeflow_flow::{Stage, ToyFlowNet};

use crate::config::{resolve_seed, Overlay};
use crate::{usage, CliError, CliResult, TrainArgs};

pub fn run(args: TrainArgs) -> CliResult {
    let overlay = Overlay::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &overlay)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        stage: args.stage,
        iterations: overlay
            .get(args.iters, "iters")?
            .unwrap_or(defaults.iterations),
        lr_start: overlay
            .get(args.lr_start, "lr_start")?
            .unwrap_or(defaults.lr_start),
        lr_end: overlay
            .get(args.lr_end, "lr_end")?
            .unwrap_or(defaults.lr_end),
        batch_size: overlay
            .get(args.batch, "batch")?
            .unwrap_or(defaults.batch_size),
        patch_size: overlay
            .get(args.patch, "patch")?
            .unwrap_or(defaults.patch_size),
        w_transmission: overlay
            .get(args.w_t, "w_t")?
            .unwrap_or(defaults.w_transmission),
        seed,
        gamma_range: (
            overlay
                .get(None, "gamma_lo")?
                .unwrap_or(defaults.gamma_range.0),
            overlay
                .get(None, "gamma_hi")?
                .unwrap_or(defaults.gamma_range.1),
        ),
    };
    let rounds = overlay.get(args.rounds, "rounds")?.unwrap_or(1);
    let loss_log_path = args
        .loss_log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));

    if matches!(cfg.stage, Stage::Reflow | Stage::Distill) && args.teacher.is_none() {
        return Err(usage(
            format!("--stage {:?} requires --teacher", cfg.stage).to_lowercase(),
        ));
    }

    eprintln!(
        "config: {}",
        serde_json::json!({
            "command": "train",
            "stage": format!("{:?}", cfg.stage).to_lowercase(),
            "manifest": args.manifest.as_ref().map(|p| p.display().to_string()),
            "hazy_dir": args.hazy_dir.as_ref().map(|p| p.display().to_string()),
            "iters": cfg.iterations,
            "lr_start": cfg.lr_start,
            "lr_end": cfg.lr_end,
            "batch": cfg.batch_size,
            "patch": cfg.patch_size,
            "w_t": cfg.w_transmission,
            "seed": cfg.seed,
            "rounds": rounds,
            "out": args.out.display().to_string(),
        })
    );

    let mut rng = Rng::new(cfg.seed);
    let (net, log) = match cfg.stage {
        Stage::Pretrain => {
            let manifest_path = args
                .manifest
                .as_ref()
                .ok_or_else(|| usage("--stage pretrain requires --manifest"))?;
            let pairs = load_pairs(manifest_path)?;
            let mut net = ToyFlowNet::new(NetConfig {
                seed: cfg.seed,
                ..Default::default()
            });
            let log = pretrain(&mut net, &pairs, &cfg, &mut rng)?;
            (net, log)
        }
        Stage::Reflow => {
            let teacher = load_teacher(args.teacher.as_deref().expect("checked above"))?;
            let hazy = load_hazy_set(&args)?;
            let mut phi = teacher.clone();
            let log = reflow(&teacher, &mut phi, &hazy, &cfg, &mut rng)?;
            (phi, log)
        }
        Stage::Distill => {
            let hazy = load_hazy_set(&args)?;
            let mut teacher = load_teacher(args.teacher.as_deref().expect("checked above"))?;
            let mut log: Vec<LossRecord> = Vec::new();
            for _ in 0..rounds.max(1) {
                let mut student = teacher.clone();
                log.extend(distill(&teacher, &mut student, &hazy, &cfg, &mut rng)?);
                teacher = student;
            }
            (teacher, log)
        }
    };

    save_checkpoint_atomic(&net, &args.out)?;
    atomic_write(&loss_log_path, loss_log_csv(&log).as_bytes())?;

    match (log.first(), log.last()) {
        (Some(first), Some(last)) => println!(
            "{} iterations, total loss {} -> {}; checkpoint {}",
            log.len(),
            first.total,
            last.total,
            args.out.display()
        ),
        _ => println!("0 iterations; checkpoint {}", args.out.display()),
    }
    Ok(())
}

fn load_pairs(manifest_path: &Path) -> Result<Vec<HazePair>, CliError> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.check_files(base)?;
    manifest
        .samples
        .iter()
        .map(|record| {
            let s = record.load(base)?;
            Ok(HazePair {
                light: AtmosphericLight::Global(s.record.params.light_rgb),
                params: s.record.params,
                clean: s.clean,
                hazy: s.hazy,
                transmission: s.transmission,
                depth: s.depth,
            })
        })
        .collect()
}

fn load_hazy_set(args: &TrainArgs) -> Result<Vec<ImageRGB>, CliError> {
    if let Some(dir) = &args.hazy_dir {
        let files = super::list_images(dir)?;
        if files.is_empty() {
            return Err(anyhow::anyhow!("no images in {}", dir.display()).into());
        }
        return files
            .iter()
            .map(|p| load_image(p).map_err(CliError::from))
            .collect();
    }
    if let Some(manifest_path) = &args.manifest {
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        manifest.check_files(base)?;
        return manifest
            .samples
            .iter()
            .map(|s| load_image(base.join(&s.hazy)).map_err(CliError::from))
            .collect();
    }
    Err(usage("reflow/distill need --hazy-dir or --manifest"))
}

fn load_teacher(path: &Path) -> Result<ToyFlowNet, CliError> {
    ToyFlowNet::load_checkpoint(path)
        .map_err(|e| CliError::Runtime(anyhow::Error::from(e).context("loading teacher")))
}

fn save_checkpoint_atomic(net: &ToyFlowNet, path: &PathBuf) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("hzw.tmp");
    net.save_checkpoint(&tmp)?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("renaming checkpoint into {}", path.display()))?;
    Ok(())
}
