//! `gen-haze`: synthesize a paired dataset with a manifest.

use std::path::Path;

use anyhow::Context;
use hazeflow_core::image::ScalarField;
use hazeflow_core::io::{load_field, load_image, save_field, save_image_raw};
use hazeflow_core::manifest::{Manifest, SampleRecord};
use hazeflow_core::mcbm::{generate_pair, synth_depth_with, DepthKind, DEPTH_MAX_DEFAULT};
use hazeflow_core::rng::Rng;

use crate::config::{resolve_seed, Overlay};
use crate::{usage, CliResult, GenHazeArgs};

// Keeps the per-sample depth draw independent of the pair draws.
const DEPTH_SEED_SALT: u64 = 0x6465_7074_685f_7631;

enum DepthSource {
    Synthetic(DepthKind),
    Directory(std::path::PathBuf),
}

pub fn run(args: GenHazeArgs) -> CliResult {
    let overlay = Overlay::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &overlay)?;
    let depth_spec = overlay
        .get(args.depth, "depth")?
        .unwrap_or_else(|| "ramp".to_string());
    let count = overlay.get(args.count, "count")?;
    let d_max = overlay
        .get(args.d_max, "d_max")?
        .unwrap_or(DEPTH_MAX_DEFAULT);
    let no_degrade = overlay.get_switch(args.no_degrade, "no_degrade")?;
    let force = overlay.get_switch(args.force, "force")?;

    let depth_source = match depth_spec.parse::<DepthKind>() {
        Ok(kind) => DepthSource::Synthetic(kind),
        Err(_) => {
            let dir = std::path::PathBuf::from(&depth_spec);
            if !dir.is_dir() {
                return Err(usage(format!(
                    "--depth must be ramp, radial, fractal, or an existing directory (got '{depth_spec}')"
                )));
            }
            DepthSource::Directory(dir)
        }
    };

    let cleans = super::list_images(&args.clean_dir)?;
    if cleans.is_empty() {
        return Err(anyhow::anyhow!("no images (png/hzf) in {}", args.clean_dir.display()).into());
    }
    let count = count.unwrap_or(cleans.len());
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }

    let manifest_path = args.out.join("manifest.json");
    if manifest_path.exists() && !force {
        return Err(anyhow::anyhow!(
            "{} already exists; pass --force to overwrite",
            manifest_path.display()
        )
        .into());
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    eprintln!(
        "config: {}",
        serde_json::json!({
            "command": "gen-haze",
            "clean_dir": args.clean_dir.display().to_string(),
            "out": args.out.display().to_string(),
            "depth": depth_spec,
            "count": count,
            "seed": seed,
            "no_degrade": no_degrade,
            "d_max": d_max,
            "force": force,
        })
    );

    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let clean_path = &cleans[index % cleans.len()];
        let clean =
            load_image(clean_path).with_context(|| format!("loading {}", clean_path.display()))?;
        let sample_seed = seed.wrapping_add(index as u64);

        let depth = match &depth_source {
            DepthSource::Synthetic(kind) => {
                let mut depth_rng = Rng::new(sample_seed ^ DEPTH_SEED_SALT);
                synth_depth_with(clean.height(), clean.width(), *kind, d_max, &mut depth_rng)
            }
            DepthSource::Directory(dir) => load_depth_for(dir, clean_path, d_max)?,
        };

        let pair = generate_pair(&clean, &depth, sample_seed, !no_degrade)?;
        let id = format!("{index:04}");
        save_image_raw(&pair.clean, args.out.join(format!("clean_{id}.hzf")))?;
        save_field(&pair.depth, args.out.join(format!("depth_{id}.hzf")))?;
        save_image_raw(&pair.hazy, args.out.join(format!("hazy_{id}.hzf")))?;
        save_field(&pair.transmission, args.out.join(format!("trans_{id}.hzf")))?;
        samples.push(SampleRecord {
            id: id.clone(),
            clean: format!("clean_{id}.hzf"),
            depth: format!("depth_{id}.hzf"),
            hazy: format!("hazy_{id}.hzf"),
            transmission: format!("trans_{id}.hzf"),
            params: pair.params.clone(),
            seed: sample_seed,
        });
    }

    Manifest {
        base_seed: seed,
        samples,
    }
    .save(&manifest_path)?;
    println!("wrote {count} samples to {}", manifest_path.display());
    Ok(())
}

fn load_depth_for(
    dir: &Path,
    clean_path: &Path,
    d_max: f32,
) -> Result<ScalarField, crate::CliError> {
    let stem = super::file_stem(clean_path);
    let hzf = dir.join(format!("{stem}.hzf"));
    if hzf.is_file() {
        return Ok(load_field(&hzf)?);
    }
    let png = dir.join(format!("{stem}.png"));
    if png.is_file() {
        // Grayscale PNG depth: luma scaled into [0, d_max].
        let img = load_image(&png)?;
        return Ok(img.luma().map(|v| v * d_max));
    }
    Err(anyhow::anyhow!(
        "no depth map for '{stem}' in {} (expected {stem}.hzf or {stem}.png)",
        dir.display()
    )
    .into())
}
