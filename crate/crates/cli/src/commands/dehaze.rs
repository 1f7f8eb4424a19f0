//! `dehaze`: one-step (or N-step) restoration of files or a whole manifest.

use std::path::Path;

use anyhow::Context;
use hazeflow_core::dcp::{dark_channel, estimate_light, estimate_transmission, DcpConfig};
use hazeflow_core::image::{AtmosphericLight, ImageRGB, ScalarField};
use hazeflow_core::io::{atomic_write, image_png_bytes, load_image, save_field};
use hazeflow_core::manifest::Manifest;
use hazeflow_core::solver::{solve, OracleField, SolveOptions, VelocityField};
use hazeflow_flow::ToyFlowNet;

use crate::config::{resolve_seed, Overlay};
use crate::{usage, CliError, CliResult, DehazeArgs};

pub fn run(args: DehazeArgs) -> CliResult {
    let overlay = Overlay::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &overlay)?;
    let steps = overlay.get(args.steps, "steps")?.unwrap_or(1);
    let jobs = overlay.get(args.jobs, "jobs")?.unwrap_or(1).max(1);
    let dump_t = overlay.get_switch(args.dump_t, "dump_t")?;
    let frozen = overlay.get_switch(args.frozen_velocity, "frozen_velocity")?;

    if args.checkpoint.is_some() == args.oracle_manifest.is_some() {
        return Err(usage(
            "pass exactly one of --checkpoint or --oracle-manifest",
        ));
    }
    if args.oracle_manifest.is_none() && args.r#in.is_none() {
        return Err(usage(
            "--in is required unless --oracle-manifest supplies the inputs",
        ));
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    eprintln!(
        "config: {}",
        serde_json::json!({
            "command": "dehaze",
            "in": args.r#in.as_ref().map(|p| p.display().to_string()),
            "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
            "oracle_manifest": args.oracle_manifest.as_ref().map(|p| p.display().to_string()),
            "steps": steps,
            "out": args.out.display().to_string(),
            "dump_t": dump_t,
            "frozen_velocity": frozen,
            "jobs": jobs,
            "seed": seed,
        })
    );

    let options = SolveOptions {
        n: steps,
        refresh_velocity: !frozen,
        capture_states: false,
    };

    if let Some(manifest_path) = &args.oracle_manifest {
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        manifest.check_files(base)?;
        for record in &manifest.samples {
            let sample = record.load(base)?;
            let light = AtmosphericLight::Global(sample.record.params.light_rgb);
            let field = OracleField::new(&sample.clean, &light, &sample.transmission)?;
            let stem = super::file_stem(Path::new(&record.hazy));
            write_outputs(
                &args.out,
                &stem,
                &sample.hazy,
                &sample.transmission,
                &field,
                &options,
                dump_t,
            )?;
        }
        println!(
            "dehazed {} samples into {}",
            manifest.samples.len(),
            args.out.display()
        );
        return Ok(());
    }

    let net = ToyFlowNet::load_checkpoint(args.checkpoint.as_ref().expect("checked above"))
        .map_err(|e| CliError::Runtime(anyhow::Error::from(e).context("loading checkpoint")))?;
    let input = args.r#in.as_ref().expect("checked above");
    let files = if input.is_dir() {
        super::list_images(input)?
    } else {
        vec![input.clone()]
    };
    if files.is_empty() {
        return Err(anyhow::anyhow!("no input images in {}", input.display()).into());
    }

    let dcp = DcpConfig::default();
    let worker = |path: &Path| -> Result<(), CliError> {
        let hazy = load_image(path).with_context(|| format!("loading {}", path.display()))?;
        let dark = dark_channel(&hazy, dcp.patch_radius);
        let light = estimate_light(&hazy, &dark, dcp.top_fraction)?;
        let t_in = estimate_transmission(&hazy, &light, &dcp)?;
        let stem = super::file_stem(path);
        write_outputs(&args.out, &stem, &hazy, &t_in, &net, &options, dump_t)
    };

    if jobs == 1 || files.len() == 1 {
        for path in &files {
            worker(path)?;
        }
    } else {
        let chunk = files.len().div_ceil(jobs);
        std::thread::scope(|scope| -> Result<(), CliError> {
            let mut handles = Vec::new();
            for slice in files.chunks(chunk) {
                handles.push(scope.spawn(move || -> Result<(), CliError> {
                    for path in slice {
                        worker(path)?;
                    }
                    Ok(())
                }));
            }
            for handle in handles {
                handle.join().expect("worker panicked")?;
            }
            Ok(())
        })?;
    }
    println!("dehazed {} images into {}", files.len(), args.out.display());
    Ok(())
}

fn write_outputs(
    out_dir: &Path,
    stem: &str,
    hazy: &ImageRGB,
    t_in: &ScalarField,
    field: &dyn VelocityField,
    options: &SolveOptions,
    dump_t: bool,
) -> Result<(), CliError> {
    if dump_t {
        let (_, t_refined) = field.evaluate(hazy, t_in)?;
        save_field(&t_refined, out_dir.join(format!("{stem}_t.hzf")))?;
    }
    let (dehazed, _) = solve(hazy, t_in, field, options)?;
    atomic_write(
        &out_dir.join(format!("{stem}.png")),
        &image_png_bytes(&dehazed)?,
    )?;
    Ok(())
}
