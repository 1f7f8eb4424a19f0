//! `eval`: score a manifest and write report.csv + summary.json.

use anyhow::Context;
use hazeflow_core::eval::{evaluate_manifest, FieldSource, OracleSource};
use hazeflow_flow::source::NetFieldSource;
use hazeflow_flow::ToyFlowNet;

use crate::config::{resolve_seed, Overlay};
use crate::{usage, CliError, CliResult, EvalArgs};

pub fn run(args: EvalArgs) -> CliResult {
    let overlay = Overlay::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &overlay)?;
    let steps = overlay.get(args.steps, "steps")?.unwrap_or(1);

    if args.checkpoint.is_some() == args.oracle {
        return Err(usage("pass exactly one of --checkpoint or --oracle"));
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    eprintln!(
        "config: {}",
        serde_json::json!({
            "command": "eval",
            "manifest": args.manifest.display().to_string(),
            "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
            "oracle": args.oracle,
            "steps": steps,
            "out": args.out.display().to_string(),
            "seed": seed,
        })
    );

    let source: Box<dyn FieldSource> = match &args.checkpoint {
        None => Box::new(OracleSource),
        Some(path) => {
            let net = ToyFlowNet::load_checkpoint(path).map_err(|e| {
                CliError::Runtime(anyhow::Error::from(e).context("loading checkpoint"))
            })?;
            Box::new(NetFieldSource::new(net))
        }
    };

    let report = evaluate_manifest(&args.manifest, source.as_ref(), steps)?;
    let csv_path = args.out.join("report.csv");
    let json_path = args.out.join("summary.json");
    report.write(&csv_path, &json_path)?;
    println!(
        "{} samples: psnr {:.3} (+/- {:.3}), ssim {:.4}; report {}",
        report.rows.len(),
        report.psnr.mean,
        report.psnr.std,
        report.ssim.mean,
        csv_path.display()
    );
    Ok(())
}
