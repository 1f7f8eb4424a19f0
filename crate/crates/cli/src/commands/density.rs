//! `density`: generate a non-homogeneous density field plus a PNG preview.

use hazeflow_core::io::{atomic_write, field_png_bytes, save_field};
use hazeflow_core::mcbm::{generate_density, ITERATION_FACTORS, SMOOTHING_SIGMAS};
use hazeflow_core::rng::Rng;

use crate::config::{resolve_seed, Overlay};
use crate::{usage, CliResult, DensityArgs};

pub fn run(args: DensityArgs) -> CliResult {
    let overlay = Overlay::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &overlay)?;
    let size = overlay
        .get(Some(args.size.clone()), "size")?
        .expect("size is required");
    let (height, width) = parse_size(&size)?;
    let n_factor = overlay.get(args.n_factor, "n_factor")?;
    let sigma = overlay.get(args.sigma, "sigma")?;

    if let Some(f) = n_factor {
        if !ITERATION_FACTORS.contains(&f) {
            return Err(usage(format!(
                "--n-factor must be one of {ITERATION_FACTORS:?}, got {f}"
            )));
        }
    }
    if let Some(s) = sigma {
        if !SMOOTHING_SIGMAS.contains(&s) {
            return Err(usage(format!(
                "--sigma must be one of {SMOOTHING_SIGMAS:?}, got {s}"
            )));
        }
    }

    let mut rng = Rng::new(seed);
    // Unspecified knobs are drawn exactly like the dataset sampler does.
    let factor = n_factor.unwrap_or_else(|| *rng.choice(&ITERATION_FACTORS));
    let sigma = sigma.unwrap_or_else(|| *rng.choice(&SMOOTHING_SIGMAS));
    let n = height * width * factor;

    eprintln!(
        "config: {}",
        serde_json::json!({
            "command": "density",
            "size": format!("{height}x{width}"),
            "n_factor": factor,
            "sigma": sigma,
            "seed": seed,
            "out": args.out.display().to_string(),
        })
    );

    let density = generate_density(height, width, n, sigma, &mut rng)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| anyhow::anyhow!("creating {}: {e}", parent.display()))?;
    }
    let hzf = args.out.with_extension("hzf");
    let png = args.out.with_extension("png");
    save_field(&density, &hzf)?;
    atomic_write(&png, &field_png_bytes(&density)?)?;
    println!(
        "density map {} ({}x{}, n={n}, sigma={sigma}); preview {}",
        hzf.display(),
        height,
        width,
        png.display()
    );
    Ok(())
}

fn parse_size(text: &str) -> Result<(usize, usize), crate::CliError> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    if parts.len() == 2 {
        if let (Ok(h), Ok(w)) = (parts[0].parse::<usize>(), parts[1].parse::<usize>()) {
            if h > 0 && w > 0 {
                return Ok((h, w));
            }
        }
    }
    Err(usage(format!(
        "--size must look like 256x256, got '{text}'"
    )))
}
