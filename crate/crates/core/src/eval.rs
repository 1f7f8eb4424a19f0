//! Batch evaluation against dataset manifests.
//!
//! Produces one row per sample (PSNR, SSIM, haze-density proxy before and
//! after dehazing) plus aggregate mean/std, written as CSV and a JSON
//! summary with deterministic bytes.

use std::path::Path;

use crate::dcp::dark_channel;
use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::io::atomic_write;
use crate::manifest::{LoadedSample, Manifest};
use crate::metrics::{psnr, ssim};
use crate::solver::{solve, OracleField, SolveOptions, VelocityField};

/// Haze-density proxy: mean dark channel (radius 7). Higher means hazier
/// under bright airlight. Not comparable to fitted no-reference metrics.
pub fn haze_density_proxy(image: &ImageRGB) -> f64 {
    dark_channel(image, 7).mean()
}

/// Per-sample velocity-field provider: given a loaded sample, produce the
/// field to solve with and the transmission map fed into it. Sources are
/// shared across scoring threads, hence `Sync`.
pub trait FieldSource: Sync {
    fn prepare<'a>(&'a self, sample: &LoadedSample) -> Result<PreparedField<'a>>;
}

pub struct PreparedField<'a> {
    pub field: Box<dyn VelocityField + 'a>,
    pub t_in: crate::image::ScalarField,
}

/// Exact oracle: reads (J, A, T) from the sample.
pub struct OracleSource;

impl FieldSource for OracleSource {
    fn prepare<'a>(&'a self, sample: &LoadedSample) -> Result<PreparedField<'a>> {
        let light = crate::image::AtmosphericLight::Global(sample.record.params.light_rgb);
        let field = OracleField::new(&sample.clean, &light, &sample.transmission)?;
        Ok(PreparedField {
            field: Box::new(field),
            t_in: sample.transmission.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub proxy_hazy: f64,
    pub proxy_dehazed: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    pub proxy_hazy: Aggregate,
    pub proxy_dehazed: Aggregate,
}

fn aggregate(values: impl Iterator<Item = f64> + Clone) -> Aggregate {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    Aggregate {
        mean,
        std: var.sqrt(),
    }
}

fn score_sample(
    record: &crate::manifest::SampleRecord,
    base_dir: &Path,
    source: &dyn FieldSource,
    n_steps: usize,
) -> Result<EvalRow> {
    let sample = record.load(base_dir)?;
    let prepared = source.prepare(&sample)?;
    let (dehazed, _) = solve(
        &sample.hazy,
        &prepared.t_in,
        prepared.field.as_ref(),
        &SolveOptions::with_steps(n_steps),
    )?;
    Ok(EvalRow {
        id: sample.record.id.clone(),
        psnr: psnr(&dehazed, &sample.clean)?,
        ssim: ssim(&dehazed, &sample.clean)?,
        proxy_hazy: haze_density_proxy(&sample.hazy),
        proxy_dehazed: haze_density_proxy(&dehazed),
    })
}

/// Dehaze and score every sample of a manifest. Samples are scored
/// concurrently in contiguous chunks; the report is assembled in manifest
/// order, so the output bytes do not depend on the thread count.
pub fn evaluate_manifest(
    manifest_path: &Path,
    source: &dyn FieldSource,
    n_steps: usize,
) -> Result<EvalReport> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.samples.is_empty() {
        return Err(Error::Manifest("manifest has no samples".into()));
    }
    let base_dir = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    manifest.check_files(&base_dir)?;

    let records = &manifest.samples;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(records.len());
    let chunk = records.len().div_ceil(workers);
    let base_dir = base_dir.as_path();

    let chunk_results: Vec<Result<Vec<EvalRow>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|slice| {
                scope.spawn(move || {
                    slice
                        .iter()
                        .map(|record| score_sample(record, base_dir, source, n_steps))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    });

    let mut rows = Vec::with_capacity(records.len());
    for result in chunk_results {
        rows.extend(result?);
    }

    Ok(EvalReport {
        psnr: aggregate(rows.iter().map(|r| r.psnr)),
        ssim: aggregate(rows.iter().map(|r| r.ssim)),
        proxy_hazy: aggregate(rows.iter().map(|r| r.proxy_hazy)),
        proxy_dehazed: aggregate(rows.iter().map(|r| r.proxy_dehazed)),
        rows,
    })
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

fn fmt_json_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        // JSON has no infinity literal; quote the sentinel.
        format!("\"{}\"", fmt_f64(v))
    }
}

impl EvalReport {
    /// CSV with header `id,psnr,ssim,proxy_hazy,proxy_dehazed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,psnr,ssim,proxy_hazy,proxy_dehazed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.id,
                fmt_f64(r.psnr),
                fmt_f64(r.ssim),
                fmt_f64(r.proxy_hazy),
                fmt_f64(r.proxy_dehazed)
            ));
        }
        out
    }

    /// JSON summary of the aggregates.
    pub fn to_json_summary(&self) -> String {
        let agg = |a: &Aggregate| {
            format!(
                "{{\"mean\": {}, \"std\": {}}}",
                fmt_json_f64(a.mean),
                fmt_json_f64(a.std)
            )
        };
        format!(
            "{{\n  \"count\": {},\n  \"psnr\": {},\n  \"ssim\": {},\n  \"proxy_hazy\": {},\n  \"proxy_dehazed\": {}\n}}\n",
            self.rows.len(),
            agg(&self.psnr),
            agg(&self.ssim),
            agg(&self.proxy_hazy),
            agg(&self.proxy_dehazed)
        )
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        atomic_write(csv_path, self.to_csv().as_bytes())?;
        atomic_write(json_path, self.to_json_summary().as_bytes())
    }
}
