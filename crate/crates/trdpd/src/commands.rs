//! Implementations behind the CLI subcommands, kept binary-free so the
//! integration tests can drive them directly.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use trdpd_core::diffusion::forward;
use trdpd_core::metrics::evaluate_set;
use trdpd_core::noise::{derive_seed, sample_poisson, scale_to_peak, NoiseSpec};
use trdpd_core::training::{
    finite_difference_check, train_joint_with, FdReport, FilterBasis, ModelParams, TrainOutcome,
    TrainingSample,
};
use trdpd_core::{DiffusionModel, Image};

use crate::config::{load_config, TrainSpec};
use crate::dataset::{center_crop, ingest, list_images, read_image, CropMode, IngestOutcome};
use crate::error::{format_err, Result};
use crate::model_file::{load_model, save_model};
use crate::parallel::{forward_parallel, ThreadRunner};
use crate::pgm::write_pgm;
use crate::synth::synth_clean;

/// Scales to the requested peak, applies Poisson noise, and writes the
/// result next to a sidecar recording the exact parameters used.
pub fn cmd_simulate(input: &Path, spec: NoiseSpec, output: &Path) -> Result<Vec<PathBuf>> {
    let files = list_images(input)?;
    if files.is_empty() {
        return Err(format_err(format!("{}: no input images", input.display())));
    }
    let many = files.len() > 1 || output.is_dir();
    if many {
        fs::create_dir_all(output)?;
    }
    let mut written = Vec::new();
    for (idx, file) in files.iter().enumerate() {
        let clean = read_image(file)?;
        let scaled = scale_to_peak(&clean, spec.peak)?;
        let used_seed = if many { derive_seed(spec.seed, idx as u64, 0) } else { spec.seed };
        let noisy = sample_poisson(&scaled, used_seed)?;
        let out_path = if many {
            let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            output.join(format!("{stem}_noisy.pgm"))
        } else {
            output.to_path_buf()
        };
        write_pgm(&out_path, &noisy)?;
        let meta = format!(
            "peak={}\nseed={used_seed}\nsource={}\n",
            spec.peak,
            file.display()
        );
        fs::write(sidecar_path(&out_path), meta)?;
        written.push(out_path);
    }
    Ok(written)
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let mut os = image_path.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

pub fn cmd_ingest(
    dataset: &Path,
    out_dir: &Path,
    patch: usize,
    count: Option<usize>,
    mode: CropMode,
    seed: u64,
) -> Result<IngestOutcome> {
    ingest(dataset, out_dir, patch, count, mode, seed)
}

/// Loads the configured dataset, corrupts it at the configured peak, and
/// trains a model jointly over all stages.
pub fn cmd_train(
    config_path: &Path,
    output: &Path,
    threads: usize,
    quiet: bool,
) -> Result<TrainOutcome> {
    let spec = load_config(config_path)?;
    let dataset_path = spec
        .dataset
        .as_ref()
        .ok_or_else(|| format_err("config: `dataset` is required for training"))?;
    let dataset = build_training_set(&spec, dataset_path)?;
    println!(
        "training on {} samples (peak {}, {} stages, {}x{} filters)",
        dataset.len(),
        spec.train.peak,
        spec.train.stages,
        spec.train.filter_size,
        spec.train.filter_size
    );

    let runner = ThreadRunner::new(threads);
    let mut print_progress = |info: &trdpd_core::training::IterationInfo| {
        if !quiet {
            println!(
                "iter {:4}  loss {:.6e}  grad {:.3e}  evals {}",
                info.iteration, info.loss, info.grad_inf_norm, info.evaluations
            );
        }
    };
    let outcome = train_joint_with(&dataset, &spec.train, &runner, Some(&mut print_progress))
        .map_err(crate::error::Error::Core)?;

    save_model(output, &outcome.params)?;
    println!(
        "done: loss {:.6e} -> {:.6e} in {} iterations ({} evaluations); model written to {}",
        outcome.initial_loss,
        outcome.final_loss,
        outcome.iterations,
        outcome.evaluations,
        output.display()
    );
    Ok(outcome)
}

/// Turns clean patches into (noisy, clean) pairs at the configured peak.
pub fn build_training_set(spec: &TrainSpec, dataset_path: &Path) -> Result<Vec<TrainingSample>> {
    let files = list_images(dataset_path)?;
    if files.is_empty() {
        return Err(format_err(format!("{}: no training images", dataset_path.display())));
    }
    let mut samples = Vec::with_capacity(files.len());
    for (idx, file) in files.iter().enumerate() {
        let mut clean = read_image(file)?;
        if spec.patch_size > 0
            && (clean.width() > spec.patch_size || clean.height() > spec.patch_size)
        {
            if clean.width() < spec.patch_size || clean.height() < spec.patch_size {
                eprintln!(
                    "warning: skipping {} (smaller than patch_size {})",
                    file.display(),
                    spec.patch_size
                );
                continue;
            }
            clean = center_crop(&clean, spec.patch_size)?;
        }
        let u_gt = scale_to_peak(&clean, spec.train.peak)?;
        let f = sample_poisson(&u_gt, derive_seed(spec.seed, idx as u64, 0))?;
        samples.push(TrainingSample::new(f, u_gt).map_err(crate::error::Error::Core)?);
    }
    Ok(samples)
}

/// Runs the diffusion process on one image. With `rescale`, the output is
/// brought back to the display range by `255 / peak` before writing.
pub fn cmd_denoise(
    model_path: &Path,
    input: &Path,
    output: &Path,
    rescale: bool,
    threads: usize,
) -> Result<Image> {
    let params = load_model(model_path)?;
    let basis = FilterBasis::new(params.filter_size).map_err(crate::error::Error::Core)?;
    let model = params.materialize(&basis).map_err(crate::error::Error::Core)?;
    let noisy = read_image(input)?;
    let restored = if threads > 1 {
        forward_parallel(&noisy, &model, threads)?
    } else {
        forward(&noisy, &model).map_err(crate::error::Error::Core)?
    };
    let written = if rescale {
        restored.map(|v| v * 255.0 / model.training_peak)
    } else {
        restored.clone()
    };
    write_pgm(output, &written)?;
    Ok(restored)
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<DiffusionModel>> {
    paths
        .iter()
        .map(|p| {
            let params = load_model(p)?;
            let basis = FilterBasis::new(params.filter_size).map_err(crate::error::Error::Core)?;
            params.materialize(&basis).map_err(crate::error::Error::Core)
        })
        .collect()
}

/// Evaluates each peak on the image set with its matching model and writes
/// the per-image and aggregate rows as CSV.
pub fn cmd_eval(
    model_paths: &[PathBuf],
    dataset: &Path,
    peaks: &[f64],
    seed: u64,
    output: &Path,
) -> Result<()> {
    let models = load_models(model_paths)?;
    let files = list_images(dataset)?;
    if files.is_empty() {
        return Err(format_err(format!("{}: no evaluation images", dataset.display())));
    }
    let images: Vec<Image> = files.iter().map(|f| read_image(f)).collect::<Result<_>>()?;
    let report = evaluate_set(&models, &images, peaks, seed).map_err(crate::error::Error::Core)?;

    let mut csv = String::from("peak,image_id,psnr_db,ssim,aggregate\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},0\n",
            row.peak, row.image_id, row.psnr_db, row.ssim
        ));
    }
    for agg in &report.aggregates {
        csv.push_str(&format!(
            "{},,{:.6},{:.6},1\n",
            agg.peak, agg.mean_psnr_db, agg.mean_ssim
        ));
    }
    fs::write(output, &csv)?;
    for agg in &report.aggregates {
        println!(
            "peak {:>6}: mean PSNR {:.4} dB, mean SSIM {:.4}",
            agg.peak, agg.mean_psnr_db, agg.mean_ssim
        );
    }
    Ok(())
}

/// Tolerance the gradcheck report is judged against.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Certifies the analytic gradients against central finite differences on a
/// small configuration (by default two 3x3 stages on a 32x32 sample).
pub fn cmd_gradcheck(config_path: Option<&Path>) -> Result<FdReport> {
    let spec = match config_path {
        Some(p) => load_config(p)?,
        None => gradcheck_default_spec(),
    };
    let size = spec.gradcheck_size;
    let params = ModelParams::init(spec.train.stages, spec.train.filter_size, spec.train.peak, spec.train.rbf)
        .map_err(crate::error::Error::Core)?;
    let clean = synth_clean(size, size, derive_seed(spec.seed, 1, 0), spec.train.peak);
    let noisy = sample_poisson(&clean, derive_seed(spec.seed, 2, 0)).map_err(crate::error::Error::Core)?;
    let sample = TrainingSample::new(noisy, clean).map_err(crate::error::Error::Core)?;

    println!(
        "gradient check: {} stages, {}x{} filters, {size}x{size} sample, step {:.1e}",
        spec.train.stages, spec.train.filter_size, spec.train.filter_size, spec.fd_step
    );
    let started = Instant::now();
    let report =
        finite_difference_check(&params, &sample, spec.fd_step).map_err(crate::error::Error::Core)?;
    for g in &report.groups {
        println!(
            "stage {}  {:18} rel {:.3e}  abs {:.3e}  (analytic {:.3e}, fd {:.3e})",
            g.stage, g.group, g.max_rel_err, g.max_abs_err, g.analytic_inf_norm, g.fd_inf_norm
        );
    }
    let max = report.max_rel_err();
    println!(
        "max relative error {max:.3e} (tolerance {GRADCHECK_TOL:.0e}) in {:.2}s: {}",
        started.elapsed().as_secs_f64(),
        if max < GRADCHECK_TOL { "OK" } else { "FAIL" }
    );
    Ok(report)
}

/// The default gradcheck shape: two 3x3 stages at peak 4.
pub fn gradcheck_default_spec() -> TrainSpec {
    let mut spec = TrainSpec::default();
    spec.train.stages = 2;
    spec.train.filter_size = 3;
    spec.train.peak = 4.0;
    spec
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub size: usize,
    pub single_thread_s: f64,
    pub multi_thread_s: f64,
    pub threads: usize,
}

/// Times the forward pass (image IO excluded) on synthetic noisy scenes:
/// the median of `runs` wall-clock measurements, single-threaded and with
/// the requested worker count.
pub fn cmd_bench(
    model_path: &Path,
    sizes: &[usize],
    runs: usize,
    threads: usize,
) -> Result<Vec<BenchRow>> {
    let params = load_model(model_path)?;
    let basis = FilterBasis::new(params.filter_size).map_err(crate::error::Error::Core)?;
    let model = params.materialize(&basis).map_err(crate::error::Error::Core)?;
    let runs = runs.max(1);

    let mut rows = Vec::new();
    println!(
        "benchmark: {} stages, {}x{} filters, median of {} runs",
        model.stage_count(),
        model.filter_size,
        model.filter_size,
        runs
    );
    for &size in sizes {
        let clean = synth_clean(size, size, 1234, model.training_peak);
        let noisy = sample_poisson(&clean, 5678).map_err(crate::error::Error::Core)?;

        let mut single = Vec::with_capacity(runs);
        for _ in 0..runs {
            let t = Instant::now();
            let out = forward(&noisy, &model).map_err(crate::error::Error::Core)?;
            single.push(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        let mut multi = Vec::with_capacity(runs);
        for _ in 0..runs {
            let t = Instant::now();
            let out = forward_parallel(&noisy, &model, threads)?;
            multi.push(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        let row = BenchRow {
            size,
            single_thread_s: median(&mut single),
            multi_thread_s: median(&mut multi),
            threads,
        };
        println!(
            "{0}x{0}: {1:.3} s single-threaded, {2:.3} s with {3} threads",
            row.size, row.single_thread_s, row.multi_thread_s, row.threads
        );
        rows.push(row);
    }
    Ok(rows)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}
