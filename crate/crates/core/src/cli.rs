//! Batch front-end: manifest-driven refinement, evaluation and tuning,
//! receptive-field and filter-benchmark reports, and the synthetic
//! benchmark generator. All file outputs are written atomically (temp file
//! + rename) and all numeric report fields use fixed 6-decimal formatting.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::atrous::{bilinear_upsample, receptive_field, LayerSpec, RfPreset};
use crate::densecrf::{inference, InferenceConfig, KernelParams};
use crate::error::{Error, Result};
use crate::eval::{trimap_band, ConfusionMatrix, TrimapRow};
use crate::filtering::{
    gaussian_filter_exact, permutohedral_filter, FeatureMatrix, NormalizeMode, ValueMatrix,
};
use crate::io;
use crate::synth::make_synthetic;
use crate::tensor::{argmax_channels, LabelMap, Tensor3, DEFAULT_PROB_FLOOR};
use crate::tune::{grid_search, SearchSpec, TuneSample};

/// Environment variable mirroring `--jobs`.
pub const JOBS_ENV: &str = "CRF_REFINE_JOBS";

/// One manifest line: score tensor, image, optional ground truth, output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scores: PathBuf,
    pub image: PathBuf,
    pub gt: Option<PathBuf>,
    pub output: PathBuf,
}

/// Tab-separated manifest, one entry per line:
/// `scores<TAB>image<TAB>gt<TAB>output` (the gt field may be empty) or the
/// three-field form without ground truth. Blank lines are skipped.
pub fn load_manifest<P: AsRef<Path>>(path: P) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(&path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let entry = match fields.as_slice() {
            [scores, image, gt, output] => ManifestEntry {
                scores: scores.into(),
                image: image.into(),
                gt: (!gt.is_empty()).then(|| gt.into()),
                output: output.into(),
            },
            [scores, image, output] => ManifestEntry {
                scores: scores.into(),
                image: image.into(),
                gt: None,
                output: output.into(),
            },
            _ => {
                return Err(Error::Manifest(format!(
                    "line {}: expected 3 or 4 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )))
            }
        };
        if entry.scores.as_os_str().is_empty()
            || entry.image.as_os_str().is_empty()
            || entry.output.as_os_str().is_empty()
        {
            return Err(Error::Manifest(format!("line {}: empty path", lineno + 1)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes bytes via a temp file in the target directory plus rename, so a
/// crashed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

fn resolve_jobs(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var(JOBS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&v| v > 0)
    })
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
    .max(1)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_jobs(jobs))
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt6_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), fmt6)
}

/// Options for the `refine` subcommand.
#[derive(Debug, Clone)]
pub struct RefineOpts {
    pub params: KernelParams,
    pub iterations: usize,
    pub upsample: usize,
    pub snapshots: bool,
    pub normalize: NormalizeMode,
    pub jobs: Option<usize>,
}

fn refine_entry(entry: &ManifestEntry, opts: &RefineOpts) -> Result<()> {
    let scores = io::load_tensor(&entry.scores)?;
    let image = io::load_image(&entry.image)?;
    let up = bilinear_upsample(&scores, opts.upsample)?;
    let config = InferenceConfig {
        iterations: opts.iterations,
        normalize_mode: opts.normalize,
        record_trajectory: opts.snapshots,
        ..Default::default()
    };
    let out = inference(&up, &image, &opts.params, &config)?;

    let mut bytes = Vec::new();
    io::write_labelmap_pgm(&mut bytes, &out.labels)?;
    write_atomic(&entry.output, &bytes)?;

    if let Some(trajectory) = out.trajectory {
        // One marginal field and one log-marginal field per iteration,
        // named after the output file.
        for (i, q) in trajectory.iter().enumerate() {
            let stem = entry.output.display().to_string();
            let mut qb = Vec::new();
            io::write_tensor(&mut qb, q.as_tensor())?;
            write_atomic(Path::new(&format!("{stem}.q{:02}.crft", i + 1)), &qb)?;
            let logq = q.log_scores(DEFAULT_PROB_FLOOR)?;
            let mut lb = Vec::new();
            io::write_tensor(&mut lb, &logq)?;
            write_atomic(Path::new(&format!("{stem}.logq{:02}.crft", i + 1)), &lb)?;
        }
    }
    Ok(())
}

/// Refines every manifest entry; failures are reported on stderr and
/// counted, not fatal. Returns the number of failed entries.
pub fn cmd_refine(manifest_path: &Path, opts: &RefineOpts) -> Result<usize> {
    opts.params.validate()?;
    if opts.upsample == 0 {
        return Err(Error::InvalidParam("upsample factor must be >= 1".into()));
    }
    let entries = load_manifest(manifest_path)?;
    let results: Vec<(usize, Result<()>)> = with_pool(opts.jobs, || {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| (i, refine_entry(e, opts)))
            .collect()
    })?;
    let mut failures = 0;
    for (i, r) in results {
        if let Err(e) = r {
            failures += 1;
            eprintln!(
                "refine: entry {} ({}): {}",
                i + 1,
                entries[i].scores.display(),
                e
            );
        }
    }
    Ok(failures)
}

/// Options for the `eval` subcommand.
#[derive(Debug, Clone)]
pub struct EvalOpts {
    pub num_classes: usize,
    pub trimap_radii: Vec<usize>,
    pub out_prefix: String,
    pub jobs: Option<usize>,
}

struct EvalAccum {
    overall: ConfusionMatrix,
    per_radius: Vec<ConfusionMatrix>,
}

fn eval_entry(entry: &ManifestEntry, opts: &EvalOpts) -> Result<EvalAccum> {
    let gt_path = entry
        .gt
        .as_ref()
        .ok_or_else(|| Error::Manifest("eval requires a ground-truth path".into()))?;
    let pred = io::load_labelmap(&entry.output)?;
    let gt = io::load_labelmap(gt_path)?;
    let mut overall = ConfusionMatrix::new(opts.num_classes)?;
    overall.accumulate(&pred, &gt, None)?;
    let mut per_radius = Vec::with_capacity(opts.trimap_radii.len());
    for &radius in &opts.trimap_radii {
        let band = trimap_band(&gt, radius)?;
        let mut cm = ConfusionMatrix::new(opts.num_classes)?;
        cm.accumulate(&pred, &gt, Some(&band))?;
        per_radius.push(cm);
    }
    Ok(EvalAccum {
        overall,
        per_radius,
    })
}

/// Evaluates predictions (manifest `output` column) against ground truth,
/// writing `<prefix>per_class.csv` and, when radii are given,
/// `<prefix>trimap.csv`. Returns the number of failed entries.
pub fn cmd_eval(manifest_path: &Path, opts: &EvalOpts) -> Result<usize> {
    let entries = load_manifest(manifest_path)?;
    let results: Vec<(usize, Result<EvalAccum>)> = with_pool(opts.jobs, || {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| (i, eval_entry(e, opts)))
            .collect()
    })?;

    let mut overall = ConfusionMatrix::new(opts.num_classes)?;
    let mut per_radius: Vec<ConfusionMatrix> = opts
        .trimap_radii
        .iter()
        .map(|_| ConfusionMatrix::new(opts.num_classes))
        .collect::<Result<_>>()?;
    let mut failures = 0;
    for (i, r) in results {
        match r {
            Ok(acc) => {
                overall.merge(&acc.overall)?;
                for (dst, src) in per_radius.iter_mut().zip(&acc.per_radius) {
                    dst.merge(src)?;
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!(
                    "eval: entry {} ({}): {}",
                    i + 1,
                    entries[i].output.display(),
                    e
                );
            }
        }
    }

    let (per_class, mean) = overall.mean_iou();
    let mut csv = String::from("class,iou\n");
    for (c, iou) in per_class.iter().enumerate() {
        let _ = writeln!(csv, "{c},{}", fmt6_opt(*iou));
    }
    let _ = writeln!(csv, "mean,{}", fmt6_opt(mean));
    write_atomic(
        Path::new(&format!("{}per_class.csv", opts.out_prefix)),
        csv.as_bytes(),
    )?;

    if !opts.trimap_radii.is_empty() {
        let mut csv = String::from("radius,mean_iou,pixel_acc\n");
        for (radius, cm) in opts.trimap_radii.iter().zip(&per_radius) {
            let (_, miou) = cm.mean_iou();
            let acc = cm.pixel_accuracy().ok();
            let _ = writeln!(csv, "{radius},{},{}", fmt6_opt(miou), fmt6_opt(acc));
        }
        write_atomic(
            Path::new(&format!("{}trimap.csv", opts.out_prefix)),
            csv.as_bytes(),
        )?;
    }

    println!("mean_iou {}", fmt6_opt(mean));
    println!("pixel_acc {}", fmt6_opt(overall.pixel_accuracy().ok()));
    Ok(failures)
}

/// Options for the `tune` subcommand.
#[derive(Debug, Clone)]
pub struct TuneOpts {
    pub spec: SearchSpec,
    pub iterations: usize,
    pub upsample: usize,
    pub output: PathBuf,
    pub jobs: Option<usize>,
}

pub fn cmd_tune(manifest_path: &Path, opts: &TuneOpts) -> Result<usize> {
    let entries = load_manifest(manifest_path)?;
    let mut dataset = Vec::with_capacity(entries.len());
    for entry in &entries {
        let gt_path = entry
            .gt
            .as_ref()
            .ok_or_else(|| Error::Manifest("tune requires ground-truth paths".into()))?;
        dataset.push(TuneSample {
            scores: io::load_tensor(&entry.scores)?,
            image: io::load_image(&entry.image)?,
            gt: io::load_labelmap(gt_path)?,
        });
    }
    let config = InferenceConfig {
        iterations: opts.iterations,
        ..Default::default()
    };
    let result = with_pool(opts.jobs, || {
        grid_search(&dataset, &opts.spec, &config, opts.upsample)
    })??;
    let mut json = serde_json::to_string_pretty(&result)
        .map_err(|e| Error::InvalidParam(format!("serialize result: {e}")))?;
    json.push('\n');
    write_atomic(&opts.output, json.as_bytes())?;
    println!(
        "best w1={} sigma_alpha={} sigma_beta={} score={}",
        fmt6(result.best.w1 as f64),
        fmt6(result.best.sigma_alpha as f64),
        fmt6(result.best.sigma_beta as f64),
        fmt6(result.score)
    );
    Ok(0)
}

/// Prints `name rf=<n> jump=<m>` for a named preset (or all presets) or a
/// user-supplied layer file with one `kernel,stride,input_stride` triple
/// per line.
pub fn cmd_rf_calc(preset: Option<&str>, layer_file: Option<&Path>) -> Result<usize> {
    let report = |name: &str, layers: &[LayerSpec]| -> Result<()> {
        let (rf, jump) = receptive_field(layers)?;
        println!("{name} rf={rf} jump={jump}");
        Ok(())
    };
    match (preset, layer_file) {
        (Some("all"), None) => {
            for p in RfPreset::ALL {
                report(p.name(), &p.layers())?;
            }
        }
        (Some(name), None) => {
            let p = RfPreset::from_name(name).ok_or_else(|| {
                Error::InvalidParam(format!(
                    "unknown preset {name:?}; known: all, {}",
                    RfPreset::ALL.map(|p| p.name()).join(", ")
                ))
            })?;
            report(p.name(), &p.layers())?;
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let mut layers = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parts: Vec<&str> = line.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::InvalidParam(format!(
                        "layer line {}: expected kernel,stride,input_stride",
                        lineno + 1
                    )));
                }
                let nums: Vec<usize> = parts
                    .iter()
                    .map(|p| {
                        p.parse::<usize>().map_err(|_| {
                            Error::InvalidParam(format!(
                                "layer line {}: bad number {p:?}",
                                lineno + 1
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                layers.push(LayerSpec::new(nums[0], nums[1], nums[2]));
            }
            report(&path.display().to_string(), &layers)?;
        }
        _ => {
            return Err(Error::InvalidParam(
                "rf-calc needs exactly one of --preset or --layers".into(),
            ))
        }
    }
    Ok(0)
}

/// Options for the `filter-bench` subcommand.
#[derive(Debug, Clone)]
pub struct FilterBenchOpts {
    pub n: usize,
    pub dim: usize,
    pub values: usize,
    pub trials: usize,
    pub seed: u64,
}

fn percentiles(mut times: Vec<f64>) -> (f64, f64, f64) {
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| times[((times.len() - 1) as f64 * q).round() as usize];
    (pick(0.5), pick(0.9), *times.last().unwrap())
}

/// Times the exact and lattice filter paths end to end (feature intake to
/// sliced output) and prints wall-time percentiles per path.
pub fn cmd_filter_bench(opts: &FilterBenchOpts) -> Result<usize> {
    if opts.n == 0 || opts.trials == 0 || opts.values == 0 {
        return Err(Error::InvalidParam(
            "n, values and trials must be >= 1".into(),
        ));
    }
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    // Feature box scaled so pairwise distances span roughly [0, 20].
    let side = 20.0 / (opts.dim as f32).sqrt();
    let feats: Vec<f32> = (0..opts.n * opts.dim)
        .map(|_| rng.gen_range(0.0..side))
        .collect();
    let vals: Vec<f32> = (0..opts.n * opts.values)
        .map(|_| rng.gen::<f32>())
        .collect();
    let features = FeatureMatrix::from_vec(opts.n, opts.dim, feats)?;
    let values = ValueMatrix::from_vec(opts.n, opts.values, vals)?;

    let mut lattice_times = Vec::with_capacity(opts.trials);
    for _ in 0..opts.trials {
        let start = Instant::now();
        let out = permutohedral_filter(&values, &features, NormalizeMode::Symmetric)?;
        std::hint::black_box(out.as_slice()[0]);
        lattice_times.push(start.elapsed().as_secs_f64());
    }
    let (p50, p90, max) = percentiles(lattice_times);
    println!(
        "permutohedral,p50={},p90={},max={}",
        fmt6(p50),
        fmt6(p90),
        fmt6(max)
    );

    let mut exact_times = Vec::with_capacity(opts.trials);
    for _ in 0..opts.trials {
        let start = Instant::now();
        let out = gaussian_filter_exact(&values, &features)?;
        std::hint::black_box(out.as_slice()[0]);
        exact_times.push(start.elapsed().as_secs_f64());
    }
    let (p50, p90, max) = percentiles(exact_times);
    println!(
        "exact,p50={},p90={},max={}",
        fmt6(p50),
        fmt6(p90),
        fmt6(max)
    );
    Ok(0)
}

/// Options for the `make-synthetic` subcommand.
#[derive(Debug, Clone)]
pub struct MakeSyntheticOpts {
    pub seed: u64,
    pub size: usize,
    pub classes: usize,
    pub noise: f64,
    pub count: usize,
    pub holdout: usize,
    pub out_dir: PathBuf,
}

/// Generates the benchmark set plus an optional held-out tuning set and
/// writes `manifest.tsv` (and `holdout.tsv`). File contents depend only on
/// the options, so reruns are bit-identical.
pub fn cmd_make_synthetic(opts: &MakeSyntheticOpts) -> Result<usize> {
    std::fs::create_dir_all(&opts.out_dir)?;
    let total = opts.count + opts.holdout;
    let samples = make_synthetic(opts.seed, opts.size, opts.classes, opts.noise, total)?;
    let mut manifest = String::new();
    let mut holdout = String::new();
    for (i, sample) in samples.iter().enumerate() {
        let scores = opts.out_dir.join(format!("scores_{i:03}.crft"));
        let image = opts.out_dir.join(format!("image_{i:03}.ppm"));
        let gt = opts.out_dir.join(format!("gt_{i:03}.pgm"));
        let pred = opts.out_dir.join(format!("pred_{i:03}.pgm"));

        let mut buf = Vec::new();
        io::write_tensor(&mut buf, &sample.scores)?;
        write_atomic(&scores, &buf)?;
        buf.clear();
        io::write_image_ppm(&mut buf, &sample.image)?;
        write_atomic(&image, &buf)?;
        buf.clear();
        io::write_labelmap_pgm(&mut buf, &sample.gt)?;
        write_atomic(&gt, &buf)?;

        let line = format!(
            "{}\t{}\t{}\t{}\n",
            scores.display(),
            image.display(),
            gt.display(),
            pred.display()
        );
        if i < opts.count {
            manifest.push_str(&line);
        } else {
            holdout.push_str(&line);
        }
    }
    write_atomic(&opts.out_dir.join("manifest.tsv"), manifest.as_bytes())?;
    if opts.holdout > 0 {
        write_atomic(&opts.out_dir.join("holdout.tsv"), holdout.as_bytes())?;
    }
    Ok(0)
}

/// Unrefined baseline of one entry: argmax of the upsampled scores.
pub fn unrefined_labels(scores: &Tensor3, upsample: usize) -> Result<LabelMap> {
    Ok(argmax_channels(&bilinear_upsample(scores, upsample)?))
}

/// Band-restricted mean IOU over (pred, gt) pairs, used by the trimap
/// reports and the acceptance checks.
pub fn banded_mean_iou(
    pairs: &[(LabelMap, LabelMap)],
    num_classes: usize,
    radius: usize,
) -> Result<Option<f64>> {
    let mut cm = ConfusionMatrix::new(num_classes)?;
    for (pred, gt) in pairs {
        let band = trimap_band(gt, radius)?;
        cm.accumulate(pred, gt, Some(&band))?;
    }
    Ok(cm.mean_iou().1)
}

/// Formats a trimap curve as the CSV the `eval` subcommand emits.
pub fn trimap_rows_to_csv(rows: &[TrimapRow]) -> String {
    let mut csv = String::from("radius,mean_iou,pixel_acc\n");
    for row in rows {
        let _ = writeln!(
            csv,
            "{},{},{}",
            row.radius,
            fmt6_opt(row.mean_iou),
            fmt6_opt(row.pixel_accuracy)
        );
    }
    csv
}
