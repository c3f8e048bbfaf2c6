use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crf_refine::cli::{
    cmd_eval, cmd_filter_bench, cmd_make_synthetic, cmd_refine, cmd_rf_calc, cmd_tune, EvalOpts,
    FilterBenchOpts, MakeSyntheticOpts, RefineOpts, TuneOpts,
};
use crf_refine::densecrf::KernelParams;
use crf_refine::filtering::NormalizeMode;
use crf_refine::tune::{AxisRange, SearchSpec};

/// Sharpen coarse per-pixel class score maps with a fully-connected CRF.
#[derive(Parser)]
#[command(name = "crf-refine", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ParamArgs {
    /// Appearance (position + color) kernel weight.
    #[arg(long)]
    w1: f32,
    /// Smoothness (position-only) kernel weight.
    #[arg(long, default_value_t = 3.0)]
    w2: f32,
    /// Position scale of the appearance kernel, in pixels.
    #[arg(long)]
    sigma_alpha: f32,
    /// Color scale of the appearance kernel, in intensity units.
    #[arg(long)]
    sigma_beta: f32,
    /// Position scale of the smoothness kernel, in pixels.
    #[arg(long, default_value_t = 3.0)]
    sigma_gamma: f32,
}

impl ParamArgs {
    fn params(&self) -> KernelParams {
        KernelParams::new(
            self.w1,
            self.w2,
            self.sigma_alpha,
            self.sigma_beta,
            self.sigma_gamma,
        )
    }
}

fn parse_range(s: &str) -> Result<AxisRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err("expected start:step:stop".into());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    Ok(AxisRange::new(nums[0], nums[1], nums[2]))
}

#[derive(Subcommand)]
enum Command {
    /// Upsample score tensors, run CRF inference and write label maps.
    Refine {
        /// Manifest file: scores<TAB>image<TAB>[gt]<TAB>output per line.
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        /// Mean-field iterations.
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        /// Bilinear upsampling factor applied to scores before inference.
        #[arg(long, default_value_t = 8)]
        upsample: usize,
        /// Also write per-iteration marginals (and log-marginals) as tensors.
        #[arg(long)]
        snapshots: bool,
        /// Use raw (unnormalized) filter responses in the messages.
        #[arg(long)]
        raw_filter: bool,
        /// Parallel manifest entries (default: logical cores, or CRF_REFINE_JOBS).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Score predictions against ground truth; per-class and trimap CSVs.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Number of classes.
        #[arg(long)]
        classes: usize,
        /// Comma-separated trimap band radii, e.g. 1,2,4,8.
        #[arg(long, value_delimiter = ',')]
        trimap_radii: Vec<usize>,
        /// Prefix for the emitted CSV files.
        #[arg(long, default_value = "eval_")]
        out_prefix: String,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Coarse-to-fine cross-validation of the kernel parameters.
    Tune {
        #[arg(long)]
        manifest: PathBuf,
        /// w1 sweep as start:step:stop.
        #[arg(long, value_parser = parse_range, default_value = "5:1:10")]
        w1_range: AxisRange,
        /// sigma_alpha sweep as start:step:stop.
        #[arg(long, value_parser = parse_range, default_value = "50:10:100")]
        sigma_alpha_range: AxisRange,
        /// sigma_beta sweep as start:step:stop.
        #[arg(long, value_parser = parse_range, default_value = "3:1:10")]
        sigma_beta_range: AxisRange,
        /// Fixed smoothness weight.
        #[arg(long, default_value_t = 3.0)]
        w2: f64,
        /// Fixed smoothness position scale.
        #[arg(long, default_value_t = 3.0)]
        sigma_gamma: f64,
        /// Total search rounds (1 = coarse grid only).
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        /// Use only the first N manifest entries.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        #[arg(long, default_value_t = 8)]
        upsample: usize,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Receptive-field arithmetic for a preset or a layer file.
    RfCalc {
        /// Preset name, or "all".
        #[arg(long)]
        preset: Option<String>,
        /// File with one kernel,stride,input_stride triple per line.
        #[arg(long)]
        layers: Option<PathBuf>,
    },
    /// Wall-time percentiles for the exact vs. lattice filter paths.
    FilterBench {
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        values: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a deterministic synthetic benchmark plus manifest.
    MakeSynthetic {
        #[arg(long)]
        seed: u64,
        /// Square image side; a multiple of 8.
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Probability that a score cell's argmax is flipped.
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        /// Benchmark images listed in manifest.tsv.
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Extra held-out images listed in holdout.tsv.
        #[arg(long, default_value_t = 0)]
        holdout: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run() -> crf_refine::Result<usize> {
    let cli = Cli::parse();
    match cli.command {
        Command::Refine {
            manifest,
            params,
            iterations,
            upsample,
            snapshots,
            raw_filter,
            jobs,
        } => cmd_refine(
            &manifest,
            &RefineOpts {
                params: params.params(),
                iterations,
                upsample,
                snapshots,
                normalize: if raw_filter {
                    NormalizeMode::None
                } else {
                    NormalizeMode::Symmetric
                },
                jobs,
            },
        ),
        Command::Eval {
            manifest,
            classes,
            trimap_radii,
            out_prefix,
            jobs,
        } => cmd_eval(
            &manifest,
            &EvalOpts {
                num_classes: classes,
                trimap_radii,
                out_prefix,
                jobs,
            },
        ),
        Command::Tune {
            manifest,
            w1_range,
            sigma_alpha_range,
            sigma_beta_range,
            w2,
            sigma_gamma,
            rounds,
            subset,
            iterations,
            upsample,
            out,
            jobs,
        } => cmd_tune(
            &manifest,
            &TuneOpts {
                spec: SearchSpec {
                    w1: w1_range,
                    sigma_alpha: sigma_alpha_range,
                    sigma_beta: sigma_beta_range,
                    w2,
                    sigma_gamma,
                    refine_rounds: rounds,
                    subset_size: subset.unwrap_or(usize::MAX),
                },
                iterations,
                upsample,
                output: out,
                jobs,
            },
        ),
        Command::RfCalc { preset, layers } => cmd_rf_calc(preset.as_deref(), layers.as_deref()),
        Command::FilterBench {
            n,
            dim,
            values,
            trials,
            seed,
        } => cmd_filter_bench(&FilterBenchOpts {
            n,
            dim,
            values,
            trials,
            seed,
        }),
        Command::MakeSynthetic {
            seed,
            size,
            classes,
            noise,
            count,
            holdout,
            out_dir,
        } => cmd_make_synthetic(&MakeSyntheticOpts {
            seed,
            size,
            classes,
            noise,
            count,
            holdout,
            out_dir,
        }),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{failures} entries failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
