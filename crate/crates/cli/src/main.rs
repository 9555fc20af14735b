//! `hyperattn`: generate synthetic attention inputs, verify the spectral
//! error bound against the dense oracle, benchmark scaling, and sweep the
//! column-uniformity statistic.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hyperattn::io::{alpha_csv, bench_csv, write_matrix, Dtype};
use hyperattn::timing::{log_log_slope, time_median, BenchRecord};
use hyperattn::*;

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

/// Dense-oracle guard: `verify` refuses larger `n` unless forced.
const VERIFY_N_GUARD: usize = 8192;

#[derive(Parser)]
#[command(name = "hyperattn", version, about)]
struct Cli {
    /// Worker threads (default: all cores; env HATN_THREADS as fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline on synthetic inputs and verify the spectral bound.
    Verify(VerifyArgs),
    /// Measure wall-clock scaling of the sampled and exact paths.
    Bench(BenchArgs),
    /// Sweep the column-uniformity statistic over sequence lengths.
    Alpha(AlphaArgs),
    /// Write synthetic Q/K/V matrices to disk.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MaskSource {
    Sortlsh,
    Sketch,
    File,
    None,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Practical,
    Theoretical,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GeneratorArg {
    Gaussian,
    Planted,
    Orthogonal,
}

impl GeneratorArg {
    fn to_generator(self, target: f64) -> Generator {
        match self {
            GeneratorArg::Gaussian => Generator::Gaussian,
            GeneratorArg::Planted => Generator::Planted { target },
            GeneratorArg::Orthogonal => Generator::NearOrthogonal,
        }
    }
}

fn parse_shift(s: &str) -> std::result::Result<ShiftPolicy, String> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(ShiftPolicy::Auto)
    } else {
        s.parse::<f64>()
            .map(ShiftPolicy::Fixed)
            .map_err(|_| format!("expected 'auto' or a number, got '{s}'"))
    }
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// Sequence length.
    #[arg(long)]
    n: usize,
    /// Head dimension.
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mask block size.
    #[arg(long, default_value_t = 256)]
    b: usize,
    /// Sampled columns / value rows.
    #[arg(long, default_value_t = 256)]
    m: usize,
    /// Spectral accuracy target.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = MaskSource::Sortlsh)]
    mask: MaskSource,
    /// Explicit mask file (JSON {"n": .., "entries": [[i,j], ..]}).
    #[arg(long)]
    mask_file: Option<PathBuf>,
    /// Heaviness threshold for the sketch mask.
    #[arg(long, default_value_t = 8.0)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = Mode::Practical)]
    mode: Mode,
    /// Condition number for theoretical mode.
    #[arg(long, default_value_t = 4.0)]
    kappa: f64,
    /// Estimator epsilon for theoretical mode.
    #[arg(long, default_value_t = 1.0)]
    estimator_epsilon: f64,
    /// Column-uniformity parameter for theoretical mode.
    #[arg(long, default_value_t = 8.0)]
    alpha: f64,
    /// Cap constant for theoretical mode.
    #[arg(long, default_value_t = 1.0)]
    cap_multiplier: f64,
    /// Verify the causal pipeline instead of the unmasked one.
    #[arg(long)]
    causal: bool,
    /// Causal recursion switches to the exact kernel at this size.
    #[arg(long, default_value_t = 4096)]
    causal_threshold: usize,
    /// Skip the 1/sqrt(d) query pre-scaling.
    #[arg(long)]
    no_scale: bool,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Gaussian)]
    generator: GeneratorArg,
    /// Boosted score for the planted generator.
    #[arg(long, default_value_t = 6.0)]
    planted_target: f64,
    /// Hash bits (default: ceil(log2 n)).
    #[arg(long)]
    lsh_bits: Option<u32>,
    /// Global exponent shift: 'auto' or a number.
    #[arg(long, value_parser = parse_shift, default_value = "auto")]
    #[serde(skip)]
    shift: ShiftPolicy,
    /// Number of independent runs.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Inject the identity sample cover (requires m = n; makes the run exact).
    #[arg(long)]
    complete_cover: bool,
    /// Pass-rate needed for exit code 0.
    #[arg(long, default_value_t = 0.9)]
    min_pass_rate: f64,
    /// Override the dense-oracle size guard.
    #[arg(long)]
    force: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    /// Sequence lengths for the sampled path.
    #[arg(long, value_delimiter = ',', default_values_t = [8192usize, 16384, 32768, 65536])]
    grid: Vec<usize>,
    /// Sequence lengths for the exact path (also timed on the sampled path
    /// for speedup ratios).
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096])]
    exact_grid: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 256)]
    b: usize,
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timed repetitions per point (median reported).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Benchmark the causal pipeline.
    #[arg(long)]
    causal: bool,
    /// Causal recursion base-case size.
    #[arg(long, default_value_t = 4096)]
    causal_threshold: usize,
    /// Skip the exact path entirely.
    #[arg(long)]
    no_exact: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AlphaArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [512usize, 1024, 2048, 4096])]
    grid: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Gaussian)]
    generator: GeneratorArg,
    #[arg(long, default_value_t = 6.0)]
    planted_target: f64,
    /// Exclude this many leading columns from the maximum.
    #[arg(long, default_value_t = 0)]
    skip_cols: usize,
    #[arg(long)]
    no_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Gaussian)]
    generator: GeneratorArg,
    #[arg(long, default_value_t = 6.0)]
    planted_target: f64,
    /// Apply the 1/sqrt(d) query pre-scaling before writing.
    #[arg(long)]
    scale: bool,
    /// Output prefix: writes <prefix>.q.hatn, .k.hatn, .v.hatn.
    #[arg(long)]
    out: PathBuf,
    /// Storage precision.
    #[arg(long, default_value = "f64")]
    dtype: String,
}

#[derive(Deserialize)]
struct MaskFile {
    n: usize,
    entries: Vec<(usize, usize)>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("HATN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
        {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    let result = match cli.command {
        Command::Verify(args) => run_verify(args),
        Command::Bench(args) => run_bench(args),
        Command::Alpha(args) => run_alpha(args),
        Command::Gen(args) => run_gen(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn make_inputs(
    gen: GeneratorArg,
    target: f64,
    n: usize,
    d: usize,
    seed: u64,
    no_scale: bool,
) -> AttentionInputs {
    let inputs = generate_inputs(gen.to_generator(target), n, d, seed);
    if no_scale {
        inputs
    } else {
        inputs.with_scaled_q(1.0 / (d as f64).sqrt())
    }
}

fn run_verify(args: VerifyArgs) -> CliResult<ExitCode> {
    if args.n > VERIFY_N_GUARD && !args.force {
        eprintln!(
            "verify needs the dense oracle; n = {} exceeds the guard of {VERIFY_N_GUARD} (pass --force to override)",
            args.n
        );
        return Ok(ExitCode::from(2));
    }
    if args.complete_cover && args.m != args.n {
        eprintln!(
            "--complete-cover requires --m equal to --n (got m = {}, n = {})",
            args.m, args.n
        );
        return Ok(ExitCode::from(2));
    }
    let estimator = match args.mode {
        Mode::Practical => DEstimator::Practical,
        Mode::Theoretical => DEstimator::Theoretical {
            kappa: args.kappa,
            epsilon: args.estimator_epsilon,
            alpha: args.alpha,
            cap_multiplier: args.cap_multiplier,
        },
    };
    let mut reports = Vec::new();
    for rep in 0..args.repeat {
        let seed = mix_seed(args.seed, rep as u64);
        let inputs = make_inputs(
            args.generator,
            args.planted_target,
            args.n,
            args.d,
            seed,
            args.no_scale,
        );
        let params = HyperParams {
            block_size: args.b,
            sample_count: args.m.min(args.n),
            lsh_bits: args.lsh_bits,
            estimator,
            epsilon: args.epsilon,
            causal_base_threshold: args.causal_threshold,
            shift: args.shift,
            seed,
        };
        let report = if args.causal {
            verify_spectral_causal(&inputs, &params, args.epsilon)?
        } else {
            let mask = build_mask(&args, &inputs, seed)?;
            if args.complete_cover {
                let cover: Vec<usize> = (0..args.n).collect();
                verify_spectral_with_cover(&inputs, mask, &params, args.epsilon, Some(&cover))?
            } else {
                verify_spectral(&inputs, mask, &params, args.epsilon)?
            }
        };
        reports.push(report);
    }
    let pass_rate =
        reports.iter().filter(|r| r.passed).count() as f64 / reports.len().max(1) as f64;
    let payload = serde_json::json!({
        "config": &args,
        "pass_rate": pass_rate,
        "reports": reports,
    });
    emit(&args.out, &serde_json::to_string_pretty(&payload)?)?;
    Ok(if pass_rate >= args.min_pass_rate {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn build_mask(args: &VerifyArgs, inputs: &AttentionInputs, seed: u64) -> CliResult<MaskSpec> {
    let n = inputs.n();
    Ok(match args.mask {
        MaskSource::Sortlsh => {
            let bits = args
                .lsh_bits
                .unwrap_or_else(|| (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1))
                .clamp(1, 30);
            sort_lsh_mask(
                &inputs.q,
                &inputs.k,
                args.b,
                &LshParams::new(bits, mix_seed(seed, 0x10a5))?,
            )?
        }
        MaskSource::Sketch => {
            let params = SketchParams::new(args.tau, mix_seed(seed, 0x5ce7))?;
            sketch_heavy_mask(&inputs.q, &inputs.k, &params)?
        }
        MaskSource::None => MaskSpec::empty(n),
        MaskSource::File => {
            let path = args
                .mask_file
                .as_ref()
                .ok_or("--mask file requires --mask-file")?;
            let parsed: MaskFile = serde_json::from_str(&fs::read_to_string(path)?)?;
            if parsed.n != n {
                return Err(format!("mask file is for n = {}, run has n = {n}", parsed.n).into());
            }
            let mut entries = parsed.entries;
            entries.sort_unstable();
            entries.dedup();
            MaskSpec::explicit(entries, n)?
        }
    })
}

fn run_bench(args: BenchArgs) -> CliResult<ExitCode> {
    let mut records: Vec<BenchRecord> = Vec::new();
    let hyper_label = if args.causal { "hyper-causal" } else { "hyper" };
    let exact_label = if args.causal { "exact-causal" } else { "exact" };

    let time_hyper = |n: usize| -> Result<f64> {
        let inputs = make_inputs(
            GeneratorArg::Gaussian,
            0.0,
            n,
            args.d,
            mix_seed(args.seed, n as u64),
            false,
        );
        let params = HyperParams {
            block_size: args.b,
            sample_count: args.m.min(n),
            lsh_bits: None,
            estimator: DEstimator::Practical,
            epsilon: 0.5,
            causal_base_threshold: args.causal_threshold,
            shift: ShiftPolicy::Auto,
            seed: args.seed,
        };
        let bits = (usize::BITS - n.saturating_sub(1).leading_zeros()).clamp(1, 30);
        let lsh = LshParams::new(bits, mix_seed(args.seed, 0xb17))?;
        let mut failure = None;
        let t = time_median(
            || {
                let out = if args.causal {
                    causal_hyper_attention(&inputs, &params)
                } else {
                    sort_lsh_mask(&inputs.q, &inputs.k, args.b, &lsh)
                        .and_then(|mask| hyper_attention(&inputs, mask, &params))
                };
                match out {
                    Ok(o) => {
                        std::hint::black_box(&o.attention);
                    }
                    Err(e) => failure = Some(e),
                }
            },
            args.repeats,
            args.warmup,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(t),
        }
    };
    let time_exact = |n: usize| -> f64 {
        let inputs = make_inputs(
            GeneratorArg::Gaussian,
            0.0,
            n,
            args.d,
            mix_seed(args.seed, n as u64),
            false,
        );
        time_median(
            || {
                let out = exact_attention(&inputs, args.causal);
                std::hint::black_box(&out);
            },
            args.repeats,
            args.warmup,
        )
    };

    let mut hyper_points = Vec::new();
    for &n in &args.grid {
        let t = time_hyper(n)?;
        hyper_points.push((n as f64, t));
        records.push(BenchRecord {
            n,
            variant: hyper_label.into(),
            median_seconds: t,
            repeats: args.repeats,
        });
    }
    if hyper_points.len() >= 2 {
        eprintln!(
            "{hyper_label} log-log slope: {:.3}",
            log_log_slope(&hyper_points)
        );
    }

    if !args.no_exact {
        let mut exact_points = Vec::new();
        let mut speedups = Vec::new();
        for &n in &args.exact_grid {
            let te = time_exact(n);
            exact_points.push((n as f64, te));
            records.push(BenchRecord {
                n,
                variant: exact_label.into(),
                median_seconds: te,
                repeats: args.repeats,
            });
            let th = time_hyper(n)?;
            records.push(BenchRecord {
                n,
                variant: hyper_label.into(),
                median_seconds: th,
                repeats: args.repeats,
            });
            speedups.push((n, te / th));
        }
        if exact_points.len() >= 2 {
            eprintln!(
                "{exact_label} log-log slope: {:.3}",
                log_log_slope(&exact_points)
            );
        }
        for (n, s) in &speedups {
            eprintln!("speedup at n = {n}: {s:.2}x");
        }
    }

    emit(&args.out, &bench_csv(&records))?;
    Ok(ExitCode::SUCCESS)
}

fn run_alpha(args: AlphaArgs) -> CliResult<ExitCode> {
    let points = alpha_sweep(
        &args.grid,
        args.d,
        args.generator.to_generator(args.planted_target),
        !args.no_scale,
        args.skip_cols,
        args.seed,
    )?;
    emit(&args.out, &alpha_csv(&points))?;
    Ok(ExitCode::SUCCESS)
}

fn run_gen(args: GenArgs) -> CliResult<ExitCode> {
    let dtype = match args.dtype.as_str() {
        "f32" => Dtype::F32,
        "f64" => Dtype::F64,
        other => return Err(format!("unknown dtype '{other}' (use f32 or f64)").into()),
    };
    let inputs = make_inputs(
        args.generator,
        args.planted_target,
        args.n,
        args.d,
        args.seed,
        !args.scale,
    );
    let base = args.out.as_os_str().to_string_lossy().to_string();
    for (tag, m) in [("q", &inputs.q), ("k", &inputs.k), ("v", &inputs.v)] {
        let path = PathBuf::from(format!("{base}.{tag}.hatn"));
        write_matrix(&path, m, dtype)?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn emit(out: &Option<PathBuf>, content: &str) -> std::io::Result<()> {
    match out {
        Some(path) => fs::write(path, content),
        None => {
            print!("{content}");
            if !content.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}
