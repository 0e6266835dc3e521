//! Single executable over the model library.
//!
//! Verbs: `describe` (expanded config, per-stage geometry, analytic costs),
//! `verify` (property suite), `bench` (wall-clock comparison with per-op
//! breakdown), `infer` (raw tensor blob in, logits blob out).
//!
//! Exit codes: 0 ok, 1 property failure, 2 usage/config error, 3 i/o or
//! format error.

mod blob;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swinfree::attention::{Activation, NormKind, WindowMode};
use swinfree::model::{build_model, model_forward, ModelConfig};
use swinfree::numerics::Rng;
use swinfree::profiler::{
    bench_forward, count_flops, count_shift_traffic, emit_report, param_count, ProfileReport,
    ReportFormat,
};
use swinfree::verify::{run_property_suite, Scope};
use swinfree::{Error, Result};

use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "swinfree",
    version,
    about = "Windowed-attention model family: describe, verify, bench, infer"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Source of a model configuration: a named preset or a JSON file.
#[derive(Args, Clone)]
struct ConfigSource {
    /// Preset name, e.g. swin-B, swin-free-T, swin-free-B-BR-DR14
    #[arg(long)]
    preset: Option<String>,
    /// Path to a JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigSource {
    fn resolve(&self) -> Result<(ModelConfig, u64)> {
        let file = match (&self.preset, &self.config) {
            (Some(name), None) => ConfigFile::from_preset(name)?,
            (None, Some(path)) => ConfigFile::load(path)?,
            _ => {
                return Err(Error::config(
                    "exactly one of --preset or --config is required",
                ))
            }
        };
        let cfg = file.to_model_config()?;
        Ok((cfg, file.seed()))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the expanded config, per-stage P/M/N trace, and analytic costs
    Describe {
        #[command(flatten)]
        source: ConfigSource,
    },
    /// Run the verification property suite
    Verify {
        /// quick caps grids at 28x28; full adds the 56x56 and stage-trace checks
        #[arg(long, default_value = "quick")]
        scope: String,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// text or json
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Benchmark one or more configs (two configs emit a comparison row)
    Bench {
        /// Preset name; repeatable
        #[arg(long)]
        preset: Vec<String>,
        /// JSON config path; repeatable
        #[arg(long)]
        config: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// json, csv, or table
        #[arg(long, default_value = "table")]
        format: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Math threads; 1 keeps timing stable, more measures scaling
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Input batch size
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Run a forward pass over a raw tensor blob and write the logits blob
    Infer {
        #[command(flatten)]
        source: ConfigSource,
        /// Weight archive path (manifest at <path>.json); omit for seeded init
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Input blob path (f32, BCHW, sidecar at <path>.json)
        #[arg(long)]
        input: PathBuf,
        /// Output logits blob path
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Overrides the config seed for random-init weights
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Describe { source } => cmd_describe(&source),
        Cmd::Verify {
            scope,
            seed,
            format,
        } => return cmd_verify(&scope, seed, &format),
        Cmd::Bench {
            preset,
            config,
            runs,
            warmup,
            format,
            seed,
            threads,
            batch,
        } => cmd_bench(
            &preset, &config, runs, warmup, &format, seed, threads, batch,
        ),
        Cmd::Infer {
            source,
            weights,
            input,
            output,
            topk,
            seed,
        } => cmd_infer(&source, weights.as_deref(), &input, &output, topk, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension { .. } => 2,
        Error::Io(_) | Error::Format(_) => 3,
    }
}

fn cmd_describe(source: &ConfigSource) -> Result<()> {
    let (cfg, seed) = source.resolve()?;
    let on_off = |flags: &[bool]| -> String {
        flags
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(",")
    };
    println!("model: {}", cfg.name);
    println!(
        "mode: {}  norm: {}  act: {}",
        match cfg.mode {
            WindowMode::Shifted => "swin",
            WindowMode::SizeVarying => "swin-free",
        },
        match cfg.norm {
            NormKind::Layer => "layer",
            NormKind::Batch => "batch",
        },
        match cfg.act {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    );
    println!(
        "img_size: {}  patch_size: {}  embed_dim: {}  num_classes: {}  seed: {}",
        cfg.img_size, cfg.patch_size, cfg.embed_dim, cfg.num_classes, seed
    );
    println!("depths: {:?}  heads: {:?}", cfg.depths, cfg.heads);
    println!(
        "window_sizes: {:?}  shift: [{}]",
        cfg.window_sizes,
        on_off(&cfg.stage_shift)
    );
    for (s, t) in cfg.stage_trace().iter().enumerate() {
        println!(
            "stage {}: P={}x{} M={} N={}",
            s + 1,
            t.patch_side,
            t.patch_side,
            t.window,
            t.num_windows
        );
    }
    println!("params: {}", param_count(&cfg));
    println!("flops: {}", count_flops(&cfg));
    println!("shift_elements: {}", count_shift_traffic(&cfg));
    Ok(())
}

fn cmd_verify(scope: &str, seed: u64, format: &str) -> ExitCode {
    let scope = match Scope::parse(scope) {
        Some(s) => s,
        None => {
            eprintln!("error: unknown scope {scope:?}: expected quick or full");
            return ExitCode::from(2);
        }
    };
    if format != "text" && format != "json" {
        eprintln!("error: unknown verify format {format:?}: expected text or json");
        return ExitCode::from(2);
    }
    let report = run_property_suite(scope, seed);
    if format == "json" {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    presets: &[String],
    configs: &[PathBuf],
    runs: usize,
    warmup: usize,
    format: &str,
    seed: u64,
    threads: usize,
    batch: usize,
) -> Result<()> {
    let format = ReportFormat::parse(format)
        .ok_or_else(|| Error::config(format!("unknown format {format:?}")))?;
    if presets.is_empty() && configs.is_empty() {
        return Err(Error::config(
            "bench needs at least one --preset or --config",
        ));
    }
    if threads == 0 || batch == 0 {
        return Err(Error::config("--threads and --batch must be positive"));
    }

    let mut resolved: Vec<(ModelConfig, u64)> = Vec::new();
    for name in presets {
        let file = ConfigFile::from_preset(name)?;
        resolved.push((file.to_model_config()?, file.seed()));
    }
    for path in configs {
        let file = ConfigFile::load(path)?;
        resolved.push((file.to_model_config()?, file.seed()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let reports = pool.install(|| -> Result<Vec<ProfileReport>> {
        let mut reports = Vec::new();
        for (cfg, cfg_seed) in &resolved {
            let model_seed = cfg_seed ^ seed;
            eprintln!(
                "benchmarking {} (seed {model_seed}, {runs} runs)...",
                cfg.name
            );
            let params = build_model::<f32>(cfg, model_seed)?;
            let mut rng = Rng::new(seed.wrapping_add(1));
            let input = rng.uniform_tensor::<f32>(&[batch, 3, cfg.img_size, cfg.img_size]);
            reports.push(bench_forward(&params, &input, runs, warmup)?);
        }
        Ok(reports)
    })?;

    let bytes = emit_report(&reports, format)?;
    let mut out = std::io::stdout();
    std::io::Write::write_all(&mut out, &bytes)?;
    Ok(())
}

fn cmd_infer(
    source: &ConfigSource,
    weights: Option<&std::path::Path>,
    input: &std::path::Path,
    output: &std::path::Path,
    topk: usize,
    seed: Option<u64>,
) -> Result<()> {
    let (cfg, cfg_seed) = source.resolve()?;
    let params = match weights {
        Some(path) => swinfree::model::archive::load(&cfg, path)?,
        None => build_model::<f32>(&cfg, seed.unwrap_or(cfg_seed))?,
    };
    let (img, sidecar) = blob::load(input)?;
    if sidecar.layout != "BCHW" {
        return Err(Error::config(format!(
            "input blob layout {:?}, expected BCHW",
            sidecar.layout
        )));
    }
    let logits = model_forward(&params, &img)?;
    blob::save(output, &logits, "NC")?;

    let classes = cfg.num_classes;
    for (row, chunk) in logits.data().chunks(classes).enumerate() {
        let mut ranked: Vec<(usize, f32)> = chunk.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let shown: Vec<String> = ranked
            .iter()
            .take(topk.min(classes))
            .map(|(idx, score)| format!("{idx}:{score:.6}"))
            .collect();
        println!("row {row} top-{}: {}", topk.min(classes), shown.join(" "));
    }
    Ok(())
}
