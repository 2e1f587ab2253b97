//! `synremoval` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 domain error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use synremoval::config::{IouMode, PipelineConfig};
use synremoval::enhance::{enhance_mask, EnhancementKind, EnhancementSpec};
use synremoval::imageio::{read_mask, write_mask};
use synremoval::metrics::evaluate_directory;
use synremoval::model::sample_rng;
use synremoval::pipeline::{
    build_dataset, load_corpus, validate_dataset, BuildOptions, SplitKind, MANIFEST_FILE,
};
use synremoval::toy::{write_toy_corpus, ToyCorpusSpec};

const CONFIG_ENV: &str = "SYNREMOVAL_CONFIG";

#[derive(Parser)]
#[command(name = "synremoval", version, about = "Synthesize object-removal triplets and score removal results")]
struct Cli {
    /// Pipeline config (TOML). Defaults apply when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a training split with per-sample mask deformations.
    Build(BuildArgs),
    /// Build an evaluation split with exact (optionally dilated) masks.
    BuildVal {
        #[command(flatten)]
        build: BuildArgs,
        /// Dilation radius applied to the stored enhanced mask.
        #[arg(long, default_value_t = 0)]
        dilate_px: usize,
    },
    /// Deform a single mask PNG.
    Enhance {
        #[arg(long = "type", value_parser = parse_kind)]
        kind: EnhancementKind,
        /// Fraction parameter of the eroded, dilated and bbox_bezier kinds.
        #[arg(long)]
        frac: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        input: PathBuf,
        output: PathBuf,
    },
    /// PSNR and SSIM of results against ground truths, paired by file stem.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        /// Masks restricting the masked and unmasked metrics.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check every sample of a built dataset.
    Validate {
        /// Dataset directory or its manifest file.
        dataset: PathBuf,
    },
    /// Filter the corpora and print per-class statistics and thresholds.
    Stats(CorpusArgs),
    /// Write the bundled synthetic corpus.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Instance annotation file; overrides `corpus.instances`.
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Background annotation file; overrides `corpus.backgrounds`.
    #[arg(long)]
    backgrounds: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long, value_enum)]
    iou_mode: Option<Mode>,
    /// Trimap band width in pixels.
    #[arg(long)]
    band: Option<usize>,
    /// First sample index, for sharded runs.
    #[arg(long, default_value_t = 0)]
    start_index: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bbox,
    Mask,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

fn parse_kind(s: &str) -> Result<EnhancementKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = EnhancementKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown kind `{s}`; expected one of {}", names.join(", "))
    })
}

enum Failure {
    Io(String),
    Domain(String),
}

impl From<synremoval::Error> for Failure {
    fn from(e: synremoval::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Domain(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn corpus_paths(cfg: &PipelineConfig, args: &CorpusArgs) -> Result<(PathBuf, PathBuf), Failure> {
    let pick = |flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str| {
        flag.clone().or_else(|| configured.clone()).ok_or_else(|| {
            Failure::Domain(format!("no {what} corpus: pass --{what} or set corpus.{what} in the config"))
        })
    };
    Ok((
        pick(&args.instances, &cfg.corpus.instances, "instances")?,
        pick(&args.backgrounds, &cfg.corpus.backgrounds, "backgrounds")?,
    ))
}

fn emit(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Io(format!("stdout: {e}"))),
    }
}

fn cmd_build(mut cfg: PipelineConfig, args: &BuildArgs, split: SplitKind) -> Outcome {
    if let Some(seed) = args.seed {
        cfg.global_seed = seed;
    }
    if let Some(r) = args.iou_threshold {
        cfg.iou_threshold = r;
    }
    if let Some(mode) = args.iou_mode {
        cfg.iou_mode = match mode {
            Mode::Bbox => IouMode::Bbox,
            Mode::Mask => IouMode::Mask,
        };
    }
    if let Some(k) = args.band {
        cfg.trimap_band_px = k;
    }
    cfg.validate()?;
    let (instances, backgrounds) = corpus_paths(&cfg, &args.corpus)?;
    let corpus = load_corpus(&cfg, &instances, &backgrounds)?;
    let opts = BuildOptions {
        count: args.count,
        workers: args.workers,
        start_index: args.start_index,
        split,
    };
    let start = Instant::now();
    let manifest = build_dataset(&cfg, &corpus, &args.out, opts)?;
    let secs = start.elapsed().as_secs_f64();
    println!(
        "emitted {} skipped {} in {secs:.2}s ({:.1}/s); manifest {}",
        manifest.header.emitted,
        manifest.header.skipped.len(),
        manifest.header.emitted as f64 / secs.max(1e-9),
        args.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn cmd_enhance(cfg: PipelineConfig, kind: EnhancementKind, frac: Option<f64>, seed: u64, input: &Path, output: &Path) -> Outcome {
    let mut params = cfg.enhancement;
    if let Some(f) = frac {
        match kind {
            EnhancementKind::Eroded => params.erode_frac = f,
            EnhancementKind::Dilated => params.dilate_frac = f,
            EnhancementKind::BboxBezier => params.bezier_jitter_frac = f,
            other => return Err(Failure::Domain(format!("--frac does not apply to {other}"))),
        }
        params.validate()?;
    }
    let mask = read_mask(input)?;
    let out = enhance_mask(&mask, &EnhancementSpec::new(kind, &params), &mut sample_rng(seed))?;
    write_mask(output, &out)?;
    println!("{kind}: {} -> {} pixels", mask.area(), out.area());
    Ok(())
}

fn cmd_validate(dataset: &Path) -> Outcome {
    let manifest = if dataset.is_dir() {
        dataset.join(MANIFEST_FILE)
    } else {
        dataset.to_path_buf()
    };
    let report = validate_dataset(&manifest)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Domain(format!(
            "validation failed for samples {:?}",
            report.failing_samples()
        )))
    }
}

fn cmd_stats(cfg: PipelineConfig, args: &CorpusArgs) -> Outcome {
    let (instances, backgrounds) = corpus_paths(&cfg, args)?;
    let corpus = load_corpus(&cfg, &instances, &backgrounds)?;
    println!("{}", serde_json::to_string_pretty(&corpus.report).expect("report serializes"));
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Build(args) => cmd_build(load_config(config)?, args, SplitKind::Train),
        Command::BuildVal { build, dilate_px } => {
            cmd_build(load_config(config)?, build, SplitKind::Val { dilate_px: *dilate_px })
        }
        Command::Enhance {
            kind,
            frac,
            seed,
            input,
            output,
        } => cmd_enhance(load_config(config)?, *kind, *frac, *seed, input, output),
        Command::Eval {
            results,
            gts,
            masks,
            format,
            out,
        } => {
            let report = evaluate_directory(results, gts, masks.as_deref())?;
            let text = match format {
                Format::Jsonl => report.to_jsonl(),
                Format::Csv => report.to_csv(),
            };
            emit(&text, out.as_deref())
        }
        Command::Validate { dataset } => cmd_validate(dataset),
        Command::Stats(args) => cmd_stats(load_config(config)?, args),
        Command::ToyCorpus { out, seed } => {
            let spec = ToyCorpusSpec {
                seed: *seed,
                ..ToyCorpusSpec::default()
            };
            let paths = write_toy_corpus(out, &spec)?;
            println!("{}\n{}", paths.instances.display(), paths.backgrounds.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
