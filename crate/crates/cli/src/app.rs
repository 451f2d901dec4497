use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use refmix_core::dit::LoraMode;
use refmix_pipeline::bench::ReportFormat;
use refmix_pipeline::{RunControl, Stage};

use crate::checks::Fault;
use crate::commands::{attn, bench, encode, model, pipeline};
use crate::config::CliConfig;
use crate::error::{Result, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "refmix", version, about = "Multi-reference generation toolkit: checks, data pipeline, benchmark")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set pipeline.seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the attention property suite.
    AttnCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the layer under test (exercises the failure path).
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Print token coordinates for an image layout as CSV.
    EncodeInspect {
        /// Target first, then references: `4x4,2x2,2x2`.
        #[arg(long)]
        grids: String,
        /// Encoding scheme 1-4; defaults to `model.scheme`.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        scheme: Option<u8>,
        #[arg(long, default_value_t = 0)]
        /// Text tokens prepended before the images.
        text_tokens: usize,
    },
    /// Synthetic training-data stages.
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
    /// Benchmark: generate outputs, judge them, report success ratios.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Train edit and gen adapters on the fixed desk-scale batch.
    TrainToy {
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
    },
    /// Sample one image from the toy model.
    Sample {
        /// Text prompt; hashed into the text tokens.
        #[arg(long)]
        prompt: String,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
        /// Reference image (PNG); repeat for several.
        #[arg(long = "reference")]
        references: Vec<PathBuf>,
        /// Adapter to load; only applied when references are given.
        #[arg(long, value_enum)]
        lora: Option<LoraArg>,
        /// Defaults to `sampler.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Edit,
    Gen,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LoraArg {
    Edit,
    Gen,
}

impl From<LoraArg> for LoraMode {
    fn from(a: LoraArg) -> Self {
        match a {
            LoraArg::Edit => LoraMode::Edit,
            LoraArg::Gen => LoraMode::Gen,
        }
    }
}

#[derive(Debug, clap::Args)]
struct JobFlags {
    /// Continue an interrupted job instead of starting fresh.
    #[arg(long)]
    resume: bool,
    /// Stop after this many new items (the job stays resumable).
    #[arg(long)]
    limit: Option<usize>,
}

impl JobFlags {
    fn control(&self) -> RunControl {
        RunControl {
            resume: self.resume,
            limit: self.limit,
        }
    }
}

#[derive(Debug, Subcommand)]
enum PipelineAction {
    /// Compose target and reference images per category.
    Stage1(JobFlags),
    /// Extract an object or attribute from stage-1 images into edit pairs.
    Stage2(JobFlags),
    /// Build multi-reference generation items on top of stage 2.
    Stage3(JobFlags),
    /// Check manifests; defaults to every stage manifest in the output dir.
    Validate {
        manifests: Vec<PathBuf>,
    },
    /// Finish the first unfinished stage.
    Resume,
}

#[derive(Debug, Subcommand)]
enum BenchAction {
    /// Generate model outputs for every benchmark case.
    Run(JobFlags),
    /// Ask each configured judge for a verdict on every output.
    Judge,
    /// Aggregate verdicts into success ratios.
    Report {
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
}

fn init_logging(level: &str) {
    let env = env_logger::Env::default().default_filter_or(level);
    // a second init (in-process callers) is harmless
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn dispatch(cli: Cli) -> Result<u8> {
    let config = CliConfig::load(cli.config.as_deref(), &cli.overrides)?;
    init_logging(config.str("logging.level"));
    let json = cli.json;
    match cli.command {
        Command::AttnCheck { seed, inject_fault } => attn::attn_check(seed, inject_fault, json),
        Command::EncodeInspect { grids, scheme, text_tokens } => {
            let grids = encode::parse_grids(&grids)?;
            let scheme = match scheme {
                Some(n) => refmix_core::encoding::EncodingScheme::from_number(n)?,
                None => config.scheme(),
            };
            let stdout = std::io::stdout();
            let found = encode::encode_inspect(&grids, scheme, text_tokens, &mut stdout.lock())?;
            eprintln!(
                "{scheme}: {} tokens, {} cross-image collisions ({})",
                found.tokens,
                found.collisions,
                if found.collisions == 0 { "injective" } else { "not injective" }
            );
            Ok(EXIT_OK)
        }
        Command::Pipeline { action } => match action {
            PipelineAction::Stage1(f) => pipeline::run_stage(&config, Stage::Stage1, f.control(), json),
            PipelineAction::Stage2(f) => pipeline::run_stage(&config, Stage::Stage2, f.control(), json),
            PipelineAction::Stage3(f) => pipeline::run_stage(&config, Stage::Stage3, f.control(), json),
            PipelineAction::Validate { manifests } => pipeline::validate(&config, &manifests, json),
            PipelineAction::Resume => pipeline::resume(&config, json),
        },
        Command::Bench { action } => match action {
            BenchAction::Run(f) => bench::run(&config, f.control(), json),
            BenchAction::Judge => bench::judge(&config, json),
            BenchAction::Report { format } => bench::report(&config, format),
        },
        Command::TrainToy { mode } => {
            let modes = match mode {
                ModeArg::Edit => vec![LoraMode::Edit],
                ModeArg::Gen => vec![LoraMode::Gen],
                ModeArg::Both => vec![LoraMode::Edit, LoraMode::Gen],
            };
            let summaries = model::train_toy(&config, &modes)?;
            model::print_train(&summaries, json);
            Ok(EXIT_OK)
        }
        Command::Sample {
            prompt,
            out,
            references,
            lora,
            seed,
        } => {
            let req = model::SampleRequest {
                prompt: &prompt,
                references: &references,
                lora: lora.map(LoraMode::from),
                seed: seed.unwrap_or_else(|| config.u64("sampler.seed")),
                out: &out,
            };
            let adapted = model::sample(&config, &req)?;
            Ok(model::print_sample(&out, adapted))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
