use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lineweave::pipeline::{self, Outcome, RunConfig, SweepAxis};
use lineweave::Result;

#[derive(Parser)]
#[command(name = "lineweave", version, about = "Self-supervised text-line segmentation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pages processed concurrently.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    #[arg(long, global = true)]
    central_window: Option<usize>,
    /// Output directory (default depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus: `<out>/train` and `<out>/holdout`.
    Synth,
    /// Train the similarity network on a page directory.
    Train {
        /// Pages to train on (default `<run_dir>/corpus/train`).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Segment one page image or every image in a directory.
    Segment {
        input: PathBuf,
        #[arg(long)]
        save_intermediate: Option<bool>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Segment and score once per patch size or window size.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Page images.
        #[arg(long)]
        input: PathBuf,
        /// Ground truth directory (`labels/` or `xml/`).
        #[arg(long)]
        gt: PathBuf,
    },
    /// Render saliency maps for patches sampled from one page.
    Visualize {
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        patches: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    PatchSize,
    CentralWindow,
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    if let Some(p) = c.patch_size {
        cfg.patch_size = p;
    }
    if let Some(w) = c.central_window {
        cfg.central_window = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_or(c: &Common, default: impl FnOnce() -> PathBuf) -> PathBuf {
    c.out.clone().unwrap_or_else(default)
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = resolve_config(&cli.common)?;
    let run_dir = cfg.run_dir.clone();
    let c = &cli.common;
    match cli.command {
        Command::Synth => pipeline::cmd_synth(&cfg, &out_or(c, || run_dir.join("corpus"))),
        Command::Train { corpus, resume } => {
            if let Some(o) = &c.out {
                cfg.run_dir = o.clone();
            }
            let corpus = corpus.unwrap_or_else(|| run_dir.join("corpus").join("train"));
            pipeline::cmd_train(&cfg, &corpus, resume)
        }
        Command::Segment { input, save_intermediate } => {
            if let Some(s) = save_intermediate {
                cfg.segment.save_intermediate = s;
            }
            let out = out_or(c, || run_dir.join("segment"));
            pipeline::cmd_segment(&cfg, &input, &out)
        }
        Command::Eval { pred, gt } => pipeline::cmd_eval(&cfg, &pred, &gt, &out_or(c, || pred.clone())),
        Command::Sweep { axis, values, input, gt } => {
            let axis = match axis {
                Axis::PatchSize => SweepAxis::PatchSize,
                Axis::CentralWindow => SweepAxis::CentralWindow,
            };
            let out = out_or(c, || run_dir.join("sweep"));
            pipeline::cmd_sweep(&cfg, axis, &values, &input, &gt, &out)
        }
        Command::Visualize { input, patches } => {
            let out = out_or(c, || run_dir.join("visualize"));
            pipeline::cmd_visualize(&cfg, Path::new(&input), &out, patches)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(outcome) => {
            for s in &outcome.skipped {
                eprintln!("skipped: {s}");
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
