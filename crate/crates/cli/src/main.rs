use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use textseg::commands::{self, EvalSource};
use textseg::config::{Preset, RunConfig};

#[derive(Parser)]
#[command(name = "textseg", version, about = "Weakly supervised segmentation-based text-line recognition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a named preset ("balanced" or "real-heavy") instead of the
    /// plain defaults. Ignored when --config is given.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Overrides the run seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the stored splits, corpus and language model.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on clean synthetic lines from scratch.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        /// Loss log (JSON lines); defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Weakly supervised training from a pretrained checkpoint.
    Train {
        #[arg(long)]
        init: PathBuf,
        /// Manifest of transcript-only training lines.
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a manifest from a checkpoint or from decoded output.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "decoded", conflicts_with = "decoded")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        decoded: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        lm: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write transcripts and character boxes as JSON lines.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw decoded boxes onto the line images.
    Viz {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        decoded: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> textseg::Result<RunConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(Preset::parse(name)?),
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn default_log(out: &Path, log: Option<PathBuf>) -> PathBuf {
    log.unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".log.jsonl");
        PathBuf::from(name)
    })
}

fn run(cli: Cli) -> textseg::Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth { out } => {
            let o = commands::synth(&cfg, &out)?;
            for m in &o.manifests {
                println!("{}", m.display());
            }
            println!("{}", o.lm.display());
        }
        Command::Pretrain { out, log } => {
            let log = default_log(&out, log);
            let o = commands::pretrain(&cfg, &out, &log)?;
            info!("first loss {:?}, last loss {:?}", o.first_loss, o.last_loss);
            println!("{} iterations -> {}", o.iterations, out.display());
        }
        Command::Train { init, real, out, log } => {
            let log = default_log(&out, log);
            let o = commands::train(&cfg, &init, &real, &out, &log)?;
            info!("first loss {:?}, last loss {:?}", o.first_loss, o.last_loss);
            println!("{} iterations -> {}", o.iterations, out.display());
        }
        Command::Eval {
            data,
            checkpoint,
            decoded,
            lm,
            report,
        } => {
            let source = match (&checkpoint, &decoded) {
                (_, Some(d)) => EvalSource::Decoded(d),
                (Some(c), None) => EvalSource::Checkpoint {
                    path: c,
                    lm: lm.as_deref(),
                },
                (None, None) => unreachable!("clap requires one source"),
            };
            let r = commands::eval(&cfg, source, &data, report.as_deref())?;
            print!("{}", r.table());
        }
        Command::Decode {
            checkpoint,
            data,
            lm,
            out,
        } => {
            let o = commands::decode(&cfg, &checkpoint, &data, lm.as_deref(), &out)?;
            println!("{} lines -> {}", o.lines, out.display());
            if lm.is_some() {
                println!("language model changed {} transcripts", o.lm_changed.len());
            }
        }
        Command::Viz { data, decoded, out } => {
            let n = commands::viz(&cfg, &data, &decoded, &out)?;
            println!("{n} overlays -> {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
