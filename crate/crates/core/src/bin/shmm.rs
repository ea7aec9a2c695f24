use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use shmm::cli::{cmd_fit, cmd_postprocess, cmd_simulate, cmd_study, cmd_threshold};
use shmm::panel::PanelKind;
use shmm::postprocess::RelabelMethod;

#[derive(Parser)]
#[command(name = "shmm", version, about = "Reversible-jump MCMC for hidden Markov models with a repulsive state prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Order,
    Map,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Scalar,
    Vector2,
    StepAngle,
}

impl From<Kind> for PanelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Scalar => PanelKind::Scalar,
            Kind::Vector2 => PanelKind::Vector2,
            Kind::StepAngle => PanelKind::StepAngle,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler on a panel and write the chain and its summaries.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate a study scenario panel with its true allocation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Select the interaction threshold from the pairwise-distance density.
    Threshold {
        #[arg(long)]
        panel: PathBuf,
        /// 1-based observation coordinate; defaults to the repulsive coordinates.
        #[arg(long)]
        coordinate: Option<usize>,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the replicated simulation study.
    Study {
        #[arg(long)]
        config: PathBuf,
    },
    /// Relabel a chain file and recompute its summaries.
    Postprocess {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, value_enum, default_value = "order")]
        method: Method,
        /// Panel the chain was fitted to; enables allocation.csv.
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        /// Defaults to the chain's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> shmm::Result<()> {
    let written = match cli.command {
        Command::Fit { config } => cmd_fit(&config)?,
        Command::Simulate { config } => cmd_simulate(&config)?,
        Command::Study { config } => cmd_study(&config)?,
        Command::Threshold {
            panel,
            coordinate,
            kind,
            out,
        } => {
            let (d, files) = cmd_threshold(&panel, coordinate, kind.map(Into::into), &out)?;
            println!("d = {d}");
            files
        }
        Command::Postprocess {
            chain,
            method,
            panel,
            kind,
            out,
        } => {
            let method = match method {
                Method::Order => RelabelMethod::Order,
                Method::Map => RelabelMethod::Map,
            };
            let out = out.unwrap_or_else(|| match chain.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            });
            cmd_postprocess(&chain, method, panel.as_deref(), kind.map(Into::into), &out)?
        }
    };
    for f in written {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
