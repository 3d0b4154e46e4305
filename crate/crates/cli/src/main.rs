use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idrive_cli::*;

#[derive(Parser)]
#[command(name = "idrive", version, about = "Train, evaluate and inspect the fused driving model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Drive the expert through generated routes and write frame directories.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes the checkpoint, `<out>.loss.tsv` and periodic checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Closed-loop evaluation over a routes file.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "expert", conflicts_with = "expert")]
        ckpt: Option<PathBuf>,
        /// Drive with the privileged expert instead of a checkpoint.
        #[arg(long)]
        expert: bool,
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render input and prediction panels for one frame directory.
    Visualize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine similarity of the per-head channel attention weights.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        probe_seed: u64,
        #[arg(long, default_value_t = 16)]
        probe_size: usize,
    },
}

fn run(cli: Cli) -> idrive::Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out, frames, seed } => {
            let c = load_config(config.as_deref())?;
            let m = cmd_gen_data(&c, &out, frames, seed)?;
            let counts = m.weather_counts();
            println!("frames {} sunny {} cloudy {} rainy {} foggy {}", m.entries.len(), counts[0], counts[1], counts[2], counts[3]);
        }
        Cmd::Train { config, data, out, resume } => {
            let c = load_config(config.as_deref())?;
            let s = cmd_train(&c, &data, &out, resume.as_deref())?;
            println!("steps {} samples {} skipped {}", s.steps, s.samples, s.skipped);
            if let Some(l) = s.final_total {
                println!("final_loss {l}");
            }
        }
        Cmd::Eval { config, ckpt, expert, routes, report } => {
            let c = load_config(config.as_deref())?;
            let ckpt = if expert { None } else { ckpt };
            let r = cmd_eval(&c, ckpt.as_deref(), &routes, &report)?;
            let (rc, is, ds) = r.mean();
            println!("routes {} rc {rc:.2} is {is:.4} ds {ds:.2}", r.rows.len());
        }
        Cmd::Visualize { config, ckpt, frame, out } => {
            let c = config.as_deref().map(|p| load_config(Some(p))).transpose()?;
            let p = cmd_visualize(c.as_ref(), &ckpt, &frame, &out)?;
            print!("{}", p.sidecar);
        }
        Cmd::Analyze { config, ckpt, out, probe_seed, probe_size } => {
            let c = config.as_deref().map(|p| load_config(Some(p))).transpose()?;
            let r = cmd_analyze(c.as_ref(), &ckpt, &out, probe_seed, probe_size)?;
            print!("{}", r.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // The message starts with the error category.
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
