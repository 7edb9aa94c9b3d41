use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use convmixer::harness::{self, Checkpoint, EvalData, RunConfig, TrainOptions};
use convmixer::parallel;

#[derive(Parser)]
#[command(
    name = "convmixer",
    version,
    about = "Train, evaluate, benchmark and inspect ConvMixer models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Top-1 accuracy and mean loss of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// CIFAR-10 binary directory or batch file, or `train` / `test` to
        /// regenerate the checkpoint's own splits.
        #[arg(long)]
        data: String,
    },
    /// Closed-form parameter count.
    Params {
        h: usize,
        d: usize,
        p: usize,
        k: usize,
        c_in: usize,
        n_classes: usize,
    },
    /// Forward-pass throughput, optionally over a grid such as `k=3,9 p=7,14`.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 1..)]
        grid: Vec<String>,
        #[arg(long, default_value_t = 224)]
        input_size: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 3)]
        batches: usize,
    },
    /// Render patch-embedding or depthwise filters as a PPM/PGM grid.
    Viz {
        #[arg(long)]
        ckpt: PathBuf,
        /// `patch_embed` or `blocks.{i}.depthwise`.
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> convmixer::Result<()> {
    match cli.command {
        Command::Train {
            config,
            resume,
            quiet,
        } => {
            let cfg = RunConfig::load(&config)?;
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)).map_err(|e| {
                convmixer::Error::Config(format!("cannot install interrupt handler: {e}"))
            })?;
            let opts = TrainOptions {
                resume: resume.map(Checkpoint::load).transpose()?,
                stop: Some(stop),
                verbose: !quiet,
            };
            let out = harness::cmd_train_with(&cfg, opts)?;
            if out.interrupted {
                eprintln!(
                    "interrupted; state after epoch {} saved",
                    out.checkpoint.epoch
                );
            }
            println!("{}", out.checkpoint_path.display());
        }
        Command::Eval { ckpt, data } => {
            let ck = Checkpoint::load(&ckpt)?;
            let source = match data.as_str() {
                "train" => EvalData::Split { train: true },
                "test" => EvalData::Split { train: false },
                path => EvalData::Path(path.as_ref()),
            };
            let r = harness::cmd_eval(&ck, source)?;
            println!(
                "accuracy {:.4} mean_loss {:.4} images {}",
                r.accuracy, r.mean_loss, r.count
            );
        }
        Command::Params {
            h,
            d,
            p,
            k,
            c_in,
            n_classes,
        } => {
            println!("{}", harness::cmd_params(h, d, p, k, c_in, n_classes));
        }
        Command::Bench {
            config,
            grid,
            input_size,
            batch_size,
            warmup,
            batches,
        } => {
            let cfg = RunConfig::load(&config)?;
            let grid = harness::parse_grid(&grid)?;
            println!("{:<32} {:>14} {:>12}", "variant", "images/sec", "ms/batch");
            for r in harness::cmd_bench(&cfg.model, &grid, input_size, batch_size, warmup, batches)?
            {
                println!(
                    "{:<32} {:>14.1} {:>12.2}",
                    r.name,
                    r.images_per_sec,
                    r.mean_batch_secs * 1e3
                );
            }
        }
        Command::Viz { ckpt, target, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let v = harness::cmd_viz(&ck, &target, &out)?;
            println!(
                "{} tiles of {}x{} in a {}x{} grid -> {}",
                v.tiles,
                v.tile_size,
                v.tile_size,
                v.cols,
                v.rows,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    parallel::init_thread_pool();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
