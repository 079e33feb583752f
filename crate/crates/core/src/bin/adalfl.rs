use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adalfl::harness::io::write_snapshots;
use adalfl::harness::run::load_loss_net;
use adalfl::harness::{compare_dir, format_mean_std, run_experiment, ExperimentConfig, Split};
use adalfl::metaloop::{surface_rows, tiny_meta_gradient_check};

#[derive(Parser)]
#[command(name = "adalfl", version, about = "Online loss-function learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (mode, seed) cell of a TOML experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the meta-gradient against finite differences on tiny instances.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        s_inner: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Evaluate a saved loss network on the standard surface grid.
    ExportSurface {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "exported")]
        run_id: String,
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
    /// Summarize final-step metrics as mean±std per mode.
    Compare {
        dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
}

fn run(cli: Cli) -> adalfl::Result<bool> {
    match cli.command {
        Command::Train { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let cells = run_experiment(&cfg)?;
            println!("wrote {} runs under {}", cells.len(), cfg.out_dir.display());
            Ok(true)
        }
        Command::Gradcheck { seeds, s_inner, tol } => {
            let mut worst = 0.0f64;
            let mut min_cos = 1.0f64;
            for seed in 0..seeds {
                let r = tiny_meta_gradient_check(seed, s_inner)?;
                println!(
                    "seed {seed}: cosine {:.10} max_rel_err {:.3e} max_abs_err {:.3e}",
                    r.cosine, r.max_rel_err, r.max_abs_err
                );
                worst = worst.max(r.max_rel_err);
                min_cos = min_cos.min(r.cosine);
            }
            println!("s_inner {s_inner}: max relative error {worst:.3e}, min cosine {min_cos:.10}");
            Ok(worst <= tol)
        }
        Command::ExportSurface { net, out, run_id, step } => {
            let net = load_loss_net(&net)?;
            let rows = surface_rows(&net, &run_id, 0, step)?;
            write_snapshots(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(true)
        }
        Command::Compare { dir, split } => {
            println!("mode,split,runs,step,error_rate,task_loss");
            for row in compare_dir(&dir)?.into_iter().filter(|r| r.split == split) {
                println!(
                    "{},{},{},{},{},{}",
                    row.mode,
                    row.split,
                    row.n_runs,
                    row.step,
                    format_mean_std(row.error_mean, row.error_std),
                    format_mean_std(row.loss_mean, row.loss_std)
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
