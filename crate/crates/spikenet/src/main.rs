//! Thin command-line front end; the work lives in `spikenet::cli`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spikenet::cli::{
    cmd_bench_masked_sum, cmd_eval, cmd_firing_rate, cmd_gen_synthetic, cmd_train, SynthSpec,
};

#[derive(Parser)]
#[command(
    name = "spikenet",
    version,
    about = "Spiking networks over temporal graph snapshots",
    after_help = "Set RUST_LOG=info (or debug) for progress output."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes checkpoint, metrics, and config snapshot
    Train {
        /// Flat `key = value` config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. --set lr=0.01 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Shorthand for --set seed=N
        #[arg(long)]
        seed: Option<u64>,
        /// Shorthand for --set epochs=N
        #[arg(long)]
        epochs: Option<usize>,
        /// Shorthand for --set out_dir=PATH
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Shorthand for --set strict_deterministic=true
        #[arg(long)]
        strict: bool,
    },
    /// Evaluate a checkpoint on its run's train/val/test split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to config.resolved next to the checkpoint
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Generate the synthetic dynamic-community dataset
    GenSynthetic {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 2)]
        communities: usize,
        /// Fraction of each community that migrates at the midpoint
        #[arg(long, default_value_t = 0.5)]
        switch_fraction: f64,
        #[arg(long, default_value_t = 0.05)]
        p_intra: f64,
        #[arg(long, default_value_t = 0.005)]
        p_inter: f64,
        /// Uniform noise amplitude on the one-hot features
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Time masked summation against a plain dense product
    BenchMaskedSum {
        /// Square matrix sizes to sweep
        #[arg(long, value_delimiter = ',', default_values_t = vec![64usize, 256, 512])]
        dims: Vec<usize>,
        /// Spike densities to sweep
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.1, 0.2, 0.3, 0.5])]
        densities: Vec<f64>,
        /// Timing samples per cell (median is reported)
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the CSV here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report a checkpoint's firing rate, overall and per step
    FiringRate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to config.resolved next to the checkpoint
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn run(cmd: Cmd) -> spikenet::Result<()> {
    match cmd {
        Cmd::Train { config, set, seed, epochs, out_dir, strict } => {
            let mut overrides = Vec::new();
            for s in set {
                let (k, v) = s.split_once('=').ok_or_else(|| {
                    spikenet::Error::invalid(format!("--set expects KEY=VALUE, got {s:?}"))
                })?;
                overrides.push((k.trim().to_string(), v.trim().to_string()));
            }
            if let Some(seed) = seed {
                overrides.push(("seed".into(), seed.to_string()));
            }
            if let Some(epochs) = epochs {
                overrides.push(("epochs".into(), epochs.to_string()));
            }
            if let Some(dir) = out_dir {
                overrides.push(("out_dir".into(), dir.display().to_string()));
            }
            if strict {
                overrides.push(("strict_deterministic".into(), "true".into()));
            }
            cmd_train(config.as_deref(), &overrides)
        }
        Cmd::Eval { checkpoint, config, split } => {
            cmd_eval(&checkpoint, config.as_deref(), &split)
        }
        Cmd::GenSynthetic {
            out_dir,
            nodes,
            steps,
            communities,
            switch_fraction,
            p_intra,
            p_inter,
            noise,
            seed,
        } => {
            let spec = SynthSpec {
                num_nodes: nodes,
                num_steps: steps,
                num_communities: communities,
                switch_fraction,
                p_intra,
                p_inter,
                noise,
                seed,
            };
            cmd_gen_synthetic(&spec, &out_dir)
        }
        Cmd::BenchMaskedSum { dims, densities, reps, seed, out } => {
            cmd_bench_masked_sum(&dims, &densities, reps, seed, out.as_deref())
        }
        Cmd::FiringRate { checkpoint, config, split } => {
            cmd_firing_rate(&checkpoint, config.as_deref(), &split)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
