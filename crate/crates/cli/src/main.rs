use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use tumorgraph::pipeline::{
    cmd_ablate, cmd_dataset, cmd_eval, cmd_simulate, cmd_sweep_report, cmd_train, mask_label, PipelineConfig, Preset, Split,
};
use tumorgraph::Error;

#[derive(Parser)]
#[command(name = "tumorgraph", version, about = "Simulate tumors, build patch graph datasets and train heterogeneity classifiers")]
struct Cli {
    /// TOML file overlaid on the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base parameter set. Defaults to the config file's `preset` key, else desk.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Replaces the master, training and initialization seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tumor simulations and write traces plus a manifest.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing manifest.
        #[arg(long)]
        force: bool,
    },
    /// Cut, label, balance and featurize patches from simulated traces.
    Dataset {
        /// Output directory of `simulate`.
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured model and keep the best-validation checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a saved checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also write the result as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One training run per configured feature mask.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// High-entropy patch fraction across mutation probabilities.
    SweepReport {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> tumorgraph::Result<PipelineConfig> {
    let preset = cli.preset.map(|p| match p {
        PresetArg::Paper => Preset::Paper,
        PresetArg::Desk => Preset::Desk,
    });
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path, preset).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("cannot read config {}: {source}", path.display())),
            e => e,
        })?,
        None => PipelineConfig::preset(preset.unwrap_or(Preset::Desk)),
    };
    if let Some(s) = cli.seed {
        cfg.sim.master_seed = s;
        cfg.train.seed = s;
        cfg.model.init_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save_json<T: serde::Serialize>(path: &Path, v: &T) -> tumorgraph::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> tumorgraph::Result<()> {
    let cfg = load_config(&cli)?;
    let t0 = Instant::now();
    match cli.command {
        Command::Simulate { out, force } => {
            let m = cmd_simulate(&cfg, &out, force)?;
            let retries: u32 = m.tumors.iter().map(|t| t.attempts - 1).sum();
            let births: u64 = m.tumors.iter().map(|t| t.births).sum();
            println!("simulated {} tumors ({births} births, {retries} reruns) into {}", m.tumors.len(), out.display());
        }
        Command::Dataset { traces, out } => {
            let s = cmd_dataset(&cfg, &traces, &out)?;
            println!("{:<6} {:>7} {:>6} {:>6} {:>18} {:>14} {:>14} {:>14}", "split", "patches", "low", "high", "cells", "births", "deaths", "entropy");
            for sp in &s.splits {
                println!(
                    "{:<6} {:>7} {:>6} {:>6} {:>9.2} ± {:<6.2} {:>6.2} ± {:<5.2} {:>6.2} ± {:<5.2} {:>6.3} ± {:<5.3}",
                    sp.split.name(), sp.patches, sp.low, sp.high, sp.cells.mean, sp.cells.sd, sp.births.mean, sp.births.sd,
                    sp.deaths.mean, sp.deaths.sd, sp.entropy.mean, sp.entropy.sd
                );
            }
        }
        Command::Train { dataset, out } => {
            eprintln!("training {}", cfg.model.label());
            let s = cmd_train(&cfg, &dataset, &out, |r| {
                eprintln!(
                    "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.2}  val {:.2}  ({:.0}s)",
                    r.epoch, r.lr, r.loss, r.train_acc, r.val_acc, t0.elapsed().as_secs_f64()
                )
            })?;
            println!(
                "{}: best epoch {} | train {:.2} val {:.2} test {:.2}",
                s.model, s.best_epoch, s.train_acc, s.val_acc, s.test_acc
            );
        }
        Command::Eval { checkpoint, dataset, split, out } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let e = cmd_eval(&checkpoint, &dataset, split, cfg.train.batch_size)?;
            println!("{} on {} ({} patches): {:.2}%", e.model, split.name(), e.patches, e.accuracy);
            if let Some(p) = out {
                save_json(&p, &e)?;
            }
        }
        Command::Ablate { dataset, out } => {
            let rows = cmd_ablate(&cfg, &dataset, &out)?;
            println!("{:<16} {:>8} {:>8} {:>8}", "features", "train", "val", "test");
            for r in rows {
                println!("{:<16} {:>8.2} {:>8.2} {:>8.2}", mask_label(&r.mask), r.train_acc, r.val_acc, r.test_acc);
            }
        }
        Command::SweepReport { out } => {
            let r = cmd_sweep_report(&cfg, &out)?;
            println!("{:>8} {:>9} {:>6} {:>13}", "p_mut", "patches", "high", "high_fraction");
            for row in &r.rows {
                println!("{:>8} {:>9} {:>6} {:>13.4}", row.mutation_probability, row.counts.accepted(), row.counts.high, row.high_fraction);
            }
            println!("spearman {:.4}", r.spearman);
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
