//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 runtime error.

use artta_cli::compare::compare;
use artta_cli::config::RunConfig;
use artta_cli::experiment::{load_summary, run_experiment};
use artta_cli::pretrain::pretrain_source;
use artta_core::error::{Error, Result};
use artta_core::io;
use artta_core::micronet::NetworkSpec;
use artta_core::rng::substream;
use artta_core::streambench::synth;
use clap::{Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "artta",
    about = "Continual test-time adaptation benchmark: pretrain, run, compare, gen-data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a source model on clean data and store it with its BN statistics.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Override config keys, e.g. --set pretrain.epochs=50
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (defaults to the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pretraining seed (defaults to the first config seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment: one method over the configured stream and seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare summary.json files from runs over the same schedule.
    Compare {
        reports: Vec<PathBuf>,
        /// Write comparison.txt and comparison.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a built-in synthetic dataset as CSV.
    GenData {
        #[command(subcommand)]
        kind: GenData,
    },
}

#[derive(Subcommand)]
enum GenData {
    /// Gaussian blobs, one cluster per class.
    Blobs {
        #[arg(long, default_value_t = 16)]
        features: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long = "per-class", default_value_t = 360)]
        per_class: usize,
        #[arg(long, default_value_t = 0.08)]
        spread: f64,
        /// Center placement: "uniform" (interior) or "corners"
        /// (boundary patterns, fragile to clipping corruptions).
        #[arg(long, default_value = "uniform")]
        style: String,
        /// Distance of corner centers from the feature-range boundary.
        #[arg(long, default_value_t = 0.1)]
        margin: f64,
        /// Lower bound of uniform center placement.
        #[arg(long = "center-min", default_value_t = 0.25)]
        center_min: f64,
        /// Upper bound of uniform center placement.
        #[arg(long = "center-max", default_value_t = 0.75)]
        center_max: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concentric 2-D rings, one ring per class.
    Rings {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long = "per-class", default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 0.02)]
        spread: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config '{}': {}", path.display(), e)))?;
    let mut cfg = RunConfig::parse(&text)?;
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{}'", item)))?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Pretrain { config, set, out, seed } => {
            let mut cfg = load_config(&config, &set)?;
            if let Some(dir) = out {
                cfg.out_dir = dir.to_string_lossy().into_owned();
            }
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let dataset = io::load_dataset(Path::new(&cfg.dataset))?;
            let mut sizes = vec![dataset.feature_dim()];
            sizes.extend(&cfg.hidden);
            sizes.push(dataset.class_count);
            let spec = NetworkSpec::new(sizes, cfg.bn_after.clone())?;
            let outcome = pretrain_source(
                &dataset,
                &spec,
                cfg.pretrain_epochs,
                cfg.pretrain_lr,
                cfg.pretrain_momentum,
                cfg.pretrain_batch_size,
                seed,
            )?;
            let out_dir = PathBuf::from(&cfg.out_dir);
            let model_path = out_dir.join("model.mnet");
            io::save_model(&model_path, &outcome.params, &outcome.stats)?;
            for w in &outcome.warnings {
                eprintln!("warning: {}", w);
            }
            println!(
                "pretrained seed {}: train accuracy {:.4}, loss {:.6} -> {:.6}, model at {}",
                seed,
                outcome.train_accuracy,
                outcome.first_epoch_loss,
                outcome.last_epoch_loss,
                model_path.display()
            );
            Ok(())
        }
        Command::Run { config, set, out, seed } => {
            let mut cfg = load_config(&config, &set)?;
            if let Some(dir) = out {
                cfg.out_dir = dir.to_string_lossy().into_owned();
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let summary = run_experiment(&cfg)?;
            println!(
                "method {}: mean accuracy {:.4} +/- {:.4}, AMCA {:.4} +/- {:.4} over {} seed(s)",
                summary.method,
                summary.mean_accuracy.mean,
                summary.mean_accuracy.std,
                summary.amca.mean,
                summary.amca.std,
                summary.seeds.len()
            );
            for f in &summary.failed_seeds {
                eprintln!("warning: seed {} failed: {}", f.seed, f.error);
            }
            println!("artifacts in {}", cfg.out_dir);
            Ok(())
        }
        Command::Compare { reports, out } => {
            if reports.len() < 2 {
                return Err(Error::Config("compare needs at least two summary files".into()));
            }
            let summaries = reports
                .iter()
                .map(|p| load_summary(p))
                .collect::<Result<Vec<_>>>()?;
            let comparison = compare(&summaries)?;
            print!("{}", comparison.text);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                io::write_atomic(&dir.join("comparison.txt"), comparison.text.as_bytes())?;
                io::write_atomic(&dir.join("comparison.csv"), comparison.csv.as_bytes())?;
                println!("written to {}", dir.display());
            }
            Ok(())
        }
        Command::GenData { kind } => {
            let (dataset, out) = match kind {
                GenData::Blobs {
                    features,
                    classes,
                    per_class,
                    spread,
                    style,
                    margin,
                    center_min,
                    center_max,
                    seed,
                    out,
                } => {
                    let mut rng = substream(seed, "gen-data");
                    let ds = match style.as_str() {
                        "uniform" => synth::blobs_in_range(
                            features, classes, per_class, spread, center_min, center_max,
                            &mut rng,
                        )?,
                        "corners" => synth::corner_blobs(
                            features, classes, per_class, spread, margin, &mut rng,
                        )?,
                        other => {
                            return Err(Error::Config(format!(
                                "blob style must be uniform or corners, got '{}'",
                                other
                            )))
                        }
                    };
                    (ds, out)
                }
                GenData::Rings { classes, per_class, spread, seed, out } => {
                    let mut rng = substream(seed, "gen-data");
                    (synth::rings(classes, per_class, spread, &mut rng)?, out)
                }
            };
            io::save_dataset_csv(&out, &dataset)?;
            println!(
                "wrote {} samples, {} features, {} classes to {}",
                dataset.len(),
                dataset.feature_dim(),
                dataset.class_count,
                out.display()
            );
            Ok(())
        }
    }
}
