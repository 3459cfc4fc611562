use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ecgtune::commands::{self, SplitName, TuneMethod};
use ecgtune::config::ExperimentConfig;
use ecgtune::ecg::synth::SynthConfig;
use ecgtune::model::{build_model, describe_model};
use ecgtune::space::HyperParams;
use ecgtune::Result;

/// Hyperparameter tuning of a residual 1-D CNN for ECG beat classification.
#[derive(Parser)]
#[command(name = "ecgtune", version)]
struct Cli {
    /// Experiment config (JSON). Flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for splitting, training and tuning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment, normalise and split the configured data.
    Prepare,
    /// Train one model on the prepared data (default: the baseline point).
    Train(HyperArgs),
    /// Search hyperparameters with BO or PSO.
    Tune {
        #[arg(long, value_enum)]
        method: Method,
        /// Overrides the configured trial budget (BO) or iterations (PSO).
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Score a saved model on one split.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Collect tables and plot data from earlier runs.
    Report,
    /// Print the layer table for a hyperparameter point.
    Describe(HyperArgs),
    /// Write synthetic format-212 records and annotations.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 6)]
        records: usize,
        /// Seconds per record.
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Bo,
    Pso,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// The configured baseline.
    Baseline,
    /// The published MIT-BIH optimum.
    Mitbih,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, value_enum, default_value = "baseline")]
    preset: Preset,
    #[arg(long)]
    drop_rate: Option<f64>,
    #[arg(long)]
    dense_layers: Option<usize>,
    #[arg(long)]
    conv_layers: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    adam_decay: Option<f64>,
}

impl HyperArgs {
    fn resolve(&self, cfg: &ExperimentConfig) -> HyperParams {
        let mut h = match self.preset {
            Preset::Baseline => cfg.baseline,
            Preset::Mitbih => HyperParams::MITBIH_OPTIMUM,
        };
        h.drop_rate = self.drop_rate.unwrap_or(h.drop_rate);
        h.dense_layers = self.dense_layers.unwrap_or(h.dense_layers);
        h.conv_layers = self.conv_layers.unwrap_or(h.conv_layers);
        h.learning_rate = self.learning_rate.unwrap_or(h.learning_rate);
        h.adam_decay = self.adam_decay.unwrap_or(h.adam_decay);
        h
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

// A closed pipe (`| head`) is not an error worth reporting.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Prepare => print_json(&commands::cmd_prepare(&cfg)?),
        Command::Train(args) => {
            let h = args.resolve(&cfg);
            print_json(&commands::cmd_train(&cfg, &h)?)
        }
        Command::Tune { method, budget } => {
            let method = match method {
                Method::Bo => TuneMethod::Bo,
                Method::Pso => TuneMethod::Pso,
            };
            if let Some(b) = *budget {
                match method {
                    TuneMethod::Bo => cfg.bo.budget = b,
                    TuneMethod::Pso => cfg.pso.iterations = b,
                }
            }
            print_json(&commands::cmd_tune(&cfg, method)?)
        }
        Command::Evaluate { model, split } => {
            let model = model
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join("baseline").join("model.bin"));
            let which = match split {
                Split::Train => SplitName::Train,
                Split::Val => SplitName::Validation,
                Split::Test => SplitName::Test,
            };
            let cm = commands::cmd_evaluate(&cfg, &model, which)?;
            emit(&cm.metrics_csv());
            Ok(())
        }
        Command::Report => {
            for f in commands::cmd_report(&cfg.out_dir)?.files {
                emit(&format!("{}\n", cfg.out_dir.join(f).display()));
            }
            Ok(())
        }
        Command::Describe(args) => {
            let h = args.resolve(&cfg);
            let spec = build_model(&h, &cfg.space, cfg.window_length, cfg.classes.len(), &cfg.arch)?;
            emit(&describe_model(&spec));
            Ok(())
        }
        Command::Synth {
            dir,
            records,
            duration,
        } => {
            let sc = SynthConfig {
                records: *records,
                duration_seconds: *duration,
                seed: cfg.seed,
                ..SynthConfig::default()
            };
            for f in commands::cmd_synth(dir, &sc)? {
                emit(&format!("{}\n", f.display()));
            }
            Ok(())
        }
    }
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
