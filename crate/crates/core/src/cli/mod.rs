//! Command-line entry points: `synth`, `preprocess`, `run`, `gradcheck` and
//! `report`.
//!
//! Exit codes: 0 on success, 1 on runtime failure (including a failed
//! gradient check), 2 on usage or configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::dataio::{BoundaryPolicy, Dimension, Domain, LabelCase};
use crate::evaluate::{Fusion, SplitScheme};
use crate::graph::FD_EPSILON;
use crate::model::Variant;

pub use commands::{cmd_gradcheck, cmd_preprocess, cmd_report, cmd_run, cmd_synth, ChannelSummary, PreprocessSummary};
pub use config::{ModelSection, RunConfig};

/// A bad flag value, config file or channel selection.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "emomsase", version, about = "Multimodal emotion classification from wearable and headset signals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset whose class signal is known.
    Synth(SynthArgs),
    /// Filter, normalise and window raw recordings into the cache.
    Preprocess(PreprocessArgs),
    /// Cross-validate a model and write results.csv, report.json and training logs.
    Run(RunArgs),
    /// Compare analytic and finite-difference gradients on the micro model.
    Gradcheck(GradcheckArgs),
    /// Print results tables as a combination × metric grid.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for sensor files, manifest.csv, ratings.csv and g2.csv.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    /// Seed for every random draw.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of participants.
    #[arg(long, default_value_t = 24)]
    pub participants: usize,
    /// Number of videos per participant.
    #[arg(long, default_value_t = 13)]
    pub videos: usize,
    /// Amplitude of the class signal relative to unit noise; 0 means no signal.
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    /// Recording length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Probability that a participant's rating agrees with the video's class.
    #[arg(long, default_value_t = 0.8)]
    pub agreement: f64,
    /// Channels as NAME or NAME:RATE, comma separated [default: ACC_Z,EDA,TEMP,LAT_ACC,LONG_ACC,L_EP_Y,R_EP_Y].
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
}

/// Input selection shared by `preprocess` and `run`.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding manifest.csv, ratings.csv and the sensor files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Cache directory for windowed tensors.
    #[arg(long, env = "EMOMSASE_CACHE")]
    pub cache: Option<PathBuf>,
    /// Domains to use, comma separated: peripheral, trunk, head [default: all present].
    #[arg(long, value_delimiter = ',')]
    pub domains: Vec<Domain>,
    /// Channels to use, comma separated [default: every supported channel present].
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Seed for initialisation, shuffling and splitting.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label source: general, majority, males or g2.
    #[arg(long)]
    pub labels: Option<LabelCase>,
    /// Where a rating of 4 falls: le4 (low) or strict (rejected).
    #[arg(long)]
    pub boundary: Option<BoundaryPolicy>,
    /// Participant split: kfold5 (or kfold<k>) or loso.
    #[arg(long)]
    pub split: Option<SplitScheme>,
    /// Fusion: modality (one fused model), sum or max (one model per domain).
    #[arg(long)]
    pub fusion: Option<Fusion>,
    /// Architecture: lstmsa, lstmmsa or emomsase.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Dimensions to classify, comma separated: valence, arousal.
    #[arg(long, value_delimiter = ',')]
    pub dimension: Vec<Dimension>,
    /// LSTM hidden size.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Maximum training epochs.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// AdamW learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// JSON config file; its seed and model.variant are used unless overridden.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// First seed checked.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds checked.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Architecture: lstmsa, lstmmsa or emomsase.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Central-difference step.
    #[arg(long, default_value_t = FD_EPSILON)]
    pub epsilon: f64,
    /// Largest accepted relative error; the check fails at or above it.
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Parameter to hold constant, e.g. head.b; repeatable.
    #[arg(long)]
    pub freeze: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// results.csv files to show [default: <out>/results.csv].
    pub results: Vec<PathBuf>,
    /// Directory whose results.csv is shown when no file is given.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write the grid as CSV to this path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.data {
            cfg.data_dir = d.clone();
        }
        if let Some(c) = &self.cache {
            cfg.cache_dir = c.clone();
        }
        if !self.domains.is_empty() {
            cfg.domains = self.domains.clone();
        }
        if !self.channels.is_empty() {
            cfg.channels = self.channels.clone();
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, UsageError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        self.apply(&mut cfg);
        Ok(cfg)
    }
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, UsageError> {
        let mut cfg = self.data.resolve()?;
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.seed => cfg.seed);
        set!(self.labels => cfg.labels);
        set!(self.boundary => cfg.boundary);
        set!(self.split => cfg.split);
        set!(self.fusion => cfg.fusion);
        set!(self.variant => cfg.model.variant);
        set!(self.hidden => cfg.model.hidden);
        set!(self.max_epochs => cfg.train.max_epochs);
        set!(self.patience => cfg.train.early_stop_patience);
        set!(self.batch_size => cfg.train.batch_size);
        set!(self.learning_rate => cfg.train.learning_rate);
        set!(self.out => cfg.out_dir);
        if !self.dimension.is_empty() {
            cfg.dimensions = self.dimension.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Preprocess(a) => {
            let cfg = a.data.resolve()?;
            cmd_preprocess(&cfg).map(|s| {
                print!("{s}");
                ExitCode::SUCCESS
            })
        }
        Command::Run(a) => cmd_run(&a.resolve()?),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("emomsase").chain(args.iter().copied()))
    }

    fn run_args(args: &[&str]) -> RunArgs {
        match parse(args).unwrap().command {
            Command::Run(a) => a,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"seed": 3, "labels": "majority", "split": "loso", "model": {"hidden": 16}, "train": {"max_epochs": 4, "early_stop_patience": 2}}"#,
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let cfg = run_args(&["run", "--config", p, "--seed", "7", "--split", "kfold5"]).resolve().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.split, SplitScheme::GroupKFold(5));
        assert_eq!(cfg.labels, LabelCase::Majority);
        assert_eq!(cfg.model.hidden, 16);
        assert_eq!(cfg.train.max_epochs, 4);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.fusion, Fusion::ModalityLevel);
        assert_eq!(cfg.resolved_train().seed, 7);
    }

    #[test]
    fn list_flags_split_on_commas() {
        let cfg = run_args(&["run", "--domains", "trunk,head", "--dimension", "arousal", "--channels", "ACC_Z,EDA"])
            .resolve()
            .unwrap();
        assert_eq!(cfg.domains, vec![Domain::Trunk, Domain::Head]);
        assert_eq!(cfg.dimensions, vec![Dimension::Arousal]);
        assert_eq!(cfg.channels, vec!["ACC_Z", "EDA"]);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        for args in [
            &["run", "--labels", "everyone"][..],
            &["run", "--split", "kfold1"],
            &["run", "--fusion", "mean"],
            &["run", "--boundary", "maybe"],
            &["run", "--variant", "transformer"],
            &["gradcheck", "--tolerance", "x"],
        ] {
            let err = parse(args).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{args:?}");
        }
        let err = run_args(&["run", "--patience", "9", "--max-epochs", "3"]).resolve().unwrap_err();
        assert!(err.0.contains("patience"));
    }
}
