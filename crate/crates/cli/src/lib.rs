//! Command-line front end: odometry runs, evaluation, ablations, sensor-model
//! fitting, synthetic datasets and convergence traces.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sdvo_core::VoConfig;

pub mod commands;

/// Name of the config file that `synth` writes next to a generated dataset
/// and that `run` picks up when no `--config` is given.
pub const DATASET_CONFIG_FILE: &str = "sdvo.cfg";

#[derive(Debug, Parser)]
#[command(name = "sdvo", version, about = "Semi-dense RGB-D visual odometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a TUM-layout sequence and write its trajectory.
    Run(RunArgs),
    /// Relative pose error of an estimated trajectory against ground truth.
    Eval(EvalArgs),
    /// Compare the four semi-dense extraction variants on a sequence.
    AblateExtractor(AblateExtractorArgs),
    /// Compare the six robust weight functions on a sequence or on the
    /// contaminated synthetic registration study.
    AblateWeights(AblateWeightsArgs),
    /// Fit the t sensor model to ground-truth residuals and rank noise models.
    FitSensor(FitSensorArgs),
    /// Render a synthetic sequence in TUM layout.
    Synth(SynthArgs),
    /// Gauss-Newton versus distance-field gradient descent energy traces.
    Convergence(ConvergenceArgs),
    /// Print every configuration key with its value.
    Config(ConfigArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

/// Configuration file plus individual overrides.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigSource {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set robust.weight=huber`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigSource {
    /// Defaults, then the config file (or `sdvo.cfg` inside `dataset`), then overrides.
    pub fn load(&self, dataset: Option<&Path>) -> Result<VoConfig> {
        let implicit = dataset.map(|d| d.join(DATASET_CONFIG_FILE)).filter(|p| p.is_file());
        let mut cfg = match self.config.as_ref().or(implicit.as_ref()) {
            Some(path) => VoConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => VoConfig::default(),
        };
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("override `{o}` is not KEY=VALUE");
            };
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TUM-layout directory (rgb.txt, depth.txt, optional groundtruth.txt).
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub config: ConfigSource,
    /// Output trajectory, TUM format.
    #[arg(long)]
    pub out: PathBuf,
    /// Prepare keyframes on the tracking thread so repeated runs are bit-identical.
    #[arg(long)]
    pub deterministic: bool,
    /// Skip frames whose semi-dense region size jumps (blur).
    #[arg(long)]
    pub discard_blur_frames: bool,
    /// Per-frame CSV log (status, iterations, inliers, disparity, timing).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Estimated trajectory.
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth trajectory.
    #[arg(long, required_unless_present = "dataset")]
    pub gt: Option<PathBuf>,
    /// Dataset whose groundtruth.txt is used when `--gt` is absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Pair interval in seconds (default: `eval.delta`).
    #[arg(long)]
    pub delta: Option<f64>,
    #[command(flatten)]
    pub config: ConfigSource,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct AblateExtractorArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub config: ConfigSource,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct AblateWeightsArgs {
    /// Sequence with ground truth. Without it the synthetic contamination study runs.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigSource,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Synthetic study: number of registration problems.
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Synthetic study: fraction of map points displaced as outliers.
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    /// Synthetic study: base seed.
    #[arg(long, default_value_t = 200)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct FitSensorArgs {
    /// Sequence with ground truth; residuals are collected at true poses.
    #[arg(long, required_unless_present = "residuals")]
    pub dataset: Option<PathBuf>,
    /// Existing residual dump (one value per line) instead of a dataset.
    #[arg(long, conflicts_with = "dataset")]
    pub residuals: Option<PathBuf>,
    /// Write the collected residuals here.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigSource,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Rotation per frame, degrees.
    #[arg(long, default_value_t = 0.05)]
    pub rot_deg: f64,
    /// Translation per frame, metres.
    #[arg(long, default_value_t = 0.001)]
    pub trans_m: f64,
    /// Std of additive intensity noise.
    #[arg(long, default_value_t = 0.0)]
    pub intensity_noise: f64,
    /// Std of additive depth noise, metres.
    #[arg(long, default_value_t = 0.0)]
    pub depth_noise: f64,
    /// Std of per-curve image jitter, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Draw the jitter from a t distribution with this many degrees of freedom.
    #[arg(long)]
    pub jitter_nu: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergenceArgs {
    /// Register two frames of this dataset instead of the synthetic fixture.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset mode: keyframe index.
    #[arg(long, default_value_t = 0)]
    pub keyframe: usize,
    /// Dataset mode: current frame index.
    #[arg(long, default_value_t = 10)]
    pub frame: usize,
    #[command(flatten)]
    pub config: ConfigSource,
    /// Gauss-Newton iteration cap.
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    /// Energy curves as CSV (`iteration,gn,gd`); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Gauss-Newton per-iteration trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub config: ConfigSource,
}

/// Runs one parsed command, writing reports to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(a) => commands::cmd_run(&a, out),
        Command::Eval(a) => commands::cmd_eval(&a, out),
        Command::AblateExtractor(a) => commands::cmd_ablate_extractor(&a, out),
        Command::AblateWeights(a) => commands::cmd_ablate_weights(&a, out),
        Command::FitSensor(a) => commands::cmd_fit_sensor(&a, out),
        Command::Synth(a) => commands::cmd_synth(&a, out),
        Command::Convergence(a) => commands::cmd_convergence(&a, out),
        Command::Config(a) => {
            write!(out, "{}", a.config.load(None)?.to_text())?;
            Ok(())
        }
    }
}

/// Rows of named columns, rendered as an aligned table, CSV or JSON.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write(&self, format: Format, out: &mut dyn Write) -> std::io::Result<()> {
        match format {
            Format::Table => {
                let widths: Vec<usize> = (0..self.columns.len())
                    .map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.columns[c].len()]).max().unwrap_or(0))
                    .collect();
                let line = |cells: Vec<&str>| {
                    cells
                        .iter()
                        .zip(&widths)
                        .map(|(s, w)| format!("{s:>w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                };
                writeln!(out, "{}", line(self.columns.clone()))?;
                for r in &self.rows {
                    writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
                }
            }
            Format::Csv => {
                writeln!(out, "{}", self.columns.join(","))?;
                for r in &self.rows {
                    writeln!(out, "{}", r.join(","))?;
                }
            }
            Format::Json => {
                let rows: Vec<serde_json::Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        let obj = self
                            .columns
                            .iter()
                            .zip(r)
                            .map(|(k, v)| {
                                let number = v
                                    .parse::<i64>()
                                    .map(serde_json::Number::from)
                                    .ok()
                                    .or_else(|| v.parse::<f64>().ok().and_then(serde_json::Number::from_f64));
                                let value = number.map_or_else(|| serde_json::Value::String(v.clone()), serde_json::Value::Number);
                                (k.to_string(), value)
                            })
                            .collect();
                        serde_json::Value::Object(obj)
                    })
                    .collect();
                writeln!(out, "{}", serde_json::Value::Array(rows))?;
            }
        }
        Ok(())
    }
}
