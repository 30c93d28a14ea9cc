use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flrq::quantize::DEFAULT_CLIP_GRID;
use flrq::{BlcConfig, ClipMode, QuantMode, RankSelectionConfig};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "flrq", version, about = "Flexible low-rank weight quantization")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Global seed; per-layer seeds are `seed ^ layer_index`.
    #[arg(long, global = true, env = "FLRQ_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for per-layer jobs (0 = one per core).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Record wall-clock times in outputs (makes them run-dependent).
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic layers as `layer_NNNN/{weight,calib}.flrt`.
    GenSynth(GenSynthArgs),
    /// Quantize every layer under a directory and write bundles plus report.json.
    Quantize(QuantizeArgs),
    /// Error and amax as a function of extracted rank, as CSV.
    RankSweep(RankSweepArgs),
    /// Run one of the ablation sweeps on synthetic or given layers.
    Ablate(AblateArgs),
    /// Compare sketch deflation against the exact SVD at a fixed rank.
    CompareSvd(CompareSvdArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    StudentT,
    OutlierChannels,
}

#[derive(Debug, Clone, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 256)]
    pub m: usize,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = FamilyArg::OutlierChannels)]
    pub family: FamilyArg,
    /// Degrees of freedom for `student-t`.
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    /// Boosted channels for `outlier-channels`.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 10.0)]
    pub boost: f64,
    /// Calibration tokens per layer.
    #[arg(long, default_value_t = 128)]
    pub tokens: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
}

impl GenSynthArgs {
    pub fn family(&self) -> flrq::Family {
        match self.family {
            FamilyArg::Gaussian => flrq::Family::Gaussian,
            FamilyArg::StudentT => flrq::Family::StudentT { nu: self.nu },
            FamilyArg::OutlierChannels => flrq::Family::OutlierChannels {
                count: self.count,
                boost: self.boost,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(alias = "sym")]
    Symmetric,
    #[value(alias = "asym")]
    Asymmetric,
}

impl From<ModeArg> for QuantMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Symmetric => QuantMode::Symmetric,
            ModeArg::Asymmetric => QuantMode::Asymmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClipModeArg {
    Saturate,
    Zero,
}

/// Quantizer and rank-selection knobs shared by `quantize` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct QuantArgs {
    /// Integer bit width: 2, 3 or 4 (default 4; 2 for `ablate --which blc`).
    #[arg(long)]
    pub d: Option<u8>,
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    /// Memory cap: largest allowed fractional size increase.
    #[arg(long, default_value_t = 0.2)]
    pub x: f64,
    /// Slope threshold for rank selection.
    #[arg(long, default_value_t = 1e-3)]
    pub t: f64,
    /// Sketch power iterations.
    #[arg(long, default_value_t = 2)]
    pub it: usize,
    /// Alternation epochs (default: 20 at 2 bits, 1 otherwise).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 2.5)]
    pub alpha_exponent: f64,
    /// Comma-separated clip ratios in (0, 1].
    #[arg(long, value_delimiter = ',')]
    pub clip_grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = ModeArg::Asymmetric)]
    pub mode: ModeArg,
    /// Storage bits per factor entry (16 or 32).
    #[arg(long, default_value_t = 16)]
    pub d_fp: u32,
    /// Slope window.
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = ClipModeArg::Saturate)]
    pub clip_mode: ClipModeArg,
    /// Extract exactly this many components instead of selecting a rank.
    #[arg(long)]
    pub fixed_rank: Option<usize>,
    /// Initialize from a truncated exact SVD.
    #[arg(long)]
    pub svd_init: bool,
    /// Use α = 1 instead of activation-derived scales.
    #[arg(long)]
    pub no_activation_scaling: bool,
}

impl QuantArgs {
    /// Resolved and validated configuration.
    pub fn blc_config(&self, seed: u64) -> Result<BlcConfig, CliError> {
        self.blc_config_or_bits(seed, 4)
    }

    /// As [`Self::blc_config`], with `default_bits` used when `--d` is absent.
    pub fn blc_config_or_bits(&self, seed: u64, default_bits: u8) -> Result<BlcConfig, CliError> {
        let d = self.d.unwrap_or(default_bits);
        let base = BlcConfig::for_bits(d);
        let cfg = BlcConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            alpha_exponent: self.alpha_exponent,
            activation_scaling: !self.no_activation_scaling,
            rank: RankSelectionConfig {
                d,
                d_fp: self.d_fp,
                x: self.x,
                t: self.t,
                window: self.window,
                it: self.it,
                seed,
            },
            clip_grid: self.clip_grid.clone().unwrap_or_else(|| DEFAULT_CLIP_GRID.to_vec()),
            clip_mode: match self.clip_mode {
                ClipModeArg::Saturate => ClipMode::Saturate,
                ClipModeArg::Zero => ClipMode::Zero,
            },
            mode: self.mode.into(),
            group_size: self.group_size,
            use_svd_init: self.svd_init,
            fixed_rank: self.fixed_rank,
        };
        validate(&cfg)?;
        Ok(cfg)
    }
}

fn validate(cfg: &BlcConfig) -> Result<(), CliError> {
    cfg.rank.validate()?;
    cfg.quant_spec()?;
    if cfg.epochs == 0 {
        return Err(CliError::usage("--epochs must be >= 1"));
    }
    if cfg.clip_grid.is_empty() {
        return Err(CliError::usage("--clip-grid must not be empty"));
    }
    if let Some(r) = cfg.clip_grid.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(CliError::usage(format!("--clip-grid ratio {r} outside (0, 1]")));
    }
    if !(cfg.alpha_exponent.is_finite()) {
        return Err(CliError::usage("--alpha-exponent must be finite"));
    }
    if cfg.fixed_rank.is_some() && cfg.use_svd_init {
        return Err(CliError::usage("--fixed-rank and --svd-init cannot be combined"));
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct QuantizeArgs {
    /// Directory of `layer_*/` subdirectories, or a single layer directory,
    /// each holding `weight.flrt` (m×n) and `calib.flrt` (n×tokens).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub quant: QuantArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RankSweepArgs {
    /// Layer directory or `weight.flrt` file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub max_rank: usize,
    #[arg(long, default_value_t = 2)]
    pub it: usize,
    #[arg(long, default_value_t = 4)]
    pub d: u8,
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Asymmetric)]
    pub mode: ModeArg,
    /// CSV destination (default: `<out-dir>/rank_sweep.csv`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Power iterations it ∈ {0, 1, 2, 4}.
    It,
    /// One pass against the full alternation at 2 bits.
    Blc,
    /// Memory cap sweep.
    X,
    /// Flexible rank against a fixed rank.
    FixedVsFlex,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::It => "it",
            Ablation::Blc => "blc",
            Ablation::X => "x",
            Ablation::FixedVsFlex => "fixed-vs-flex",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub which: Ablation,
    /// Use these layers instead of synthetic ones.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Synthetic layers (one seed each).
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    #[arg(long, default_value_t = 256)]
    pub m: usize,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 10.0)]
    pub boost: f64,
    #[arg(long, default_value_t = 128)]
    pub tokens: usize,
    /// Deflation rank for the `it` ablation.
    #[arg(long, default_value_t = 16)]
    pub rank: usize,
    /// Baseline rank for `fixed-vs-flex`.
    #[arg(long, default_value_t = 32)]
    pub fixed: usize,
    /// Comma-separated memory caps for the `x` ablation.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5])]
    pub x_values: Vec<f64>,
    /// Alternation epochs when BLC is on.
    #[arg(long, default_value_t = 20)]
    pub blc_epochs: usize,
    #[command(flatten)]
    pub quant: QuantArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareSvdArgs {
    /// Layer directory or `weight.flrt` file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub r: usize,
    #[arg(long, default_value_t = 2)]
    pub it: usize,
}
