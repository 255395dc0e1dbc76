//! Flag definitions. Every command's flags mirror the keys of its `--config`
//! object; a flag given on the command line wins over the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "SYMCANON_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "symcanon",
    version,
    about = "Canonicalize molecules, train and sample canonical flows, and check the variance theory.",
    after_help = "Exit codes: 0 success, 1 check or validation failure, 2 usage error, 3 I/O error.\n\
                  Every command writes a JSON manifest next to its outputs; the manifest's `config` \
                  object (or the manifest itself) is accepted by --config."
)]
pub struct Cli {
    /// JSON options for the command. Unknown keys are rejected.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Directory for outputs whose paths are not given explicitly.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "symcanon-out", value_name = "DIR")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Map a molecule to its canonical representative and write per-atom ranks.
    Canonicalize(CanonicalizeArgs),
    /// Train a flow on the built-in C4 blobs or on a list of molecule files.
    Train(TrainArgs),
    /// Sample molecules from a trained checkpoint.
    Sample(SampleArgs),
    /// Run the Monte Carlo and closed-form theory checks.
    VerifyTheory(VerifyArgs),
    /// Score a directory of molecules and plot a training trace.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupArg {
    Perm,
    PermSo3,
}

impl From<GroupArg> for symcanon::canonicalizer::GroupChoice {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Perm => Self::Perm,
            GroupArg::PermSo3 => Self::PermSo3,
        }
    }
}

impl From<GroupArg> for symcanon::sampler::SampleGroup {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Perm => Self::Perm,
            GroupArg::PermSo3 => Self::PermSo3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingArg {
    /// Fiedler-vector order.
    Spectral,
    /// Hop-count profile order.
    Multihop,
    /// Heavier atoms first.
    Atomic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CanonicalizeArgs {
    /// Input molecule (.xyz, .sdf or .mol).
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in", skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,

    /// Symmetry group to quotient out [default: perm-so3].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupArg>,

    /// Atom ordering [default: spectral].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordering: Option<OrderingArg>,

    /// Hop depth of the multihop ordering [default: 3].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multihop_depth: Option<usize>,

    /// Canonical molecule output (.xyz or .sdf).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    /// Per-atom ranks CSV.
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetArg {
    /// Built-in C4-symmetric four-blob target in the plane.
    C4,
    /// Molecule files listed by --data.
    Molecules,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyModeArg {
    /// Train on one blob (the canonical slice).
    Canonical,
    /// Train on all four blobs.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OtArg {
    Off,
    Always,
    /// OT with probability decaying linearly to zero over --ot-epochs.
    Anneal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorArg {
    /// Moment-matched to the canonical training data.
    Aligned,
    Isotropic,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Training data [default: molecules].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetArg>,

    /// Molecule files: a directory, or a text file with one path per line
    /// (relative to the list file).
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,

    /// Validation molecules, in the same form as --data.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,

    /// C4 dataset only [default: canonical].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ToyModeArg>,

    /// Epochs; 0 writes the initial parameters.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,

    /// Minibatch OT pairing [default: off].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ot: Option<OtArg>,

    /// Length of the OT annealing schedule [default: --epochs].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ot_epochs: Option<usize>,

    /// Canonicalization group for molecules [default: perm-so3].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupArg>,

    /// Noise prior for molecules [default: aligned].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorArg>,

    /// Output directory for checkpoint, trace and manifest.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeArg {
    /// Fixed index ranks.
    A,
    /// Ranks re-estimated every step.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankModeArg {
    /// Ranks from the network's rank head.
    Predict,
    /// Re-canonicalize the state after each step.
    Canonicalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Xyz,
    Sdf,
}

impl FormatArg {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Xyz => "xyz",
            Self::Sdf => "sdf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridArg {
    Uniform,
    /// Finer steps near the data end.
    Quadratic,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,

    /// Number of molecules [default: 10].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,

    /// Euler steps [default: 20].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,

    /// [default: a]
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeArg>,

    /// How regime B refreshes ranks [default: predict].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_mode: Option<RankModeArg>,

    /// Guidance weight between rank-free (0) and rank-conditioned (1)
    /// predictions [default: 1].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg_scale: Option<f64>,

    /// [default: aligned]
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorArg>,

    /// Group used for re-canonicalization and Haar randomization
    /// [default: perm-so3].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupArg>,

    /// Randomize each sample by a uniform group element [default: on].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub haar: Option<OnOff>,

    /// [default: uniform]
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridArg>,

    /// Atoms per molecule; drawn from the training sizes when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// [default: xyz]
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<FormatArg>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemArg {
    Signflip,
    C4,
    S3,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// [default: all]
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemArg>,

    /// Monte Carlo samples per check, e.g. 1e6 [default: 1e6].
    #[arg(long, value_parser = crate::config::parse_count)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Report JSON.
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    /// Corrupt one reference value so the run fails.
    #[arg(long, hide = true)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub inject_wrong_reference: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetricsArgs {
    /// Directory of .xyz/.sdf molecules to score.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,

    /// Training trace CSV to plot.
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}
