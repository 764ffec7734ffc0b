use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use robustlr::model_file::ModelKind;
use robustlr::simulation::{parse_methods, Method, Protocol};

#[derive(Debug, Parser)]
#[command(
    name = "robustlr",
    version,
    about = "Logistic regression that tolerates mislabeled training data"
)]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it to a model file.
    Train(TrainArgs),
    /// Score a dataset with a model file.
    Predict(PredictArgs),
    /// Tune penalties by cross-validation and report the fold table.
    Cv(CvArgs),
    /// Run a synthetic comparison protocol.
    Simulate(SimulateArgs),
    /// Tune and fit the robust model, then list rows with nonzero shifts.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Standard,
    Robust,
    Flipping,
    Prefilter,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Standard => ModelKind::Standard,
            ModelArg::Robust => ModelKind::Robust,
            ModelArg::Flipping => ModelKind::Flipping,
            ModelArg::Prefilter => ModelKind::Prefilter,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Training data in sparse text format.
    #[arg(long)]
    pub data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Shift penalty (robust model).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// L1 penalty on θ.
    #[arg(long, conflicts_with = "sigma2")]
    pub kappa: Option<f64>,
    /// Gaussian prior variance on θ (L2 penalty 1/(2σ²)).
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Neighbourhood size (prefilter model).
    #[arg(long)]
    pub k: Option<usize>,
    /// Start EM from a seeded random flipping matrix instead of 0.9 on the diagonal.
    #[arg(long)]
    pub random_init: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_em_iters: usize,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit the metrics block (labels in the input are placeholders).
    #[arg(long)]
    pub no_metrics: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyKind {
    None,
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Procedure {
    /// Step one picks λ per θ penalty by training accuracy, step two picks
    /// the θ penalty by held-out accuracy.
    TwoStage,
    /// θ penalty by standard logistic regression, then λ by the robust model.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Accuracy,
    F1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    WithShifts,
    ThetaOnly,
}

/// Grids and validation settings shared by `cv` and `audit`.
#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = PenaltyKind::L1)]
    pub theta_penalty: PenaltyKind,
    /// Fixed κ (same as a one-point κ grid).
    #[arg(long, conflicts_with_all = ["sigma2", "kappa_grid"])]
    pub kappa: Option<f64>,
    /// Fixed σ² (same as a one-point σ² grid).
    #[arg(long, conflicts_with = "sigma2_grid")]
    pub sigma2: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub kappa_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sigma2_grid: Option<Vec<f64>>,
    /// Fixed λ (same as a one-point λ grid).
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    pub lambda_points: usize,
    #[arg(long, default_value_t = 4.0)]
    pub lambda_decades: f64,
    #[arg(long, value_enum, default_value_t = Procedure::TwoStage)]
    pub procedure: Procedure,
    /// How step one of the two-stage procedure scores training accuracy.
    #[arg(long, value_enum, default_value_t = FamilyArg::WithShifts)]
    pub family_accuracy: FamilyArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CriterionArg::Accuracy)]
    pub criterion: CriterionArg,
    /// Largest allowed fraction of nonzero shifts.
    #[arg(long)]
    pub noise_budget: Option<f64>,
    /// Report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Which model the tuned penalties are for.
    #[arg(long, value_enum, default_value_t = CvModel::Robust)]
    pub model: CvModel,
    /// Also write the model fitted with the selected penalties.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[command(flatten)]
    pub tune: TuneArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CvModel {
    Standard,
    Robust,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub tune: TuneArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_protocol)]
    pub protocol: Protocol,
    #[arg(long, value_parser = parse_method_list, default_value = "standard,robust")]
    pub methods: MethodList,
    #[arg(long, default_value_t = 50)]
    pub replications: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shrinks rows per split and replications; 1 is the full protocol.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct MethodList(pub Vec<Method>);

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|e: robustlr::Error| e.to_string())
}

fn parse_method_list(s: &str) -> Result<MethodList, String> {
    parse_methods(s).map(MethodList).map_err(|e| e.to_string())
}
