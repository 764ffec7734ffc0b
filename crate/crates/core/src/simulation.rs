//! Synthetic data generators, planted label noise, and the replicated
//! comparison driver behind the accuracy tables.
//!
//! Every random draw flows from a `u64` seed through ChaCha8, so a report is
//! a pure function of (protocol, seed, replications, scale).

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SparseDataset, SparseRow};
use crate::error::{Error, Result};
use crate::flipping::{fit_flipping, FlippingOptions};
use crate::prefilter::{select_k, DEFAULT_K_GRID};
use crate::robust::{predict_classes, ThetaPenalty};
use crate::selection::{
    cv_select_lambda, cv_two_stage_family, default_kappa_grid, evaluate, select_standard, Metrics, SelectionSettings,
    Validation,
};
use crate::solver::{fit_penalized, lambda_max, sigmoid, GlmFit, PenaltySpec, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureDist {
    Uniform { low: f64, high: f64 },
    StandardNormal,
}

impl FeatureDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            FeatureDist::Uniform { low, high } => rng.random_range(low..high),
            FeatureDist::StandardNormal => StandardNormal.sample(rng),
        }
    }
}

/// How labels are drawn given the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LabelModel {
    /// Bernoulli(g(θᵀx + b)) with θ_j = `coefficient` on the first
    /// `relevant_features` features and 0 elsewhere.
    Logistic { coefficient: f64, intercept: f64 },
    /// Bernoulli of the class posterior for equal-prior isotropic Gaussian
    /// classes, `N(neg_mean·1, neg_var·I)` and `N(pos_mean·1, pos_var·I)`.
    GaussianPosterior {
        neg_mean: f64,
        neg_var: f64,
        pos_mean: f64,
        pos_var: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_features: usize,
    pub relevant_features: usize,
    pub labels: LabelModel,
    pub feature_dist: FeatureDist,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl GenSpec {
    /// Uniform(−5, 5) features, θ_j = 2 on every feature, zero intercept.
    pub fn logistic(n_features: usize, n_per_split: usize, seed: u64) -> Self {
        Self {
            n_features,
            relevant_features: n_features,
            labels: LabelModel::Logistic {
                coefficient: 2.0,
                intercept: 0.0,
            },
            feature_dist: FeatureDist::Uniform { low: -5.0, high: 5.0 },
            n_train: n_per_split,
            n_dev: n_per_split,
            n_test: n_per_split,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.relevant_features > self.n_features {
            return Err(Error::InvalidArgument(format!(
                "{} relevant features exceed {} features",
                self.relevant_features, self.n_features
            )));
        }
        if let LabelModel::GaussianPosterior { neg_var, pos_var, .. } = self.labels {
            if !(neg_var > 0.0 && pos_var > 0.0) {
                return Err(Error::InvalidArgument("class variances must be positive".into()));
            }
        }
        if let FeatureDist::Uniform { low, high } = self.feature_dist {
            if !(low < high) {
                return Err(Error::InvalidArgument(format!("empty uniform range [{low}, {high})")));
            }
        }
        Ok(())
    }

    fn log_odds(&self, x: &[f64]) -> f64 {
        match self.labels {
            LabelModel::Logistic { coefficient, intercept } => {
                intercept + coefficient * x[..self.relevant_features].iter().sum::<f64>()
            }
            LabelModel::GaussianPosterior {
                neg_mean,
                neg_var,
                pos_mean,
                pos_var,
            } => {
                let sq = |mean: f64| x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
                let dim = x.len() as f64;
                0.5 * dim * (neg_var / pos_var).ln() - sq(pos_mean) / (2.0 * pos_var) + sq(neg_mean) / (2.0 * neg_var)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: SparseDataset,
    pub dev: SparseDataset,
    pub test: SparseDataset,
}

/// Which rows had their label changed, and the label before the change.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub flipped: Vec<bool>,
    pub original: Vec<u8>,
}

impl PlantedTruth {
    pub fn clean(labels: &[u8]) -> Self {
        Self {
            flipped: vec![false; labels.len()],
            original: labels.to_vec(),
        }
    }

    pub fn flipped_rows(&self) -> Vec<usize> {
        (0..self.flipped.len()).filter(|&i| self.flipped[i]).collect()
    }

    pub fn n_flipped(&self) -> usize {
        self.flipped.iter().filter(|&&f| f).count()
    }
}

/// Mixes a base seed and a stream tag into an independent seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_split(spec: &GenSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<SparseDataset> {
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..spec.n_features).map(|_| spec.feature_dist.sample(rng)).collect();
        let p = sigmoid(spec.log_odds(&x));
        labels.push(u8::from(rng.random::<f64>() < p));
        features.push(SparseRow::from_dense(&x));
    }
    SparseDataset::new(features, labels, spec.n_features)
}

/// Clean train, dev and test splits; noise is added separately.
pub fn generate_logistic(spec: &GenSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(Splits {
        train: draw_split(spec, spec.n_train, &mut rng)?,
        dev: draw_split(spec, spec.n_dev, &mut rng)?,
        test: draw_split(spec, spec.n_test, &mut rng)?,
    })
}

/// How training labels are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    /// Independent flips with probability p0 (0→1) and p1 (1→0).
    Uniform { p0: f64, p1: f64 },
    /// Every 0-labelled row whose first feature lies in `[low, high]`
    /// becomes 1.
    Interval { low: f64, high: f64 },
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::uniform(0.0, 0.0)
    }

    pub fn uniform(p0: f64, p1: f64) -> Self {
        NoiseSpec::Uniform { p0, p1 }
    }

    pub fn interval(low: f64, high: f64) -> Self {
        NoiseSpec::Interval { low, high }
    }

    pub fn is_clean(&self) -> bool {
        *self == Self::none()
    }
}

pub fn inject_noise(d: &SparseDataset, noise: &NoiseSpec, seed: u64) -> Result<(SparseDataset, PlantedTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = PlantedTruth::clean(d.labels());
    let mut labels = d.labels().to_vec();
    match *noise {
        NoiseSpec::Uniform { p0, p1 } => {
            if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) {
                return Err(Error::InvalidArgument(format!(
                    "flip probabilities must lie in [0, 1], got p0 = {p0}, p1 = {p1}"
                )));
            }
            for (i, y) in labels.iter_mut().enumerate() {
                // one draw per row keeps the stream aligned across p values
                let u: f64 = rng.random();
                let p = if *y == 0 { p0 } else { p1 };
                if u < p {
                    *y = 1 - *y;
                    truth.flipped[i] = true;
                }
            }
        }
        NoiseSpec::Interval { low, high } => {
            if d.n_features() == 0 {
                return Err(Error::InvalidArgument(
                    "interval noise needs at least one feature".into(),
                ));
            }
            for (i, y) in labels.iter_mut().enumerate() {
                let v = d.row(i).get(0);
                if *y == 0 && (low..=high).contains(&v) {
                    *y = 1;
                    truth.flipped[i] = true;
                }
            }
        }
    }
    Ok((d.with_labels(labels)?, truth))
}

/// Two isotropic Gaussian classes, each row's class drawn with
/// probability `positive_fraction` of being 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub pos_mean: Vec<f64>,
    pub pos_var: f64,
    pub neg_mean: Vec<f64>,
    pub neg_var: f64,
    pub positive_fraction: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl MixtureSpec {
    /// Positives `N((0,0), I)`, negatives `N((1,1), 1.5 I)`.
    pub fn two_dimensional(n_per_split: usize, seed: u64) -> Self {
        Self {
            pos_mean: vec![0.0, 0.0],
            pos_var: 1.0,
            neg_mean: vec![1.0, 1.0],
            neg_var: 1.5,
            positive_fraction: 0.5,
            n_train: n_per_split,
            n_dev: n_per_split,
            n_test: n_per_split,
            seed,
        }
    }
}

pub fn generate_gaussian_mixture(spec: &MixtureSpec) -> Result<Splits> {
    if !(spec.pos_var > 0.0 && spec.neg_var > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "covariance scales must be positive, got {} and {}",
            spec.pos_var, spec.neg_var
        )));
    }
    if spec.pos_mean.len() != spec.neg_mean.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.pos_mean.len(),
            actual: spec.neg_mean.len(),
        });
    }
    if !(0.0..=1.0).contains(&spec.positive_fraction) {
        return Err(Error::InvalidArgument("positive fraction outside [0, 1]".into()));
    }
    let m = spec.pos_mean.len();
    let pos = Normal::new(0.0, spec.pos_var.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let neg = Normal::new(0.0, spec.neg_var.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = |n: usize| {
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = u8::from(rng.random::<f64>() < spec.positive_fraction);
            let (mean, dist) = if y == 1 {
                (&spec.pos_mean, &pos)
            } else {
                (&spec.neg_mean, &neg)
            };
            let x: Vec<f64> = mean.iter().map(|mu| mu + dist.sample(&mut rng)).collect();
            rows.push(SparseRow::from_dense(&x));
            labels.push(y);
        }
        SparseDataset::new(rows, labels, m)
    };
    Ok(Splits {
        train: split(spec.n_train)?,
        dev: split(spec.n_dev)?,
        test: split(spec.n_test)?,
    })
}

/// Small-n, wide, sparse data with a known set of flipped labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_features: usize,
    /// Dense class-separating features at the front.
    pub relevant_features: usize,
    /// Per-feature class mean offset `±separation` on relevant features.
    pub separation: f64,
    /// Probability that an irrelevant feature is present in a row.
    pub noise_density: f64,
    pub flips_from_positive: usize,
    pub flips_from_negative: usize,
    pub seed: u64,
}

impl Default for ContaminationSpec {
    fn default() -> Self {
        Self {
            n_positive: 38,
            n_negative: 22,
            n_features: 200,
            relevant_features: 5,
            separation: 1.5,
            noise_density: 0.05,
            flips_from_positive: 5,
            flips_from_negative: 4,
            seed: 0,
        }
    }
}

/// Draws the data, then flips labels of randomly chosen rows of each class.
pub fn generate_contaminated(spec: &ContaminationSpec) -> Result<(SparseDataset, PlantedTruth)> {
    if spec.relevant_features > spec.n_features
        || spec.flips_from_positive > spec.n_positive
        || spec.flips_from_negative > spec.n_negative
        || !(0.0..=1.0).contains(&spec.noise_density)
    {
        return Err(Error::InvalidArgument(format!(
            "inconsistent contamination spec {spec:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_positive + spec.n_negative;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = u8::from(i < spec.n_positive);
        let sign = if y == 1 { 1.0 } else { -1.0 };
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for j in 0..spec.n_features {
            if j < spec.relevant_features {
                let z: f64 = StandardNormal.sample(&mut rng);
                idx.push(j);
                val.push(sign * spec.separation + z);
            } else if rng.random::<f64>() < spec.noise_density {
                idx.push(j);
                val.push(StandardNormal.sample(&mut rng));
            }
        }
        rows.push(SparseRow::new(idx, val)?);
        labels.push(y);
    }
    let clean = SparseDataset::new(rows, labels.clone(), spec.n_features)?;
    let mut truth = PlantedTruth::clean(&labels);
    let pos: Vec<usize> = (0..spec.n_positive).collect();
    let neg: Vec<usize> = (spec.n_positive..n).collect();
    for (pool, count) in [(pos, spec.flips_from_positive), (neg, spec.flips_from_negative)] {
        for k in rand::seq::index::sample(&mut rng, pool.len(), count) {
            let i = pool[k];
            labels[i] = 1 - labels[i];
            truth.flipped[i] = true;
        }
    }
    Ok((clean.with_labels(labels)?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Standard,
    Robust,
    Flipping,
    Prefilter,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Standard, Method::Robust, Method::Flipping, Method::Prefilter];

    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Robust => "robust",
            Method::Flipping => "flipping",
            Method::Prefilter => "prefilter",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = s.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Table1Clean,
    Table1P01,
    Table1P02,
    Table1P03,
    Table1P03P101,
    Table1RegP03,
    Table1RegP03P101,
    ExpB1,
    ExpB2,
    ExpB3,
    ExpB4,
    Gauss6,
    Gauss6P03,
}

impl Protocol {
    pub const ALL: [Protocol; 13] = [
        Protocol::Table1Clean,
        Protocol::Table1P01,
        Protocol::Table1P02,
        Protocol::Table1P03,
        Protocol::Table1P03P101,
        Protocol::Table1RegP03,
        Protocol::Table1RegP03P101,
        Protocol::ExpB1,
        Protocol::ExpB2,
        Protocol::ExpB3,
        Protocol::ExpB4,
        Protocol::Gauss6,
        Protocol::Gauss6P03,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Table1Clean => "table1-clean",
            Protocol::Table1P01 => "table1-p01",
            Protocol::Table1P02 => "table1-p02",
            Protocol::Table1P03 => "table1-p03",
            Protocol::Table1P03P101 => "table1-p03-p101",
            Protocol::Table1RegP03 => "table1-reg-p03",
            Protocol::Table1RegP03P101 => "table1-reg-p03-p101",
            Protocol::ExpB1 => "expB1",
            Protocol::ExpB2 => "expB2",
            Protocol::ExpB3 => "expB3",
            Protocol::ExpB4 => "expB4",
            Protocol::Gauss6 => "gauss6",
            Protocol::Gauss6P03 => "gauss6-p03",
        }
    }

    /// θ gets an L1 penalty tuned on the dev split.
    pub fn regularized(self) -> bool {
        matches!(self, Protocol::Table1RegP03 | Protocol::Table1RegP03P101)
    }

    pub fn noise(self) -> NoiseSpec {
        match self {
            Protocol::Table1Clean | Protocol::Gauss6 => NoiseSpec::none(),
            Protocol::Table1P01 => NoiseSpec::uniform(0.1, 0.0),
            Protocol::Table1P02 => NoiseSpec::uniform(0.2, 0.0),
            Protocol::Table1P03 | Protocol::Table1RegP03 => NoiseSpec::uniform(0.3, 0.0),
            Protocol::Table1P03P101 | Protocol::Table1RegP03P101 => NoiseSpec::uniform(0.3, 0.1),
            Protocol::ExpB1 | Protocol::ExpB2 | Protocol::ExpB4 | Protocol::Gauss6P03 => NoiseSpec::uniform(0.3, 0.0),
            Protocol::ExpB3 => NoiseSpec::interval(-5.0, -4.0),
        }
    }

    /// Rows per split at scale 1. For the mixture, 200 rows put the
    /// standard error near half a point at 50 replications.
    pub fn base_size(self) -> usize {
        match self {
            Protocol::Gauss6 | Protocol::Gauss6P03 => 200,
            p if p.regularized() => 100,
            _ => 500,
        }
    }

    /// Clean splits for one replication.
    pub fn generate(self, seed: u64, scale: f64) -> Result<Splits> {
        let n = scaled(self.base_size(), scale);
        match self {
            Protocol::Gauss6 | Protocol::Gauss6P03 => generate_gaussian_mixture(&MixtureSpec::two_dimensional(n, seed)),
            _ => generate_logistic(&self.gen_spec(n, seed)),
        }
    }

    /// Generator settings for the logistic-family protocols.
    pub fn gen_spec(self, n: usize, seed: u64) -> GenSpec {
        let mut spec = match self {
            Protocol::Table1RegP03 | Protocol::Table1RegP03P101 => {
                let mut s = GenSpec::logistic(20, n, seed);
                s.relevant_features = 5;
                s
            }
            Protocol::ExpB1 | Protocol::ExpB2 | Protocol::ExpB4 => GenSpec::logistic(50, n, seed),
            Protocol::ExpB3 => GenSpec::logistic(1, n, seed),
            _ => GenSpec::logistic(10, n, seed),
        };
        if self == Protocol::ExpB2 {
            spec.feature_dist = FeatureDist::StandardNormal;
        }
        if self == Protocol::ExpB4 {
            spec.labels = LabelModel::GaussianPosterior {
                neg_mean: -2.0,
                neg_var: 2.0,
                pos_mean: 2.0,
                pos_var: 1.0,
            };
        }
        spec
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Protocol::ALL.iter().map(|p| p.name()).collect();
            Error::InvalidArgument(format!("unknown protocol '{s}' (known: {})", known.join(", ")))
        })
    }
}

fn scaled(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub methods: Vec<Method>,
    /// Before scaling.
    pub replications: usize,
    pub seed: u64,
    pub scale: f64,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, methods: Vec<Method>, replications: usize, seed: u64) -> Self {
        Self {
            protocol,
            methods,
            replications,
            seed,
            scale: 1.0,
        }
    }

    pub fn effective_replications(&self) -> usize {
        ((self.replications as f64 * self.scale).round() as usize).max(1)
    }

    pub fn rows_per_split(&self) -> usize {
        scaled(self.protocol.base_size(), self.scale)
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods requested".into()));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "scale must lie in (0, 1], got {}",
                self.scale
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("need at least one replication".into()));
        }
        Ok(())
    }
}

/// One method's outcome in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// Test accuracy in percent; `None` when the method failed.
    pub accuracy: Option<f64>,
    /// Full confusion counts and rates on the test split.
    pub metrics: Option<Metrics>,
    /// Selected hyperparameters, or the error message on failure.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub n_flipped_train: usize,
    pub outcomes: Vec<MethodOutcome>,
}

/// Mean over successful replications and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Self {
        let (mean, standard_error) = mean_and_standard_error(values);
        Self { mean, standard_error }
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.standard_error)
    }
}

/// Test-set figures for one method, all in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Accuracy mean.
    pub mean: f64,
    /// Sample standard deviation over √(successful replications).
    pub standard_error: f64,
    pub precision: Estimate,
    pub recall: Estimate,
    pub f1: Estimate,
    pub n_ok: usize,
    pub n_failed: usize,
}

impl MethodSummary {
    pub fn accuracy(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            standard_error: self.standard_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows_per_split: usize,
    pub replications: Vec<ReplicationResult>,
    pub summaries: Vec<MethodSummary>,
}

impl ExperimentReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn all_succeeded(&self) -> bool {
        self.summaries.iter().all(|s| s.n_failed == 0)
    }

    /// Per-replication accuracies of one method, failures skipped.
    pub fn accuracies(&self, method: Method) -> Vec<f64> {
        self.replications
            .iter()
            .flat_map(|r| r.outcomes.iter())
            .filter(|o| o.method == method)
            .filter_map(|o| o.accuracy)
            .collect()
    }

    /// Per-replication test metrics of one method, failures skipped.
    pub fn metrics(&self, method: Method) -> Vec<Metrics> {
        self.replications
            .iter()
            .flat_map(|r| r.outcomes.iter())
            .filter(|o| o.method == method)
            .filter_map(|o| o.metrics)
            .collect()
    }

    /// Per-replication details of one method.
    pub fn details(&self, method: Method) -> Vec<&str> {
        self.replications
            .iter()
            .flat_map(|r| r.outcomes.iter())
            .filter(|o| o.method == method)
            .map(|o| o.detail.as_str())
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let methods: Vec<&str> = c.methods.iter().map(|m| m.name()).collect();
        let _ = writeln!(out, "# tool\trobustlr {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# protocol\t{}", c.protocol);
        let _ = writeln!(out, "# methods\t{}", methods.join(","));
        let _ = writeln!(out, "# seed\t{}", c.seed);
        let _ = writeln!(out, "# scale\t{}", c.scale);
        let _ = writeln!(
            out,
            "# replications\t{} (requested {})",
            c.effective_replications(),
            c.replications
        );
        let _ = writeln!(
            out,
            "# replication_seeds\t{}..{}",
            c.seed,
            c.seed.wrapping_add(c.effective_replications() as u64)
        );
        let _ = writeln!(out, "# rows_per_split\t{}", self.rows_per_split);
        let noise = c.protocol.noise();
        let _ = writeln!(out, "# noise\t{}", serde_json::to_string(&noise).unwrap_or_default());
        let _ = writeln!(
            out,
            "# lambda_grid\tauto: 20 points from the shift lambda max down 4 decades"
        );
        if c.protocol.regularized() {
            let _ = writeln!(out, "# kappa_grid\t7 points from the L1 lambda max down 3 decades");
        }
        let _ = writeln!(out, "# k_grid\t{DEFAULT_K_GRID:?}");
        let _ = writeln!(out, "protocol\t{}", methods.join("\t"));
        // accuracy row first, labelled with the protocol
        let rows: [(String, fn(&MethodSummary) -> Estimate); 4] = [
            (c.protocol.to_string(), MethodSummary::accuracy),
            ("precision".into(), |s| s.precision),
            ("recall".into(), |s| s.recall),
            ("f1".into(), |s| s.f1),
        ];
        for (label, pick) in rows {
            let cells: Vec<String> = self.summaries.iter().map(|s| pick(s).to_string()).collect();
            let _ = writeln!(out, "{label}\t{}", cells.join("\t"));
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "replication\tseed\tflipped\tmethod\taccuracy\tprecision\trecall\tf1\tdetail"
        );
        for r in &self.replications {
            for o in &r.outcomes {
                let acc = o.accuracy.map_or_else(|| "NA".to_string(), |a| format!("{a:.4}"));
                let rates = o.metrics.map_or_else(
                    || "NA\tNA\tNA".to_string(),
                    |m| {
                        format!(
                            "{:.4}\t{:.4}\t{:.4}",
                            100.0 * m.precision,
                            100.0 * m.recall,
                            100.0 * m.f1
                        )
                    },
                );
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{acc}\t{rates}\t{}",
                    r.index, r.seed, r.n_flipped_train, o.method, o.detail
                );
            }
        }
        out
    }
}

/// Ridge strengths tried for the flipping model, strongest first.
const FLIPPING_SIGMA2_GRID: [Option<f64>; 5] = [Some(0.1), Some(1.0), Some(10.0), Some(100.0), None];

fn test_metrics(fit: &GlmFit, test: &SparseDataset) -> Result<Metrics> {
    evaluate(&predict_classes(fit, test)?, test.labels())
}

fn dev_accuracy(fit: &GlmFit, dev: &SparseDataset) -> Result<f64> {
    Ok(test_metrics(fit, dev)?.accuracy)
}

/// κ grid for L1 fits on `d`: 7 points from the L1 path maximum.
pub fn kappa_grid(d: &SparseDataset, opts: &SolverOptions) -> Result<Vec<ThetaPenalty>> {
    let (kmax, _) = lambda_max(d, &PenaltySpec::l1(1.0), opts)?;
    Ok(default_kappa_grid(kmax.max(1e-8), 7)
        .into_iter()
        .map(|kappa| ThetaPenalty::L1 { kappa })
        .collect())
}

fn run_method(
    method: Method,
    protocol: Protocol,
    train: &SparseDataset,
    dev: &SparseDataset,
    test: &SparseDataset,
) -> Result<(Metrics, String)> {
    let solver = SolverOptions::default();
    let settings = SelectionSettings {
        validation: Validation::Holdout(dev),
        ..SelectionSettings::default()
    };
    let theta_none = ThetaPenalty::None;
    match method {
        Method::Standard if protocol.regularized() => {
            let sel = select_standard(train, &kappa_grid(train, &solver)?, &settings)?;
            Ok((test_metrics(&sel.fit, test)?, format!("{}", sel.theta_penalty)))
        }
        Method::Standard => {
            let fit = fit_penalized(train, &PenaltySpec::none(), &solver)?;
            Ok((test_metrics(&fit, test)?, "-".into()))
        }
        Method::Robust if protocol.regularized() => {
            let sel = cv_two_stage_family(train, &kappa_grid(train, &solver)?, &settings)?;
            Ok((
                test_metrics(&sel.fit.theta, test)?,
                format!(
                    "{};lambda={:.6e};shifts={}",
                    sel.theta_penalty,
                    sel.lambda,
                    sel.fit.nonzero_shifts()
                ),
            ))
        }
        Method::Robust => {
            let sel = cv_select_lambda(train, theta_none, &settings)?;
            Ok((
                test_metrics(&sel.fit.theta, test)?,
                format!("lambda={:.6e};shifts={}", sel.lambda, sel.fit.nonzero_shifts()),
            ))
        }
        Method::Flipping => {
            let mut best: Option<(f64, Option<f64>, crate::flipping::FlippingFit)> = None;
            for sigma2 in FLIPPING_SIGMA2_GRID {
                let opts = FlippingOptions {
                    sigma2,
                    ..FlippingOptions::default()
                };
                let fit = fit_flipping(train, &opts)?;
                let acc = dev_accuracy(&fit.theta, dev)?;
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, sigma2, fit));
                }
            }
            let (_, sigma2, fit) = best.expect("nonempty grid");
            let g = &fit.gamma_matrix;
            Ok((
                test_metrics(&fit.theta, test)?,
                format!(
                    "sigma2={};gamma01={:.4};gamma10={:.4};em_iters={}",
                    sigma2.map_or_else(|| "none".to_string(), |v| v.to_string()),
                    g.get(0, 1),
                    g.get(1, 0),
                    fit.n_iterations
                ),
            ))
        }
        Method::Prefilter => {
            let sel = select_k(train, dev, &DEFAULT_K_GRID, theta_none, &solver)?;
            Ok((
                test_metrics(&sel.fit.theta, test)?,
                format!("k={};discarded={}", sel.fit.k, sel.fit.discarded.len()),
            ))
        }
    }
}

/// Generates, corrupts train and dev, fits every method and scores it on
/// the clean test split.
pub fn run_replication(config: &ExperimentConfig, index: usize) -> Result<ReplicationResult> {
    let seed = config.seed.wrapping_add(index as u64);
    let splits = config.protocol.generate(derive_seed(seed, 1), config.scale)?;
    let noise = config.protocol.noise();
    let (train, truth) = inject_noise(&splits.train, &noise, derive_seed(seed, 2))?;
    let (dev, _) = inject_noise(&splits.dev, &noise, derive_seed(seed, 3))?;
    let outcomes = config
        .methods
        .iter()
        .map(
            |&method| match run_method(method, config.protocol, &train, &dev, &splits.test) {
                Ok((m, detail)) => MethodOutcome {
                    method,
                    accuracy: Some(100.0 * m.accuracy),
                    metrics: Some(m),
                    detail,
                },
                Err(e) => {
                    log::warn!("replication {index}, {method}: {e}");
                    MethodOutcome {
                        method,
                        accuracy: None,
                        metrics: None,
                        detail: format!("error: {e}"),
                    }
                }
            },
        )
        .collect();
    Ok(ReplicationResult {
        index,
        seed,
        n_flipped_train: truth.n_flipped(),
        outcomes,
    })
}

/// Mean and standard error of the mean; zero error for a single value.
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn run_comparison(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let replications = (0..config.effective_replications())
        .into_par_iter()
        .map(|i| run_replication(config, i))
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport {
        config: config.clone(),
        rows_per_split: config.rows_per_split(),
        replications,
        summaries: Vec::new(),
    };
    report.summaries = config
        .methods
        .iter()
        .map(|&method| {
            let accs = report.accuracies(method);
            let (mean, standard_error) = mean_and_standard_error(&accs);
            let metrics = report.metrics(method);
            let rate =
                |pick: fn(&Metrics) -> f64| Estimate::of(&metrics.iter().map(|m| 100.0 * pick(m)).collect::<Vec<_>>());
            MethodSummary {
                method,
                mean,
                standard_error,
                precision: rate(|m| m.precision),
                recall: rate(|m| m.recall),
                f1: rate(|m| m.f1),
                n_ok: accs.len(),
                n_failed: report.replications.len() - accs.len(),
            }
        })
        .collect();
    Ok(report)
}
