//! Logistic regression with one L1-penalized shift parameter per training
//! row.
//!
//! The model replaces `g(θᵀx_i)` with `g(θᵀx_i + γ_i)` and penalizes
//! `λ Σ|γ_i|`. Shifts are trained as `n` extra design columns, `[X | s·I_n]`,
//! so the whole problem is one call to [`fit_penalized`]. At prediction time
//! only θ is used.
//!
//! At an optimum a nonzero `γ_i` always has the sign of the observed label
//! (positive on rows labelled 1, negative on rows labelled 0): the shift
//! moves the row's log-odds toward the label the model could not fit. A
//! nonzero shift therefore marks the row as suspected of carrying the
//! opposite label.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{augment_with_identity, Design, SparseDataset, SparseRow};
use crate::error::{Error, Result};
use crate::solver::{fit_penalized, log_loss, sigmoid, GlmFit, PenaltySpec, SolverOptions};

/// Penalty on the original coefficients θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThetaPenalty {
    None,
    L1 { kappa: f64 },
    L2 { sigma2: f64 },
}

impl ThetaPenalty {
    /// The equivalent penalty for a plain (shift-free) fit over `m` features.
    pub fn glm_penalty(&self) -> PenaltySpec {
        match *self {
            ThetaPenalty::None => PenaltySpec::none(),
            ThetaPenalty::L1 { kappa } => PenaltySpec::l1(kappa),
            ThetaPenalty::L2 { sigma2 } => PenaltySpec::l2_sigma2(sigma2),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ThetaPenalty::None => Ok(()),
            ThetaPenalty::L1 { kappa } if kappa > 0.0 && kappa.is_finite() => Ok(()),
            ThetaPenalty::L2 { sigma2 } if sigma2 > 0.0 && sigma2.is_finite() => Ok(()),
            other => Err(Error::InvalidArgument(format!("invalid theta penalty {other:?}"))),
        }
    }

    fn penalty_value(&self, theta: &[f64]) -> f64 {
        match *self {
            ThetaPenalty::None => 0.0,
            ThetaPenalty::L1 { kappa } => kappa * theta.iter().map(|t| t.abs()).sum::<f64>(),
            ThetaPenalty::L2 { sigma2 } => theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * sigma2),
        }
    }
}

impl fmt::Display for ThetaPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaPenalty::None => write!(f, "none"),
            ThetaPenalty::L1 { kappa } => write!(f, "l1(kappa={kappa})"),
            ThetaPenalty::L2 { sigma2 } => write!(f, "l2(sigma2={sigma2})"),
        }
    }
}

/// How an L1 penalty on θ is combined with the shift penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftRoute {
    /// Uniform L1 at κ with shift columns scaled by κ/λ.
    #[default]
    Rescaled,
    /// Unit shift columns with L1 factor λ/κ.
    PenaltyFactors,
}

#[derive(Debug, Clone, Default)]
pub struct RobustOptions {
    pub solver: SolverOptions,
    pub route: ShiftRoute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFit {
    /// Intercept and coefficients over the original features.
    pub theta: GlmFit,
    /// One shift per training row, on the original scale.
    pub gamma: Vec<f64>,
    pub lambda: f64,
    pub theta_penalty: ThetaPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: u8,
    pub probability: f64,
}

impl Prediction {
    /// Class 1 iff the probability is strictly above one half.
    pub fn from_probability(probability: f64) -> Self {
        Self {
            class: u8::from(probability > 0.5),
            probability,
        }
    }
}

impl RobustFit {
    pub fn nonzero_shifts(&self) -> usize {
        self.gamma.iter().filter(|g| **g != 0.0).count()
    }

    pub fn nonzero_fraction(&self) -> f64 {
        if self.gamma.is_empty() {
            0.0
        } else {
            self.nonzero_shifts() as f64 / self.gamma.len() as f64
        }
    }
}

/// Shift-column scale and penalty for the augmented problem.
fn augmented_setup(
    n_rows: usize,
    n_features: usize,
    lambda: f64,
    theta_penalty: ThetaPenalty,
    route: ShiftRoute,
) -> (f64, PenaltySpec) {
    let factors = |orig: f64, shift: f64| {
        let mut p = vec![orig; n_features];
        p.resize(n_features + n_rows, shift);
        p
    };
    match theta_penalty {
        ThetaPenalty::None => (1.0, PenaltySpec::l1(lambda).with_penalty_factors(factors(0.0, 1.0))),
        ThetaPenalty::L1 { kappa } => match route {
            ShiftRoute::Rescaled => (kappa / lambda, PenaltySpec::l1(kappa)),
            ShiftRoute::PenaltyFactors => (
                1.0,
                PenaltySpec::l1(kappa).with_penalty_factors(factors(1.0, lambda / kappa)),
            ),
        },
        ThetaPenalty::L2 { sigma2 } => (
            1.0,
            PenaltySpec {
                l1_global: lambda,
                l2_global: 1.0 / (2.0 * sigma2),
                penalty_factors: Some(factors(0.0, 1.0)),
                l2_factors: Some(factors(1.0, 0.0)),
            },
        ),
    }
}

pub fn fit_robust(
    d: &SparseDataset,
    lambda: f64,
    theta_penalty: ThetaPenalty,
    opts: &RobustOptions,
) -> Result<RobustFit> {
    fit_robust_from(d, lambda, theta_penalty, opts, None)
}

/// As [`fit_robust`], warm-started from a fit on the same rows.
pub fn fit_robust_from(
    d: &SparseDataset,
    lambda: f64,
    theta_penalty: ThetaPenalty,
    opts: &RobustOptions,
    warm: Option<&RobustFit>,
) -> Result<RobustFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    theta_penalty.validate()?;
    let (n, m) = (d.n_rows(), d.n_features());
    let (scale, pen) = augmented_setup(n, m, lambda, theta_penalty, opts.route);
    let aug = augment_with_identity(d, scale)?;

    let mut solver = opts.solver.clone();
    if let Some(w) = warm {
        if w.gamma.len() != n || w.theta.coefficients.len() != m {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: w.gamma.len(),
            });
        }
        let mut coefs = w.theta.coefficients.clone();
        coefs.extend(w.gamma.iter().map(|g| g / scale));
        solver = solver.with_warm_start(w.theta.intercept, coefs);
    } else if let Some(ws) = &solver.warm_start {
        if ws.coefficients.len() != m + n {
            return Err(Error::DimensionMismatch {
                expected: m + n,
                actual: ws.coefficients.len(),
            });
        }
    }

    let mut fit = fit_penalized(&aug, &pen, &solver)?;
    let gamma = fit.coefficients.split_off(m).into_iter().map(|g| g * scale).collect();
    Ok(RobustFit {
        theta: fit,
        gamma,
        lambda,
        theta_penalty,
    })
}

/// Fits along a descending list of λ, warm-starting each from the last.
pub fn fit_robust_path(
    d: &SparseDataset,
    lambdas: &[f64],
    theta_penalty: ThetaPenalty,
    opts: &RobustOptions,
) -> Result<Vec<RobustFit>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda path".into()));
    }
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("lambda path must be descending".into()));
    }
    let mut out: Vec<RobustFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let fit = fit_robust_from(d, lambda, theta_penalty, opts, out.last())?;
        out.push(fit);
    }
    Ok(out)
}

/// Smallest λ at which every shift is zero, given the θ penalty.
pub fn shift_lambda_max(d: &SparseDataset, theta_penalty: ThetaPenalty, opts: &SolverOptions) -> Result<f64> {
    theta_penalty.validate()?;
    let base = fit_penalized(d, &theta_penalty.glm_penalty(), opts)?;
    let mut lmax = 0.0f64;
    for i in 0..d.n_rows() {
        let eta = base.linear_predictor(d.row(i).iter())?;
        let r = d.weight(i) * (sigmoid(eta) - f64::from(d.label(i)));
        lmax = lmax.max(r.abs());
    }
    Ok(lmax)
}

/// Negated penalized log-likelihood evaluated directly on (θ, γ).
pub fn robust_objective(
    d: &SparseDataset,
    intercept: f64,
    theta: &[f64],
    gamma: &[f64],
    lambda: f64,
    theta_penalty: ThetaPenalty,
) -> Result<f64> {
    if theta.len() != d.n_features() {
        return Err(Error::DimensionMismatch {
            expected: d.n_features(),
            actual: theta.len(),
        });
    }
    if gamma.len() != d.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: d.n_rows(),
            actual: gamma.len(),
        });
    }
    let mut loss = 0.0;
    for i in 0..d.n_rows() {
        let w = d.weight(i);
        if w != 0.0 {
            let eta = shifted_log_odds(d.row(i), theta, gamma[i], intercept);
            loss += w * log_loss(eta, d.label(i));
        }
    }
    let shift_penalty = lambda * gamma.iter().map(|g| g.abs()).sum::<f64>();
    Ok(loss + shift_penalty + theta_penalty.penalty_value(theta))
}

/// `θᵀx + γ + b`, accumulated in row order.
pub fn shifted_log_odds(row: &SparseRow, theta: &[f64], gamma: f64, intercept: f64) -> f64 {
    let mut acc = 0.0;
    for (j, v) in row.iter() {
        acc += theta[j] * v;
    }
    acc += gamma;
    acc + intercept
}

/// Prediction from θ alone.
pub fn predict(fit: &RobustFit, x: &SparseRow) -> Result<Prediction> {
    predict_glm(&fit.theta, x)
}

pub fn predict_glm(fit: &GlmFit, x: &SparseRow) -> Result<Prediction> {
    Ok(Prediction::from_probability(fit.probability(x.iter())?))
}

/// Predicted classes for every row of `d`.
pub fn predict_classes(fit: &GlmFit, d: &SparseDataset) -> Result<Vec<u8>> {
    d.rows().iter().map(|r| predict_glm(fit, r).map(|p| p.class)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suspect {
    pub row: usize,
    pub gamma: f64,
    pub observed_label: u8,
    pub suspected_label: u8,
}

impl Suspect {
    pub fn direction(&self) -> String {
        format!("labeled {}, suspected {}", self.observed_label, self.suspected_label)
    }
}

/// Rows with a nonzero shift, largest |γ| first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuspectReport {
    pub entries: Vec<Suspect>,
}

impl SuspectReport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rows(&self) -> Vec<usize> {
        self.entries.iter().map(|s| s.row).collect()
    }

    /// `index  gamma  observed_label  suspected_label`, tab-separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("index\tgamma\tobserved_label\tsuspected_label\n");
        for s in &self.entries {
            out.push_str(&format!(
                "{}\t{:.17e}\t{}\t{}\n",
                s.row, s.gamma, s.observed_label, s.suspected_label
            ));
        }
        out
    }
}

pub fn suspect_report(fit: &RobustFit, d: &SparseDataset) -> Result<SuspectReport> {
    suspect_report_from_gamma(&fit.gamma, d.labels())
}

pub fn suspect_report_from_gamma(gamma: &[f64], labels: &[u8]) -> Result<SuspectReport> {
    if gamma.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: gamma.len(),
        });
    }
    let mut entries: Vec<Suspect> = gamma
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (g, _))| **g != 0.0)
        .map(|(row, (&gamma, &y))| Suspect {
            row,
            gamma,
            observed_label: y,
            suspected_label: 1 - y,
        })
        .collect();
    entries.sort_by(|a, b| b.gamma.abs().total_cmp(&a.gamma.abs()).then(a.row.cmp(&b.row)));
    Ok(SuspectReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{negative_penalized_loglik, smooth_gradient};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_1d(n: usize, seed: u64) -> SparseDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-5.0..5.0)]).collect();
        let labels = rows
            .iter()
            .map(|x| u8::from(rng.random_bool(sigmoid(2.0 * x[0]))))
            .collect();
        SparseDataset::from_dense(&rows, labels).unwrap()
    }

    #[test]
    fn prediction_threshold_is_strict() {
        let fit = GlmFit::from_parameters(0.0, vec![1.0]);
        let p = predict_glm(&fit, &SparseRow::default()).unwrap();
        assert_eq!(p.probability, 0.5);
        assert_eq!(p.class, 0);
        let fit = GlmFit::from_parameters(3f64.ln(), vec![0.0]);
        let p = predict_glm(&fit, &SparseRow::default()).unwrap();
        assert_relative_eq!(p.probability, 0.75, epsilon = 1e-15);
        assert_eq!(p.class, 1);
    }

    #[test]
    fn out_of_range_feature_is_error() {
        let fit = GlmFit::from_parameters(0.0, vec![1.0]);
        let x = SparseRow::new(vec![3], vec![1.0]).unwrap();
        assert!(matches!(
            predict_glm(&fit, &x),
            Err(Error::FeatureOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn gamma_is_ignored_by_prediction() {
        let d = noisy_1d(60, 2);
        let mut fit = fit_robust(&d, 0.2, ThetaPenalty::None, &RobustOptions::default()).unwrap();
        let before: Vec<_> = d.rows().iter().map(|r| predict(&fit, r).unwrap()).collect();
        for g in fit.gamma.iter_mut() {
            *g = 123.0;
        }
        let after: Vec<_> = d.rows().iter().map(|r| predict(&fit, r).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn report_examples() {
        let r = suspect_report_from_gamma(&[0.0, 0.0, 0.0], &[0, 1, 0]).unwrap();
        assert!(r.is_empty());
        let r = suspect_report_from_gamma(&[0.0, 1.2, -0.3], &[0, 0, 1]).unwrap();
        assert_eq!(r.rows(), vec![1, 2]);
        assert_eq!(r.entries[0].direction(), "labeled 0, suspected 1");
        assert_eq!(r.entries[1].direction(), "labeled 1, suspected 0");
        assert!(r
            .to_tsv()
            .starts_with("index\tgamma\tobserved_label\tsuspected_label\n1\t"));
    }

    #[test]
    fn report_ties_break_by_row() {
        let r = suspect_report_from_gamma(&[0.5, -0.5, 0.5], &[1, 0, 1]).unwrap();
        assert_eq!(r.rows(), vec![0, 1, 2]);
    }

    #[test]
    fn lambda_above_max_reproduces_standard_fit() {
        let d = noisy_1d(200, 5);
        let opts = RobustOptions::default();
        let lmax = shift_lambda_max(&d, ThetaPenalty::None, &opts.solver).unwrap();
        let fit = fit_robust(&d, lmax * 1.01, ThetaPenalty::None, &opts).unwrap();
        assert!(fit.gamma.iter().all(|&g| g == 0.0));
        let tight = SolverOptions::default().with_tolerance(1e-10);
        let standard = fit_penalized(&d, &PenaltySpec::none(), &tight).unwrap();
        let fit_tight = fit_robust(
            &d,
            lmax * 1.01,
            ThetaPenalty::None,
            &RobustOptions {
                solver: tight,
                ..RobustOptions::default()
            },
        )
        .unwrap();
        assert!((fit_tight.theta.intercept - standard.intercept).abs() < 1e-8);
        assert!((fit_tight.theta.coefficients[0] - standard.coefficients[0]).abs() < 1e-8);
    }

    #[test]
    fn nonzero_shift_signs_follow_observed_labels() {
        let d = noisy_1d(150, 7);
        let fit = fit_robust(&d, 0.05, ThetaPenalty::None, &RobustOptions::default()).unwrap();
        assert!(fit.nonzero_shifts() > 0);
        for (g, y) in fit.gamma.iter().zip(d.labels()) {
            if *g != 0.0 {
                assert_eq!(*g > 0.0, *y == 1);
            }
        }
    }

    #[test]
    fn augmented_objective_matches_direct() {
        let d = noisy_1d(40, 3);
        for tp in [
            ThetaPenalty::None,
            ThetaPenalty::L1 { kappa: 0.7 },
            ThetaPenalty::L2 { sigma2: 2.0 },
        ] {
            let fit = fit_robust(&d, 0.3, tp, &RobustOptions::default()).unwrap();
            let direct =
                robust_objective(&d, fit.theta.intercept, &fit.theta.coefficients, &fit.gamma, 0.3, tp).unwrap();
            assert_relative_eq!(direct, fit.theta.objective_value, max_relative = 1e-12);
        }
    }

    #[test]
    fn unit_scale_augmentation_matches_shifted_log_odds_bitwise() {
        let d = noisy_1d(30, 8);
        let theta = vec![1.7];
        let gamma: Vec<f64> = (0..30).map(|i| (i as f64 - 15.0) * 0.37).collect();
        let aug = augment_with_identity(&d, 1.0).unwrap();
        let mut coefs = theta.clone();
        coefs.extend_from_slice(&gamma);
        let fit = GlmFit::from_parameters(-0.4, coefs);
        for i in 0..d.n_rows() {
            let direct = sigmoid(shifted_log_odds(d.row(i), &theta, gamma[i], -0.4));
            let via_aug = fit.probability(aug.row_entries(i)).unwrap();
            assert_eq!(direct.to_bits(), via_aug.to_bits());
        }
    }

    #[test]
    fn l2_theta_penalty_only_touches_original_coefficients() {
        let d = noisy_1d(50, 4);
        let fit = fit_robust(&d, 0.2, ThetaPenalty::L2 { sigma2: 0.5 }, &RobustOptions::default()).unwrap();
        let (scale, pen) = augmented_setup(50, 1, 0.2, ThetaPenalty::L2 { sigma2: 0.5 }, ShiftRoute::Rescaled);
        assert_eq!(scale, 1.0);
        let aug = augment_with_identity(&d, 1.0).unwrap();
        let mut coefs = fit.theta.coefficients.clone();
        coefs.extend_from_slice(&fit.gamma);
        let g = smooth_gradient(&aug, fit.theta.intercept, &coefs, &pen).unwrap();
        let obj = negative_penalized_loglik(&aug, fit.theta.intercept, &coefs, &pen).unwrap();
        assert_relative_eq!(obj, fit.theta.objective_value, max_relative = 1e-12);
        // θ has a ridge term, γ a pure L1 subgradient
        assert!(g.coefficients[0].abs() < 1e-6);
        for (k, gam) in fit.gamma.iter().enumerate() {
            if *gam != 0.0 {
                assert!((g.coefficients[1 + k] + 0.2 * gam.signum()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let d = noisy_1d(10, 1);
        assert!(fit_robust(&d, 0.0, ThetaPenalty::None, &RobustOptions::default()).is_err());
        assert!(fit_robust(&d, 1.0, ThetaPenalty::L1 { kappa: 0.0 }, &RobustOptions::default()).is_err());
    }
}
