//! Metrics and regularization selection: plain cross-validation of λ with an
//! optional noise budget, the two-stage (κ, λ) family procedure, and the
//! sequential procedure that tunes the θ penalty with a standard fit first.
//!
//! Every procedure scores candidates on held-out data, either k-fold splits
//! of the training set or a fixed development set ([`Validation`]). Ties go
//! to the more heavily penalized candidate.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SparseDataset;
use crate::error::{Error, Result};
use crate::robust::{
    fit_robust_path, predict_classes, shift_lambda_max, shifted_log_odds, RobustFit, RobustOptions, ThetaPenalty,
};
use crate::solver::{fit_penalized, log_grid, sigmoid, GlmFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn to_block(&self) -> String {
        format!(
            "# accuracy\t{:.6}\n# precision\t{:.6}\n# recall\t{:.6}\n# f1\t{:.6}\n# tp\t{}\n# fp\t{}\n# tn\t{}\n# fn\t{}\n",
            self.accuracy, self.precision, self.recall, self.f1, self.tp, self.fp, self.tn, self.fn_
        )
    }
}

/// Binary metrics with class 1 as the positive class.
pub fn evaluate(predictions: &[u8], labels: &[u8]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate zero predictions".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Accuracy,
    F1,
}

impl Criterion {
    pub fn score(self, fit: &GlmFit, held_out: &SparseDataset) -> Result<f64> {
        let m = evaluate(&predict_classes(fit, held_out)?, held_out.labels())?;
        Ok(match self {
            Criterion::Accuracy => m.accuracy,
            Criterion::F1 => m.f1,
        })
    }
}

/// Fold index per row: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n_rows: usize, n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 || n_folds > n_rows {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= folds <= rows, got {n_folds} folds for {n_rows} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n_rows];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % n_folds;
    }
    Ok(fold)
}

/// Where held-out scores come from.
#[derive(Debug, Clone, Copy)]
pub enum Validation<'a> {
    KFold { n_folds: usize, seed: u64 },
    Holdout(&'a SparseDataset),
}

struct Split {
    train: SparseDataset,
    held_out: SparseDataset,
}

fn splits(d: &SparseDataset, validation: Validation<'_>) -> Result<Vec<Split>> {
    match validation {
        Validation::Holdout(dev) => {
            if dev.n_features() > d.n_features() {
                return Err(Error::DimensionMismatch {
                    expected: d.n_features(),
                    actual: dev.n_features(),
                });
            }
            Ok(vec![Split {
                train: d.clone(),
                held_out: dev.clone(),
            }])
        }
        Validation::KFold { n_folds, seed } => {
            let fold = fold_assignment(d.n_rows(), n_folds, seed)?;
            (0..n_folds)
                .map(|f| {
                    let (out, inn): (Vec<usize>, Vec<usize>) = (0..d.n_rows()).partition(|&i| fold[i] == f);
                    let train = d.subset(&inn);
                    if !train.has_both_classes() {
                        return Err(Error::Validation(format!(
                            "fold {f} leaves a single class for training"
                        )));
                    }
                    Ok(Split {
                        train,
                        held_out: d.subset(&out),
                    })
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaGrid {
    /// Log-spaced from the data-derived shift λ max downward.
    Auto {
        points: usize,
        decades: f64,
    },
    Fixed(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            points: 20,
            decades: 4.0,
        }
    }
}

impl LambdaGrid {
    /// Concrete descending grid for `d` under `theta_penalty`.
    pub fn resolve(&self, d: &SparseDataset, theta_penalty: ThetaPenalty, opts: &RobustOptions) -> Result<Vec<f64>> {
        let mut grid = match self {
            LambdaGrid::Fixed(v) => v.clone(),
            LambdaGrid::Auto { points, decades } => {
                let lmax = shift_lambda_max(d, theta_penalty, &opts.solver)?.max(1e-8);
                log_grid(lmax, *points, *decades)
            }
        };
        if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "lambda grid must be nonempty and positive: {grid:?}"
            )));
        }
        grid.sort_by(|a, b| b.total_cmp(a));
        grid.dedup();
        Ok(grid)
    }
}

/// `κ_max · 10^{-k/2}` for k = 0..points.
pub fn default_kappa_grid(kappa_max: f64, points: usize) -> Vec<f64> {
    log_grid(kappa_max, points, 0.5 * points.saturating_sub(1) as f64)
}

/// `10^{-3} .. 10^{3}` by decades.
pub fn default_sigma2_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

/// Larger means more shrinkage of θ.
pub fn penalty_strength(p: ThetaPenalty) -> f64 {
    match p {
        ThetaPenalty::None => 0.0,
        ThetaPenalty::L1 { kappa } => kappa,
        ThetaPenalty::L2 { sigma2 } => 1.0 / sigma2,
    }
}

/// One held-out score of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub candidate: String,
    pub score: f64,
}

pub fn fold_table_tsv(records: &[FoldRecord]) -> String {
    let mut out = String::from("fold\tcandidate\tscore\n");
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{:.6}", r.fold, r.candidate, r.score);
    }
    out
}

/// Training accuracy used to pick λ*(θ penalty) in the family procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyAccuracy {
    /// `g(θᵀx + γ_i) > 0.5` against the observed labels; ties go to the
    /// larger λ, so λ* is the sparsest shift set reaching the best fit.
    #[default]
    WithShifts,
    /// `g(θᵀx) > 0.5` against the observed labels.
    ThetaOnly,
}

impl FamilyAccuracy {
    pub fn score(self, fit: &RobustFit, d: &SparseDataset) -> Result<f64> {
        let preds = match self {
            FamilyAccuracy::ThetaOnly => predict_classes(&fit.theta, d)?,
            FamilyAccuracy::WithShifts => d
                .rows()
                .iter()
                .zip(&fit.gamma)
                .map(|(row, &g)| {
                    let eta = shifted_log_odds(row, &fit.theta.coefficients, g, fit.theta.intercept);
                    u8::from(sigmoid(eta) > 0.5)
                })
                .collect(),
        };
        Ok(evaluate(&preds, d.labels())?.accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct SelectionSettings<'a> {
    pub validation: Validation<'a>,
    pub lambda_grid: LambdaGrid,
    pub noise_budget: Option<f64>,
    pub criterion: Criterion,
    pub family_accuracy: FamilyAccuracy,
    pub robust: RobustOptions,
}

impl Default for SelectionSettings<'_> {
    fn default() -> Self {
        Self {
            validation: Validation::KFold { n_folds: 5, seed: 0 },
            lambda_grid: LambdaGrid::default(),
            noise_budget: None,
            criterion: Criterion::Accuracy,
            family_accuracy: FamilyAccuracy::default(),
            robust: RobustOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean held-out score per grid value; `None` when excluded by budget.
    pub mean_scores: Vec<Option<f64>>,
    /// Nonzero-shift fraction of the full-data fit per grid value.
    pub nonzero_fractions: Vec<f64>,
    pub fold_table: Vec<FoldRecord>,
    /// Robust fit on all of `d` at the chosen λ.
    pub fit: RobustFit,
}

fn validate_budget(budget: Option<f64>) -> Result<()> {
    match budget {
        Some(b) if !(0.0..=1.0).contains(&b) => Err(Error::InvalidArgument(format!("noise budget {b} outside [0, 1]"))),
        _ => Ok(()),
    }
}

/// Index of the best score; `candidates` are ordered from most to least
/// penalized so the first maximum wins ties.
fn argmax_first(scores: impl IntoIterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if let Some(s) = s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Cross-validated λ for a fixed θ penalty.
pub fn cv_select_lambda(
    d: &SparseDataset,
    theta_penalty: ThetaPenalty,
    settings: &SelectionSettings<'_>,
) -> Result<LambdaSelection> {
    validate_budget(settings.noise_budget)?;
    let grid = settings.lambda_grid.resolve(d, theta_penalty, &settings.robust)?;
    let full_path = fit_robust_path(d, &grid, theta_penalty, &settings.robust)?;
    let fractions: Vec<f64> = full_path.iter().map(RobustFit::nonzero_fraction).collect();
    let allowed: Vec<bool> = fractions
        .iter()
        .map(|&f| settings.noise_budget.is_none_or(|b| f <= b))
        .collect();
    if !allowed.iter().any(|&a| a) {
        return Err(Error::BudgetExhausted {
            budget: settings.noise_budget.unwrap_or(1.0),
            fractions,
        });
    }

    let splits = splits(d, settings.validation)?;
    let mut sums = vec![0.0; grid.len()];
    let mut fold_table = Vec::new();
    let last_allowed = allowed.iter().rposition(|&a| a).unwrap_or(0);
    for (f, split) in splits.iter().enumerate() {
        let path = fit_robust_path(&split.train, &grid[..=last_allowed], theta_penalty, &settings.robust)?;
        for (j, fit) in path.iter().enumerate() {
            if !allowed[j] {
                continue;
            }
            let score = settings.criterion.score(&fit.theta, &split.held_out)?;
            sums[j] += score;
            fold_table.push(FoldRecord {
                fold: f,
                candidate: format!("lambda={}", grid[j]),
                score,
            });
        }
    }
    let mean_scores: Vec<Option<f64>> = (0..grid.len())
        .map(|j| allowed[j].then(|| sums[j] / splits.len() as f64))
        .collect();
    let best = argmax_first(mean_scores.iter().copied()).unwrap_or(0);
    Ok(LambdaSelection {
        lambda: grid[best],
        grid,
        mean_scores,
        nonzero_fractions: fractions,
        fold_table,
        fit: full_path.into_iter().nth(best).expect("index within path"),
    })
}

/// Orders θ penalties from most to least shrinkage.
fn by_strength(grid: &[ThetaPenalty]) -> Result<Vec<ThetaPenalty>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty theta penalty grid".into()));
    }
    let mut g = grid.to_vec();
    g.sort_by(|a, b| penalty_strength(*b).total_cmp(&penalty_strength(*a)));
    g.dedup();
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct StandardSelection {
    pub theta_penalty: ThetaPenalty,
    pub candidates: Vec<ThetaPenalty>,
    pub mean_scores: Vec<f64>,
    pub fold_table: Vec<FoldRecord>,
    /// Standard fit on all of `d` with the chosen penalty.
    pub fit: GlmFit,
}

/// Tunes the θ penalty of a plain logistic fit.
pub fn select_standard(
    d: &SparseDataset,
    grid: &[ThetaPenalty],
    settings: &SelectionSettings<'_>,
) -> Result<StandardSelection> {
    let candidates = by_strength(grid)?;
    let splits = splits(d, settings.validation)?;
    let mut fold_table = Vec::new();
    let mut mean_scores = Vec::with_capacity(candidates.len());
    for tp in &candidates {
        let mut sum = 0.0;
        for (f, split) in splits.iter().enumerate() {
            let fit = fit_penalized(&split.train, &tp.glm_penalty(), &settings.robust.solver)?;
            let score = settings.criterion.score(&fit, &split.held_out)?;
            sum += score;
            fold_table.push(FoldRecord {
                fold: f,
                candidate: tp.to_string(),
                score,
            });
        }
        mean_scores.push(sum / splits.len() as f64);
    }
    let best = argmax_first(mean_scores.iter().map(|s| Some(*s))).unwrap_or(0);
    let theta_penalty = candidates[best];
    let fit = fit_penalized(d, &theta_penalty.glm_penalty(), &settings.robust.solver)?;
    Ok(StandardSelection {
        theta_penalty,
        candidates,
        mean_scores,
        fold_table,
        fit,
    })
}

#[derive(Debug, Clone)]
pub struct SequentialSelection {
    pub stage1: StandardSelection,
    pub stage2: LambdaSelection,
}

/// Stage 1 picks the θ penalty with standard logistic regression; stage 2
/// keeps it and picks λ for the robust model.
pub fn cv_sequential(
    d: &SparseDataset,
    theta_grid: &[ThetaPenalty],
    settings: &SelectionSettings<'_>,
) -> Result<SequentialSelection> {
    let stage1 = select_standard(d, theta_grid, settings)?;
    let stage2 = cv_select_lambda(d, stage1.theta_penalty, settings)?;
    Ok(SequentialSelection { stage1, stage2 })
}

/// Step-one result for one θ penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub theta_penalty: ThetaPenalty,
    pub lambda: f64,
    pub train_accuracy: f64,
    pub nonzero_fraction: f64,
    pub held_out_score: f64,
}

#[derive(Debug, Clone)]
pub struct TwoStageSelection {
    pub theta_penalty: ThetaPenalty,
    pub lambda: f64,
    pub family: Vec<FamilyMember>,
    pub fold_table: Vec<FoldRecord>,
    pub fit: RobustFit,
}

/// Step one: for each θ penalty, λ*(θ penalty) maximizes training accuracy
/// (see [`FamilyAccuracy`]). Step two: the θ penalty is chosen by held-out
/// score with its λ* held fixed.
pub fn cv_two_stage_family(
    d: &SparseDataset,
    theta_grid: &[ThetaPenalty],
    settings: &SelectionSettings<'_>,
) -> Result<TwoStageSelection> {
    validate_budget(settings.noise_budget)?;
    let candidates = by_strength(theta_grid)?;
    let splits = splits(d, settings.validation)?;
    let mut family = Vec::with_capacity(candidates.len());
    let mut fits = Vec::with_capacity(candidates.len());
    let mut fold_table = Vec::new();
    let mut all_fractions = Vec::new();
    for &tp in &candidates {
        let grid = settings.lambda_grid.resolve(d, tp, &settings.robust)?;
        let path = fit_robust_path(d, &grid, tp, &settings.robust)?;
        let mut scored = Vec::with_capacity(path.len());
        for fit in &path {
            let frac = fit.nonzero_fraction();
            all_fractions.push(frac);
            if settings.noise_budget.is_some_and(|b| frac > b) {
                scored.push(None);
            } else {
                scored.push(Some(settings.family_accuracy.score(fit, d)?));
            }
        }
        let Some(best) = argmax_first(scored.iter().copied()) else {
            continue;
        };
        let lambda = grid[best];
        let mut sum = 0.0;
        for (f, split) in splits.iter().enumerate() {
            // warm path down to λ* keeps fold fits close to the full-data one
            let fold_path = fit_robust_path(&split.train, &grid[..=best], tp, &settings.robust)?;
            let score = settings.criterion.score(&fold_path[best].theta, &split.held_out)?;
            sum += score;
            fold_table.push(FoldRecord {
                fold: f,
                candidate: format!("{tp};lambda={lambda}"),
                score,
            });
        }
        let fit = path.into_iter().nth(best).expect("index within path");
        family.push(FamilyMember {
            theta_penalty: tp,
            lambda,
            train_accuracy: scored[best].unwrap_or(0.0),
            nonzero_fraction: fit.nonzero_fraction(),
            held_out_score: sum / splits.len() as f64,
        });
        fits.push(fit);
    }
    let Some(best) = argmax_first(family.iter().map(|m| Some(m.held_out_score))) else {
        return Err(Error::BudgetExhausted {
            budget: settings.noise_budget.unwrap_or(1.0),
            fractions: all_fractions,
        });
    };
    Ok(TwoStageSelection {
        theta_penalty: family[best].theta_penalty,
        lambda: family[best].lambda,
        family,
        fold_table,
        fit: fits.swap_remove(best),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_predictions() {
        let m = evaluate(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
    }

    #[test]
    fn all_negative_predictions() {
        let m = evaluate(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((m.recall, m.f1), (0.0, 0.0));
    }

    #[test]
    fn count_based_metrics() {
        let m = Metrics::from_counts(77, 23, 0, 14);
        assert_relative_eq!(m.precision, 0.77, epsilon = 1e-12);
        assert_relative_eq!(m.recall, 77.0 / 91.0, epsilon = 1e-12);
        assert_relative_eq!(m.f1, 2.0 * 0.77 * (77.0 / 91.0) / (0.77 + 77.0 / 91.0), epsilon = 1e-12);
        assert!((m.recall - 0.846).abs() < 1e-3 && (m.f1 - 0.807).abs() < 1e-3);
    }

    #[test]
    fn evaluate_errors() {
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn folds_partition_and_balance() {
        let f = fold_assignment(23, 5, 9).unwrap();
        let mut counts = [0; 5];
        for &k in &f {
            counts[k] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(f, fold_assignment(23, 5, 9).unwrap());
        assert!(fold_assignment(3, 5, 0).is_err());
    }

    #[test]
    fn first_maximum_wins() {
        assert_eq!(argmax_first([Some(0.5), None, Some(0.7), Some(0.7)]), Some(2));
        assert_eq!(argmax_first([None, None]), None);
    }

    #[test]
    fn kappa_grid_spacing() {
        let g = default_kappa_grid(10.0, 7);
        assert_eq!(g.len(), 7);
        assert_relative_eq!(g[1], 10.0 * 10f64.powf(-0.5), epsilon = 1e-12);
        assert_relative_eq!(g[6], 0.01, epsilon = 1e-12);
    }

    #[test]
    fn strength_ordering() {
        let g = by_strength(&[
            ThetaPenalty::L2 { sigma2: 10.0 },
            ThetaPenalty::L2 { sigma2: 0.1 },
            ThetaPenalty::L2 { sigma2: 1.0 },
        ])
        .unwrap();
        assert_eq!(g[0], ThetaPenalty::L2 { sigma2: 0.1 });
        assert_eq!(g[2], ThetaPenalty::L2 { sigma2: 10.0 });
    }
}
