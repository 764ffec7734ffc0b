//! Grid resolution and penalty selection shared by `cv` and `audit`.

use robustlr::robust::{fit_robust, RobustFit, RobustOptions, ThetaPenalty};
use robustlr::selection::{
    cv_select_lambda, cv_sequential, cv_two_stage_family, default_sigma2_grid, select_standard, Criterion,
    FamilyAccuracy, FoldRecord, LambdaGrid, SelectionSettings, StandardSelection, Validation,
};
use robustlr::simulation::kappa_grid;
use robustlr::SparseDataset;
use serde_json::json;

use crate::args::{CriterionArg, FamilyArg, PenaltyKind, Procedure, TuneArgs};
use crate::error::{CliError, CliResult};

fn usage(msg: &str) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn theta_grid(t: &TuneArgs, d: &SparseDataset, opts: &RobustOptions) -> CliResult<Vec<ThetaPenalty>> {
    let has_l1 = t.kappa.is_some() || t.kappa_grid.is_some();
    let has_l2 = t.sigma2.is_some() || t.sigma2_grid.is_some();
    let grid = match t.theta_penalty {
        PenaltyKind::None => {
            if has_l1 || has_l2 {
                return Err(usage("--theta-penalty none takes no kappa or sigma2 values"));
            }
            vec![ThetaPenalty::None]
        }
        PenaltyKind::L1 => {
            if has_l2 {
                return Err(usage("--sigma2/--sigma2-grid need --theta-penalty l2"));
            }
            match (&t.kappa, &t.kappa_grid) {
                (Some(k), _) => vec![ThetaPenalty::L1 { kappa: *k }],
                (None, Some(g)) => g.iter().map(|&kappa| ThetaPenalty::L1 { kappa }).collect(),
                (None, None) => kappa_grid(d, &opts.solver)?,
            }
        }
        PenaltyKind::L2 => {
            if has_l1 {
                return Err(usage("--kappa/--kappa-grid need --theta-penalty l1"));
            }
            let values = match (&t.sigma2, &t.sigma2_grid) {
                (Some(s), _) => vec![*s],
                (None, Some(g)) => g.clone(),
                (None, None) => default_sigma2_grid(),
            };
            values.into_iter().map(|sigma2| ThetaPenalty::L2 { sigma2 }).collect()
        }
    };
    if grid.is_empty() {
        return Err(usage("empty theta penalty grid"));
    }
    Ok(grid)
}

pub fn lambda_grid(t: &TuneArgs) -> LambdaGrid {
    match (&t.lambda, &t.lambda_grid) {
        (Some(l), _) => LambdaGrid::Fixed(vec![*l]),
        (None, Some(g)) => LambdaGrid::Fixed(g.clone()),
        (None, None) => LambdaGrid::Auto {
            points: t.lambda_points,
            decades: t.lambda_decades,
        },
    }
}

pub fn settings(t: &TuneArgs) -> CliResult<SelectionSettings<'static>> {
    if t.folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    Ok(SelectionSettings {
        validation: Validation::KFold {
            n_folds: t.folds,
            seed: t.seed,
        },
        lambda_grid: lambda_grid(t),
        noise_budget: t.noise_budget,
        criterion: match t.criterion {
            CriterionArg::Accuracy => Criterion::Accuracy,
            CriterionArg::F1 => Criterion::F1,
        },
        family_accuracy: match t.family_accuracy {
            FamilyArg::WithShifts => FamilyAccuracy::WithShifts,
            FamilyArg::ThetaOnly => FamilyAccuracy::ThetaOnly,
        },
        robust: RobustOptions::default(),
    })
}

/// Selected robust model plus what to print about how it was chosen.
pub struct RobustTuning {
    pub fit: RobustFit,
    pub procedure: &'static str,
    pub header: Vec<String>,
    pub fold_table: Vec<FoldRecord>,
    pub grids: serde_json::Value,
}

fn penalties_json(grid: &[ThetaPenalty]) -> serde_json::Value {
    json!(grid.iter().map(ToString::to_string).collect::<Vec<_>>())
}

pub fn tune_robust(t: &TuneArgs, d: &SparseDataset) -> CliResult<RobustTuning> {
    let s = settings(t)?;
    let thetas = theta_grid(t, d, &s.robust)?;
    let mut header = Vec::new();

    if thetas.len() == 1 {
        let tp = thetas[0];
        let lambdas = s.lambda_grid.resolve(d, tp, &s.robust)?;
        if lambdas.len() == 1 {
            // nothing to choose; fit directly
            let fit = fit_robust(d, lambdas[0], tp, &s.robust)?;
            if let Some(b) = s.noise_budget {
                if fit.nonzero_fraction() > b {
                    return Err(robustlr::Error::BudgetExhausted {
                        budget: b,
                        fractions: vec![fit.nonzero_fraction()],
                    }
                    .into());
                }
            }
            return Ok(RobustTuning {
                fit,
                procedure: "fixed",
                header,
                fold_table: Vec::new(),
                grids: json!({ "theta": penalties_json(&thetas), "lambda": lambdas }),
            });
        }
        let sel = cv_select_lambda(d, tp, &s)?;
        for ((l, score), frac) in sel.grid.iter().zip(&sel.mean_scores).zip(&sel.nonzero_fractions) {
            let score = score.map_or("excluded".to_string(), |v| format!("{v:.6}"));
            header.push(format!(
                "candidate\tlambda={l}\tmean_score={score}\tnonzero_fraction={frac:.6}"
            ));
        }
        return Ok(RobustTuning {
            fit: sel.fit,
            procedure: "cv-lambda",
            header,
            fold_table: sel.fold_table,
            grids: json!({ "theta": penalties_json(&thetas), "lambda": sel.grid }),
        });
    }

    match t.procedure {
        Procedure::TwoStage => {
            let sel = cv_two_stage_family(d, &thetas, &s)?;
            for m in &sel.family {
                header.push(format!(
                    "family\t{}\tlambda={}\ttrain_accuracy={:.6}\tnonzero_fraction={:.6}\theld_out={:.6}",
                    m.theta_penalty, m.lambda, m.train_accuracy, m.nonzero_fraction, m.held_out_score
                ));
            }
            Ok(RobustTuning {
                fit: sel.fit,
                procedure: "two-stage",
                header,
                fold_table: sel.fold_table,
                grids: json!({ "theta": penalties_json(&thetas), "lambda": lambda_description(&s.lambda_grid) }),
            })
        }
        Procedure::Sequential => {
            let sel = cv_sequential(d, &thetas, &s)?;
            for (tp, score) in sel.stage1.candidates.iter().zip(&sel.stage1.mean_scores) {
                header.push(format!("stage1\t{tp}\tmean_score={score:.6}"));
            }
            for (l, score) in sel.stage2.grid.iter().zip(&sel.stage2.mean_scores) {
                let score = score.map_or("excluded".to_string(), |v| format!("{v:.6}"));
                header.push(format!("stage2\tlambda={l}\tmean_score={score}"));
            }
            let mut fold_table = sel.stage1.fold_table;
            fold_table.extend(sel.stage2.fold_table);
            Ok(RobustTuning {
                fit: sel.stage2.fit,
                procedure: "sequential",
                header,
                fold_table,
                grids: json!({ "theta": penalties_json(&thetas), "lambda": sel.stage2.grid }),
            })
        }
    }
}

fn lambda_description(g: &LambdaGrid) -> serde_json::Value {
    match g {
        LambdaGrid::Fixed(v) => json!(v),
        LambdaGrid::Auto { points, decades } => {
            json!({ "auto": { "points": points, "decades": decades } })
        }
    }
}

pub fn tune_standard(t: &TuneArgs, d: &SparseDataset) -> CliResult<(StandardSelection, serde_json::Value)> {
    if t.lambda.is_some() || t.lambda_grid.is_some() || t.noise_budget.is_some() {
        return Err(usage(
            "--lambda, --lambda-grid and --noise-budget apply to the robust model only",
        ));
    }
    let s = settings(t)?;
    let thetas = theta_grid(t, d, &s.robust)?;
    let sel = select_standard(d, &thetas, &s)?;
    Ok((sel, json!({ "theta": penalties_json(&thetas) })))
}
