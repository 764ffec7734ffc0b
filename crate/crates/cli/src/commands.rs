use std::fmt::Write as _;
use std::io::Write as _;

use robustlr::flipping::{fit_flipping, FlipInit, FlippingOptions};
use robustlr::model_file::ModelFile;
use robustlr::prefilter::{fit_prefiltered, FilterConfig};
use robustlr::robust::{fit_robust, predict_glm, suspect_report, RobustOptions, ThetaPenalty};
use robustlr::selection::{evaluate, fold_table_tsv};
use robustlr::simulation::{run_comparison, ExperimentConfig};
use robustlr::{fit_penalized, SolverOptions};
use serde_json::json;

use crate::args::{AuditArgs, CvArgs, CvModel, ModelArg, PredictArgs, SimulateArgs, TrainArgs, TuneArgs};
use crate::error::{CliError, CliResult};
use crate::output::{load_dataset, manifest_path, write_atomic, RunManifest};
use crate::tune::{tune_robust, tune_standard};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn fixed_theta_penalty(kappa: Option<f64>, sigma2: Option<f64>) -> ThetaPenalty {
    match (kappa, sigma2) {
        (Some(kappa), _) => ThetaPenalty::L1 { kappa },
        (None, Some(sigma2)) => ThetaPenalty::L2 { sigma2 },
        (None, None) => ThetaPenalty::None,
    }
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let only = |present: bool, flag: &str, model: &str| {
        if present {
            Err(usage(format!("{flag} applies only to --model {model}")))
        } else {
            Ok(())
        }
    };
    only(a.lambda.is_some() && a.model != ModelArg::Robust, "--lambda", "robust")?;
    only(a.k.is_some() && a.model != ModelArg::Prefilter, "--k", "prefilter")?;
    only(
        a.random_init && a.model != ModelArg::Flipping,
        "--random-init",
        "flipping",
    )?;

    let (d, digest) = load_dataset(&a.data)?;
    let tp = fixed_theta_penalty(a.kappa, a.sigma2);
    let solver = SolverOptions::default();
    let model = match a.model {
        ModelArg::Standard => ModelFile::from_standard(&fit_penalized(&d, &tp.glm_penalty(), &solver)?, tp),
        ModelArg::Robust => {
            let lambda = a.lambda.ok_or_else(|| usage("--model robust requires --lambda"))?;
            ModelFile::from_robust(&fit_robust(&d, lambda, tp, &RobustOptions::default())?)
        }
        ModelArg::Flipping => {
            if a.kappa.is_some() {
                return Err(usage("--model flipping takes --sigma2 only"));
            }
            let opts = FlippingOptions {
                init: if a.random_init {
                    FlipInit::Random { seed: a.seed }
                } else {
                    FlipInit::Default
                },
                max_em_iters: a.max_em_iters,
                sigma2: a.sigma2,
                ..FlippingOptions::default()
            };
            let fit = fit_flipping(&d, &opts)?;
            if !fit.converged {
                log::warn!("EM stopped after {} iterations without converging", fit.n_iterations);
            }
            ModelFile::from_flipping(&fit, a.sigma2)
        }
        ModelArg::Prefilter => {
            let k = a.k.ok_or_else(|| usage("--model prefilter requires --k"))?;
            let cfg = FilterConfig::new(k).map_err(|e| usage(e.to_string()))?;
            let fit = fit_prefiltered(&d, cfg, tp, &solver)?;
            log::info!("prefilter discarded {} of {} rows", fit.discarded.len(), d.n_rows());
            ModelFile::from_prefilter(&fit, tp)
        }
    };
    write_atomic(&a.out, model.to_json()?.as_bytes())?;

    let mut manifest = RunManifest::new("train", a.seed);
    manifest.options = json!({
        "model": model.kind().name(),
        "lambda": a.lambda,
        "theta_penalty": tp,
        "k": a.k,
        "random_init": a.random_init,
        "max_em_iters": a.max_em_iters,
    });
    manifest.inputs.push(digest);
    manifest.outputs.push(a.out.display().to_string());
    manifest.write(&manifest_path(a.manifest.as_ref(), &a.out))
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let model = ModelFile::load(&a.model_file)?;
    let (d, _) = load_dataset(&a.data)?;
    let glm = model.glm();
    let mut out = String::new();
    let mut classes = Vec::with_capacity(d.n_rows());
    for (i, row) in d.rows().iter().enumerate() {
        let p = predict_glm(&glm, row).map_err(|source| CliError::Row { row: i, source })?;
        let _ = writeln!(out, "{}\t{}", p.class, p.probability);
        classes.push(p.class);
    }
    if !a.no_metrics && !classes.is_empty() {
        out.push_str(&evaluate(&classes, d.labels())?.to_block());
    }
    match &a.out {
        Some(path) => write_atomic(path, out.as_bytes()),
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|source| CliError::Output {
                path: "<stdout>".into(),
                source,
            }),
    }
}

fn tune_options(t: &TuneArgs) -> serde_json::Value {
    json!({
        "theta_penalty": format!("{:?}", t.theta_penalty).to_lowercase(),
        "procedure": format!("{:?}", t.procedure),
        "family_accuracy": format!("{:?}", t.family_accuracy),
        "folds": t.folds,
        "criterion": format!("{:?}", t.criterion),
        "noise_budget": t.noise_budget,
    })
}

pub fn cv(a: &CvArgs) -> CliResult<()> {
    let t = &a.tune;
    let (d, digest) = load_dataset(&t.data)?;
    let mut text = String::from("# command\tcv\n");
    let (grids, model) = match a.model {
        CvModel::Standard => {
            let (sel, grids) = tune_standard(t, &d)?;
            let _ = writeln!(text, "# model\tstandard\n# theta_penalty\t{}", sel.theta_penalty);
            for (tp, s) in sel.candidates.iter().zip(&sel.mean_scores) {
                let _ = writeln!(text, "# candidate\t{tp}\tmean_score={s:.6}");
            }
            text.push_str(&fold_table_tsv(&sel.fold_table));
            (grids, ModelFile::from_standard(&sel.fit, sel.theta_penalty))
        }
        CvModel::Robust => {
            let tuned = tune_robust(t, &d)?;
            let _ = writeln!(
                text,
                "# model\trobust\n# procedure\t{}\n# theta_penalty\t{}\n# lambda\t{}\n# nonzero_shifts\t{}",
                tuned.procedure,
                tuned.fit.theta_penalty,
                tuned.fit.lambda,
                tuned.fit.nonzero_shifts()
            );
            for h in &tuned.header {
                let _ = writeln!(text, "# {h}");
            }
            text.push_str(&fold_table_tsv(&tuned.fold_table));
            (tuned.grids, ModelFile::from_robust(&tuned.fit))
        }
    };
    write_atomic(&t.out, text.as_bytes())?;
    let mut manifest = RunManifest::new("cv", t.seed);
    manifest.options = tune_options(t);
    manifest.options["model"] = json!(format!("{:?}", a.model).to_lowercase());
    manifest.grids = grids;
    manifest.inputs.push(digest);
    manifest.outputs.push(t.out.display().to_string());
    if let Some(path) = &a.model_out {
        write_atomic(path, model.to_json()?.as_bytes())?;
        manifest.outputs.push(path.display().to_string());
    }
    manifest.write(&manifest_path(t.manifest.as_ref(), &t.out))
}

pub fn audit(a: &AuditArgs) -> CliResult<()> {
    let t = &a.tune;
    let (d, digest) = load_dataset(&t.data)?;
    let tuned = tune_robust(t, &d)?;
    let report = suspect_report(&tuned.fit, &d)?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "# command\taudit\n# procedure\t{}\n# theta_penalty\t{}\n# lambda\t{}\n# nonzero_shift_fraction\t{:.6}\n# suspects\t{}",
        tuned.procedure,
        tuned.fit.theta_penalty,
        tuned.fit.lambda,
        tuned.fit.nonzero_fraction(),
        report.len()
    );
    for h in &tuned.header {
        let _ = writeln!(text, "# {h}");
    }
    text.push_str(&report.to_tsv());
    write_atomic(&t.out, text.as_bytes())?;

    let mut manifest = RunManifest::new("audit", t.seed);
    manifest.options = tune_options(t);
    manifest.grids = tuned.grids;
    manifest.inputs.push(digest);
    manifest.outputs.push(t.out.display().to_string());
    manifest.write(&manifest_path(t.manifest.as_ref(), &t.out))
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    if !(a.scale > 0.0 && a.scale <= 1.0) {
        return Err(usage(format!("--scale must lie in (0, 1], got {}", a.scale)));
    }
    if a.replications == 0 {
        return Err(usage("--replications must be at least 1"));
    }
    let mut cfg = ExperimentConfig::new(a.protocol, a.methods.0.clone(), a.replications, a.seed);
    cfg.scale = a.scale;
    let report = run_comparison(&cfg)?;
    write_atomic(&a.out, report.to_tsv().as_bytes())?;

    let mut manifest = RunManifest::new("simulate", a.seed);
    manifest.options = json!({
        "protocol": a.protocol.name(),
        "methods": a.methods.0.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "replications": a.replications,
        "effective_replications": cfg.effective_replications(),
        "scale": a.scale,
        "rows_per_split": report.rows_per_split,
    });
    manifest.outputs.push(a.out.display().to_string());
    manifest.write(&manifest_path(a.manifest.as_ref(), &a.out))?;

    if !report.all_succeeded() {
        let failed: usize = report.summaries.iter().map(|s| s.n_failed).sum();
        return Err(CliError::Failed(format!(
            "{failed} method fits failed; see {}",
            a.out.display()
        )));
    }
    Ok(())
}
