//! Acceptance gate: one pass/fail line per criterion, tolerances pinned
//! below. Runs as a plain binary so the lines always reach the terminal.

mod common;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use common::{random_instance, random_point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustlr::flipping::{fit_flipping, FlipInit, FlippingOptions};
use robustlr::robust::{fit_robust, suspect_report, RobustOptions, ShiftRoute, ThetaPenalty};
use robustlr::selection::{cv_two_stage_family, SelectionSettings};
use robustlr::simulation::{
    generate_contaminated, generate_logistic, inject_noise, kappa_grid, run_comparison, ContaminationSpec,
    ExperimentConfig, ExperimentReport, Method, NoiseSpec, Protocol,
};
use robustlr::solver::{negative_penalized_loglik, smooth_gradient};
use robustlr::{fit_path, fit_penalized, PenaltySpec, SolverOptions};

const SEED: u64 = 0;

// criterion 1
const CLEAN_REPS: usize = 50;
const CLEAN_MAX_GAP: f64 = 0.5;
const CLEAN_FLOOR: f64 = 95.5;
const CLEAN_BUDGET: Duration = Duration::from_secs(300);
// criterion 2
const NOISE_REPS: usize = 50;
const P03_MIN_GAP: f64 = 2.5;
const P03_P101_MIN_GAP: f64 = 1.5;
const NOISE_BUDGET: Duration = Duration::from_secs(600);
// criterion 3
const REG_REPS: usize = 100;
const REG_MIN_GAP: f64 = 0.5;
// criterion 4
const ORDERING_SCALE: f64 = 0.5;
const ORDERING_REPS: usize = 50;
const EXP1_ALT_MARGIN: f64 = 3.0;
const EXP1_ROBUST_MARGIN: f64 = 1.0;
const EXP3_PREFILTER_TOL: f64 = 0.3;
const EXP3_K1_FRACTION: f64 = 0.8;
const EXP3_ROBUST_MARGIN: f64 = 3.0;
// criterion 5
const MIXTURE_REPS: usize = 50;
const MIXTURE_CLEAN: (f64, f64) = (73.33, 1.5);
const MIXTURE_NOISY: (f64, f64) = (66.37, 2.0);
// criterion 6
const AUDIT_MIN_HITS: usize = 8;
const AUDIT_MAX_FALSE: usize = 1;
// criterion 7
const FD_REL_TOL: f64 = 1e-6;
const CONVEXITY_TRIPLES: usize = 100;
const TINY_COEF: f64 = 1e-12;
const WARM_COLD_TOL: f64 = 1e-5;
// criterion 8
const ROUTE_TOL: f64 = 1e-6;
// criterion 9
const EM_DROP_TOL: f64 = 1e-10;
const GAMMA_RECOVERY_N: usize = 2000;
const GAMMA_RECOVERY_TOL: f64 = 0.05;
const CLEAN_IDENTITY_TOL: f64 = 0.02;

struct Check {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Collects sub-conditions of one criterion.
struct Conditions {
    pass: bool,
    detail: String,
}

impl Conditions {
    fn new() -> Self {
        Self {
            pass: true,
            detail: String::new(),
        }
    }

    fn require(&mut self, ok: bool, what: String) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        let _ = write!(self.detail, "{what} [{}]", if ok { "ok" } else { "MISS" });
        self.pass &= ok;
    }

    fn finish(self, id: usize, name: &'static str) -> Check {
        Check {
            id,
            name,
            pass: self.pass,
            detail: self.detail,
        }
    }
}

/// Every simulation artifact, kept for the determinism rerun.
#[derive(Default)]
struct Artifacts(Vec<(String, String)>);

fn simulate(
    protocol: Protocol,
    methods: &[Method],
    reps: usize,
    scale: f64,
    art: &mut Artifacts,
) -> (ExperimentReport, Duration) {
    let mut cfg = ExperimentConfig::new(protocol, methods.to_vec(), reps, SEED);
    cfg.scale = scale;
    let start = Instant::now();
    let report = run_comparison(&cfg).expect("protocol runs");
    let elapsed = start.elapsed();
    art.0.push((protocol.name().to_string(), report.to_tsv()));
    (report, elapsed)
}

fn mean(r: &ExperimentReport, m: Method) -> f64 {
    r.summary(m).map_or(f64::NAN, |s| s.mean)
}

fn all_ok(r: &ExperimentReport) -> bool {
    r.all_succeeded()
}

fn criterion_1(art: &mut Artifacts) -> Check {
    let (r, t) = simulate(
        Protocol::Table1Clean,
        &[Method::Standard, Method::Robust],
        CLEAN_REPS,
        1.0,
        art,
    );
    let (s, rb) = (mean(&r, Method::Standard), mean(&r, Method::Robust));
    let mut c = Conditions::new();
    c.require(all_ok(&r), format!("{} replications", r.replications.len()));
    c.require(
        (rb - s).abs() <= CLEAN_MAX_GAP,
        format!("standard {s:.2} robust {rb:.2} gap {:.2}", rb - s),
    );
    c.require(s >= CLEAN_FLOOR && rb >= CLEAN_FLOOR, format!("both >= {CLEAN_FLOOR}"));
    c.require(t < CLEAN_BUDGET, format!("{:.1}s", t.as_secs_f64()));
    c.finish(1, "clean logistic data")
}

fn criterion_2(art: &mut Artifacts) -> Check {
    let mut c = Conditions::new();
    for (protocol, min_gap) in [
        (Protocol::Table1P03, P03_MIN_GAP),
        (Protocol::Table1P03P101, P03_P101_MIN_GAP),
    ] {
        let (r, t) = simulate(protocol, &[Method::Standard, Method::Robust], NOISE_REPS, 1.0, art);
        let (s, rb) = (mean(&r, Method::Standard), mean(&r, Method::Robust));
        c.require(
            all_ok(&r) && rb - s >= min_gap && t < NOISE_BUDGET,
            format!(
                "{protocol}: standard {s:.2} robust {rb:.2} gap {:+.2} >= {min_gap} in {:.1}s",
                rb - s,
                t.as_secs_f64()
            ),
        );
    }
    c.finish(2, "uniform label noise")
}

fn criterion_3(art: &mut Artifacts) -> Check {
    let (r, _) = simulate(
        Protocol::Table1RegP03,
        &[Method::Standard, Method::Robust],
        REG_REPS,
        1.0,
        art,
    );
    let (s, rb) = (mean(&r, Method::Standard), mean(&r, Method::Robust));
    let mut c = Conditions::new();
    c.require(all_ok(&r), format!("{} replications", r.replications.len()));
    c.require(
        rb - s >= REG_MIN_GAP,
        format!("standard {s:.2} robust {rb:.2} gap {:+.2}", rb - s),
    );
    c.finish(3, "regularized theta under noise")
}

fn criterion_4(art: &mut Artifacts) -> Check {
    let mut c = Conditions::new();
    let (r, _) = simulate(Protocol::ExpB1, &Method::ALL, ORDERING_REPS, ORDERING_SCALE, art);
    let [s, rb, fl, pf] = Method::ALL.map(|m| mean(&r, m));
    c.require(
        all_ok(&r),
        format!("expB1 std {s:.2} rob {rb:.2} flip {fl:.2} pre {pf:.2}"),
    );
    c.require(
        fl - rb >= EXP1_ALT_MARGIN,
        format!("expB1 flipping - robust {:+.2}", fl - rb),
    );
    c.require(
        pf - rb >= EXP1_ALT_MARGIN,
        format!("expB1 prefilter - robust {:+.2}", pf - rb),
    );
    c.require(
        rb - s >= EXP1_ROBUST_MARGIN,
        format!("expB1 robust - standard {:+.2}", rb - s),
    );

    let (r, _) = simulate(Protocol::ExpB3, &Method::ALL, ORDERING_REPS, ORDERING_SCALE, art);
    let [s, rb, _, pf] = Method::ALL.map(|m| mean(&r, m));
    let details = r.details(Method::Prefilter);
    let k1 = details.iter().filter(|d| d.starts_with("k=1;")).count() as f64 / details.len().max(1) as f64;
    c.require(all_ok(&r), format!("expB3 std {s:.2} rob {rb:.2} pre {pf:.2}"));
    c.require(
        (pf - s).abs() <= EXP3_PREFILTER_TOL,
        format!("expB3 prefilter - standard {:+.2}", pf - s),
    );
    c.require(k1 >= EXP3_K1_FRACTION, format!("expB3 k=1 in {:.0}%", 100.0 * k1));
    c.require(
        rb - s >= EXP3_ROBUST_MARGIN,
        format!("expB3 robust - standard {:+.2}", rb - s),
    );

    let (r, _) = simulate(Protocol::ExpB4, &Method::ALL, ORDERING_REPS, ORDERING_SCALE, art);
    let means = Method::ALL.map(|m| mean(&r, m));
    let best = Method::ALL[means.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
    c.require(
        all_ok(&r) && best == Method::Robust,
        format!(
            "expB4 std {:.2} rob {:.2} flip {:.2} pre {:.2}, best {best}",
            means[0], means[1], means[2], means[3]
        ),
    );
    c.finish(4, "method orderings at scale 0.5")
}

fn criterion_5(art: &mut Artifacts) -> Check {
    let mut c = Conditions::new();
    for (protocol, (target, tol)) in [(Protocol::Gauss6, MIXTURE_CLEAN), (Protocol::Gauss6P03, MIXTURE_NOISY)] {
        let (r, _) = simulate(protocol, &[Method::Robust], MIXTURE_REPS, 1.0, art);
        let rb = mean(&r, Method::Robust);
        c.require(
            all_ok(&r) && (rb - target).abs() <= tol,
            format!("{protocol}: robust {rb:.2} vs {target} ± {tol}"),
        );
    }
    c.finish(5, "Gaussian mixture")
}

fn criterion_6(art: &mut Artifacts) -> Check {
    let spec = ContaminationSpec {
        seed: SEED,
        ..ContaminationSpec::default()
    };
    let (d, truth) = generate_contaminated(&spec).unwrap();
    let grid = kappa_grid(&d, &SolverOptions::default()).unwrap();
    let sel = cv_two_stage_family(&d, &grid, &SelectionSettings::default()).unwrap();
    let report = suspect_report(&sel.fit, &d).unwrap();
    art.0.push(("audit".into(), report.to_tsv()));
    let hits: Vec<_> = report.entries.iter().filter(|s| truth.flipped[s.row]).collect();
    let false_pos = report.len() - hits.len();
    let directions = hits.iter().all(|s| s.suspected_label == truth.original[s.row]);
    let mut c = Conditions::new();
    c.require(
        hits.len() >= AUDIT_MIN_HITS,
        format!(
            "{} of {} planted rows recovered ({}, lambda {:.4})",
            hits.len(),
            truth.n_flipped(),
            sel.theta_penalty,
            sel.lambda
        ),
    );
    c.require(false_pos <= AUDIT_MAX_FALSE, format!("{false_pos} false positives"));
    c.require(directions, "directions match the plant".into());
    c.finish(6, "Error identification")
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut c = Conditions::new();

    let mut worst = 0.0f64;
    for seed in 0..20 {
        let d = random_instance(seed);
        let pen = PenaltySpec::l2_sigma2(rng.random_range(0.2..5.0));
        let (b, theta) = random_point(d.n_features(), &mut rng);
        let g = smooth_gradient(&d, b, &theta, &pen).unwrap();
        let f = |b: f64, t: &[f64]| negative_penalized_loglik(&d, b, t, &pen).unwrap();
        let h = 1e-5;
        let mut sq_diff = ((f(b + h, &theta) - f(b - h, &theta)) / (2.0 * h) - g.intercept).powi(2);
        let mut sq_norm = g.intercept.powi(2);
        for j in 0..theta.len() {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[j] += h;
            dn[j] -= h;
            sq_diff += ((f(b, &up) - f(b, &dn)) / (2.0 * h) - g.coefficients[j]).powi(2);
            sq_norm += g.coefficients[j].powi(2);
        }
        worst = worst.max((sq_diff / sq_norm).sqrt());
    }
    c.require(worst <= FD_REL_TOL, format!("gradient rel err {worst:.1e}"));

    let pen = PenaltySpec {
        l1_global: 0.3,
        l2_global: 0.1,
        ..PenaltySpec::default()
    };
    let mut convex_fail = 0;
    for k in 0..CONVEXITY_TRIPLES {
        let d = random_instance(100 + k as u64 % 10);
        let m = d.n_features();
        let (ba, ta) = random_point(m, &mut rng);
        let (bb, tb) = random_point(m, &mut rng);
        let t: f64 = rng.random_range(0.0..1.0);
        let tm: Vec<f64> = ta.iter().zip(&tb).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let f = |b: f64, th: &[f64]| negative_penalized_loglik(&d, b, th, &pen).unwrap();
        let (fa, fb) = (f(ba, &ta), f(bb, &tb));
        if f(t * ba + (1.0 - t) * bb, &tm) > t * fa + (1.0 - t) * fb + 1e-9 * (1.0 + fa.abs() + fb.abs()) {
            convex_fail += 1;
        }
    }
    c.require(
        convex_fail == 0,
        format!("{convex_fail}/{CONVEXITY_TRIPLES} convexity violations"),
    );

    let mut tiny = 0;
    for seed in 0..20 {
        let fit = fit_penalized(
            &random_instance(200 + seed),
            &PenaltySpec::l1(2.0),
            &SolverOptions::default(),
        )
        .unwrap();
        tiny += fit
            .coefficients
            .iter()
            .filter(|c| **c != 0.0 && c.abs() < TINY_COEF)
            .count();
    }
    c.require(tiny == 0, format!("{tiny} coefficients in (0, {TINY_COEF:e})"));

    let tight = SolverOptions::default().with_tolerance(1e-10);
    let mut gap = 0.0f64;
    for seed in 0..10 {
        let d = random_instance(300 + seed);
        let template = PenaltySpec::l2_sigma2(4.0);
        let levels = [3.0, 1.0, 0.3, 0.1, 0.03];
        let path = fit_path(&d, &template, &levels, &tight).unwrap();
        for (fit, &l) in path.iter().zip(&levels) {
            let cold = fit_penalized(&d, &template.with_l1(l), &tight).unwrap();
            gap = gap.max((fit.objective_value - cold.objective_value).abs());
        }
    }
    c.require(gap <= WARM_COLD_TOL, format!("warm/cold objective gap {gap:.1e}"));
    c.finish(7, "Solver properties")
}

fn criterion_8() -> Check {
    let solver = SolverOptions::default().with_tolerance(1e-11);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let d = random_instance(700 + seed);
        let tp = ThetaPenalty::L1 { kappa: 0.4 };
        let fit = |route| {
            fit_robust(
                &d,
                0.25,
                tp,
                &RobustOptions {
                    solver: solver.clone(),
                    route,
                },
            )
            .unwrap()
        };
        let (a, b) = (fit(ShiftRoute::Rescaled), fit(ShiftRoute::PenaltyFactors));
        let params = |f: &robustlr::robust::RobustFit| {
            let mut v = vec![f.theta.intercept];
            v.extend(&f.theta.coefficients);
            v.extend(&f.gamma);
            v
        };
        for (x, y) in params(&a).iter().zip(params(&b)) {
            worst = worst.max((x - y).abs());
        }
    }
    let mut c = Conditions::new();
    c.require(
        worst <= ROUTE_TOL,
        format!("max |Δ(θ, γ)| {worst:.1e} over 10 instances"),
    );
    c.finish(8, "Robust-formulation equivalence")
}

fn criterion_9() -> Check {
    let mut c = Conditions::new();
    let mut worst_drop = 0.0f64;
    for seed in 0..20 {
        let d = random_instance(900 + seed);
        if !d.has_both_classes() {
            continue;
        }
        let opts = FlippingOptions {
            init: FlipInit::Random { seed },
            sigma2: Some(2.0),
            max_em_iters: 60,
            ..FlippingOptions::default()
        };
        let fit = fit_flipping(&d, &opts).unwrap();
        for w in fit.loglik_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    c.require(
        worst_drop <= EM_DROP_TOL,
        format!("largest log-likelihood drop {worst_drop:.1e}"),
    );

    let splits = generate_logistic(&Protocol::ExpB1.gen_spec(GAMMA_RECOVERY_N, SEED)).unwrap();
    let (noisy, truth) = inject_noise(&splits.train, &NoiseSpec::uniform(0.3, 0.0), SEED).unwrap();
    let fit = fit_flipping(&noisy, &FlippingOptions::default()).unwrap();
    // planted empirical rates: P(observed b | true a)
    let rate = |a: u8| {
        let rows: Vec<usize> = (0..noisy.n_rows()).filter(|&i| truth.original[i] == a).collect();
        rows.iter().filter(|&&i| truth.flipped[i]).count() as f64 / rows.len() as f64
    };
    let (r01, r10) = (rate(0), rate(1));
    let (g01, g10) = (fit.gamma_matrix.get(0, 1), fit.gamma_matrix.get(1, 0));
    c.require(
        (g01 - r01).abs() <= GAMMA_RECOVERY_TOL && (g10 - r10).abs() <= GAMMA_RECOVERY_TOL,
        format!("gamma01 {g01:.3} vs planted {r01:.3}, gamma10 {g10:.3} vs planted {r10:.3}"),
    );

    let mut spec = Protocol::Table1Clean.gen_spec(1000, SEED);
    spec.n_dev = 10;
    spec.n_test = 10;
    let clean = generate_logistic(&spec).unwrap();
    let fit = fit_flipping(&clean.train, &FlippingOptions::default()).unwrap();
    let dist = fit.gamma_matrix.distance_from_identity();
    c.require(
        dist <= CLEAN_IDENTITY_TOL,
        format!("clean data distance from identity {dist:.4}"),
    );
    c.finish(9, "EM properties")
}

fn run_all(art: &mut Artifacts) -> Vec<Check> {
    vec![
        criterion_1(art),
        criterion_2(art),
        criterion_3(art),
        criterion_4(art),
        criterion_5(art),
        criterion_6(art),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ]
}

fn main() {
    let start = Instant::now();
    let mut first = Artifacts::default();
    let mut checks = run_all(&mut first);

    let mut second = Artifacts::default();
    let repeat = run_all(&mut second);
    let mut c = Conditions::new();
    let same_artifacts = first.0 == second.0;
    // details carry wall-clock times, so only verdicts are compared
    let same_verdicts = checks.iter().zip(&repeat).all(|(a, b)| a.pass == b.pass);
    c.require(
        same_artifacts,
        format!("{} reports byte-identical on rerun", first.0.len()),
    );
    c.require(same_verdicts, "verdicts identical on rerun".into());
    checks.push(c.finish(10, "Determinism"));

    println!("acceptance (seed {SEED})");
    for ch in &checks {
        println!(
            "criterion {:>2} {} {}: {}",
            ch.id,
            if ch.pass { "PASS" } else { "FAIL" },
            ch.name,
            ch.detail
        );
    }
    let failed: Vec<usize> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    println!(
        "{} of {} criteria passed in {:.1}s",
        checks.len() - failed.len(),
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
