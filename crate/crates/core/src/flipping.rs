//! Label-flipping logistic regression trained by EM.
//!
//! Each row has a latent true label `z`; `x` relates to `z` through a
//! logistic model and `z` becomes the observed label `y` with probability
//! `γ_{zy}`. The E-step computes responsibilities
//!
//! ```text
//! p(c | y, x) = γ_{c,y} g_c(x) / Σ_z γ_{z,y} g_z(x)
//! ```
//!
//! and the M-step has two independent parts: the closed-form
//! `γ_{ab} = Σ_i 1{y_i = b} p(a | y_i, x_i) / Σ_i p(a | y_i, x_i)` and a
//! weighted logistic regression in which every row appears once per class,
//! weighted by its responsibility. The generic formulas work for `c`
//! classes; the class model itself is binary, so `c = 2` throughout.

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Design, SparseDataset, SparseRow};
use crate::error::{Error, Result};
use crate::robust::{predict_glm, Prediction};
use crate::solver::{fit_penalized, softplus, GlmFit, PenaltySpec, SolverOptions};

const N_CLASSES: usize = 2;

/// Row-stochastic `c × c` matrix, entry `(a, b)` = P(observed b | true a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipMatrix {
    n_classes: usize,
    entries: Vec<f64>,
}

impl FlipMatrix {
    pub fn identity(n_classes: usize) -> Self {
        let mut entries = vec![0.0; n_classes * n_classes];
        for a in 0..n_classes {
            entries[a * n_classes + a] = 1.0;
        }
        Self { n_classes, entries }
    }

    /// `diag` on the diagonal, the remainder spread evenly off it.
    pub fn with_diagonal(n_classes: usize, diag: f64) -> Self {
        let off = if n_classes > 1 {
            (1.0 - diag) / (n_classes - 1) as f64
        } else {
            0.0
        };
        let entries = (0..n_classes * n_classes)
            .map(|k| if k / n_classes == k % n_classes { diag } else { off })
            .collect();
        Self { n_classes, entries }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidArgument("flip matrix must be square".into()));
        }
        let m = Self {
            n_classes: c,
            entries: rows.concat(),
        };
        if !m.is_row_stochastic(1e-9) {
            return Err(Error::InvalidArgument(format!(
                "flip matrix rows must sum to 1: {rows:?}"
            )));
        }
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, true_class: usize, observed: usize) -> f64 {
        self.entries[true_class * self.n_classes + observed]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n_classes).map(<[f64]>::to_vec).collect()
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.entries.iter().all(|&v| (0.0..=1.0).contains(&v))
            && self
                .entries
                .chunks(self.n_classes)
                .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= tol)
    }

    /// Largest absolute entrywise difference from the identity.
    pub fn distance_from_identity(&self) -> f64 {
        let id = Self::identity(self.n_classes);
        self.entries
            .iter()
            .zip(&id.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-row responsibilities `p(z = c | y, x)`, row-major `n × c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    n_classes: usize,
    resp: Vec<f64>,
}

impl Posterior {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(N_CLASSES, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidArgument("ragged posterior".into()));
        }
        if rows
            .iter()
            .any(|r| (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 || r.iter().any(|&p| p < 0.0))
        {
            return Err(Error::InvalidArgument("posterior rows must be distributions".into()));
        }
        Ok(Self {
            n_classes: c,
            resp: rows.concat(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.resp.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.resp[i * self.n_classes + c]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.resp[i * self.n_classes..(i + 1) * self.n_classes]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlippingFit {
    /// Class-1 logistic model; class 0 is the reference.
    pub theta: GlmFit,
    pub gamma_matrix: FlipMatrix,
    /// Observed-data log-likelihood (minus any ridge term) after
    /// initialization and after each EM cycle.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlipInit {
    /// 0.9 on the diagonal.
    Default,
    /// Diagonal drawn uniformly from [0.5, 1).
    Random {
        seed: u64,
    },
    Matrix(FlipMatrix),
}

#[derive(Debug, Clone)]
pub struct FlippingOptions {
    pub init: FlipInit,
    pub max_em_iters: usize,
    pub loglik_tol: f64,
    /// Optional ridge `Σθ²/(2σ²)` in the M-step.
    pub sigma2: Option<f64>,
    pub solver: SolverOptions,
}

impl Default for FlippingOptions {
    fn default() -> Self {
        Self {
            init: FlipInit::Default,
            max_em_iters: 200,
            loglik_tol: 1e-6,
            sigma2: None,
            solver: SolverOptions::default(),
        }
    }
}

fn theta_penalty(sigma2: Option<f64>) -> PenaltySpec {
    sigma2.map_or_else(PenaltySpec::none, PenaltySpec::l2_sigma2)
}

/// `log g_c(x)` for both classes.
fn log_class_probs(fit: &GlmFit, row: &SparseRow) -> Result<[f64; N_CLASSES]> {
    let eta = fit.linear_predictor(row.iter())?;
    Ok([-softplus(eta), -softplus(-eta)])
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// E-step from explicit class log-probabilities (`n × c`).
pub fn e_step_from_log_probs(labels: &[u8], log_probs: &[Vec<f64>], gamma: &FlipMatrix) -> Posterior {
    let c = gamma.n_classes();
    let mut resp = Vec::with_capacity(labels.len() * c);
    let mut terms = vec![0.0; c];
    for (i, (&y, lp)) in labels.iter().zip(log_probs).enumerate() {
        for z in 0..c {
            terms[z] = gamma.get(z, y as usize).ln() + lp[z];
        }
        let norm = log_sum_exp(&terms);
        if norm == f64::NEG_INFINITY {
            log::warn!("row {i}: observed label has zero probability under every class; using the prior");
            let prior = log_sum_exp(lp);
            resp.extend(lp.iter().map(|l| (l - prior).exp()));
        } else {
            resp.extend(terms.iter().map(|t| (t - norm).exp()));
        }
    }
    Posterior { n_classes: c, resp }
}

pub fn e_step(d: &SparseDataset, fit: &FlippingFit) -> Result<Posterior> {
    let log_probs = d
        .rows()
        .iter()
        .map(|r| log_class_probs(&fit.theta, r).map(|a| a.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(e_step_from_log_probs(d.labels(), &log_probs, &fit.gamma_matrix))
}

/// Closed-form flipping probabilities from the responsibilities.
pub fn m_step_gamma(d: &SparseDataset, post: &Posterior) -> Result<FlipMatrix> {
    if post.n_rows() != d.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: d.n_rows(),
            actual: post.n_rows(),
        });
    }
    let c = post.n_classes();
    let mut num = vec![0.0; c * c];
    let mut den = vec![0.0; c];
    for i in 0..d.n_rows() {
        let (w, y) = (d.weight(i), d.label(i) as usize);
        for a in 0..c {
            let p = w * post.get(i, a);
            num[a * c + y] += p;
            den[a] += p;
        }
    }
    let mut entries = vec![0.0; c * c];
    for a in 0..c {
        if den[a] > 0.0 {
            for b in 0..c {
                entries[a * c + b] = num[a * c + b] / den[a];
            }
        } else {
            log::warn!("class {a} has no posterior mass; resetting its flip row to uniform");
            entries[a * c..(a + 1) * c].fill(1.0 / c as f64);
        }
    }
    Ok(FlipMatrix { n_classes: c, entries })
}

/// Every row once per class, labelled with that class and weighted by its
/// responsibility. Zero-weight copies are dropped.
pub fn duplicate_by_class(d: &SparseDataset, post: &Posterior) -> Result<SparseDataset> {
    if post.n_rows() != d.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: d.n_rows(),
            actual: post.n_rows(),
        });
    }
    let mut rows = Vec::with_capacity(2 * d.n_rows());
    let mut labels = Vec::with_capacity(2 * d.n_rows());
    let mut weights = Vec::with_capacity(2 * d.n_rows());
    for i in 0..d.n_rows() {
        for c in 0..N_CLASSES {
            let w = d.weight(i) * post.get(i, c);
            if w > 0.0 {
                rows.push(d.row(i).clone());
                labels.push(c as u8);
                weights.push(w);
            }
        }
    }
    SparseDataset::with_weights(rows, labels, weights, d.n_features())
}

/// Maximizes the θ part of the expected complete log-likelihood.
pub fn m_step_theta(d: &SparseDataset, post: &Posterior, sigma2: Option<f64>, opts: &SolverOptions) -> Result<GlmFit> {
    let expanded = duplicate_by_class(d, post)?;
    fit_penalized(&expanded, &theta_penalty(sigma2), opts)
}

/// `Σ_i w_i log Σ_z γ_{z,y_i} g_z(x_i)` minus the ridge term.
pub fn observed_loglik(d: &SparseDataset, theta: &GlmFit, gamma: &FlipMatrix, sigma2: Option<f64>) -> Result<f64> {
    let mut ll = 0.0;
    let mut terms = [0.0; N_CLASSES];
    for i in 0..d.n_rows() {
        let w = d.weight(i);
        if w == 0.0 {
            continue;
        }
        let lp = log_class_probs(theta, d.row(i))?;
        let y = d.label(i) as usize;
        for z in 0..N_CLASSES {
            terms[z] = gamma.get(z, y).ln() + lp[z];
        }
        ll += w * log_sum_exp(&terms);
    }
    if let Some(s2) = sigma2 {
        ll -= theta.coefficients.iter().map(|t| t * t).sum::<f64>() / (2.0 * s2);
    }
    Ok(ll)
}

fn initial_matrix(init: &FlipInit) -> Result<FlipMatrix> {
    match init {
        FlipInit::Default => Ok(FlipMatrix::with_diagonal(N_CLASSES, 0.9)),
        FlipInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let rows: Vec<Vec<f64>> = (0..N_CLASSES)
                .map(|a| {
                    let diag = rng.random_range(0.5..1.0);
                    (0..N_CLASSES)
                        .map(|b| {
                            if a == b {
                                diag
                            } else {
                                (1.0 - diag) / (N_CLASSES - 1) as f64
                            }
                        })
                        .collect()
                })
                .collect();
            FlipMatrix::from_rows(&rows)
        }
        FlipInit::Matrix(m) if m.n_classes() == N_CLASSES && m.is_row_stochastic(1e-9) => Ok(m.clone()),
        FlipInit::Matrix(m) => Err(Error::InvalidArgument(format!(
            "bad initial flip matrix {:?}",
            m.rows()
        ))),
    }
}

pub fn fit_flipping(d: &SparseDataset, opts: &FlippingOptions) -> Result<FlippingFit> {
    if d.n_rows() < 2 || !d.has_both_classes() {
        return Err(Error::Validation("flipping model needs both classes present".into()));
    }
    let theta = fit_penalized(d, &theta_penalty(opts.sigma2), &opts.solver)?;
    let gamma_matrix = initial_matrix(&opts.init)?;
    let start = observed_loglik(d, &theta, &gamma_matrix, opts.sigma2)?;
    let mut fit = FlippingFit {
        theta,
        gamma_matrix,
        loglik_trace: vec![start],
        converged: false,
        n_iterations: 0,
    };
    for _ in 0..opts.max_em_iters {
        em_cycle(d, &mut fit, opts)?;
        let t = &fit.loglik_trace;
        if t[t.len() - 1] - t[t.len() - 2] < opts.loglik_tol {
            fit.converged = true;
            break;
        }
    }
    Ok(fit)
}

/// One E-step and both M-steps, in place. The θ step is warm-started, so
/// the observed log-likelihood cannot decrease.
pub fn em_cycle(d: &SparseDataset, fit: &mut FlippingFit, opts: &FlippingOptions) -> Result<()> {
    let post = e_step(d, fit)?;
    fit.gamma_matrix = m_step_gamma(d, &post)?;
    let mut solver = opts.solver.clone();
    solver.warm_start = Some(fit.theta.warm_start());
    fit.theta = m_step_theta(d, &post, opts.sigma2, &solver)?;
    fit.loglik_trace
        .push(observed_loglik(d, &fit.theta, &fit.gamma_matrix, opts.sigma2)?);
    fit.n_iterations += 1;
    Ok(())
}

/// Prediction from θ alone.
pub fn predict_flipping(fit: &FlippingFit, x: &SparseRow) -> Result<Prediction> {
    predict_glm(&fit.theta, x)
}
