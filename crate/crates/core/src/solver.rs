//! Weighted, penalized binary logistic regression.
//!
//! Minimizes
//!
//! ```text
//! F(b, β) = -Σ_i w_i [y_i log g(η_i) + (1 - y_i) log(1 - g(η_i))]
//!           + Σ_j l1·p_j·|β_j| + Σ_j l2·q_j·β_j²,      η_i = b + x_iᵀβ
//! ```
//!
//! with a proximal Newton method: each outer iteration builds the quadratic
//! model of the smooth part at the current point, minimizes model + L1 by
//! cyclic coordinate descent with soft-thresholding, and then backtracks
//! along the resulting direction until the true objective decreases
//! sufficiently. Every accepted step lowers the objective, and a coordinate
//! that the soft-threshold sends to zero is stored as exactly `0.0`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::Design;
use crate::error::{Error, Result};

/// Negated log-likelihood terms are capped here (`log g >= -745`).
const LOG_FLOOR: f64 = 745.0;
const ARMIJO: f64 = 0.01;
const MAX_BACKTRACKS: usize = 50;
const CURVATURE_FLOOR: f64 = 1e-12;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `-[y log g(η) + (1-y) log(1-g(η))]`, each log clamped at -745.
#[inline]
pub fn log_loss(eta: f64, y: u8) -> f64 {
    if y == 1 {
        softplus(-eta).min(LOG_FLOOR)
    } else {
        softplus(eta).min(LOG_FLOOR)
    }
}

#[inline]
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Global L1/L2 weights with per-coefficient multipliers. The intercept is
/// never penalized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PenaltySpec {
    /// κ: global L1 weight.
    pub l1_global: f64,
    /// 1/(2σ²): global L2 weight.
    pub l2_global: f64,
    /// L1 multipliers `p_j`; `None` means all ones.
    pub penalty_factors: Option<Vec<f64>>,
    /// L2 multipliers; `None` means all ones.
    pub l2_factors: Option<Vec<f64>>,
}

impl PenaltySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn l1(kappa: f64) -> Self {
        Self {
            l1_global: kappa,
            ..Self::default()
        }
    }

    /// Ridge penalty `Σ θ_j² / (2σ²)`.
    pub fn l2_sigma2(sigma2: f64) -> Self {
        Self {
            l2_global: 1.0 / (2.0 * sigma2),
            ..Self::default()
        }
    }

    pub fn with_penalty_factors(mut self, factors: Vec<f64>) -> Self {
        self.penalty_factors = Some(factors);
        self
    }

    pub fn with_l2_factors(mut self, factors: Vec<f64>) -> Self {
        self.l2_factors = Some(factors);
        self
    }

    /// Same factors, different global L1 weight.
    pub fn with_l1(&self, l1_global: f64) -> Self {
        Self {
            l1_global,
            ..self.clone()
        }
    }

    pub fn l1_weight(&self, j: usize) -> f64 {
        self.l1_global * self.penalty_factors.as_ref().map_or(1.0, |p| p[j])
    }

    pub fn l2_weight(&self, j: usize) -> f64 {
        self.l2_global * self.l2_factors.as_ref().map_or(1.0, |q| q[j])
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.l1_global) || !ok(self.l2_global) {
            return Err(Error::InvalidArgument(format!(
                "penalty weights must be finite and >= 0 (l1 {}, l2 {})",
                self.l1_global, self.l2_global
            )));
        }
        for factors in [&self.penalty_factors, &self.l2_factors].into_iter().flatten() {
            if factors.len() != n_features {
                return Err(Error::DimensionMismatch {
                    expected: n_features,
                    actual: factors.len(),
                });
            }
            if factors.iter().any(|&p| !ok(p)) {
                return Err(Error::InvalidArgument("penalty factors must be >= 0".into()));
            }
        }
        Ok(())
    }

    fn l1_vector(&self, n: usize) -> Vec<f64> {
        (0..n).map(|j| self.l1_weight(j)).collect()
    }

    fn l2_vector(&self, n: usize) -> Vec<f64> {
        (0..n).map(|j| self.l2_weight(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Bound on the subgradient optimality violation.
    pub tolerance: f64,
    /// Budget of coordinate sweeps across all outer iterations.
    pub max_iterations: usize,
    pub warm_start: Option<WarmStart>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_iterations: 10_000,
            warm_start: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_warm_start(mut self, intercept: f64, coefficients: Vec<f64>) -> Self {
        self.warm_start = Some(WarmStart {
            intercept,
            coefficients,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub objective_value: f64,
    /// Coordinate sweeps performed.
    pub n_iterations: usize,
    pub converged: bool,
    /// Objective after each accepted outer step, starting point first.
    pub objective_trace: Vec<f64>,
}

impl GlmFit {
    /// A fit with the given parameters and no optimization history.
    pub fn from_parameters(intercept: f64, coefficients: Vec<f64>) -> Self {
        Self {
            intercept,
            coefficients,
            objective_value: f64::NAN,
            n_iterations: 0,
            converged: true,
            objective_trace: Vec::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    /// `b + θᵀx` over a sparse row. Errors on an out-of-range index.
    pub fn linear_predictor(&self, row: impl IntoIterator<Item = (usize, f64)>) -> Result<f64> {
        let mut acc = 0.0;
        for (j, v) in row {
            let theta = self.coefficients.get(j).ok_or(Error::FeatureOutOfRange {
                index: j,
                n_features: self.coefficients.len(),
            })?;
            acc += theta * v;
        }
        Ok(acc + self.intercept)
    }

    pub fn probability(&self, row: impl IntoIterator<Item = (usize, f64)>) -> Result<f64> {
        Ok(sigmoid(self.linear_predictor(row)?))
    }

    pub fn nonzero_count(&self) -> usize {
        self.coefficients.iter().filter(|c| **c != 0.0).count()
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            intercept: self.intercept,
            coefficients: self.coefficients.clone(),
        }
    }
}

/// Gradient of the smooth part (log-loss plus L2).
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothGradient {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

fn check_dims<D: Design>(d: &D, coefficients: &[f64], pen: &PenaltySpec) -> Result<()> {
    if coefficients.len() != d.n_features() {
        return Err(Error::DimensionMismatch {
            expected: d.n_features(),
            actual: coefficients.len(),
        });
    }
    pen.validate(d.n_features())
}

fn row_eta<D: Design>(d: &D, i: usize, intercept: f64, coefficients: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, v) in d.row_entries(i) {
        acc += coefficients[j] * v;
    }
    acc + intercept
}

/// Negative penalized log-likelihood.
pub fn negative_penalized_loglik<D: Design>(
    d: &D,
    intercept: f64,
    coefficients: &[f64],
    pen: &PenaltySpec,
) -> Result<f64> {
    check_dims(d, coefficients, pen)?;
    let mut loss = 0.0;
    for i in 0..d.n_rows() {
        let w = d.weight(i);
        if w != 0.0 {
            loss += w * log_loss(row_eta(d, i, intercept, coefficients), d.label(i));
        }
    }
    let penalty: f64 = coefficients
        .iter()
        .enumerate()
        .map(|(j, &b)| pen.l1_weight(j) * b.abs() + pen.l2_weight(j) * b * b)
        .sum();
    Ok(loss + penalty)
}

/// `Σ_i w_i (g_i - y_i) x_ij + 2·l2·q_j·θ_j`, intercept separately.
pub fn smooth_gradient<D: Design>(
    d: &D,
    intercept: f64,
    coefficients: &[f64],
    pen: &PenaltySpec,
) -> Result<SmoothGradient> {
    check_dims(d, coefficients, pen)?;
    let mut g0 = 0.0;
    let mut g: Vec<f64> = coefficients
        .iter()
        .enumerate()
        .map(|(j, &b)| 2.0 * pen.l2_weight(j) * b)
        .collect();
    for i in 0..d.n_rows() {
        let w = d.weight(i);
        if w == 0.0 {
            continue;
        }
        let r = w * (sigmoid(row_eta(d, i, intercept, coefficients)) - f64::from(d.label(i)));
        g0 += r;
        for (j, v) in d.row_entries(i) {
            g[j] += r * v;
        }
    }
    Ok(SmoothGradient {
        intercept: g0,
        coefficients: g,
    })
}

/// Largest violation of the subgradient optimality conditions.
pub fn kkt_violation<D: Design>(d: &D, intercept: f64, coefficients: &[f64], pen: &PenaltySpec) -> Result<f64> {
    let g = smooth_gradient(d, intercept, coefficients, pen)?;
    let mut worst = g.intercept.abs();
    for (j, (&gj, &b)) in g.coefficients.iter().zip(coefficients).enumerate() {
        worst = worst.max(coordinate_violation(gj, b, pen.l1_weight(j)));
    }
    Ok(worst)
}

#[inline]
fn coordinate_violation(grad: f64, beta: f64, l1: f64) -> f64 {
    if beta > 0.0 {
        (grad + l1).abs()
    } else if beta < 0.0 {
        (grad - l1).abs()
    } else {
        (grad.abs() - l1).max(0.0)
    }
}

/// Column-major copy of a design, built once per fit.
struct Columns {
    ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
}

impl Columns {
    fn from_design<D: Design>(d: &D) -> Self {
        let m = d.n_features();
        let mut counts = vec![0usize; m + 1];
        for i in 0..d.n_rows() {
            for (j, _) in d.row_entries(i) {
                counts[j + 1] += 1;
            }
        }
        for j in 0..m {
            counts[j + 1] += counts[j];
        }
        let nnz = counts[m];
        let mut next = counts.clone();
        let mut rows = vec![0; nnz];
        let mut vals = vec![0.0; nnz];
        for i in 0..d.n_rows() {
            for (j, v) in d.row_entries(i) {
                rows[next[j]] = i;
                vals[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            ptr: counts,
            rows,
            vals,
        }
    }

    #[inline]
    fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.ptr[j]..self.ptr[j + 1];
        self.rows[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    fn is_empty_col(&self, j: usize) -> bool {
        self.ptr[j] == self.ptr[j + 1]
    }
}

struct Problem {
    n: usize,
    m: usize,
    cols: Columns,
    y: Vec<u8>,
    w: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl Problem {
    fn new<D: Design>(d: &D, pen: &PenaltySpec) -> Self {
        let m = d.n_features();
        Self {
            n: d.n_rows(),
            m,
            cols: Columns::from_design(d),
            y: (0..d.n_rows()).map(|i| d.label(i)).collect(),
            w: (0..d.n_rows()).map(|i| d.weight(i)).collect(),
            l1: pen.l1_vector(m),
            l2: pen.l2_vector(m),
        }
    }

    fn eta_into(&self, intercept: f64, beta: &[f64], eta: &mut [f64]) {
        eta.fill(intercept);
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (i, v) in self.cols.col(j) {
                    eta[i] += b * v;
                }
            }
        }
    }

    fn objective(&self, beta: &[f64], eta: &[f64]) -> f64 {
        let mut loss = 0.0;
        for i in 0..self.n {
            if self.w[i] != 0.0 {
                loss += self.w[i] * log_loss(eta[i], self.y[i]);
            }
        }
        let mut penalty = 0.0;
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                penalty += self.l1[j] * b.abs() + self.l2[j] * b * b;
            }
        }
        loss + penalty
    }

    fn initial_intercept(&self) -> f64 {
        let (mut pos, mut tot) = (0.0, 0.0);
        for i in 0..self.n {
            tot += self.w[i];
            pos += self.w[i] * f64::from(self.y[i]);
        }
        if tot <= 0.0 {
            return 0.0;
        }
        let rate = (pos / tot).clamp(1e-6, 1.0 - 1e-6);
        (rate / (1.0 - rate)).ln()
    }
}

/// Largest set of L1-free coordinates solved jointly in the inner loop.
const BLOCK_LIMIT: usize = 64;

/// The intercept plus every L1-free coordinate, minimized exactly inside
/// each inner pass by a dense Cholesky solve. Curvature concentrated on few
/// rows makes these coordinates strongly coupled, which stalls plain
/// coordinate descent.
struct UnpenalizedBlock {
    members: Vec<usize>,
    in_block: Vec<bool>,
    /// `n × (1 + members)`, first column all ones.
    dense: DMatrix<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
    diag: Vec<f64>,
}

impl UnpenalizedBlock {
    fn new(prob: &Problem) -> Option<Self> {
        let members: Vec<usize> = (0..prob.m)
            .filter(|&j| prob.l1[j] == 0.0 && !(prob.cols.is_empty_col(j) && prob.l2[j] == 0.0))
            .collect();
        if members.is_empty() || members.len() > BLOCK_LIMIT {
            return None;
        }
        let mut dense = DMatrix::zeros(prob.n, members.len() + 1);
        dense.column_mut(0).fill(1.0);
        for (a, &j) in members.iter().enumerate() {
            for (i, v) in prob.cols.col(j) {
                dense[(i, a + 1)] = v;
            }
        }
        let mut in_block = vec![false; prob.m];
        for &j in &members {
            in_block[j] = true;
        }
        Some(Self {
            members,
            in_block,
            dense,
            factor: None,
            diag: Vec::new(),
        })
    }

    fn contains(&self, j: usize) -> bool {
        self.in_block[j]
    }

    fn factor(&mut self, prob: &Problem, curv: &[f64]) {
        let weighted = DMatrix::from_fn(self.dense.nrows(), self.dense.ncols(), |i, a| {
            curv[i] * self.dense[(i, a)]
        });
        let mut h = self.dense.transpose() * weighted;
        for (a, &j) in self.members.iter().enumerate() {
            h[(a + 1, a + 1)] += 2.0 * prob.l2[j];
        }
        let scale = h.diagonal().iter().fold(0.0f64, |acc, v| acc.max(*v)).max(1.0);
        let mut jitter = CURVATURE_FLOOR;
        self.factor = loop {
            let mut shifted = h.clone();
            for a in 0..shifted.nrows() {
                shifted[(a, a)] += jitter * scale;
            }
            if let Some(c) = shifted.clone().cholesky() {
                self.diag = shifted.diagonal().iter().copied().collect();
                break Some(c);
            }
            if jitter > 1.0 {
                break None;
            }
            jitter *= 100.0;
        };
    }

    /// Exact block minimization of the quadratic model; returns the largest
    /// curvature-scaled change.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        prob: &Problem,
        g0: f64,
        grad: &[f64],
        beta: &[f64],
        curv: &[f64],
        t0: &mut f64,
        target: &mut [f64],
        u: &mut [f64],
    ) -> f64 {
        let Some(chol) = &self.factor else {
            return 0.0;
        };
        let cu = DVector::from_iterator(u.len(), curv.iter().zip(u.iter()).map(|(c, v)| c * v));
        let mut r = self.dense.tr_mul(&cu);
        r[0] += g0;
        for (a, &j) in self.members.iter().enumerate() {
            r[a + 1] += grad[j] + 2.0 * prob.l2[j] * (target[j] - beta[j]);
        }
        let delta = -chol.solve(&r);
        *t0 += delta[0];
        for (a, &j) in self.members.iter().enumerate() {
            target[j] += delta[a + 1];
        }
        let du = &self.dense * &delta;
        for (ui, d) in u.iter_mut().zip(du.iter()) {
            *ui += d;
        }
        delta
            .iter()
            .zip(&self.diag)
            .map(|(d, h)| d.abs() * h)
            .fold(0.0, f64::max)
    }
}

/// Minimizes the penalized objective. Non-convergence within the sweep
/// budget is reported through `converged = false`, not as an error.
pub fn fit_penalized<D: Design>(d: &D, pen: &PenaltySpec, opts: &SolverOptions) -> Result<GlmFit> {
    if d.n_rows() == 0 {
        return Err(Error::InvalidArgument("cannot fit an empty dataset".into()));
    }
    pen.validate(d.n_features())?;
    let prob = Problem::new(d, pen);
    fit_problem(&prob, opts)
}

fn fit_problem(prob: &Problem, opts: &SolverOptions) -> Result<GlmFit> {
    let (n, m) = (prob.n, prob.m);
    let (mut b0, mut beta) = match &opts.warm_start {
        Some(ws) => {
            if ws.coefficients.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: ws.coefficients.len(),
                });
            }
            (ws.intercept, ws.coefficients.clone())
        }
        None => (prob.initial_intercept(), vec![0.0; m]),
    };

    let mut eta = vec![0.0; n];
    prob.eta_into(b0, &beta, &mut eta);
    let mut f = prob.objective(&beta, &eta);
    let mut trace = vec![f];

    let mut resid = vec![0.0; n];
    let mut curv = vec![0.0; n];
    let mut grad = vec![0.0; m];
    let mut hess = vec![0.0; m];
    let mut target = vec![0.0; m];
    let mut u = vec![0.0; n];
    let mut eta_cand = vec![0.0; n];
    let mut beta_cand = vec![0.0; m];
    let mut active: Vec<usize> = Vec::with_capacity(m);

    let mut block = UnpenalizedBlock::new(prob);
    let mut sweeps = 0usize;
    let mut converged = false;

    loop {
        // Gradient and diagonal curvature of the smooth part.
        let (mut g0, mut h0) = (0.0, 0.0);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            resid[i] = prob.w[i] * (p - f64::from(prob.y[i]));
            curv[i] = prob.w[i] * p * (1.0 - p);
            g0 += resid[i];
            h0 += curv[i];
        }
        let mut violation = g0.abs();
        for j in 0..m {
            let (mut g, mut h) = (2.0 * prob.l2[j] * beta[j], 2.0 * prob.l2[j]);
            for (i, v) in prob.cols.col(j) {
                g += resid[i] * v;
                h += curv[i] * v * v;
            }
            grad[j] = g;
            hess[j] = h;
            violation = violation.max(coordinate_violation(g, beta[j], prob.l1[j]));
        }
        if violation <= opts.tolerance {
            converged = true;
            break;
        }
        if sweeps >= opts.max_iterations {
            break;
        }
        if let Some(b) = block.as_mut() {
            b.factor(prob, &curv);
        }

        // Coordinate descent on the quadratic model.
        target.copy_from_slice(&beta);
        let mut t0 = b0;
        u.fill(0.0);
        let inner_tol = (0.1 * violation).max(0.1 * opts.tolerance);
        let mut full_sweep = true;
        loop {
            let mut max_change = 0.0f64;
            if let Some(b) = block.as_ref() {
                max_change = b.step(prob, g0, &grad, &beta, &curv, &mut t0, &mut target, &mut u);
            } else {
                let mut deriv = g0;
                for i in 0..n {
                    deriv += curv[i] * u[i];
                }
                let hd = h0 + CURVATURE_FLOOR;
                let delta = -deriv / hd;
                if delta != 0.0 {
                    t0 += delta;
                    for ui in u.iter_mut() {
                        *ui += delta;
                    }
                }
                max_change = max_change.max(delta.abs() * hd);
            }
            let coords: &mut dyn Iterator<Item = usize> = if full_sweep {
                &mut (0..m)
            } else {
                &mut active.iter().copied()
            };
            for j in coords {
                if (prob.cols.is_empty_col(j) && prob.l2[j] == 0.0) || block.as_ref().is_some_and(|b| b.contains(j)) {
                    continue;
                }
                let mut deriv = grad[j] + 2.0 * prob.l2[j] * (target[j] - beta[j]);
                for (i, v) in prob.cols.col(j) {
                    deriv += curv[i] * v * u[i];
                }
                let hd = hess[j] + CURVATURE_FLOOR;
                let new = soft_threshold(target[j] - deriv / hd, prob.l1[j] / hd);
                let delta = new - target[j];
                if delta != 0.0 {
                    for (i, v) in prob.cols.col(j) {
                        u[i] += delta * v;
                    }
                    target[j] = new;
                }
                max_change = max_change.max(delta.abs() * hd);
            }
            sweeps += 1;

            if max_change <= inner_tol {
                if full_sweep {
                    break;
                }
                full_sweep = true;
            } else if full_sweep {
                active.clear();
                active.extend((0..m).filter(|&j| target[j] != 0.0));
                full_sweep = false;
            }
            if sweeps >= opts.max_iterations {
                break;
            }
        }

        // Backtracking line search on the true objective.
        let d0 = t0 - b0;
        let mut decrease = g0 * d0;
        for j in 0..m {
            let dj = target[j] - beta[j];
            if dj != 0.0 {
                decrease += grad[j] * dj + prob.l1[j] * (target[j].abs() - beta[j].abs());
            }
        }
        if !(decrease < 0.0) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            if step == 1.0 {
                beta_cand.copy_from_slice(&target);
            } else {
                for j in 0..m {
                    beta_cand[j] = beta[j] + step * (target[j] - beta[j]);
                }
            }
            let b0_cand = b0 + step * d0;
            prob.eta_into(b0_cand, &beta_cand, &mut eta_cand);
            let f_cand = prob.objective(&beta_cand, &eta_cand);
            let sufficient = f_cand <= f + ARMIJO * step * decrease;
            let roundoff = f_cand <= f && -decrease <= 1e-10 * f.abs().max(1.0);
            if sufficient || roundoff {
                accepted = Some((b0_cand, f_cand));
                break;
            }
            step *= 0.5;
        }
        let Some((b0_new, f_new)) = accepted else {
            log::debug!("line search stalled at violation {violation:e}");
            break;
        };
        let stagnant = f_new >= f;
        b0 = b0_new;
        std::mem::swap(&mut beta, &mut beta_cand);
        std::mem::swap(&mut eta, &mut eta_cand);
        f = f_new;
        trace.push(f);
        if stagnant {
            // the model still predicts a decrease, but it is below the
            // resolution of the objective
            log::debug!("objective stagnant at violation {violation:e}");
            converged = true;
            break;
        }
    }

    Ok(GlmFit {
        intercept: b0,
        coefficients: beta,
        objective_value: f,
        n_iterations: sweeps,
        converged,
        objective_trace: trace,
    })
}

/// One fit per penalty level, each warm-started from the previous one.
/// Levels must be positive and non-increasing.
pub fn fit_path<D: Design>(
    d: &D,
    template: &PenaltySpec,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<GlmFit>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty penalty path".into()));
    }
    if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument("path levels must be positive and finite".into()));
    }
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("path levels must be descending".into()));
    }
    if d.n_rows() == 0 {
        return Err(Error::InvalidArgument("cannot fit an empty dataset".into()));
    }
    template.validate(d.n_features())?;
    let mut prob = Problem::new(d, template);
    let mut out: Vec<GlmFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let pen = template.with_l1(lambda);
        prob.l1 = pen.l1_vector(prob.m);
        let mut step_opts = opts.clone();
        if let Some(prev) = out.last() {
            step_opts.warm_start = Some(prev.warm_start());
        }
        out.push(fit_problem(&prob, &step_opts)?);
    }
    Ok(out)
}

/// Smallest global L1 weight at which every coefficient with a positive
/// factor is zero, together with the fit of the unpenalized coordinates.
pub fn lambda_max<D: Design>(d: &D, template: &PenaltySpec, opts: &SolverOptions) -> Result<(f64, GlmFit)> {
    let huge = template.with_l1(1e300);
    let base = fit_penalized(d, &huge, opts)?;
    let g = smooth_gradient(d, base.intercept, &base.coefficients, &template.with_l1(0.0))?;
    let mut lmax = 0.0f64;
    for (j, &gj) in g.coefficients.iter().enumerate() {
        let p = template.penalty_factors.as_ref().map_or(1.0, |p| p[j]);
        if p > 0.0 {
            lmax = lmax.max(gj.abs() / p);
        }
    }
    Ok((lmax, base))
}

/// `points` log-spaced levels from `max` down `decades` powers of ten.
pub fn log_grid(max: f64, points: usize, decades: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![max],
        _ => (0..points)
            .map(|k| max * 10f64.powf(-decades * k as f64 / (points - 1) as f64))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SparseDataset, SparseRow};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, m: usize, seed: u64) -> SparseDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        SparseDataset::from_dense(&rows, labels).unwrap()
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(3f64.ln()), 0.75, epsilon = 1e-15);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_eq!(log_loss(-1e6, 1), 745.0);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        assert_eq!(soft_threshold(-2.0, 2.0), 0.0);
    }

    #[test]
    fn zero_model_loss_is_n_log2() {
        let d = random_dataset(7, 3, 1);
        let v = negative_penalized_loglik(&d, 0.0, &[0.0; 3], &PenaltySpec::none()).unwrap();
        assert_relative_eq!(v, 7.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn single_point_intercept_loss() {
        let d = SparseDataset::new(vec![SparseRow::default()], vec![1], 1).unwrap();
        let b = 0.7;
        let v = negative_penalized_loglik(&d, b, &[0.0], &PenaltySpec::none()).unwrap();
        assert_relative_eq!(v, (1.0 + (-b as f64).exp()).ln(), epsilon = 1e-14);
        // x = 0 so θ_1 only enters through the penalty
        let pen = PenaltySpec::l1(3.0);
        let v2 = negative_penalized_loglik(&d, b, &[2.0], &pen).unwrap();
        assert_relative_eq!(v2, v + 6.0, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let d = random_dataset(4, 3, 2);
        assert!(matches!(
            negative_penalized_loglik(&d, 0.0, &[0.0; 2], &PenaltySpec::none()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(smooth_gradient(&d, 0.0, &[0.0; 4], &PenaltySpec::none()).is_err());
        let bad = PenaltySpec::l1(1.0).with_penalty_factors(vec![1.0]);
        assert!(fit_penalized(&d, &bad, &SolverOptions::default()).is_err());
    }

    #[test]
    fn symmetric_pairs_have_zero_gradient() {
        let d = SparseDataset::from_dense(
            &[vec![1.0, 2.0], vec![1.0, 2.0], vec![-3.0, 0.5], vec![-3.0, 0.5]],
            vec![1, 0, 0, 1],
        )
        .unwrap();
        let g = smooth_gradient(&d, 0.0, &[0.0, 0.0], &PenaltySpec::none()).unwrap();
        assert_eq!(g.coefficients, vec![0.0, 0.0]);
        assert_eq!(g.intercept, 0.0);
    }

    #[test]
    fn zero_weights_leave_pure_ridge_gradient() {
        let d = random_dataset(6, 3, 4).with_instance_weights(vec![0.0; 6]).unwrap();
        let pen = PenaltySpec {
            l2_global: 0.3,
            ..PenaltySpec::default()
        };
        let theta = [1.0, -2.0, 0.5];
        let g = smooth_gradient(&d, 0.4, &theta, &pen).unwrap();
        for (gj, t) in g.coefficients.iter().zip(theta) {
            assert_relative_eq!(*gj, 2.0 * 0.3 * t, epsilon = 1e-15);
        }
    }

    #[test]
    fn separable_data_with_ridge_is_finite_and_exact() {
        let d = SparseDataset::from_dense(
            &[vec![-2.0], vec![-1.0], vec![-0.5], vec![0.5], vec![1.0], vec![2.0]],
            vec![0, 0, 0, 1, 1, 1],
        )
        .unwrap();
        let fit = fit_penalized(&d, &PenaltySpec::l2_sigma2(1.0), &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].is_finite() && fit.coefficients[0] > 0.0);
        for i in 0..d.n_rows() {
            let p = fit.probability(d.row(i).iter()).unwrap();
            assert_eq!(u8::from(p > 0.5), d.labels()[i]);
        }
    }

    #[test]
    fn dominant_l1_gives_null_model() {
        let d = random_dataset(40, 4, 9);
        let fit = fit_penalized(&d, &PenaltySpec::l1(1e6), &SolverOptions::default()).unwrap();
        assert!(fit.coefficients.iter().all(|&c| c == 0.0));
        let rate = d.n_positive() as f64 / d.n_rows() as f64;
        assert_relative_eq!(fit.intercept, (rate / (1.0 - rate)).ln(), epsilon = 1e-7);
    }

    #[test]
    fn objective_trace_is_monotone() {
        let d = random_dataset(50, 6, 11);
        let fit = fit_penalized(&d, &PenaltySpec::l1(0.5), &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fit_satisfies_kkt() {
        let d = random_dataset(30, 4, 5);
        let pen = PenaltySpec::l1(1.5).with_penalty_factors(vec![1.0, 0.0, 2.0, 1.0]);
        let fit = fit_penalized(&d, &pen, &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        let v = kkt_violation(&d, fit.intercept, &fit.coefficients, &pen).unwrap();
        assert!(v <= 1e-7, "violation {v}");
    }

    #[test]
    fn path_rejects_bad_levels() {
        let d = random_dataset(10, 2, 3);
        let opts = SolverOptions::default();
        assert!(fit_path(&d, &PenaltySpec::none(), &[], &opts).is_err());
        assert!(fit_path(&d, &PenaltySpec::none(), &[1.0, 2.0], &opts).is_err());
        assert!(fit_path(&d, &PenaltySpec::none(), &[1.0, 0.0], &opts).is_err());
    }

    #[test]
    fn path_of_equal_levels_is_idempotent() {
        let d = random_dataset(25, 3, 8);
        let fits = fit_path(&d, &PenaltySpec::none(), &[0.7, 0.7], &SolverOptions::default()).unwrap();
        assert_eq!(fits[0].coefficients, fits[1].coefficients);
        assert_eq!(fits[0].intercept, fits[1].intercept);
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let d = random_dataset(40, 5, 21);
        let (lmax, _) = lambda_max(&d, &PenaltySpec::none(), &SolverOptions::default()).unwrap();
        let at = fit_penalized(&d, &PenaltySpec::l1(lmax * 1.0001), &SolverOptions::default()).unwrap();
        assert_eq!(at.nonzero_count(), 0);
        let below = fit_penalized(&d, &PenaltySpec::l1(lmax * 0.9), &SolverOptions::default()).unwrap();
        assert!(below.nonzero_count() > 0);
    }

    #[test]
    fn log_grid_spacing() {
        let g = log_grid(10.0, 5, 4.0);
        assert_eq!(g.len(), 5);
        assert_relative_eq!(g[4], 1e-3, epsilon = 1e-15);
        assert_relative_eq!(g[1], 1.0, epsilon = 1e-14);
    }
}
