//! Attribute prediction for unseen samples.
//!
//! Attribute-agnostic (AAg) prediction sparse-codes a feature vector against
//! `D_x` alone and decodes the code through `D_z`. Attribute-aware (AAw)
//! prediction starts from the AAg code and additionally minimizes the entropy
//! of the Student's-t soft assignment of `D_z·a` to the unseen prototypes:
//!
//! ```text
//! g(a) = 1/p·‖x − D_x a‖² + γ·H(p(a)),     minimize g(a) + λ/r·‖a‖₁
//! p_m(a) ∝ (1 + ‖D_z a − z′_m‖²/ρ)^(−(ρ+1)/2)
//! ```

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::dictionary::CoupledDictionary;
use crate::error::{check_dims, Error, Result};
use crate::linalg::{norm2_sq, spectral_norm_sq, squared_distance, DenseMatrix, Vector};
use crate::prox::{self, SmoothObjective, SolverOptions, StepRule};
use crate::sparse_coding::{lasso_solve, LassoProblem};

/// Normalized Student's-t similarities of one predicted attribute vector to
/// every unseen prototype.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    pub probabilities: Vector,
    /// Natural logarithms of `probabilities`, computed without underflow.
    pub log_probabilities: Vector,
    pub kernel_param: f64,
}

impl SoftAssignment {
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AawConfig {
    /// Sparsity weight `λ` (the penalty applied is `λ/r`).
    pub sparsity: f64,
    /// Entropy weight `γ`.
    pub entropy_weight: f64,
    /// Kernel parameter `ρ`.
    pub kernel_param: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub step_rule: StepRule,
}

impl Default for AawConfig {
    fn default() -> Self {
        AawConfig {
            sparsity: 0.05,
            entropy_weight: 0.005,
            kernel_param: 1.0,
            max_iterations: 500,
            tolerance: 1e-8,
            step_rule: StepRule::Backtracking,
        }
    }
}

impl AawConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.entropy_weight >= 0.0) || !self.entropy_weight.is_finite() {
            return Err(Error::invalid("gamma", "must be nonnegative"));
        }
        if !(self.kernel_param > 0.0) || !self.kernel_param.is_finite() {
            return Err(Error::invalid("rho", "must be positive"));
        }
        if !(self.sparsity >= 0.0) || !self.sparsity.is_finite() {
            return Err(Error::invalid("lambda", "must be nonnegative"));
        }
        self.solver_options().validate()
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            acceleration: true,
            step_rule: self.step_rule,
        }
    }
}

fn check_prototypes(attribute: ArrayView1<'_, f64>, zprime: ArrayView2<'_, f64>) -> Result<()> {
    check_dims(attribute.len() == zprime.nrows(), || {
        format!(
            "attribute vector has length {} but prototypes have {} rows",
            attribute.len(),
            zprime.nrows()
        )
    })?;
    if zprime.ncols() == 0 {
        return Err(Error::invalid("unseen_prototypes", "need at least one prototype"));
    }
    Ok(())
}

/// Soft assignment of an attribute vector (already decoded) to the prototypes.
pub fn soft_assignment_of(
    attribute: ArrayView1<'_, f64>,
    zprime: ArrayView2<'_, f64>,
    rho: f64,
) -> Result<SoftAssignment> {
    check_prototypes(attribute, zprime)?;
    if !(rho > 0.0) {
        return Err(Error::invalid("rho", "must be positive"));
    }
    let distances: Vec<f64> = zprime
        .axis_iter(Axis(1))
        .map(|z| squared_distance(attribute, z))
        .collect();
    let mut p = assignment_from_distances(&distances, rho);
    if distances.iter().any(|d| d.is_infinite()) {
        let logs: Vec<f64> = zprime
            .axis_iter(Axis(1))
            .map(|z| log_kernel_scaled(attribute, z, rho))
            .collect();
        p = assignment_from_log_kernels(&logs, rho);
    }
    Ok(p)
}

/// `ln(1 + ‖a − z‖²/ρ)` for distances whose square overflows.
fn log_kernel_scaled(a: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>, rho: f64) -> f64 {
    let scale = a.iter().zip(z).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let t: f64 = a.iter().zip(z).map(|(x, y)| ((x - y) / scale).powi(2)).sum();
    let log_ratio = 2.0 * scale.ln() + t.ln() - rho.ln();
    // ln(1 + e^x) without overflow
    log_ratio.max(0.0) + (-log_ratio.abs()).exp().ln_1p()
}

fn assignment_from_distances(distances: &[f64], rho: f64) -> SoftAssignment {
    let logs: Vec<f64> = distances.iter().map(|&d| (d / rho).ln_1p()).collect();
    assignment_from_log_kernels(&logs, rho)
}

fn assignment_from_log_kernels(logs: &[f64], rho: f64) -> SoftAssignment {
    let exponent = 0.5 * (rho + 1.0);
    let logits: Vec<f64> = logs.iter().map(|&l| -exponent * l).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let log_probabilities: Vector = logits.iter().map(|l| l - log_norm).collect();
    SoftAssignment {
        probabilities: log_probabilities.mapv(f64::exp),
        log_probabilities,
        kernel_param: rho,
    }
}

/// Soft assignment of `D_z·code` to the columns of `zprime`.
pub fn soft_assignment(
    code: ArrayView1<'_, f64>,
    attribute_dict: ArrayView2<'_, f64>,
    zprime: ArrayView2<'_, f64>,
    rho: f64,
) -> Result<SoftAssignment> {
    check_dims(code.len() == attribute_dict.ncols(), || {
        format!(
            "code has length {} but D_z has {} atoms",
            code.len(),
            attribute_dict.ncols()
        )
    })?;
    soft_assignment_of(attribute_dict.dot(&code).view(), zprime, rho)
}

/// Shannon entropy `−Σ p log p` (natural log), with `0·log 0 = 0`.
pub fn assignment_entropy(p: &SoftAssignment) -> f64 {
    let h: f64 = p
        .probabilities
        .iter()
        .zip(p.log_probabilities.iter())
        .filter(|(pm, _)| **pm > 0.0)
        .map(|(pm, lp)| -pm * lp)
        .sum();
    h.max(0.0)
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub code: Vector,
    /// `D_z·code`.
    pub attribute: Vector,
    pub converged: bool,
    /// Objective values of the solver, starting point first.
    pub trace: Vec<f64>,
}

fn check_feature(dict: &CoupledDictionary, x: ArrayView1<'_, f64>) -> Result<()> {
    check_dims(x.len() == dict.feature_dim(), || {
        format!(
            "feature vector has length {} but D_x has {} rows",
            x.len(),
            dict.feature_dim()
        )
    })
}

/// Attribute-agnostic prediction: `α = argmin 1/p·‖x − D_x a‖² + λ/r·‖a‖₁`,
/// attribute `D_z·α`.
pub fn aag_predict(
    dict: &CoupledDictionary,
    x: ArrayView1<'_, f64>,
    sparsity: f64,
    opts: &SolverOptions,
) -> Result<Prediction> {
    check_feature(dict, x)?;
    let p = dict.feature_dim() as f64;
    let r = dict.atoms() as f64;
    let problem = LassoProblem::new(dict.visual.view(), x, 1.0 / p, sparsity / r)?;
    let s = lasso_solve(&problem, opts, None)?;
    Ok(Prediction {
        attribute: dict.attribute.dot(&s.code),
        code: s.code,
        converged: s.converged,
        trace: s.trace,
    })
}

struct AawSmooth<'a> {
    dict: &'a CoupledDictionary,
    x: ArrayView1<'a, f64>,
    zprime: ArrayView2<'a, f64>,
    gamma: f64,
    rho: f64,
}

impl AawSmooth<'_> {
    fn evaluate(&self, code: ArrayView1<'_, f64>, want_gradient: bool) -> (f64, Option<Array1<f64>>) {
        let p = self.dict.feature_dim() as f64;
        let residual = &self.x - &self.dict.visual.dot(&code);
        let fidelity = norm2_sq(residual.view()) / p;
        if self.gamma == 0.0 {
            let grad = want_gradient.then(|| self.dict.visual.t().dot(&residual) * (-2.0 / p));
            return (fidelity, grad);
        }
        let u = self.dict.attribute.dot(&code);
        let distances: Vec<f64> = self
            .zprime
            .axis_iter(Axis(1))
            .map(|z| squared_distance(u.view(), z))
            .collect();
        let sa = assignment_from_distances(&distances, self.rho);
        let h = assignment_entropy(&sa);
        let value = fidelity + self.gamma * h;
        if !want_gradient {
            return (value, None);
        }
        // dH/du = Σ_j p_j (log p_j + H) · (ρ+1)/(ρ + d_j) · (u − z′_j)
        let mut dh_du = Vector::zeros(u.len());
        for (j, z) in self.zprime.axis_iter(Axis(1)).enumerate() {
            let pj = sa.probabilities[j];
            if pj == 0.0 {
                continue;
            }
            let coef = pj * (sa.log_probabilities[j] + h) * (self.rho + 1.0) / (self.rho + distances[j]);
            dh_du.scaled_add(coef, &(&u - &z));
        }
        let mut grad = self.dict.visual.t().dot(&residual) * (-2.0 / p);
        grad.scaled_add(self.gamma, &self.dict.attribute.t().dot(&dh_du));
        (value, Some(grad))
    }
}

impl SmoothObjective for AawSmooth<'_> {
    fn value(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.evaluate(x, false).0
    }

    fn value_and_gradient(&self, x: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
        let (v, g) = self.evaluate(x, true);
        (v, g.expect("gradient requested"))
    }
}

/// Smooth part `g(a) = 1/p·‖x − D_x a‖² + γ·H(p(a))` of the attribute-aware
/// objective and its analytic gradient.
pub fn aaw_objective_and_gradient(
    code: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
    dict: &CoupledDictionary,
    zprime: ArrayView2<'_, f64>,
    config: &AawConfig,
) -> Result<(f64, Vector)> {
    check_feature(dict, x)?;
    check_dims(code.len() == dict.atoms(), || {
        format!("code has length {} but dictionaries have {} atoms", code.len(), dict.atoms())
    })?;
    check_dims(zprime.nrows() == dict.attribute_dim(), || {
        format!(
            "prototypes have {} rows but D_z has {}",
            zprime.nrows(),
            dict.attribute_dim()
        )
    })?;
    let smooth = AawSmooth {
        dict,
        x,
        zprime,
        gamma: config.entropy_weight,
        rho: config.kernel_param,
    };
    Ok(smooth.value_and_gradient(code))
}

fn aaw_from(
    dict: &CoupledDictionary,
    zprime: ArrayView2<'_, f64>,
    x: ArrayView1<'_, f64>,
    config: &AawConfig,
    start: Vector,
    lipschitz: f64,
) -> Prediction {
    let smooth = AawSmooth {
        dict,
        x,
        zprime,
        gamma: config.entropy_weight,
        rho: config.kernel_param,
    };
    let l1 = config.sparsity / dict.atoms() as f64;
    let out = prox::minimize(&smooth, l1, start, lipschitz, &config.solver_options());
    Prediction {
        attribute: dict.attribute.dot(&out.point),
        code: out.point,
        converged: out.converged,
        trace: out.trace,
    }
}

/// Attribute-aware prediction, initialized from the attribute-agnostic code
/// (solved with `lasso`).
pub fn aaw_predict(
    dict: &CoupledDictionary,
    zprime: ArrayView2<'_, f64>,
    x: ArrayView1<'_, f64>,
    config: &AawConfig,
    lasso: &SolverOptions,
) -> Result<Prediction> {
    config.validate()?;
    check_dims(zprime.nrows() == dict.attribute_dim(), || {
        format!(
            "prototypes have {} rows but D_z has {}",
            zprime.nrows(),
            dict.attribute_dim()
        )
    })?;
    let start = aag_predict(dict, x, config.sparsity, lasso)?;
    let lipschitz = 2.0 / dict.feature_dim() as f64 * spectral_norm_sq(dict.visual.view());
    Ok(aaw_from(dict, zprime, x, config, start.code, lipschitz))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictionMethod {
    AttributeAgnostic,
    AttributeAware,
}

/// Predictions for a batch of samples (one column each).
#[derive(Clone, Debug)]
pub struct BatchPrediction {
    pub codes: DenseMatrix,
    pub attributes: DenseMatrix,
    pub unconverged: usize,
}

/// Predicts attributes for every column of `features`. With `parallel` the
/// samples are spread over the rayon pool; results do not depend on it.
pub fn predict_batch(
    dict: &CoupledDictionary,
    zprime: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    method: PredictionMethod,
    config: &AawConfig,
    lasso: &SolverOptions,
    parallel: bool,
) -> Result<BatchPrediction> {
    config.validate()?;
    check_dims(features.nrows() == dict.feature_dim(), || {
        format!(
            "features have {} rows but D_x has {}",
            features.nrows(),
            dict.feature_dim()
        )
    })?;
    let lipschitz = 2.0 / dict.feature_dim() as f64 * spectral_norm_sq(dict.visual.view());
    let one = |j: usize| -> Result<Prediction> {
        let x = features.column(j);
        let start = aag_predict(dict, x, config.sparsity, lasso)?;
        Ok(match method {
            PredictionMethod::AttributeAgnostic => start,
            PredictionMethod::AttributeAware => {
                let aag_ok = start.converged;
                let mut p = aaw_from(dict, zprime, x, config, start.code, lipschitz);
                p.converged &= aag_ok;
                p
            }
        })
    };
    let n = features.ncols();
    let preds: Vec<Prediction> = if parallel {
        (0..n).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..n).map(one).collect::<Result<_>>()?
    };
    let mut codes = DenseMatrix::zeros((dict.atoms(), n));
    let mut attributes = DenseMatrix::zeros((dict.attribute_dim(), n));
    let mut unconverged = 0;
    for (j, p) in preds.into_iter().enumerate() {
        codes.column_mut(j).assign(&p.code);
        attributes.column_mut(j).assign(&p.attribute);
        unconverged += usize::from(!p.converged);
    }
    Ok(BatchPrediction {
        codes,
        attributes,
        unconverged,
    })
}
