//! ℓ1-regularized least squares: `data_weight·‖t − D·a‖² + sparsity_weight·‖a‖₁`.
//!
//! [`lasso_solve`] is an accelerated proximal gradient solver with a fixed
//! step from a power-iteration bound on `‖D‖₂`. [`cd_lasso_oracle`] is an
//! independent cyclic coordinate descent meant for checking it on small
//! problems.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::linalg::{norm1, norm2_sq, spectral_norm_sq, DenseMatrix, Vector};
use crate::prox::{self, SmoothObjective};

pub use crate::prox::{soft_threshold, SolverOptions, StepRule};

/// Matrix of sparse codes, one column per sample (`atoms × samples`).
pub type SparseCodeMatrix = DenseMatrix;

/// Fidelity and penalty scales of a LASSO subproblem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LassoWeights {
    pub data_weight: f64,
    pub sparsity_weight: f64,
}

impl LassoWeights {
    pub fn new(data_weight: f64, sparsity_weight: f64) -> Result<Self> {
        if !(data_weight > 0.0) || !data_weight.is_finite() {
            return Err(Error::invalid("data_weight", "must be positive and finite"));
        }
        if !(sparsity_weight >= 0.0) || !sparsity_weight.is_finite() {
            return Err(Error::invalid("sparsity_weight", "must be nonnegative and finite"));
        }
        Ok(LassoWeights {
            data_weight,
            sparsity_weight,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LassoProblem<'a> {
    pub dictionary: ArrayView2<'a, f64>,
    pub target: ArrayView1<'a, f64>,
    pub weights: LassoWeights,
}

impl<'a> LassoProblem<'a> {
    pub fn new(
        dictionary: ArrayView2<'a, f64>,
        target: ArrayView1<'a, f64>,
        data_weight: f64,
        sparsity_weight: f64,
    ) -> Result<Self> {
        let weights = LassoWeights::new(data_weight, sparsity_weight)?;
        check_dims(dictionary.nrows() == target.len(), || {
            format!(
                "dictionary has {} rows but target has length {}",
                dictionary.nrows(),
                target.len()
            )
        })?;
        Ok(LassoProblem {
            dictionary,
            target,
            weights,
        })
    }

    pub fn code_len(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn residual(&self, code: ArrayView1<'_, f64>) -> Vector {
        &self.target - &self.dictionary.dot(&code)
    }

    /// Gradient of the fidelity term, `2·w·Dᵀ(D·a − t)`.
    pub fn fidelity_gradient(&self, code: ArrayView1<'_, f64>) -> Vector {
        let r = self.residual(code);
        self.dictionary.t().dot(&r) * (-2.0 * self.weights.data_weight)
    }

    pub fn objective(&self, code: ArrayView1<'_, f64>) -> f64 {
        let r = self.residual(code);
        self.weights.data_weight * norm2_sq(r.view())
            + self.weights.sparsity_weight * norm1(code)
    }

    /// Curvature bound `2·w·σ_max(D)²` of the fidelity term.
    pub fn lipschitz(&self) -> f64 {
        2.0 * self.weights.data_weight * spectral_norm_sq(self.dictionary)
    }

    /// Largest violation of the subgradient optimality condition at `code`,
    /// relative to the sparsity weight: for nonzero coordinates
    /// `|∂f/∂a_i + w·sign(a_i)| / w`, for zeros `|∂f/∂a_i| / w − 1` (clamped at 0).
    pub fn optimality_violation(&self, code: ArrayView1<'_, f64>) -> f64 {
        let g = self.fidelity_gradient(code);
        let w = self.weights.sparsity_weight;
        let scale = if w > 0.0 { w } else { 1.0 };
        g.iter()
            .zip(code.iter())
            .map(|(&gi, &ai)| {
                if ai != 0.0 {
                    (gi + w * ai.signum()).abs() / scale
                } else {
                    ((gi.abs() - w) / scale).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

struct Fidelity<'p, 'a> {
    problem: &'p LassoProblem<'a>,
}

impl SmoothObjective for Fidelity<'_, '_> {
    fn value(&self, a: ArrayView1<'_, f64>) -> f64 {
        self.problem.weights.data_weight * norm2_sq(self.problem.residual(a).view())
    }

    fn value_and_gradient(&self, a: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
        let p = self.problem;
        let r = p.residual(a);
        let w = p.weights.data_weight;
        (w * norm2_sq(r.view()), p.dictionary.t().dot(&r) * (-2.0 * w))
    }
}

#[derive(Clone, Debug)]
pub struct LassoSolution {
    pub code: Vector,
    pub objective: f64,
    pub iterations: usize,
    /// False when the tolerance was not met within `max_iterations`; `code`
    /// is then the best iterate found.
    pub converged: bool,
    /// Objective values, starting point first. Non-increasing.
    pub trace: Vec<f64>,
}

/// Solves one LASSO problem.
pub fn lasso_solve(
    problem: &LassoProblem<'_>,
    opts: &SolverOptions,
    warm_start: Option<ArrayView1<'_, f64>>,
) -> Result<LassoSolution> {
    opts.validate()?;
    solve_with_bound(problem, opts, warm_start, problem.lipschitz())
}

fn solve_with_bound(
    problem: &LassoProblem<'_>,
    opts: &SolverOptions,
    warm_start: Option<ArrayView1<'_, f64>>,
    lipschitz: f64,
) -> Result<LassoSolution> {
    let r = problem.code_len();
    let start = match warm_start {
        Some(w) => {
            check_dims(w.len() == r, || {
                format!("warm start has length {} but code length is {}", w.len(), r)
            })?;
            w.to_owned()
        }
        None => Vector::zeros(r),
    };
    if lipschitz == 0.0 {
        // All-zero dictionary: the fidelity is constant, so zero is optimal.
        let code = Vector::zeros(r);
        let objective = problem.objective(code.view());
        return Ok(LassoSolution {
            code,
            objective,
            iterations: 0,
            converged: true,
            trace: vec![objective],
        });
    }
    let smooth = Fidelity { problem };
    let out = prox::minimize(
        &smooth,
        problem.weights.sparsity_weight,
        start,
        lipschitz,
        opts,
    );
    Ok(LassoSolution {
        code: out.point,
        objective: out.objective,
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace,
    })
}

/// Cyclic coordinate descent with exact soft-threshold coordinate updates,
/// run until the largest coordinate change in a sweep is below `1e-10`.
/// Intended only as a test oracle on small problems.
pub fn cd_lasso_oracle(problem: &LassoProblem<'_>) -> Result<Vector> {
    const STOP: f64 = 1e-10;
    const MAX_SWEEPS: usize = 2_000_000;
    let d = problem.dictionary;
    let r = d.ncols();
    let threshold = problem.weights.sparsity_weight / (2.0 * problem.weights.data_weight);
    let col_sq: Vec<f64> = d.axis_iter(Axis(1)).map(norm2_sq).collect();
    let mut code = Vector::zeros(r);
    let mut residual = problem.target.to_owned();
    for _ in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for i in 0..r {
            if col_sq[i] == 0.0 {
                continue;
            }
            let col = d.column(i);
            let old = code[i];
            let rho = col.dot(&residual) + col_sq[i] * old;
            let new = prox::shrink(rho, threshold) / col_sq[i];
            if new != old {
                residual.scaled_add(old - new, &col);
                code[i] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < STOP {
            break;
        }
    }
    Ok(code)
}

/// Per-column results of [`batch_lasso`].
#[derive(Clone, Debug)]
pub struct BatchCodes {
    pub codes: SparseCodeMatrix,
    pub converged: Vec<bool>,
    pub objectives: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl BatchCodes {
    pub fn unconverged(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }
}

/// Solves one LASSO per column of `targets` against a shared dictionary.
/// Columns are independent; the spectral bound is computed once. With
/// `parallel` the columns are distributed over the rayon pool, which does not
/// change any result.
pub fn batch_lasso(
    dictionary: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    weights: LassoWeights,
    opts: &SolverOptions,
    warm_start: Option<ArrayView2<'_, f64>>,
    parallel: bool,
) -> Result<BatchCodes> {
    opts.validate()?;
    check_dims(dictionary.nrows() == targets.nrows(), || {
        format!(
            "dictionary has {} rows but targets have {}",
            dictionary.nrows(),
            targets.nrows()
        )
    })?;
    if let Some(w) = warm_start {
        check_dims(
            w.nrows() == dictionary.ncols() && w.ncols() == targets.ncols(),
            || {
                format!(
                    "warm start is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    dictionary.ncols(),
                    targets.ncols()
                )
            },
        )?;
    }
    let lipschitz = 2.0 * weights.data_weight * spectral_norm_sq(dictionary);
    let solve_column = |j: usize| -> Result<LassoSolution> {
        let problem = LassoProblem {
            dictionary,
            target: targets.column(j),
            weights,
        };
        solve_with_bound(&problem, opts, warm_start.map(|w| w.index_axis_move(ndarray::Axis(1), j)), lipschitz)
    };
    let n = targets.ncols();
    let solutions: Vec<LassoSolution> = if parallel {
        (0..n).into_par_iter().map(solve_column).collect::<Result<_>>()?
    } else {
        (0..n).map(solve_column).collect::<Result<_>>()?
    };

    let mut codes = SparseCodeMatrix::zeros((dictionary.ncols(), n));
    let mut converged = Vec::with_capacity(n);
    let mut objectives = Vec::with_capacity(n);
    let mut iterations = Vec::with_capacity(n);
    for (j, s) in solutions.into_iter().enumerate() {
        codes.column_mut(j).assign(&s.code);
        converged.push(s.converged);
        objectives.push(s.objective);
        iterations.push(s.iterations);
    }
    Ok(BatchCodes {
        codes,
        converged,
        objectives,
        iterations,
    })
}
