//! Coupled dictionary training.
//!
//! Learns `D_x` (features × atoms) and `D_z` (attributes × atoms) so that seen
//! samples share their code across both spaces, `X ≈ D_x·A` and
//! `Z ≈ D_z·A`, while `D_z` also sparsely codes the unseen prototypes,
//! `Z′ ≈ D_z·B`. Training alternates a visual block (LASSO for `A`, gradient
//! step on `D_x`) with an attribute block (LASSO for `B`, gradient step on
//! `D_z` with `A` frozen).
//!
//! With `N` seen samples, `M` unseen prototypes, feature size `p`, attribute
//! size `q` and `r` atoms, the tracked objective is
//!
//! ```text
//! 1/(Np)·‖X − D_x A‖² + λ/(Nr)·‖A‖₁ + 1/(Nq)·‖Z − D_z A‖²
//!     + 1/(Mq)·‖Z′ − D_z B‖² + λ/(Mr)·‖B‖₁
//! ```
//!
//! Each LASSO column therefore uses fidelity weight `1/p` (or `1/q`) and
//! penalty `λ/r`.

use ndarray::{ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dims, Error, Result};
use crate::linalg::{
    ensure_finite, frobenius_sq, normalize_columns, project_columns_to_unit_ball,
    spectral_norm_sq, DenseMatrix,
};
use crate::sparse_coding::{batch_lasso, LassoWeights, SolverOptions, SparseCodeMatrix};

/// Relative objective growth that triggers step halving in full-batch mode.
pub const DIVERGENCE_RATIO: f64 = 0.10;
/// Maximum number of step halvings before giving up.
pub const MAX_HALVINGS: usize = 10;
/// Slack allowed on the full-batch monotonicity check, relative to the objective.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct TrainingSet {
    /// Seen visual features `X`, `p × N`.
    pub seen_features: DenseMatrix,
    /// Seen attributes `Z`, `q × N`.
    pub seen_attributes: DenseMatrix,
    /// Unseen class prototypes `Z′`, `q × M`.
    pub unseen_attributes: DenseMatrix,
}

impl TrainingSet {
    pub fn new(
        seen_features: DenseMatrix,
        seen_attributes: DenseMatrix,
        unseen_attributes: DenseMatrix,
    ) -> Result<Self> {
        let set = TrainingSet {
            seen_features,
            seen_attributes,
            unseen_attributes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let (x, z, zp) = (
            &self.seen_features,
            &self.seen_attributes,
            &self.unseen_attributes,
        );
        check_dims(x.ncols() == z.ncols(), || {
            format!(
                "seen features have {} columns but seen attributes have {}",
                x.ncols(),
                z.ncols()
            )
        })?;
        check_dims(z.nrows() == zp.nrows(), || {
            format!(
                "seen attributes have {} rows but unseen attributes have {}",
                z.nrows(),
                zp.nrows()
            )
        })?;
        if x.ncols() == 0 {
            return Err(Error::invalid("seen_features", "need at least one sample"));
        }
        if zp.ncols() == 0 {
            return Err(Error::invalid("unseen_attributes", "need at least one prototype"));
        }
        if x.nrows() == 0 || z.nrows() == 0 {
            return Err(Error::invalid("seen_features", "feature and attribute sizes must be positive"));
        }
        ensure_finite(x.view(), "seen features")?;
        ensure_finite(z.view(), "seen attributes")?;
        ensure_finite(zp.view(), "unseen attributes")?;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.seen_features.nrows()
    }

    pub fn attribute_dim(&self) -> usize {
        self.seen_attributes.nrows()
    }

    pub fn samples(&self) -> usize {
        self.seen_features.ncols()
    }

    pub fn prototypes(&self) -> usize {
        self.unseen_attributes.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Number of atoms `r`; should exceed both `p` and `q`.
    pub atoms: usize,
    /// Sparsity weight `λ`.
    pub sparsity: f64,
    /// Frobenius penalty `β` on the dictionaries.
    pub dict_penalty: f64,
    pub outer_iterations: usize,
    /// LASSO / gradient-step rounds per block and outer iteration.
    pub inner_alternations: usize,
    /// Samples per mini-batch; `None` means the whole training set.
    pub batch_size: Option<usize>,
    /// Dictionary step as a fraction of the inverse curvature bound of the
    /// block objective. Mini-batch steps decay as `step/(1 + t/10)`.
    pub dict_step: f64,
    pub seed: u64,
    /// Project dictionary columns onto the unit ball after every step.
    pub normalize_columns: bool,
    pub lasso: SolverOptions,
    /// Solve the LASSO columns of a batch on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            atoms: 64,
            sparsity: 0.05,
            dict_penalty: 0.0,
            outer_iterations: 30,
            inner_alternations: 25,
            batch_size: None,
            dict_step: 1.8,
            seed: 0,
            normalize_columns: true,
            lasso: SolverOptions {
                max_iterations: 2000,
                tolerance: 1e-6,
                ..SolverOptions::default()
            },
            parallel: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.atoms == 0 {
            return Err(Error::invalid("atoms", "must be at least 1"));
        }
        if !(self.sparsity >= 0.0) || !self.sparsity.is_finite() {
            return Err(Error::invalid("lambda", "must be nonnegative"));
        }
        if !(self.dict_penalty >= 0.0) || !self.dict_penalty.is_finite() {
            return Err(Error::invalid("beta", "must be nonnegative"));
        }
        if !(self.dict_step > 0.0) || !self.dict_step.is_finite() {
            return Err(Error::invalid("dict_step", "must be positive"));
        }
        if self.inner_alternations == 0 {
            return Err(Error::invalid("inner_alternations", "must be at least 1"));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > samples {
                return Err(Error::invalid(
                    "batch_size",
                    format!("must be between 1 and the sample count {samples}, got {b}"),
                ));
            }
        }
        self.lasso.validate()
    }

    fn is_full_batch(&self, samples: usize) -> bool {
        self.batch_size.is_none_or(|b| b >= samples)
    }

    fn weights(&self, rows: usize) -> LassoWeights {
        LassoWeights {
            data_weight: 1.0 / rows as f64,
            sparsity_weight: self.sparsity / self.atoms as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledDictionary {
    /// Visual dictionary `D_x`, `p × r`.
    pub visual: DenseMatrix,
    /// Attribute dictionary `D_z`, `q × r`.
    pub attribute: DenseMatrix,
}

impl CoupledDictionary {
    pub fn new(visual: DenseMatrix, attribute: DenseMatrix) -> Result<Self> {
        check_dims(visual.ncols() == attribute.ncols(), || {
            format!(
                "visual dictionary has {} atoms but attribute dictionary has {}",
                visual.ncols(),
                attribute.ncols()
            )
        })?;
        ensure_finite(visual.view(), "visual dictionary")?;
        ensure_finite(attribute.view(), "attribute dictionary")?;
        Ok(CoupledDictionary { visual, attribute })
    }

    pub fn atoms(&self) -> usize {
        self.visual.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.visual.nrows()
    }

    pub fn attribute_dim(&self) -> usize {
        self.attribute.nrows()
    }
}

/// The terms of the tracked objective after one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    /// `1/(Np)·‖X − D_x A‖²`
    pub visual_fidelity: f64,
    /// `λ/(Nr)·‖A‖₁ + λ/(Mr)·‖B‖₁`
    pub code_sparsity: f64,
    /// `1/(Nq)·‖Z − D_z A‖²`
    pub attribute_fidelity: f64,
    /// `1/(Mq)·‖Z′ − D_z B‖²`
    pub prototype_fidelity: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.visual_fidelity + self.code_sparsity + self.attribute_fidelity + self.prototype_fidelity
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    /// One entry per outer iteration.
    pub terms: Vec<ObjectiveTerms>,
    /// Outer iterations whose update was rejected by the full-batch
    /// monotonicity check (the previous state was kept).
    pub rejected: Vec<usize>,
    /// Total number of step halvings performed.
    pub halvings: usize,
    /// LASSO columns that hit their iteration limit.
    pub unconverged_lasso: usize,
}

impl TrainingTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.terms.iter().map(ObjectiveTerms::total).collect()
    }
}

/// Result of [`train_coupled`].
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub dictionary: CoupledDictionary,
    /// Seen-sample codes `A`, `r × N`.
    pub seen_codes: SparseCodeMatrix,
    /// Prototype codes `B`, `r × M`.
    pub prototype_codes: SparseCodeMatrix,
    pub trace: TrainingTrace,
}

/// What a block update did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockReport {
    pub halvings: usize,
    pub unconverged_lasso: usize,
}

/// Random `rows × atoms` matrix with standard normal entries and unit-norm
/// columns, reproducible from `seed`.
pub fn init_dictionary(rows: usize, atoms: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DenseMatrix::from_shape_simple_fn((rows, atoms), || StandardNormal.sample(&mut rng));
    normalize_columns(&mut d);
    d
}

/// Evaluates every term of the tracked objective.
pub fn objective_terms(
    dict: &CoupledDictionary,
    data: &TrainingSet,
    seen_codes: ArrayView2<'_, f64>,
    prototype_codes: ArrayView2<'_, f64>,
    sparsity: f64,
) -> ObjectiveTerms {
    let n = data.samples() as f64;
    let m = data.prototypes() as f64;
    let p = data.feature_dim() as f64;
    let q = data.attribute_dim() as f64;
    let r = dict.atoms() as f64;
    let rx = &data.seen_features - &dict.visual.dot(&seen_codes);
    let rz = &data.seen_attributes - &dict.attribute.dot(&seen_codes);
    let rzp = &data.unseen_attributes - &dict.attribute.dot(&prototype_codes);
    let l1 = |c: ArrayView2<'_, f64>| c.iter().map(|v| v.abs()).sum::<f64>();
    ObjectiveTerms {
        visual_fidelity: frobenius_sq(rx.view()) / (n * p),
        code_sparsity: sparsity / (n * r) * l1(seen_codes) + sparsity / (m * r) * l1(prototype_codes),
        attribute_fidelity: frobenius_sq(rz.view()) / (n * q),
        prototype_fidelity: frobenius_sq(rzp.view()) / (m * q),
    }
}

fn visual_block_objective(
    dx: &DenseMatrix,
    x: ArrayView2<'_, f64>,
    a: &SparseCodeMatrix,
    config: &TrainingConfig,
) -> f64 {
    let (p, n, r) = (x.nrows() as f64, x.ncols() as f64, dx.ncols() as f64);
    let res = &x - &dx.dot(a);
    frobenius_sq(res.view()) / (n * p)
        + config.sparsity / (n * r) * a.iter().map(|v| v.abs()).sum::<f64>()
        + config.dict_penalty * frobenius_sq(dx.view())
}

fn attribute_block_objective(
    dz: &DenseMatrix,
    z: ArrayView2<'_, f64>,
    zp: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    b: &SparseCodeMatrix,
    config: &TrainingConfig,
) -> f64 {
    let (q, n, m, r) = (
        z.nrows() as f64,
        z.ncols() as f64,
        zp.ncols() as f64,
        dz.ncols() as f64,
    );
    let rz = &z - &dz.dot(&a);
    let rzp = &zp - &dz.dot(b);
    frobenius_sq(rz.view()) / (n * q)
        + frobenius_sq(rzp.view()) / (m * q)
        + config.sparsity / (m * r) * b.iter().map(|v| v.abs()).sum::<f64>()
        + config.dict_penalty * frobenius_sq(dz.view())
}

/// Sample columns used by one alternation, sorted.
fn draw_batch(samples: usize, config: &TrainingConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match config.batch_size {
        Some(b) if b < samples => {
            let mut idx = index::sample(rng, samples, b).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..samples).collect(),
    }
}

fn step_scale(config: &TrainingConfig, samples: usize, outer: usize) -> f64 {
    if config.is_full_batch(samples) {
        config.dict_step
    } else {
        config.dict_step / (1.0 + outer as f64 / 10.0)
    }
}

/// Runs `attempt` with step multipliers 1, 1/2, 1/4, … until the block
/// objective grows by at most [`DIVERGENCE_RATIO`]. Only used in full-batch mode.
fn with_halving<S: Clone>(
    block: &'static str,
    state: &mut S,
    objective: impl Fn(&S) -> f64,
    mut attempt: impl FnMut(&mut S, f64) -> Result<usize>,
) -> Result<BlockReport> {
    let before = objective(state);
    let saved = state.clone();
    let mut report = BlockReport::default();
    for halvings in 0..=MAX_HALVINGS {
        let scale = 0.5_f64.powi(halvings as i32);
        report.unconverged_lasso += attempt(state, scale)?;
        let after = objective(state);
        if after.is_finite() && after <= before * (1.0 + DIVERGENCE_RATIO) + MONOTONE_SLACK {
            report.halvings = halvings;
            return Ok(report);
        }
        if halvings == MAX_HALVINGS {
            return Err(Error::StepDivergence {
                block,
                before,
                after,
                halvings,
            });
        }
        *state = saved.clone();
    }
    unreachable!()
}

/// Visual block: `inner_alternations` rounds of
/// { LASSO for the batch columns of `A` ; one gradient step on `D_x` }.
///
/// `outer` is the current outer iteration (drives the mini-batch step decay)
/// and `rng` draws the mini-batches.
pub fn update_visual_block(
    dx: &mut DenseMatrix,
    x: ArrayView2<'_, f64>,
    a: &mut SparseCodeMatrix,
    config: &TrainingConfig,
    outer: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BlockReport> {
    check_dims(dx.nrows() == x.nrows(), || {
        format!("D_x has {} rows but X has {}", dx.nrows(), x.nrows())
    })?;
    check_dims(a.nrows() == dx.ncols() && a.ncols() == x.ncols(), || {
        format!(
            "A is {}x{}, expected {}x{}",
            a.nrows(),
            a.ncols(),
            dx.ncols(),
            x.ncols()
        )
    })?;
    let n = x.ncols();
    let step = step_scale(config, n, outer);
    let run = |state: &mut (DenseMatrix, SparseCodeMatrix), scale: f64, rng: &mut ChaCha8Rng| {
        let (dx, a) = state;
        let mut unconverged = 0;
        for _ in 0..config.inner_alternations {
            let batch = draw_batch(n, config, rng);
            let xb = x.select(Axis(1), &batch);
            let ab = a.select(Axis(1), &batch);
            let codes = batch_lasso(
                dx.view(),
                xb.view(),
                config.weights(x.nrows()),
                &config.lasso,
                Some(ab.view()),
                config.parallel,
            )?;
            unconverged += codes.unconverged();
            for (k, &j) in batch.iter().enumerate() {
                a.column_mut(j).assign(&codes.codes.column(k));
            }
            let ab = codes.codes;
            let nb = batch.len() as f64;
            let p = x.nrows() as f64;
            let curvature = 2.0 / (nb * p) * spectral_norm_sq(ab.view()) + 2.0 * config.dict_penalty;
            if curvature > 0.0 {
                let residual = &xb - &dx.dot(&ab);
                let mut grad = residual.dot(&ab.t()) * (-2.0 / (nb * p));
                grad.scaled_add(2.0 * config.dict_penalty, dx);
                dx.scaled_add(-step * scale / curvature, &grad);
                if config.normalize_columns {
                    project_columns_to_unit_ball(dx);
                }
            }
        }
        Ok(unconverged)
    };

    let mut state = (std::mem::take(dx), std::mem::take(a));
    let result = if config.is_full_batch(n) {
        with_halving(
            "visual",
            &mut state,
            |(d, c)| visual_block_objective(d, x, c, config),
            |s, scale| run(s, scale, rng),
        )
    } else {
        run(&mut state, 1.0, rng).map(|u| BlockReport {
            halvings: 0,
            unconverged_lasso: u,
        })
    };
    *dx = state.0;
    *a = state.1;
    result
}

/// Attribute block: `inner_alternations` rounds of
/// { LASSO for `B` against `Z′` ; one gradient step on `D_z` }.
/// `A` is read only.
#[allow(clippy::too_many_arguments)]
pub fn update_attribute_block(
    dz: &mut DenseMatrix,
    z: ArrayView2<'_, f64>,
    zprime: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    b: &mut SparseCodeMatrix,
    config: &TrainingConfig,
    outer: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BlockReport> {
    check_dims(dz.nrows() == z.nrows() && z.nrows() == zprime.nrows(), || {
        format!(
            "D_z has {} rows, Z has {}, Z′ has {}",
            dz.nrows(),
            z.nrows(),
            zprime.nrows()
        )
    })?;
    check_dims(a.nrows() == dz.ncols() && a.ncols() == z.ncols(), || {
        format!(
            "A is {}x{}, expected {}x{}",
            a.nrows(),
            a.ncols(),
            dz.ncols(),
            z.ncols()
        )
    })?;
    check_dims(b.nrows() == dz.ncols() && b.ncols() == zprime.ncols(), || {
        format!(
            "B is {}x{}, expected {}x{}",
            b.nrows(),
            b.ncols(),
            dz.ncols(),
            zprime.ncols()
        )
    })?;
    let n = z.ncols();
    let step = step_scale(config, n, outer);
    let q = z.nrows() as f64;
    let m = zprime.ncols() as f64;
    let run = |state: &mut (DenseMatrix, SparseCodeMatrix), scale: f64, rng: &mut ChaCha8Rng| {
        let (dz, b) = state;
        let mut unconverged = 0;
        for _ in 0..config.inner_alternations {
            let codes = batch_lasso(
                dz.view(),
                zprime,
                config.weights(z.nrows()),
                &config.lasso,
                Some(b.view()),
                config.parallel,
            )?;
            unconverged += codes.unconverged();
            *b = codes.codes;

            let batch = draw_batch(n, config, rng);
            let zb = z.select(Axis(1), &batch);
            let ab = a.select(Axis(1), &batch);
            let nb = batch.len() as f64;
            let curvature = 2.0 / (nb * q) * spectral_norm_sq(ab.view())
                + 2.0 / (m * q) * spectral_norm_sq(b.view())
                + 2.0 * config.dict_penalty;
            if curvature > 0.0 {
                let rz = &zb - &dz.dot(&ab);
                let rzp = &zprime - &dz.dot(&*b);
                let mut grad = rz.dot(&ab.t()) * (-2.0 / (nb * q));
                grad.scaled_add(-2.0 / (m * q), &rzp.dot(&b.t()));
                grad.scaled_add(2.0 * config.dict_penalty, dz);
                dz.scaled_add(-step * scale / curvature, &grad);
                if config.normalize_columns {
                    project_columns_to_unit_ball(dz);
                }
            }
        }
        Ok(unconverged)
    };

    let mut state = (std::mem::take(dz), std::mem::take(b));
    let result = if config.is_full_batch(n) {
        with_halving(
            "attribute",
            &mut state,
            |(d, c)| attribute_block_objective(d, z, zprime, a, c, config),
            |s, scale| run(s, scale, rng),
        )
    } else {
        run(&mut state, 1.0, rng).map(|u| BlockReport {
            halvings: 0,
            unconverged_lasso: u,
        })
    };
    *dz = state.0;
    *b = state.1;
    result
}

/// Trains the coupled dictionaries. See [`train_coupled_with`].
pub fn train_coupled(data: &TrainingSet, config: &TrainingConfig) -> Result<TrainedModel> {
    train_coupled_with(data, config, |_, _| Ok(()))
}

/// Trains the coupled dictionaries, calling `after_iteration(t, dict)` after
/// each completed outer iteration `t` (1-based).
///
/// In full-batch mode an outer iteration that would raise the tracked
/// objective is retried with halved dictionary steps; if it still does after
/// [`MAX_HALVINGS`] retries it is rejected and the previous state is kept.
pub fn train_coupled_with(
    data: &TrainingSet,
    config: &TrainingConfig,
    mut after_iteration: impl FnMut(usize, &CoupledDictionary) -> Result<()>,
) -> Result<TrainedModel> {
    data.validate()?;
    config.validate(data.samples())?;
    let r = config.atoms;
    let mut dict = CoupledDictionary {
        visual: init_dictionary(data.feature_dim(), r, config.seed),
        attribute: init_dictionary(data.attribute_dim(), r, config.seed.wrapping_add(1)),
    };
    let mut a = SparseCodeMatrix::zeros((r, data.samples()));
    let mut b = SparseCodeMatrix::zeros((r, data.prototypes()));
    let mut trace = TrainingTrace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let full_batch = config.is_full_batch(data.samples());

    let mut current = objective_terms(&dict, data, a.view(), b.view(), config.sparsity);
    for outer in 0..config.outer_iterations {
        let saved = (dict.clone(), a.clone(), b.clone());
        let mut accepted = false;
        for attempt in 0..=MAX_HALVINGS {
            let mut cfg = config.clone();
            cfg.dict_step = config.dict_step * 0.5_f64.powi(attempt as i32);
            let vis = update_visual_block(
                &mut dict.visual,
                data.seen_features.view(),
                &mut a,
                &cfg,
                outer,
                &mut rng,
            )
            .map_err(|e| e.in_stage("visual block"))?;
            let att = update_attribute_block(
                &mut dict.attribute,
                data.seen_attributes.view(),
                data.unseen_attributes.view(),
                a.view(),
                &mut b,
                &cfg,
                outer,
                &mut rng,
            )
            .map_err(|e| e.in_stage("attribute block"))?;
            trace.halvings += vis.halvings + att.halvings + usize::from(attempt > 0);
            trace.unconverged_lasso += vis.unconverged_lasso + att.unconverged_lasso;

            let next = objective_terms(&dict, data, a.view(), b.view(), config.sparsity);
            let slack = MONOTONE_SLACK * current.total().abs();
            if !full_batch || next.total() <= current.total() + slack {
                current = next;
                accepted = true;
                break;
            }
            dict = saved.0.clone();
            a = saved.1.clone();
            b = saved.2.clone();
        }
        if !accepted {
            trace.rejected.push(outer);
        }
        trace.terms.push(current);
        after_iteration(outer + 1, &dict)?;
    }

    Ok(TrainedModel {
        dictionary: dict,
        seen_codes: a,
        prototype_codes: b,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_column_norm;

    fn planted(p: usize, q: usize, r: usize, n: usize, m: usize, seed: u64) -> (TrainingSet, CoupledDictionary, DenseMatrix) {
        let dx = init_dictionary(p, r, seed);
        let dz = init_dictionary(q, r, seed + 100);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
        let codes = |cols: usize, rng: &mut ChaCha8Rng| {
            let mut c = DenseMatrix::zeros((r, cols));
            for j in 0..cols {
                for i in index::sample(rng, r, 3) {
                    let v: f64 = StandardNormal.sample(rng);
                    c[[i, j]] = v.signum() * (1.0 + v.abs());
                }
            }
            c
        };
        let a = codes(n, &mut rng);
        let b = codes(m, &mut rng);
        let set = TrainingSet::new(dx.dot(&a), dz.dot(&a), dz.dot(&b)).unwrap();
        (set, CoupledDictionary { visual: dx, attribute: dz }, a)
    }

    #[test]
    fn init_is_deterministic_and_unit_norm() {
        let a = init_dictionary(4, 10, 7);
        assert_eq!(a, init_dictionary(4, 10, 7));
        for c in a.axis_iter(Axis(1)) {
            assert!((c.dot(&c).sqrt() - 1.0).abs() < 1e-12);
        }
        assert_ne!(a, init_dictionary(4, 10, 8));
    }

    #[test]
    fn visual_block_is_stationary_at_exact_representation() {
        let (set, truth, a_star) = planted(6, 4, 12, 30, 2, 1);
        let mut dx = truth.visual.clone();
        let mut a = a_star.clone();
        let config = TrainingConfig {
            atoms: 12,
            sparsity: 0.0,
            inner_alternations: 2,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        update_visual_block(&mut dx, set.seen_features.view(), &mut a, &config, 0, &mut rng).unwrap();
        let diff = (&dx - &truth.visual).mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v));
        assert!(diff < 1e-10, "max change {diff}");
    }

    #[test]
    fn attribute_block_is_stationary_at_exact_representation() {
        let (_, truth, a_star) = planted(6, 4, 12, 30, 1, 2);
        let z = truth.attribute.dot(&a_star);
        // A prototype that the LASSO reproduces exactly with λ = 0 from its own code.
        let mut b = DenseMatrix::zeros((12, 1));
        b[[3, 0]] = 1.5;
        let zp = truth.attribute.dot(&b);
        let mut dz = truth.attribute.clone();
        let config = TrainingConfig {
            atoms: 12,
            sparsity: 0.0,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        update_attribute_block(&mut dz, z.view(), zp.view(), a_star.view(), &mut b, &config, 0, &mut rng).unwrap();
        let diff = (&dz - &truth.attribute).mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v));
        assert!(diff < 1e-10, "max change {diff}");
    }

    #[test]
    fn large_penalty_shrinks_visual_dictionary() {
        let (set, _, _) = planted(10, 5, 20, 40, 2, 3);
        let mut dx = init_dictionary(10, 20, 9);
        let before = frobenius_sq(dx.view()).sqrt();
        let mut a = DenseMatrix::zeros((20, 40));
        let config = TrainingConfig {
            atoms: 20,
            dict_penalty: 1e6,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        update_visual_block(&mut dx, set.seen_features.view(), &mut a, &config, 0, &mut rng).unwrap();
        assert!(frobenius_sq(dx.view()).sqrt() < before);
    }

    #[test]
    fn duplicated_prototypes_get_identical_codes() {
        let (set, _, a_star) = planted(8, 5, 16, 30, 2, 4);
        let mut zp = DenseMatrix::zeros((5, 3));
        zp.column_mut(0).assign(&set.unseen_attributes.column(0));
        zp.column_mut(1).assign(&set.unseen_attributes.column(1));
        zp.column_mut(2).assign(&set.unseen_attributes.column(0));
        let mut dz = init_dictionary(5, 16, 5);
        let mut b = DenseMatrix::zeros((16, 3));
        let config = TrainingConfig {
            atoms: 16,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        update_attribute_block(&mut dz, set.seen_attributes.view(), zp.view(), a_star.view(), &mut b, &config, 0, &mut rng).unwrap();
        assert_eq!(b.column(0), b.column(2));
    }

    #[test]
    fn zero_outer_iterations_returns_initial_state() {
        let (set, _, _) = planted(6, 4, 12, 20, 2, 5);
        let config = TrainingConfig {
            atoms: 12,
            outer_iterations: 0,
            seed: 42,
            ..TrainingConfig::default()
        };
        let model = train_coupled(&set, &config).unwrap();
        assert!(model.trace.terms.is_empty());
        assert_eq!(model.dictionary.visual, init_dictionary(6, 12, 42));
        assert_eq!(model.dictionary.attribute, init_dictionary(4, 12, 43));
        assert!(model.seen_codes.iter().all(|v| *v == 0.0));
        assert!(model.prototype_codes.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_normalized() {
        let (set, _, _) = planted(8, 5, 16, 40, 3, 6);
        let config = TrainingConfig {
            atoms: 16,
            outer_iterations: 4,
            parallel: false,
            ..TrainingConfig::default()
        };
        let a = train_coupled(&set, &config).unwrap();
        let b = train_coupled(&set, &config).unwrap();
        assert_eq!(a.dictionary, b.dictionary);
        assert_eq!(a.seen_codes, b.seen_codes);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.terms.len(), 4);
        assert!(max_column_norm(a.dictionary.visual.view()) <= 1.0 + 1e-9);
        assert!(max_column_norm(a.dictionary.attribute.view()) <= 1.0 + 1e-9);
    }

    #[test]
    fn mini_batch_training_runs() {
        let (set, _, _) = planted(8, 5, 16, 60, 3, 7);
        let config = TrainingConfig {
            atoms: 16,
            outer_iterations: 5,
            batch_size: Some(20),
            ..TrainingConfig::default()
        };
        let model = train_coupled(&set, &config).unwrap();
        assert_eq!(model.trace.terms.len(), 5);
        let first = model.trace.terms[0].total();
        let last = model.trace.terms[4].total();
        assert!(last < first);
    }

    #[test]
    fn rejects_bad_batch_size() {
        let (set, _, _) = planted(6, 4, 12, 20, 2, 8);
        let config = TrainingConfig {
            atoms: 12,
            batch_size: Some(21),
            ..TrainingConfig::default()
        };
        assert!(train_coupled(&set, &config).is_err());
    }
}
