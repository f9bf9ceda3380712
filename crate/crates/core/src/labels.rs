//! From predicted attributes to class labels.
//!
//! Inductive labeling picks the nearest unseen prototype. Transductive
//! labeling builds a kNN graph over `[Z′, Ẑ]` (prototypes first), weights its
//! edges with a Gaussian kernel and spreads the prototype labels by solving
//!
//! ```text
//! F = μ/(1+μ) · (I − 1/(1+μ) · D^(−1/2) W D^(−1/2))^(−1) · Y,    Y = [I_M, 0]
//! ```
//!
//! `F` is `M × (M+L)`; column `n` scores node `n` against every class.

use ndarray::{ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::linalg::{conjugate_gradient, squared_distance, Cholesky, DenseMatrix, Vector};

/// Degree substituted for nodes without edges.
pub const ISOLATED_DEGREE: f64 = 1e-12;
/// Largest node count handled by a dense Cholesky solve; beyond it CG is used.
pub const DIRECT_SOLVE_LIMIT: usize = 5000;

/// Gaussian kernel width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Median of the retained edge lengths.
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for Bandwidth {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Bandwidth::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && !v.is_nan() => Ok(Bandwidth::Fixed(v)),
            _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
        }
    }
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Auto => f.write_str("auto"),
            Bandwidth::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// Weighted symmetric similarity graph. Edges are stored as sorted adjacency
/// lists; `W_ii = 0` always.
#[derive(Clone, Debug)]
pub struct LabelGraph {
    /// Node attribute vectors, one column per node, prototypes first.
    pub node_attributes: DenseMatrix,
    pub adjacency: Vec<Vec<(usize, f64)>>,
    /// Row sums of `W`, with isolated nodes set to [`ISOLATED_DEGREE`].
    pub degrees: Vec<f64>,
    pub isolated: Vec<bool>,
    /// Kernel width actually used.
    pub sigma: f64,
    pub neighbor_count: usize,
    /// Number of leading nodes that carry known labels.
    pub labeled: usize,
}

impl LabelGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i]
            .binary_search_by(|(n, _)| n.cmp(&j))
            .map_or(0.0, |k| self.adjacency[i][k].1)
    }

    pub fn dense_weights(&self) -> DenseMatrix {
        let n = self.node_count();
        let mut w = DenseMatrix::zeros((n, n));
        for (i, row) in self.adjacency.iter().enumerate() {
            for &(j, v) in row {
                w[[i, j]] = v;
            }
        }
        w
    }

    /// Normalized affinity `D^(−1/2) W D^(−1/2)` as adjacency lists.
    fn normalized(&self) -> Vec<Vec<(usize, f64)>> {
        let inv_sqrt: Vec<f64> = self.degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
        self.adjacency
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .map(|&(j, w)| (j, w * inv_sqrt[i] * inv_sqrt[j]))
                    .collect()
            })
            .collect()
    }
}

/// Label scores `F` and the initial labels `Y`, both `M × (M+L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    pub scores: DenseMatrix,
    pub initial: DenseMatrix,
}

impl LabelMatrix {
    /// Argmax class of every node; ties go to the lowest class index.
    pub fn labels(&self) -> Vec<usize> {
        self.scores.axis_iter(Axis(1)).map(argmax).collect()
    }
}

fn argmax(col: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in col.iter().enumerate() {
        if v > col[best] {
            best = i;
        }
    }
    best
}

fn initial_labels(classes: usize, nodes: usize) -> DenseMatrix {
    let mut y = DenseMatrix::zeros((classes, nodes));
    for m in 0..classes {
        y[[m, m]] = 1.0;
    }
    y
}

fn check_query(predicted: ArrayView1<'_, f64>, zprime: ArrayView2<'_, f64>) -> Result<()> {
    check_dims(predicted.len() == zprime.nrows(), || {
        format!(
            "predicted attribute has length {} but prototypes have {} rows",
            predicted.len(),
            zprime.nrows()
        )
    })?;
    if zprime.ncols() == 0 {
        return Err(Error::invalid("unseen_prototypes", "need at least one prototype"));
    }
    Ok(())
}

fn distances_to(predicted: ArrayView1<'_, f64>, zprime: ArrayView2<'_, f64>) -> Vec<f64> {
    zprime
        .axis_iter(Axis(1))
        .map(|z| squared_distance(predicted, z))
        .collect()
}

/// Index of the nearest prototype; ties go to the lowest index.
pub fn nn_assign(predicted: ArrayView1<'_, f64>, zprime: ArrayView2<'_, f64>) -> Result<usize> {
    check_query(predicted, zprime)?;
    let d = distances_to(predicted, zprime);
    let mut best = 0;
    for (m, &v) in d.iter().enumerate() {
        if v < d[best] {
            best = m;
        }
    }
    Ok(best)
}

/// The `k` nearest prototypes, closest first, ties by index.
pub fn rank_classes(
    predicted: ArrayView1<'_, f64>,
    zprime: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<usize>> {
    check_query(predicted, zprime)?;
    if k > zprime.ncols() {
        return Err(Error::InvalidK {
            k,
            classes: zprime.ncols(),
        });
    }
    let d = distances_to(predicted, zprime);
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// The `k` best classes by descending propagation score; equal scores fall
/// back to attribute-space distance, then index.
pub fn rank_by_scores(
    scores: ArrayView1<'_, f64>,
    predicted: ArrayView1<'_, f64>,
    zprime: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<usize>> {
    check_query(predicted, zprime)?;
    check_dims(scores.len() == zprime.ncols(), || {
        format!("{} scores for {} classes", scores.len(), zprime.ncols())
    })?;
    if k > zprime.ncols() {
        return Err(Error::InvalidK {
            k,
            classes: zprime.ncols(),
        });
    }
    let d = distances_to(predicted, zprime);
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(d[a].total_cmp(&d[b]))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

fn nearest_neighbors(attrs: ArrayView2<'_, f64>, i: usize, k: usize) -> Vec<usize> {
    let n = attrs.ncols();
    let xi = attrs.column(i);
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| (squared_distance(xi, attrs.column(j)), j))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, by);
        cand.truncate(k);
    }
    cand.sort_by(by);
    cand.into_iter().map(|(_, j)| j).collect()
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Exact kNN graph by brute force. An edge is kept when either endpoint
/// selects the other. `labeled` is the number of leading nodes with known
/// labels.
pub fn build_knn_graph(
    attributes: ArrayView2<'_, f64>,
    k: usize,
    sigma: Bandwidth,
    labeled: usize,
) -> Result<LabelGraph> {
    let n = attributes.ncols();
    if k >= n.max(1) && n > 0 {
        return Err(Error::invalid(
            "knn_k",
            format!("neighbor count {k} must be below the node count {n}"),
        ));
    }
    if let Bandwidth::Fixed(s) = sigma {
        if !(s > 0.0) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
    }
    check_dims(labeled <= n, || format!("{labeled} labeled nodes but only {n} nodes"))?;

    let selections: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| nearest_neighbors(attributes, i, k))
        .collect();
    let mut edges: Vec<(usize, usize)> = selections
        .iter()
        .enumerate()
        .flat_map(|(i, sel)| sel.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let lengths: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| squared_distance(attributes.column(i), attributes.column(j)).sqrt())
        .collect();

    let sigma = match sigma {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Auto => {
            let mut all = lengths.clone();
            match median(&mut all) {
                Some(m) if m > 0.0 => m,
                _ => {
                    let mut positive: Vec<f64> = lengths.iter().copied().filter(|d| *d > 0.0).collect();
                    median(&mut positive).unwrap_or(1.0)
                }
            }
        }
    };

    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let two_sigma_sq = 2.0 * sigma * sigma;
    for (&(i, j), &d) in edges.iter().zip(&lengths) {
        let w = (-(d * d) / two_sigma_sq).exp();
        adjacency[i].push((j, w));
        adjacency[j].push((i, w));
    }
    for row in &mut adjacency {
        row.sort_unstable_by_key(|(j, _)| *j);
    }
    let raw: Vec<f64> = adjacency
        .iter()
        .map(|row| row.iter().map(|(_, w)| w).sum())
        .collect();
    let isolated: Vec<bool> = raw.iter().map(|d| *d <= 0.0).collect();
    let degrees = raw
        .iter()
        .map(|&d| if d > 0.0 { d } else { ISOLATED_DEGREE })
        .collect();

    Ok(LabelGraph {
        node_attributes: attributes.to_owned(),
        adjacency,
        degrees,
        isolated,
        sigma,
        neighbor_count: k,
        labeled,
    })
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("mu", "must be positive and finite"))
    }
}

/// Closed-form label propagation by a linear solve (dense Cholesky up to
/// [`DIRECT_SOLVE_LIMIT`] nodes, conjugate gradient beyond).
pub fn propagate_labels_closed(graph: &LabelGraph, mu: f64) -> Result<LabelMatrix> {
    check_mu(mu)?;
    let n = graph.node_count();
    let classes = graph.labeled;
    let alpha = 1.0 / (1.0 + mu);
    let fit = mu / (1.0 + mu);
    let s = graph.normalized();
    let initial = initial_labels(classes, n);
    let rhs = initial.t().mapv(|v| v * fit);

    let solved_t = if n <= DIRECT_SOLVE_LIMIT {
        let mut a = DenseMatrix::eye(n);
        for (i, row) in s.iter().enumerate() {
            for &(j, v) in row {
                a[[i, j]] -= alpha * v;
            }
        }
        Cholesky::factor(a.view())?.solve(rhs.view())
    } else {
        let apply = |v: ArrayView1<'_, f64>| -> Vector {
            let mut out = v.to_owned();
            for (i, row) in s.iter().enumerate() {
                let mut acc = 0.0;
                for &(j, w) in row {
                    acc += w * v[j];
                }
                out[i] -= alpha * acc;
            }
            out
        };
        let mut out = DenseMatrix::zeros((n, classes));
        for m in 0..classes {
            let (x, ok) = conjugate_gradient(apply, rhs.column(m), 1e-13, 10 * n);
            if !ok {
                return Err(Error::SingularSystem { row: m, pivot: f64::NAN });
            }
            out.column_mut(m).assign(&x);
        }
        out
    };
    Ok(LabelMatrix {
        scores: solved_t.t().to_owned(),
        initial,
    })
}

/// Result of [`propagate_labels_iterative`].
#[derive(Clone, Debug)]
pub struct IterativePropagation {
    pub labels: LabelMatrix,
    pub iterations: usize,
    pub converged: bool,
}

/// Fixed-point iteration `F ← S·F/(1+μ) + μ·Y/(1+μ)` until the largest entry
/// change is below `tol`.
pub fn propagate_labels_iterative(
    graph: &LabelGraph,
    mu: f64,
    max_iter: usize,
    tol: f64,
) -> Result<IterativePropagation> {
    check_mu(mu)?;
    let n = graph.node_count();
    let classes = graph.labeled;
    let alpha = 1.0 / (1.0 + mu);
    let fit = mu / (1.0 + mu);
    let s = graph.normalized();
    let initial = initial_labels(classes, n);
    // Work on Fᵀ (nodes × classes) so rows follow adjacency lists.
    let y_t = initial.t().to_owned();
    let mut f_t = y_t.mapv(|v| v * fit);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let mut next = y_t.mapv(|v| v * fit);
        for (i, row) in s.iter().enumerate() {
            for &(j, w) in row {
                let src = f_t.row(j);
                next.row_mut(i).scaled_add(alpha * w, &src);
            }
        }
        let change = (&next - &f_t).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        f_t = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(IterativePropagation {
        labels: LabelMatrix {
            scores: f_t.t().to_owned(),
            initial,
        },
        iterations,
        converged,
    })
}

/// Transductive labels for the predicted attributes.
#[derive(Clone, Debug)]
pub struct TransductiveLabels {
    /// One label (prototype index) per predicted column.
    pub labels: Vec<usize>,
    pub propagation: LabelMatrix,
    pub graph: LabelGraph,
}

impl TransductiveLabels {
    /// Scores of test sample `j` against every class.
    pub fn scores(&self, j: usize) -> ArrayView1<'_, f64> {
        self.propagation.scores.column(self.graph.labeled + j)
    }
}

/// Labels every column of `predicted` by propagating the prototype labels
/// over a kNN graph of `[Z′, predicted]`. `k` is capped at the node count
/// minus one; test nodes left without edges fall back to [`nn_assign`].
pub fn taaw_classify(
    predicted: ArrayView2<'_, f64>,
    zprime: ArrayView2<'_, f64>,
    k: usize,
    sigma: Bandwidth,
    mu: f64,
) -> Result<TransductiveLabels> {
    check_dims(predicted.nrows() == zprime.nrows(), || {
        format!(
            "predicted attributes have {} rows but prototypes have {}",
            predicted.nrows(),
            zprime.nrows()
        )
    })?;
    if predicted.ncols() == 0 {
        return Err(Error::invalid("predicted", "need at least one test sample"));
    }
    if zprime.ncols() == 0 {
        return Err(Error::invalid("unseen_prototypes", "need at least one prototype"));
    }
    let m = zprime.ncols();
    let nodes = ndarray::concatenate(Axis(1), &[zprime, predicted])
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let k = k.min(nodes.ncols() - 1);
    let graph = build_knn_graph(nodes.view(), k, sigma, m)?;
    let propagation = propagate_labels_closed(&graph, mu)?;
    let all = propagation.labels();
    let mut labels = Vec::with_capacity(predicted.ncols());
    for j in 0..predicted.ncols() {
        if graph.isolated[m + j] {
            labels.push(nn_assign(predicted.column(j), zprime)?);
        } else {
            labels.push(all[m + j]);
        }
    }
    Ok(TransductiveLabels {
        labels,
        propagation,
        graph,
    })
}
