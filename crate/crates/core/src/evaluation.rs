//! hit@K scoring, end-to-end experiments and the dictionary sample-size bound.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::attributes::{predict_batch, BatchPrediction, PredictionMethod};
use crate::dictionary::{train_coupled, CoupledDictionary};
use crate::error::{check_dims, Error, Result};
use crate::io::config::PipelineConfig;
use crate::io::manifest::{Dataset, DatasetManifest};
use crate::io::DataError;
use crate::labels::{rank_by_scores, rank_classes, taaw_classify};

/// Cut-offs reported for every method.
pub const HIT_CUTOFFS: [usize; 3] = [1, 3, 5];

/// Percentage of samples whose true class is among the first `k` entries of
/// its ranked list.
pub fn hit_at_k(ranked: &[Vec<usize>], truth: &[usize], k: usize) -> Result<f64> {
    check_dims(ranked.len() == truth.len(), || {
        format!("{} ranked lists for {} labels", ranked.len(), truth.len())
    })?;
    if truth.is_empty() {
        return Err(Error::invalid("truth", "no samples to score"));
    }
    let mut hits = 0usize;
    for (list, t) in ranked.iter().zip(truth) {
        if list.len() < k {
            return Err(Error::InvalidK {
                k,
                classes: list.len(),
            });
        }
        hits += usize::from(list[..k].contains(t));
    }
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    AAg,
    AAw,
    TAAw,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::AAg, Method::AAw, Method::TAAw];

    pub fn key(self) -> &'static str {
        match self {
            Method::AAg => "aag",
            Method::AAw => "aaw",
            Method::TAAw => "taaw",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::AAg => "AAg",
            Method::AAw => "AAw",
            Method::TAAw => "TAAw",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aag" => Ok(Method::AAg),
            "aaw" => Ok(Method::AAw),
            "taaw" => Ok(Method::TAAw),
            _ => Err(format!("unknown method `{s}`, expected aag, aaw or taaw")),
        }
    }
}

/// Scores of one method on the test split.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    /// hit@1, hit@3, hit@5 in percent. With fewer than `K` classes the
    /// cut-off is the class count.
    pub hits: [f64; 3],
    /// hit@1 per unseen class, `None` for classes without test samples.
    pub per_class: Vec<Option<f64>>,
    /// Top-ranked class id of every test sample.
    pub predicted: Vec<usize>,
    /// Attribute-prediction solves that stopped at their iteration cap.
    pub unconverged: usize,
}

impl MethodResult {
    pub fn hits_monotone(&self) -> bool {
        self.hits.windows(2).all(|w| w[0] <= w[1]) && self.hits.iter().all(|h| (0.0..=100.0).contains(h))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub load: Duration,
    pub train: Duration,
    pub predict: Duration,
    pub classify: Duration,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub dataset: String,
    pub class_names: Vec<String>,
    pub test_samples: usize,
    pub methods: Vec<MethodResult>,
    /// Rendered [`PipelineConfig`].
    pub config: String,
    /// Wall-clock time per stage; not part of the written files.
    pub timings: StageTimings,
}

impl ExperimentReport {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == method)
    }

    pub fn hit1(&self, method: Method) -> Option<f64> {
        self.result(method).map(|r| r.hits[0])
    }

    /// `key = value` sections: `[experiment]`, `[config]`, then one per method.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(s, "test_samples = {}", self.test_samples);
        let _ = writeln!(s, "unseen_classes = {}", self.class_names.len());
        let methods: Vec<&str> = self.methods.iter().map(|r| r.method.key()).collect();
        let _ = writeln!(s, "methods = {}", methods.join(","));
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config);
        for r in &self.methods {
            let _ = writeln!(s, "\n[{}]", r.method.key());
            for (k, h) in HIT_CUTOFFS.iter().zip(r.hits) {
                let _ = writeln!(s, "hit@{k} = {h:.4}");
            }
            let _ = writeln!(s, "unconverged = {}", r.unconverged);
            for (name, acc) in self.class_names.iter().zip(&r.per_class) {
                match acc {
                    Some(a) => {
                        let _ = writeln!(s, "class.{name} = {a:.4}");
                    }
                    None => {
                        let _ = writeln!(s, "class.{name} = n/a");
                    }
                }
            }
        }
        s
    }

    /// One row with hit@1 for every method, then hit@3, then hit@5.
    pub fn to_table(&self) -> String {
        let mut header = vec![format!("{:<16}", "Feature")];
        let mut row = vec![format!("{:<16}", self.dataset)];
        for (i, k) in HIT_CUTOFFS.iter().enumerate() {
            for m in Method::ALL {
                let title = if *k == 1 {
                    m.to_string()
                } else {
                    format!("{m}(hit@{k})")
                };
                let cell = self
                    .result(m)
                    .map_or_else(|| "-".to_string(), |r| format!("{:.2}", r.hits[i]));
                let w = title.len().max(6);
                header.push(format!("{title:>w$}"));
                row.push(format!("{cell:>w$}"));
            }
        }
        format!("{}\n{}\n", header.join("  "), row.join("  "))
    }

    pub fn write(&self, report: &Path, table: &Path) -> Result<(), DataError> {
        std::fs::write(report, self.to_text()).map_err(|e| DataError::io(report, e))?;
        std::fs::write(table, self.to_table()).map_err(|e| DataError::io(table, e))
    }
}

fn fatal_check(config: &PipelineConfig, stage: &'static str, count: usize) -> Result<()> {
    if config.fatal_nonconvergence && count > 0 {
        Err(Error::NonConvergence { stage, count })
    } else {
        Ok(())
    }
}

/// Trains a dictionary on the seen split of `data`.
pub fn train_on(data: &Dataset, config: &PipelineConfig) -> Result<CoupledDictionary> {
    let set = data.training_set()?;
    let model = train_coupled(&set, &config.training)?;
    fatal_check(config, "train", model.trace.unconverged_lasso)?;
    Ok(model.dictionary)
}

/// Attribute predictions for the test split.
pub fn predict_split(
    data: &Dataset,
    dict: &CoupledDictionary,
    method: PredictionMethod,
    config: &PipelineConfig,
) -> Result<BatchPrediction> {
    let pred = predict_batch(
        dict,
        data.unseen_prototypes.view(),
        data.test_features.view(),
        method,
        &config.prediction(),
        &config.training.lasso,
        config.training.parallel,
    )?;
    fatal_check(config, "predict", pred.unconverged)?;
    Ok(pred)
}

fn score(
    method: Method,
    ranked: Vec<Vec<usize>>,
    targets: &[usize],
    data: &Dataset,
    unconverged: usize,
) -> Result<MethodResult> {
    let m = data.unseen_prototypes.ncols();
    let mut hits = [0.0; 3];
    for (h, &k) in hits.iter_mut().zip(&HIT_CUTOFFS) {
        *h = hit_at_k(&ranked, targets, k.min(m))?;
    }
    let mut correct = vec![0usize; m];
    let mut total = vec![0usize; m];
    for (list, &t) in ranked.iter().zip(targets) {
        total[t] += 1;
        correct[t] += usize::from(list[0] == t);
    }
    let per_class = correct
        .iter()
        .zip(&total)
        .map(|(&c, &n)| (n > 0).then(|| 100.0 * c as f64 / n as f64))
        .collect();
    Ok(MethodResult {
        method,
        hits,
        per_class,
        predicted: ranked.iter().map(|l| data.unseen_labels[l[0]]).collect(),
        unconverged,
    })
}

/// Evaluates `methods` on a loaded dataset with a trained dictionary. The
/// returned timings cover prediction and classification only.
pub fn evaluate_dataset(
    data: &Dataset,
    dict: &CoupledDictionary,
    methods: &[Method],
    config: &PipelineConfig,
    dataset: &str,
) -> Result<ExperimentReport> {
    let targets = data
        .test_targets()
        .ok_or_else(|| Error::invalid("test_labels", "evaluation needs test labels in the manifest"))?;
    let mut methods = methods.to_vec();
    methods.sort_unstable();
    methods.dedup();
    let zprime = data.unseen_prototypes.view();
    let m = zprime.ncols();
    let mut timings = StageTimings::default();

    let needs = |p: PredictionMethod| {
        methods.iter().any(|&x| match x {
            Method::AAg => p == PredictionMethod::AttributeAgnostic,
            Method::AAw => p == PredictionMethod::AttributeAware,
            Method::TAAw => p == config.taaw_source,
        })
    };
    let start = Instant::now();
    let predict = |p: PredictionMethod| -> Result<Option<BatchPrediction>> {
        if needs(p) {
            predict_split(data, dict, p, config).map(Some)
        } else {
            Ok(None)
        }
    };
    let aag = predict(PredictionMethod::AttributeAgnostic).map_err(|e| e.in_stage("predict"))?;
    let aaw = predict(PredictionMethod::AttributeAware).map_err(|e| e.in_stage("predict"))?;
    timings.predict = start.elapsed();

    let start = Instant::now();
    let mut results = Vec::new();
    for method in methods {
        let result = match method {
            Method::AAg | Method::AAw => {
                let p = if method == Method::AAg { &aag } else { &aaw };
                let p = p.as_ref().expect("predicted above");
                let ranked = p
                    .attributes
                    .columns()
                    .into_iter()
                    .map(|a| rank_classes(a, zprime, m))
                    .collect::<Result<Vec<_>>>()?;
                score(method, ranked, &targets, data, p.unconverged)?
            }
            Method::TAAw => {
                let p = match config.taaw_source {
                    PredictionMethod::AttributeAgnostic => &aag,
                    PredictionMethod::AttributeAware => &aaw,
                };
                let p = p.as_ref().expect("predicted above");
                let t = taaw_classify(p.attributes.view(), zprime, config.knn_k, config.sigma, config.mu)
                    .map_err(|e| e.in_stage("classify"))?;
                let ranked = (0..p.attributes.ncols())
                    .map(|j| rank_by_scores(t.scores(j), p.attributes.column(j), zprime, m))
                    .collect::<Result<Vec<_>>>()?;
                score(method, ranked, &targets, data, p.unconverged)?
            }
        };
        results.push(result);
    }
    timings.classify = start.elapsed();

    Ok(ExperimentReport {
        dataset: dataset.to_string(),
        class_names: data.unseen_class_names.clone(),
        test_samples: targets.len(),
        methods: results,
        config: config.to_text(),
        timings,
    })
}

/// Loads the manifest, trains unless a dictionary is given, and evaluates.
pub fn run_experiment(
    manifest: &DatasetManifest,
    methods: &[Method],
    config: &PipelineConfig,
    dictionary: Option<CoupledDictionary>,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let data = manifest.load().map_err(|e| Error::from(e).in_stage("load"))?;
    let load = start.elapsed();
    let start = Instant::now();
    let dict = match dictionary {
        Some(d) => d,
        None => train_on(&data, config).map_err(|e| e.in_stage("train"))?,
    };
    let train = start.elapsed();
    let name = manifest
        .path
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| manifest.path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut report = evaluate_dataset(&data, &dict, methods, config, &name)?;
    report.timings.load = load;
    report.timings.train = train;
    Ok(report)
}

/// Largest sample count searched by [`pac_sample_bound`].
pub const PAC_LIMIT: u64 = 1_000_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacQuery {
    /// Failure probability δ ∈ (0, 1).
    pub confidence: f64,
    /// Target error ε > 0.
    pub target_error: f64,
    pub feature_dim: usize,
    pub atoms: usize,
    pub loss_constant: f64,
}

impl PacQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid("delta", "must lie strictly between 0 and 1"));
        }
        if !(self.target_error > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if self.feature_dim == 0 || self.atoms == 0 {
            return Err(Error::invalid("p/r", "dimensions must be at least 1"));
        }
        if !(self.loss_constant > 0.0 && self.loss_constant.is_finite()) {
            return Err(Error::invalid("loss_constant", "must be positive"));
        }
        Ok(())
    }

    /// `β = (p·r/8)·max{1, ln(6·√8·L)}`.
    pub fn beta(&self) -> f64 {
        let pr = self.feature_dim as f64 * self.atoms as f64;
        pr / 8.0 * (6.0 * 8f64.sqrt() * self.loss_constant).ln().max(1.0)
    }

    /// Error bound reached with `m` samples.
    pub fn error_at(&self, m: u64) -> f64 {
        let beta = self.beta();
        let m = m as f64;
        let tail = (beta + (2.0 / self.confidence).ln() / 8.0) / m;
        3.0 * (beta * m.ln() / m).sqrt() + tail.sqrt()
    }
}

/// Smallest `M ≥ 2` whose error bound is at most the target. The bound may
/// grow for the first few `M`; those are scanned one by one, after which it
/// decreases and the answer is found by bisection.
pub fn pac_sample_bound(query: &PacQuery) -> Result<u64> {
    query.validate()?;
    let eps = query.target_error;
    let mut m = 2;
    loop {
        if query.error_at(m) <= eps {
            return Ok(m);
        }
        if query.error_at(m + 1) < query.error_at(m) {
            break;
        }
        m += 1;
    }
    if query.error_at(PAC_LIMIT) > eps {
        return Err(Error::Infeasible { limit: PAC_LIMIT });
    }
    // error_at(lo) > eps >= error_at(hi)
    let (mut lo, mut hi) = (m, PAC_LIMIT);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if query.error_at(mid) <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
