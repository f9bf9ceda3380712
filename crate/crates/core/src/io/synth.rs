//! Planted zero-shot problems with known dictionaries.
//!
//! Each class owns a `k`-sparse code. Samples jitter the nonzero entries of
//! their class code, and are observed as `x = D_x*·a + noise` and `z = D_z*·a`.
//! The first seen class supports are dealt from a shuffled atom list so that
//! together they use every atom, later ones are random; unseen class codes are drawn freely and kept only if
//! their prototypes `D_z*·b` are at least `separation` apart.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::io::config::key_values;
use crate::io::manifest::{write_labels, DatasetManifest};
use crate::io::{write_matrix, DataError};
use crate::linalg::{normalize_columns, DenseMatrix, Vector};

/// Rejection-sampling budget for the unseen prototypes.
pub const MAX_DRAWS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub feature_dim: usize,
    pub attribute_dim: usize,
    pub atoms: usize,
    pub seen_samples: usize,
    pub unseen_classes: usize,
    pub test_samples: usize,
    /// Nonzeros per code.
    pub code_sparsity: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    /// Minimum distance between unseen prototypes.
    pub separation: f64,
    pub seed: u64,
    pub seen_classes: usize,
    /// Standard deviation of per-sample perturbations of class codes.
    pub code_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            feature_dim: 32,
            attribute_dim: 16,
            atoms: 64,
            seen_samples: 500,
            unseen_classes: 10,
            test_samples: 200,
            code_sparsity: 3,
            noise: 0.005,
            separation: 1.0,
            seed: 0,
            seen_classes: 500,
            code_jitter: 0.1,
        }
    }
}

fn bad(message: String) -> DataError {
    DataError::Config {
        path: "<synth>".into(),
        message,
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let counts = [
            ("feature_dim", self.feature_dim),
            ("attribute_dim", self.attribute_dim),
            ("atoms", self.atoms),
            ("seen_samples", self.seen_samples),
            ("unseen_classes", self.unseen_classes),
            ("test_samples", self.test_samples),
            ("code_sparsity", self.code_sparsity),
            ("seen_classes", self.seen_classes),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(bad(format!("`{k}` must be at least 1")));
        }
        if self.code_sparsity >= self.atoms {
            return Err(bad(format!(
                "`code_sparsity` ({}) must be below `atoms` ({})",
                self.code_sparsity, self.atoms
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(bad("`separation` must be positive".into()));
        }
        for (k, v) in [("noise", self.noise), ("code_jitter", self.code_jitter)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(format!("`{k}` must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "feature_dim = {}\nattribute_dim = {}\natoms = {}\nseen_samples = {}\n\
             unseen_classes = {}\ntest_samples = {}\ncode_sparsity = {}\nnoise = {}\n\
             separation = {}\nseed = {}\nseen_classes = {}\ncode_jitter = {}\n",
            self.feature_dim,
            self.attribute_dim,
            self.atoms,
            self.seen_samples,
            self.unseen_classes,
            self.test_samples,
            self.code_sparsity,
            self.noise,
            self.separation,
            self.seed,
            self.seen_classes,
            self.code_jitter
        )
    }
}

/// Parses a synth config; absent keys keep their defaults.
pub fn parse_synth_config(text: &str, path: &Path) -> Result<SynthConfig, DataError> {
    let err = |message: String| DataError::Config {
        path: path.to_path_buf(),
        message,
    };
    let mut c = SynthConfig::default();
    for e in key_values(text, path, err)? {
        let int = || {
            e.value
                .parse::<usize>()
                .map_err(|_| err(format!("line {}: key `{}` expects an integer, got `{}`", e.line, e.key, e.value)))
        };
        let real = || {
            e.value
                .parse::<f64>()
                .map_err(|_| err(format!("line {}: key `{}` expects a number, got `{}`", e.line, e.key, e.value)))
        };
        match e.key.as_str() {
            "feature_dim" => c.feature_dim = int()?,
            "attribute_dim" => c.attribute_dim = int()?,
            "atoms" => c.atoms = int()?,
            "seen_samples" => c.seen_samples = int()?,
            "unseen_classes" => c.unseen_classes = int()?,
            "test_samples" => c.test_samples = int()?,
            "code_sparsity" => c.code_sparsity = int()?,
            "noise" => c.noise = real()?,
            "separation" => c.separation = real()?,
            "seed" => c.seed = int()? as u64,
            "seen_classes" => c.seen_classes = int()?,
            "code_jitter" => c.code_jitter = real()?,
            other => return Err(err(format!("line {}: unknown key `{other}`", e.line))),
        }
    }
    c.validate().map_err(|e| match e {
        DataError::Config { message, .. } => err(message),
        other => other,
    })?;
    Ok(c)
}

/// Everything the generator draws, including the hidden ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    pub true_visual: DenseMatrix,
    pub true_attribute: DenseMatrix,
    pub seen_codes: DenseMatrix,
    pub seen_features: DenseMatrix,
    pub seen_attributes: DenseMatrix,
    pub seen_labels: Vec<usize>,
    pub unseen_codes: DenseMatrix,
    pub unseen_prototypes: DenseMatrix,
    /// Class ids of the unseen classes, following the seen ids.
    pub unseen_labels: Vec<usize>,
    pub test_codes: DenseMatrix,
    pub test_features: DenseMatrix,
    /// Noise-free attributes of the test samples.
    pub test_attributes: DenseMatrix,
    pub test_labels: Vec<usize>,
}

fn magnitude(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.5..1.5);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn class_code(atoms: usize, support: &[usize], rng: &mut ChaCha8Rng) -> Vector {
    let mut b = Vector::zeros(atoms);
    for &i in support {
        b[i] = magnitude(rng);
    }
    b
}

fn jittered(class: &Vector, jitter: f64, rng: &mut ChaCha8Rng) -> Vector {
    class.mapv(|v| {
        if v != 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            v + jitter * n
        } else {
            0.0
        }
    })
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Draws a planted problem. Identical configs give identical problems.
pub fn draw_synthetic(c: &SynthConfig) -> Result<SyntheticProblem, DataError> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    rng.set_stream(7);
    let mut true_visual = gaussian(c.feature_dim, c.atoms, &mut rng);
    normalize_columns(&mut true_visual);
    let mut true_attribute = gaussian(c.attribute_dim, c.atoms, &mut rng);
    normalize_columns(&mut true_attribute);

    let mut deck: Vec<usize> = (0..c.atoms).collect();
    deck.shuffle(&mut rng);
    // The first ⌈r/k⌉ classes take consecutive slices of the shuffled deck,
    // later classes draw their supports freely.
    let dealt = c.atoms.div_ceil(c.code_sparsity);
    let seen_class_codes: Vec<Vector> = (0..c.seen_classes)
        .map(|s| {
            let support: Vec<usize> = if s < dealt {
                (0..c.code_sparsity)
                    .map(|i| deck[(s * c.code_sparsity + i) % c.atoms])
                    .collect()
            } else {
                rand::seq::index::sample(&mut rng, c.atoms, c.code_sparsity).into_vec()
            };
            class_code(c.atoms, &support, &mut rng)
        })
        .collect();

    let mut unseen_codes = DenseMatrix::zeros((c.atoms, c.unseen_classes));
    let mut unseen_prototypes = DenseMatrix::zeros((c.attribute_dim, c.unseen_classes));
    let mut accepted = 0;
    let mut draws = 0;
    while accepted < c.unseen_classes {
        if draws == MAX_DRAWS {
            return Err(DataError::RejectionBudgetExceeded {
                classes: c.unseen_classes,
                separation: c.separation,
                draws,
            });
        }
        draws += 1;
        let support = rand::seq::index::sample(&mut rng, c.atoms, c.code_sparsity).into_vec();
        let b = class_code(c.atoms, &support, &mut rng);
        let z = true_attribute.dot(&b);
        let far = (0..accepted).all(|m| {
            let d = &unseen_prototypes.column(m) - &z;
            d.dot(&d).sqrt() >= c.separation
        });
        if far {
            unseen_codes.column_mut(accepted).assign(&b);
            unseen_prototypes.column_mut(accepted).assign(&z);
            accepted += 1;
        }
    }

    let mut seen_codes = DenseMatrix::zeros((c.atoms, c.seen_samples));
    let seen_labels: Vec<usize> = (0..c.seen_samples).map(|j| j % c.seen_classes).collect();
    for (j, &l) in seen_labels.iter().enumerate() {
        let a = jittered(&seen_class_codes[l], c.code_jitter, &mut rng);
        seen_codes.column_mut(j).assign(&a);
    }
    let mut test_codes = DenseMatrix::zeros((c.atoms, c.test_samples));
    let test_classes: Vec<usize> = (0..c.test_samples).map(|j| j % c.unseen_classes).collect();
    for (j, &m) in test_classes.iter().enumerate() {
        let a = jittered(&unseen_codes.column(m).to_owned(), c.code_jitter, &mut rng);
        test_codes.column_mut(j).assign(&a);
    }

    let seen_noise = gaussian(c.feature_dim, c.seen_samples, &mut rng) * c.noise;
    let test_noise = gaussian(c.feature_dim, c.test_samples, &mut rng) * c.noise;
    let seen_features = true_visual.dot(&seen_codes) + seen_noise;
    let test_features = true_visual.dot(&test_codes) + test_noise;
    let seen_attributes = true_attribute.dot(&seen_codes);
    let test_attributes = true_attribute.dot(&test_codes);
    let unseen_labels: Vec<usize> = (c.seen_classes..c.seen_classes + c.unseen_classes).collect();
    let test_labels = test_classes.iter().map(|&m| unseen_labels[m]).collect();

    Ok(SyntheticProblem {
        true_visual,
        true_attribute,
        seen_codes,
        seen_features,
        seen_attributes,
        seen_labels,
        unseen_codes,
        unseen_prototypes,
        unseen_labels,
        test_codes,
        test_features,
        test_attributes,
        test_labels,
    })
}

/// Draws a planted problem and writes it to `dir` together with a
/// `manifest.txt` and a `synth.txt` echo of the config. Ground truth goes to
/// files prefixed with `true_`.
pub fn generate_synthetic(c: &SynthConfig, dir: &Path) -> Result<DatasetManifest, DataError> {
    let problem = draw_synthetic(c)?;
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let file = |name: &str| dir.join(name);

    write_matrix(file("seen_features.cdzm"), &problem.seen_features)?;
    write_matrix(file("seen_attributes.cdzm"), &problem.seen_attributes)?;
    write_labels(&file("seen_labels.cdzm"), &problem.seen_labels)?;
    write_matrix(file("unseen_prototypes.cdzm"), &problem.unseen_prototypes)?;
    write_labels(&file("unseen_labels.cdzm"), &problem.unseen_labels)?;
    write_matrix(file("test_features.cdzm"), &problem.test_features)?;
    write_labels(&file("test_labels.cdzm"), &problem.test_labels)?;
    let names: String = problem
        .unseen_labels
        .iter()
        .map(|l| format!("class_{l}\n"))
        .collect();
    std::fs::write(file("unseen_class_names.txt"), names)
        .map_err(|e| DataError::io(&file("unseen_class_names.txt"), e))?;

    write_matrix(file("true_visual_dictionary.cdzm"), &problem.true_visual)?;
    write_matrix(file("true_attribute_dictionary.cdzm"), &problem.true_attribute)?;
    write_matrix(file("true_seen_codes.cdzm"), &problem.seen_codes)?;
    write_matrix(file("true_unseen_codes.cdzm"), &problem.unseen_codes)?;
    write_matrix(file("true_test_codes.cdzm"), &problem.test_codes)?;
    write_matrix(file("true_test_attributes.cdzm"), &problem.test_attributes)?;

    let manifest = DatasetManifest {
        path: file("manifest.txt"),
        seen_features: file("seen_features.cdzm"),
        seen_attributes: Some(file("seen_attributes.cdzm")),
        seen_class_attributes: None,
        seen_class_ids: None,
        seen_labels: Some(file("seen_labels.cdzm")),
        unseen_prototypes: file("unseen_prototypes.cdzm"),
        unseen_labels: Some(file("unseen_labels.cdzm")),
        unseen_class_names: Some(file("unseen_class_names.txt")),
        test_features: file("test_features.cdzm"),
        test_labels: Some(file("test_labels.cdzm")),
        normalize_features: false,
        normalize_attributes: false,
    };
    let write_text = |name: &str, text: String| {
        std::fs::write(file(name), text).map_err(|e| DataError::io(&file(name), e))
    };
    write_text("manifest.txt", manifest.to_text(dir))?;
    write_text("synth.txt", c.to_text())?;
    Ok(manifest)
}
