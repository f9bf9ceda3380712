//! Dataset manifests: a `key = value` file naming the matrices of one
//! zero-shot split. Relative paths resolve against the manifest's directory.
//!
//! ```text
//! seen_features = seen_features.cdzm        # p × N
//! seen_attributes = seen_attributes.cdzm    # q × N, per sample
//! seen_labels = seen_labels.cdzm            # 1 × N class ids
//! unseen_prototypes = unseen_prototypes.cdzm  # q × M
//! unseen_labels = unseen_labels.cdzm        # 1 × M class ids
//! unseen_class_names = classes.txt          # one name per line
//! test_features = test_features.cdzm        # p × L
//! test_labels = test_labels.cdzm            # 1 × L class ids
//! normalize_features = true
//! normalize_attributes = true
//! ```
//!
//! Instead of `seen_attributes` a manifest may give a per-class table
//! `seen_class_attributes` (q × C, column c describing class id
//! `seen_class_ids[c]`, default `c`) together with `seen_labels`.
//!
//! Label files are `1 × n` matrices holding non-negative integral class ids.
//! When `unseen_labels` is absent the unseen classes get the ids following the
//! largest seen id (or `0..M` without seen labels).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::dictionary::TrainingSet;
use crate::io::config::key_values;
use crate::io::{read_matrix, DataError};
use crate::linalg::{normalize_columns, DenseMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Location of the manifest file itself.
    pub path: PathBuf,
    pub seen_features: PathBuf,
    pub seen_attributes: Option<PathBuf>,
    pub seen_class_attributes: Option<PathBuf>,
    pub seen_class_ids: Option<PathBuf>,
    pub seen_labels: Option<PathBuf>,
    pub unseen_prototypes: PathBuf,
    pub unseen_labels: Option<PathBuf>,
    pub unseen_class_names: Option<PathBuf>,
    pub test_features: PathBuf,
    pub test_labels: Option<PathBuf>,
    pub normalize_features: bool,
    pub normalize_attributes: bool,
}

/// Matrices of one split after loading, cross-checking and preprocessing.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub seen_features: DenseMatrix,
    pub seen_attributes: DenseMatrix,
    pub seen_labels: Option<Vec<usize>>,
    pub unseen_prototypes: DenseMatrix,
    pub unseen_labels: Vec<usize>,
    pub unseen_class_names: Vec<String>,
    pub test_features: DenseMatrix,
    pub test_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn training_set(&self) -> crate::Result<TrainingSet> {
        TrainingSet::new(
            self.seen_features.clone(),
            self.seen_attributes.clone(),
            self.unseen_prototypes.clone(),
        )
    }

    /// Test labels as prototype column indices.
    pub fn test_targets(&self) -> Option<Vec<usize>> {
        self.test_labels.as_ref().map(|labels| {
            labels
                .iter()
                .map(|l| {
                    self.unseen_labels
                        .iter()
                        .position(|u| u == l)
                        .expect("test labels are checked against unseen labels on load")
                })
                .collect()
        })
    }
}

fn manifest_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_flag(path: &Path, key: &str, v: &str) -> Result<bool, DataError> {
    v.parse()
        .map_err(|_| manifest_err(path, format!("key `{key}` expects `true` or `false`, got `{v}`")))
}

/// Parses manifest text; `path` is used for messages and to resolve
/// relative file names.
pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest, DataError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut files: Vec<(&str, Option<PathBuf>)> = [
        "seen_features",
        "seen_attributes",
        "seen_class_attributes",
        "seen_class_ids",
        "seen_labels",
        "unseen_prototypes",
        "unseen_labels",
        "unseen_class_names",
        "test_features",
        "test_labels",
    ]
    .into_iter()
    .map(|k| (k, None))
    .collect();
    let mut normalize_features = true;
    let mut normalize_attributes = true;

    for e in key_values(text, path, |m| manifest_err(path, m))? {
        match e.key.as_str() {
            "normalize_features" => normalize_features = parse_flag(path, &e.key, &e.value)?,
            "normalize_attributes" => normalize_attributes = parse_flag(path, &e.key, &e.value)?,
            key => {
                let Some(slot) = files.iter_mut().find(|(k, _)| *k == key) else {
                    return Err(manifest_err(path, format!("line {}: unknown key `{key}`", e.line)));
                };
                if e.value.is_empty() {
                    return Err(manifest_err(path, format!("line {}: key `{key}` has no path", e.line)));
                }
                slot.1 = Some(base.join(&e.value));
            }
        }
    }

    let mut take = |key: &str| files.iter_mut().find(|(k, _)| *k == key).unwrap().1.take();
    let required = |key: &str, v: Option<PathBuf>| {
        v.ok_or_else(|| manifest_err(path, format!("missing required key `{key}`")))
    };
    let m = DatasetManifest {
        path: path.to_path_buf(),
        seen_features: required("seen_features", take("seen_features"))?,
        seen_attributes: take("seen_attributes"),
        seen_class_attributes: take("seen_class_attributes"),
        seen_class_ids: take("seen_class_ids"),
        seen_labels: take("seen_labels"),
        unseen_prototypes: required("unseen_prototypes", take("unseen_prototypes"))?,
        unseen_labels: take("unseen_labels"),
        unseen_class_names: take("unseen_class_names"),
        test_features: required("test_features", take("test_features"))?,
        test_labels: take("test_labels"),
        normalize_features,
        normalize_attributes,
    };
    match (&m.seen_attributes, &m.seen_class_attributes) {
        (Some(_), Some(_)) => {
            return Err(manifest_err(
                path,
                "give either `seen_attributes` or `seen_class_attributes`, not both",
            ))
        }
        (None, None) => {
            return Err(manifest_err(
                path,
                "missing `seen_attributes` (or `seen_class_attributes` with `seen_labels`)",
            ))
        }
        (None, Some(_)) if m.seen_labels.is_none() => {
            return Err(manifest_err(path, "`seen_class_attributes` needs `seen_labels`"))
        }
        _ => {}
    }
    if m.seen_class_ids.is_some() && m.seen_class_attributes.is_none() {
        return Err(manifest_err(path, "`seen_class_ids` needs `seen_class_attributes`"));
    }
    Ok(m)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_manifest(&text, path)
}

/// Reads a `1 × n` matrix of class ids.
pub fn read_labels(path: &Path) -> Result<Vec<usize>, DataError> {
    let m = read_matrix(path)?;
    if m.nrows() != 1 {
        return Err(manifest_err(
            path,
            format!("label file must have a single row, found {}x{}", m.nrows(), m.ncols()),
        ));
    }
    m.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
                Ok(v as usize)
            } else {
                Err(manifest_err(path, format!("entry {i} is not a class id: {v}")))
            }
        })
        .collect()
}

/// Writes class ids as a `1 × n` matrix.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<(), DataError> {
    let m = DenseMatrix::from_shape_fn((1, labels.len()), |(_, j)| labels[j] as f64);
    crate::io::write_matrix(path, &m)
}

fn read_names(path: &Path) -> Result<Vec<String>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}

impl DatasetManifest {
    /// Loads every referenced file, cross-checks dimensions and labels, and
    /// applies the normalization flags.
    pub fn load(&self) -> Result<Dataset, DataError> {
        let err = |m: String| manifest_err(&self.path, m);
        let mut seen_features = read_matrix(&self.seen_features)?;
        let mut test_features = read_matrix(&self.test_features)?;
        let mut unseen_prototypes = read_matrix(&self.unseen_prototypes)?;
        let seen_labels = self.seen_labels.as_deref().map(read_labels).transpose()?;
        let n = seen_features.ncols();

        let mut seen_attributes = match (&self.seen_attributes, &self.seen_class_attributes) {
            (Some(p), _) => read_matrix(p)?,
            (None, Some(p)) => {
                let table = read_matrix(p)?;
                let ids = match &self.seen_class_ids {
                    Some(path) => read_labels(path)?,
                    None => (0..table.ncols()).collect(),
                };
                if ids.len() != table.ncols() {
                    return Err(err(format!(
                        "seen_class_ids has {} entries but seen_class_attributes has {} columns",
                        ids.len(),
                        table.ncols()
                    )));
                }
                let labels = seen_labels.as_ref().expect("checked when parsing");
                let mut z = DenseMatrix::zeros((table.nrows(), labels.len()));
                for (j, l) in labels.iter().enumerate() {
                    let c = ids.iter().position(|id| id == l).ok_or_else(|| {
                        err(format!("seen label {l} at position {j} has no row in seen_class_attributes"))
                    })?;
                    z.column_mut(j).assign(&table.column(c));
                }
                z
            }
            (None, None) => unreachable!("checked when parsing"),
        };

        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(err(msg)) };
        check(
            seen_attributes.ncols() == n,
            format!("seen_features has {n} columns but seen attributes have {}", seen_attributes.ncols()),
        )?;
        if let Some(l) = &seen_labels {
            check(l.len() == n, format!("seen_labels has {} entries for {n} seen samples", l.len()))?;
        }
        check(
            test_features.nrows() == seen_features.nrows(),
            format!(
                "test_features has {} rows but seen_features has {}",
                test_features.nrows(),
                seen_features.nrows()
            ),
        )?;
        check(
            unseen_prototypes.nrows() == seen_attributes.nrows(),
            format!(
                "unseen_prototypes has {} rows but seen attributes have {}",
                unseen_prototypes.nrows(),
                seen_attributes.nrows()
            ),
        )?;
        let m = unseen_prototypes.ncols();
        check(m >= 1, "unseen_prototypes has no columns".into())?;
        check(n >= 1, "seen_features has no columns".into())?;

        let unseen_labels = match &self.unseen_labels {
            Some(p) => read_labels(p)?,
            None => {
                let start = seen_labels
                    .as_ref()
                    .and_then(|l| l.iter().max())
                    .map_or(0, |mx| mx + 1);
                (start..start + m).collect()
            }
        };
        check(
            unseen_labels.len() == m,
            format!("unseen_labels has {} entries for {m} prototypes", unseen_labels.len()),
        )?;
        let unseen_set: BTreeSet<usize> = unseen_labels.iter().copied().collect();
        check(unseen_set.len() == m, "unseen_labels contains repeated ids".into())?;
        if let Some(l) = &seen_labels {
            if let Some(shared) = l.iter().find(|id| unseen_set.contains(id)) {
                return Err(err(format!("class id {shared} is both seen and unseen")));
            }
        }

        let unseen_class_names = match &self.unseen_class_names {
            Some(p) => read_names(p)?,
            None => unseen_labels.iter().map(|l| format!("class_{l}")).collect(),
        };
        check(
            unseen_class_names.len() == m,
            format!("unseen_class_names lists {} names for {m} prototypes", unseen_class_names.len()),
        )?;

        let test_labels = self.test_labels.as_deref().map(read_labels).transpose()?;
        if let Some(t) = &test_labels {
            check(
                t.len() == test_features.ncols(),
                format!("test_labels has {} entries for {} test samples", t.len(), test_features.ncols()),
            )?;
            if let Some((j, l)) = t.iter().enumerate().find(|(_, l)| !unseen_set.contains(l)) {
                return Err(err(format!("test label {l} at position {j} is not an unseen class")));
            }
        }

        if self.normalize_features {
            normalize_columns(&mut seen_features);
            normalize_columns(&mut test_features);
        }
        if self.normalize_attributes {
            normalize_columns(&mut seen_attributes);
            normalize_columns(&mut unseen_prototypes);
        }
        Ok(Dataset {
            seen_features,
            seen_attributes,
            seen_labels,
            unseen_prototypes,
            unseen_labels,
            unseen_class_names,
            test_features,
            test_labels,
        })
    }

    /// Renders the manifest with paths relative to `dir` where possible.
    pub fn to_text(&self, dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut out = String::new();
        let mut put = |k: &str, v: Option<&PathBuf>| {
            if let Some(v) = v {
                out.push_str(&format!("{k} = {}\n", rel(v)));
            }
        };
        put("seen_features", Some(&self.seen_features));
        put("seen_attributes", self.seen_attributes.as_ref());
        put("seen_class_attributes", self.seen_class_attributes.as_ref());
        put("seen_class_ids", self.seen_class_ids.as_ref());
        put("seen_labels", self.seen_labels.as_ref());
        put("unseen_prototypes", Some(&self.unseen_prototypes));
        put("unseen_labels", self.unseen_labels.as_ref());
        put("unseen_class_names", self.unseen_class_names.as_ref());
        put("test_features", Some(&self.test_features));
        put("test_labels", self.test_labels.as_ref());
        out.push_str(&format!("normalize_features = {}\n", self.normalize_features));
        out.push_str(&format!("normalize_attributes = {}\n", self.normalize_attributes));
        out
    }
}
