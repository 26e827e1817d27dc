//! Domain-tagged examples, synthetic partial-and-imbalanced domain pairs,
//! imbalance subsampling and JSONL ingestion.

mod jsonl;
mod synthetic;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{AidaError, Result};
use crate::hierarchy::LabelTree;
use crate::rng;

pub use jsonl::{load_jsonl, write_jsonl, JsonlOptions, Vocabulary, DEFAULT_MIN_FREQ, UNKNOWN_WORD};
pub use synthetic::{generate_synthetic, Geometry, PayloadMode, SyntheticData, SyntheticSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Vector(Vec<f64>),
    Tokens(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub payload: Payload,
    pub label: Option<usize>,
    pub domain: Domain,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn payloads(&self) -> Vec<&Payload> {
        self.examples.iter().map(|e| &e.payload).collect()
    }

    /// Labels of all examples; fails if any is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| e.label.ok_or_else(|| AidaError::pre("labels", format!("example {i} is unlabeled"))))
            .collect()
    }

    /// Example indices grouped by label, in ascending label order.
    pub fn by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            if let Some(y) = e.label {
                map.entry(y).or_default().push(i);
            }
        }
        map
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_classes];
        for e in &self.examples {
            if let Some(y) = e.label.filter(|&y| y < num_classes) {
                counts[y] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.examples[i].clone()).collect())
    }

    /// Copy with labels removed, as seen by the learner on the target side.
    pub fn without_labels(&self) -> Dataset {
        Dataset::new(
            self.examples
                .iter()
                .map(|e| Example {
                    label: None,
                    ..e.clone()
                })
                .collect(),
        )
    }

    /// Checks that every label is a leaf of `tree`, source examples are labeled
    /// and target labels (when present) are shared classes.
    pub fn validate(&self, tree: &LabelTree) -> Result<()> {
        for (i, e) in self.examples.iter().enumerate() {
            match (e.domain, e.label) {
                (Domain::Source, None) => {
                    return Err(AidaError::pre("dataset", format!("source example {i} is unlabeled")))
                }
                (_, Some(y)) if y >= tree.num_leaves() => {
                    return Err(AidaError::pre("dataset", format!("example {i} has label {y} outside the tree")))
                }
                (Domain::Target, Some(y)) if !tree.shared().is_shared(y) => {
                    return Err(AidaError::pre(
                        "dataset",
                        format!("target example {i} has non-shared label `{}`", tree.leaf_names()[y]),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Per-leaf maximum class sizes; `None` leaves a class untouched.
pub type Caps = Vec<Option<usize>>;

/// The same cap on every shared class.
pub fn uniform_shared_caps(tree: &LabelTree, cap: Option<usize>) -> Caps {
    (0..tree.num_leaves())
        .map(|k| if tree.shared().is_shared(k) { cap } else { None })
        .collect()
}

/// Truncates every shared class to its cap by seeded sampling without
/// replacement. Non-shared classes and retained example order are preserved.
pub fn subsample_imbalanced(source: &Dataset, tree: &LabelTree, caps: &Caps, seed: u64) -> Result<Dataset> {
    if caps.len() != tree.num_leaves() {
        return Err(AidaError::dim(
            "subsample_imbalanced",
            format!("{} caps for {} leaves", caps.len(), tree.num_leaves()),
        ));
    }
    if caps.contains(&Some(0)) {
        return Err(AidaError::pre("subsample_imbalanced", "caps must be at least 1"));
    }
    let mut keep = vec![true; source.len()];
    for (class, members) in source.by_class() {
        let cap = match caps.get(class).copied().flatten() {
            Some(cap) if tree.shared().is_shared(class) => cap,
            _ => continue,
        };
        if cap >= members.len() {
            if cap > members.len() {
                log::info!(
                    "cap {cap} exceeds the {} examples of `{}`; keeping all",
                    members.len(),
                    tree.leaf_names()[class]
                );
            }
            continue;
        }
        let mut r = rng::stream(seed, &format!("subsample/{class}"));
        let chosen = sample(&mut r, members.len(), cap);
        let mut retained = vec![false; members.len()];
        for i in chosen.iter() {
            retained[i] = true;
        }
        for (m, r) in members.iter().zip(retained) {
            keep[*m] = r;
        }
    }
    let idx: Vec<usize> = (0..source.len()).filter(|&i| keep[i]).collect();
    Ok(source.subset(&idx))
}

/// `(shared-class subset, full set)`.
pub fn split_shared_nonshared(source: &Dataset, tree: &LabelTree) -> (Dataset, Dataset) {
    let shared: Vec<usize> = source
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label.is_some_and(|y| tree.shared().is_shared(y)))
        .map(|(i, _)| i)
        .collect();
    if shared.is_empty() {
        log::warn!("no source example belongs to a shared class");
    }
    (source.subset(&shared), source.clone())
}

/// Seeded split into `(rest, held_out)` with `fraction` of each class held out.
pub fn split_holdout(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(AidaError::pre("split_holdout", format!("fraction {fraction} outside [0, 1]")));
    }
    let mut held = vec![false; data.len()];
    let mut groups = data.by_class();
    let unlabeled: Vec<usize> = (0..data.len()).filter(|&i| data.examples[i].label.is_none()).collect();
    if !unlabeled.is_empty() {
        groups.insert(usize::MAX, unlabeled);
    }
    for (class, members) in groups {
        let n = (members.len() as f64 * fraction).round() as usize;
        let mut r = rng::stream(seed, &format!("holdout/{class}"));
        for i in sample(&mut r, members.len(), n.min(members.len())).iter() {
            held[members[i]] = true;
        }
    }
    let rest: Vec<usize> = (0..data.len()).filter(|&i| !held[i]).collect();
    let out: Vec<usize> = (0..data.len()).filter(|&i| held[i]).collect();
    Ok((data.subset(&rest), data.subset(&out)))
}
