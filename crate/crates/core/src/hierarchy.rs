//! Two-level label tree: leaves grouped under parents, with the shared-class
//! mask and per-leaf source counts. Provides the sibling machinery used by the
//! class reward, the parent-pull penalty on the classifier rows, and the
//! closed-form parent re-estimate.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{AidaError, Result};
use crate::nn::SharedMask;

/// Scale of the Gaussian prior on parent and class vectors. Kept for
/// reference only: training re-estimates parents as child means instead of
/// sampling from the prior.
pub const DEFAULT_PRIOR_SCALE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelTree {
    leaf_names: Vec<String>,
    parent_names: Vec<String>,
    parent_of: Vec<usize>,
    shared: SharedMask,
    counts: Vec<u64>,
    self_inclusion: bool,
}

/// Example count of the sparsest shared sibling, or infinity when there is none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SparseSize {
    Finite(u64),
    Infinite,
}

impl SparseSize {
    pub fn is_infinite(self) -> bool {
        matches!(self, SparseSize::Infinite)
    }

    pub fn finite(self) -> Option<u64> {
        match self {
            SparseSize::Finite(n) => Some(n),
            SparseSize::Infinite => None,
        }
    }

    /// `exp(-s * tau)`; exactly zero for the infinite sentinel.
    pub fn weight(self, tau: f64) -> f64 {
        match self {
            SparseSize::Finite(n) => (-(n as f64) * tau).exp(),
            SparseSize::Infinite => 0.0,
        }
    }
}

#[derive(Deserialize, Serialize)]
struct LeafEntry {
    parent: String,
    shared: bool,
}

impl LabelTree {
    /// Builds a tree from leaf names, each leaf's parent index, parent names and the mask.
    /// Counts start at zero.
    pub fn new(
        leaf_names: Vec<String>,
        parent_of: Vec<usize>,
        parent_names: Vec<String>,
        shared: SharedMask,
    ) -> Result<Self> {
        let k = leaf_names.len();
        if parent_of.len() != k || shared.len() != k {
            return Err(AidaError::dim(
                "label_tree",
                format!("{k} leaves, {} parent links, mask of {}", parent_of.len(), shared.len()),
            ));
        }
        for (leaf, &p) in leaf_names.iter().zip(&parent_of) {
            if p >= parent_names.len() {
                return Err(AidaError::Hierarchy {
                    leaf: leaf.clone(),
                    detail: format!("parent index {p} out of range"),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for leaf in &leaf_names {
            if !seen.insert(leaf) {
                return Err(AidaError::Hierarchy {
                    leaf: leaf.clone(),
                    detail: "duplicate leaf name".into(),
                });
            }
        }
        Ok(LabelTree {
            counts: vec![0; k],
            leaf_names,
            parent_names,
            parent_of,
            shared,
            self_inclusion: true,
        })
    }

    /// Uniform tree of `groups` parents with `children` leaves each.
    /// `shared[j][c]` marks child `c` of parent `j` as shared.
    pub fn uniform(groups: usize, children: usize, shared: &[Vec<bool>]) -> Result<Self> {
        let mut leaves = Vec::new();
        let mut parent_of = Vec::new();
        let mut bits = Vec::new();
        for j in 0..groups {
            for c in 0..children {
                leaves.push(format!("p{j}.c{c}"));
                parent_of.push(j);
                bits.push(shared.get(j).and_then(|row| row.get(c)).copied().unwrap_or(false));
            }
        }
        let parents = (0..groups).map(|j| format!("p{j}")).collect();
        LabelTree::new(leaves, parent_of, parents, SharedMask::new(bits)?)
    }

    /// Parses the hierarchy JSON: an object mapping each leaf name to
    /// `{"parent": <name>, "shared": <bool>}`. Key order defines class indices;
    /// parents are indexed in order of first appearance.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let mut leaves = Vec::new();
        let mut parent_names: Vec<String> = Vec::new();
        let mut parent_of = Vec::new();
        let mut bits = Vec::new();
        for (leaf, value) in map {
            let entry: LeafEntry = serde_json::from_value(value).map_err(|e| AidaError::Hierarchy {
                leaf: leaf.clone(),
                detail: e.to_string(),
            })?;
            if entry.parent.trim().is_empty() {
                return Err(AidaError::Hierarchy {
                    leaf,
                    detail: "empty parent name".into(),
                });
            }
            let p = match parent_names.iter().position(|n| *n == entry.parent) {
                Some(p) => p,
                None => {
                    parent_names.push(entry.parent.clone());
                    parent_names.len() - 1
                }
            };
            leaves.push(leaf);
            parent_of.push(p);
            bits.push(entry.shared);
        }
        if leaves.is_empty() {
            return Err(AidaError::Hierarchy {
                leaf: "<none>".into(),
                detail: "hierarchy has no leaves".into(),
            });
        }
        let shared = SharedMask::new(bits).map_err(|_| AidaError::Hierarchy {
            leaf: leaves.last().cloned().unwrap_or_default(),
            detail: "no leaf is marked shared".into(),
        })?;
        LabelTree::new(leaves, parent_of, parent_names, shared)
    }

    pub fn load(path: &Path) -> Result<Self> {
        LabelTree::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for (k, leaf) in self.leaf_names.iter().enumerate() {
            let entry = LeafEntry {
                parent: self.parent_names[self.parent_of[k]].clone(),
                shared: self.shared.is_shared(k),
            };
            map.insert(leaf.clone(), serde_json::to_value(entry).expect("plain struct"));
        }
        serde_json::to_string_pretty(&map).expect("plain map")
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_names.len()
    }

    pub fn num_parents(&self) -> usize {
        self.parent_names.len()
    }

    pub fn leaf_names(&self) -> &[String] {
        &self.leaf_names
    }

    pub fn parent_names(&self) -> &[String] {
        &self.parent_names
    }

    pub fn leaf_index(&self, name: &str) -> Option<usize> {
        self.leaf_names.iter().position(|n| n == name)
    }

    pub fn parent(&self, leaf: usize) -> usize {
        self.parent_of[leaf]
    }

    pub fn children(&self, parent: usize) -> Vec<usize> {
        (0..self.num_leaves()).filter(|&k| self.parent_of[k] == parent).collect()
    }

    pub fn shared(&self) -> &SharedMask {
        &self.shared
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn self_inclusion(&self) -> bool {
        self.self_inclusion
    }

    pub fn with_self_inclusion(mut self, include: bool) -> Self {
        self.self_inclusion = include;
        self
    }

    pub fn with_counts(mut self, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != self.num_leaves() {
            return Err(AidaError::dim(
                "label_tree",
                format!("{} counts for {} leaves", counts.len(), self.num_leaves()),
            ));
        }
        self.counts = counts;
        Ok(self)
    }

    /// Recomputes `N_y` from a list of source labels.
    pub fn with_counts_from(self, labels: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts = vec![0u64; self.num_leaves()];
        for y in labels {
            if y >= counts.len() {
                return Err(AidaError::pre("label_tree", format!("label {y} out of range")));
            }
            counts[y] += 1;
        }
        self.with_counts(counts)
    }

    /// Shared leaves under the same parent as `y`. With self-inclusion
    /// enabled a shared `y` belongs to its own set.
    pub fn sibling_shared_set(&self, y: usize) -> Vec<usize> {
        let p = self.parent_of[y];
        (0..self.num_leaves())
            .filter(|&k| self.parent_of[k] == p && self.shared.is_shared(k))
            .filter(|&k| k != y || self.self_inclusion)
            .collect()
    }

    /// `s(y)`: smallest count among the shared siblings of `y`.
    pub fn sparse_size(&self, y: usize) -> SparseSize {
        self.sibling_shared_set(y)
            .into_iter()
            .map(|k| self.counts[k])
            .min()
            .map_or(SparseSize::Infinite, SparseSize::Finite)
    }

    /// Stable identifier for checkpoints and reports.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_json().as_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

/// One vector per parent, same width as the classifier rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParentParams {
    /// `G x D`; row `j` is the vector of parent `j`.
    pub vectors: Tensor,
    /// Prior scale, carried along for documentation.
    pub prior_scale: f64,
}

/// Parent vectors as the mean of their children's class rows.
pub fn estimate_parents(class_rows: &Tensor, tree: &LabelTree) -> Result<ParentParams> {
    let (k, d) = class_rows.dims();
    if k != tree.num_leaves() {
        return Err(AidaError::dim(
            "estimate_parents",
            format!("{k} class rows for {} leaves", tree.num_leaves()),
        ));
    }
    let g = tree.num_parents();
    let mut sums = vec![0.0; g * d];
    let mut sizes = vec![0usize; g];
    for leaf in 0..k {
        let p = tree.parent(leaf);
        sizes[p] += 1;
        for (s, v) in sums[p * d..(p + 1) * d].iter_mut().zip(class_rows.row(leaf)) {
            *s += v;
        }
    }
    if let Some(j) = sizes.iter().position(|&n| n == 0) {
        return Err(AidaError::Config(format!(
            "parent `{}` has no children",
            tree.parent_names()[j]
        )));
    }
    for (j, &n) in sizes.iter().enumerate() {
        sums[j * d..(j + 1) * d].iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(ParentParams {
        vectors: Tensor::matrix(g, d, sums)?,
        prior_scale: DEFAULT_PRIOR_SCALE,
    })
}

fn expanded_parents(parents: &ParentParams, tree: &LabelTree, width: usize) -> Result<Tensor> {
    if parents.vectors.dims() != (tree.num_parents(), width) {
        return Err(AidaError::dim(
            "hierarchy_penalty",
            format!(
                "parents {:?} vs {} x {width}",
                parents.vectors.dims(),
                tree.num_parents()
            ),
        ));
    }
    let mut data = Vec::with_capacity(tree.num_leaves() * width);
    for k in 0..tree.num_leaves() {
        data.extend_from_slice(parents.vectors.row(tree.parent(k)));
    }
    Tensor::matrix(tree.num_leaves(), width, data)
}

/// `(1/2) * sum_k ||theta_y^k - theta_beta^{parent(k)}||^2` recorded on the
/// tape; parents enter as constants.
pub fn hierarchy_penalty(tape: &mut Tape, class_rows: Var, parents: &ParentParams, tree: &LabelTree) -> Result<Var> {
    let (k, d) = tape.value(class_rows).dims();
    if k != tree.num_leaves() {
        return Err(AidaError::dim("hierarchy_penalty", format!("{k} rows for {} leaves", tree.num_leaves())));
    }
    let target = tape.constant(expanded_parents(parents, tree, d)?);
    let diff = tape.sub(class_rows, target)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 0.5)
}

/// Same quantity as [`hierarchy_penalty`], evaluated directly.
pub fn hierarchy_penalty_value(class_rows: &Tensor, parents: &ParentParams, tree: &LabelTree) -> Result<f64> {
    let d = class_rows.cols();
    let target = expanded_parents(parents, tree, d)?;
    Ok(0.5
        * class_rows
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}
