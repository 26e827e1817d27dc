use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::jsonl::Vocabulary;
use super::{Dataset, Domain, Example, Payload};
use crate::error::{AidaError, Result};
use crate::hierarchy::LabelTree;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayloadMode {
    Vector {
        input_dim: usize,
        /// Leading coordinates that carry class structure; the rest are pure noise.
        #[serde(default)]
        informative_dim: Option<usize>,
    },
    Tokens {
        keywords_per_class: usize,
        keywords_per_parent: usize,
        filler_words: usize,
        min_len: usize,
        max_len: usize,
        class_rate: f64,
        parent_rate: f64,
        /// Probability that a target keyword is replaced by a target-only synonym.
        target_remap: f64,
        min_freq: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub groups: usize,
    pub children: usize,
    /// One flag per leaf, parent-major.
    pub shared: Vec<bool>,
    pub source_per_class: usize,
    /// Examples drawn for each shared class in the target domain.
    pub target_per_class: usize,
    pub payload: PayloadMode,
    pub parent_scale: f64,
    pub child_scale: f64,
    pub noise: f64,
    pub translation: f64,
    /// Radians, applied in consecutive coordinate planes.
    pub rotation: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Ground-truth centers of a vector-mode draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub parent_centers: Vec<Vec<f64>>,
    pub class_centers: Vec<Vec<f64>>,
    pub target_class_centers: Vec<Vec<f64>>,
    pub noise: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub source: Dataset,
    /// Labeled; strip labels before handing it to a learner.
    pub target: Dataset,
    pub tree: LabelTree,
    pub geometry: Option<Geometry>,
    pub vocabulary: Option<Vocabulary>,
}

impl SyntheticSpec {
    pub fn num_leaves(&self) -> usize {
        self.groups * self.children
    }

    pub fn tree(&self) -> Result<LabelTree> {
        let flags: Vec<Vec<bool>> = self.shared.chunks(self.children.max(1)).map(|c| c.to_vec()).collect();
        LabelTree::uniform(self.groups, self.children, &flags)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: String| AidaError::Validation {
            field: field.into(),
            detail,
        };
        if self.groups == 0 || self.children == 0 {
            return Err(bad("groups", "the tree needs at least one parent and one child".into()));
        }
        if self.shared.len() != self.num_leaves() {
            return Err(bad(
                "shared",
                format!("{} flags for {} leaves", self.shared.len(), self.num_leaves()),
            ));
        }
        for (field, v) in [
            ("parent_scale", self.parent_scale),
            ("child_scale", self.child_scale),
            ("noise", self.noise),
            ("translation", self.translation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(field, format!("{v} must be finite and non-negative")));
            }
        }
        if !self.rotation.is_finite() {
            return Err(bad("rotation", "must be finite".into()));
        }
        match &self.payload {
            PayloadMode::Vector {
                input_dim,
                informative_dim,
            } => {
                if *input_dim == 0 {
                    return Err(bad("input_dim", "must be positive".into()));
                }
                if informative_dim.is_some_and(|d| d == 0 || d > *input_dim) {
                    return Err(bad("informative_dim", format!("must lie in [1, {input_dim}]")));
                }
            }
            PayloadMode::Tokens {
                keywords_per_class,
                min_len,
                max_len,
                class_rate,
                parent_rate,
                target_remap,
                filler_words,
                ..
            } => {
                if *min_len == 0 || min_len > max_len {
                    return Err(bad("min_len", format!("need 1 <= min_len <= max_len, got {min_len}..{max_len}")));
                }
                if *keywords_per_class == 0 || *filler_words == 0 {
                    return Err(bad("keywords_per_class", "keyword and filler pools must be non-empty".into()));
                }
                if !(0.0..=1.0).contains(&(class_rate + parent_rate)) || *class_rate < 0.0 || *parent_rate < 0.0 {
                    return Err(bad("class_rate", "class and parent rates must be non-negative and sum to at most 1".into()));
                }
                if !(0.0..=1.0).contains(target_remap) {
                    return Err(bad("target_remap", "must lie in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

/// Draws a source/target pair with parent-clustered classes. Every class uses
/// its own derived random stream, so classes can be generated independently.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let tree = spec.tree()?;
    match &spec.payload {
        PayloadMode::Vector {
            input_dim,
            informative_dim,
        } => {
            let (source, target, geometry) = vectors(spec, &tree, *input_dim, informative_dim.unwrap_or(*input_dim));
            Ok(SyntheticData {
                source,
                target,
                tree,
                geometry: Some(geometry),
                vocabulary: None,
            })
        }
        PayloadMode::Tokens { .. } => {
            let (source, target, vocabulary) = tokens(spec, &tree);
            Ok(SyntheticData {
                source,
                target,
                tree,
                geometry: None,
                vocabulary: Some(vocabulary),
            })
        }
    }
}

fn gaussian(r: &mut rng::Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            scale * z
        })
        .collect()
}

fn rotate(x: &mut [f64], angle: f64) {
    let (s, c) = angle.sin_cos();
    for pair in x.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

fn vectors(spec: &SyntheticSpec, tree: &LabelTree, dim: usize, informative: usize) -> (Dataset, Dataset, Geometry) {
    let mut geo_rng = rng::stream(spec.seed, "synthetic/geometry");
    let pad = |mut v: Vec<f64>| {
        v.resize(dim, 0.0);
        v
    };
    let parent_centers: Vec<Vec<f64>> = (0..spec.groups)
        .map(|_| pad(gaussian(&mut geo_rng, informative, spec.parent_scale)))
        .collect();
    let class_centers: Vec<Vec<f64>> = (0..tree.num_leaves())
        .map(|k| {
            let offset = gaussian(&mut geo_rng, informative, spec.child_scale);
            let mut c = parent_centers[tree.parent(k)].clone();
            for (ci, o) in c.iter_mut().zip(offset) {
                *ci += o;
            }
            c
        })
        .collect();
    let mut shift = gaussian(&mut geo_rng, dim, 1.0);
    let norm = shift.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut shift {
        *v *= if norm > 0.0 { spec.translation / norm } else { 0.0 };
    }
    let to_target = |x: &mut Vec<f64>| {
        rotate(x, spec.rotation);
        for (xi, t) in x.iter_mut().zip(&shift) {
            *xi += t;
        }
    };
    let target_class_centers: Vec<Vec<f64>> = class_centers
        .iter()
        .map(|c| {
            let mut c = c.clone();
            to_target(&mut c);
            c
        })
        .collect();

    let mut source = Vec::new();
    let mut target = Vec::new();
    for (k, center) in class_centers.iter().enumerate() {
        let mut r = rng::stream(spec.seed, &format!("synthetic/source/{k}"));
        for _ in 0..spec.source_per_class {
            let mut x = gaussian(&mut r, dim, spec.noise);
            for (xi, c) in x.iter_mut().zip(center) {
                *xi += c;
            }
            source.push(Example {
                payload: Payload::Vector(x),
                label: Some(k),
                domain: Domain::Source,
            });
        }
        if !tree.shared().is_shared(k) {
            continue;
        }
        let mut r = rng::stream(spec.seed, &format!("synthetic/target/{k}"));
        for _ in 0..spec.target_per_class {
            let mut x = gaussian(&mut r, dim, spec.noise);
            for (xi, c) in x.iter_mut().zip(center) {
                *xi += c;
            }
            to_target(&mut x);
            target.push(Example {
                payload: Payload::Vector(x),
                label: Some(k),
                domain: Domain::Target,
            });
        }
    }
    let geometry = Geometry {
        parent_centers,
        class_centers,
        target_class_centers,
        noise: spec.noise,
    };
    (Dataset::new(source), Dataset::new(target), geometry)
}

fn tokens(spec: &SyntheticSpec, tree: &LabelTree) -> (Dataset, Dataset, Vocabulary) {
    let PayloadMode::Tokens {
        keywords_per_class,
        keywords_per_parent,
        filler_words,
        min_len,
        max_len,
        class_rate,
        parent_rate,
        target_remap,
        min_freq,
    } = spec.payload.clone()
    else {
        unreachable!("token generator called with a vector payload")
    };
    let sentence = |r: &mut rng::Rng, k: usize, target: bool| -> Vec<String> {
        let len = r.gen_range(min_len..=max_len);
        (0..len)
            .map(|_| {
                let u: f64 = r.gen();
                let word = if u < class_rate {
                    format!("c{k}w{}", r.gen_range(0..keywords_per_class))
                } else if u < class_rate + parent_rate && keywords_per_parent > 0 {
                    format!("p{}w{}", tree.parent(k), r.gen_range(0..keywords_per_parent))
                } else {
                    return format!("f{}", r.gen_range(0..filler_words));
                };
                if target && r.gen::<f64>() < target_remap {
                    format!("t{word}")
                } else {
                    word
                }
            })
            .collect()
    };
    let mut source_text = Vec::new();
    let mut target_text = Vec::new();
    for k in 0..tree.num_leaves() {
        let mut r = rng::stream(spec.seed, &format!("synthetic/source/{k}"));
        for _ in 0..spec.source_per_class {
            source_text.push((k, sentence(&mut r, k, false)));
        }
        if tree.shared().is_shared(k) {
            let mut r = rng::stream(spec.seed, &format!("synthetic/target/{k}"));
            for _ in 0..spec.target_per_class {
                target_text.push((k, sentence(&mut r, k, true)));
            }
        }
    }
    let vocabulary = Vocabulary::build(source_text.iter().map(|(_, s)| s.as_slice()), min_freq);
    let encode = |texts: &[(usize, Vec<String>)], domain| {
        Dataset::new(
            texts
                .iter()
                .map(|(k, s)| Example {
                    payload: Payload::Tokens(vocabulary.encode(s)),
                    label: Some(*k),
                    domain,
                })
                .collect(),
        )
    };
    let source = encode(&source_text, Domain::Source);
    let target = encode(&target_text, Domain::Target);
    (source, target, vocabulary)
}
