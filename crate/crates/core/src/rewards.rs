//! Sparseness reward shaping for the all-classes source step.
//!
//! The class reward favours examples whose shared siblings are rare, the
//! example reward favours examples the discriminator finds target-like, and
//! the final reward is their scaled product. Rewards are constant weights on
//! the per-example loss; no gradient flows through them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, ParamStore, Tape, Tensor};
use crate::error::{AidaError, Result};
use crate::hierarchy::{LabelTree, SparseSize};
use crate::nn::DomainDiscriminator;

/// How sparse sizes are scaled before exponentiation in the class reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
#[derive(Default)]
pub enum Temperature {
    /// `tau = 1 / median` of the finite sparse sizes in the batch.
    #[default]
    Median,
    /// `tau = 1`, i.e. `exp(-s)` on raw counts.
    Raw,
    Fixed(f64),
}


impl FromStr for Temperature {
    type Err = AidaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "median" => Ok(Temperature::Median),
            "raw" => Ok(Temperature::Raw),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|t| *t > 0.0 && t.is_finite())
                .map(Temperature::Fixed)
                .ok_or_else(|| AidaError::Validation {
                    field: "temperature".into(),
                    detail: format!("expected `median`, `raw` or a positive number, got `{other}`"),
                }),
        }
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Temperature::Median => write!(f, "median"),
            Temperature::Raw => write!(f, "raw"),
            Temperature::Fixed(t) => write!(f, "{t}"),
        }
    }
}

impl TryFrom<String> for Temperature {
    type Error = AidaError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Temperature> for String {
    fn from(t: Temperature) -> Self {
        t.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRewards {
    pub weights: Vec<f64>,
    pub tau: f64,
    /// Every label in the batch lacked shared siblings; weights are uniform.
    pub fallback: bool,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `r1(y_i) = exp(-s(y_i) tau) / sum_batch exp(-s(y) tau)`.
pub fn class_reward_batch(tree: &LabelTree, labels: &[usize], temperature: Temperature) -> Result<ClassRewards> {
    if labels.is_empty() {
        return Err(AidaError::pre("class_reward_batch", "empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= tree.num_leaves()) {
        return Err(AidaError::pre("class_reward_batch", format!("label {bad} out of range")));
    }
    let sizes: Vec<SparseSize> = labels.iter().map(|&y| tree.sparse_size(y)).collect();
    let mut finite: Vec<f64> = sizes.iter().filter_map(|s| s.finite()).map(|n| n as f64).collect();
    let b = labels.len();
    if finite.is_empty() {
        log::warn!("class reward: no label in the batch has a shared sibling; using uniform weights");
        return Ok(ClassRewards {
            weights: vec![1.0 / b as f64; b],
            tau: f64::NAN,
            fallback: true,
        });
    }
    let tau = match temperature {
        Temperature::Raw => 1.0,
        Temperature::Fixed(t) => t,
        Temperature::Median => {
            let m = median(&mut finite);
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        }
    };
    // shift by the smallest size so raw counts cannot underflow every term
    let smallest = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let numer: Vec<f64> = sizes
        .iter()
        .map(|s| match s {
            SparseSize::Finite(n) => (-(*n as f64 - smallest) * tau).exp(),
            SparseSize::Infinite => 0.0,
        })
        .collect();
    let total: f64 = numer.iter().sum();
    Ok(ClassRewards {
        weights: numer.iter().map(|v| v / total).collect(),
        tau,
        fallback: false,
    })
}

/// `r2(x_i) = 1 - p_source(x_i)` from a frozen discriminator.
pub fn example_reward(disc: &DomainDiscriminator, store: &ParamStore, conditioned: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(conditioned.clone());
    let p = disc.discriminate(&mut tape, store, x)?;
    Ok(example_reward_from_source_probability(&p))
}

pub fn example_reward_from_source_probability(p_source: &[f64]) -> Vec<f64> {
    p_source.iter().map(|p| (1.0 - p).clamp(0.0, 1.0)).collect()
}

/// Softmax of the example rewards across the mini-batch.
pub fn normalize_example_rewards(r2: &[f64]) -> Result<Vec<f64>> {
    if r2.is_empty() {
        return Err(AidaError::pre("normalize_example_rewards", "empty batch"));
    }
    softmax(r2)
}

/// `R_i = alpha * r1_i * r2n_i`.
pub fn final_reward(r1: &[f64], r2n: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if r1.len() != r2n.len() {
        return Err(AidaError::dim("final_reward", format!("{} vs {}", r1.len(), r2n.len())));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(AidaError::pre("final_reward", format!("alpha {alpha} must be positive")));
    }
    Ok(r1.iter().zip(r2n).map(|(a, b)| alpha * a * b).collect())
}

/// Default `alpha = B^2`, so uniform class and example rewards give weight 1.
pub fn default_alpha(batch_size: usize) -> f64 {
    (batch_size * batch_size) as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        Summary {
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-step reward statistics for the metrics stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub class: Summary,
    pub example: Summary,
    pub combined: Summary,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    /// Parent 0 = {0 shared, 1}, parent 1 = {2, 3} with nothing shared,
    /// parent 2 = {4 shared, 5}.
    fn tree(counts: Vec<u64>) -> LabelTree {
        LabelTree::uniform(3, 2, &[vec![true, false], vec![false, false], vec![true, false]])
            .unwrap()
            .with_counts(counts)
            .unwrap()
    }

    #[test]
    fn equal_sizes_give_uniform() {
        let t = tree(vec![10, 500, 500, 500, 10, 500]);
        let r = class_reward_batch(&t, &[0, 1, 4, 5], Temperature::Median).unwrap();
        close(&r.weights, &[0.25; 4], 1e-15);
    }

    #[test]
    fn infinite_size_gets_zero() {
        // s = [0, inf] at tau = 1
        let t = tree(vec![0, 500, 500, 500, 10, 500]);
        let r = class_reward_batch(&t, &[1, 2], Temperature::Raw).unwrap();
        close(&r.weights, &[1.0, 0.0], 0.0);
    }

    #[test]
    fn all_infinite_falls_back_to_uniform() {
        let t = tree(vec![10, 500, 500, 500, 10, 500]);
        let r = class_reward_batch(&t, &[2, 3, 3], Temperature::Median).unwrap();
        assert!(r.fallback);
        close(&r.weights, &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn raw_counts_do_not_underflow() {
        let t = tree(vec![1000, 5000, 500, 500, 1200, 500]);
        let r = class_reward_batch(&t, &[0, 1, 4, 5], Temperature::Raw).unwrap();
        assert!(r.weights.iter().all(|w| w.is_finite()));
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.weights[0] > 0.49 && r.weights[2] < 1e-80);
    }

    #[test]
    fn median_temperature() {
        let t = tree(vec![10, 500, 500, 500, 30, 500]);
        let r = class_reward_batch(&t, &[0, 4, 4], Temperature::Median).unwrap();
        assert_eq!(r.tau, 1.0 / 30.0);
        let e = [(-10.0f64 / 30.0).exp(), (-1.0f64).exp(), (-1.0f64).exp()];
        let s: f64 = e.iter().sum();
        close(&r.weights, &[e[0] / s, e[1] / s, e[2] / s], 1e-15);
    }

    #[test]
    fn example_reward_examples() {
        close(&example_reward_from_source_probability(&[1.0, 0.0, 0.25]), &[0.0, 1.0, 0.75], 0.0);

        let mut store = ParamStore::new();
        let disc = DomainDiscriminator::new(&mut store, &mut crate::rng::seeded(1), 3, 4);
        for l in &disc.layers {
            store.get_mut(l.weight).value.fill(0.0);
        }
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 5.0]]).unwrap();
        close(&example_reward(&disc, &store, &x).unwrap(), &[0.5, 0.5], 0.0);
    }

    #[test]
    fn normalized_example_rewards() {
        close(&normalize_example_rewards(&[0.3, 0.3, 0.3]).unwrap(), &[1.0 / 3.0; 3], 1e-15);
        let c = 0.2;
        close(
            &normalize_example_rewards(&[2f64.ln() + c, c]).unwrap(),
            &[2.0 / 3.0, 1.0 / 3.0],
            1e-15,
        );
    }

    #[test]
    fn final_reward_examples() {
        let b = 4;
        let r = final_reward(&[0.25; 4], &[0.25; 4], default_alpha(b)).unwrap();
        close(&r, &[1.0; 4], 0.0);
        let r = final_reward(&[0.5, 0.0], &[0.0, 0.5], 3.0).unwrap();
        close(&r, &[0.0, 0.0], 0.0);
        let a = final_reward(&[0.2, 0.8], &[0.6, 0.4], 2.0).unwrap();
        let b = final_reward(&[0.2, 0.8], &[0.6, 0.4], 6.0).unwrap();
        close(&b, &[3.0 * a[0], 3.0 * a[1]], 1e-15);
        assert!(final_reward(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn temperature_parses() {
        assert_eq!("median".parse::<Temperature>().unwrap(), Temperature::Median);
        assert_eq!("raw".parse::<Temperature>().unwrap(), Temperature::Raw);
        assert_eq!("0.5".parse::<Temperature>().unwrap(), Temperature::Fixed(0.5));
        assert!("-1".parse::<Temperature>().is_err());
    }
}
