#![allow(dead_code)]

use aida_core::autodiff::{ParamId, ParamStore, Tensor};
use aida_core::data::{Dataset, Domain, Example, Payload};
use aida_core::hierarchy::LabelTree;
use aida_core::nn::{DiscriminatorInput, Encoder, EncoderSpec, Linear, Model, ModelSpec, SharedMask};
use aida_core::rng;
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn vector(v: &[f64], label: Option<usize>, domain: Domain) -> Example {
    Example {
        payload: Payload::Vector(v.to_vec()),
        label,
        domain,
    }
}

pub fn mlp_spec(input: usize, hidden: Vec<usize>, output: usize, classes: usize, disc: DiscriminatorInput) -> ModelSpec {
    ModelSpec {
        encoder: EncoderSpec::VectorMlp {
            input_dim: input,
            hidden,
            output_dim: output,
        },
        num_classes: classes,
        discriminator_hidden: 4,
        discriminator_input: disc,
    }
}

pub fn model(spec: ModelSpec, mask: &SharedMask, seed: u64) -> Model {
    Model::new(spec, mask.clone(), &mut rng::seeded(seed)).unwrap()
}

/// Gaussian blobs: class `k` centred at `centers[k]`, unit-free `spread`.
pub fn blobs(centers: &[Vec<f64>], per_class: usize, spread: f64, domain: Domain, labeled: bool, seed: u64) -> Dataset {
    let mut r = rng::seeded(seed);
    let mut out = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let v: Vec<f64> = c
                .iter()
                .map(|m| m + spread * r.sample::<f64, _>(StandardNormal))
                .collect();
            out.push(vector(&v, labeled.then_some(k), domain));
        }
    }
    Dataset::new(out)
}

// Reference forward pass written against plain row-major buffers.

fn value(store: &ParamStore, id: ParamId) -> &Tensor {
    &store.get(id).value
}

pub fn matmul(a: &[Vec<f64>], w: &Tensor) -> Vec<Vec<f64>> {
    let (n, m) = w.dims();
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), n);
            (0..m).map(|j| (0..n).map(|i| row[i] * w.get(i, j)).sum()).collect()
        })
        .collect()
}

pub fn linear(store: &ParamStore, layer: &Linear, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let b = value(store, layer.bias);
    matmul(x, value(store, layer.weight))
        .into_iter()
        .map(|row| row.iter().enumerate().map(|(j, v)| v + b.get(0, j)).collect())
        .collect()
}

pub fn relu(x: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    x.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn features(model: &Model, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Encoder::Mlp { layers } = &model.encoder else {
        panic!("reference forward covers the vector encoder only")
    };
    let mut h = xs.to_vec();
    for (i, l) in layers.iter().enumerate() {
        h = linear(&model.store, l, &h);
        if i + 1 < layers.len() {
            h = relu(h);
        }
    }
    h
}

pub fn scores(model: &Model, f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = relu(linear(&model.store, &model.head.hidden, f));
    let w = value(&model.store, model.head.class_weight).transpose();
    let b = value(&model.store, model.head.class_bias);
    matmul(&h, &w)
        .into_iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| v + b.get(0, j)).collect())
        .collect()
}

/// Shared-class probabilities: non-shared classes get exactly zero.
pub fn shared_probs(z: &[f64], mask: &SharedMask) -> Vec<f64> {
    let idx = mask.shared_indices();
    let p = softmax_row(&idx.iter().map(|&k| z[k]).collect::<Vec<_>>());
    let mut out = vec![0.0; z.len()];
    for (i, &k) in idx.iter().enumerate() {
        out[k] = p[i];
    }
    out
}

pub fn p_source(model: &Model, f: &[Vec<f64>], g: &[Vec<f64>]) -> Vec<f64> {
    let shared = model.mask.shared_indices();
    let x: Vec<Vec<f64>> = match model.spec.discriminator_input {
        DiscriminatorInput::Features => f.to_vec(),
        DiscriminatorInput::Conditioned => f
            .iter()
            .zip(g)
            .map(|(fr, gr)| fr.iter().flat_map(|a| shared.iter().map(move |&k| a * gr[k])).collect())
            .collect(),
    };
    let layers = &model.discriminator.layers;
    let mut h = x;
    for (i, l) in layers.iter().enumerate() {
        h = linear(&model.store, l, &h);
        if i + 1 < layers.len() {
            h = relu(h);
        }
    }
    h.iter().map(|r| softmax_row(r)[1]).collect()
}

pub fn rows_of(examples: &[&Example]) -> Vec<Vec<f64>> {
    examples
        .iter()
        .map(|e| match &e.payload {
            Payload::Vector(v) => v.clone(),
            Payload::Tokens(_) => panic!("vector payload expected"),
        })
        .collect()
}

pub fn mean_nll(probs: &[Vec<f64>], labels: &[usize], weights: Option<&[f64]>) -> f64 {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (p, &y))| weights.map_or(1.0, |w| w[i]) * -p[y].max(1e-30).ln())
        .sum::<f64>()
        / n
}

/// `J_y` and `J_d` of the adversarial step, recomputed without a tape.
pub fn sdan_terms(model: &Model, source: &[&Example], target: &[&Example]) -> (f64, f64) {
    let labels: Vec<usize> = source.iter().map(|e| e.label.unwrap()).collect();
    let fs = features(model, &rows_of(source));
    let gs: Vec<Vec<f64>> = scores(model, &fs).iter().map(|z| shared_probs(z, &model.mask)).collect();
    let jy = mean_nll(&gs, &labels, None);
    if target.is_empty() {
        return (jy, 0.0);
    }
    let ft = features(model, &rows_of(target));
    let gt: Vec<Vec<f64>> = scores(model, &ft).iter().map(|z| shared_probs(z, &model.mask)).collect();
    let ps = p_source(model, &fs, &gs);
    let pt = p_source(model, &ft, &gt);
    let ls = ps.iter().map(|p| -p.max(1e-30).ln()).sum::<f64>() / ps.len() as f64;
    let lt = pt.iter().map(|p| -(1.0 - p).max(1e-30).ln()).sum::<f64>() / pt.len() as f64;
    (jy, ls + lt)
}

/// Weighted all-class cross-entropy of the hierarchy step, without a tape.
pub fn weighted_ce(model: &Model, examples: &[&Example], weights: &[f64]) -> f64 {
    let labels: Vec<usize> = examples.iter().map(|e| e.label.unwrap()).collect();
    let f = features(model, &rows_of(examples));
    let p: Vec<Vec<f64>> = scores(model, &f).iter().map(|z| softmax_row(z)).collect();
    mean_nll(&p, &labels, Some(weights))
}

/// `1/2 * sum_k ||theta_k - mean(children of parent(k))||^2`, parents re-derived here.
pub fn penalty_against(rows: &Tensor, parents: &Tensor, tree: &LabelTree) -> f64 {
    let mut h = 0.0;
    for k in 0..tree.num_leaves() {
        let p = tree.parent(k);
        for j in 0..rows.cols() {
            let d = rows.get(k, j) - parents.get(p, j);
            h += 0.5 * d * d;
        }
    }
    h
}

/// Per-parent mean of class rows computed by explicit child lists.
pub fn parent_means(rows: &Tensor, tree: &LabelTree) -> Tensor {
    let d = rows.cols();
    let mut out = Vec::new();
    for p in 0..tree.num_parents() {
        let kids = tree.children(p);
        for j in 0..d {
            out.push(kids.iter().map(|&k| rows.get(k, j)).sum::<f64>() / kids.len() as f64);
        }
    }
    Tensor::matrix(tree.num_parents(), d, out).unwrap()
}

pub fn all_values(store: &ParamStore) -> Vec<(String, Vec<f64>)> {
    store
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.data().to_vec()))
        .collect()
}
