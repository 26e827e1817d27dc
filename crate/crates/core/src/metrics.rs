//! Classification scores and frozen-feature probes for domain discrepancy
//! and joint adaptability.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamStore, Sgd, Tape, Tensor, Var};
use crate::error::{AidaError, Result};
use crate::nn::Linear;
use crate::rng;

fn check_pairs(pred: &[usize], labels: &[usize], op: &'static str) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(AidaError::dim(op, format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(AidaError::pre(op, "no examples"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    check_pairs(pred, labels, "accuracy")?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Row = true class, column = predicted class.
pub fn confusion_matrix(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    check_pairs(pred, labels, "confusion_matrix")?;
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &y) in pred.iter().zip(labels) {
        if p >= num_classes || y >= num_classes {
            return Err(AidaError::pre(
                "confusion_matrix",
                format!("class index {} outside {num_classes} classes", p.max(y)),
            ));
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// F1 of every class (0 when undefined) and whether it appears among the labels.
pub fn per_class_f1(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<(f64, bool)>> {
    let m = confusion_matrix(pred, labels, num_classes)?;
    Ok((0..num_classes)
        .map(|c| {
            let tp = m[c][c] as f64;
            let support: u64 = m[c].iter().sum();
            let predicted: u64 = m.iter().map(|row| row[c]).sum();
            let denom = support as f64 + predicted as f64;
            let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
            (f1, support > 0)
        })
        .collect())
}

/// Unweighted mean F1 over the classes present in `labels`.
pub fn macro_f1(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let per = per_class_f1(pred, labels, num_classes)?;
    let present: Vec<f64> = per.iter().filter(|(_, p)| *p).map(|(f, _)| *f).collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Fixed probe used by both discrepancy measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Hidden width; 0 restricts the probe to constant predictions.
    pub hidden: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            steps: 500,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
        }
    }
}

pub const MIN_A_DISTANCE_EXAMPLES: usize = 20;
pub const MIN_ADAPTABILITY_TARGET: usize = 10;

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &Tensor) -> Self {
        let (n, d) = x.dims();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let (n, d) = x.dims();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend(x.row(i).iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s));
        }
        Tensor::matrix(n, d, out).expect("same shape")
    }
}

fn total_variance(x: &Tensor) -> f64 {
    let (n, d) = x.dims();
    (0..d)
        .map(|j| {
            let m = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            (0..n).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n as f64
        })
        .sum()
}

fn rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let d = x.cols();
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        out.extend_from_slice(x.row(i));
    }
    Tensor::matrix(idx.len(), d, out).expect("same width")
}

fn stack(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(AidaError::dim("probe", format!("feature widths {} vs {}", a.cols(), b.cols())));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), data)
}

/// `features -> hidden -> classes` ReLU network trained with minibatch SGD.
struct Probe {
    store: ParamStore,
    layers: [Linear; 2],
}

impl Probe {
    fn train(x: &Tensor, y: &[usize], classes: usize, cfg: &ProbeConfig, stream: &str) -> Result<Probe> {
        let mut r = rng::stream(cfg.seed, stream);
        let mut store = ParamStore::new();
        let g = ParamGroup::Classifier;
        let layers = [
            Linear::new(&mut store, &mut r, "probe.0", g, x.cols(), cfg.hidden),
            Linear::new(&mut store, &mut r, "probe.1", g, cfg.hidden, classes),
        ];
        let mut probe = Probe { store, layers };
        let ids: Vec<_> = probe.store.iter().map(|(id, _)| id).collect();
        let opt = Sgd::new(cfg.learning_rate, cfg.momentum);
        let n = x.rows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut cursor = n;
        let b = cfg.batch_size.clamp(1, n);
        for step in 0..cfg.steps {
            if cursor + b > n {
                order.shuffle(&mut r);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + b];
            cursor += b;
            let mut tape = Tape::new();
            let xb = tape.constant(rows(x, idx));
            let p = probe.forward(&mut tape, xb)?;
            let labels: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let loss = tape.cross_entropy(p, &labels, None)?;
            let grads = tape.backward(loss)?;
            probe.store.accumulate(&tape, &grads);
            opt.step(&mut probe.store, &ids, step as u64)?;
        }
        Ok(probe)
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.layers[0].forward(tape, &self.store, x)?;
        let h = tape.relu(h)?;
        let z = self.layers[1].forward(tape, &self.store, h)?;
        tape.softmax(z)
    }

    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = self.forward(&mut tape, xv)?;
        let v = tape.value(p);
        Ok((0..v.rows()).map(|i| v.argmax_row(i)).collect())
    }
}

fn error_rate(pred: &[usize], labels: &[usize]) -> f64 {
    let wrong = pred.iter().zip(labels).filter(|(p, y)| p != y).count();
    wrong as f64 / labels.len().max(1) as f64
}

/// Proxy A-distance `2 (1 - 2 eps)` from the held-out error of a domain probe.
///
/// The larger side is subsampled to the size of the smaller one so chance
/// error is one half; each side is split evenly into probe-training and
/// held-out halves.
pub fn a_distance(source: &Tensor, target: &Tensor, cfg: &ProbeConfig) -> Result<f64> {
    let (ns, nt) = (source.rows(), target.rows());
    if ns < MIN_A_DISTANCE_EXAMPLES || nt < MIN_A_DISTANCE_EXAMPLES {
        return Err(AidaError::pre(
            "a_distance",
            format!("need at least {MIN_A_DISTANCE_EXAMPLES} examples per side, got {ns} and {nt}"),
        ));
    }
    let all = stack(source, target)?;
    if total_variance(&all) <= 1e-24 {
        log::warn!("a_distance: features have zero variance; reporting 0");
        return Ok(0.0);
    }
    let n = ns.min(nt);
    let mut r = rng::stream(cfg.seed, "a_distance/split");
    let mut pick = |total: usize| -> Vec<usize> {
        let mut v = sample(&mut r, total, n).into_vec();
        v.shuffle(&mut r);
        v
    };
    let (si, ti) = (pick(ns), pick(nt));
    let half = n / 2;
    let train_x = stack(&rows(source, &si[..half]), &rows(target, &ti[..half]))?;
    let test_x = stack(&rows(source, &si[half..]), &rows(target, &ti[half..]))?;
    let mut train_y = vec![0; half];
    train_y.extend(vec![1; half]);
    let mut test_y = vec![0; n - half];
    test_y.extend(vec![1; n - half]);

    let z = Standardizer::fit(&train_x);
    let eps = if cfg.hidden == 0 {
        0.5
    } else {
        let probe = Probe::train(&z.apply(&train_x), &train_y, 2, cfg, "a_distance/probe")?;
        error_rate(&probe.predict(&z.apply(&test_x))?, &test_y)
    };
    Ok((2.0 * (1.0 - 2.0 * eps)).clamp(0.0, 2.0))
}

/// Summed held-out source and target error of the best joint hypothesis
/// found on frozen features.
///
/// Each side is split evenly; a probe is trained on both training halves and
/// scored on both held-out halves. The best constant prediction is also a
/// candidate, so a weaker probe can never lower the result.
pub fn adaptability_error(
    source: &Tensor,
    source_labels: &[usize],
    target: &Tensor,
    target_labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if source.rows() != source_labels.len() || target.rows() != target_labels.len() {
        return Err(AidaError::dim("adaptability_error", "features and labels differ in length"));
    }
    if target.rows() < MIN_ADAPTABILITY_TARGET {
        return Err(AidaError::pre(
            "adaptability_error",
            format!(
                "insufficient labeled target data: {} < {MIN_ADAPTABILITY_TARGET}",
                target.rows()
            ),
        ));
    }
    if source.rows() < 2 {
        return Err(AidaError::pre("adaptability_error", "need at least 2 labeled source examples"));
    }
    if let Some(&bad) = source_labels.iter().chain(target_labels).find(|&&y| y >= num_classes) {
        return Err(AidaError::pre("adaptability_error", format!("label {bad} outside {num_classes} classes")));
    }
    let mut r = rng::stream(cfg.seed, "adaptability/split");
    let mut halves = |n: usize| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let test = order.split_off(n / 2);
        (order, test)
    };
    let (s_train, s_test) = halves(source.rows());
    let (t_train, t_test) = halves(target.rows());
    let pick = |labels: &[usize], idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let (ys_test, yt_test) = (pick(source_labels, &s_test), pick(target_labels, &t_test));

    let constant = (0..num_classes)
        .map(|c| {
            let es = ys_test.iter().filter(|&&y| y != c).count() as f64 / ys_test.len() as f64;
            let et = yt_test.iter().filter(|&&y| y != c).count() as f64 / yt_test.len() as f64;
            es + et
        })
        .fold(f64::INFINITY, f64::min);
    if cfg.hidden == 0 {
        return Ok(constant);
    }
    let train_x = stack(&rows(source, &s_train), &rows(target, &t_train))?;
    let mut train_y = pick(source_labels, &s_train);
    train_y.extend(pick(target_labels, &t_train));
    let z = Standardizer::fit(&train_x);
    let probe = Probe::train(&z.apply(&train_x), &train_y, num_classes, cfg, "adaptability/probe")?;
    let es = error_rate(&probe.predict(&z.apply(&rows(source, &s_test)))?, &ys_test);
    let et = error_rate(&probe.predict(&z.apply(&rows(target, &t_test)))?, &yt_test);
    Ok((es + et).min(constant))
}
