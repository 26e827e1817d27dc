//! Alternating optimization: a conditional adversarial step on the shared
//! classes followed by a reward-weighted, hierarchy-regularized step over all
//! source classes. Baselines reuse the same loop with terms switched off.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamId, Sgd, Tape};
use crate::data::{Dataset, Example, Payload, Vocabulary};
use crate::error::{AidaError, Result};
use crate::hierarchy::{estimate_parents, hierarchy_penalty, LabelTree, ParentParams};
use crate::metrics;
use crate::nn::{mask_filter, DiscriminatorInput, Model, ModelSpec};
use crate::rewards::{self, RewardStats, Summary, Temperature};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    #[default]
    Aida,
    Cdan,
    Dann,
    SourceOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Aida, Mode::Cdan, Mode::Dann, Mode::SourceOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Aida => "aida",
            Mode::Cdan => "cdan",
            Mode::Dann => "dann",
            Mode::SourceOnly => "source-only",
        }
    }

    pub fn adversarial(self) -> bool {
        self != Mode::SourceOnly
    }

    pub fn hierarchy_step(self) -> bool {
        self == Mode::Aida
    }

    pub fn discriminator_input(self) -> DiscriminatorInput {
        match self {
            Mode::Dann => DiscriminatorInput::Features,
            _ => DiscriminatorInput::Conditioned,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = AidaError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AidaError::Validation {
                field: "mode".into(),
                detail: format!("expected one of aida, cdan, dann, source-only; got `{s}`"),
            })
    }
}

impl TryFrom<String> for Mode {
    type Error = AidaError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> Self {
        m.as_str().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AidaConfig {
    pub mode: Mode,
    /// Adversarial weight.
    pub lambda: f64,
    /// Weight of the reward-weighted all-class loss.
    pub lambda2: f64,
    /// Weight of the hierarchy penalty.
    pub lambda3: f64,
    /// Reward scale; `None` means `batch_size^2`.
    pub alpha: Option<f64>,
    pub temperature: Temperature,
    pub self_inclusion: bool,
    pub use_rewards: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Evaluate and record history every this many iterations; 0 records only the end.
    pub eval_every: u64,
    /// Ramp the adversarial weight as `lambda * (2 / (1 + exp(-10 p)) - 1)`.
    pub adversarial_warmup: bool,
}

impl Default for AidaConfig {
    fn default() -> Self {
        AidaConfig {
            mode: Mode::Aida,
            lambda: 1.0,
            lambda2: 0.4,
            lambda3: 0.9,
            alpha: None,
            temperature: Temperature::Median,
            self_inclusion: true,
            use_rewards: true,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            iterations: 1500,
            seed: 0,
            eval_every: 100,
            adversarial_warmup: false,
        }
    }
}

impl AidaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: &str| {
            Err(AidaError::Validation {
                field: field.into(),
                detail: detail.into(),
            })
        };
        for (field, v) in [("lambda", self.lambda), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(field, "must be finite and non-negative");
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad("alpha", "must be positive");
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| rewards::default_alpha(self.batch_size))
    }

    pub fn optimizer(&self) -> Sgd {
        Sgd::new(self.learning_rate, self.momentum)
    }

    /// Adversarial coefficient in effect at `iteration`.
    pub fn lambda_at(&self, iteration: u64) -> f64 {
        if !self.adversarial_warmup {
            return self.lambda;
        }
        let p = iteration as f64 / self.iterations as f64;
        self.lambda * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
    }
}

/// Loss terms of one iteration. `total = shared_ce - lambda * domain +
/// lambda2 * weighted_ce + lambda3 * hierarchy`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub shared_ce: f64,
    pub domain: f64,
    pub weighted_ce: f64,
    pub hierarchy: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn combine(sdan: &SdanLosses, hpn: Option<&HpnLosses>, config: &AidaConfig, lambda: f64) -> LossTerms {
        let (weighted_ce, hierarchy) = hpn.map_or((0.0, 0.0), |h| (h.weighted_ce, h.hierarchy));
        let mut t = LossTerms {
            shared_ce: sdan.shared_ce,
            domain: sdan.domain,
            weighted_ce,
            hierarchy,
            total: 0.0,
        };
        t.total = t.shared_ce - lambda * t.domain;
        if hpn.is_some() {
            t.total += config.lambda2 * t.weighted_ce + config.lambda3 * t.hierarchy;
        }
        t
    }

    fn scaled_sum(items: &[LossTerms]) -> LossTerms {
        let n = items.len().max(1) as f64;
        let mut m = LossTerms::default();
        for t in items {
            m.shared_ce += t.shared_ce / n;
            m.domain += t.domain / n;
            m.weighted_ce += t.weighted_ce / n;
            m.hierarchy += t.hierarchy / n;
            m.total += t.total / n;
        }
        m
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdanLosses {
    pub shared_ce: f64,
    /// Source-mean plus target-mean domain cross-entropy; zero without an adversary.
    pub domain: f64,
    /// Fraction of the batch the discriminator assigns to the right domain.
    pub discriminator_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HpnLosses {
    pub weighted_ce: f64,
    pub hierarchy: f64,
    pub rewards: Vec<f64>,
    pub reward_stats: RewardStats,
    pub reward_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: u64,
    /// Mean loss terms since the previous entry.
    pub losses: LossTerms,
    pub rewards: Option<RewardStats>,
    pub discriminator_accuracy: f64,
    pub target_accuracy: Option<f64>,
    pub target_macro_f1: Option<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: u64,
    pub model: Model,
    pub parents: ParentParams,
    pub history: Vec<HistoryEntry>,
    pub sdan_rng: Rng,
    pub hpn_rng: Rng,
    #[serde(default)]
    pending: Vec<LossTerms>,
    #[serde(default)]
    pending_disc: Vec<f64>,
}

/// Training inputs. `target` is unlabeled; `eval` is the labeled held-out target split.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub shared_source: &'a Dataset,
    pub all_source: &'a Dataset,
    pub target: &'a Dataset,
    pub eval: Option<&'a Dataset>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Write a checkpoint here every `checkpoint_every` iterations.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Stop after this many iterations (for interrupted-run tests), leaving the state resumable.
    pub stop_after: Option<u64>,
    pub vocabulary: Option<Vocabulary>,
    /// Free-form experiment description embedded in checkpoints.
    pub experiment: Option<serde_json::Value>,
}

/// Batch indices drawn for one iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batches {
    pub shared: Vec<usize>,
    pub target: Vec<usize>,
    pub all: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub batches: Batches,
    pub sdan: SdanLosses,
    pub hpn: Option<HpnLosses>,
    pub losses: LossTerms,
}

/// Draws batches: shared source class-balanced, target and all-source uniform.
#[derive(Clone, Debug)]
pub struct Sampler {
    shared_by_class: Vec<Vec<usize>>,
    target_len: usize,
    all_len: usize,
}

impl Sampler {
    pub fn new(data: &TrainData<'_>) -> Result<Self> {
        let shared_by_class: Vec<Vec<usize>> = data.shared_source.by_class().into_values().collect();
        if shared_by_class.is_empty() {
            return Err(AidaError::pre("sdan_step", "empty shared source set"));
        }
        if data.target.is_empty() {
            return Err(AidaError::pre("sdan_step", "empty target set"));
        }
        if data.all_source.is_empty() {
            return Err(AidaError::pre("hpn_step", "empty source set"));
        }
        Ok(Sampler {
            shared_by_class,
            target_len: data.target.len(),
            all_len: data.all_source.len(),
        })
    }

    pub fn shared(&self, rng: &mut Rng, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                let class = &self.shared_by_class[rng.gen_range(0..self.shared_by_class.len())];
                class[rng.gen_range(0..class.len())]
            })
            .collect()
    }

    pub fn target(&self, rng: &mut Rng, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.target_len)).collect()
    }

    pub fn all(&self, rng: &mut Rng, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.all_len)).collect()
    }
}

fn pick<'a>(data: &'a Dataset, idx: &[usize]) -> Vec<&'a Example> {
    idx.iter().map(|&i| &data.examples[i]).collect()
}

fn labels_of(examples: &[&Example], op: &'static str) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|e| e.label.ok_or_else(|| AidaError::pre(op, "unlabeled source example")))
        .collect()
}

fn trainable(model: &Model, groups: &[ParamGroup]) -> Vec<ParamId> {
    model.store.ids_in(groups)
}

/// One gradient step on encoder, classifier and discriminator over shared
/// source and unlabeled target examples.
///
/// The discriminator input passes through a gradient reversal of coefficient
/// `lambda`, so a single backward pass lets the discriminator descend the
/// domain loss while the encoder ascends it.
pub fn sdan_step(
    model: &mut Model,
    source: &[&Example],
    target: &[&Example],
    mode: Mode,
    lambda: f64,
    optimizer: &Sgd,
    iteration: u64,
) -> Result<SdanLosses> {
    if source.is_empty() || (mode.adversarial() && target.is_empty()) {
        return Err(AidaError::pre("sdan_step", "empty batch"));
    }
    let labels = labels_of(source, "sdan_step")?;
    if let Some(&y) = labels.iter().find(|&&y| !model.mask.is_shared(y)) {
        return Err(AidaError::pre("sdan_step", format!("label {y} is not a shared class")));
    }
    let bs = source.len();
    let mut payloads: Vec<&Payload> = source.iter().map(|e| &e.payload).collect();
    if mode.adversarial() {
        payloads.extend(target.iter().map(|e| &e.payload));
    }
    let n = payloads.len();

    let mut tape = Tape::new();
    let f = model.encode(&mut tape, &payloads)?;
    let z = model.head.classify_all(&mut tape, &model.store, f)?;
    let masked = mask_filter(&mut tape, z, &model.mask)?;
    let g = tape.softmax(masked)?;
    let gs = if mode.adversarial() { tape.slice_rows(g, 0, bs)? } else { g };
    let shared_ce = tape.cross_entropy(gs, &labels, None)?;

    let mut out = SdanLosses {
        shared_ce: tape.value(shared_ce).item(),
        ..SdanLosses::default()
    };
    let mut loss = shared_ce;
    let groups: &[ParamGroup] = if mode.adversarial() {
        let x = model.discriminator_input(&mut tape, f, g)?;
        let reversed = tape.grad_reverse(x, lambda)?;
        let p = model.discriminator.probabilities(&mut tape, &model.store, reversed)?;
        let ps = tape.slice_rows(p, 0, bs)?;
        let pt = tape.slice_rows(p, bs, n)?;
        let ls = tape.cross_entropy(ps, &vec![1; bs], None)?;
        let lt = tape.cross_entropy(pt, &vec![0; n - bs], None)?;
        let domain = tape.add(ls, lt)?;
        out.domain = tape.value(domain).item();
        let pv = tape.value(p);
        let correct = (0..n).filter(|&i| (pv.get(i, 1) > 0.5) == (i < bs)).count();
        out.discriminator_accuracy = correct as f64 / n as f64;
        loss = tape.add(loss, domain)?;
        &[ParamGroup::Encoder, ParamGroup::Classifier, ParamGroup::Discriminator]
    } else {
        &[ParamGroup::Encoder, ParamGroup::Classifier]
    };

    let grads = tape.backward(loss)?;
    model.store.accumulate(&tape, &grads);
    let ids = trainable(model, groups);
    optimizer.step(&mut model.store, &ids, iteration)?;
    Ok(out)
}

/// Rewards for an all-source batch from the frozen discriminator.
pub fn batch_rewards(
    model: &Model,
    tree: &LabelTree,
    examples: &[&Example],
    config: &AidaConfig,
) -> Result<(Vec<f64>, RewardStats, bool)> {
    let labels = labels_of(examples, "hpn_step")?;
    let payloads: Vec<&Payload> = examples.iter().map(|e| &e.payload).collect();
    let class = rewards::class_reward_batch(tree, &labels, config.temperature)?;

    let mut tape = Tape::new();
    let f = model.encode(&mut tape, &payloads)?;
    let z = model.head.classify_all(&mut tape, &model.store, f)?;
    let masked = mask_filter(&mut tape, z, &model.mask)?;
    let g = tape.softmax(masked)?;
    let x = model.discriminator_input(&mut tape, f, g)?;
    let p_source = model.discriminator.discriminate(&mut tape, &model.store, x)?;
    let example = rewards::example_reward_from_source_probability(&p_source);
    let example_n = rewards::normalize_example_rewards(&example)?;
    let combined = rewards::final_reward(&class.weights, &example_n, config.alpha())?;
    let stats = RewardStats {
        class: Summary::of(&class.weights),
        example: Summary::of(&example),
        combined: Summary::of(&combined),
    };
    Ok((combined, stats, class.fallback))
}

/// One gradient step on encoder and classifier minimizing
/// `lambda2 * mean(R_i * CE_i) + lambda3 * H`, then the parent refresh.
pub fn hpn_step(
    model: &mut Model,
    parents: &mut ParentParams,
    tree: &LabelTree,
    examples: &[&Example],
    config: &AidaConfig,
    iteration: u64,
) -> Result<HpnLosses> {
    if examples.is_empty() {
        return Err(AidaError::pre("hpn_step", "empty batch"));
    }
    let labels = labels_of(examples, "hpn_step")?;
    let (weights, reward_stats, reward_fallback) = if config.use_rewards {
        batch_rewards(model, tree, examples, config)?
    } else {
        (vec![1.0; examples.len()], RewardStats::default(), false)
    };

    let payloads: Vec<&Payload> = examples.iter().map(|e| &e.payload).collect();
    let mut tape = Tape::new();
    let f = model.encode(&mut tape, &payloads)?;
    let z = model.head.classify_all(&mut tape, &model.store, f)?;
    let probs = tape.softmax(z)?;
    let weighted = tape.cross_entropy(probs, &labels, Some(&weights))?;
    let rows = tape.param(&model.store, model.head.class_weight);
    let penalty = hierarchy_penalty(&mut tape, rows, parents, tree)?;
    let out = HpnLosses {
        weighted_ce: tape.value(weighted).item(),
        hierarchy: tape.value(penalty).item(),
        rewards: weights,
        reward_stats,
        reward_fallback,
    };

    if config.lambda2 > 0.0 || config.lambda3 > 0.0 {
        let a = tape.scale(weighted, config.lambda2)?;
        let b = tape.scale(penalty, config.lambda3)?;
        let loss = tape.add(a, b)?;
        let grads = tape.backward(loss)?;
        model.store.accumulate(&tape, &grads);
        let ids = trainable(model, &[ParamGroup::Encoder, ParamGroup::Classifier]);
        config.optimizer().step(&mut model.store, &ids, iteration)?;
    }
    *parents = estimate_parents(model.class_rows(), tree)?;
    Ok(out)
}

impl TrainState {
    pub fn new(config: &AidaConfig, spec: &ModelSpec, tree: &LabelTree) -> Result<Self> {
        config.validate()?;
        let mut spec = spec.clone();
        spec.discriminator_input = config.mode.discriminator_input();
        if spec.num_classes != tree.num_leaves() {
            return Err(AidaError::dim(
                "train",
                format!("model has {} classes, tree has {} leaves", spec.num_classes, tree.num_leaves()),
            ));
        }
        let model = Model::new(spec, tree.shared().clone(), &mut rng::stream(config.seed, "init"))?;
        let parents = estimate_parents(model.class_rows(), tree)?;
        Ok(TrainState {
            iteration: 0,
            model,
            parents,
            history: Vec::new(),
            sdan_rng: rng::stream(config.seed, "sdan"),
            hpn_rng: rng::stream(config.seed, "hpn"),
            pending: Vec::new(),
            pending_disc: Vec::new(),
        })
    }

    /// Runs one outer iteration: the adversarial step, then (in aida mode) the hierarchy step.
    pub fn step(&mut self, config: &AidaConfig, data: &TrainData<'_>, sampler: &Sampler, tree: &LabelTree) -> Result<StepReport> {
        let b = config.batch_size;
        let mut batches = Batches {
            shared: sampler.shared(&mut self.sdan_rng, b),
            ..Batches::default()
        };
        if config.mode.adversarial() {
            batches.target = sampler.target(&mut self.sdan_rng, b);
        }
        let lambda = config.lambda_at(self.iteration);
        let sdan = sdan_step(
            &mut self.model,
            &pick(data.shared_source, &batches.shared),
            &pick(data.target, &batches.target),
            config.mode,
            lambda,
            &config.optimizer(),
            self.iteration,
        )?;
        let hpn = if config.mode.hierarchy_step() {
            batches.all = sampler.all(&mut self.hpn_rng, b);
            Some(hpn_step(
                &mut self.model,
                &mut self.parents,
                tree,
                &pick(data.all_source, &batches.all),
                config,
                self.iteration,
            )?)
        } else {
            None
        };
        let losses = LossTerms::combine(&sdan, hpn.as_ref(), config, lambda);
        if !losses.total.is_finite() {
            return Err(AidaError::Divergence {
                iteration: self.iteration,
                detail: "non-finite loss".into(),
                last_good: None,
            });
        }
        self.iteration += 1;
        Ok(StepReport {
            batches,
            sdan,
            hpn,
            losses,
        })
    }

    fn record(&mut self, data: &TrainData<'_>, rewards: Option<RewardStats>) -> Result<()> {
        let (target_accuracy, target_macro_f1) = match data.eval {
            Some(eval) if !eval.is_empty() => {
                let labels = eval.labels()?;
                let pred = self.model.predict_shared(&eval.payloads())?;
                (
                    Some(metrics::accuracy(&pred, &labels)?),
                    Some(metrics::macro_f1(&pred, &labels, self.model.spec.num_classes)?),
                )
            }
            _ => (None, None),
        };
        let n = self.pending_disc.len().max(1) as f64;
        self.history.push(HistoryEntry {
            iteration: self.iteration,
            losses: LossTerms::scaled_sum(&self.pending),
            rewards,
            discriminator_accuracy: self.pending_disc.iter().sum::<f64>() / n,
            target_accuracy,
            target_macro_f1,
        });
        self.pending.clear();
        self.pending_disc.clear();
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "aida-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: AidaConfig,
    pub tree_fingerprint: String,
    #[serde(default)]
    pub vocabulary: Option<Vocabulary>,
    #[serde(default)]
    pub experiment: Option<serde_json::Value>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_slice(&fs::read(path)?)
            .map_err(|e| AidaError::Checkpoint(format!("{}: {e}", path.display())))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(AidaError::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                c.format, c.version
            )));
        }
        Ok(c)
    }

    /// Fails if the checkpoint was written for a different label tree.
    pub fn check_tree(&self, tree: &LabelTree) -> Result<()> {
        if self.tree_fingerprint != tree.fingerprint() {
            return Err(AidaError::Checkpoint(format!(
                "tree fingerprint {} does not match {}",
                self.tree_fingerprint,
                tree.fingerprint()
            )));
        }
        Ok(())
    }
}

fn is_numeric_failure(e: &AidaError) -> bool {
    matches!(e, AidaError::DegenerateInput { .. } | AidaError::Divergence { .. })
}

/// Trains from scratch.
pub fn train(config: &AidaConfig, spec: &ModelSpec, data: &TrainData<'_>, tree: &LabelTree, options: &TrainOptions) -> Result<TrainState> {
    let state = TrainState::new(config, spec, tree)?;
    resume(state, config, data, tree, options)
}

/// Continues `state` until `config.iterations` (or `options.stop_after`).
pub fn resume(
    mut state: TrainState,
    config: &AidaConfig,
    data: &TrainData<'_>,
    tree: &LabelTree,
    options: &TrainOptions,
) -> Result<TrainState> {
    config.validate()?;
    let sampler = Sampler::new(data)?;
    let mut last_good: Option<PathBuf> = None;
    let mut last_rewards = None;
    let stop = options.stop_after.map_or(config.iterations, |s| s.min(config.iterations));
    while state.iteration < stop {
        let report = state.step(config, data, &sampler, tree).map_err(|e| match e {
            e if is_numeric_failure(&e) => AidaError::Divergence {
                iteration: state.iteration,
                detail: e.to_string(),
                last_good: last_good.clone(),
            },
            e => e,
        })?;
        if let Some(h) = &report.hpn {
            last_rewards = Some(h.reward_stats);
        }
        state.pending.push(report.losses);
        state.pending_disc.push(report.sdan.discriminator_accuracy);
        let it = state.iteration;
        if it.is_multiple_of(100) || it == stop {
            let l = &report.losses;
            log::info!(
                "{} iter {it}/{}: total {:.4} shared_ce {:.4} domain {:.4} weighted_ce {:.4} hierarchy {:.4}",
                config.mode,
                config.iterations,
                l.total,
                l.shared_ce,
                l.domain,
                l.weighted_ce,
                l.hierarchy
            );
        }
        if (config.eval_every > 0 && it.is_multiple_of(config.eval_every)) || it == config.iterations {
            state.record(data, last_rewards)?;
        }
        if let Some(dir) = &options.checkpoint_dir {
            if options.checkpoint_every > 0 && (it.is_multiple_of(options.checkpoint_every) || it == stop) {
                fs::create_dir_all(dir)?;
                let path = dir.join("checkpoint.json");
                checkpoint(&state, config, tree, options).save(&path)?;
                last_good = Some(path);
            }
        }
    }
    Ok(state)
}

pub fn checkpoint(state: &TrainState, config: &AidaConfig, tree: &LabelTree, options: &TrainOptions) -> Checkpoint {
    Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        tree_fingerprint: tree.fingerprint(),
        vocabulary: options.vocabulary.clone(),
        experiment: options.experiment.clone(),
        state: state.clone(),
    }
}

