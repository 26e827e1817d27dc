//! Experiment configuration, single runs, multi-seed matrices and the
//! report/CSV files they produce.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::data::{
    generate_synthetic, split_holdout, split_shared_nonshared, subsample_imbalanced, Dataset, PayloadMode,
    SyntheticSpec, Vocabulary,
};
use crate::error::{AidaError, Result};
use crate::hierarchy::LabelTree;
use crate::metrics::{self, ProbeConfig};
use crate::nn::{EncoderSpec, ModelSpec, DEFAULT_MAX_LEN};
use crate::rng;
use crate::trainer::{self, AidaConfig, HistoryEntry, Mode, TrainData, TrainOptions, TrainState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generator settings; its `seed` is replaced by the run seed.
    pub synthetic: SyntheticSpec,
    /// Caps on the shared classes in leaf order: empty for none, one value for all.
    pub caps: Vec<usize>,
    /// Fraction of each target class held out, labeled, for evaluation.
    pub eval_fraction: f64,
    /// Fraction of each source class held out before capping, for evaluation.
    pub source_eval_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: desk_synthetic(),
            caps: vec![10, 20, 50, 100],
            eval_fraction: 0.5,
            source_eval_fraction: 0.4,
        }
    }
}

/// Desk-scale tree: 4 parents with 3 children each; the first child of every
/// parent is shared. Class structure lives in 16 of 128 input coordinates.
/// With the default source holdout, every non-shared class keeps 510
/// training examples.
pub fn desk_synthetic() -> SyntheticSpec {
    SyntheticSpec {
        groups: 4,
        children: 3,
        shared: (0..12).map(|k| k % 3 == 0).collect(),
        source_per_class: 850,
        target_per_class: 400,
        payload: PayloadMode::Vector {
            input_dim: 128,
            informative_dim: Some(16),
        },
        parent_scale: 0.5,
        child_scale: 0.15,
        noise: 1.0,
        translation: 2.0,
        rotation: 0.5,
        seed: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of the vector encoder.
    pub hidden: Vec<usize>,
    /// Output width of the vector encoder.
    pub feature_dim: usize,
    pub embedding_dim: usize,
    /// Per-direction state size of the recurrent encoder.
    pub recurrent_hidden: usize,
    pub max_len: usize,
    pub discriminator_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64],
            feature_dim: 32,
            embedding_dim: 32,
            recurrent_hidden: 32,
            max_len: DEFAULT_MAX_LEN,
            discriminator_hidden: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: AidaConfig,
    pub probe: ProbeConfig,
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| AidaError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| AidaError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| AidaError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.synthetic.validate()?;
        if !(0.0..1.0).contains(&self.data.eval_fraction) || self.data.eval_fraction <= 0.0 {
            return Err(AidaError::Validation {
                field: "data.eval_fraction".into(),
                detail: "must lie in (0, 1)".into(),
            });
        }
        if !(0.0..1.0).contains(&self.data.source_eval_fraction) || self.data.source_eval_fraction <= 0.0 {
            return Err(AidaError::Validation {
                field: "data.source_eval_fraction".into(),
                detail: "must lie in (0, 1)".into(),
            });
        }
        let shared = self.data.synthetic.shared.iter().filter(|&&s| s).count();
        if self.data.caps.len() > 1 && self.data.caps.len() != shared {
            return Err(AidaError::Validation {
                field: "data.caps".into(),
                detail: format!("{} caps for {shared} shared classes", self.data.caps.len()),
            });
        }
        if self.data.caps.contains(&0) {
            return Err(AidaError::Validation {
                field: "data.caps".into(),
                detail: "caps must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Hash of everything except the seeds, so equal fingerprints with equal
    /// seeds denote identical runs.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.train.seed = 0;
        c.data.synthetic.seed = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Applies `key=value` pairs addressed by dotted paths, e.g. `train.lambda2=0.6`.
    /// Values parse as JSON when possible and as plain strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| AidaError::Config(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            set_path(&mut root, key.trim(), value)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(root).map_err(|e| AidaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| AidaError::Config(format!("`{key}`: `{part}` is not inside a table")))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(AidaError::Config("empty override key".into()))
}

/// Datasets and model shape for one run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub tree: LabelTree,
    pub shared_source: Dataset,
    pub all_source: Dataset,
    /// Unlabeled target examples seen during training.
    pub target: Dataset,
    /// Labeled held-out target examples.
    pub target_eval: Dataset,
    /// Labeled source examples never used for training, all classes.
    pub source_eval: Dataset,
    pub vocabulary: Option<Vocabulary>,
    pub model_spec: ModelSpec,
}

impl Prepared {
    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            shared_source: &self.shared_source,
            all_source: &self.all_source,
            target: &self.target,
            eval: Some(&self.target_eval),
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let seed = cfg.train.seed;
    let mut spec = cfg.data.synthetic.clone();
    spec.seed = rng::derive_seed(seed, "data");
    let drawn = generate_synthetic(&spec)?;
    let tree = drawn.tree.clone().with_self_inclusion(cfg.train.self_inclusion);
    let shared = tree.shared().shared_indices();
    let mut caps = vec![None; tree.num_leaves()];
    for (i, &k) in shared.iter().enumerate() {
        caps[k] = match cfg.data.caps.len() {
            0 => None,
            1 => Some(cfg.data.caps[0]),
            _ => Some(cfg.data.caps[i]),
        };
    }
    let (pool, source_eval) = split_holdout(
        &drawn.source,
        cfg.data.source_eval_fraction,
        rng::derive_seed(seed, "source_eval"),
    )?;
    let source = subsample_imbalanced(&pool, &tree, &caps, seed)?;
    let tree = tree.with_counts_from(source.labels()?)?;
    let (shared_source, all_source) = split_shared_nonshared(&source, &tree);
    let (target_train, target_eval) = split_holdout(&drawn.target, cfg.data.eval_fraction, seed)?;
    let encoder = match &spec.payload {
        PayloadMode::Vector { input_dim, .. } => EncoderSpec::VectorMlp {
            input_dim: *input_dim,
            hidden: cfg.model.hidden.clone(),
            output_dim: cfg.model.feature_dim,
        },
        PayloadMode::Tokens { .. } => EncoderSpec::SequenceRecurrent {
            vocab_size: drawn.vocabulary.as_ref().map_or(1, Vocabulary::len),
            embedding_dim: cfg.model.embedding_dim,
            hidden_dim: cfg.model.recurrent_hidden,
            max_len: cfg.model.max_len,
        },
    };
    let model_spec = ModelSpec {
        encoder,
        num_classes: tree.num_leaves(),
        discriminator_hidden: cfg.model.discriminator_hidden,
        discriminator_input: cfg.train.mode.discriminator_input(),
    };
    Ok(Prepared {
        tree,
        shared_source,
        all_source,
        target: target_train.without_labels(),
        target_eval,
        source_eval,
        vocabulary: drawn.vocabulary,
        model_spec,
    })
}

/// Final evaluation of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: BTreeMap<String, f64>,
    pub per_class_f1: BTreeMap<String, f64>,
    pub macro_f1: f64,
    pub a_distance: f64,
    pub adaptability_error: f64,
}

pub fn evaluate(state: &TrainState, prepared: &Prepared, probe: &ProbeConfig) -> Result<Evaluation> {
    let model = &state.model;
    let k = prepared.tree.num_leaves();
    let mut accuracy = BTreeMap::new();

    let source_labels = prepared.source_eval.labels()?;
    let source_pred = model.predict_all(&prepared.source_eval.payloads())?;
    accuracy.insert("source".to_string(), metrics::accuracy(&source_pred, &source_labels)?);

    let target_labels = prepared.target_eval.labels()?;
    let target_pred = model.predict_shared(&prepared.target_eval.payloads())?;
    accuracy.insert("target".to_string(), metrics::accuracy(&target_pred, &target_labels)?);
    let per = metrics::per_class_f1(&target_pred, &target_labels, k)?;
    let per_class_f1 = per
        .iter()
        .enumerate()
        .filter(|(_, (_, present))| *present)
        .map(|(c, (f, _))| (prepared.tree.leaf_names()[c].clone(), *f))
        .collect();
    let macro_f1 = metrics::macro_f1(&target_pred, &target_labels, k)?;

    // class-matched samples, so label shift between the domains does not
    // register as feature discrepancy
    let shared_eval = prepared.source_eval.subset(&shared_rows(&prepared.source_eval, &prepared.tree));
    let (src_idx, tgt_idx) =
        class_matched(&shared_eval, &prepared.target_eval, rng::derive_seed(probe.seed, "class_matched"));
    let shared_feats = model.features(&shared_eval.payloads())?;
    let eval_feats = model.features(&prepared.target_eval.payloads())?;
    let a_distance = metrics::a_distance(&select(&shared_feats, &src_idx), &select(&eval_feats, &tgt_idx), probe)?;

    let adaptability_error = metrics::adaptability_error(
        &shared_feats,
        &shared_eval.labels()?,
        &eval_feats,
        &target_labels,
        k,
        probe,
    )?;
    Ok(Evaluation {
        accuracy,
        per_class_f1,
        macro_f1,
        a_distance,
        adaptability_error,
    })
}

fn shared_rows(data: &Dataset, tree: &LabelTree) -> Vec<usize> {
    let mask = tree.shared();
    (0..data.len())
        .filter(|&i| data.examples[i].label.is_some_and(|y| mask.is_shared(y)))
        .collect()
}

/// Per class, the same number of examples from each side (the smaller count).
fn class_matched(a: &Dataset, b: &Dataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let (ga, gb) = (a.by_class(), b.by_class());
    let mut r = rng::seeded(seed);
    let (mut ia, mut ib) = (Vec::new(), Vec::new());
    for (class, members) in &ga {
        let Some(other) = gb.get(class) else { continue };
        let n = members.len().min(other.len());
        ia.extend(sample(&mut r, members.len(), n).iter().map(|i| members[i]));
        ib.extend(sample(&mut r, other.len(), n).iter().map(|i| other[i]));
    }
    (ia, ib)
}

fn select(x: &Tensor, idx: &[usize]) -> Tensor {
    let d = x.cols();
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        out.extend_from_slice(x.row(i));
    }
    Tensor::matrix(idx.len(), d, out).expect("same width")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub seed: u64,
    pub config_fingerprint: String,
    pub iterations: u64,
    #[serde(flatten)]
    pub evaluation: Evaluation,
    /// Loss curves and periodic target scores.
    pub history: Vec<HistoryEntry>,
}

impl MetricsReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub state: TrainState,
    pub prepared: Prepared,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
}

/// Prepares data, trains and evaluates one configuration.
pub fn run(cfg: &ExperimentConfig, options: &RunOptions) -> Result<RunOutput> {
    let prepared = prepare(cfg)?;
    let train_options = TrainOptions {
        checkpoint_dir: options.checkpoint_dir.clone(),
        checkpoint_every: options.checkpoint_every,
        stop_after: None,
        vocabulary: prepared.vocabulary.clone(),
        experiment: Some(serde_json::to_value(cfg)?),
    };
    let state = trainer::train(&cfg.train, &prepared.model_spec, &prepared.train_data(), &prepared.tree, &train_options)?;
    let report = report_for(cfg, &state, &prepared)?;
    Ok(RunOutput {
        report,
        state,
        prepared,
    })
}

pub fn report_for(cfg: &ExperimentConfig, state: &TrainState, prepared: &Prepared) -> Result<MetricsReport> {
    Ok(MetricsReport {
        mode: cfg.train.mode,
        seed: cfg.train.seed,
        config_fingerprint: cfg.fingerprint(),
        iterations: state.iteration,
        evaluation: evaluate(state, prepared, &cfg.probe)?,
        history: state.history.clone(),
    })
}

/// One configuration of a matrix, run once per seed.
#[derive(Clone, Debug)]
pub struct Cell {
    pub name: String,
    pub config: ExperimentConfig,
}

/// Cartesian product of override axes applied to `base`.
pub fn grid(base: &ExperimentConfig, axes: &[(&str, Vec<Value>)]) -> Result<Vec<Cell>> {
    let mut cells = vec![(Vec::<String>::new(), Vec::<String>::new())];
    for (key, values) in axes {
        let mut next = Vec::new();
        for (names, overrides) in &cells {
            for v in values {
                let mut n = names.clone();
                let mut o = overrides.clone();
                let short = key.rsplit('.').next().unwrap_or(key);
                let shown = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                n.push(format!("{short}={shown}"));
                o.push(format!("{key}={v}"));
                next.push((n, o));
            }
        }
        cells = next;
    }
    cells
        .into_iter()
        .map(|(names, overrides)| {
            Ok(Cell {
                name: if names.is_empty() { "base".into() } else { names.join(",") },
                config: base.with_overrides(&overrides)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub cell: String,
    pub mode: Mode,
    pub lambda2: f64,
    pub lambda3: f64,
    pub seed: u64,
    pub fingerprint: String,
    pub outcome: std::result::Result<RowMetrics, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub target_accuracy: f64,
    pub macro_f1: f64,
    pub a_distance: f64,
    pub adaptability_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MatrixResult {
    pub rows: Vec<MatrixRow>,
    pub reports: Vec<(String, MetricsReport)>,
}

fn file_stem(cell: &str, seed: u64) -> String {
    let clean: String = cell
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{clean}_seed{seed}")
}

/// Trains and evaluates every cell for every seed, writing one report per run
/// under `out/runs/` and `out/aggregate.csv`. A failing run is recorded and
/// the matrix continues.
pub fn run_matrix(cells: &[Cell], seeds: &[u64], out: &Path) -> Result<MatrixResult> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(AidaError::pre("run_matrix", "empty grid"));
    }
    fs::create_dir_all(out.join("runs"))?;
    let mut result = MatrixResult::default();
    for cell in cells {
        for &seed in seeds {
            let mut cfg = cell.config.clone();
            cfg.train.seed = seed;
            let outcome = run(&cfg, &RunOptions::default());
            let outcome = match outcome {
                Ok(o) => {
                    o.report.write(&out.join("runs").join(format!("{}.json", file_stem(&cell.name, seed))))?;
                    let e = &o.report.evaluation;
                    let m = RowMetrics {
                        target_accuracy: e.accuracy["target"],
                        macro_f1: e.macro_f1,
                        a_distance: e.a_distance,
                        adaptability_error: e.adaptability_error,
                    };
                    result.reports.push((cell.name.clone(), o.report));
                    Ok(m)
                }
                Err(e) => {
                    log::warn!("cell `{}` seed {seed} failed: {e}", cell.name);
                    Err(e.to_string())
                }
            };
            result.rows.push(MatrixRow {
                cell: cell.name.clone(),
                mode: cfg.train.mode,
                lambda2: cfg.train.lambda2,
                lambda3: cfg.train.lambda3,
                seed,
                fingerprint: cfg.fingerprint(),
                outcome,
            });
        }
    }
    fs::write(out.join("aggregate.csv"), aggregate_csv(&result.rows))?;
    Ok(result)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn aggregate_csv(rows: &[MatrixRow]) -> String {
    let mut s = String::from(
        "cell,mode,lambda2,lambda3,seed,fingerprint,status,target_accuracy,macro_f1,a_distance,adaptability_error,error\n",
    );
    for r in rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},",
            csv_field(&r.cell),
            r.mode,
            r.lambda2,
            r.lambda3,
            r.seed,
            r.fingerprint
        );
        match &r.outcome {
            Ok(m) => {
                let _ = writeln!(
                    s,
                    "ok,{:.6},{:.6},{:.6},{:.6},",
                    m.target_accuracy, m.macro_f1, m.a_distance, m.adaptability_error
                );
            }
            Err(e) => {
                let _ = writeln!(s, "error,,,,,{}", csv_field(e));
            }
        }
    }
    s
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub mode: Mode,
    pub lambda2: f64,
    pub lambda3: f64,
    pub runs: usize,
    pub failures: usize,
    pub macro_f1: (f64, f64),
    pub target_accuracy: (f64, f64),
    pub a_distance: (f64, f64),
    pub adaptability_error: (f64, f64),
}

/// Per-cell statistics in first-appearance order.
pub fn summarize(rows: &[MatrixRow]) -> Vec<CellSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.cell.as_str()) {
            order.push(&r.cell);
        }
    }
    order
        .into_iter()
        .map(|cell| {
            let mine: Vec<&MatrixRow> = rows.iter().filter(|r| r.cell == cell).collect();
            let ok: Vec<RowMetrics> = mine.iter().filter_map(|r| r.outcome.clone().ok()).collect();
            let col = |f: fn(&RowMetrics) -> f64| mean_std(&ok.iter().map(f).collect::<Vec<_>>());
            CellSummary {
                cell: cell.to_string(),
                mode: mine[0].mode,
                lambda2: mine[0].lambda2,
                lambda3: mine[0].lambda3,
                runs: mine.len(),
                failures: mine.len() - ok.len(),
                macro_f1: col(|m| m.macro_f1),
                target_accuracy: col(|m| m.target_accuracy),
                a_distance: col(|m| m.a_distance),
                adaptability_error: col(|m| m.adaptability_error),
            }
        })
        .collect()
}

/// Fixed-width text table of cell summaries (scores in percent).
pub fn format_table(summaries: &[CellSummary]) -> String {
    let width = summaries.iter().map(|s| s.cell.len()).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<width$}  {:>4}  {:>15}  {:>15}  {:>13}  {:>13}\n",
        "cell", "runs", "macro-F1", "accuracy", "A-distance", "adapt. error"
    );
    for c in summaries {
        let _ = writeln!(
            s,
            "{:<width$}  {:>4}  {:>6.2} ± {:<6.2}  {:>6.2} ± {:<6.2}  {:>5.3} ± {:<5.3}  {:>5.3} ± {:<5.3}{}",
            c.cell,
            c.runs,
            100.0 * c.macro_f1.0,
            100.0 * c.macro_f1.1,
            100.0 * c.target_accuracy.0,
            100.0 * c.target_accuracy.1,
            c.a_distance.0,
            c.a_distance.1,
            c.adaptability_error.0,
            c.adaptability_error.1,
            if c.failures > 0 { format!("  ({} failed)", c.failures) } else { String::new() }
        );
    }
    s
}

fn write_summaries(out: &Path, name: &str, summaries: &[CellSummary]) -> Result<()> {
    let mut s = String::from(
        "cell,mode,lambda2,lambda3,runs,failures,macro_f1_mean,macro_f1_std,accuracy_mean,accuracy_std,a_distance_mean,a_distance_std,adaptability_error_mean,adaptability_error_std\n",
    );
    for c in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            csv_field(&c.cell),
            c.mode,
            c.lambda2,
            c.lambda3,
            c.runs,
            c.failures,
            c.macro_f1.0,
            c.macro_f1.1,
            c.target_accuracy.0,
            c.target_accuracy.1,
            c.a_distance.0,
            c.a_distance.1,
            c.adaptability_error.0,
            c.adaptability_error.1
        );
    }
    fs::write(out.join(name), s)?;
    Ok(())
}

/// Target macro-F1 against iteration for every run, one row per history entry.
pub fn write_f1_curves(out: &Path, reports: &[(String, MetricsReport)]) -> Result<()> {
    let mut s = String::from("cell,mode,seed,iteration,target_macro_f1,total_loss\n");
    for (cell, r) in reports {
        for h in &r.history {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6}",
                csv_field(cell),
                r.mode,
                r.seed,
                h.iteration,
                h.target_macro_f1.map_or(String::new(), |f| format!("{f:.6}")),
                h.losses.total
            );
        }
    }
    fs::write(out.join("f1_curves.csv"), s)?;
    Ok(())
}

/// A-distance and adaptability-error bars per cell.
pub fn write_discrepancy(out: &Path, summaries: &[CellSummary]) -> Result<()> {
    let mut s = String::from("cell,a_distance_mean,a_distance_std,adaptability_error_mean,adaptability_error_std\n");
    for c in summaries {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6}",
            csv_field(&c.cell),
            c.a_distance.0,
            c.a_distance.1,
            c.adaptability_error.0,
            c.adaptability_error.1
        );
    }
    fs::write(out.join("discrepancy.csv"), s)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct StudyResult {
    pub matrix: MatrixResult,
    pub summaries: Vec<CellSummary>,
}

impl StudyResult {
    pub fn summary(&self, cell: &str) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| s.cell == cell)
    }
}

/// AIDA against the baselines: one cell per mode.
pub fn compare(base: &ExperimentConfig, modes: &[Mode], seeds: &[u64], out: &Path) -> Result<StudyResult> {
    let cells = modes
        .iter()
        .map(|m| {
            let mut config = base.clone();
            config.train.mode = *m;
            Cell {
                name: m.to_string(),
                config,
            }
        })
        .collect::<Vec<_>>();
    let matrix = run_matrix(&cells, seeds, out)?;
    let summaries = summarize(&matrix.rows);
    write_summaries(out, "compare.csv", &summaries)?;
    write_f1_curves(out, &matrix.reports)?;
    write_discrepancy(out, &summaries)?;
    Ok(StudyResult { matrix, summaries })
}

/// `lambda2 x lambda3` grid for AIDA plus a source-only reference cell.
pub fn sweep(base: &ExperimentConfig, lambda2: &[f64], lambda3: &[f64], seeds: &[u64], out: &Path) -> Result<StudyResult> {
    let mut aida = base.clone();
    aida.train.mode = Mode::Aida;
    let mut cells = grid(
        &aida,
        &[
            ("train.lambda2", lambda2.iter().map(|v| Value::from(*v)).collect()),
            ("train.lambda3", lambda3.iter().map(|v| Value::from(*v)).collect()),
        ],
    )?;
    let mut reference = base.clone();
    reference.train.mode = Mode::SourceOnly;
    cells.push(Cell {
        name: Mode::SourceOnly.to_string(),
        config: reference,
    });
    let matrix = run_matrix(&cells, seeds, out)?;
    let summaries = summarize(&matrix.rows);
    let baseline = summaries.last().map_or(f64::NAN, |s| s.macro_f1.0);
    let mut s = String::from("lambda2,lambda3,macro_f1_mean,macro_f1_std,source_only_macro_f1\n");
    for c in summaries.iter().filter(|c| c.mode == Mode::Aida) {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6}",
            c.lambda2, c.lambda3, c.macro_f1.0, c.macro_f1.1, baseline
        );
    }
    fs::write(out.join("sweep_grid.csv"), s)?;
    write_summaries(out, "sweep_summary.csv", &summaries)?;
    Ok(StudyResult { matrix, summaries })
}

/// Full AIDA against variants with one term removed.
pub fn ablate(base: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<StudyResult> {
    let mut full = base.clone();
    full.train.mode = Mode::Aida;
    let variants: [(&str, &[&str]); 4] = [
        ("full", &[]),
        ("no-rewards", &["train.use_rewards=false"]),
        ("no-hierarchy", &["train.lambda3=0"]),
        ("no-adversarial", &["train.lambda=0"]),
    ];
    let cells = variants
        .iter()
        .map(|(name, o)| {
            Ok(Cell {
                name: name.to_string(),
                config: full.with_overrides(o)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = run_matrix(&cells, seeds, out)?;
    let summaries = summarize(&matrix.rows);
    write_summaries(out, "ablation.csv", &summaries)?;
    Ok(StudyResult { matrix, summaries })
}
