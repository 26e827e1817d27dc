//! Network stack: feature extractor, all-classes head with mask filtering,
//! conditioned domain discriminator.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::Payload;
use crate::error::{AidaError, Result};
use crate::rng::Rng;

/// Token index reserved for out-of-vocabulary words.
pub const UNKNOWN_TOKEN: usize = 0;

/// Default truncation length for token sequences.
pub const DEFAULT_MAX_LEN: usize = 300;

/// 0/1 indicator of the classes shared with the target domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<bool>", into = "Vec<bool>")]
pub struct SharedMask {
    bits: Vec<bool>,
}

impl SharedMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return Err(AidaError::pre("shared_mask", "at least one class must be shared"));
        }
        Ok(SharedMask { bits })
    }

    pub fn all(k: usize) -> Result<Self> {
        SharedMask::new(vec![true; k])
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_shared(&self, class: usize) -> bool {
        self.bits.get(class).copied().unwrap_or(false)
    }

    /// Number of shared classes, K'.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn shared_indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&k| self.bits[k]).collect()
    }
}

impl TryFrom<Vec<bool>> for SharedMask {
    type Error = AidaError;

    fn try_from(bits: Vec<bool>) -> Result<Self> {
        SharedMask::new(bits)
    }
}

impl From<SharedMask> for Vec<bool> {
    fn from(m: SharedMask) -> Self {
        m.bits
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum EncoderSpec {
    /// Feed-forward encoder for real-valued inputs. ReLU between layers, none after the last.
    VectorMlp {
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
    },
    /// Embedding lookup, bidirectional gated recurrence, max pooling over time.
    SequenceRecurrent {
        vocab_size: usize,
        embedding_dim: usize,
        hidden_dim: usize,
        #[serde(default = "default_max_len")]
        max_len: usize,
    },
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl EncoderSpec {
    /// Width `d` of the produced feature vector.
    pub fn feature_dim(&self) -> usize {
        match self {
            EncoderSpec::VectorMlp { output_dim, .. } => *output_dim,
            EncoderSpec::SequenceRecurrent { hidden_dim, .. } => 2 * hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str| {
            Err(AidaError::Validation {
                field: field.into(),
                detail: "must be positive".into(),
            })
        };
        match self {
            EncoderSpec::VectorMlp {
                input_dim,
                hidden,
                output_dim,
            } => {
                if *input_dim == 0 {
                    return bad("encoder.input_dim");
                }
                if *output_dim == 0 {
                    return bad("encoder.output_dim");
                }
                if hidden.contains(&0) {
                    return bad("encoder.hidden");
                }
            }
            EncoderSpec::SequenceRecurrent {
                vocab_size,
                embedding_dim,
                hidden_dim,
                max_len,
            } => {
                if *vocab_size == 0 {
                    return bad("encoder.vocab_size");
                }
                if *embedding_dim == 0 {
                    return bad("encoder.embedding_dim");
                }
                if *hidden_dim == 0 {
                    return bad("encoder.hidden_dim");
                }
                if *max_len == 0 {
                    return bad("encoder.max_len");
                }
            }
        }
        Ok(())
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
fn glorot(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

/// Affine layer `x W + b` with `W: in x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, group: ParamGroup, inputs: usize, outputs: usize) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            glorot(rng, inputs, outputs, inputs, outputs),
        );
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(1, outputs));
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row_bias(y, b)
    }
}

/// Gated recurrent cell (input, forget, candidate, output gates).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, inputs: usize, hidden: usize) -> Self {
        let g = ParamGroup::Encoder;
        let input_weight = store.add(
            format!("{name}.w_ih"),
            g,
            glorot(rng, inputs, 4 * hidden, inputs, hidden),
        );
        let hidden_weight = store.add(
            format!("{name}.w_hh"),
            g,
            glorot(rng, hidden, 4 * hidden, hidden, hidden),
        );
        // forget-gate bias starts at one
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{name}.bias"), g, Tensor::matrix(1, 4 * hidden, b).expect("consistent shape"));
        LstmCell {
            input_weight,
            hidden_weight,
            bias,
            hidden,
        }
    }

    /// One recurrence step given the precomputed input projection row `x W_ih`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, projected: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hidden;
        let w_hh = tape.param(store, self.hidden_weight);
        let b = tape.param(store, self.bias);
        let rec = tape.matmul(h, w_hh)?;
        let pre = tape.add(projected, rec)?;
        let pre = tape.add_row_bias(pre, b)?;
        let i = tape.slice_cols(pre, 0, n)?;
        let f = tape.slice_cols(pre, n, 2 * n)?;
        let g = tape.slice_cols(pre, 2 * n, 3 * n)?;
        let o = tape.slice_cols(pre, 3 * n, 4 * n)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.tanh(c)?;
        let h = tape.mul(o, squashed)?;
        Ok((h, c))
    }

    /// Runs the cell over all rows of `x` (a `T x e` matrix) in the given
    /// order; returns the per-position hidden states as `T x hidden`,
    /// rows aligned with the input positions.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, x: Var, reverse: bool) -> Result<Var> {
        let t_len = tape.value(x).rows();
        let w_ih = tape.param(store, self.input_weight);
        let projected = tape.matmul(x, w_ih)?;
        let mut h = tape.constant(Tensor::zeros(1, self.hidden));
        let mut c = tape.constant(Tensor::zeros(1, self.hidden));
        let mut states = vec![h; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let row = tape.slice_rows(projected, t, t + 1)?;
            let (h2, c2) = self.step(tape, store, row, h, c)?;
            h = h2;
            c = c2;
            states[t] = h;
        }
        tape.concat_rows(&states)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Encoder {
    Mlp {
        layers: Vec<Linear>,
    },
    Recurrent {
        embedding: ParamId,
        forward: LstmCell,
        backward: LstmCell,
        vocab_size: usize,
        max_len: usize,
    },
}

impl Encoder {
    pub fn new(spec: &EncoderSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            EncoderSpec::VectorMlp {
                input_dim,
                hidden,
                output_dim,
            } => {
                let mut widths = vec![*input_dim];
                widths.extend(hidden);
                widths.push(*output_dim);
                let layers = widths
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| Linear::new(store, rng, &format!("encoder.{i}"), ParamGroup::Encoder, w[0], w[1]))
                    .collect();
                Encoder::Mlp { layers }
            }
            EncoderSpec::SequenceRecurrent {
                vocab_size,
                embedding_dim,
                hidden_dim,
                max_len,
            } => {
                let embedding = store.add(
                    "encoder.embedding",
                    ParamGroup::Encoder,
                    glorot(rng, *vocab_size, *embedding_dim, 1, *embedding_dim),
                );
                let forward = LstmCell::new(store, rng, "encoder.forward", *embedding_dim, *hidden_dim);
                let backward = LstmCell::new(store, rng, "encoder.backward", *embedding_dim, *hidden_dim);
                Encoder::Recurrent {
                    embedding,
                    forward,
                    backward,
                    vocab_size: *vocab_size,
                    max_len: *max_len,
                }
            }
        })
    }

    /// Encodes a batch of payloads into a `B x d` feature matrix.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, batch: &[&Payload]) -> Result<Var> {
        if batch.is_empty() {
            return Err(AidaError::pre("encode", "empty batch"));
        }
        match self {
            Encoder::Mlp { layers } => {
                let width = layers[0].inputs;
                let mut data = Vec::with_capacity(batch.len() * width);
                for p in batch {
                    match p {
                        Payload::Vector(v) if v.len() == width => data.extend_from_slice(v),
                        Payload::Vector(v) => {
                            return Err(AidaError::dim("encode", format!("input width {} vs {width}", v.len())))
                        }
                        Payload::Tokens(_) => {
                            return Err(AidaError::pre("encode", "token payload given to a vector encoder"))
                        }
                    }
                }
                let mut x = tape.constant(Tensor::matrix(batch.len(), width, data)?);
                for (i, layer) in layers.iter().enumerate() {
                    x = layer.forward(tape, store, x)?;
                    if i + 1 < layers.len() {
                        x = tape.relu(x)?;
                    }
                }
                Ok(x)
            }
            Encoder::Recurrent {
                embedding,
                forward,
                backward,
                vocab_size,
                max_len,
            } => {
                let table = tape.param(store, *embedding);
                let mut pooled = Vec::with_capacity(batch.len());
                for p in batch {
                    let tokens = match p {
                        Payload::Tokens(t) => t,
                        Payload::Vector(_) => {
                            return Err(AidaError::pre("encode", "vector payload given to a sequence encoder"))
                        }
                    };
                    if tokens.is_empty() {
                        return Err(AidaError::pre("encode", "empty sequence"));
                    }
                    let index: Vec<usize> = tokens
                        .iter()
                        .take(*max_len)
                        .map(|&t| if t < *vocab_size { t } else { UNKNOWN_TOKEN })
                        .collect();
                    let x = tape.gather_rows(table, &index)?;
                    let fwd = forward.run(tape, store, x, false)?;
                    let bwd = backward.run(tape, store, x, true)?;
                    let states = tape.concat_cols(&[fwd, bwd])?;
                    pooled.push(tape.max_over_time(states)?);
                }
                if pooled.len() == 1 {
                    Ok(pooled[0])
                } else {
                    tape.concat_rows(&pooled)
                }
            }
        }
    }
}

/// Hidden layer of width `d` followed by the per-class output rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub hidden: Linear,
    /// `K x D`; row `k` is the class vector of leaf `k`.
    pub class_weight: ParamId,
    pub class_bias: ParamId,
    pub num_classes: usize,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, feature_dim: usize, num_classes: usize) -> Self {
        let g = ParamGroup::Classifier;
        let hidden = Linear::new(store, rng, "classifier.hidden", g, feature_dim, feature_dim);
        let class_weight = store.add(
            "classifier.class_weight",
            g,
            glorot(rng, num_classes, feature_dim, feature_dim, num_classes),
        );
        let class_bias = store.add("classifier.class_bias", g, Tensor::zeros(1, num_classes));
        ClassifierHead {
            hidden,
            class_weight,
            class_bias,
            num_classes,
        }
    }

    pub fn row_width(&self) -> usize {
        self.hidden.outputs
    }

    /// Raw scores over all `K` classes.
    pub fn classify_all(&self, tape: &mut Tape, store: &ParamStore, f: Var) -> Result<Var> {
        if tape.value(f).cols() != self.hidden.inputs {
            return Err(AidaError::dim(
                "classify_all",
                format!("feature width {} vs {}", tape.value(f).cols(), self.hidden.inputs),
            ));
        }
        let h = self.hidden.forward(tape, store, f)?;
        let h = tape.relu(h)?;
        let w = tape.param(store, self.class_weight);
        let wt = tape.transpose(w)?;
        let z = tape.matmul(h, wt)?;
        let b = tape.param(store, self.class_bias);
        tape.add_row_bias(z, b)
    }

    /// Probabilities over `K` classes with non-shared classes forced to zero mass.
    pub fn shared_predict(&self, tape: &mut Tape, store: &ParamStore, f: Var, mask: &SharedMask) -> Result<Var> {
        let z = self.classify_all(tape, store, f)?;
        let masked = mask_filter(tape, z, mask)?;
        tape.softmax(masked)
    }
}

/// Pre-softmax masking of non-shared classes.
pub fn mask_filter(tape: &mut Tape, z: Var, mask: &SharedMask) -> Result<Var> {
    tape.mask_filter(z, mask.bits())
}

/// Flattened outer product of features with the shared-class slice of `g`.
pub fn condition(tape: &mut Tape, f: Var, g: Var, mask: &SharedMask) -> Result<Var> {
    let shared = tape.select_cols(g, &mask.shared_indices())?;
    tape.outer_rows(f, shared)
}

/// Layers `input -> hidden -> hidden -> 2`; column 1 of the output is "source".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDiscriminator {
    pub layers: Vec<Linear>,
}

impl DomainDiscriminator {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, input: usize, hidden: usize) -> Self {
        let g = ParamGroup::Discriminator;
        let layers = vec![
            Linear::new(store, rng, "discriminator.0", g, input, hidden),
            Linear::new(store, rng, "discriminator.1", g, hidden, hidden),
            Linear::new(store, rng, "discriminator.2", g, hidden, 2),
        ];
        DomainDiscriminator { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    /// Two-way domain probabilities, `B x 2`.
    pub fn probabilities(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input_width() {
            return Err(AidaError::dim(
                "discriminate",
                format!("input width {} vs {}", tape.value(x).cols(), self.input_width()),
            ));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        tape.softmax(h)
    }

    /// Probability that each row came from the source domain.
    pub fn discriminate(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Vec<f64>> {
        let p = self.probabilities(tape, store, x)?;
        let v = tape.value(p);
        Ok((0..v.rows()).map(|i| v.get(i, 1)).collect())
    }
}

/// What the discriminator sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorInput {
    /// `f (x) g` restricted to shared classes, width `d * K'`.
    Conditioned,
    /// Raw features, width `d`.
    Features,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub num_classes: usize,
    pub discriminator_hidden: usize,
    pub discriminator_input: DiscriminatorInput,
}

/// All trainable parameters plus the layer structure that indexes them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub mask: SharedMask,
    pub encoder: Encoder,
    pub head: ClassifierHead,
    pub discriminator: DomainDiscriminator,
    pub store: ParamStore,
}

impl Model {
    pub fn new(spec: ModelSpec, mask: SharedMask, rng: &mut Rng) -> Result<Self> {
        if mask.len() != spec.num_classes {
            return Err(AidaError::dim(
                "model",
                format!("mask length {} vs {} classes", mask.len(), spec.num_classes),
            ));
        }
        if spec.discriminator_hidden == 0 {
            return Err(AidaError::Validation {
                field: "model.discriminator_hidden".into(),
                detail: "must be positive".into(),
            });
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&spec.encoder, &mut store, rng)?;
        let d = spec.encoder.feature_dim();
        let head = ClassifierHead::new(&mut store, rng, d, spec.num_classes);
        let input = match spec.discriminator_input {
            DiscriminatorInput::Conditioned => d * mask.count(),
            DiscriminatorInput::Features => d,
        };
        let discriminator = DomainDiscriminator::new(&mut store, rng, input, spec.discriminator_hidden);
        Ok(Model {
            spec,
            mask,
            encoder,
            head,
            discriminator,
            store,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.encoder.feature_dim()
    }

    pub fn encode(&self, tape: &mut Tape, batch: &[&Payload]) -> Result<Var> {
        self.encoder.encode(tape, &self.store, batch)
    }

    /// Discriminator input for a batch of features and shared predictions.
    pub fn discriminator_input(&self, tape: &mut Tape, f: Var, g: Var) -> Result<Var> {
        match self.spec.discriminator_input {
            DiscriminatorInput::Conditioned => condition(tape, f, g, &self.mask),
            DiscriminatorInput::Features => Ok(f),
        }
    }

    /// Class vectors `theta_y^k` as a `K x D` tensor.
    pub fn class_rows(&self) -> &Tensor {
        &self.store.get(self.head.class_weight).value
    }

    /// Frozen feature matrix for a set of payloads, evaluated in chunks.
    pub fn features(&self, payloads: &[&Payload]) -> Result<Tensor> {
        let mut rows = Vec::new();
        let mut cols = self.feature_dim();
        for chunk in payloads.chunks(256) {
            let mut tape = Tape::new();
            let f = self.encode(&mut tape, chunk)?;
            let v = tape.value(f);
            cols = v.cols();
            rows.extend_from_slice(v.data());
        }
        if payloads.is_empty() {
            return Err(AidaError::pre("features", "no payloads"));
        }
        Tensor::matrix(rows.len() / cols, cols, rows)
    }

    /// Arg-max class over the shared classes for each payload.
    pub fn predict_shared(&self, payloads: &[&Payload]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(payloads.len());
        for chunk in payloads.chunks(256) {
            let mut tape = Tape::new();
            let f = self.encode(&mut tape, chunk)?;
            let g = self.head.shared_predict(&mut tape, &self.store, f, &self.mask)?;
            let v = tape.value(g);
            out.extend((0..v.rows()).map(|i| v.argmax_row(i)));
        }
        Ok(out)
    }

    /// Arg-max class over all `K` classes.
    pub fn predict_all(&self, payloads: &[&Payload]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(payloads.len());
        for chunk in payloads.chunks(256) {
            let mut tape = Tape::new();
            let f = self.encode(&mut tape, chunk)?;
            let z = self.head.classify_all(&mut tape, &self.store, f)?;
            let v = tape.value(z);
            out.extend((0..v.rows()).map(|i| v.argmax_row(i)));
        }
        Ok(out)
    }
}
