//! The two-channel convolutional triage classifier.
//!
//! A document arrives as two fixed-length id sequences (token ids and
//! concept ids, see [`crate::text::encode`]). Each sequence position is
//! embedded as the concatenation `word_vector ∥ knowledge_vector`, giving
//! one `[n, dw + dk]` input matrix per word-vector channel. The network is:
//!
//! 1. per filter width `h`: a shared bank of `m` 1-D filters convolves
//!    every channel (same weights for all channels),
//! 2. the per-channel pre-activation maps are averaged element-wise,
//! 3. ReLU, then max-over-time pooling collapses each map to `m` values,
//! 4. pooled vectors from all widths are concatenated,
//! 5. a dense hidden layer with ReLU and (during training) inverted
//!    dropout, then a dense layer into a 2-way softmax.
//!
//! Embedding tables are frozen: gradients stop at the input matrices, and
//! only the convolution, hidden, and output parameters train (mini-batch
//! Adam). Checkpoints store the config and every parameter tensor verbatim,
//! so reloading reproduces bit-identical predictions.
//!
//! Ablation variants of the full model are named by what they keep:
//! `cnn` (one channel, no knowledge vectors), `mcnn` (two channels, no
//! knowledge vectors), `kcnn` (one channel plus knowledge vectors), and
//! `kmcnn` (the full model).

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::eval::{precision_recall_f1, ConfusionCounts, Metrics};
use crate::nn::gradcheck::{rel_err, KINK_MARGIN_FACTOR};
use crate::nn::{ops, Adam, AdamConfig, Tensor};
use crate::text::{encode, ConceptLexicon, Document, EncodedDocument, Label, Vocabulary};
use crate::util::mix_seed;
use crate::{Error, Result};

/// Knowledge-vector width used when an ablation variant re-enables the
/// knowledge channel on a config that had it switched off.
pub const DEFAULT_KNOWLEDGE_DIM: usize = 108;

// Seed-stream tags, folded into the master seed so parameter init, epoch
// shuffling, dropout, and gradient-check trials draw from disjoint streams.
pub(crate) const MODEL_INIT_STREAM: u64 = 0x40;
const SHUFFLE_STREAM: u64 = 0x41;
const DROPOUT_STREAM: u64 = 0x42;
const GRADCHECK_STREAM: u64 = 0x43;

const CHECKPOINT_MAGIC: &[u8; 4] = b"KMC1";

/// Hyperparameters and input geometry for the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of token positions per document (shorter documents are
    /// zero-padded, longer ones truncated).
    pub n: usize,
    /// Word-vector width.
    pub dw: usize,
    /// Knowledge-vector width; 0 disables the knowledge block entirely.
    pub dk: usize,
    /// Word-vector channels, 1 or 2.
    pub channels: usize,
    /// Convolution window sizes; one shared filter bank per entry.
    pub filter_widths: Vec<usize>,
    /// Filters per width, or the total across widths when
    /// `filters_count_is_total` is set.
    pub filters_per_width: usize,
    /// Reinterprets `filters_per_width` as a total budget split evenly
    /// over the widths (must divide evenly).
    pub filters_count_is_total: bool,
    /// Units in the dense hidden layer.
    pub hidden_dim: usize,
    /// Dropout rate on the hidden activations during training, in [0, 1).
    pub drop_rate: f64,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Training epochs; 0 means "initialize only".
    pub epochs: usize,
    /// Mini-batch size.
    pub batch_size: usize,
    /// Master seed for init, shuffling, and dropout.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            n: 1000,
            dw: 200,
            dk: DEFAULT_KNOWLEDGE_DIM,
            channels: 2,
            filter_widths: vec![1, 2, 3],
            filters_per_width: 2048,
            filters_count_is_total: false,
            hidden_dim: 100,
            drop_rate: 0.5,
            learning_rate: 1e-5,
            epochs: 50,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// A configuration small enough to train in seconds on one core while
    /// keeping the full architecture. The learning rate is raised to suit
    /// the much smaller parameter count.
    pub fn desk() -> ModelConfig {
        ModelConfig {
            n: 64,
            dw: 16,
            dk: 8,
            filters_per_width: 64,
            hidden_dim: 32,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 8,
            ..ModelConfig::default()
        }
    }

    /// Input width per position: word block plus knowledge block.
    pub fn k(&self) -> usize {
        self.dw + self.dk
    }

    /// Filters in each width's bank after resolving the total-count flag.
    pub fn m_per_width(&self) -> usize {
        if self.filters_count_is_total {
            self.filters_per_width / self.filter_widths.len().max(1)
        } else {
            self.filters_per_width
        }
    }

    /// Length of the concatenated pooled feature vector.
    pub fn pooled_len(&self) -> usize {
        self.filter_widths.len() * self.m_per_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("document length n must be at least 1".into()));
        }
        if self.dw == 0 {
            return Err(Error::Config("word-vector width dw must be at least 1".into()));
        }
        if self.channels != 1 && self.channels != 2 {
            return Err(Error::Config(format!(
                "channels must be 1 or 2, got {}",
                self.channels
            )));
        }
        if self.filter_widths.is_empty() {
            return Err(Error::Config("at least one filter width is required".into()));
        }
        for (i, &h) in self.filter_widths.iter().enumerate() {
            if h == 0 || h > self.n {
                return Err(Error::Config(format!(
                    "filter width {h} does not fit a {}-position document",
                    self.n
                )));
            }
            if self.filter_widths[..i].contains(&h) {
                return Err(Error::Config(format!("duplicate filter width {h}")));
            }
        }
        if self.filters_per_width == 0 {
            return Err(Error::Config("filters_per_width must be at least 1".into()));
        }
        if self.filters_count_is_total && self.filters_per_width % self.filter_widths.len() != 0 {
            return Err(Error::Config(format!(
                "total filter count {} does not divide evenly over {} widths",
                self.filters_per_width,
                self.filter_widths.len()
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::Config(format!(
                "drop_rate {} outside [0, 1)",
                self.drop_rate
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// The four ablation variants, named by which inputs they keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One channel, no knowledge vectors.
    PlainCnn,
    /// Two channels, no knowledge vectors.
    Mcnn,
    /// One channel plus knowledge vectors.
    Kcnn,
    /// Two channels plus knowledge vectors: the full model.
    Kmcnn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::PlainCnn, Variant::Mcnn, Variant::Kcnn, Variant::Kmcnn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PlainCnn => "cnn",
            Variant::Mcnn => "mcnn",
            Variant::Kcnn => "kcnn",
            Variant::Kmcnn => "kmcnn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "cnn" => Ok(Variant::PlainCnn),
            "mcnn" => Ok(Variant::Mcnn),
            "kcnn" => Ok(Variant::Kcnn),
            "kmcnn" => Ok(Variant::Kmcnn),
            other => Err(Error::Config(format!(
                "unknown model variant `{other}`; expected cnn, mcnn, kcnn, or kmcnn"
            ))),
        }
    }
}

/// Derives the config for an ablation variant from a base config. Only the
/// channel count and knowledge width change; if the base config has the
/// knowledge block disabled, knowledge-using variants fall back to
/// [`DEFAULT_KNOWLEDGE_DIM`]. Applying the same variant twice is a no-op.
pub fn ablation_variant(base: &ModelConfig, variant: Variant) -> ModelConfig {
    let mut cfg = base.clone();
    let dk = if base.dk > 0 { base.dk } else { DEFAULT_KNOWLEDGE_DIM };
    match variant {
        Variant::PlainCnn => {
            cfg.channels = 1;
            cfg.dk = 0;
        }
        Variant::Mcnn => {
            cfg.channels = 2;
            cfg.dk = 0;
        }
        Variant::Kcnn => {
            cfg.channels = 1;
            cfg.dk = dk;
        }
        Variant::Kmcnn => {
            cfg.channels = 2;
            cfg.dk = dk;
        }
    }
    cfg
}

/// Every trainable tensor, in checkpoint order: per width the filter bank
/// `[m, h, k]` then its bias `[m]`, then hidden weights `[pooled, hidden]`,
/// hidden bias, output weights `[hidden, 2]`, output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv_filters: Vec<Tensor>,
    pub conv_bias: Vec<Tensor>,
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> ModelParams {
        let k = cfg.k();
        let m = cfg.m_per_width();
        let mut conv_filters = Vec::with_capacity(cfg.filter_widths.len());
        let mut conv_bias = Vec::with_capacity(cfg.filter_widths.len());
        for &h in &cfg.filter_widths {
            conv_filters.push(Tensor::glorot(&[m, h, k], h * k, m, rng));
            conv_bias.push(Tensor::zeros(&[m]));
        }
        let pooled = cfg.pooled_len();
        ModelParams {
            conv_filters,
            conv_bias,
            hidden_w: Tensor::glorot(&[pooled, cfg.hidden_dim], pooled, cfg.hidden_dim, rng),
            hidden_b: Tensor::zeros(&[cfg.hidden_dim]),
            out_w: Tensor::glorot(&[cfg.hidden_dim, 2], cfg.hidden_dim, 2, rng),
            out_b: Tensor::zeros(&[2]),
        }
    }

    /// All-zero tensors with the same shapes; used as gradient accumulators
    /// and as the skeleton when loading a checkpoint.
    pub fn zeros(cfg: &ModelConfig) -> ModelParams {
        let k = cfg.k();
        let m = cfg.m_per_width();
        let mut conv_filters = Vec::with_capacity(cfg.filter_widths.len());
        let mut conv_bias = Vec::with_capacity(cfg.filter_widths.len());
        for &h in &cfg.filter_widths {
            conv_filters.push(Tensor::zeros(&[m, h, k]));
            conv_bias.push(Tensor::zeros(&[m]));
        }
        let pooled = cfg.pooled_len();
        ModelParams {
            conv_filters,
            conv_bias,
            hidden_w: Tensor::zeros(&[pooled, cfg.hidden_dim]),
            hidden_b: Tensor::zeros(&[cfg.hidden_dim]),
            out_w: Tensor::zeros(&[cfg.hidden_dim, 2]),
            out_b: Tensor::zeros(&[2]),
        }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for (f, b) in self.conv_filters.iter().zip(&self.conv_bias) {
            out.push(f);
            out.push(b);
        }
        out.push(&self.hidden_w);
        out.push(&self.hidden_b);
        out.push(&self.out_w);
        out.push(&self.out_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (f, b) in self.conv_filters.iter_mut().zip(self.conv_bias.iter_mut()) {
            out.push(f);
            out.push(b);
        }
        out.push(&mut self.hidden_w);
        out.push(&mut self.hidden_b);
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Human-readable tensor names matching [`ModelParams::tensors`] order.
pub fn tensor_names(cfg: &ModelConfig) -> Vec<String> {
    let mut names = Vec::new();
    for &h in &cfg.filter_widths {
        names.push(format!("conv{h}_filters"));
        names.push(format!("conv{h}_bias"));
    }
    names.push("hidden_weights".into());
    names.push("hidden_bias".into());
    names.push("output_weights".into());
    names.push("output_bias".into());
    names
}

fn add_into(acc: &mut Tensor, delta: &Tensor) -> Result<()> {
    if acc.shape() != delta.shape() {
        return Err(Error::Shape(format!(
            "gradient accumulation: {:?} vs {:?}",
            acc.shape(),
            delta.shape()
        )));
    }
    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
        *a += *d;
    }
    Ok(())
}

/// Embedding rows laid out by dense id, so input assembly is a straight
/// row copy with no hashing.
#[derive(Debug, Clone)]
pub struct AlignedTable {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl AlignedTable {
    fn zeros(rows: usize, dim: usize) -> AlignedTable {
        AlignedTable {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn set_row(&mut self, i: usize, v: &[f32]) {
        let dst = &mut self.data[i * self.dim..(i + 1) * self.dim];
        for (d, s) in dst.iter_mut().zip(v) {
            *d = f64::from(*s);
        }
    }
}

/// Frozen lookup tables aligned to a vocabulary and a concept lexicon:
/// one word table per channel (rows 0 and 1, padding and out-of-vocabulary,
/// stay zero) and optionally one knowledge table (row 0, "no concept",
/// stays zero). Tokens or concepts without a trained vector get zero rows.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    dw: usize,
    dk: usize,
    channel_tables: Vec<AlignedTable>,
    knowledge: Option<AlignedTable>,
}

impl EmbeddingSet {
    pub fn build(
        cfg: &ModelConfig,
        vocab: &Vocabulary,
        lexicon: &ConceptLexicon,
        word_channels: &[&EmbeddingMatrix],
        knowledge: Option<&EmbeddingMatrix>,
    ) -> Result<EmbeddingSet> {
        if word_channels.len() != cfg.channels {
            return Err(Error::Config(format!(
                "model expects {} word-vector channel(s), got {}",
                cfg.channels,
                word_channels.len()
            )));
        }
        let mut channel_tables = Vec::with_capacity(word_channels.len());
        for (c, matrix) in word_channels.iter().enumerate() {
            if matrix.dim() != cfg.dw {
                return Err(Error::Config(format!(
                    "channel {c} word vectors are {}-dimensional, config expects dw = {}",
                    matrix.dim(),
                    cfg.dw
                )));
            }
            let mut table = AlignedTable::zeros(vocab.len(), cfg.dw);
            let mut missing = 0usize;
            for id in 2..vocab.len() {
                let token = vocab.token(id).expect("id below vocabulary length");
                match matrix.get(token) {
                    Some(v) => table.set_row(id, v),
                    None => missing += 1,
                }
            }
            if missing > 0 {
                log::debug!("channel {c}: {missing} vocabulary tokens have no word vector; using zero rows");
            }
            channel_tables.push(table);
        }
        let knowledge = if cfg.dk == 0 {
            None
        } else {
            let matrix = knowledge.ok_or_else(|| {
                Error::Config(
                    "config enables knowledge vectors (dk > 0) but none were provided".into(),
                )
            })?;
            if matrix.dim() != cfg.dk {
                return Err(Error::Config(format!(
                    "knowledge vectors are {}-dimensional, config expects dk = {}",
                    matrix.dim(),
                    cfg.dk
                )));
            }
            let mut table = AlignedTable::zeros(lexicon.concept_count() + 1, cfg.dk);
            let mut missing = 0usize;
            for id in 1..=lexicon.concept_count() {
                let key = lexicon.key(id).expect("dense id in range");
                match matrix.get(key) {
                    Some(v) => table.set_row(id, v),
                    None => missing += 1,
                }
            }
            if missing > 0 {
                log::debug!("{missing} lexicon concepts have no knowledge vector; using zero rows");
            }
            Some(table)
        };
        Ok(EmbeddingSet {
            dw: cfg.dw,
            dk: cfg.dk,
            channel_tables,
            knowledge,
        })
    }

    pub fn dw(&self) -> usize {
        self.dw
    }

    pub fn dk(&self) -> usize {
        self.dk
    }

    pub fn channels(&self) -> usize {
        self.channel_tables.len()
    }
}

/// Assembles the per-channel input matrices for one encoded document:
/// row i of channel c is `word_table_c[token_ids[i]] ∥ knowledge[concept_ids[i]]`.
pub fn build_inputs(
    enc: &EncodedDocument,
    set: &EmbeddingSet,
    cfg: &ModelConfig,
) -> Result<Vec<Tensor>> {
    if set.dw != cfg.dw || set.dk != cfg.dk {
        return Err(Error::Config(format!(
            "embedding set is dw = {}, dk = {} but config expects dw = {}, dk = {}",
            set.dw, set.dk, cfg.dw, cfg.dk
        )));
    }
    if set.channel_tables.len() != cfg.channels {
        return Err(Error::Config(format!(
            "embedding set has {} channel(s), config expects {}",
            set.channel_tables.len(),
            cfg.channels
        )));
    }
    if enc.token_ids.len() != cfg.n || enc.concept_ids.len() != cfg.n {
        return Err(Error::Shape(format!(
            "encoded document has {} token and {} concept positions, config expects {}",
            enc.token_ids.len(),
            enc.concept_ids.len(),
            cfg.n
        )));
    }
    let k = cfg.k();
    let mut out = Vec::with_capacity(cfg.channels);
    for table in &set.channel_tables {
        let mut x = Tensor::zeros(&[cfg.n, k]);
        for i in 0..cfg.n {
            let tid = enc.token_ids[i];
            if tid >= table.rows() {
                return Err(Error::Lookup(format!(
                    "token id {tid} outside the {}-row aligned vocabulary table",
                    table.rows()
                )));
            }
            let base = i * k;
            x.data_mut()[base..base + cfg.dw].copy_from_slice(table.row(tid));
            if let Some(kg) = &set.knowledge {
                let cid = enc.concept_ids[i];
                if cid >= kg.rows() {
                    return Err(Error::Lookup(format!(
                        "concept id {cid} outside the {}-row aligned knowledge table",
                        kg.rows()
                    )));
                }
                x.data_mut()[base + cfg.dw..base + k].copy_from_slice(kg.row(cid));
            }
        }
        out.push(x);
    }
    Ok(out)
}

/// Whether dropout applies. `Train` carries an externally drawn keep mask
/// so the same forward pass is exactly reproducible.
#[derive(Debug, Clone, Copy)]
pub enum Phase<'a> {
    Eval,
    Train { dropout_mask: &'a [bool] },
}

/// Every intermediate needed by the backward pass (and by tests).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Per width: channel-averaged pre-activation maps `[n - h + 1, m]`.
    pub conv_avg: Vec<Tensor>,
    /// Per width: ReLU of `conv_avg`.
    pub conv_act: Vec<Tensor>,
    /// Per width: winning row per feature from max pooling.
    pub argmax: Vec<Vec<usize>>,
    /// Concatenated pooled features `[pooled_len]`.
    pub pooled: Tensor,
    pub hidden_pre: Tensor,
    pub hidden_act: Tensor,
    pub hidden_dropped: Tensor,
    /// Class probabilities `[2]`; index 1 is the positive class.
    pub probs: Tensor,
}

pub fn forward(
    params: &ModelParams,
    inputs: &[Tensor],
    cfg: &ModelConfig,
    phase: Phase,
) -> Result<ForwardCache> {
    if inputs.len() != cfg.channels {
        return Err(Error::Shape(format!(
            "{} input channel(s) given, config expects {}",
            inputs.len(),
            cfg.channels
        )));
    }
    let k = cfg.k();
    for (c, x) in inputs.iter().enumerate() {
        if x.shape() != [cfg.n, k] {
            return Err(Error::Shape(format!(
                "channel {c} input is {:?}, expected [{}, {k}]",
                x.shape(),
                cfg.n
            )));
        }
    }
    let m = cfg.m_per_width();
    let mut conv_avg = Vec::with_capacity(cfg.filter_widths.len());
    let mut conv_act = Vec::with_capacity(cfg.filter_widths.len());
    let mut argmax = Vec::with_capacity(cfg.filter_widths.len());
    let mut pooled = Tensor::zeros(&[cfg.pooled_len()]);
    for (w, _) in cfg.filter_widths.iter().enumerate() {
        let mut avg: Option<Tensor> = None;
        for x in inputs {
            let map = ops::conv1d_forward(x, &params.conv_filters[w], &params.conv_bias[w])?;
            avg = Some(match avg {
                None => map,
                Some(mut acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(map.data()) {
                        *a += *b;
                    }
                    acc
                }
            });
        }
        let mut avg = avg.expect("at least one channel");
        if inputs.len() > 1 {
            let scale = 1.0 / inputs.len() as f64;
            for v in avg.data_mut() {
                *v *= scale;
            }
        }
        let act = ops::relu_forward(&avg);
        let (pooled_w, arg) = ops::maxpool_forward(&act)?;
        pooled.data_mut()[w * m..(w + 1) * m].copy_from_slice(pooled_w.data());
        conv_avg.push(avg);
        conv_act.push(act);
        argmax.push(arg);
    }
    let hidden_pre = ops::dense_forward(&pooled, &params.hidden_w, &params.hidden_b)?;
    let hidden_act = ops::relu_forward(&hidden_pre);
    let hidden_dropped = match phase {
        Phase::Eval => hidden_act.clone(),
        Phase::Train { dropout_mask } => {
            if dropout_mask.len() != cfg.hidden_dim {
                return Err(Error::Shape(format!(
                    "dropout mask has {} entries, hidden layer has {}",
                    dropout_mask.len(),
                    cfg.hidden_dim
                )));
            }
            ops::dropout_apply(&hidden_act, dropout_mask, cfg.drop_rate)?
        }
    };
    let logits = ops::dense_forward(&hidden_dropped, &params.out_w, &params.out_b)?;
    let probs = ops::softmax(&logits)?;
    Ok(ForwardCache {
        conv_avg,
        conv_act,
        argmax,
        pooled,
        hidden_pre,
        hidden_act,
        hidden_dropped,
        probs,
    })
}

/// Forward pass plus cross-entropy against `target` (0 negative, 1 positive).
pub fn forward_loss(
    params: &ModelParams,
    inputs: &[Tensor],
    cfg: &ModelConfig,
    phase: Phase,
    target: usize,
) -> Result<(f64, ForwardCache)> {
    if target >= 2 {
        return Err(Error::Shape(format!("class target {target} out of range")));
    }
    let cache = forward(params, inputs, cfg, phase)?;
    // Same clamp as the fused loss op: confidently wrong stays finite.
    let p = cache.probs.data()[target].max(1e-300);
    Ok((-p.ln(), cache))
}

/// Accumulates parameter gradients for one example into `grads`. The
/// embedding inputs are frozen, so no input gradient is produced.
pub fn backward(
    params: &ModelParams,
    inputs: &[Tensor],
    cfg: &ModelConfig,
    phase: Phase,
    cache: &ForwardCache,
    target: usize,
    grads: &mut ModelParams,
) -> Result<()> {
    let dlogits = ops::softmax_xent_backward(&cache.probs, target)?;
    let (d_dropped, d_out_w, d_out_b) =
        ops::dense_backward(&cache.hidden_dropped, &params.out_w, &dlogits)?;
    let d_hidden_act = match phase {
        Phase::Eval => d_dropped,
        Phase::Train { dropout_mask } => {
            ops::dropout_backward(&d_dropped, dropout_mask, cfg.drop_rate)?
        }
    };
    let d_hidden_pre = ops::relu_backward(&cache.hidden_pre, &d_hidden_act)?;
    let (d_pooled, d_hidden_w, d_hidden_b) =
        ops::dense_backward(&cache.pooled, &params.hidden_w, &d_hidden_pre)?;
    let m = cfg.m_per_width();
    for (w, &h) in cfg.filter_widths.iter().enumerate() {
        let seg = Tensor::from_vec(&[m], d_pooled.data()[w * m..(w + 1) * m].to_vec())?;
        let rows = cfg.n - h + 1;
        let d_act = ops::maxpool_backward(rows, &cache.argmax[w], &seg)?;
        // Averaging across channels puts a 1/channels factor on each
        // channel's map; the shared bias keeps coefficient 1 because it is
        // added once per channel and survives the mean, and summing the
        // per-channel bias gradients below restores exactly that.
        let mut d_chan = ops::relu_backward(&cache.conv_avg[w], &d_act)?;
        if cfg.channels > 1 {
            let s = 1.0 / cfg.channels as f64;
            for v in d_chan.data_mut() {
                *v *= s;
            }
        }
        for x in inputs {
            let (_dx, df, db) = ops::conv1d_backward(x, &params.conv_filters[w], &d_chan)?;
            add_into(&mut grads.conv_filters[w], &df)?;
            add_into(&mut grads.conv_bias[w], &db)?;
        }
    }
    add_into(&mut grads.hidden_w, &d_hidden_w)?;
    add_into(&mut grads.hidden_b, &d_hidden_b)?;
    add_into(&mut grads.out_w, &d_out_w)?;
    add_into(&mut grads.out_b, &d_out_b)?;
    Ok(())
}

fn class_index(label: Label) -> usize {
    match label {
        Label::Negative => 0,
        Label::Positive => 1,
    }
}

/// Everything `train` needs besides the config.
pub struct TrainInput<'a> {
    pub train: &'a [(EncodedDocument, Label)],
    pub validation: &'a [(EncodedDocument, Label)],
    pub embeddings: &'a EmbeddingSet,
    /// Content hash of the vocabulary the documents were encoded with;
    /// stored in the checkpoint and verified again at prediction time.
    pub vocab_hash: u64,
    /// Content hash of the concept lexicon, same role.
    pub lexicon_hash: u64,
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

pub struct TrainOutcome {
    /// The parameters from the epoch with the best validation F1 (later
    /// epochs win ties; with no validation set, the final epoch).
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochStats>,
}

/// Encodes labeled documents for training; a missing label is an error.
pub fn encode_labeled(
    docs: &[Document],
    vocab: &Vocabulary,
    lexicon: &ConceptLexicon,
    n: usize,
) -> Result<Vec<(EncodedDocument, Label)>> {
    docs.iter()
        .map(|d| {
            let label = d
                .label
                .ok_or_else(|| Error::Data(format!("document {} has no label", d.pmid)))?;
            Ok((encode(d, vocab, lexicon, n)?, label))
        })
        .collect()
}

fn validation_metrics(
    params: &ModelParams,
    input: &TrainInput<'_>,
    cfg: &ModelConfig,
) -> Result<Metrics> {
    if input.validation.is_empty() {
        return Ok(Metrics {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
    }
    let mut counts = ConfusionCounts {
        true_pos: 0,
        false_pos: 0,
        false_neg: 0,
        true_neg: 0,
    };
    for (enc, label) in input.validation {
        let inputs = build_inputs(enc, input.embeddings, cfg)?;
        let cache = forward(params, &inputs, cfg, Phase::Eval)?;
        let p = cache.probs.data();
        let predicted_positive = p[1] >= p[0];
        match (predicted_positive, label) {
            (true, Label::Positive) => counts.true_pos += 1,
            (true, Label::Negative) => counts.false_pos += 1,
            (false, Label::Positive) => counts.false_neg += 1,
            (false, Label::Negative) => counts.true_neg += 1,
        }
    }
    Ok(precision_recall_f1(&counts))
}

/// Mini-batch Adam over frozen-embedding inputs. Fully deterministic for a
/// fixed config: init, per-epoch shuffling, and dropout each draw from
/// their own seed stream.
pub fn train(input: &TrainInput<'_>, cfg: &ModelConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if input.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let has_pos = input.train.iter().any(|(_, l)| *l == Label::Positive);
    let has_neg = input.train.iter().any(|(_, l)| *l == Label::Negative);
    if !has_pos || !has_neg {
        return Err(Error::Data(
            "training split must contain both positive and negative documents".into(),
        ));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[MODEL_INIT_STREAM]));
    let mut params = ModelParams::init(cfg, &mut init_rng);
    let mut adam = Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut best = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let n_train = input.train.len();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[DROPOUT_STREAM, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = ModelParams::zeros(cfg);
            for &idx in batch {
                let (enc, label) = &input.train[idx];
                let inputs = build_inputs(enc, input.embeddings, cfg)?;
                let mask = ops::dropout_mask(cfg.hidden_dim, cfg.drop_rate, &mut dropout_rng)?;
                let phase = Phase::Train {
                    dropout_mask: &mask,
                };
                let target = class_index(*label);
                let (loss, cache) = forward_loss(&params, &inputs, cfg, phase, target)?;
                backward(&params, &inputs, cfg, phase, &cache, target, &mut grads)?;
                loss_sum += loss;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut params.tensors_mut(), &grads.tensors())?;
        }
        let train_loss = loss_sum / n_train as f64;
        let metrics = validation_metrics(&params, input, cfg)?;
        history.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_precision: metrics.precision,
            val_recall: metrics.recall,
            val_f1: metrics.f1,
        });
        if metrics.f1 >= best_f1 {
            best_f1 = metrics.f1;
            best = params.clone();
        }
    }
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint {
            config: cfg.clone(),
            vocab_hash: input.vocab_hash,
            lexicon_hash: input.lexicon_hash,
            params: best,
        },
        history,
    })
}

/// Writes the history as CSV: epoch, mean training loss, then validation
/// precision/recall/F1 as percentages.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_precision,val_recall,val_f1\n");
    for row in history {
        out.push_str(&format!(
            "{},{:.6},{:.3},{:.3},{:.3}\n",
            row.epoch, row.train_loss, row.val_precision, row.val_recall, row.val_f1
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A trained model: config, compatibility hashes, and every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub vocab_hash: u64,
    pub lexicon_hash: u64,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: ModelConfig,
    vocab_hash: u64,
    lexicon_hash: u64,
}

impl ModelCheckpoint {
    /// Binary layout: magic `KMC1`, little-endian u32 JSON header length,
    /// the JSON header (config and hashes), then every parameter tensor as
    /// little-endian f64 in [`ModelParams::tensors`] order. Tensor shapes
    /// are reconstructed from the config, so the payload is pure data.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC).map_err(|e| Error::io(path, e))?;
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config.clone(),
            vocab_hash: self.vocab_hash,
            lexicon_hash: self.lexicon_hash,
        })
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        w.write_u32::<LittleEndian>(header.len() as u32)
            .map_err(|e| Error::io(path, e))?;
        w.write_all(&header).map_err(|e| Error::io(path, e))?;
        for t in self.params.tensors() {
            for &v in t.data() {
                w.write_f64::<LittleEndian>(v).map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelCheckpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| {
            Error::Format(format!("{}: too short to be a model checkpoint", path.display()))
        })?;
        if &magic != CHECKPOINT_MAGIC {
            if magic.starts_with(b"KMC") {
                return Err(Error::Format(format!(
                    "{}: unsupported checkpoint version `{}`; this build reads `KMC1`",
                    path.display(),
                    String::from_utf8_lossy(&magic)
                )));
            }
            return Err(Error::Format(format!(
                "{}: not a model checkpoint (bad magic bytes)",
                path.display()
            )));
        }
        let header_len = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Format(format!("{}: truncated header length", path.display())))?
            as usize;
        if header_len > 1 << 20 {
            return Err(Error::Format(format!(
                "{}: implausible header length {header_len}",
                path.display()
            )));
        }
        let mut hbuf = vec![0u8; header_len];
        r.read_exact(&mut hbuf)
            .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
        let header: CheckpointHeader = serde_json::from_slice(&hbuf)
            .map_err(|e| Error::Format(format!("{}: invalid checkpoint header: {e}", path.display())))?;
        header.config.validate()?;
        let mut params = ModelParams::zeros(&header.config);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = r.read_f64::<LittleEndian>().map_err(|_| {
                    Error::Format(format!("{}: truncated tensor data", path.display()))
                })?;
            }
        }
        let mut extra = [0u8; 1];
        match r.read(&mut extra) {
            Ok(0) => {}
            Ok(_) => {
                return Err(Error::Format(format!(
                    "{}: trailing bytes after tensor data",
                    path.display()
                )))
            }
            Err(e) => return Err(Error::io(path, e)),
        }
        Ok(ModelCheckpoint {
            config: header.config,
            vocab_hash: header.vocab_hash,
            lexicon_hash: header.lexicon_hash,
            params,
        })
    }
}

/// One scored document. `score` is the positive-class probability; the
/// label is positive exactly when `score >= 0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pmid: String,
    pub label: Label,
    pub score: f64,
}

/// Scores documents with a trained checkpoint. The vocabulary and lexicon
/// must hash-match the ones used at training time; anything else would
/// silently permute the embedding rows.
pub fn predict(
    ckpt: &ModelCheckpoint,
    docs: &[Document],
    vocab: &Vocabulary,
    lexicon: &ConceptLexicon,
    embeddings: &EmbeddingSet,
) -> Result<Vec<Prediction>> {
    if vocab.content_hash() != ckpt.vocab_hash {
        return Err(Error::Compatibility(format!(
            "vocabulary hash {:#018x} does not match the checkpoint's {:#018x}",
            vocab.content_hash(),
            ckpt.vocab_hash
        )));
    }
    if lexicon.content_hash() != ckpt.lexicon_hash {
        return Err(Error::Compatibility(format!(
            "concept lexicon hash {:#018x} does not match the checkpoint's {:#018x}",
            lexicon.content_hash(),
            ckpt.lexicon_hash
        )));
    }
    let cfg = &ckpt.config;
    docs.iter()
        .map(|doc| {
            let enc = encode(doc, vocab, lexicon, cfg.n)?;
            let inputs = build_inputs(&enc, embeddings, cfg)?;
            let cache = forward(&ckpt.params, &inputs, cfg, Phase::Eval)?;
            let p = cache.probs.data();
            let label = if p[1] >= p[0] {
                Label::Positive
            } else {
                Label::Negative
            };
            Ok(Prediction {
                pmid: doc.pmid.clone(),
                label,
                score: p[1],
            })
        })
        .collect()
}

/// Result of a whole-model gradient check.
#[derive(Debug, Clone)]
pub struct ModelGradReport {
    /// Kink-free trials completed.
    pub trials: usize,
    /// Parameter components compared across all trials.
    pub components: usize,
    pub max_rel_err: f64,
    /// Where the worst error occurred, e.g. `conv2_filters[17]`.
    pub worst: String,
}

/// Compares every analytic parameter gradient against central finite
/// differences on randomly initialized models and inputs.
///
/// ReLU and max pooling are only piecewise differentiable, so trials where
/// any pre-activation sits within `KINK_MARGIN_FACTOR * eps` (scaled by how
/// much a single parameter nudge can move that pre-activation) of a kink,
/// or where a pooling winner leads by less than twice that, are discarded
/// and redrawn; the finite-difference probe then provably stays on one
/// smooth piece. Dropout uses one fixed mask per trial for the same reason.
pub fn check_model_gradients(
    cfg: &ModelConfig,
    trials: usize,
    eps: f64,
    seed: u64,
) -> Result<ModelGradReport> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::Config("gradient check needs at least one trial".into()));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("step size {eps} must be positive")));
    }
    let names = tensor_names(cfg);
    let k = cfg.k();
    let mut max_rel_err = 0.0f64;
    let mut worst = String::from("none");
    let mut components = 0usize;
    let mut completed = 0usize;
    let mut attempts = 0usize;
    let max_attempts = trials.saturating_mul(200);
    while completed < trials {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::GradCheck(format!(
                "could not find {trials} kink-free trials in {max_attempts} attempts"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[GRADCHECK_STREAM, attempts as u64]));
        let mut params = ModelParams::init(cfg, &mut rng);
        let inputs: Vec<Tensor> = (0..cfg.channels)
            .map(|_| Tensor::uniform(&[cfg.n, k], -1.0, 1.0, &mut rng))
            .collect();
        let target = rng.random_range(0..2usize);
        let mask = ops::dropout_mask(cfg.hidden_dim, cfg.drop_rate, &mut rng)?;
        let phase = Phase::Train {
            dropout_mask: &mask,
        };
        let (_, cache) = forward_loss(&params, &inputs, cfg, phase, target)?;
        if !trial_is_kink_free(&params, &inputs, &cache, eps) {
            continue;
        }
        completed += 1;
        let mut grads = ModelParams::zeros(cfg);
        backward(&params, &inputs, cfg, phase, &cache, target, &mut grads)?;
        let analytic: Vec<Tensor> = grads.tensors().into_iter().cloned().collect();
        for (ti, gt) in analytic.iter().enumerate() {
            for ci in 0..gt.len() {
                let original = *param_component_mut(&mut params, ti, ci);
                *param_component_mut(&mut params, ti, ci) = original + eps;
                let (loss_plus, _) = forward_loss(&params, &inputs, cfg, phase, target)?;
                *param_component_mut(&mut params, ti, ci) = original - eps;
                let (loss_minus, _) = forward_loss(&params, &inputs, cfg, phase, target)?;
                *param_component_mut(&mut params, ti, ci) = original;
                let fd = (loss_plus - loss_minus) / (2.0 * eps);
                let err = rel_err(gt.data()[ci], fd);
                components += 1;
                if err > max_rel_err {
                    max_rel_err = err;
                    worst = format!("{}[{ci}] (trial {completed})", names[ti]);
                }
            }
        }
    }
    Ok(ModelGradReport {
        trials: completed,
        components,
        max_rel_err,
        worst,
    })
}

fn param_component_mut(params: &mut ModelParams, ti: usize, ci: usize) -> &mut f64 {
    let t = params
        .tensors_mut()
        .into_iter()
        .nth(ti)
        .expect("tensor index in range");
    &mut t.data_mut()[ci]
}

/// A perturbation of a single parameter by `eps` moves any convolution
/// pre-activation by at most `eps * max(1, |x|_inf)`; a pooled value moves
/// the same amount once winners are stable, and a hidden pre-activation by
/// at most that times the largest column L1 norm of the hidden weights (or
/// `eps * |pooled|_inf` when the hidden weight itself is perturbed). Each
/// margin below is that bound times [`KINK_MARGIN_FACTOR`].
fn trial_is_kink_free(
    params: &ModelParams,
    inputs: &[Tensor],
    cache: &ForwardCache,
    eps: f64,
) -> bool {
    let xmax = inputs
        .iter()
        .flat_map(|t| t.data())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let base = KINK_MARGIN_FACTOR * eps * xmax.max(1.0);
    for t in &cache.conv_avg {
        for &v in t.data() {
            if v.abs() < base {
                return false;
            }
        }
    }
    for act in &cache.conv_act {
        let (l, m) = (act.shape()[0], act.shape()[1]);
        if l < 2 {
            continue;
        }
        for c in 0..m {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for i in 0..l {
                let v = act.data()[i * m + c];
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
            if best <= 0.0 {
                // Entirely inactive feature: constant zero under any
                // in-margin perturbation, so no pooling kink to avoid.
                continue;
            }
            if best - second < 2.0 * base {
                return false;
            }
        }
    }
    let pooled_max = cache
        .pooled
        .data()
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let (nin, nout) = (params.hidden_w.shape()[0], params.hidden_w.shape()[1]);
    let mut col_l1_max = 0.0f64;
    for o in 0..nout {
        let mut s = 0.0;
        for i in 0..nin {
            s += params.hidden_w.data()[i * nout + o].abs();
        }
        col_l1_max = col_l1_max.max(s);
    }
    let hidden_margin =
        KINK_MARGIN_FACTOR * eps * pooled_max.max(1.0).max(xmax.max(1.0) * col_l1_max.max(1.0));
    for &v in cache.hidden_pre.data() {
        if v.abs() < hidden_margin {
            return false;
        }
    }
    true
}
