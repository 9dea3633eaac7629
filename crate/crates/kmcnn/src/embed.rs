//! Concept-vector training and word-vector tables.
//!
//! [`train_skipgram`] turns a walk corpus into dense vectors using
//! skip-gram with negative sampling: for every window-co-occurring pair
//! (w, c) it pushes `sigma(u_w . v_c)` toward 1 and, for a handful of
//! table-sampled negatives n, pushes `sigma(u_w . v_n)` toward 0. The
//! input-side vectors `u` are the published embedding.
//!
//! [`EmbeddingMatrix`] is the in-memory table, loadable from and savable to
//! the two word2vec interchange formats (text and binary).
//!
//! # Update recipe
//!
//! The trainer follows this exact procedure, which tests replicate
//! independently; any change here is a format-level break:
//!
//! * vocabulary ids by first occurrence in corpus order; frequencies
//!   counted over all tokens;
//! * negative-sampling table: cumulative `freq^0.75` over vocabulary ids,
//!   one uniform `f64` draw per negative, binary search into the table;
//!   a draw equal to the positive context is skipped (not redrawn);
//! * input vectors initialized `U(-0.5/dim, +0.5/dim)` per component from
//!   `ChaCha8(mix(seed, INIT_STREAM))`; output vectors start at zero;
//! * pairs visited in corpus order, window symmetric and untruncated;
//!   negatives drawn from `ChaCha8(mix(seed, DRAW_STREAM))` in single-
//!   threaded mode;
//! * per-pair update with learning rate `a`: for the positive target and
//!   each kept negative, `g = (label - sigma(u.v)) * a`, accumulate
//!   `g * v` into a buffer, apply `v += g * u` immediately, and add the
//!   buffer into `u` once the pair's targets are done. Vectors are stored
//!   as `f32`; all arithmetic happens in `f64` and is rounded back per
//!   write;
//! * the learning rate decays linearly with processed center positions to
//!   a floor of `1e-4` of its starting value;
//! * per-epoch loss is the mean of `-ln sigma(u.v)` (positives) plus
//!   `-ln(1 - sigma(u.v))` (kept negatives) over the epoch's pairs.
//!
//! With `threads > 1` the path list is split into contiguous chunks
//! updated concurrently without locks; concurrent read-modify-write races
//! are tolerated, losing the determinism guarantee, and the output is
//! marked accordingly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::WalkCorpus;
use crate::util::mix_seed;
use crate::{Error, Result};

/// Seed-stream tags; exposed to the crate so reference implementations in
/// tests can reproduce the exact RNG streams.
pub(crate) const INIT_STREAM: u64 = 0x10;
pub(crate) const DRAW_STREAM: u64 = 0x20;

/// Dense token-to-vector table with `f32` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    tokens: Vec<String>,
    by_token: HashMap<String, usize>,
    data: Vec<f32>,
}

/// What [`EmbeddingMatrix::lookup`] does with an unknown key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OovPolicy {
    /// Return an all-zero vector.
    Zero,
    /// Return a lookup error.
    Error,
}

/// On-disk representations of a vector table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    Text,
    Binary,
}

impl std::str::FromStr for VectorFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<VectorFormat> {
        match s {
            "text" => Ok(VectorFormat::Text),
            "binary" => Ok(VectorFormat::Binary),
            other => Err(Error::Config(format!(
                "unknown vector format `{other}` (expected text or binary)"
            ))),
        }
    }
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> EmbeddingMatrix {
        EmbeddingMatrix {
            dim,
            tokens: Vec::new(),
            by_token: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Appends a token's vector; the token takes the next dense id.
    pub fn push(&mut self, token: &str, vector: &[f32]) -> Result<usize> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for `{token}` has {} components, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.by_token.contains_key(token) {
            return Err(Error::Format(format!("duplicate token `{token}`")));
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.by_token.insert(token.to_string(), id);
        self.data.extend_from_slice(vector);
        Ok(id)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.by_token.get(token).copied()
    }

    pub fn vector(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.id(token).map(|id| self.vector(id))
    }

    /// Vector for `token`, with unknown keys handled per `policy`.
    pub fn lookup(&self, token: &str, policy: OovPolicy) -> Result<Vec<f32>> {
        match (self.get(token), policy) {
            (Some(v), _) => Ok(v.to_vec()),
            (None, OovPolicy::Zero) => Ok(vec![0.0; self.dim]),
            (None, OovPolicy::Error) => {
                Err(Error::Lookup(format!("token `{token}` not in vector table")))
            }
        }
    }

    pub fn save(&self, path: &Path, format: VectorFormat) -> Result<()> {
        match format {
            VectorFormat::Text => self.save_text(path),
            VectorFormat::Binary => self.save_binary(path),
        }
    }

    /// Writes the word2vec text format: a `count dim` header line, then one
    /// `token v1 .. vdim` line per entry. `f32` values print in shortest
    /// round-trip form, so a reload is component-exact.
    pub fn save_text(&self, path: &Path) -> Result<()> {
        self.check_savable()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(w, "{} {}", self.vocab_size(), self.dim)?;
            for (id, token) in self.tokens.iter().enumerate() {
                write!(w, "{token}")?;
                for v in self.vector(id) {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    /// Writes the word2vec binary format: the same text header, then per
    /// entry the token, a space, `dim` little-endian `f32`s, and a newline.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        self.check_savable()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(w, "{} {}", self.vocab_size(), self.dim)?;
            for (id, token) in self.tokens.iter().enumerate() {
                w.write_all(token.as_bytes())?;
                w.write_all(b" ")?;
                for &v in self.vector(id) {
                    w.write_f32::<LittleEndian>(v)?;
                }
                w.write_all(b"\n")?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    fn check_savable(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Validation(
                "refusing to write a vector table with an empty vocabulary".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path, format: VectorFormat) -> Result<EmbeddingMatrix> {
        match format {
            VectorFormat::Text => load_text(path),
            VectorFormat::Binary => load_binary(path),
        }
    }
}

/// Convenience wrapper matching [`EmbeddingMatrix::load`].
pub fn load_word_vectors(path: &Path, format: VectorFormat) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::load(path, format)
}

/// Convenience wrapper for the text-format save.
pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    m.save_text(path)
}

fn parse_header(line: &str, path: &Path) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace();
    let parse = |field: Option<&str>| -> Option<usize> { field?.parse().ok() };
    match (parse(it.next()), parse(it.next()), it.next()) {
        (Some(count), Some(dim), None) if count > 0 && dim > 0 => Ok((count, dim)),
        _ => Err(Error::Format(format!(
            "{}: header must be `count dim` with both positive, got {line:?}",
            path.display()
        ))),
    }
}

fn load_text(path: &Path) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let (count, dim) = parse_header(&header, path)?;
    let mut m = EmbeddingMatrix::new(dim);
    for line in &mut lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field");
        let values: Vec<f32> = fields
            .map(|f| {
                f.parse::<f32>().map_err(|_| {
                    Error::Format(format!("token `{token}`: unparseable component `{f}`"))
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Format(format!(
                "token `{token}`: {} components, header says {dim}",
                values.len()
            )));
        }
        if m.vocab_size() == count {
            return Err(Error::Format(format!(
                "{}: more than the {count} entries promised by the header",
                path.display()
            )));
        }
        m.push(token, &values)?;
    }
    if m.vocab_size() != count {
        return Err(Error::Format(format!(
            "{}: header promised {count} entries, found {}",
            path.display(),
            m.vocab_size()
        )));
    }
    Ok(m)
}

fn load_binary(path: &Path) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    read_until_byte(&mut r, b'\n', &mut header, path)?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Format(format!("{}: non-UTF-8 header", path.display())))?;
    let (count, dim) = parse_header(header.trim_end(), path)?;
    let mut m = EmbeddingMatrix::new(dim);
    let mut values = vec![0.0f32; dim];
    for _ in 0..count {
        let mut token_bytes = Vec::new();
        // The reference writer terminates each entry with '\n'; tolerate
        // and skip it (and a stray '\r') before the next token.
        loop {
            let b = read_byte(&mut r, path)?.ok_or_else(|| {
                Error::Format(format!(
                    "{}: ended after {} of {count} entries",
                    path.display(),
                    m.vocab_size()
                ))
            })?;
            match b {
                b'\n' | b'\r' if token_bytes.is_empty() => continue,
                b' ' => break,
                _ => token_bytes.push(b),
            }
        }
        let token = String::from_utf8(token_bytes)
            .map_err(|_| Error::Format(format!("{}: non-UTF-8 token", path.display())))?;
        r.read_f32_into::<LittleEndian>(&mut values).map_err(|_| {
            Error::Format(format!("token `{token}`: vector data truncated"))
        })?;
        m.push(&token, &values)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if rest.iter().any(|&b| b != b'\n' && b != b'\r') {
        return Err(Error::Format(format!(
            "{}: trailing bytes after the {count} entries promised by the header",
            path.display()
        )));
    }
    Ok(m)
}

fn read_byte(r: &mut impl Read, path: &Path) -> Result<Option<u8>> {
    let mut buf = [0u8; 1];
    match r.read(&mut buf) {
        Ok(0) => Ok(None),
        Ok(_) => Ok(Some(buf[0])),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_until_byte(
    r: &mut impl Read,
    stop: u8,
    out: &mut Vec<u8>,
    path: &Path,
) -> Result<()> {
    while let Some(b) = read_byte(r, path)? {
        if b == stop {
            return Ok(());
        }
        out.push(b);
    }
    Err(Error::Format(format!(
        "{}: unexpected end of file",
        path.display()
    )))
}

/// Skip-gram training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    /// Output vector dimension.
    pub dim: usize,
    /// Context radius: positions within `window` of the center pair with it.
    pub window: usize,
    /// Negative samples drawn per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    /// Starting learning rate; decays linearly to 1e-4 of this value.
    pub learning_rate: f64,
    pub seed: u64,
    /// 1 = deterministic; >1 = lock-free parallel updates (Hogwild), which
    /// forfeits determinism and is flagged in [`SkipGramOutput`].
    pub threads: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 108,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 42,
            threads: 1,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        let complain = |what: &str| Err(Error::Config(format!("skip-gram: {what}")));
        if self.dim == 0 {
            return complain("dim must be at least 1");
        }
        if self.window == 0 {
            return complain("window must be at least 1");
        }
        if self.negatives == 0 {
            return complain("negatives must be at least 1");
        }
        if self.epochs == 0 {
            return complain("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return complain("learning_rate must be positive and finite");
        }
        if self.threads == 0 {
            return complain("threads must be at least 1");
        }
        Ok(())
    }
}

/// Trained vectors plus training metadata.
#[derive(Debug)]
pub struct SkipGramOutput {
    pub embeddings: EmbeddingMatrix,
    /// Mean per-pair loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// False when `threads > 1` raced on the parameter tables.
    pub deterministic: bool,
}

/// Cumulative `freq^0.75` sampling table over vocabulary ids.
pub(crate) struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    pub(crate) fn new(frequencies: &[u64]) -> NegativeTable {
        let mut cumulative = Vec::with_capacity(frequencies.len());
        let mut acc = 0.0;
        for &f in frequencies {
            acc += (f as f64).powf(0.75);
            cumulative.push(acc);
        }
        NegativeTable { cumulative }
    }

    /// One uniform draw, binary-searched into the cumulative weights.
    pub(crate) fn draw(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let x = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }
}

/// `f32` parameter table with interior mutability, shared across training
/// threads. Single-threaded use is exact; concurrent use follows the
/// Hogwild contract (plain read-modify-write, races tolerated).
struct ParamTable {
    cells: Vec<AtomicU32>,
    dim: usize,
}

impl ParamTable {
    fn zeros(rows: usize, dim: usize) -> ParamTable {
        ParamTable {
            cells: (0..rows * dim).map(|_| AtomicU32::new(0)).collect(),
            dim,
        }
    }

    #[inline]
    fn read(&self, row: usize, d: usize) -> f64 {
        f32::from_bits(self.cells[row * self.dim + d].load(Ordering::Relaxed)) as f64
    }

    #[inline]
    fn write(&self, row: usize, d: usize, v: f64) {
        self.cells[row * self.dim + d].store((v as f32).to_bits(), Ordering::Relaxed);
    }

    fn row(&self, row: usize) -> Vec<f32> {
        (0..self.dim)
            .map(|d| f32::from_bits(self.cells[row * self.dim + d].load(Ordering::Relaxed)))
            .collect()
    }
}

struct Vocab {
    tokens: Vec<String>,
    by_token: HashMap<String, usize>,
    frequencies: Vec<u64>,
}

fn build_vocab(corpus: &WalkCorpus) -> Vocab {
    let mut vocab = Vocab {
        tokens: Vec::new(),
        by_token: HashMap::new(),
        frequencies: Vec::new(),
    };
    for path in corpus.sentences() {
        for token in path {
            match vocab.by_token.get(token) {
                Some(&id) => vocab.frequencies[id] += 1,
                None => {
                    vocab.by_token.insert(token.clone(), vocab.tokens.len());
                    vocab.tokens.push(token.clone());
                    vocab.frequencies.push(1);
                }
            }
        }
    }
    vocab
}

/// Trains skip-gram vectors over a walk corpus. See the module docs for
/// the exact update recipe and the determinism contract.
pub fn train_skipgram(corpus: &WalkCorpus, cfg: &SkipGramConfig) -> Result<SkipGramOutput> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("cannot train on an empty corpus".into()));
    }
    let vocab = build_vocab(corpus);
    let table = NegativeTable::new(&vocab.frequencies);
    let n = vocab.tokens.len();

    let input = ParamTable::zeros(n, cfg.dim);
    let output = ParamTable::zeros(n, cfg.dim);
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[INIT_STREAM]));
    let span = 0.5 / cfg.dim as f64;
    for row in 0..n {
        for d in 0..cfg.dim {
            input.write(row, d, init_rng.random_range(-span..span));
        }
    }

    // Paths as id sequences, in corpus order.
    let sentences: Vec<Vec<usize>> = corpus
        .sentences()
        .map(|s| s.iter().map(|t| vocab.by_token[t]).collect())
        .collect();
    let total_centers: u64 =
        sentences.iter().map(|s| s.len() as u64).sum::<u64>() * cfg.epochs as u64;
    let centers_done = AtomicU64::new(0);

    let worker = |paths: &[Vec<usize>], rng: &mut ChaCha8Rng| -> f64 {
        let mut epoch_loss = 0.0;
        for path in paths {
            for i in 0..path.len() {
                let done = centers_done.fetch_add(1, Ordering::Relaxed);
                let alpha = cfg.learning_rate
                    * (1.0 - done as f64 / total_centers as f64).max(1e-4);
                let w = path[i];
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(path.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let c = path[j];
                    let mut carry = vec![0.0f64; cfg.dim];
                    for t in 0..=cfg.negatives {
                        let (target, label) = if t == 0 {
                            (c, 1.0)
                        } else {
                            let nvi = table.draw(rng);
                            if nvi == c {
                                continue; // consumed the draw, skip the update
                            }
                            (nvi, 0.0)
                        };
                        let mut f = 0.0f64;
                        for d in 0..cfg.dim {
                            f += input.read(w, d) * output.read(target, d);
                        }
                        let sig = 1.0 / (1.0 + (-f).exp());
                        let g = (label - sig) * alpha;
                        let p = if label == 1.0 { sig } else { 1.0 - sig };
                        epoch_loss -= p.max(1e-12).ln();
                        for d in 0..cfg.dim {
                            let o = output.read(target, d);
                            carry[d] += g * o;
                            output.write(target, d, o + g * input.read(w, d));
                        }
                    }
                    for d in 0..cfg.dim {
                        input.write(w, d, input.read(w, d) + carry[d]);
                    }
                }
            }
        }
        epoch_loss
    };

    let pairs_per_epoch: u64 = sentences
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|i| {
                    let lo = i.saturating_sub(cfg.window);
                    let hi = (i + cfg.window).min(s.len() - 1);
                    (hi - lo) as u64
                })
                .sum::<u64>()
        })
        .sum();

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    if cfg.threads <= 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[DRAW_STREAM]));
        for _ in 0..cfg.epochs {
            let loss = worker(&sentences, &mut rng);
            epoch_loss.push(loss / pairs_per_epoch.max(1) as f64);
        }
    } else {
        let threads = cfg.threads.min(sentences.len().max(1));
        let chunk = sentences.len().div_ceil(threads);
        for _ in 0..cfg.epochs {
            // Worker RNGs are re-derived per epoch from (seed, stream,
            // thread); loss order is fixed by thread index even though the
            // parameter updates race.
            let losses: Vec<f64> = std::thread::scope(|scope| {
                let handles: Vec<_> = sentences
                    .chunks(chunk)
                    .enumerate()
                    .map(|(t, slice)| {
                        let worker = &worker;
                        scope.spawn(move || {
                            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                                cfg.seed,
                                &[DRAW_STREAM, t as u64],
                            ));
                            worker(slice, &mut rng)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            epoch_loss.push(losses.iter().sum::<f64>() / pairs_per_epoch.max(1) as f64);
        }
    }

    let mut embeddings = EmbeddingMatrix::new(cfg.dim);
    for (id, token) in vocab.tokens.iter().enumerate() {
        embeddings.push(token, &input.row(id))?;
    }
    Ok(SkipGramOutput {
        embeddings,
        epoch_loss,
        deterministic: cfg.threads <= 1,
    })
}

/// Cosine similarity of two equal-length vectors; 0 when either is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += (x as f64).powi(2);
        nb += (y as f64).powi(2);
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}
