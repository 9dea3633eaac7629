//! Labeled collection construction: train/validation/test splits, both
//! negative-sampling strategies, and keyword extraction.
//!
//! Two split strategies exist. The synchronous split shuffles documents
//! within each label stratum and cuts contiguously by the requested
//! ratios, so train and test cover the same time period. The asynchronous
//! split sends every document dated before the cutoff (default practice:
//! 2018-01-01) to train/validation and everything on or after it to test,
//! reproducing a "train on old literature, evaluate on new" protocol.
//!
//! Negative sampling is either uniform from a pool (minus any pmid that
//! appears in the positive set) or "ambiguous": pool documents that look
//! superficially relevant because they mention at least one gene phrase
//! and one disease phrase, or contain one of the top positive-set
//! keywords. Ambiguous negatives make a materially harder benchmark than
//! random ones.
//!
//! All sampling is fully determined by the seed recorded in the manifest.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::{compose_text, tokenize, ConceptLexicon, Document, Label};
use crate::util::mix_seed;
use crate::{Error, Result};

/// Keywords mined from the positive set for the ambiguous-negative query.
pub const DEFAULT_KEYWORD_COUNT: usize = 18;

const STRATUM_STREAM: u64 = 0x30;
const VALIDATION_STREAM: u64 = 0x31;
const SAMPLE_STREAM: u64 = 0x32;

/// How a manifest's documents were assigned to parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    Synchronous,
    Asynchronous,
}

/// Which part of a split a document landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// The persistent record of a split: pmid lists per part plus the
/// parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub strategy: SplitStrategy,
    pub seed: u64,
    pub cutoff_date: Option<NaiveDate>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    strategy: SplitStrategy,
    seed: u64,
    cutoff_date: Option<NaiveDate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRow {
    pmid: String,
    part: Part,
}

impl SplitManifest {
    /// Pairwise disjointness of the three pmid lists (and uniqueness
    /// within each); enforced on every load.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, Part> = HashMap::new();
        for (part, list) in [
            (Part::Train, &self.train),
            (Part::Validation, &self.validation),
            (Part::Test, &self.test),
        ] {
            for pmid in list {
                if let Some(prior) = seen.insert(pmid, part) {
                    return Err(Error::Validation(format!(
                        "pmid `{pmid}` assigned to {prior:?} and {part:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    /// All pmids with their parts, in manifest order.
    pub fn assignments(&self) -> impl Iterator<Item = (&str, Part)> {
        fn tag(list: &[String], part: Part) -> impl Iterator<Item = (&str, Part)> {
            list.iter().map(move |p| (p.as_str(), part))
        }
        tag(&self.train, Part::Train)
            .chain(tag(&self.validation, Part::Validation))
            .chain(tag(&self.test, Part::Test))
    }

    /// JSONL: one header object, then one `{pmid, part}` row per document.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            let header = ManifestHeader {
                strategy: self.strategy,
                seed: self.seed,
                cutoff_date: self.cutoff_date,
            };
            writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
            for (pmid, part) in self.assignments() {
                let row = ManifestRow {
                    pmid: pmid.to_string(),
                    part,
                };
                writeln!(w, "{}", serde_json::to_string(&row).expect("row serializes"))?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    /// Resolves the manifest against a document collection. Documents the
    /// manifest does not mention are ignored; a manifest pmid without a
    /// document is an error.
    pub fn partition<'a>(
        &self,
        docs: &'a [Document],
    ) -> Result<(Vec<&'a Document>, Vec<&'a Document>, Vec<&'a Document>)> {
        fn collect<'a>(
            by_pmid: &HashMap<&str, &'a Document>,
            pmids: &[String],
        ) -> Result<Vec<&'a Document>> {
            pmids
                .iter()
                .map(|p| {
                    by_pmid.get(p.as_str()).copied().ok_or_else(|| {
                        Error::Lookup(format!("manifest pmid `{p}` not in the document set"))
                    })
                })
                .collect()
        }
        let by_pmid: HashMap<&str, &Document> =
            docs.iter().map(|d| (d.pmid.as_str(), d)).collect();
        Ok((
            collect(&by_pmid, &self.train)?,
            collect(&by_pmid, &self.validation)?,
            collect(&by_pmid, &self.test)?,
        ))
    }

    pub fn read(path: &Path) -> Result<SplitManifest> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty manifest", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::parse(path, 1, e.to_string()))?;
        let mut manifest = SplitManifest {
            strategy: header.strategy,
            seed: header.seed,
            cutoff_date: header.cutoff_date,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ManifestRow = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, lineno + 2, e.to_string()))?;
            match row.part {
                Part::Train => manifest.train.push(row.pmid),
                Part::Validation => manifest.validation.push(row.pmid),
                Part::Test => manifest.test.push(row.pmid),
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Shuffles within each label stratum and cuts contiguously by ratio, so
/// every part mirrors the corpus label balance.
pub fn synchronous_split(
    docs: &[Document],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitManifest> {
    let (rt, rv, rs) = ratios;
    if !(rt > 0.0 && rv > 0.0 && rs > 0.0) {
        return Err(Error::Config("split ratios must all be positive".into()));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    if docs.len() < 3 {
        return Err(Error::Data(format!(
            "cannot split {} documents three ways",
            docs.len()
        )));
    }
    let mut manifest = SplitManifest {
        strategy: SplitStrategy::Synchronous,
        seed,
        cutoff_date: None,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    // Strata in a fixed order so output order is reproducible.
    let strata: [(Option<Label>, u64); 3] = [
        (Some(Label::Positive), 1),
        (Some(Label::Negative), 2),
        (None, 0),
    ];
    for (label, tag) in strata {
        let mut pmids: Vec<&str> = docs
            .iter()
            .filter(|d| d.label == label)
            .map(|d| d.pmid.as_str())
            .collect();
        if pmids.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[STRATUM_STREAM, tag]));
        pmids.shuffle(&mut rng);
        let n = pmids.len();
        let n_train = ((n as f64 * rt).round() as usize).min(n);
        let n_val = ((n as f64 * rv).round() as usize).min(n - n_train);
        for (i, pmid) in pmids.into_iter().enumerate() {
            let dest = if i < n_train {
                &mut manifest.train
            } else if i < n_train + n_val {
                &mut manifest.validation
            } else {
                &mut manifest.test
            };
            dest.push(pmid.to_string());
        }
    }
    manifest.validate()?;
    Ok(manifest)
}

/// Time-based split: documents dated before the cutoff go to train (with
/// a seeded `val_fraction` carved out for validation); documents on or
/// after the cutoff go to test. Every document must carry a date.
pub fn asynchronous_split(
    docs: &[Document],
    cutoff: NaiveDate,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitManifest> {
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction must lie in [0, 1], got {val_fraction}"
        )));
    }
    let mut old: Vec<&str> = Vec::new();
    let mut test: Vec<String> = Vec::new();
    for d in docs {
        let date = d.date.ok_or_else(|| {
            Error::Validation(format!(
                "document `{}` has no date; time-based splits need one",
                d.pmid
            ))
        })?;
        if date < cutoff {
            old.push(d.pmid.as_str());
        } else {
            test.push(d.pmid.clone());
        }
    }
    if test.is_empty() {
        log::warn!("no documents dated on or after {cutoff}; test set is empty");
    }
    let n_val = ((old.len() as f64 * val_fraction).round() as usize).min(old.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[VALIDATION_STREAM]));
    let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, old.len(), n_val)
        .into_iter()
        .collect();
    let mut manifest = SplitManifest {
        strategy: SplitStrategy::Asynchronous,
        seed,
        cutoff_date: Some(cutoff),
        train: Vec::new(),
        validation: Vec::new(),
        test,
    };
    for (i, pmid) in old.into_iter().enumerate() {
        if chosen.contains(&i) {
            manifest.validation.push(pmid.to_string());
        } else {
            manifest.train.push(pmid.to_string());
        }
    }
    manifest.validate()?;
    Ok(manifest)
}

/// What "highest frequency" counts when ranking keywords.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrequencyMode {
    /// Number of documents containing the token; robust to one verbose
    /// abstract dominating the ranking.
    #[default]
    Document,
    /// Raw occurrence count across the corpus.
    Term,
}

fn stopwords() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        // Each entry passes through the tokenizer, so contraction forms
        // in the shipped list land as their token pieces.
        include_str!("../data/stopwords.txt")
            .lines()
            .flat_map(tokenize)
            .collect()
    })
}

fn is_pure_number(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_digit())
}

/// Top `k` non-stopword, non-numeric tokens of the positive set, ranked
/// by descending frequency with lexicographic tie-breaks. Returns fewer
/// than `k` (with a warning) when the candidate pool is smaller.
pub fn keyword_top_k(positives: &[Document], k: usize) -> Result<Vec<String>> {
    keyword_top_k_with(positives, k, FrequencyMode::Document)
}

pub fn keyword_top_k_with(
    positives: &[Document],
    k: usize,
    mode: FrequencyMode,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Config("keyword count must be at least 1".into()));
    }
    let stop = stopwords();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in positives {
        let tokens = tokenize(&compose_text(doc));
        let counted: Box<dyn Iterator<Item = &String>> = match mode {
            FrequencyMode::Document => Box::new(tokens.iter().collect::<BTreeSet<_>>().into_iter()),
            FrequencyMode::Term => Box::new(tokens.iter()),
        };
        for token in counted {
            if stop.contains(token) || is_pure_number(token) {
                continue;
            }
            *counts.entry(token.clone()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if ranked.len() < k {
        log::warn!(
            "only {} keyword candidates available, {k} requested",
            ranked.len()
        );
    }
    ranked.truncate(k);
    Ok(ranked.into_iter().map(|(t, _)| t).collect())
}

/// Uniform sample of `count` pool documents whose pmids do not appear in
/// the positive set, each labeled negative.
pub fn negative_sample_random(
    pool: &[Document],
    count: usize,
    positives: &[Document],
    seed: u64,
) -> Result<Vec<Document>> {
    let positive_ids: HashSet<&str> = positives.iter().map(|d| d.pmid.as_str()).collect();
    let eligible: Vec<&Document> = pool
        .iter()
        .filter(|d| !positive_ids.contains(d.pmid.as_str()))
        .collect();
    if eligible.len() < count {
        return Err(Error::Data(format!(
            "need {count} negatives but only {} pool documents remain after \
             removing positives",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[SAMPLE_STREAM]));
    let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, eligible.len(), count)
        .into_iter()
        .collect();
    Ok(chosen
        .into_iter()
        .map(|i| {
            let mut doc = eligible[i].clone();
            doc.label = Some(Label::Negative);
            doc
        })
        .collect())
}

/// Inputs for [`negative_sample_ambiguous`].
pub struct NegativeSampleSpec<'a> {
    pub pool: &'a [Document],
    pub count: usize,
    pub gene_lexicon: &'a ConceptLexicon,
    pub disease_lexicon: &'a ConceptLexicon,
    /// Positive-set keywords mined for the candidate query; the
    /// conventional setting is [`DEFAULT_KEYWORD_COUNT`].
    pub keyword_count: usize,
    pub seed: u64,
}

/// Harder negatives: pool documents that mention at least one gene phrase
/// and one disease phrase, or contain a top positive-set keyword. Any
/// pmid also present in the positives is removed, then the candidates are
/// seeded-sampled down to `count`. When fewer candidates than `count`
/// exist, all of them are returned with a warning.
pub fn negative_sample_ambiguous(
    spec: &NegativeSampleSpec<'_>,
    positives: &[Document],
) -> Result<Vec<Document>> {
    if spec.gene_lexicon.phrase_count() == 0 || spec.disease_lexicon.phrase_count() == 0 {
        return Err(Error::Validation(
            "ambiguous sampling needs non-empty gene and disease lexicons".into(),
        ));
    }
    let keywords: HashSet<String> = keyword_top_k(positives, spec.keyword_count)?
        .into_iter()
        .collect();
    let positive_ids: HashSet<&str> = positives.iter().map(|d| d.pmid.as_str()).collect();
    let candidates: Vec<&Document> = spec
        .pool
        .iter()
        .filter(|d| {
            if positive_ids.contains(d.pmid.as_str()) {
                return false;
            }
            let tokens = tokenize(&compose_text(d));
            let mention = spec.gene_lexicon.matches_any(&tokens)
                && spec.disease_lexicon.matches_any(&tokens);
            mention || tokens.iter().any(|t| keywords.contains(t))
        })
        .collect();
    let chosen: Vec<&Document> = if candidates.len() <= spec.count {
        if candidates.len() < spec.count {
            log::warn!(
                "ambiguous candidate set has {} documents, {} requested; returning all",
                candidates.len(),
                spec.count
            );
        }
        candidates
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[SAMPLE_STREAM]));
        let picks: BTreeSet<usize> =
            rand::seq::index::sample(&mut rng, candidates.len(), spec.count)
                .into_iter()
                .collect();
        picks.into_iter().map(|i| candidates[i]).collect()
    };
    Ok(chosen
        .into_iter()
        .map(|d| {
            let mut doc = d.clone();
            doc.label = Some(Label::Negative);
            doc
        })
        .collect())
}
