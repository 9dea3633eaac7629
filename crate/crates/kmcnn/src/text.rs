//! Document ingestion and encoding.
//!
//! A [`Document`] is one PubMed-style record. Its searchable text is the
//! concatenation title, abstract, id, journal, publication type (fixed
//! order, so truncation semantics are stable). [`tokenize`] lowercases and
//! splits on any run of characters that are not letters, digits, or
//! hyphens. [`Vocabulary`] maps tokens to dense ids with 0 reserved for
//! padding and 1 for out-of-vocabulary tokens. [`ConceptLexicon`] maps
//! lowercased phrases to concept keys and assigns each distinct key a
//! dense id starting at 1 (0 means "no concept"); [`ConceptLexicon::link`]
//! does greedy left-to-right longest-match tagging. [`encode`] combines
//! all of it into the fixed-length paired id sequences the classifier
//! consumes.
//!
//! Interchange formats: documents as JSON Lines with fields
//! `pmid`/`title`/`abstract`/`journal`/`pub_type`/`date`/`label`;
//! lexicons as TSV `phrase<TAB>concept_key`; vocabularies as one token
//! per line in id order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::util::{fingerprint_strings, read_tsv};
use crate::{Error, Result};

/// Reserved vocabulary id for suffix padding.
pub const PAD_ID: usize = 0;
/// Reserved vocabulary id for out-of-vocabulary tokens.
pub const OOV_ID: usize = 1;

/// Binary relevance label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Label> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            other => Err(Error::Validation(format!(
                "unknown label `{other}`; expected positive or negative"
            ))),
        }
    }
}

/// One literature record. `date` and `label` may be absent; operations
/// that need them (time-based splits, training) reject documents that
/// lack them, naming the pmid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub pmid: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub journal: String,
    #[serde(default)]
    pub pub_type: String,
    #[serde(default)]
    pub date: Option<NaiveDate>,
    #[serde(default)]
    pub label: Option<Label>,
}

impl Document {
    /// A minimal record with only the identifying and textual fields set.
    pub fn new(pmid: &str, title: &str, abstract_text: &str) -> Document {
        Document {
            pmid: pmid.to_string(),
            title: title.to_string(),
            abstract_text: abstract_text.to_string(),
            journal: String::new(),
            pub_type: String::new(),
            date: None,
            label: None,
        }
    }
}

/// The token stream source: title, abstract, pmid, journal, and
/// publication type joined in that fixed order with single spaces.
/// Internal whitespace (newlines included) collapses to single spaces and
/// empty fields are skipped.
pub fn compose_text(d: &Document) -> String {
    let fields = [
        d.title.as_str(),
        d.abstract_text.as_str(),
        d.pmid.as_str(),
        d.journal.as_str(),
        d.pub_type.as_str(),
    ];
    let mut out = String::new();
    for field in fields {
        for word in field.split_whitespace() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
    }
    out
}

/// Lowercases and splits into maximal runs of letters, digits, and
/// hyphens; everything else separates tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() || ch == '-' {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token-to-id table. Id 0 is padding and id 1 is the out-of-vocabulary
/// marker; real tokens start at 2, ordered by descending corpus frequency
/// with lexicographic tie-breaks.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>, // tokens[i] has id i + 2
    by_token: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds the table from pre-tokenized sequences.
    pub fn from_token_lists<I, S>(lists: I, min_count: usize) -> Result<Vocabulary>
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for list in lists {
            for token in list {
                *counts.entry(token.as_ref().to_string()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Vocabulary::from_ordered_tokens(
            ranked.into_iter().map(|(t, _)| t),
        ))
    }

    fn from_ordered_tokens(tokens: impl IntoIterator<Item = String>) -> Vocabulary {
        let tokens: Vec<String> = tokens.into_iter().collect();
        let by_token = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 2))
            .collect();
        Vocabulary { tokens, by_token }
    }

    /// Id for a token; unknown tokens map to [`OOV_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.by_token.get(token).copied().unwrap_or(OOV_ID)
    }

    /// Whether the token has its own id (reserved ids do not count).
    pub fn contains(&self, token: &str) -> bool {
        self.by_token.contains_key(token)
    }

    /// Token for an id, if the id is assigned to one.
    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(2)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// Number of ids in use, the two reserved ones included.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved ids always exist
    }

    /// Tokens in id order (id 2 first).
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Order-sensitive fingerprint; stable across save/load, used to
    /// detect mismatched artifacts at prediction time.
    pub fn content_hash(&self) -> u64 {
        fingerprint_strings(self.tokens())
    }

    /// One token per line, id order. Reserved ids are implicit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            for t in &self.tokens {
                writeln!(w, "{t}")?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut seen = HashMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let token = line.trim_end_matches('\r').to_string();
            if token.is_empty() {
                return Err(Error::parse(path, lineno + 1, "empty token"));
            }
            if seen.insert(token.clone(), ()).is_some() {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("duplicate token `{token}`"),
                ));
            }
            tokens.push(token);
        }
        Ok(Vocabulary::from_ordered_tokens(tokens))
    }
}

/// Tokenizes every document's composed text and builds the vocabulary.
pub fn build_vocab(docs: &[Document], min_count: usize) -> Result<Vocabulary> {
    Vocabulary::from_token_lists(docs.iter().map(|d| tokenize(&compose_text(d))), min_count)
}

/// Phrase-to-concept dictionary. Phrases are stored as lowercased token
/// sequences; each distinct concept key gets a dense id starting at 1,
/// assigned in lexicographic key order so ids do not depend on file
/// ordering. Dense id 0 means "not part of any concept mention".
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptLexicon {
    /// Concept keys sorted lexicographically; keys[i] has dense id i + 1.
    keys: Vec<String>,
    key_ids: HashMap<String, usize>,
    /// First phrase token → (full phrase, dense concept id), longest
    /// phrase first.
    phrases: HashMap<String, Vec<(Vec<String>, usize)>>,
    phrase_count: usize,
}

impl ConceptLexicon {
    /// Builds from (phrase, concept key) pairs. Phrases are tokenized with
    /// [`tokenize`]; a phrase mapping to two different keys is an error,
    /// exact duplicates collapse.
    pub fn from_entries<I, A, B>(entries: I) -> Result<ConceptLexicon>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut by_phrase: HashMap<Vec<String>, String> = HashMap::new();
        for (phrase, key) in entries {
            let tokens = tokenize(phrase.as_ref());
            if tokens.is_empty() {
                return Err(Error::Validation(format!(
                    "lexicon phrase {:?} has no tokens",
                    phrase.as_ref()
                )));
            }
            let key = key.as_ref().to_string();
            if key.is_empty() {
                return Err(Error::Validation(format!(
                    "lexicon phrase {:?} has an empty concept key",
                    phrase.as_ref()
                )));
            }
            if let Some(existing) = by_phrase.get(&tokens) {
                if *existing != key {
                    return Err(Error::Validation(format!(
                        "phrase {:?} maps to both `{existing}` and `{key}`",
                        tokens.join(" ")
                    )));
                }
            } else {
                by_phrase.insert(tokens, key);
            }
        }
        let mut keys: Vec<String> = by_phrase.values().cloned().collect();
        keys.sort();
        keys.dedup();
        let key_ids: HashMap<String, usize> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i + 1))
            .collect();
        let mut phrases: HashMap<String, Vec<(Vec<String>, usize)>> = HashMap::new();
        let phrase_count = by_phrase.len();
        for (tokens, key) in by_phrase {
            let id = key_ids[&key];
            phrases
                .entry(tokens[0].clone())
                .or_default()
                .push((tokens, id));
        }
        for bucket in phrases.values_mut() {
            // Longest first for greedy matching; ties impossible since
            // equal token sequences collapsed above.
            bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Ok(ConceptLexicon {
            keys,
            key_ids,
            phrases,
            phrase_count,
        })
    }

    /// Loads a TSV of `phrase<TAB>concept_key` lines.
    pub fn load(path: &Path) -> Result<ConceptLexicon> {
        let rows = read_tsv(path, 2)?;
        ConceptLexicon::from_entries(
            rows.into_iter().map(|mut r| (r.remove(0), r.remove(0))),
        )
    }

    /// Number of distinct concept keys.
    pub fn concept_count(&self) -> usize {
        self.keys.len()
    }

    pub fn phrase_count(&self) -> usize {
        self.phrase_count
    }

    /// Concept key for a dense id (ids start at 1).
    pub fn key(&self, dense_id: usize) -> Option<&str> {
        dense_id
            .checked_sub(1)
            .and_then(|i| self.keys.get(i))
            .map(String::as_str)
    }

    /// Dense id for a concept key.
    pub fn dense_id(&self, key: &str) -> Option<usize> {
        self.key_ids.get(key).copied()
    }

    /// Concept keys in dense-id order (id 1 first).
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.keys.iter().map(String::as_str)
    }

    /// Greedy left-to-right longest-match tagging: every token covered by
    /// a matched phrase gets that phrase's dense concept id, everything
    /// else 0. Matches never overlap.
    pub fn link(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = vec![0usize; tokens.len()];
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.phrases.get(&tokens[i]).and_then(|bucket| {
                bucket.iter().find(|(phrase, _)| {
                    phrase.len() <= tokens.len() - i
                        && phrase
                            .iter()
                            .zip(&tokens[i..i + phrase.len()])
                            .all(|(a, b)| a == b)
                })
            });
            match hit {
                Some((phrase, id)) => {
                    for slot in &mut ids[i..i + phrase.len()] {
                        *slot = *id;
                    }
                    i += phrase.len();
                }
                None => i += 1,
            }
        }
        ids
    }

    /// True if any lexicon phrase occurs in the token sequence.
    pub fn matches_any(&self, tokens: &[String]) -> bool {
        self.link(tokens).iter().any(|&id| id != 0)
    }

    /// Fingerprint over the sorted (phrase, key) pairs; independent of
    /// file ordering.
    pub fn content_hash(&self) -> u64 {
        let mut entries: Vec<String> = self
            .phrases
            .values()
            .flatten()
            .map(|(tokens, id)| format!("{}\u{1}{}", tokens.join(" "), self.keys[*id - 1]))
            .collect();
        entries.sort();
        fingerprint_strings(entries.iter().map(String::as_str))
    }
}

/// Fixed-length encoding of one document: aligned token and concept id
/// sequences, suffix-padded with 0 to exactly `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDocument {
    pub token_ids: Vec<usize>,
    pub concept_ids: Vec<usize>,
}

/// Tokenizes the composed text, maps tokens through the vocabulary
/// (unknown → [`OOV_ID`]), truncates to the first `n` tokens, links
/// concepts over the kept tokens, and pads both sequences with 0.
pub fn encode(
    d: &Document,
    vocab: &Vocabulary,
    lex: &ConceptLexicon,
    n: usize,
) -> Result<EncodedDocument> {
    if n == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    let mut tokens = tokenize(&compose_text(d));
    tokens.truncate(n);
    let mut token_ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    let mut concept_ids = lex.link(&tokens);
    token_ids.resize(n, PAD_ID);
    concept_ids.resize(n, 0);
    Ok(EncodedDocument {
        token_ids,
        concept_ids,
    })
}

/// Reads a JSON Lines document collection, enforcing non-empty unique
/// pmids. Blank lines are skipped.
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        if doc.pmid.is_empty() {
            return Err(Error::parse(path, lineno + 1, "empty pmid"));
        }
        if let Some(first) = seen.insert(doc.pmid.clone(), lineno + 1) {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("pmid `{}` already appeared on line {first}", doc.pmid),
            ));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Writes a document collection as JSON Lines, enforcing the same pmid
/// invariants as [`read_documents`].
pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for doc in docs {
        if doc.pmid.is_empty() {
            return Err(Error::Validation("document with empty pmid".into()));
        }
        if seen.insert(&doc.pmid, ()).is_some() {
            return Err(Error::Validation(format!("duplicate pmid `{}`", doc.pmid)));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        let line = serde_json::to_string(doc)
            .map_err(|e| Error::Format(format!("cannot serialize `{}`: {e}", doc.pmid)))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_doc() -> Document {
        Document {
            pmid: "1".into(),
            title: "A".into(),
            abstract_text: "B".into(),
            journal: "J".into(),
            pub_type: "Review".into(),
            date: None,
            label: None,
        }
    }

    #[test]
    fn compose_orders_fields_and_skips_empties() {
        assert_eq!(compose_text(&full_doc()), "A B 1 J Review");
        let empty = Document {
            pmid: String::new(),
            ..Document::new("", "", "")
        };
        assert_eq!(compose_text(&empty), "");
        let messy = Document {
            title: "line one\nline two".into(),
            abstract_text: "  padded\t text ".into(),
            ..Document::new("9", "", "")
        };
        assert_eq!(compose_text(&messy), "line one line two padded text 9");
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(
            tokenize("GWAS-based study, 2019."),
            vec!["gwas-based", "study", "2019"]
        );
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("rs7329174"), vec!["rs7329174"]);
        assert_eq!(tokenize("p53/MDM2 (human)"), vec!["p53", "mdm2", "human"]);
    }

    #[test]
    fn vocab_orders_by_frequency_then_token() {
        let v = Vocabulary::from_token_lists([vec!["a", "a", "b"]], 1).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.len(), 4);

        let v = Vocabulary::from_token_lists([vec!["a", "a", "b"]], 2).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), OOV_ID);
        assert_eq!(v.len(), 3);

        let v = Vocabulary::from_token_lists(Vec::<Vec<&str>>::new(), 1).unwrap();
        assert_eq!(v.len(), 2);

        // Equal frequencies break ties lexicographically.
        let v = Vocabulary::from_token_lists([vec!["zz", "aa", "zz", "aa"]], 1).unwrap();
        assert_eq!(v.id("aa"), 2);
        assert_eq!(v.id("zz"), 3);
    }

    #[test]
    fn vocab_roundtrip_preserves_ids_and_hash() {
        let v = Vocabulary::from_token_lists([vec!["x", "x", "y", "z"]], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.content_hash(), back.content_hash());
        assert_eq!(back.token(2), Some("x"));
        assert_eq!(back.token(0), None);
        assert_eq!(back.token(1), None);
    }

    #[test]
    fn vocab_load_rejects_duplicates_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "a\nb\na\n").unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(Error::Parse { line: 3, .. })
        ));
        std::fs::write(&path, "a\n\nb\n").unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn lex(entries: &[(&str, &str)]) -> ConceptLexicon {
        ConceptLexicon::from_entries(entries.iter().copied()).unwrap()
    }

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn linking_prefers_longest_match() {
        let l = lex(&[("breast cancer", "C1")]);
        let ids = l.link(&toks(&["breast", "cancer", "risk"]));
        let c1 = l.dense_id("C1").unwrap();
        assert_eq!(ids, vec![c1, c1, 0]);

        let l = lex(&[("breast cancer", "C1"), ("breast", "C2")]);
        let c1 = l.dense_id("C1").unwrap();
        assert_eq!(l.link(&toks(&["breast", "cancer", "risk"])), vec![c1, c1, 0]);
        // The shorter phrase still matches when the longer one cannot.
        let c2 = l.dense_id("C2").unwrap();
        assert_eq!(l.link(&toks(&["breast", "risk"])), vec![c2, 0]);

        assert_eq!(l.link(&toks(&["lung", "injury"])), vec![0, 0]);
    }

    #[test]
    fn linking_is_insertion_order_independent() {
        let forward = lex(&[("breast cancer", "C1"), ("breast", "C2"), ("cancer", "C3")]);
        let reverse = lex(&[("cancer", "C3"), ("breast", "C2"), ("breast cancer", "C1")]);
        let sample = toks(&["breast", "cancer", "and", "cancer", "of", "breast"]);
        assert_eq!(forward.link(&sample), reverse.link(&sample));
        assert_eq!(forward.content_hash(), reverse.content_hash());
        // Dense ids come from sorted keys, not insertion order.
        assert_eq!(forward.dense_id("C1"), Some(1));
        assert_eq!(forward.dense_id("C2"), Some(2));
        assert_eq!(forward.dense_id("C3"), Some(3));
        assert_eq!(reverse.dense_id("C1"), Some(1));
    }

    #[test]
    fn lexicon_rejects_conflicts_and_empty_phrases() {
        let err = ConceptLexicon::from_entries([("breast", "C1"), ("breast", "C2")])
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let err = ConceptLexicon::from_entries([("...", "C1")]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        // Identical duplicates collapse.
        let l = lex(&[("breast", "C1"), ("Breast", "C1")]);
        assert_eq!(l.phrase_count(), 1);
    }

    #[test]
    fn lexicon_tsv_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        std::fs::write(&path, "breast cancer\tC0006142\nbrca1\tC0376571\n").unwrap();
        let l = ConceptLexicon::load(&path).unwrap();
        assert_eq!(l.concept_count(), 2);
        assert!(l.matches_any(&toks(&["the", "brca1", "gene"])));
        assert!(!l.matches_any(&toks(&["unrelated", "words"])));
        assert_eq!(l.key(1), Some("C0006142"));
        assert_eq!(l.key(0), None);
    }

    #[test]
    fn encode_pads_truncates_and_aligns() {
        let vocab = Vocabulary::from_token_lists([vec!["alpha", "beta", "gamma"]], 1).unwrap();
        let l = lex(&[("alpha beta", "C1")]);
        let doc = Document::new("", "Alpha beta gamma", "");
        let enc = encode(&doc, &vocab, &l, 5).unwrap();
        assert_eq!(
            enc.token_ids,
            vec![vocab.id("alpha"), vocab.id("beta"), vocab.id("gamma"), 0, 0]
        );
        assert_eq!(enc.concept_ids, vec![1, 1, 0, 0, 0]);

        // Truncation keeps the head.
        let long_title = vec!["alpha"; 1200].join(" ");
        let doc = Document::new("", &long_title, "");
        let enc = encode(&doc, &vocab, &l, 1000).unwrap();
        assert_eq!(enc.token_ids.len(), 1000);
        assert_eq!(enc.concept_ids.len(), 1000);
        assert!(enc.token_ids.iter().all(|&id| id == vocab.id("alpha")));

        // Unknown tokens become the OOV id.
        let doc = Document::new("", "novelword", "");
        let enc = encode(&doc, &vocab, &l, 3).unwrap();
        assert_eq!(enc.token_ids, vec![OOV_ID, 0, 0]);

        // Identical inputs encode identically.
        let doc = Document::new("7", "alpha beta", "gamma");
        assert_eq!(
            encode(&doc, &vocab, &l, 8).unwrap(),
            encode(&doc, &vocab, &l, 8).unwrap()
        );
    }

    #[test]
    fn encode_pad_suffixes_stay_aligned() {
        let vocab = Vocabulary::from_token_lists([vec!["alpha", "beta"]], 1).unwrap();
        let l = lex(&[("beta", "C1")]);
        for text in ["", "alpha", "alpha beta", "alpha beta alpha beta"] {
            let doc = Document::new("", text, "");
            let enc = encode(&doc, &vocab, &l, 6).unwrap();
            let tok_pad = enc.token_ids.iter().rposition(|&t| t != 0).map_or(0, |p| p + 1);
            for (i, &c) in enc.concept_ids.iter().enumerate() {
                if i >= tok_pad {
                    assert_eq!(c, 0, "concept id past the token pad boundary");
                }
            }
        }
    }

    #[test]
    fn documents_roundtrip_as_jsonl() {
        let docs = vec![
            Document {
                pmid: "100".into(),
                title: "Genome study".into(),
                abstract_text: "We study genomes.".into(),
                journal: "Nat Genet".into(),
                pub_type: "Journal Article".into(),
                date: NaiveDate::from_ymd_opt(2017, 6, 1),
                label: Some(Label::Positive),
            },
            Document::new("101", "Another", "Record"),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        write_documents(&path, &docs).unwrap();
        let back = read_documents(&path).unwrap();
        assert_eq!(docs, back);

        let raw = std::fs::read_to_string(&path).unwrap();
        let first = raw.lines().next().unwrap();
        assert!(first.contains("\"abstract\":"), "field name must be abstract: {first}");
        assert!(first.contains("\"label\":\"positive\""), "{first}");
        assert!(first.contains("\"date\":\"2017-06-01\""), "{first}");
    }

    #[test]
    fn document_errors_name_line_and_pmid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        let good = r#"{"pmid":"1","title":"t","abstract":"a","journal":"","pub_type":""}"#;
        std::fs::write(&path, format!("{good}\n{good}\n")).unwrap();
        let err = read_documents(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("pmid `1`"), "{err}");

        std::fs::write(&path, "{\"title\":\"no pmid\"}\n").unwrap();
        assert!(read_documents(&path).is_err());

        std::fs::write(&path, "{\"pmid\":\"1\",\"date\":\"2018-13-01\"}\n").unwrap();
        let err = read_documents(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");

        let dup = vec![Document::new("5", "", ""), Document::new("5", "", "")];
        assert!(matches!(
            write_documents(&path, &dup),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn unknown_json_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        std::fs::write(&path, "{\"pmid\":\"1\",\"titel\":\"typo\"}\n").unwrap();
        let err = read_documents(&path).unwrap_err();
        assert!(err.to_string().contains("titel"), "{err}");
    }
}
