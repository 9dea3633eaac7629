//! Self-consistent fixtures for examples and tests.
//!
//! Everything here flows through the ordinary constructors and file
//! formats, so a fixture exercises the same code paths as real data. The
//! generators are deterministic in their seed arguments.
//!
//! The pieces fit together: [`synthetic_documents`] mentions the gene and
//! disease phrases that [`demo_lexicon`] links, the lexicon's concept keys
//! are node ids of [`toy_graph`], and so graph-walk embeddings plug
//! straight into the classifier's knowledge channel.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::EmbeddingMatrix;
use crate::kg::KnowledgeGraph;
use crate::text::{write_documents, ConceptLexicon, Document, Label};
use crate::util::{fnv1a64, mix_seed};
use crate::Result;

const TOY_CONCEPTS: &[(&str, &str, &str)] = &[
    ("C001", "breast cancer", "disease"),
    ("C002", "lung cancer", "disease"),
    ("C003", "diabetes mellitus", "disease"),
    ("C010", "brca1", "gene"),
    ("C011", "brca2", "gene"),
    ("C012", "tp53", "gene"),
    ("C013", "egfr", "gene"),
    ("C014", "kras", "gene"),
    ("C020", "tamoxifen", "drug"),
    ("C021", "gefitinib", "drug"),
    ("C022", "metformin", "drug"),
    ("C030", "insulin resistance", "disease"),
    ("C031", "her2", "gene"),
    ("C099", "orphan term", "disease"),
];

const TOY_EDGES: &[(&str, &str)] = &[
    ("C001", "C010"),
    ("C001", "C011"),
    ("C001", "C012"),
    ("C001", "C031"),
    ("C001", "C020"),
    ("C002", "C012"),
    ("C002", "C013"),
    ("C002", "C014"),
    ("C002", "C021"),
    ("C003", "C022"),
    ("C003", "C030"),
    ("C010", "C011"),
    ("C012", "C013"),
    ("C030", "C022"),
];

/// Gene mentions as they appear in document text, keyed by their node in
/// [`toy_graph`].
const GENE_PHRASES: &[(&str, &str)] = &[
    ("brca1", "C010"),
    ("brca2", "C011"),
    ("tp53", "C012"),
    ("egfr", "C013"),
    ("kras", "C014"),
    ("her2", "C031"),
];

/// Disease mentions, same keying scheme.
const DISEASE_PHRASES: &[(&str, &str)] = &[
    ("breast cancer", "C001"),
    ("lung cancer", "C002"),
    ("diabetes mellitus", "C003"),
    ("insulin resistance", "C030"),
];

// Topic words: the positive pool never appears in negative documents and
// vice versa, while fillers are shared. That makes the synthetic corpus
// separable by construction, which is exactly what a learnability fixture
// needs: a classifier that works must reach near-perfect scores on it.
const POSITIVE_TOPICS: &[&str] = &[
    "association",
    "variant",
    "susceptibility",
    "polymorphism",
    "genotype",
    "allele",
    "mutation",
    "penetrance",
    "linkage",
    "heritability",
];

const NEGATIVE_TOPICS: &[&str] = &[
    "staffing",
    "billing",
    "survey",
    "workflow",
    "telehealth",
    "scheduling",
    "curriculum",
    "burnout",
    "reimbursement",
    "accreditation",
];

const FILLERS: &[&str] = &[
    "study",
    "patients",
    "results",
    "analysis",
    "cohort",
    "clinical",
    "reported",
    "outcomes",
    "methods",
    "findings",
];

/// A small disease/gene/drug graph: three semantic types, a handful of
/// hub-and-spoke clusters, one isolated node. Big enough that walks have
/// somewhere to go, small enough to eyeball.
pub fn toy_graph() -> KnowledgeGraph {
    KnowledgeGraph::from_parts(
        TOY_CONCEPTS
            .iter()
            .map(|(i, n, t)| (i.to_string(), n.to_string(), t.to_string())),
        TOY_EDGES.iter().map(|(a, b)| (a.to_string(), b.to_string())),
    )
    .expect("toy graph is valid")
}

/// Two disjoint complete graphs of `size` nodes each, every node the same
/// semantic type. Ids are `A0..` and `B0..`. Useful for two reasons:
/// neighbor walks can never cross between the cliques, while structural
/// walks at radius 0 can (all non-isolated signatures are identical).
pub fn two_clique_graph(size: usize) -> KnowledgeGraph {
    assert!(size >= 2, "a clique needs at least 2 nodes");
    let mut concepts = Vec::new();
    let mut edges = Vec::new();
    for prefix in ["A", "B"] {
        for i in 0..size {
            concepts.push((
                format!("{prefix}{i}"),
                format!("member {i} of {prefix}"),
                "entity".to_string(),
            ));
        }
        for i in 0..size {
            for j in (i + 1)..size {
                edges.push((format!("{prefix}{i}"), format!("{prefix}{j}")));
            }
        }
    }
    KnowledgeGraph::from_parts(concepts, edges).expect("clique fixture is valid")
}

/// Gene phrases only; pair with [`demo_disease_lexicon`] for ambiguous
/// negative sampling.
pub fn demo_gene_lexicon() -> ConceptLexicon {
    ConceptLexicon::from_entries(GENE_PHRASES.iter().copied()).expect("gene fixture is valid")
}

/// Disease phrases only.
pub fn demo_disease_lexicon() -> ConceptLexicon {
    ConceptLexicon::from_entries(DISEASE_PHRASES.iter().copied()).expect("disease fixture is valid")
}

/// Union of gene and disease phrases: the lexicon the classifier links
/// concepts with. Keys are [`toy_graph`] node ids, so embeddings trained on
/// that graph's walks line up as knowledge vectors.
pub fn demo_lexicon() -> ConceptLexicon {
    ConceptLexicon::from_entries(GENE_PHRASES.iter().chain(DISEASE_PHRASES).copied())
        .expect("lexicon fixture is valid")
}

fn pick<'a>(rng: &mut impl Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

/// A labeled, separable corpus. Even indices are positive (gene-disease
/// association language plus linkable gene and disease mentions), odd ones
/// negative (health-operations language, no concept mentions). Dates cycle
/// through 2016-2019 with both labels in every year, so date-based splits
/// keep both classes on both sides of a 2018-01-01 cutoff.
pub fn synthetic_documents(count: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0xd0c5]));
    let years = [2016, 2017, 2018, 2019];
    let gene_names: Vec<&str> = GENE_PHRASES.iter().map(|&(p, _)| p).collect();
    let disease_names: Vec<&str> = DISEASE_PHRASES.iter().map(|&(p, _)| p).collect();
    (0..count)
        .map(|i| {
            let positive = i % 2 == 0;
            let mut text = String::new();
            let title;
            if positive {
                let gene = pick(&mut rng, &gene_names);
                let disease = pick(&mut rng, &disease_names);
                title = format!("{gene} {} in {disease}", pick(&mut rng, POSITIVE_TOPICS));
                for _ in 0..20 {
                    let pool = if rng.random::<f64>() < 0.6 { POSITIVE_TOPICS } else { FILLERS };
                    write!(text, "{} ", pick(&mut rng, pool)).unwrap();
                }
                write!(text, "{gene} {disease}").unwrap();
            } else {
                title = format!(
                    "{} {} {}",
                    pick(&mut rng, NEGATIVE_TOPICS),
                    pick(&mut rng, FILLERS),
                    pick(&mut rng, NEGATIVE_TOPICS)
                );
                for _ in 0..22 {
                    let pool = if rng.random::<f64>() < 0.6 { NEGATIVE_TOPICS } else { FILLERS };
                    write!(text, "{} ", pick(&mut rng, pool)).unwrap();
                }
            }
            let base = if positive { 1_000_000 } else { 2_000_000 };
            let mut doc = Document::new(&format!("{}", base + i), &title, text.trim());
            doc.journal = "journal of synthetic fixtures".into();
            doc.pub_type = "journal article".into();
            let year = years[(i / 2) % years.len()];
            doc.date = NaiveDate::from_ymd_opt(year, 1 + (i % 12) as u32, 1 + (i % 28) as u32);
            doc.label = Some(if positive { Label::Positive } else { Label::Negative });
            doc
        })
        .collect()
}

/// An unlabeled candidate pool for negative sampling demos. Roughly a third
/// of the documents mention both a gene and a disease (ambiguous bait), a
/// third reuse association language without mentions, and a third are plain
/// operations text.
pub fn synthetic_pool(count: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0xb00]));
    let gene_names: Vec<&str> = GENE_PHRASES.iter().map(|&(p, _)| p).collect();
    let disease_names: Vec<&str> = DISEASE_PHRASES.iter().map(|&(p, _)| p).collect();
    (0..count)
        .map(|i| {
            let mut text = String::new();
            for _ in 0..15 {
                let pool = match i % 3 {
                    0 | 1 => FILLERS,
                    _ => NEGATIVE_TOPICS,
                };
                write!(text, "{} ", pick(&mut rng, pool)).unwrap();
            }
            match i % 3 {
                0 => {
                    let gene = pick(&mut rng, &gene_names);
                    let disease = pick(&mut rng, &disease_names);
                    write!(text, "{gene} {disease}").unwrap();
                }
                1 => {
                    write!(text, "{}", pick(&mut rng, POSITIVE_TOPICS)).unwrap();
                }
                _ => {}
            }
            let mut doc = Document::new(
                &format!("{}", 3_000_000 + i),
                &format!("{} report", pick(&mut rng, FILLERS)),
                text.trim(),
            );
            doc.date = NaiveDate::from_ymd_opt(2017, 6, 1 + (i % 28) as u32);
            doc
        })
        .collect()
}

/// One deterministic vector per token, derived from the token text itself,
/// so the result does not depend on iteration order and repeated tokens are
/// collapsed. Components are uniform in (-0.5, 0.5).
pub fn random_word_vectors<I, S>(tokens: I, dim: usize, seed: u64) -> EmbeddingMatrix
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut matrix = EmbeddingMatrix::new(dim);
    for token in tokens {
        let token = token.as_ref();
        if matrix.id(token).is_some() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[fnv1a64(token.as_bytes())]));
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        matrix.push(token, &v).expect("duplicates were skipped");
    }
    matrix
}

/// Where [`write_demo_inputs`] put each file.
#[derive(Debug, Clone)]
pub struct DemoPaths {
    pub concepts: PathBuf,
    pub edges: PathBuf,
    pub corpus: PathBuf,
    pub genes: PathBuf,
    pub diseases: PathBuf,
    pub lexicon: PathBuf,
}

/// Writes a complete, mutually consistent input set into `dir`: the graph
/// as two TSVs, a labeled corpus as JSONL, and three phrase lexicons. Every
/// file round-trips through the ordinary loaders.
pub fn write_demo_inputs(dir: &Path, doc_count: usize, seed: u64) -> Result<DemoPaths> {
    let paths = DemoPaths {
        concepts: dir.join("concepts.tsv"),
        edges: dir.join("edges.tsv"),
        corpus: dir.join("corpus.jsonl"),
        genes: dir.join("genes.tsv"),
        diseases: dir.join("diseases.tsv"),
        lexicon: dir.join("lexicon.tsv"),
    };
    let write = |path: &Path, body: String| -> Result<()> {
        std::fs::write(path, body).map_err(|e| crate::Error::io(path, e))
    };
    let mut concepts = String::new();
    for (id, name, ty) in TOY_CONCEPTS {
        writeln!(concepts, "{id}\t{name}\t{ty}").unwrap();
    }
    write(&paths.concepts, concepts)?;
    let mut edges = String::new();
    for (a, b) in TOY_EDGES {
        writeln!(edges, "{a}\t{b}").unwrap();
    }
    write(&paths.edges, edges)?;
    write_documents(&paths.corpus, &synthetic_documents(doc_count, seed))?;
    let tsv = |entries: &[(&str, &str)]| {
        entries
            .iter()
            .map(|(p, k)| format!("{p}\t{k}\n"))
            .collect::<String>()
    };
    write(&paths.genes, tsv(GENE_PHRASES))?;
    write(&paths.diseases, tsv(DISEASE_PHRASES))?;
    write(&paths.lexicon, tsv(GENE_PHRASES) + &tsv(DISEASE_PHRASES))?;
    Ok(paths)
}
