//! Trains all four model variants on the same data and renders the
//! comparison the way the published tables are laid out: one row per
//! variant, one column per dataset.
//!
//! The variants strip the architecture down one piece at a time: `cnn` is
//! a single word channel, `mcnn` adds the second channel, `kcnn` swaps
//! the second channel for knowledge vectors, and `kmcnn` uses all three.
//!
//!     cargo run --example ablation_matrix

use std::collections::{BTreeMap, BTreeSet};

use kmcnn::datasets::synchronous_split;
use kmcnn::embed::{train_skipgram, SkipGramConfig};
use kmcnn::eval::{ablation_report, confusion, precision_recall_f1, AblationMatrix, Metrics};
use kmcnn::kg::{generate_corpus, WalkConfig};
use kmcnn::model::{
    ablation_variant, encode_labeled, train, EmbeddingSet, ModelConfig, TrainInput, Variant,
};
use kmcnn::text::{build_vocab, compose_text, tokenize};
use kmcnn::{Document, Label};

fn main() -> anyhow::Result<()> {
    let docs = kmcnn::demo::synthetic_documents(60, 42);
    let graph = kmcnn::demo::toy_graph();
    let lexicon = kmcnn::demo::demo_lexicon();

    let walks = generate_corpus(
        &graph,
        &WalkConfig { walks_per_node: 8, walk_length: 10, radius: 0.1, seed: 1 },
    )?;
    let knowledge = train_skipgram(
        &walks,
        &SkipGramConfig { dim: 8, epochs: 3, seed: 1, ..SkipGramConfig::default() },
    )?;
    let tokens: BTreeSet<String> = docs
        .iter()
        .flat_map(|d| tokenize(&compose_text(d)))
        .collect();
    let words = kmcnn::demo::random_word_vectors(tokens.iter().map(|s| s.as_str()), 12, 7);

    let manifest = synchronous_split(&docs, (0.8, 0.1, 0.1), 7)?;
    let (train_refs, val_refs, test_refs) = manifest.partition(&docs)?;
    let train_docs: Vec<Document> = train_refs.into_iter().cloned().collect();
    let val_docs: Vec<Document> = val_refs.into_iter().cloned().collect();
    let test_docs: Vec<Document> = test_refs.into_iter().cloned().collect();
    let vocab = build_vocab(&train_docs, 1)?;

    let base = ModelConfig {
        n: 32,
        dw: 12,
        dk: 8,
        filters_per_width: 4,
        hidden_dim: 8,
        drop_rate: 0.3,
        learning_rate: 5e-3,
        epochs: 8,
        batch_size: 8,
        seed: 3,
        ..ModelConfig::default()
    };

    let mut runs: BTreeMap<(String, String), Metrics> = BTreeMap::new();
    for variant in Variant::ALL {
        let cfg = ablation_variant(&base, variant);
        let channels: Vec<&kmcnn::EmbeddingMatrix> = vec![&words; cfg.channels];
        let kg_ref = (cfg.dk > 0).then_some(&knowledge.embeddings);
        let set = EmbeddingSet::build(&cfg, &vocab, &lexicon, &channels, kg_ref)?;
        let train_enc = encode_labeled(&train_docs, &vocab, &lexicon, cfg.n)?;
        let val_enc = encode_labeled(&val_docs, &vocab, &lexicon, cfg.n)?;
        let outcome = train(
            &TrainInput {
                train: &train_enc,
                validation: &val_enc,
                embeddings: &set,
                vocab_hash: vocab.content_hash(),
                lexicon_hash: lexicon.content_hash(),
            },
            &cfg,
        )?;
        let preds = kmcnn::model::predict(&outcome.checkpoint, &test_docs, &vocab, &lexicon, &set)?;
        let pred_pairs: Vec<(String, Label)> =
            preds.iter().map(|p| (p.pmid.clone(), p.label)).collect();
        let gold_pairs: Vec<(String, Label)> = test_docs
            .iter()
            .map(|d| (d.pmid.clone(), d.label.expect("labeled")))
            .collect();
        let metrics = precision_recall_f1(&confusion(&pred_pairs, &gold_pairs)?);
        println!("{:<6} test F1 {:>7.3}", variant.name(), metrics.f1);
        runs.insert((variant.name().to_string(), "demo".to_string()), metrics);
    }

    let variants: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
    let report = ablation_report(&variants, &["demo"], &runs)?;
    println!("\n{}", report.to_aligned_text());

    // The same renderer formats the published reference scores that ship
    // with the crate, as a shape check against the real tables.
    let reference = AblationMatrix::from_csv(include_str!("../data/reference_f1.csv"))?;
    println!("published F1 reference table:\n\n{}", reference.to_aligned_text());
    Ok(())
}
