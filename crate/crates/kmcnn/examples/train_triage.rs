//! The whole pipeline in one place, at desk scale: build a corpus, walk
//! the concept graph, train knowledge vectors, split, train the
//! classifier, and score the held-out split.
//!
//!     cargo run --example train_triage

use std::collections::BTreeSet;

use kmcnn::datasets::synchronous_split;
use kmcnn::embed::{train_skipgram, SkipGramConfig};
use kmcnn::eval::{confusion, format_percent, precision_recall_f1};
use kmcnn::kg::{generate_corpus, WalkConfig};
use kmcnn::model::{
    ablation_variant, encode_labeled, train, EmbeddingSet, ModelConfig, TrainInput, Variant,
};
use kmcnn::text::{build_vocab, compose_text, tokenize};
use kmcnn::{Document, Label};

fn main() -> anyhow::Result<()> {
    let docs = kmcnn::demo::synthetic_documents(80, 42);
    let graph = kmcnn::demo::toy_graph();
    let lexicon = kmcnn::demo::demo_lexicon();

    // Knowledge channel: concept vectors trained on graph walks.
    let walks = generate_corpus(
        &graph,
        &WalkConfig { walks_per_node: 10, walk_length: 12, radius: 0.1, seed: 1 },
    )?;
    let knowledge = train_skipgram(
        &walks,
        &SkipGramConfig { dim: 8, epochs: 4, seed: 1, ..SkipGramConfig::default() },
    )?;
    println!(
        "knowledge vectors: {} concepts at dimension {}",
        knowledge.embeddings.vocab_size(),
        knowledge.embeddings.dim()
    );

    // Word channels: random stand-ins for pretrained vectors. Real runs
    // would load two word2vec files here instead.
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
    println!(
        "split: {} train / {} validation / {} test",
        train_docs.len(),
        val_docs.len(),
        test_docs.len()
    );

    // Vocabulary from the training split only.
    let vocab = build_vocab(&train_docs, 1)?;

    let base = ModelConfig {
        n: 32,
        dw: 12,
        dk: 8,
        filters_per_width: 4,
        hidden_dim: 8,
        drop_rate: 0.3,
        learning_rate: 5e-3,
        epochs: 10,
        batch_size: 8,
        seed: 3,
        ..ModelConfig::default()
    };
    let cfg = ablation_variant(&base, Variant::Kmcnn);

    let set = EmbeddingSet::build(&cfg, &vocab, &lexicon, &[&words, &words], Some(&knowledge.embeddings))?;
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

    println!("\nepoch  train-loss  val-F1");
    for e in &outcome.history {
        println!("{:>5}  {:>10.4}  {:>6.1}", e.epoch, e.train_loss, e.val_f1);
    }

    // Score the untouched test split against its gold labels.
    let preds = kmcnn::model::predict(&outcome.checkpoint, &test_docs, &vocab, &lexicon, &set)?;
    let pred_pairs: Vec<(String, Label)> =
        preds.iter().map(|p| (p.pmid.clone(), p.label)).collect();
    let gold_pairs: Vec<(String, Label)> = test_docs
        .iter()
        .map(|d| (d.pmid.clone(), d.label.expect("demo docs are labeled")))
        .collect();
    let metrics = precision_recall_f1(&confusion(&pred_pairs, &gold_pairs)?);
    println!(
        "\nheld-out test: precision {} / recall {} / F1 {}",
        format_percent(metrics.precision),
        format_percent(metrics.recall),
        format_percent(metrics.f1)
    );
    Ok(())
}
