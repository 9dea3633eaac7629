//! Builds a labeled corpus and shows the two split strategies, keyword
//! mining, and both negative-sampling modes.
//!
//!     cargo run --example dataset_splits

use chrono::NaiveDate;
use kmcnn::datasets::{
    asynchronous_split, keyword_top_k, negative_sample_ambiguous, negative_sample_random,
    synchronous_split, NegativeSampleSpec,
};
use kmcnn::Label;

fn main() -> anyhow::Result<()> {
    let docs = kmcnn::demo::synthetic_documents(80, 42);
    let positives: Vec<_> = docs
        .iter()
        .filter(|d| d.label == Some(Label::Positive))
        .cloned()
        .collect();
    println!("corpus: {} documents, {} positive", docs.len(), positives.len());

    // Random split by ratio; pmids only, so the same manifest can be
    // replayed against any copy of the corpus.
    let manifest = synchronous_split(&docs, (0.8, 0.1, 0.1), 7)?;
    let (t, v, s) = manifest.sizes();
    println!("\nsynchronous 80/10/10: train {t}, validation {v}, test {s}");

    // Date split: everything from the cutoff onward is test, mimicking
    // deployment on future publications.
    let cutoff = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let manifest = asynchronous_split(&docs, cutoff, 0.1, 7)?;
    let (t, v, s) = manifest.sizes();
    println!("asynchronous at {cutoff}: train {t}, validation {v}, test {s}");
    let by_pmid: std::collections::HashMap<&str, NaiveDate> = docs
        .iter()
        .map(|d| (d.pmid.as_str(), d.date.expect("demo docs are dated")))
        .collect();
    assert!(manifest.test.iter().all(|p| by_pmid[p.as_str()] >= cutoff));
    println!("  (verified: every test document is from {cutoff} or later)");

    let keywords = keyword_top_k(&positives, 10)?;
    println!("\ntop positive-set keywords: {}", keywords.join(", "));

    let pool = kmcnn::demo::synthetic_pool(60, 3);
    let random = negative_sample_random(&pool, 10, &positives, 7)?;
    println!("\nrandom negatives: {} drawn from a pool of {}", random.len(), pool.len());

    // Ambiguous negatives look like positives on the surface: they match
    // the mined keywords or mention both a gene and a disease, which makes
    // them much harder training material than uniform draws.
    let genes = kmcnn::demo::demo_gene_lexicon();
    let diseases = kmcnn::demo::demo_disease_lexicon();
    let spec = NegativeSampleSpec {
        pool: &pool,
        count: 10,
        gene_lexicon: &genes,
        disease_lexicon: &diseases,
        keyword_count: 10,
        seed: 7,
    };
    let ambiguous = negative_sample_ambiguous(&spec, &positives)?;
    println!("ambiguous negatives: {} (keyword- or lexicon-matched)", ambiguous.len());
    for d in ambiguous.iter().take(3) {
        println!("  {}  {}", d.pmid, d.title);
    }
    Ok(())
}
