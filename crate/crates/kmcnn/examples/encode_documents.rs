//! Walks one document through the text pipeline: composition,
//! tokenization, vocabulary lookup, and longest-match concept linking.
//!
//!     cargo run --example encode_documents

use kmcnn::text::{build_vocab, compose_text, encode, tokenize, PAD_ID, OOV_ID};

fn main() -> anyhow::Result<()> {
    let docs = kmcnn::demo::synthetic_documents(20, 42);
    let lexicon = kmcnn::demo::demo_lexicon();
    let vocab = build_vocab(&docs, 1)?;
    println!(
        "{} documents -> vocabulary of {} entries ({} concepts in the lexicon)",
        docs.len(),
        vocab.len(),
        lexicon.concept_count()
    );

    let doc = &docs[0];
    println!("\npmid {}: {}", doc.pmid, doc.title);
    let tokens = tokenize(&compose_text(doc));
    println!("first tokens: {}", tokens[..tokens.len().min(12)].join(" "));

    // Fixed-length encoding: n positions, zero-padded, with a parallel
    // track of concept ids where the lexicon matched a phrase.
    let n = 24;
    let enc = encode(doc, &vocab, &lexicon, n)?;
    assert_eq!(enc.token_ids.len(), n);
    assert_eq!(enc.concept_ids.len(), n);

    println!("\npos  token-id  concept    surface");
    for (i, (&tid, &cid)) in enc.token_ids.iter().zip(&enc.concept_ids).enumerate() {
        let surface = match tid {
            t if t == PAD_ID => "<pad>".to_string(),
            t if t == OOV_ID => "<oov>".to_string(),
            t => vocab.token(t).unwrap_or("?").to_string(),
        };
        let concept = if cid == 0 {
            "-".to_string()
        } else {
            lexicon.key(cid).unwrap_or("?").to_string()
        };
        println!("{i:>3}  {tid:>8}  {concept:<9}  {surface}");
        if tid == PAD_ID && i > 0 {
            println!("     (padding continues to position {})", n - 1);
            break;
        }
    }

    let linked = enc.concept_ids.iter().filter(|&&c| c != 0).count();
    println!("\n{linked} of {n} positions link to a knowledge-graph concept");
    Ok(())
}
