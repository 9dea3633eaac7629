//! Trains concept embeddings on walks over a graph made of two disjoint
//! cliques, then checks that cosine similarity separates the cliques:
//! nodes sharing a clique should look more alike than nodes across them.
//!
//!     cargo run --example concept_embeddings

use kmcnn::embed::{cosine, train_skipgram, SkipGramConfig};
use kmcnn::kg::{generate_corpus, WalkConfig};

fn main() -> anyhow::Result<()> {
    let graph = kmcnn::demo::two_clique_graph(8);
    println!(
        "two 8-cliques: {} concepts, {} edges",
        graph.concept_count(),
        graph.edge_count()
    );

    let walk_cfg = WalkConfig {
        walks_per_node: 20,
        walk_length: 10,
        radius: 0.1,
        seed: 1,
    };
    let corpus = generate_corpus(&graph, &walk_cfg)?;

    let cfg = SkipGramConfig {
        dim: 16,
        epochs: 8,
        seed: 1,
        ..SkipGramConfig::default()
    };
    let out = train_skipgram(&corpus, &cfg)?;
    println!(
        "trained {}-d vectors for {} concepts (final epoch loss {:.4})",
        out.embeddings.dim(),
        out.embeddings.vocab_size(),
        out.epoch_loss.last().copied().unwrap_or(0.0)
    );

    // Average cosine within a clique vs across cliques. Membership is in
    // the id prefix: A-nodes form one clique, B-nodes the other.
    let ids: Vec<&str> = graph.concepts().iter().map(|c| c.id.as_str()).collect();
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for (i, a) in ids.iter().enumerate() {
        for b in ids.iter().skip(i + 1) {
            let (va, vb) = match (out.embeddings.get(a), out.embeddings.get(b)) {
                (Some(va), Some(vb)) => (va, vb),
                _ => continue,
            };
            let same_clique = a.as_bytes()[0] == b.as_bytes()[0];
            let sim = cosine(va, vb);
            if same_clique {
                intra.push(sim);
            } else {
                inter.push(sim);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mi, me) = (mean(&intra), mean(&inter));
    println!("mean cosine within cliques:  {mi:+.3}");
    println!("mean cosine across cliques:  {me:+.3}");
    println!("separation:                  {:+.3}", mi - me);
    assert!(
        mi > me,
        "embeddings failed to separate the cliques ({mi:.3} vs {me:.3})"
    );
    Ok(())
}
