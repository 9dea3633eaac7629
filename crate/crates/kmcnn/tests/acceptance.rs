//! The release gate: nine numbered criteria covering gradients, shapes,
//! walk and split soundness, embedding quality, end-to-end learnability,
//! metric correctness, and determinism. Each test prints one `[PASS]`
//! line with its measured numbers; run with `-- --nocapture` to see them:
//!
//!     cargo test --test acceptance -- --nocapture
//!
//! Scale note: these run at desk scale (small dimensions, synthetic
//! data). The published headline scores need licensed vocabularies and
//! full bibliographic corpora, so they are shipped only as formatting
//! fixtures; nothing here asserts them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use kmcnn::datasets::{
    asynchronous_split, negative_sample_ambiguous, negative_sample_random, synchronous_split,
    NegativeSampleSpec,
};
use kmcnn::embed::{cosine, train_skipgram, SkipGramConfig};
use kmcnn::eval::{ablation_report, confusion, format_percent, precision_recall_f1, Metrics};
use kmcnn::kg::{generate_corpus, KnowledgeGraph, WalkConfig, WalkCorpus, WalkKind};
use kmcnn::model::{
    ablation_variant, check_model_gradients, encode_labeled, forward, train, EmbeddingSet,
    ModelCheckpoint, ModelConfig, ModelParams, Phase, TrainInput, Variant,
};
use kmcnn::nn::layers::{Conv1d, Dense, DropoutFixed, MaxPoolOverTime, Relu, SoftmaxXent};
use kmcnn::nn::{check_layer_randomized, ops, Tensor};
use kmcnn::text::{build_vocab, compose_text, tokenize, ConceptLexicon, Vocabulary};
use kmcnn::{Document, Label};

// ---------------------------------------------------------------------
// 1. Gradient fidelity: every layer plus the assembled desk-scale model
//    (n=16, k=12, M=4) matches central finite differences (eps 1e-3)
//    within 1e-4 relative error over 100 random trials, in under 60 s.
// ---------------------------------------------------------------------
#[test]
fn criterion_1_gradient_fidelity() {
    const TRIALS: usize = 100;
    const EPS: f64 = 1e-3;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;

    macro_rules! check {
        ($make:expr) => {{
            let report = check_layer_randomized($make, TRIALS, EPS, &mut rng).unwrap();
            assert!(
                report.passed(),
                "{} failed: max rel err {:.3e} at {}",
                report.layer,
                report.max_rel_err,
                report.worst
            );
            worst = worst.max(report.max_rel_err);
        }};
    }

    check!(|r: &mut dyn rand::RngCore| {
        let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
        (Dense::new(12, 8, &mut r), Tensor::uniform(&[12], -1.0, 1.0, &mut r))
    });
    check!(|r: &mut dyn rand::RngCore| {
        let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
        (
            Conv1d::new(4, 2, 12, &mut r),
            Tensor::uniform(&[16, 12], -1.0, 1.0, &mut r),
        )
    });
    check!(|r: &mut dyn rand::RngCore| {
        let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
        (Relu::new(), Tensor::uniform(&[16], -1.0, 1.0, &mut r))
    });
    check!(|r: &mut dyn rand::RngCore| {
        let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
        (
            MaxPoolOverTime::new(),
            Tensor::uniform(&[16, 4], -1.0, 1.0, &mut r),
        )
    });
    check!(|r: &mut dyn rand::RngCore| {
        let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
        let layer = DropoutFixed::new(12, 0.5, &mut r).expect("valid rate");
        (layer, Tensor::uniform(&[12], -1.0, 1.0, &mut r))
    });
    check!(|r: &mut dyn rand::RngCore| {
        let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
        (SoftmaxXent::new(1), Tensor::uniform(&[2], -2.0, 2.0, &mut r))
    });

    // Full model at desk scale: k = dw + dk = 8 + 4 = 12, M = 4.
    let cfg = ModelConfig {
        n: 16,
        dw: 8,
        dk: 4,
        channels: 2,
        filter_widths: vec![1, 2, 3],
        filters_per_width: 4,
        hidden_dim: 8,
        drop_rate: 0.5,
        ..ModelConfig::default()
    };
    let report = check_model_gradients(&cfg, TRIALS, EPS, 101).unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "full model failed: max rel err {:.3e} at {}",
        report.max_rel_err,
        report.worst
    );
    worst = worst.max(report.max_rel_err);

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient fidelity took {elapsed:.1} s (budget 60 s)");
    println!(
        "[PASS] 1 gradient fidelity: max rel err {worst:.3e} over 6 layers + full model, \
         {TRIALS} trials each, {elapsed:.1} s"
    );
}

// ---------------------------------------------------------------------
// 2. Convolution shape law: for n in 1..=64 and window h in {1,2,3},
//    the output has exactly n - h + 1 rows; windows wider than the
//    input are rejected.
// ---------------------------------------------------------------------
#[test]
fn criterion_2_convolution_shape_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (m, k) = (3, 5);
    let mut checked = 0usize;
    for n in 1..=64usize {
        for h in 1..=3usize {
            let x = Tensor::uniform(&[n, k], -1.0, 1.0, &mut rng);
            let filters = Tensor::uniform(&[m, h, k], -1.0, 1.0, &mut rng);
            let bias = Tensor::uniform(&[m], -1.0, 1.0, &mut rng);
            let result = ops::conv1d_forward(&x, &filters, &bias);
            if h > n {
                assert!(result.is_err(), "window {h} over {n} rows must be rejected");
            } else {
                let out = result.unwrap();
                assert_eq!(out.shape(), &[n - h + 1, m], "n={n} h={h}");
                checked += 1;
            }
        }
    }
    println!("[PASS] 2 convolution shape law: output length = n-h+1 on {checked} (n, h) pairs");
}

// ---------------------------------------------------------------------
// 3. Channel-collapse equivalence: when both channels carry the same
//    input, the 2-channel model output equals the 1-channel output
//    within 1e-9, on 1,000 random inputs.
// ---------------------------------------------------------------------
#[test]
fn criterion_3_channel_collapse() {
    let two = ModelConfig {
        n: 12,
        dw: 6,
        dk: 4,
        channels: 2,
        filter_widths: vec![1, 2, 3],
        filters_per_width: 3,
        hidden_dim: 6,
        ..ModelConfig::default()
    };
    let one = ModelConfig {
        channels: 1,
        ..two.clone()
    };
    // Parameter shapes do not depend on the channel count, so one set of
    // weights serves both configurations.
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let params = ModelParams::init(&two, &mut rng);
    let k = two.dw + two.dk;

    let mut max_diff: f64 = 0.0;
    for _ in 0..1000 {
        let x = Tensor::uniform(&[two.n, k], -1.0, 1.0, &mut rng);
        let single = forward(&params, &[x.clone()], &one, Phase::Eval).unwrap();
        let double = forward(&params, &[x.clone(), x], &two, Phase::Eval).unwrap();
        for (a, b) in single.probs.data().iter().zip(double.probs.data()) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    assert!(max_diff <= 1e-9, "channel collapse diverged by {max_diff:.3e}");
    println!(
        "[PASS] 3 channel collapse: 2-channel vs 1-channel max prob diff {max_diff:.3e} \
         on 1000 inputs"
    );
}

// ---------------------------------------------------------------------
// 4. Walk soundness: on 50 random graphs every neighbor-walk step is an
//    edge and every structural-walk step stays within the L-infinity
//    radius; the corpus holds 2 * walks_per_node * |V| paths; and the
//    neighbor-walk successor choice is uniform by chi-square at 1e5
//    samples.
// ---------------------------------------------------------------------
#[test]
fn criterion_4_walk_soundness() {
    let mut meta = ChaCha8Rng::seed_from_u64(404);
    let radius = 0.2;
    let mut paths_checked = 0usize;

    for g in 0..50 {
        let n_nodes = meta.random_range(5..=100usize);
        let types = ["alpha", "beta", "gamma"];
        let concepts: Vec<(String, String, String)> = (0..n_nodes)
            .map(|i| {
                (
                    format!("N{i:03}"),
                    format!("node {i}"),
                    types[meta.random_range(0..types.len())].to_string(),
                )
            })
            .collect();
        let mut edges = BTreeSet::new();
        for i in 0..n_nodes {
            for j in (i + 1)..n_nodes {
                if meta.random::<f64>() < 0.08 {
                    edges.insert((format!("N{i:03}"), format!("N{j:03}")));
                }
            }
        }
        let graph = KnowledgeGraph::from_parts(concepts, edges.clone()).unwrap();
        let edge_set: HashSet<(String, String)> = edges
            .iter()
            .flat_map(|(a, b)| [(a.clone(), b.clone()), (b.clone(), a.clone())])
            .collect();

        let cfg = WalkConfig {
            walks_per_node: 2,
            walk_length: 6,
            radius,
            seed: 1000 + g,
        };
        let corpus = generate_corpus(&graph, &cfg).unwrap();
        assert_eq!(
            corpus.len(),
            2 * cfg.walks_per_node * n_nodes,
            "graph {g}: wrong path count"
        );

        for path in &corpus.paths {
            for pair in path.nodes.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                match path.kind {
                    WalkKind::Neighbor => assert!(
                        edge_set.contains(&(a.clone(), b.clone())),
                        "graph {g}: neighbor step {a} -> {b} is not an edge"
                    ),
                    WalkKind::Structural => {
                        assert_ne!(a, b, "graph {g}: structural step may not stay put");
                        let sa = graph.signature(a).unwrap();
                        let sb = graph.signature(b).unwrap();
                        let linf = sa
                            .iter()
                            .zip(sb)
                            .map(|(x, y)| (x - y).abs())
                            .fold(0.0f64, f64::max);
                        assert!(
                            linf <= radius,
                            "graph {g}: structural step {a} -> {b} at L-inf {linf:.3}"
                        );
                    }
                }
            }
            paths_checked += 1;
        }
    }

    // Uniformity of the successor draw: 1e5 single steps from a hub with
    // ten spokes, chi-square against the uniform distribution.
    let hub_concepts: Vec<(String, String, String)> = std::iter::once((
        "HUB".to_string(),
        "hub".to_string(),
        "alpha".to_string(),
    ))
    .chain((0..10).map(|i| (format!("S{i}"), format!("spoke {i}"), "beta".to_string())))
    .collect();
    let hub_edges: Vec<(String, String)> =
        (0..10).map(|i| ("HUB".to_string(), format!("S{i}"))).collect();
    let star = KnowledgeGraph::from_parts(hub_concepts, hub_edges).unwrap();

    let samples = 100_000usize;
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    for _ in 0..samples {
        let path = star.neighbor_walk("HUB", 1, &mut rng).unwrap();
        *counts.entry(path[1].clone()).or_default() += 1;
    }
    let expected = samples as f64 / 10.0;
    let stat: f64 = counts
        .values()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert!(counts.len() == 10, "every spoke must be reachable");
    assert!(p > 0.01, "chi-square stat {stat:.2} gives p = {p:.4} <= 0.01");

    println!(
        "[PASS] 4 walk soundness: {paths_checked} paths verified on 50 graphs; \
         successor uniformity chi2 = {stat:.2}, p = {p:.3}"
    );
}

// ---------------------------------------------------------------------
// 5. Embedding separation: skip-gram over the neighbor walks of two
//    disjoint 8-cliques puts clique-mates at least 0.2 mean cosine above
//    cross-clique pairs, for 5 of 5 seeds, in under 30 s.
// ---------------------------------------------------------------------
#[test]
fn criterion_5_embedding_separation() {
    let started = Instant::now();
    let graph = kmcnn::demo::two_clique_graph(8);
    let mut margins = Vec::new();

    for seed in 1..=5u64 {
        let corpus = generate_corpus(
            &graph,
            &WalkConfig { walks_per_node: 20, walk_length: 10, radius: 0.1, seed },
        )
        .unwrap();
        // Neighbor paths only: structural walks connect the cliques (all
        // clique members share one signature) and would blur exactly the
        // distinction this criterion measures.
        let neighbor_only = WalkCorpus {
            paths: corpus
                .paths
                .into_iter()
                .filter(|p| p.kind == WalkKind::Neighbor)
                .collect(),
        };
        let out = train_skipgram(
            &neighbor_only,
            &SkipGramConfig { dim: 16, epochs: 8, seed, ..SkipGramConfig::default() },
        )
        .unwrap();

        let ids: Vec<&str> = graph.concepts().iter().map(|c| c.id.as_str()).collect();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for (i, a) in ids.iter().enumerate() {
            for b in ids.iter().skip(i + 1) {
                let (va, vb) = match (out.embeddings.get(a), out.embeddings.get(b)) {
                    (Some(va), Some(vb)) => (va, vb),
                    _ => continue,
                };
                let sim = cosine(va, vb);
                if a.as_bytes()[0] == b.as_bytes()[0] {
                    intra.push(sim);
                } else {
                    inter.push(sim);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let margin = mean(&intra) - mean(&inter);
        assert!(
            margin >= 0.2,
            "seed {seed}: separation {margin:.3} below 0.2 \
             (intra {:.3}, inter {:.3})",
            mean(&intra),
            mean(&inter)
        );
        margins.push(margin);
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "embedding separation took {elapsed:.1} s (budget 30 s)");
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "[PASS] 5 embedding separation: margin >= 0.2 for 5/5 seeds \
         (worst {worst:.3}), {elapsed:.1} s"
    );
}

// ---------------------------------------------------------------------
// Shared fixture for criteria 6 and 9: synthetic labeled corpus with
// word and knowledge vectors, split 80/10/10.
// ---------------------------------------------------------------------
struct DeskData {
    train_docs: Vec<Document>,
    val_docs: Vec<Document>,
    test_docs: Vec<Document>,
    vocab: Vocabulary,
    lexicon: ConceptLexicon,
    words: kmcnn::EmbeddingMatrix,
    knowledge: kmcnn::EmbeddingMatrix,
}

fn desk_data(doc_count: usize, seed: u64) -> DeskData {
    let docs = kmcnn::demo::synthetic_documents(doc_count, seed);
    let lexicon = kmcnn::demo::demo_lexicon();
    let tokens: BTreeSet<String> = docs
        .iter()
        .flat_map(|d| tokenize(&compose_text(d)))
        .collect();
    let words = kmcnn::demo::random_word_vectors(tokens.iter().map(|s| s.as_str()), 12, 7);
    let keys: Vec<&str> = lexicon.keys().collect();
    let knowledge = kmcnn::demo::random_word_vectors(keys.iter().copied(), 8, 9);

    let manifest = synchronous_split(&docs, (0.8, 0.1, 0.1), 7).unwrap();
    let (train_refs, val_refs, test_refs) = manifest.partition(&docs).unwrap();
    let train_docs: Vec<Document> = train_refs.into_iter().cloned().collect();
    let val_docs: Vec<Document> = val_refs.into_iter().cloned().collect();
    let test_docs: Vec<Document> = test_refs.into_iter().cloned().collect();
    let vocab = build_vocab(&train_docs, 1).unwrap();
    DeskData { train_docs, val_docs, test_docs, vocab, lexicon, words, knowledge }
}

fn train_variant(
    data: &DeskData,
    base: &ModelConfig,
    variant: Variant,
) -> (kmcnn::model::TrainOutcome, EmbeddingSet, ModelConfig) {
    let cfg = ablation_variant(base, variant);
    let channels: Vec<&kmcnn::EmbeddingMatrix> = vec![&data.words; cfg.channels];
    let kg_ref = (cfg.dk > 0).then_some(&data.knowledge);
    let set = EmbeddingSet::build(&cfg, &data.vocab, &data.lexicon, &channels, kg_ref).unwrap();
    let train_enc = encode_labeled(&data.train_docs, &data.vocab, &data.lexicon, cfg.n).unwrap();
    let val_enc = encode_labeled(&data.val_docs, &data.vocab, &data.lexicon, cfg.n).unwrap();
    let outcome = train(
        &TrainInput {
            train: &train_enc,
            validation: &val_enc,
            embeddings: &set,
            vocab_hash: data.vocab.content_hash(),
            lexicon_hash: data.lexicon.content_hash(),
        },
        &cfg,
    )
    .unwrap();
    (outcome, set, cfg)
}

fn f1_on(
    ckpt: &ModelCheckpoint,
    docs: &[Document],
    data: &DeskData,
    set: &EmbeddingSet,
) -> Metrics {
    let preds = kmcnn::model::predict(ckpt, docs, &data.vocab, &data.lexicon, set).unwrap();
    let pred_pairs: Vec<(String, Label)> =
        preds.iter().map(|p| (p.pmid.clone(), p.label)).collect();
    let gold_pairs: Vec<(String, Label)> = docs
        .iter()
        .map(|d| (d.pmid.clone(), d.label.expect("labeled fixture")))
        .collect();
    precision_recall_f1(&confusion(&pred_pairs, &gold_pairs).unwrap())
}

// ---------------------------------------------------------------------
// 6. End-to-end learnability: on a 200-document separable corpus the
//    full model reaches train F1 >= 99.0 and held-out F1 >= 95.0 within
//    50 epochs at desk scale (M=16, n=64), in under 2 minutes; all four
//    ablation variants train and fill a complete three-table report.
// ---------------------------------------------------------------------
#[test]
fn criterion_6_end_to_end_learnability() {
    let started = Instant::now();
    let data = desk_data(200, 42);
    let base = ModelConfig {
        n: 64,
        dw: 12,
        dk: 8,
        channels: 2,
        filter_widths: vec![1, 2, 3],
        filters_per_width: 16,
        hidden_dim: 16,
        drop_rate: 0.3,
        learning_rate: 5e-3,
        epochs: 20,
        batch_size: 8,
        seed: 3,
        ..ModelConfig::default()
    };
    assert!(base.epochs <= 50, "the learnability budget is 50 epochs");

    let (outcome, set, _cfg) = train_variant(&data, &base, Variant::Kmcnn);
    let train_f1 = f1_on(&outcome.checkpoint, &data.train_docs, &data, &set).f1;
    let test_f1 = f1_on(&outcome.checkpoint, &data.test_docs, &data, &set).f1;
    assert!(train_f1 >= 99.0, "train F1 {train_f1:.3} below 99.0");
    assert!(test_f1 >= 95.0, "held-out F1 {test_f1:.3} below 95.0");

    // All four variants must train cleanly and produce a full report in
    // the published three-table shape (F1, precision, recall).
    let quick = ModelConfig { epochs: 3, ..base.clone() };
    let mut runs: BTreeMap<(String, String), Metrics> = BTreeMap::new();
    for variant in Variant::ALL {
        let (outcome, set, _cfg) = train_variant(&data, &quick, variant);
        let metrics = f1_on(&outcome.checkpoint, &data.test_docs, &data, &set);
        runs.insert((variant.name().to_string(), "demo".to_string()), metrics);
    }
    let variants: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
    let report = ablation_report(&variants, &["demo"], &runs).unwrap();
    for grid in [&report.f1, &report.precision, &report.recall] {
        for v in &variants {
            assert!(
                grid.get(v, "demo").is_some(),
                "report cell {v}/demo is missing"
            );
        }
    }
    let rendered = report.to_aligned_text();
    assert!(rendered.contains("F1") && rendered.contains("Recall"));

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "learnability run took {elapsed:.1} s (budget 120 s)");
    println!(
        "[PASS] 6 end-to-end learnability: train F1 {train_f1:.1}, held-out F1 {test_f1:.1} \
         in {} epochs; 4/4 variants reported; {elapsed:.1} s",
        base.epochs
    );
}

// ---------------------------------------------------------------------
// 7. Metric oracle: precision/recall/F1 agree exactly with an
//    independent brute-force count on 1,000 random prediction/gold
//    sets, and the hand case tp=3 fp=1 fn=1 prints 75.000 three times.
// ---------------------------------------------------------------------
#[test]
fn criterion_7_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };

    for round in 0..1000 {
        let n = rng.random_range(1..=50usize);
        let gold: Vec<(String, Label)> = (0..n)
            .map(|i| {
                let label = if rng.random::<f64>() < 0.5 { Label::Positive } else { Label::Negative };
                (format!("P{round}_{i}"), label)
            })
            .collect();
        let mut preds: Vec<(String, Label)> = gold
            .iter()
            .map(|(pmid, _)| {
                let label = if rng.random::<f64>() < 0.5 { Label::Positive } else { Label::Negative };
                (pmid.clone(), label)
            })
            .collect();
        // Order must not matter: shuffle the prediction list.
        for i in (1..preds.len()).rev() {
            preds.swap(i, rng.random_range(0..=i));
        }

        // Brute force: literal recount by pmid lookup.
        let gold_by_pmid: HashMap<&str, Label> =
            gold.iter().map(|(p, l)| (p.as_str(), *l)).collect();
        let (mut tp, mut fp, mut fne, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (pmid, pl) in &preds {
            match (pl, gold_by_pmid[pmid.as_str()]) {
                (Label::Positive, Label::Positive) => tp += 1,
                (Label::Positive, Label::Negative) => fp += 1,
                (Label::Negative, Label::Positive) => fne += 1,
                (Label::Negative, Label::Negative) => tn += 1,
            }
        }

        let counts = confusion(&preds, &gold).unwrap();
        assert_eq!(
            (counts.true_pos, counts.false_pos, counts.false_neg, counts.true_neg),
            (tp, fp, fne, tn),
            "round {round}: confusion counts diverge from brute force"
        );

        let m = precision_recall_f1(&counts);
        let tpf = tp as f64;
        let precision = 100.0 * ratio(tpf, tpf + fp as f64);
        let recall = 100.0 * ratio(tpf, tpf + fne as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        assert_eq!(m.precision, precision, "round {round}");
        assert_eq!(m.recall, recall, "round {round}");
        assert_eq!(m.f1, f1, "round {round}");
    }

    let hand = kmcnn::eval::ConfusionCounts {
        true_pos: 3,
        false_pos: 1,
        false_neg: 1,
        true_neg: 0,
    };
    let m = precision_recall_f1(&hand);
    assert_eq!(format_percent(m.precision), "75.000");
    assert_eq!(format_percent(m.recall), "75.000");
    assert_eq!(format_percent(m.f1), "75.000");

    println!(
        "[PASS] 7 metric oracle: 1000 random sets match brute force exactly; \
         tp=3 fp=1 fn=1 gives 75.000/75.000/75.000"
    );
}

// ---------------------------------------------------------------------
// 8. Split soundness: over 500 random date sets, asynchronous manifests
//    never place a post-cutoff document in train or validation; and
//    sampled negatives never collide with positive pmids.
// ---------------------------------------------------------------------
#[test]
fn criterion_8_split_soundness() {
    let cutoff = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let epoch = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(808);

    for round in 0..500u64 {
        let n = rng.random_range(2..=80usize);
        let docs: Vec<Document> = (0..n)
            .map(|i| {
                let mut d = Document::new(&format!("{round}_{i}"), "title", "text");
                // Uniform over 2015-2020, straddling the cutoff.
                d.date = Some(epoch + chrono::Days::new(rng.random_range(0..2192)));
                d.label = Some(Label::Positive);
                d
            })
            .collect();
        let manifest = asynchronous_split(&docs, cutoff, 0.2, round).unwrap();
        let by_pmid: HashMap<&str, NaiveDate> = docs
            .iter()
            .map(|d| (d.pmid.as_str(), d.date.unwrap()))
            .collect();
        for pmid in manifest.train.iter().chain(&manifest.validation) {
            let date = by_pmid[pmid.as_str()];
            assert!(
                date < cutoff,
                "round {round}: {pmid} ({date}) is on/after {cutoff} yet not in test"
            );
        }
        for pmid in &manifest.test {
            let date = by_pmid[pmid.as_str()];
            assert!(date >= cutoff, "round {round}: {pmid} ({date}) leaked into test");
        }
    }

    // Negative sampling never returns a positive pmid, in either mode.
    let genes = kmcnn::demo::demo_gene_lexicon();
    let diseases = kmcnn::demo::demo_disease_lexicon();
    for round in 0..50u64 {
        let positives = kmcnn::demo::synthetic_documents(40, round);
        let mut pool = kmcnn::demo::synthetic_pool(50, round + 1);
        // Poison the pool with actual positives; the sampler must skip them.
        pool.extend(positives.iter().take(10).cloned());
        let pos_ids: HashSet<&str> = positives.iter().map(|d| d.pmid.as_str()).collect();

        let random = negative_sample_random(&pool, 8, &positives, round).unwrap();
        for d in &random {
            assert!(!pos_ids.contains(d.pmid.as_str()), "round {round}: {} collided", d.pmid);
        }
        let spec = NegativeSampleSpec {
            pool: &pool,
            count: 8,
            gene_lexicon: &genes,
            disease_lexicon: &diseases,
            keyword_count: 10,
            seed: round,
        };
        let ambiguous = negative_sample_ambiguous(&spec, &positives).unwrap();
        for d in &ambiguous {
            assert!(!pos_ids.contains(d.pmid.as_str()), "round {round}: {} collided", d.pmid);
        }
    }

    println!(
        "[PASS] 8 split soundness: 500 random date sets respect the cutoff; \
         negatives never collide with positives in either mode"
    );
}

// ---------------------------------------------------------------------
// 9. Determinism & persistence: every stage rerun with the same seed is
//    byte-identical on disk, and a checkpoint survives save -> load with
//    bit-exact predictions.
// ---------------------------------------------------------------------
#[test]
fn criterion_9_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let graph = kmcnn::demo::toy_graph();

    // Stage 1: walk corpus files.
    let walk_cfg = WalkConfig { walks_per_node: 4, walk_length: 8, radius: 0.1, seed: 5 };
    let corpus = generate_corpus(&graph, &walk_cfg).unwrap();
    let (wa, wb) = (dir.path().join("walks_a.txt"), dir.path().join("walks_b.txt"));
    corpus.write_to(&wa).unwrap();
    generate_corpus(&graph, &walk_cfg).unwrap().write_to(&wb).unwrap();
    assert_eq!(std::fs::read(&wa).unwrap(), std::fs::read(&wb).unwrap(), "walk stage");

    // Stage 2: embedding files.
    let sg_cfg = SkipGramConfig { dim: 8, epochs: 3, seed: 5, ..SkipGramConfig::default() };
    let (ea, eb) = (dir.path().join("vec_a.txt"), dir.path().join("vec_b.txt"));
    train_skipgram(&corpus, &sg_cfg).unwrap().embeddings.save_text(&ea).unwrap();
    train_skipgram(&corpus, &sg_cfg).unwrap().embeddings.save_text(&eb).unwrap();
    assert_eq!(std::fs::read(&ea).unwrap(), std::fs::read(&eb).unwrap(), "embed stage");

    // Stage 3: split manifests.
    let docs = kmcnn::demo::synthetic_documents(40, 11);
    let (ma, mb) = (dir.path().join("man_a.json"), dir.path().join("man_b.json"));
    synchronous_split(&docs, (0.8, 0.1, 0.1), 7).unwrap().write(&ma).unwrap();
    synchronous_split(&docs, (0.8, 0.1, 0.1), 7).unwrap().write(&mb).unwrap();
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap(), "split stage");

    // Stage 4: training, twice from scratch.
    let data = desk_data(40, 11);
    let base = ModelConfig {
        n: 24,
        dw: 12,
        dk: 8,
        channels: 2,
        filter_widths: vec![1, 2],
        filters_per_width: 3,
        hidden_dim: 6,
        drop_rate: 0.3,
        learning_rate: 5e-3,
        epochs: 4,
        batch_size: 8,
        seed: 13,
        ..ModelConfig::default()
    };
    let (out_a, set, _) = train_variant(&data, &base, Variant::Kmcnn);
    let (out_b, _, _) = train_variant(&data, &base, Variant::Kmcnn);
    let (ca, cb) = (dir.path().join("model_a.ckpt"), dir.path().join("model_b.ckpt"));
    out_a.checkpoint.save(&ca).unwrap();
    out_b.checkpoint.save(&cb).unwrap();
    assert_eq!(std::fs::read(&ca).unwrap(), std::fs::read(&cb).unwrap(), "train stage");

    // Stage 5: prediction files, and bit-exact persistence through the
    // checkpoint round trip.
    let fresh = kmcnn::model::predict(
        &out_a.checkpoint,
        &data.test_docs,
        &data.vocab,
        &data.lexicon,
        &set,
    )
    .unwrap();
    let reloaded_ckpt = ModelCheckpoint::load(&ca).unwrap();
    assert_eq!(reloaded_ckpt, out_a.checkpoint, "checkpoint round trip");
    let reloaded = kmcnn::model::predict(
        &reloaded_ckpt,
        &data.test_docs,
        &data.vocab,
        &data.lexicon,
        &set,
    )
    .unwrap();
    assert_eq!(fresh.len(), reloaded.len());
    for (a, b) in fresh.iter().zip(&reloaded) {
        assert_eq!(a.pmid, b.pmid);
        assert_eq!(a.label, b.label);
        assert_eq!(
            a.score.to_bits(),
            b.score.to_bits(),
            "{}: scores {} vs {} differ in bits",
            a.pmid,
            a.score,
            b.score
        );
    }
    let (pa, pb) = (dir.path().join("preds_a.tsv"), dir.path().join("preds_b.tsv"));
    kmcnn::eval::write_predictions(&pa, fresh.iter().map(|p| (p.pmid.as_str(), p.label, p.score)))
        .unwrap();
    kmcnn::eval::write_predictions(&pb, reloaded.iter().map(|p| (p.pmid.as_str(), p.label, p.score)))
        .unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap(), "predict stage");

    println!(
        "[PASS] 9 determinism & persistence: walks, embeddings, manifests, checkpoints, \
         and predictions are byte-identical across reruns; reloaded checkpoint predicts \
         bit-exactly"
    );
}
