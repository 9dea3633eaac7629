//! Typed concept graphs and random-walk corpus generation.
//!
//! A [`KnowledgeGraph`] is an undirected graph whose nodes are concepts,
//! each carrying exactly one semantic type. Two walk strategies turn it
//! into a corpus for skip-gram training:
//!
//! * **neighbor walks** follow graph edges, each successor drawn uniformly
//!   from the current node's neighbors;
//! * **structural walks** ignore edges and instead hop between nodes whose
//!   *neighborhood signatures* are close: the signature of a node is the
//!   distribution of semantic types among its direct neighbors, and two
//!   nodes are structural neighbors when their signatures differ by at most
//!   a radius `r` in the L∞ norm (a hypercube of edge `2r` around the
//!   signature point). This lets a walk connect nodes that play the same
//!   role in distant parts of the graph.
//!
//! Both strategies truncate at dead ends (no neighbors, or an empty
//! hypercube) rather than restarting, so a corpus always contains exactly
//! `2 * walks_per_node * node_count` paths, some possibly short.
//!
//! Walks are reproducible: each individual walk seeds its own RNG from
//! (corpus seed, strategy, concept id, walk index), so regenerating a
//! corpus yields byte-identical files no matter how the work is scheduled.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::util::{fnv1a64, mix_seed, read_tsv};
use crate::{Error, Result};

/// One entry of the semantic-type table. Ids are dense indices assigned in
/// order of first appearance in the concepts file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticType {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub id: String,
    pub name: String,
    /// Index into the graph's semantic-type table.
    pub semantic_type: usize,
}

/// Immutable typed concept graph.
///
/// Construction validates everything up front (unique concept ids, known
/// edge endpoints, no self-loops), after which the graph can be shared
/// freely across threads.
#[derive(Debug)]
pub struct KnowledgeGraph {
    concepts: Vec<Concept>,
    by_id: HashMap<String, usize>,
    /// Sorted, deduplicated neighbor lists; symmetric by construction.
    adjacency: Vec<Vec<usize>>,
    types: Vec<SemanticType>,
    edge_count: usize,
    signatures: OnceLock<Vec<Vec<f64>>>,
    /// Node indices sorted by the first signature coordinate; built on
    /// demand for [`SignatureIndex`].
    projection: OnceLock<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Builds a graph from in-memory parts: `(concept_id, name, type_name)`
    /// triples and `(id, id)` edge pairs. File loading and the fixture
    /// generators both funnel through here so validation happens once.
    pub fn from_parts<C, E>(concepts: C, edges: E) -> Result<KnowledgeGraph>
    where
        C: IntoIterator<Item = (String, String, String)>,
        E: IntoIterator<Item = (String, String)>,
    {
        let mut graph = KnowledgeGraph {
            concepts: Vec::new(),
            by_id: HashMap::new(),
            adjacency: Vec::new(),
            types: Vec::new(),
            edge_count: 0,
            signatures: OnceLock::new(),
            projection: OnceLock::new(),
        };
        let mut type_ids: HashMap<String, usize> = HashMap::new();
        for (id, name, type_name) in concepts {
            if id.is_empty() {
                return Err(Error::Validation("empty concept id".into()));
            }
            if graph.by_id.contains_key(&id) {
                return Err(Error::Validation(format!("duplicate concept id `{id}`")));
            }
            let type_id = *type_ids.entry(type_name.clone()).or_insert_with(|| {
                graph.types.push(SemanticType {
                    id: graph.types.len(),
                    name: type_name,
                });
                graph.types.len() - 1
            });
            graph.by_id.insert(id.clone(), graph.concepts.len());
            graph.concepts.push(Concept {
                id,
                name,
                semantic_type: type_id,
            });
        }
        graph.adjacency = vec![Vec::new(); graph.concepts.len()];
        for (a, b) in edges {
            let ai = *graph
                .by_id
                .get(&a)
                .ok_or_else(|| Error::Lookup(format!("edge endpoint `{a}` is not a declared concept")))?;
            let bi = *graph
                .by_id
                .get(&b)
                .ok_or_else(|| Error::Lookup(format!("edge endpoint `{b}` is not a declared concept")))?;
            if ai == bi {
                return Err(Error::Validation(format!("self-loop on concept `{a}`")));
            }
            graph.adjacency[ai].push(bi);
            graph.adjacency[bi].push(ai);
        }
        for list in &mut graph.adjacency {
            list.sort_unstable();
            list.dedup();
        }
        graph.edge_count = graph.adjacency.iter().map(Vec::len).sum::<usize>() / 2;
        Ok(graph)
    }

    /// Loads a graph from two TSV files: concepts as
    /// `concept_id<TAB>name<TAB>semantic_type_name`, edges as
    /// `concept_id<TAB>concept_id`. Blank lines are ignored; duplicate
    /// edges (in either direction) collapse to one.
    pub fn load(concepts_path: &Path, edges_path: &Path) -> Result<KnowledgeGraph> {
        let concepts = read_tsv(concepts_path, 3)?
            .into_iter()
            .map(|mut f| {
                let ty = f.pop().unwrap();
                let name = f.pop().unwrap();
                let id = f.pop().unwrap();
                (id, name, ty)
            })
            .collect::<Vec<_>>();
        let edges = read_tsv(edges_path, 2)?
            .into_iter()
            .map(|mut f| {
                let b = f.pop().unwrap();
                let a = f.pop().unwrap();
                (a, b)
            })
            .collect::<Vec<_>>();
        KnowledgeGraph::from_parts(concepts, edges)
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    /// Number of undirected edges after deduplication.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn semantic_type_count(&self) -> usize {
        self.types.len()
    }

    pub fn semantic_types(&self) -> &[SemanticType] {
        &self.types
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn concept(&self, id: &str) -> Result<&Concept> {
        Ok(&self.concepts[self.index_of(id)?])
    }

    /// Neighbor ids of `id`, sorted by internal index (declaration order).
    pub fn neighbors(&self, id: &str) -> Result<Vec<&str>> {
        let v = self.index_of(id)?;
        Ok(self.adjacency[v]
            .iter()
            .map(|&u| self.concepts[u].id.as_str())
            .collect())
    }

    pub fn degree(&self, id: &str) -> Result<usize> {
        Ok(self.adjacency[self.index_of(id)?].len())
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("unknown concept id `{id}`")))
    }

    /// The neighborhood signature of a concept: for each semantic type, the
    /// fraction of the concept's direct neighbors carrying that type.
    /// Sums to 1, or is all-zero for an isolated concept.
    pub fn signature(&self, id: &str) -> Result<&[f64]> {
        let v = self.index_of(id)?;
        Ok(&self.all_signatures()[v])
    }

    fn all_signatures(&self) -> &Vec<Vec<f64>> {
        self.signatures.get_or_init(|| {
            let nt = self.types.len();
            self.adjacency
                .iter()
                .map(|nbrs| {
                    let mut sig = vec![0.0; nt];
                    if nbrs.is_empty() {
                        return sig;
                    }
                    for &u in nbrs {
                        sig[self.concepts[u].semantic_type] += 1.0;
                    }
                    let d = nbrs.len() as f64;
                    for s in &mut sig {
                        *s /= d;
                    }
                    sig
                })
                .collect()
        })
    }

    /// All concepts other than `id` whose signature lies within the
    /// hypercube of edge `2 * radius` centered on `id`'s signature
    /// (equivalently: L∞ distance ≤ radius). Exact linear scan; see
    /// [`KnowledgeGraph::signature_index`] for the narrowed variant.
    pub fn structural_neighbors(&self, id: &str, radius: f64) -> Result<Vec<String>> {
        let v = self.index_of(id)?;
        check_radius(radius)?;
        Ok(self
            .structural_neighbor_indices(v, radius)
            .into_iter()
            .map(|u| self.concepts[u].id.clone())
            .collect())
    }

    fn structural_neighbor_indices(&self, v: usize, radius: f64) -> Vec<usize> {
        let sigs = self.all_signatures();
        (0..self.concepts.len())
            .filter(|&u| u != v && linf(&sigs[u], &sigs[v]) <= radius)
            .collect()
    }

    /// A reusable accelerator for structural-neighbor queries: nodes sorted
    /// by their first signature coordinate, binary-searched to a candidate
    /// band before the exact L∞ test. Returns the same sets as
    /// [`KnowledgeGraph::structural_neighbors`].
    pub fn signature_index(&self) -> SignatureIndex<'_> {
        let order = self.projection.get_or_init(|| {
            let sigs = self.all_signatures();
            let mut order: Vec<usize> = (0..self.concepts.len()).collect();
            order.sort_by(|&a, &b| {
                let ka = sigs[a].first().copied().unwrap_or(0.0);
                let kb = sigs[b].first().copied().unwrap_or(0.0);
                ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
            });
            order
        });
        SignatureIndex { graph: self, order }
    }

    /// Random walk along graph edges: starts at `start`, takes up to
    /// `length` uniform steps to a neighbor, and stops early at a node with
    /// no neighbors. The returned path has between 1 and `length + 1` ids.
    pub fn neighbor_walk(
        &self,
        start: &str,
        length: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<String>> {
        let v = self.index_of(start)?;
        check_length(length)?;
        Ok(self.ids(self.walk(v, length, rng, |cur| self.adjacency[cur].clone())))
    }

    /// Random walk in signature space: each successor is drawn uniformly
    /// from the current node's structural neighbors at `radius`, stopping
    /// early when that set is empty.
    pub fn structural_walk(
        &self,
        start: &str,
        length: usize,
        radius: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<String>> {
        let v = self.index_of(start)?;
        check_length(length)?;
        check_radius(radius)?;
        Ok(self.ids(self.walk(v, length, rng, |cur| {
            self.structural_neighbor_indices(cur, radius)
        })))
    }

    fn walk<F>(&self, start: usize, length: usize, rng: &mut impl Rng, successors: F) -> Vec<usize>
    where
        F: Fn(usize) -> Vec<usize>,
    {
        let mut path = Vec::with_capacity(length + 1);
        path.push(start);
        let mut cur = start;
        for _ in 0..length {
            let cands = successors(cur);
            if cands.is_empty() {
                break;
            }
            cur = cands[rng.random_range(0..cands.len())];
            path.push(cur);
        }
        path
    }

    fn ids(&self, path: Vec<usize>) -> Vec<String> {
        path.into_iter()
            .map(|v| self.concepts[v].id.clone())
            .collect()
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_length(length: usize) -> Result<()> {
    if length == 0 {
        return Err(Error::Config("walk length must be at least 1".into()));
    }
    Ok(())
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!(
            "structural radius must be finite and non-negative, got {radius}"
        )));
    }
    Ok(())
}

/// See [`KnowledgeGraph::signature_index`].
pub struct SignatureIndex<'g> {
    graph: &'g KnowledgeGraph,
    order: &'g [usize],
}

impl SignatureIndex<'_> {
    pub fn structural_neighbors(&self, id: &str, radius: f64) -> Result<Vec<String>> {
        let g = self.graph;
        let v = g.index_of(id)?;
        check_radius(radius)?;
        let sigs = g.all_signatures();
        if g.types.is_empty() {
            return Ok(Vec::new());
        }
        let center = sigs[v][0];
        // L∞ ≤ r forces the first coordinate within r, so only the band
        // [center - r, center + r] in projection order can qualify.
        let lo = self
            .order
            .partition_point(|&u| sigs[u][0] < center - radius);
        let mut out: Vec<usize> = Vec::new();
        for &u in &self.order[lo..] {
            if sigs[u][0] > center + radius {
                break;
            }
            if u != v && linf(&sigs[u], &sigs[v]) <= radius {
                out.push(u);
            }
        }
        out.sort_unstable();
        Ok(out
            .into_iter()
            .map(|u| g.concepts[u].id.clone())
            .collect())
    }
}

/// Which strategy produced a walk. Serialized as a one-letter prefix in
/// corpus files: `H` for neighbor (homogeneous) walks, `S` for structural.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkKind {
    Neighbor,
    Structural,
}

impl WalkKind {
    pub fn prefix(self) -> &'static str {
        match self {
            WalkKind::Neighbor => "H",
            WalkKind::Structural => "S",
        }
    }

    fn seed_tag(self) -> u64 {
        match self {
            WalkKind::Neighbor => 1,
            WalkKind::Structural => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkPath {
    pub kind: WalkKind,
    pub nodes: Vec<String>,
}

/// An ordered collection of walks, writable to and readable from the
/// one-path-per-line corpus format.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WalkCorpus {
    pub paths: Vec<WalkPath>,
}

impl WalkCorpus {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Token sequences for embedding training, in corpus order.
    pub fn sentences(&self) -> impl Iterator<Item = &[String]> {
        self.paths.iter().map(|p| p.nodes.as_slice())
    }

    /// Writes one line per path: the strategy letter, then the concept ids,
    /// all space-separated.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for p in &self.paths {
            write!(w, "{}", p.kind.prefix()).map_err(|e| Error::io(path, e))?;
            for node in &p.nodes {
                write!(w, " {node}").map_err(|e| Error::io(path, e))?;
            }
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<WalkCorpus> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut paths = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split(' ');
            let kind = match tokens.next() {
                Some("H") => WalkKind::Neighbor,
                Some("S") => WalkKind::Structural,
                other => {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        format!("expected path prefix H or S, got {other:?}"),
                    ))
                }
            };
            let nodes: Vec<String> = tokens
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            if nodes.is_empty() {
                return Err(Error::parse(path, lineno + 1, "path has no concept ids"));
            }
            paths.push(WalkPath { kind, nodes });
        }
        Ok(WalkCorpus { paths })
    }
}

/// Settings for corpus generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    /// Walks of each strategy rooted at each concept.
    pub walks_per_node: usize,
    /// Maximum steps per walk; paths hold up to `walk_length + 1` ids.
    pub walk_length: usize,
    /// L∞ radius for structural-neighbor candidacy.
    pub radius: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 10,
            walk_length: 40,
            radius: 0.1,
            seed: 42,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_node == 0 {
            return Err(Error::Config("walks_per_node must be at least 1".into()));
        }
        check_length(self.walk_length)?;
        check_radius(self.radius)
    }
}

/// Generates the full walk corpus: for every concept,
/// `cfg.walks_per_node` neighbor walks and the same number of structural
/// walks. All neighbor paths come first, then all structural paths; within
/// each block, paths are ordered by concept id and then walk index. The
/// result depends only on the graph and `cfg`.
pub fn generate_corpus(g: &KnowledgeGraph, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    let mut roots: Vec<&Concept> = g.concepts.iter().collect();
    roots.sort_by(|a, b| a.id.cmp(&b.id));
    let mut corpus = WalkCorpus::default();
    for kind in [WalkKind::Neighbor, WalkKind::Structural] {
        for concept in &roots {
            for walk_index in 0..cfg.walks_per_node {
                let seed = mix_seed(
                    cfg.seed,
                    &[
                        kind.seed_tag(),
                        fnv1a64(concept.id.as_bytes()),
                        walk_index as u64,
                    ],
                );
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let nodes = match kind {
                    WalkKind::Neighbor => {
                        g.neighbor_walk(&concept.id, cfg.walk_length, &mut rng)?
                    }
                    WalkKind::Structural => {
                        g.structural_walk(&concept.id, cfg.walk_length, cfg.radius, &mut rng)?
                    }
                };
                corpus.paths.push(WalkPath { kind, nodes });
            }
        }
    }
    Ok(corpus)
}
