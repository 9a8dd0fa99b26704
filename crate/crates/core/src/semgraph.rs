//! Token-level semantic graphs over dependency and SRL annotations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Lexicons;
use crate::error::{CoreError, Result};
use crate::parse::{content_word_indices, ParsedDocument, Token};

pub const DEFAULT_PRUNED_RELATIONS: [&str; 13] = [
    "case",
    "mark",
    "cc",
    "cc:preconj",
    "aux",
    "aux:pass",
    "cop",
    "det",
    "discourse",
    "expl",
    "det:predet",
    "punct",
    "ref",
];

pub fn default_pruned_relations() -> BTreeSet<String> {
    DEFAULT_PRUNED_RELATIONS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub const FREQUENCY_CAP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenRef {
    pub sentence: usize,
    pub token: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub node_id: usize,
    pub token_refs: Vec<TokenRef>,
    pub surface_key: String,
    pub merge_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticGraph {
    pub nodes: Vec<GraphNode>,
    /// Neighbor sets, symmetric, including `i` itself when `self_loops`.
    pub adjacency: Vec<BTreeSet<usize>>,
    pub self_loops: bool,
    /// Edges added only to keep the graph connected (sentence chaining and
    /// textual-adjacency links), as `(i, j)` with `i < j`.
    pub connective_edges: BTreeSet<(usize, usize)>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = x;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    /// Links the larger root under the smaller, so roots are minimal ids.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.0[hi] = lo;
        true
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl SemanticGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All non-loop edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Edges derived from dependency or SRL structure.
    pub fn semantic_edges(&self) -> BTreeSet<(usize, usize)> {
        self.edges()
            .difference(&self.connective_edges)
            .copied()
            .collect()
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        self.adjacency
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency.iter().enumerate().all(|(i, ns)| {
            ns.iter()
                .all(|&j| j < self.len() && self.adjacency[j].contains(&i))
        })
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn dump(&self, doc: &ParsedDocument) -> GraphDump {
        GraphDump {
            nodes: self
                .nodes
                .iter()
                .map(|n| DumpNode {
                    id: n.node_id,
                    tokens: n
                        .token_refs
                        .iter()
                        .map(|r| doc.token(r.sentence, r.token).text.clone())
                        .collect(),
                    refs: n.token_refs.iter().map(|r| [r.sentence, r.token]).collect(),
                    merge_count: n.merge_count,
                })
                .collect(),
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: usize,
    pub tokens: Vec<String>,
    pub refs: Vec<[usize; 2]>,
    pub merge_count: usize,
}

/// JSON debugging view of a graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<DumpNode>,
    pub edges: Vec<[usize; 2]>,
}

/// Builds the unmerged token graph: pruned dependency edges are dropped,
/// predicates link to role heads, function tokens with no surviving edge
/// are removed, and residual components are stitched together.
pub fn build_semantic_graph(
    doc: &ParsedDocument,
    pruned_relations: &BTreeSet<String>,
) -> Result<SemanticGraph> {
    if doc.token_count() == 0 {
        return Err(CoreError::invalid_doc(&doc.id, "empty document"));
    }
    let is_pruned = |rel: &str| pruned_relations.contains(&rel.to_lowercase());

    let mut nodes = Vec::new();
    let mut semantic = BTreeSet::new();
    let mut connective = BTreeSet::new();
    let mut previous_last: Option<usize> = None;

    for (s, sent) in doc.sentences.iter().enumerate() {
        let n = sent.len();
        let mut keep = vec![false; n];
        let mut links = Vec::new();
        let mut has_root_edge = vec![false; n];
        for e in &sent.deps {
            if e.head.is_none() {
                has_root_edge[e.dependent] = true;
            }
            if is_pruned(&e.relation) {
                continue;
            }
            keep[e.dependent] = true;
            if let Some(h) = e.head {
                keep[h] = true;
                links.push((h, e.dependent));
            }
        }
        // A root with no explicit edge carries an implicit unpruned attachment.
        let heads = sent.heads();
        for i in 0..n {
            if heads[i].is_none() && !has_root_edge[i] {
                keep[i] = true;
            }
        }
        for f in &sent.srl {
            for r in &f.roles {
                let h = sent.span_head(r.start, r.end);
                keep[f.predicate] = true;
                keep[h] = true;
                if h != f.predicate {
                    links.push((f.predicate, h));
                }
            }
        }
        if !keep.iter().any(|&k| k) {
            if let Some(root) = (0..n).find(|&i| heads[i].is_none()) {
                keep[root] = true;
            }
        }

        let base = nodes.len();
        let mut local = vec![usize::MAX; n];
        for i in (0..n).filter(|&i| keep[i]) {
            local[i] = nodes.len();
            nodes.push(GraphNode {
                node_id: nodes.len(),
                token_refs: vec![TokenRef {
                    sentence: s,
                    token: i,
                }],
                surface_key: sent.tokens[i].text.to_lowercase(),
                merge_count: 1,
            });
        }
        let count = nodes.len() - base;
        if count == 0 {
            continue;
        }

        let mut uf = UnionFind::new(count);
        for (a, b) in links {
            let (na, nb) = (local[a], local[b]);
            semantic.insert(ordered(na, nb));
            uf.union(na - base, nb - base);
        }
        for k in base..base + count - 1 {
            if uf.union(k - base, k + 1 - base) {
                connective.insert((k, k + 1));
            }
        }
        if let Some(prev) = previous_last {
            connective.insert((prev, base));
        }
        previous_last = Some(base + count - 1);
    }

    let mut adjacency: Vec<BTreeSet<usize>> =
        (0..nodes.len()).map(|i| BTreeSet::from([i])).collect();
    for &(i, j) in semantic.iter().chain(&connective) {
        adjacency[i].insert(j);
        adjacency[j].insert(i);
    }
    let connective_edges = connective.difference(&semantic).copied().collect();
    Ok(SemanticGraph {
        nodes,
        adjacency,
        self_loops: true,
        connective_edges,
    })
}

/// Merges nodes that share a surface key or hold the head tokens of
/// mentions in one coreference chain. Merged nodes take the surface key of
/// their lowest-id constituent and are ordered by that id.
pub fn merge_nodes(graph: &SemanticGraph, doc: &ParsedDocument) -> SemanticGraph {
    let n = graph.len();
    let mut uf = UnionFind::new(n);
    let mut by_key: BTreeMap<&str, usize> = BTreeMap::new();
    for node in &graph.nodes {
        match by_key.get(node.surface_key.as_str()) {
            Some(&first) => {
                uf.union(first, node.node_id);
            }
            None => {
                by_key.insert(&node.surface_key, node.node_id);
            }
        }
    }
    let mut by_ref: BTreeMap<TokenRef, usize> = BTreeMap::new();
    for node in &graph.nodes {
        for r in &node.token_refs {
            by_ref.insert(*r, node.node_id);
        }
    }
    for chain in &doc.coref_chains {
        let members: Vec<usize> = chain
            .iter()
            .filter_map(|m| {
                let head = TokenRef {
                    sentence: m.sentence,
                    token: doc.mention_head(m),
                };
                by_ref.get(&head).copied()
            })
            .collect();
        for w in members.windows(2) {
            uf.union(w[0], w[1]);
        }
    }

    // Roots are the minimal ids of their groups, so sorting roots orders
    // merged nodes by their earliest constituent.
    let roots: BTreeSet<usize> = (0..n).map(|i| uf.find(i)).collect();
    let new_id: BTreeMap<usize, usize> = roots.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let map = |uf: &mut UnionFind, i: usize| new_id[&uf.find(i)];

    let mut nodes: Vec<GraphNode> = roots
        .iter()
        .enumerate()
        .map(|(k, &r)| GraphNode {
            node_id: k,
            token_refs: Vec::new(),
            surface_key: graph.nodes[r].surface_key.clone(),
            merge_count: 0,
        })
        .collect();
    for node in &graph.nodes {
        let k = map(&mut uf, node.node_id);
        nodes[k].token_refs.extend(node.token_refs.iter().copied());
        nodes[k].merge_count += node.merge_count;
    }
    for node in &mut nodes {
        node.token_refs.sort();
        node.token_refs.dedup();
    }

    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes.len()];
    let mut semantic = BTreeSet::new();
    let mut connective = BTreeSet::new();
    for (i, j) in graph.edges() {
        let (a, b) = (map(&mut uf, i), map(&mut uf, j));
        if a == b {
            continue;
        }
        adjacency[a].insert(b);
        adjacency[b].insert(a);
        if graph.connective_edges.contains(&(i, j)) {
            connective.insert(ordered(a, b));
        } else {
            semantic.insert(ordered(a, b));
        }
    }
    if graph.self_loops {
        for (i, ns) in adjacency.iter_mut().enumerate() {
            ns.insert(i);
        }
    }
    SemanticGraph {
        nodes,
        adjacency,
        self_loops: graph.self_loops,
        connective_edges: connective.difference(&semantic).copied().collect(),
    }
}

/// Four-bit least-significant-first encoding of `min(merge_count, 10)`.
pub fn frequency_bits(merge_count: usize) -> Result<[u8; 4]> {
    if merge_count < 1 {
        return Err(CoreError::InvalidArgument(
            "merge_count must be at least 1".into(),
        ));
    }
    let c = merge_count.min(FREQUENCY_CAP);
    Ok([0, 1, 2, 3].map(|b| ((c >> b) & 1) as u8))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusLabels {
    pub labels: Vec<bool>,
}

impl FocusLabels {
    pub fn focus_indices(&self) -> BTreeSet<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

/// A node is a focus when one of its tokens shares a lowercase lemma with
/// a content word of the question.
pub fn label_focus_nodes(
    graph: &SemanticGraph,
    doc: &ParsedDocument,
    question: &[Token],
    lexicons: &Lexicons,
) -> FocusLabels {
    let lemmas: BTreeSet<String> = content_word_indices(question, lexicons)
        .into_iter()
        .map(|i| question[i].lemma_key())
        .collect();
    let labels = graph
        .nodes
        .iter()
        .map(|node| {
            node.token_refs
                .iter()
                .any(|r| lemmas.contains(&doc.token(r.sentence, r.token).lemma_key()))
        })
        .collect();
    FocusLabels { labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_bits_cap_and_order() {
        assert_eq!(frequency_bits(1).unwrap(), [1, 0, 0, 0]);
        assert_eq!(frequency_bits(10).unwrap(), [0, 1, 0, 1]);
        assert_eq!(frequency_bits(12).unwrap(), [0, 1, 0, 1]);
        assert_eq!(frequency_bits(7).unwrap(), [1, 1, 1, 0]);
        assert!(frequency_bits(0).is_err());
    }

    #[test]
    fn union_find_keeps_minimal_roots() {
        let mut uf = UnionFind::new(5);
        uf.union(4, 2);
        uf.union(2, 3);
        assert_eq!(uf.find(4), 2);
        uf.union(3, 1);
        assert_eq!(uf.find(4), 1);
        assert_eq!(uf.find(0), 0);
    }
}
