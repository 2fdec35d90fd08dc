//! Text-attributed graph model: nodes with text, optional labels and split
//! membership, plus an undirected simple edge set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub text: String,
    pub label: Option<usize>,
    pub split: Split,
    /// Synthetic node created by minority-class generation.
    #[serde(default, skip_serializing_if = "is_false")]
    pub generated: bool,
}

impl NodeRecord {
    pub fn new(id: usize, text: impl Into<String>, label: Option<usize>, split: Split) -> Self {
        Self {
            id,
            text: text.into(),
            label,
            split,
            generated: false,
        }
    }

    /// Label usable for supervision: present and in the train split.
    pub fn train_label(&self) -> Option<usize> {
        match self.split {
            Split::Train => self.label,
            _ => None,
        }
    }
}

/// An undirected text-attributed graph with dense node indices.
///
/// Values are immutable once validated; every repair builds a new graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextAttributedGraph {
    name: String,
    num_classes: usize,
    nodes: Vec<NodeRecord>,
    adj: Vec<BTreeSet<usize>>,
    num_edges: usize,
    metadata: BTreeMap<String, String>,
}

impl TextAttributedGraph {
    /// Build and validate a graph. Edges are symmetrized and deduplicated;
    /// self-loops and out-of-range endpoints are rejected.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        nodes: Vec<NodeRecord>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = nodes.len();
        let mut g = Self {
            name: name.into(),
            num_classes,
            nodes,
            adj: vec![BTreeSet::new(); n],
            num_edges: 0,
            metadata: BTreeMap::new(),
        };
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::graph(format!(
                    "unknown endpoint in edge ({u},{v}) with n={n}"
                )));
            }
            if u == v {
                return Err(Error::graph(format!("self-loop on node {u}")));
            }
            g.insert_edge(u, v);
        }
        g.validate()?;
        Ok(g)
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::graph("num_classes must be positive"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::graph(format!(
                    "node at position {i} has id {}; ids must be dense",
                    node.id
                )));
            }
            if let Some(l) = node.label {
                if l >= self.num_classes {
                    return Err(Error::graph(format!(
                        "node {i} label {l} outside [0,{})",
                        self.num_classes
                    )));
                }
            }
        }
        let mut count = 0;
        for (u, nbrs) in self.adj.iter().enumerate() {
            for &v in nbrs {
                if v >= self.nodes.len() || v == u || !self.adj[v].contains(&u) {
                    return Err(Error::graph(format!("corrupt adjacency at ({u},{v})")));
                }
                count += 1;
            }
        }
        if count != 2 * self.num_edges {
            return Err(Error::graph("edge count out of sync with adjacency"));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeRecord {
        &self.nodes[i]
    }

    pub fn texts(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.text.as_str()).collect()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].iter().copied()
    }

    pub fn neighbor_set(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(BTreeSet::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.adj.len() && self.adj[u].contains(&v)
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, nbrs)| nbrs.range(u + 1..).map(move |&v| (u, v)))
    }

    /// Supervision labels (train split only).
    pub fn train_labels(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(NodeRecord::train_label).collect()
    }

    /// Labels regardless of split.
    pub fn labels(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(|n| n.label).collect()
    }

    // Working-copy mutators. Callers own a private clone and revalidate.

    pub(crate) fn insert_edge(&mut self, u: usize, v: usize) -> bool {
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        if self.adj[a].insert(b) {
            self.adj[b].insert(a);
            self.num_edges += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn delete_edge(&mut self, u: usize, v: usize) -> bool {
        if self.adj[u].remove(&v) {
            self.adj[v].remove(&u);
            self.num_edges -= 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn node_mut(&mut self, i: usize) -> &mut NodeRecord {
        &mut self.nodes[i]
    }

    pub(crate) fn push_node(&mut self, mut node: NodeRecord) -> usize {
        let id = self.nodes.len();
        node.id = id;
        self.nodes.push(node);
        self.adj.push(BTreeSet::new());
        id
    }

    /// Return a validated copy with the given edits applied.
    pub fn edited(&self, edit: impl FnOnce(&mut GraphEditor<'_>)) -> Result<Self> {
        let mut copy = self.clone();
        edit(&mut GraphEditor { graph: &mut copy });
        copy.validate()?;
        Ok(copy)
    }
}

/// Mutable access to a private working copy, handed out by
/// [`TextAttributedGraph::edited`].
pub struct GraphEditor<'a> {
    graph: &'a mut TextAttributedGraph,
}

impl GraphEditor<'_> {
    pub fn add_edge(&mut self, u: usize, v: usize) -> bool {
        self.graph.insert_edge(u, v)
    }
    pub fn remove_edge(&mut self, u: usize, v: usize) -> bool {
        self.graph.delete_edge(u, v)
    }
    pub fn node_mut(&mut self, i: usize) -> &mut NodeRecord {
        self.graph.node_mut(i)
    }
    pub fn push_node(&mut self, node: NodeRecord) -> usize {
        self.graph.push_node(node)
    }
    pub fn graph(&self) -> &TextAttributedGraph {
        self.graph
    }
}

/// Bijection between the node indices of an induced subgraph and the graph
/// it was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct IndexMap {
    /// `to_global[local] = original index`.
    to_global: Vec<usize>,
    to_local: BTreeMap<usize, usize>,
}

impl From<Vec<usize>> for IndexMap {
    fn from(v: Vec<usize>) -> Self {
        IndexMap::new(v)
    }
}

impl From<IndexMap> for Vec<usize> {
    fn from(m: IndexMap) -> Self {
        m.to_global
    }
}

impl IndexMap {
    pub fn new(to_global: Vec<usize>) -> Self {
        let to_local = to_global.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        Self {
            to_global,
            to_local,
        }
    }

    pub fn len(&self) -> usize {
        self.to_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_global.is_empty()
    }

    pub fn global(&self, local: usize) -> Option<usize> {
        self.to_global.get(local).copied()
    }

    pub fn local(&self, global: usize) -> Option<usize> {
        self.to_local.get(&global).copied()
    }

    pub fn globals(&self) -> &[usize] {
        &self.to_global
    }
}

/// Subgraph induced by `node_ids`; nodes keep their relative order.
pub fn induced_subgraph(
    g: &TextAttributedGraph,
    node_ids: &BTreeSet<usize>,
) -> Result<(TextAttributedGraph, IndexMap)> {
    if node_ids.is_empty() {
        return Err(Error::invalid("induced_subgraph: empty node set"));
    }
    if let Some(&bad) = node_ids.iter().find(|&&v| v >= g.num_nodes()) {
        return Err(Error::invalid(format!("induced_subgraph: unknown node {bad}")));
    }
    let map = IndexMap::new(node_ids.iter().copied().collect());
    let nodes = map
        .globals()
        .iter()
        .enumerate()
        .map(|(local, &global)| NodeRecord {
            id: local,
            ..g.node(global).clone()
        })
        .collect();
    let mut edges = Vec::new();
    for (local, &global) in map.globals().iter().enumerate() {
        for w in g.neighbors(global) {
            if let Some(lw) = map.local(w) {
                if lw > local {
                    edges.push((local, lw));
                }
            }
        }
    }
    let sub = TextAttributedGraph::new(g.name.clone(), g.num_classes, nodes, edges)?
        .with_metadata(g.metadata.clone());
    Ok((sub, map))
}

/// Node groups cut out of a graph, plus the edges between groups.
#[derive(Clone, Debug)]
pub struct Partition {
    pub parts: Vec<(TextAttributedGraph, IndexMap)>,
    pub cross_edges: Vec<(usize, usize)>,
    pub original_n: usize,
}

pub fn partition(g: &TextAttributedGraph, groups: &[BTreeSet<usize>]) -> Result<Partition> {
    let mut owner = vec![usize::MAX; g.num_nodes()];
    for (p, group) in groups.iter().enumerate() {
        for &v in group {
            if v >= g.num_nodes() {
                return Err(Error::invalid(format!("partition: unknown node {v}")));
            }
            if owner[v] != usize::MAX {
                return Err(Error::invalid(format!("partition: node {v} in two groups")));
            }
            owner[v] = p;
        }
    }
    if owner.iter().any(|&o| o == usize::MAX) {
        return Err(Error::invalid("partition: groups do not cover every node"));
    }
    let parts = groups
        .iter()
        .map(|grp| induced_subgraph(g, grp))
        .collect::<Result<Vec<_>>>()?;
    let cross_edges = g.edges().filter(|&(u, v)| owner[u] != owner[v]).collect();
    Ok(Partition {
        parts,
        cross_edges,
        original_n: g.num_nodes(),
    })
}

/// Reassemble edited parts. Original nodes return to their original indices;
/// nodes a part appended beyond its index map (generated nodes) get fresh
/// indices from `original_n` upward, in part order. `cross_edges` (original
/// indices) are restored verbatim.
pub fn merge_subgraphs(
    parts: &[(TextAttributedGraph, IndexMap)],
    original_n: usize,
    cross_edges: &[(usize, usize)],
) -> Result<TextAttributedGraph> {
    let first = parts
        .first()
        .map(|(g, _)| g)
        .ok_or_else(|| Error::invalid("merge_subgraphs: no parts"))?;
    let mut slots: Vec<Option<NodeRecord>> = vec![None; original_n];
    let mut extra: Vec<NodeRecord> = Vec::new();
    let mut edges = Vec::new();
    for (part, map) in parts {
        if part.num_classes() != first.num_classes() {
            return Err(Error::invalid("merge_subgraphs: parts disagree on num_classes"));
        }
        let mut global_of = Vec::with_capacity(part.num_nodes());
        for (local, node) in part.nodes().iter().enumerate() {
            let global = match map.global(local) {
                Some(gi) => {
                    if gi >= original_n {
                        return Err(Error::invalid(format!(
                            "merge_subgraphs: index {gi} beyond original_n {original_n}"
                        )));
                    }
                    if slots[gi].is_some() {
                        return Err(Error::invalid(format!(
                            "merge_subgraphs: overlapping index maps at node {gi}"
                        )));
                    }
                    slots[gi] = Some(NodeRecord {
                        id: gi,
                        ..node.clone()
                    });
                    gi
                }
                None => {
                    if !node.generated {
                        return Err(Error::invalid(format!(
                            "merge_subgraphs: unmapped node {local} is not marked generated"
                        )));
                    }
                    let gi = original_n + extra.len();
                    extra.push(NodeRecord {
                        id: gi,
                        ..node.clone()
                    });
                    gi
                }
            };
            global_of.push(global);
        }
        edges.extend(part.edges().map(|(u, v)| (global_of[u], global_of[v])));
    }
    let mut nodes = Vec::with_capacity(original_n + extra.len());
    for (i, slot) in slots.into_iter().enumerate() {
        nodes.push(slot.ok_or_else(|| {
            Error::invalid(format!("merge_subgraphs: original node {i} not covered"))
        })?);
    }
    nodes.extend(extra);
    edges.extend_from_slice(cross_edges);
    Ok(
        TextAttributedGraph::new(first.name(), first.num_classes(), nodes, edges)?
            .with_metadata(first.metadata().clone()),
    )
}
