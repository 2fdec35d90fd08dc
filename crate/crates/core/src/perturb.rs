//! Controlled degradation scenarios with invertible logs.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Split, TextAttributedGraph};
use crate::issue::Issue;
use crate::rng;

/// Fraction of tokens corrupted in each node selected by the TN scenario.
pub const TN_TOKEN_RATE: f64 = 0.4;
/// Token budget left by TI truncation.
pub const TI_KEEP_TOKENS: usize = 5;

const GARBAGE_LEXICON: &[&str] = &["x7#q", "@@", "%&", "q$z", "~~k", "##", "&*", "z^^"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: Issue,
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChange {
    pub node: usize,
    pub before: String,
    pub after: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelChange {
    pub node: usize,
    pub before: Option<usize>,
    pub after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitChange {
    pub node: usize,
    pub before: Split,
    pub after: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationLog {
    pub kind: Issue,
    pub ratio: f64,
    pub seed: u64,
    /// Size of the eligible population the ratio was applied to.
    pub population: usize,
    /// Nodes or edges the scenario selected.
    pub affected: usize,
    pub texts: Vec<TextChange>,
    pub removed_edges: Vec<(usize, usize)>,
    pub added_edges: Vec<(usize, usize)>,
    pub labels: Vec<LabelChange>,
    pub splits: Vec<SplitChange>,
}

impl PerturbationLog {
    fn new(spec: &ScenarioSpec) -> Self {
        Self {
            kind: spec.kind,
            ratio: spec.ratio,
            seed: spec.seed,
            population: 0,
            affected: 0,
            texts: Vec::new(),
            removed_edges: Vec::new(),
            added_edges: Vec::new(),
            labels: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
            && self.removed_edges.is_empty()
            && self.added_edges.is_empty()
            && self.labels.is_empty()
            && self.splits.is_empty()
    }
}

/// `round(ratio × population)`.
pub fn affected_count(ratio: f64, population: usize) -> usize {
    (ratio * population as f64).round() as usize
}

fn sample<T: Copy>(rng: &mut rng::Rng, pool: &[T], k: usize) -> Vec<T> {
    let mut v = pool.to_vec();
    v.shuffle(rng);
    v.truncate(k);
    v
}

fn corrupt_text(rng: &mut rng::Rng, text: &str) -> String {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let k = affected_count(TN_TOKEN_RATE, toks.len()).max(1);
    let positions: BTreeSet<usize> = sample(rng, &(0..toks.len()).collect::<Vec<_>>(), k).into_iter().collect();
    let mut out: Vec<String> = Vec::with_capacity(toks.len() + k);
    for (i, tok) in toks.iter().enumerate() {
        if !positions.contains(&i) {
            out.push(tok.to_string());
            continue;
        }
        let mut chars: Vec<char> = tok.chars().collect();
        let transposable: Vec<usize> = (0..chars.len().saturating_sub(1))
            .filter(|&j| chars[j] != chars[j + 1])
            .collect();
        if rng.random::<bool>() && !transposable.is_empty() {
            let j = *transposable.choose(rng).expect("non-empty");
            chars.swap(j, j + 1);
            out.push(chars.into_iter().collect());
        } else {
            out.push(GARBAGE_LEXICON.choose(rng).expect("non-empty").to_string());
            out.push(tok.to_string());
        }
    }
    out.join(" ")
}

fn truncate_text(text: &str) -> String {
    text.split_whitespace().take(TI_KEEP_TOKENS).collect::<Vec<_>>().join(" ")
}

fn text_scenario(
    g: &TextAttributedGraph,
    spec: &ScenarioSpec,
    log: &mut PerturbationLog,
    rng: &mut rng::Rng,
) -> Result<TextAttributedGraph> {
    let eligible: Vec<usize> = (0..g.num_nodes())
        .filter(|&v| {
            let len = g.node(v).text.split_whitespace().count();
            match spec.kind {
                Issue::TS => true,
                Issue::TN => len > 0,
                _ => len > TI_KEEP_TOKENS,
            }
        })
        .collect();
    log.population = eligible.len();
    let mut chosen = sample(rng, &eligible, affected_count(spec.ratio, eligible.len()));
    chosen.sort_unstable();
    log.affected = chosen.len();
    for v in chosen {
        let before = g.node(v).text.clone();
        let after = match spec.kind {
            Issue::TS => String::new(),
            Issue::TN => corrupt_text(rng, &before),
            _ => truncate_text(&before),
        };
        log.texts.push(TextChange { node: v, before, after });
    }
    g.edited(|e| {
        for c in &log.texts {
            e.node_mut(c.node).text = c.after.clone();
        }
    })
}

fn sn_eligible(g: &TextAttributedGraph, u: usize, v: usize) -> bool {
    if u == v || g.has_edge(u, v) {
        return false;
    }
    match (g.node(u).label, g.node(v).label) {
        (Some(a), Some(b)) => a != b,
        _ => true,
    }
}

fn sn_available(g: &TextAttributedGraph) -> usize {
    let n = g.num_nodes();
    let mut class_sizes = vec![0usize; g.num_classes()];
    for node in g.nodes() {
        if let Some(l) = node.label {
            class_sizes[l] += 1;
        }
    }
    let same: usize = class_sizes.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    let blocked_edges = g.edges().filter(|&(u, v)| !matches!((g.node(u).label, g.node(v).label), (Some(a), Some(b)) if a == b)).count();
    n * n.saturating_sub(1) / 2 - same - blocked_edges
}

fn add_noise_edges(
    g: &TextAttributedGraph,
    k: usize,
    log: &mut PerturbationLog,
    rng: &mut rng::Rng,
) -> Result<()> {
    let available = sn_available(g);
    if k > available {
        return Err(Error::invalid(format!(
            "SN needs {k} new edges but only {available} eligible non-adjacent pairs exist"
        )));
    }
    let n = g.num_nodes();
    let mut picked: BTreeSet<(usize, usize)> = BTreeSet::new();
    if k * 2 > available {
        let pool: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| sn_eligible(g, u, v))
            .collect();
        picked.extend(sample(rng, &pool, k));
    } else {
        while picked.len() < k {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            let pair = (u.min(v), u.max(v));
            if sn_eligible(g, pair.0, pair.1) {
                picked.insert(pair);
            }
        }
    }
    log.added_edges = picked.into_iter().collect();
    Ok(())
}

fn structure_scenario(
    g: &TextAttributedGraph,
    spec: &ScenarioSpec,
    log: &mut PerturbationLog,
    rng: &mut rng::Rng,
) -> Result<TextAttributedGraph> {
    let edges: Vec<(usize, usize)> = g.edges().collect();
    match spec.kind {
        Issue::SS => {
            log.population = edges.len();
            let mut removed = sample(rng, &edges, affected_count(spec.ratio, edges.len()));
            removed.sort_unstable();
            log.affected = removed.len();
            log.removed_edges = removed;
        }
        Issue::SN => {
            log.population = edges.len();
            let k = affected_count(spec.ratio, edges.len());
            add_noise_edges(g, k, log, rng)?;
            log.affected = k;
        }
        _ => {
            // bottom ratio-quantile of degree, ties in random order
            let n = g.num_nodes();
            log.population = n;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order.sort_by_key(|&v| g.degree(v));
            order.truncate(affected_count(spec.ratio, n));
            log.affected = order.len();
            let mut work = g.clone();
            let mut removed = BTreeSet::new();
            for v in order {
                let nbrs: Vec<usize> = work.neighbors(v).collect();
                if nbrs.len() <= 1 {
                    continue;
                }
                let keep = *nbrs.choose(rng).expect("non-empty");
                for u in nbrs.into_iter().filter(|&u| u != keep) {
                    work.delete_edge(u, v);
                    removed.insert((u.min(v), u.max(v)));
                }
            }
            log.removed_edges = removed.into_iter().collect();
        }
    }
    g.edited(|e| {
        for &(u, v) in &log.removed_edges {
            e.remove_edge(u, v);
        }
        for &(u, v) in &log.added_edges {
            e.add_edge(u, v);
        }
    })
}

fn label_scenario(
    g: &TextAttributedGraph,
    spec: &ScenarioSpec,
    log: &mut PerturbationLog,
    rng: &mut rng::Rng,
) -> Result<TextAttributedGraph> {
    let d = g.num_classes();
    match spec.kind {
        Issue::LS => {
            let train: Vec<usize> = (0..g.num_nodes()).filter(|&v| g.node(v).split == Split::Train).collect();
            log.population = train.len();
            let mut chosen = sample(rng, &train, affected_count(spec.ratio, train.len()));
            chosen.sort_unstable();
            log.affected = chosen.len();
            log.splits = chosen
                .into_iter()
                .map(|node| SplitChange {
                    node,
                    before: Split::Train,
                    after: Split::Unlabeled,
                })
                .collect();
        }
        Issue::LN => {
            let labeled: Vec<usize> = (0..g.num_nodes()).filter(|&v| g.node(v).train_label().is_some()).collect();
            log.population = labeled.len();
            let k = affected_count(spec.ratio, labeled.len());
            if k > 0 && d < 2 {
                return Err(Error::invalid("LN needs at least two classes"));
            }
            let mut chosen = sample(rng, &labeled, k);
            chosen.sort_unstable();
            log.affected = chosen.len();
            for node in chosen {
                let old = g.node(node).label.expect("labeled");
                let mut new = rng.random_range(0..d - 1);
                if new >= old {
                    new += 1;
                }
                log.labels.push(LabelChange {
                    node,
                    before: Some(old),
                    after: Some(new),
                });
            }
        }
        _ => {
            if d < 2 {
                return Err(Error::invalid("LI needs at least two classes"));
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d];
            for v in 0..g.num_nodes() {
                if let Some(l) = g.node(v).train_label() {
                    by_class[l].push(v);
                }
            }
            let largest = (0..d)
                .max_by(|&a, &b| by_class[a].len().cmp(&by_class[b].len()).then(b.cmp(&a)))
                .expect("d >= 2");
            let mut chosen = Vec::new();
            for (c, members) in by_class.iter().enumerate() {
                if c == largest {
                    continue;
                }
                log.population += members.len();
                chosen.extend(sample(rng, members, affected_count(spec.ratio, members.len())));
            }
            chosen.sort_unstable();
            log.affected = chosen.len();
            log.labels = chosen
                .into_iter()
                .map(|node| LabelChange {
                    node,
                    before: g.node(node).label,
                    after: None,
                })
                .collect();
        }
    }
    g.edited(|e| {
        for c in &log.labels {
            e.node_mut(c.node).label = c.after;
        }
        for c in &log.splits {
            e.node_mut(c.node).split = c.after;
        }
    })
}

/// Apply one degradation scenario. Deterministic in `spec.seed`.
pub fn apply_scenario(g: &TextAttributedGraph, spec: &ScenarioSpec) -> Result<(TextAttributedGraph, PerturbationLog)> {
    if !(0.0..=1.0).contains(&spec.ratio) {
        return Err(Error::invalid(format!("ratio {} outside [0,1]", spec.ratio)));
    }
    let mut rng = rng::stream(spec.seed, &format!("perturb/{}", spec.kind));
    let mut log = PerturbationLog::new(spec);
    let out = match spec.kind {
        Issue::TS | Issue::TN | Issue::TI => text_scenario(g, spec, &mut log, &mut rng)?,
        Issue::SS | Issue::SN | Issue::SI => structure_scenario(g, spec, &mut log, &mut rng)?,
        Issue::LS | Issue::LN | Issue::LI => label_scenario(g, spec, &mut log, &mut rng)?,
    };
    Ok((out, log))
}

/// Undo a perturbation given its log.
pub fn invert(g: &TextAttributedGraph, log: &PerturbationLog) -> Result<TextAttributedGraph> {
    for c in &log.texts {
        if c.node >= g.num_nodes() || g.node(c.node).text != c.after {
            return Err(Error::invalid(format!("log does not match graph at node {}", c.node)));
        }
    }
    g.edited(|e| {
        for c in &log.texts {
            e.node_mut(c.node).text = c.before.clone();
        }
        for &(u, v) in &log.added_edges {
            e.remove_edge(u, v);
        }
        for &(u, v) in &log.removed_edges {
            e.add_edge(u, v);
        }
        for c in &log.labels {
            e.node_mut(c.node).label = c.before;
        }
        for c in &log.splits {
            e.node_mut(c.node).split = c.before;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeRecord;

    fn ring(n: usize, d: usize) -> TextAttributedGraph {
        let nodes = (0..n)
            .map(|i| NodeRecord::new(i, "graph neural network model with text attributes here", Some(i % d), Split::Train))
            .collect();
        let edges = (0..n).map(|i| (i, (i + 1) % n));
        TextAttributedGraph::new("ring", d, nodes, edges).unwrap()
    }

    #[test]
    fn zero_ratio_is_identity() {
        let g = ring(10, 2);
        for kind in Issue::ALL {
            let (h, log) = apply_scenario(&g, &ScenarioSpec { kind, ratio: 0.0, seed: 3 }).unwrap();
            assert_eq!(h, g);
            assert!(log.is_empty(), "{kind}");
        }
    }

    #[test]
    fn ln_flips_exact_count() {
        let g = ring(100, 7);
        let (h, log) = apply_scenario(&g, &ScenarioSpec { kind: Issue::LN, ratio: 0.4, seed: 1 }).unwrap();
        assert_eq!(log.labels.len(), 40);
        assert!(log.labels.iter().all(|c| c.before != c.after));
        assert_eq!(invert(&h, &log).unwrap(), g);
    }

    #[test]
    fn ss_is_reproducible() {
        let g = ring(10, 2);
        let spec = ScenarioSpec { kind: Issue::SS, ratio: 0.5, seed: 1 };
        let (h, a) = apply_scenario(&g, &spec).unwrap();
        let (_, b) = apply_scenario(&g, &spec).unwrap();
        assert_eq!(a.removed_edges.len(), 5);
        assert_eq!(a, b);
        assert_eq!(h.num_edges(), 5);
    }

    #[test]
    fn ratio_out_of_range() {
        let g = ring(4, 2);
        assert!(apply_scenario(&g, &ScenarioSpec { kind: Issue::TS, ratio: 1.5, seed: 0 }).is_err());
    }

    #[test]
    fn sn_rejects_impossible_requests() {
        // complete graph on 4 nodes: nothing left to add
        let nodes = (0..4).map(|i| NodeRecord::new(i, "", None, Split::Train)).collect();
        let edges = (0..4).flat_map(|u| (u + 1..4).map(move |v| (u, v)));
        let g = TextAttributedGraph::new("k4", 2, nodes, edges).unwrap();
        assert!(apply_scenario(&g, &ScenarioSpec { kind: Issue::SN, ratio: 0.5, seed: 0 }).is_err());
    }
}
