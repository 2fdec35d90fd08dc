//! Synthetic text-attributed graphs from a stochastic block model, with
//! class-keyword texts and a stratified split.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeRecord, Split, TextAttributedGraph};
use crate::rng;

const TOPICS: [[&str; 8]; 6] = [
    ["neural", "network", "layer", "training", "gradient", "activation", "backprop", "weights"],
    ["protein", "enzyme", "cell", "membrane", "gene", "molecule", "receptor", "binding"],
    ["market", "price", "trade", "inflation", "demand", "supply", "currency", "interest"],
    ["galaxy", "star", "orbit", "telescope", "planet", "cosmic", "nebula", "radiation"],
    ["court", "statute", "contract", "appeal", "verdict", "liability", "tort", "plaintiff"],
    ["poem", "novel", "verse", "narrative", "author", "metaphor", "prose", "stanza"],
];

const FILLER: [&str; 24] = [
    "the", "study", "method", "results", "approach", "we", "present", "analysis", "based", "data", "new", "paper",
    "show", "using", "model", "work", "this", "propose", "several", "effect", "report", "find", "general", "role",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmSpec {
    pub name: String,
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Chance that a token is a class keyword rather than filler.
    pub keyword_rate: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Train and validation fractions; the rest is test.
    pub train: f64,
    pub validation: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            name: "sbm".into(),
            nodes: 300,
            classes: 4,
            p_in: 0.16,
            p_out: 0.005,
            keyword_rate: 0.35,
            min_tokens: 10,
            max_tokens: 18,
            train: 0.6,
            validation: 0.2,
            seed: 0,
        }
    }
}

/// Keyword list of class `c`.
pub fn class_keywords(c: usize) -> Vec<String> {
    match TOPICS.get(c) {
        Some(words) => words.iter().map(|w| w.to_string()).collect(),
        None => (0..8).map(|k| format!("topic{c}term{k}")).collect(),
    }
}

pub fn sbm_graph(spec: &SbmSpec) -> Result<TextAttributedGraph> {
    if spec.classes == 0 || spec.nodes < spec.classes {
        return Err(Error::invalid("need at least one node per class"));
    }
    if !(0.0..=1.0).contains(&spec.p_in) || !(0.0..=1.0).contains(&spec.p_out) {
        return Err(Error::invalid("edge probabilities must lie in [0,1]"));
    }
    if spec.min_tokens == 0 || spec.max_tokens < spec.min_tokens {
        return Err(Error::invalid("token range must be non-empty"));
    }
    if spec.train < 0.0 || spec.validation < 0.0 || spec.train + spec.validation > 1.0 {
        return Err(Error::invalid("split fractions must be non-negative and sum to at most 1"));
    }
    let n = spec.nodes;
    let d = spec.classes;
    let label: Vec<usize> = (0..n).map(|i| i % d).collect();

    let mut r = rng::stream(spec.seed, "synth.edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if label[u] == label[v] { spec.p_in } else { spec.p_out };
            if r.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let mut r = rng::stream(spec.seed, "synth.texts");
    let vocab: Vec<Vec<String>> = (0..d).map(class_keywords).collect();
    let texts: Vec<String> = (0..n)
        .map(|i| {
            let len = r.random_range(spec.min_tokens..=spec.max_tokens);
            let mut words: Vec<&str> = (0..len)
                .map(|_| {
                    if r.random_bool(spec.keyword_rate) {
                        vocab[label[i]].choose(&mut r).expect("non-empty").as_str()
                    } else {
                        FILLER.choose(&mut r).expect("non-empty")
                    }
                })
                .collect();
            words[0] = vocab[label[i]].choose(&mut r).expect("non-empty");
            let cut = len / 2;
            format!("{}. {}.", words[..cut].join(" "), words[cut..].join(" "))
        })
        .collect();

    let mut split = vec![Split::Test; n];
    let mut r = rng::stream(spec.seed, "synth.split");
    for c in 0..d {
        let mut members: Vec<usize> = (0..n).filter(|&i| label[i] == c).collect();
        members.shuffle(&mut r);
        let tr = (spec.train * members.len() as f64).round() as usize;
        let va = (spec.validation * members.len() as f64).round() as usize;
        for (k, &i) in members.iter().enumerate() {
            split[i] = if k < tr {
                Split::Train
            } else if k < tr + va {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }

    let nodes = (0..n)
        .map(|i| NodeRecord::new(i, texts[i].clone(), Some(label[i]), split[i]))
        .collect();
    TextAttributedGraph::new(spec.name.clone(), d, nodes, edges)
}
