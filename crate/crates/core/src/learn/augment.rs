//! Text augmentation: summaries, keywords and pseudo-labels per node.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Result;
use crate::graph::TextAttributedGraph;
use crate::llm::{prompts, LlmClient, ProviderRequest, Role, Schema};
use crate::par;
use crate::text::{self, Corpus};

pub const SUMMARY_SENTENCES: usize = 2;
pub const KEYWORDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeAugmentation {
    pub summary: String,
    pub keywords: Vec<String>,
    /// Distribution over classes.
    pub pseudo_label: Vec<f64>,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub nodes: Vec<NodeAugmentation>,
}

impl Augmentation {
    /// `t_i ⊕ summary ⊕ keywords`.
    pub fn enriched_texts(&self, g: &TextAttributedGraph) -> Vec<String> {
        g.nodes()
            .iter()
            .zip(&self.nodes)
            .map(|(n, a)| {
                [n.text.as_str(), a.summary.as_str(), &a.keywords.join(" ")]
                    .iter()
                    .filter(|s| !s.is_empty())
                    .copied()
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    pub fn pseudo_labels(&self, d: usize) -> Array2<f64> {
        let mut y = Array2::zeros((self.nodes.len(), d));
        for (i, a) in self.nodes.iter().enumerate() {
            for (k, &p) in a.pseudo_label.iter().enumerate() {
                y[[i, k]] = p;
            }
        }
        y
    }
}

fn one_hot_or_uniform(class: Option<usize>, d: usize) -> Vec<f64> {
    match class {
        Some(c) => (0..d).map(|k| if k == c { 1.0 } else { 0.0 }).collect(),
        None => vec![1.0 / d as f64; d],
    }
}

/// Rule-based augmentation of one node.
pub fn fallback_node(corpus: &Corpus, text: &str, cluster_class: Option<usize>, d: usize) -> NodeAugmentation {
    let empty = text::tokens(text).is_empty();
    NodeAugmentation {
        summary: text::first_sentences(text, SUMMARY_SENTENCES),
        keywords: corpus.keywords(text, KEYWORDS),
        pseudo_label: one_hot_or_uniform(if empty { None } else { cluster_class }, d),
        fallback: true,
    }
}

fn from_value(v: &Value, fallback: bool) -> NodeAugmentation {
    let p: Vec<f64> = v["pseudo_label"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    let z: f64 = p.iter().sum();
    NodeAugmentation {
        summary: v["summary"].as_str().unwrap_or_default().to_string(),
        keywords: v["keywords"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default(),
        pseudo_label: p.iter().map(|x| x / z).collect(),
        fallback,
    }
}

/// Augment every node. `cluster_class[i]` is the class that node `i`'s
/// k-means cluster maps to, if any. With an online client each node is
/// sent to the provider; failures fall back per node.
pub fn augment_texts(
    g: &TextAttributedGraph,
    cluster_class: &[Option<usize>],
    llm: Option<&LlmClient>,
) -> Result<Augmentation> {
    let d = g.num_classes();
    let corpus = Corpus::new(g.nodes().iter().map(|n| n.text.as_str()));
    let online = llm.filter(|c| c.is_online());
    let nodes = par::try_map(g.num_nodes(), |i| {
        let text = g.node(i).text.as_str();
        let fb = fallback_node(&corpus, text, cluster_class[i], d);
        let Some(client) = online else { return Ok(fb) };
        if text.trim().is_empty() {
            return Ok(fb);
        }
        let prompt = prompts::render(prompts::AUGMENT, &[("classes", &d.to_string()), ("text", text)]);
        let req = ProviderRequest::new(Role::LearnAugment, prompt, Schema::Augment { classes: d });
        let c = client.complete(&req, || {
            json!({"summary": fb.summary, "keywords": fb.keywords, "pseudo_label": fb.pseudo_label})
        })?;
        if c.fallback {
            log::info!("augmentation of node {i} fell back to rules");
        }
        Ok(from_value(&c.value, c.fallback))
    })?;
    Ok(Augmentation { nodes })
}
