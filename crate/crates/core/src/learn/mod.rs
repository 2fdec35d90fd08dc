//! Dual-encoder graph learning: a semantic MLP over enriched text features and
//! a structural GCN with a link predictor, trained by full-batch gradient
//! descent with hand-derived gradients.

pub mod augment;
pub mod nn;
pub mod semantic;
mod state;
pub mod structural;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, HashingEncoder, DEFAULT_FEATURE_DIM};
use crate::graph::TextAttributedGraph;
use crate::plan::LossWeights;
use crate::rng;

pub use augment::{augment_texts, Augmentation, NodeAugmentation};
pub use semantic::{SemanticBatch, SemanticParams};
pub use state::{load_state, save_state, STATE_MAGIC};
pub use structural::{Frame, NormAdj, StructuralBatch, StructuralParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub temperature: f64,
    pub negatives_per_node: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Cap on positive pairs in the reconstruction frame.
    pub max_positive_pairs: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: DEFAULT_FEATURE_DIM,
            hidden_dim: 64,
            temperature: 0.5,
            negatives_per_node: 5,
            epochs: 200,
            learning_rate: 0.2,
            seed: 0,
            max_positive_pairs: 2000,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.negatives_per_node == 0 {
            return Err(Error::Config("negatives_per_node must be at least 1".into()));
        }
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Flat views over a parameter set, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<(&'static str, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += a · other`.
    fn axpy(&mut self, a: f64, other: &Self)
    where
        Self: Sized,
    {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub sema: f64,
    pub structure: f64,
    pub label: f64,
    pub total: f64,
}

impl LossParts {
    pub fn new(sema: f64, structure: f64, label: f64, w: &LossWeights) -> Self {
        Self {
            sema,
            structure,
            label,
            total: w.alpha * sema + w.beta * structure + w.gamma * label,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sema.is_finite() && self.structure.is_finite() && self.label.is_finite() && self.total.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub encoder: String,
    pub epoch: usize,
    pub loss: LossParts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedState {
    pub config: EncoderConfig,
    pub weights: LossWeights,
    pub num_classes: usize,
    /// Texts the feature encoder was fitted on.
    pub enriched_texts: Vec<String>,
    pub pseudo_labels: Array2<f64>,
    pub semantic: SemanticParams,
    pub structural: StructuralParams,
    pub h_sem: Array2<f64>,
    pub sem_logits: Array2<f64>,
    pub h_stu: Array2<f64>,
    pub stu_logits: Array2<f64>,
    pub trace: Vec<EpochLoss>,
}

impl LearnedState {
    pub fn num_nodes(&self) -> usize {
        self.h_stu.nrows()
    }

    pub fn encoder(&self) -> HashingEncoder {
        HashingEncoder::fit(self.enriched_texts.iter().map(String::as_str), self.config.feature_dim)
    }

    /// Softmax of the structural class head.
    pub fn structural_probs(&self) -> Array2<f64> {
        nn::softmax_rows(&self.stu_logits)
    }
}

/// Per-node neighbor lists in index order.
pub fn neighbor_lists(g: &TextAttributedGraph) -> Vec<Vec<usize>> {
    (0..g.num_nodes()).map(|v| g.neighbors(v).collect()).collect()
}

/// `k` non-neighbors per node, drawn uniformly with replacement.
pub fn sample_negatives(g: &TextAttributedGraph, k: usize, rng: &mut rng::Rng) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    (0..n)
        .map(|i| {
            if g.degree(i) + 1 >= n {
                return Vec::new();
            }
            let mut out = Vec::with_capacity(k);
            while out.len() < k {
                let j = rng.random_range(0..n);
                if j != i && !g.has_edge(i, j) {
                    out.push(j);
                }
            }
            out
        })
        .collect()
}

fn descend<P: Parameters + Clone>(
    params: &mut P,
    cfg: &EncoderConfig,
    encoder: &str,
    step: impl Fn(&P) -> (LossParts, P),
) -> Result<Vec<EpochLoss>> {
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = step(params);
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite(format!(
                "{encoder} encoder, seed {}, epoch {epoch}: loss {:?}",
                cfg.seed, loss
            )));
        }
        params.axpy(-cfg.learning_rate, &grad);
        trace.push(EpochLoss {
            encoder: encoder.to_string(),
            epoch,
            loss,
        });
    }
    Ok(trace)
}

/// Train the semantic encoder, returning parameters and loss trace.
pub fn train_semantic(
    x: &FeatureMatrix,
    aug: &Augmentation,
    g: &TextAttributedGraph,
    weights: &LossWeights,
    cfg: &EncoderConfig,
) -> Result<(SemanticParams, Vec<EpochLoss>)> {
    cfg.validate()?;
    let d = g.num_classes();
    let y_pse = aug.pseudo_labels(d);
    let labels = g.train_labels();
    let neighbors = neighbor_lists(g);
    let negatives = sample_negatives(g, cfg.negatives_per_node, &mut rng::stream(cfg.seed, "learn.negatives"));
    let batch = SemanticBatch {
        x,
        y_pse: &y_pse,
        labels: &labels,
        neighbors: &neighbors,
        negatives: &negatives,
        tau: cfg.temperature,
    };
    let mut params = SemanticParams::init(x.dim(), cfg.hidden_dim, d, &mut rng::stream(cfg.seed, "learn.semantic.init"));
    let trace = descend(&mut params, cfg, "semantic", |p| semantic::loss_and_grad(p, &batch, weights))?;
    Ok((params, trace))
}

/// Train the structural encoder and link predictor against fixed semantic
/// embeddings.
pub fn train_structural(
    x: &FeatureMatrix,
    h_sem: &Array2<f64>,
    g: &TextAttributedGraph,
    weights: &LossWeights,
    cfg: &EncoderConfig,
) -> Result<(StructuralParams, Vec<EpochLoss>)> {
    cfg.validate()?;
    let labels = g.train_labels();
    let adj = NormAdj::new(g);
    let frame = if weights.alpha != 0.0 || weights.beta != 0.0 {
        Frame::sample(g, cfg.max_positive_pairs, &mut rng::stream(cfg.seed, "learn.frame"))
    } else {
        Frame::default()
    };
    let batch = StructuralBatch {
        x,
        adj: &adj,
        h_sem,
        labels: &labels,
        frame: &frame,
    };
    let mut params = StructuralParams::init(
        x.dim(),
        cfg.hidden_dim,
        g.num_classes(),
        &mut rng::stream(cfg.seed, "learn.structural.init"),
    );
    let trace = descend(&mut params, cfg, "structural", |p| structural::loss_and_grad(p, &batch, weights))?;
    Ok((params, trace))
}

/// Full graph-learning step.
pub fn train(g: &TextAttributedGraph, aug: &Augmentation, weights: &LossWeights, cfg: &EncoderConfig) -> Result<LearnedState> {
    if aug.nodes.len() != g.num_nodes() {
        return Err(Error::invalid("augmentation is not row-aligned with the graph"));
    }
    let enriched_texts = aug.enriched_texts(g);
    let encoder = HashingEncoder::fit(enriched_texts.iter().map(String::as_str), cfg.feature_dim);
    let x = encoder.encode_all(enriched_texts.iter().map(String::as_str));

    let (semantic, mut trace) = train_semantic(&x, aug, g, weights, cfg)?;
    let sem = semantic::forward(&semantic, &x);
    let (structural, t2) = train_structural(&x, &sem.z, g, weights, cfg)?;
    trace.extend(t2);
    let stu = structural::gcn_forward(&structural.gcn, &x, &NormAdj::new(g));

    Ok(LearnedState {
        config: cfg.clone(),
        weights: *weights,
        num_classes: g.num_classes(),
        enriched_texts,
        pseudo_labels: aug.pseudo_labels(g.num_classes()),
        semantic,
        structural,
        h_sem: sem.z,
        sem_logits: sem.logits,
        h_stu: stu.h,
        stu_logits: stu.logits,
        trace,
    })
}

/// Link-predictor probabilities for node pairs of the graph the state was
/// trained on.
pub fn predict_edge_probabilities(state: &LearnedState, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = state.num_nodes();
    for &(i, j) in pairs {
        if i == j {
            return Err(Error::invalid(format!("self-pair not allowed: ({i},{i})")));
        }
        if i >= n || j >= n {
            return Err(Error::invalid(format!("pair ({i},{j}) references an unknown node")));
        }
    }
    Ok(structural::link_probs(&state.structural.link, &state.h_stu, pairs))
}
