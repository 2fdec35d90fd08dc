use serde::{Deserialize, Serialize};

use super::DetectionConfig;
use crate::cluster;
use crate::features::FeatureMatrix;
use crate::graph::{Split, TextAttributedGraph};

/// A class guess with its confidence in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    /// No supervision label (train node without label, or unlabeled split).
    pub missing: bool,
    pub vote: Option<Prediction>,
    pub cluster: Option<Prediction>,
    /// Fused prediction; absent when neither confidence reaches `tau_c`.
    pub fused: Option<Prediction>,
    pub noisy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDiagnostics {
    pub nodes: Vec<LabelScores>,
    /// Cluster id per node from the k-means pass.
    pub clusters: Vec<usize>,
    /// Class that each cluster maps to, when it holds labeled nodes.
    pub cluster_classes: Vec<Option<usize>>,
    pub class_counts: Vec<usize>,
    /// Empirical class distribution over supervision labels; all zeros when
    /// nothing is labeled.
    pub class_distribution: Vec<f64>,
    pub noise_detection_enabled: bool,
}

/// Majority vote among labeled neighbors; confidence is the winning
/// fraction. Ties go to the smaller class id.
pub fn neighborhood_vote(labels: impl IntoIterator<Item = usize>, num_classes: usize) -> Option<Prediction> {
    let mut counts = vec![0usize; num_classes];
    let mut total = 0;
    for l in labels {
        counts[l] += 1;
        total += 1;
    }
    if total == 0 {
        return None;
    }
    let (label, &best) = counts
        .iter()
        .enumerate()
        .fold((0, &0), |acc, (c, n)| if n > acc.1 { (c, n) } else { acc });
    Some(Prediction {
        label,
        confidence: best as f64 / total as f64,
    })
}

/// Pick the more confident of the two predictions, provided its confidence
/// reaches `tau_c`. Ties favour the neighborhood vote.
pub fn fuse(vote: Option<Prediction>, cluster: Option<Prediction>, tau_c: f64) -> Option<Prediction> {
    let best = match (vote, cluster) {
        (Some(a), Some(b)) => Some(if b.confidence > a.confidence { b } else { a }),
        (a, b) => a.or(b),
    }?;
    (best.confidence >= tau_c).then_some(best)
}

pub fn label_diagnostics(
    g: &TextAttributedGraph,
    features: &FeatureMatrix,
    cfg: &DetectionConfig,
) -> LabelDiagnostics {
    let n = g.num_nodes();
    let d = g.num_classes();
    let labels = g.train_labels();

    let mut class_counts = vec![0usize; d];
    for l in labels.iter().flatten() {
        class_counts[*l] += 1;
    }
    let labeled: usize = class_counts.iter().sum();
    let class_distribution = class_counts
        .iter()
        .map(|&c| if labeled == 0 { 0.0 } else { c as f64 / labeled as f64 })
        .collect();

    let k = if d >= 2 {
        d
    } else {
        cluster::choose_k(features, cfg.kmeans_max_k, cfg.seed)
    };
    let (clusters, cluster_classes, cluster_conf) = if n == 0 {
        (Vec::new(), Vec::new(), Vec::new())
    } else {
        let km = cluster::kmeans(features, k, cfg.seed, 100);
        let kk = km.centroids.len();
        let mut tally = vec![vec![0usize; d]; kk];
        for (v, &c) in km.assignment.iter().enumerate() {
            if let Some(l) = labels[v] {
                tally[c][l] += 1;
            }
        }
        let mut classes = Vec::with_capacity(kk);
        let mut conf = Vec::with_capacity(kk);
        for row in &tally {
            match neighborhood_vote(
                row.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)),
                d,
            ) {
                Some(p) => {
                    classes.push(Some(p.label));
                    conf.push(p.confidence);
                }
                None => {
                    classes.push(None);
                    conf.push(0.0);
                }
            }
        }
        (km.assignment, classes, conf)
    };

    let noise_detection_enabled = labeled > 0;
    if !noise_detection_enabled {
        log::warn!("no supervision labels; label-noise detection disabled");
    }

    let nodes = (0..n)
        .map(|v| {
            let node = g.node(v);
            let missing = labels[v].is_none() && matches!(node.split, Split::Train | Split::Unlabeled);
            let vote = neighborhood_vote(g.neighbors(v).filter_map(|u| labels[u]), d);
            let cluster = cluster_classes[clusters[v]].map(|label| Prediction {
                label,
                confidence: cluster_conf[clusters[v]],
            });
            let fused = fuse(vote, cluster, cfg.tau_c);
            let noisy = noise_detection_enabled
                && matches!((labels[v], fused), (Some(y), Some(p)) if p.label != y);
            LabelScores {
                missing,
                vote,
                cluster,
                fused,
                noisy,
            }
        })
        .collect();

    LabelDiagnostics {
        nodes,
        clusters,
        cluster_classes,
        class_counts,
        class_distribution,
        noise_detection_enabled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::encode_features;
    use crate::graph::NodeRecord;

    fn p(label: usize, confidence: f64) -> Option<Prediction> {
        Some(Prediction { label, confidence })
    }

    #[test]
    fn vote_counts() {
        let v = neighborhood_vote([0, 0, 1], 2).unwrap();
        assert_eq!(v.label, 0);
        assert!((v.confidence - 2.0 / 3.0).abs() < 1e-15);
        assert!(neighborhood_vote([], 2).is_none());
    }

    #[test]
    fn fusion_rule() {
        assert_eq!(fuse(p(1, 0.9), p(2, 0.6), 0.7), p(1, 0.9));
        assert_eq!(fuse(p(1, 0.5), p(2, 0.6), 0.7), None);
        assert_eq!(fuse(p(1, 0.5), p(2, 0.8), 0.7), p(2, 0.8));
        assert_eq!(fuse(None, p(2, 0.8), 0.7), p(2, 0.8));
    }

    #[test]
    fn clean_homophilous_cliques_have_no_noise() {
        // two 4-cliques, every node labeled with its clique's class
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for c in 0..2 {
            for i in 0..4 {
                let id = c * 4 + i;
                let text = if c == 0 { "alpha beta gamma" } else { "delta epsilon zeta" };
                nodes.push(NodeRecord::new(id, text, Some(c), Split::Train));
                for j in 0..i {
                    edges.push((c * 4 + j, id));
                }
            }
        }
        let g = TextAttributedGraph::new("t", 2, nodes, edges).unwrap();
        let f = encode_features(&g.texts(), 256);
        for tau_c in [0.0, 0.5, 1.0] {
            let cfg = DetectionConfig {
                tau_c,
                ..DetectionConfig::default()
            };
            let diag = label_diagnostics(&g, &f, &cfg);
            assert!(diag.nodes.iter().all(|s| !s.noisy));
        }
    }
}
