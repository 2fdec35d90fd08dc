//! Detection: text, structure and label diagnostics assembled into a report
//! of global statistics and localized problem sets.

pub mod labels;
pub mod louvain;
pub mod structure;
pub mod text;

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::graph::TextAttributedGraph;
use crate::issue::Issue;

pub use labels::{label_diagnostics, LabelDiagnostics, LabelScores, Prediction};
pub use louvain::{louvain, modularity, Communities};
pub use structure::{structure_diagnostics, CommunityStats, DegreeStats};
pub use text::{text_diagnostics, TextScores};

pub const REPORT_SCHEMA: &str = "detect/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Minimum token count before a text counts as sparse.
    pub tau_s_text: f64,
    /// Maximum tolerated error rate.
    pub tau_n_text: f64,
    /// Minimum informativeness.
    pub tau_imb_text: f64,
    /// Texts shorter than this fraction of the median length are imbalanced.
    pub length_ratio_ref: f64,
    /// Minimum fused label-prediction confidence.
    pub tau_c: f64,
    pub sparse_degree_ref: f64,
    pub density_ref: f64,
    /// Noisy if entropy exceeds `entropy_ref · ln|C|`.
    pub entropy_ref: f64,
    pub jaccard_ref: f64,
    pub gini_ref: f64,
    /// Nodes below this fraction of the mean degree are reported as
    /// low-degree when the degree distribution is flagged as imbalanced.
    pub low_degree_ratio: f64,
    /// Classes below this fraction of the largest class are minorities.
    pub minority_ratio: f64,
    pub kmeans_max_k: usize,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            tau_s_text: 5.0,
            tau_n_text: 0.15,
            tau_imb_text: 0.0,
            length_ratio_ref: 0.5,
            tau_c: 0.6,
            sparse_degree_ref: 4.0,
            density_ref: 0.02,
            entropy_ref: 0.999,
            jaccard_ref: 0.06,
            gini_ref: 0.3,
            low_degree_ratio: 0.5,
            minority_ratio: 0.8,
            kmeans_max_k: 10,
            seed: 0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let finite = [
            self.tau_s_text,
            self.tau_n_text,
            self.tau_imb_text,
            self.length_ratio_ref,
            self.tau_c,
            self.sparse_degree_ref,
            self.density_ref,
            self.entropy_ref,
            self.jaccard_ref,
            self.gini_ref,
            self.low_degree_ratio,
            self.minority_ratio,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::Config("detection thresholds must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_n_text) || !(0.0..=1.0).contains(&self.tau_c) {
            return Err(crate::Error::Config("tau_n_text and tau_c must lie in [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextGlobal {
    pub mean_sparsity: f64,
    pub mean_noise: f64,
    pub mean_informativeness: f64,
    pub noisy_fraction: f64,
    pub imbalanced_fraction: f64,
    /// Coefficient of variation of token counts.
    pub length_cv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureGlobal {
    pub communities: usize,
    pub modularity: f64,
    pub mean_degree: f64,
    pub mean_density: f64,
    pub mean_entropy: f64,
    pub mean_jaccard: f64,
    pub sparse_node_fraction: f64,
    pub noisy_node_fraction: f64,
    pub degree: DegreeStats,
    pub imbalanced: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelGlobal {
    pub missing_fraction: f64,
    /// Flagged-noisy nodes over all nodes.
    pub noisy_fraction: f64,
    /// Flagged-noisy nodes over labeled nodes.
    pub noisy_rate: f64,
    pub class_counts: Vec<usize>,
    pub class_distribution: Vec<f64>,
    /// `1 − min_c count / max_c count` over supervision labels.
    pub imbalance_ratio: f64,
    pub noise_detection_enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub text: TextGlobal,
    pub structure: StructureGlobal,
    pub label: LabelGlobal,
}

impl GlobalStats {
    /// Scalar summary driving the severity of `issue`; larger is worse.
    pub fn issue_statistic(&self, issue: Issue) -> f64 {
        match issue {
            Issue::TS => self.text.mean_sparsity,
            Issue::TN => self.text.noisy_fraction,
            Issue::TI => self.text.imbalanced_fraction,
            Issue::SS => self.structure.sparse_node_fraction,
            Issue::SN => self.structure.noisy_node_fraction,
            Issue::SI => self.structure.degree.gini,
            Issue::LS => self.label.missing_fraction,
            Issue::LN => self.label.noisy_rate,
            Issue::LI => self.label.imbalance_ratio,
        }
    }

    pub fn issue_statistics(&self) -> [f64; 9] {
        Issue::ALL.map(|i| self.issue_statistic(i))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyLabel {
    pub node: usize,
    pub label: usize,
    pub predicted: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalProblems {
    pub text_sparse: Vec<usize>,
    pub text_noisy: Vec<usize>,
    pub text_imbalanced: Vec<usize>,
    pub sparse_communities: Vec<Vec<usize>>,
    pub noisy_communities: Vec<Vec<usize>>,
    pub low_degree_nodes: Vec<usize>,
    pub missing_labels: Vec<usize>,
    pub noisy_labels: Vec<NoisyLabel>,
    pub minority_classes: Vec<usize>,
}

impl LocalProblems {
    pub fn is_empty(&self) -> bool {
        self.text_sparse.is_empty()
            && self.text_noisy.is_empty()
            && self.text_imbalanced.is_empty()
            && self.sparse_communities.is_empty()
            && self.noisy_communities.is_empty()
            && self.low_degree_nodes.is_empty()
            && self.missing_labels.is_empty()
            && self.noisy_labels.is_empty()
            && self.minority_classes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema: String,
    pub log_base: String,
    pub n: usize,
    pub m: usize,
    pub num_classes: usize,
    pub global: GlobalStats,
    pub local: LocalProblems,
    /// Community id per node.
    pub communities: Vec<usize>,
    /// Majority class of each node's k-means cluster, when it has one.
    pub cluster_labels: Vec<Option<usize>>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Combine the three diagnostic passes into a report.
pub fn assemble_report(
    g: &TextAttributedGraph,
    cfg: &DetectionConfig,
    text: &[TextScores],
    communities: &Communities,
    community_stats: &[CommunityStats],
    degree: DegreeStats,
    labels: &LabelDiagnostics,
) -> DetectionReport {
    let n = g.num_nodes();
    let nf = n.max(1) as f64;

    let lengths: Vec<f64> = text.iter().map(|t| t.tokens as f64).collect();
    let len_mean = mean(lengths.iter().copied());
    let length_cv = if len_mean > 0.0 {
        structure::variance(&lengths).sqrt() / len_mean
    } else {
        0.0
    };
    let text_global = TextGlobal {
        mean_sparsity: mean(text.iter().map(|t| f64::from(t.sparsity))),
        mean_noise: mean(text.iter().map(|t| t.noise)),
        mean_informativeness: mean(text.iter().map(|t| t.informativeness)),
        noisy_fraction: text.iter().filter(|t| t.noisy).count() as f64 / nf,
        imbalanced_fraction: text.iter().filter(|t| t.imbalanced).count() as f64 / nf,
        length_cv,
    };

    let sparse_nodes: usize = community_stats.iter().filter(|c| c.sparse).map(|c| c.members.len()).sum();
    let noisy_nodes: usize = community_stats.iter().filter(|c| c.noisy).map(|c| c.members.len()).sum();
    let imbalanced = degree.gini > cfg.gini_ref;
    let low_degree_nodes = if imbalanced {
        (0..n)
            .filter(|&v| (g.degree(v) as f64) < cfg.low_degree_ratio * degree.mean)
            .collect()
    } else {
        Vec::new()
    };
    let structure_global = StructureGlobal {
        communities: community_stats.len(),
        modularity: modularity(g, &communities.assignment),
        mean_degree: mean(community_stats.iter().map(|c| c.mean_degree)),
        mean_density: mean(community_stats.iter().map(|c| c.density)),
        mean_entropy: mean(community_stats.iter().map(|c| c.entropy)),
        mean_jaccard: mean(community_stats.iter().map(|c| c.jaccard)),
        sparse_node_fraction: sparse_nodes as f64 / nf,
        noisy_node_fraction: noisy_nodes as f64 / nf,
        degree,
        imbalanced,
    };

    let labeled: usize = labels.class_counts.iter().sum();
    let noisy_count = labels.nodes.iter().filter(|s| s.noisy).count();
    let max_count = labels.class_counts.iter().copied().max().unwrap_or(0);
    let min_count = labels.class_counts.iter().copied().min().unwrap_or(0);
    let imbalance_ratio = if max_count == 0 {
        0.0
    } else {
        1.0 - min_count as f64 / max_count as f64
    };
    let label_global = LabelGlobal {
        missing_fraction: labels.nodes.iter().filter(|s| s.missing).count() as f64 / nf,
        noisy_fraction: noisy_count as f64 / nf,
        noisy_rate: if labeled == 0 { 0.0 } else { noisy_count as f64 / labeled as f64 },
        class_counts: labels.class_counts.clone(),
        class_distribution: labels.class_distribution.clone(),
        imbalance_ratio,
        noise_detection_enabled: labels.noise_detection_enabled,
    };

    let train_labels = g.train_labels();
    let local = LocalProblems {
        text_sparse: (0..n).filter(|&v| text[v].sparse).collect(),
        text_noisy: (0..n).filter(|&v| text[v].noisy).collect(),
        text_imbalanced: (0..n).filter(|&v| text[v].imbalanced).collect(),
        sparse_communities: community_stats.iter().filter(|c| c.sparse).map(|c| c.members.clone()).collect(),
        noisy_communities: community_stats.iter().filter(|c| c.noisy).map(|c| c.members.clone()).collect(),
        low_degree_nodes,
        missing_labels: (0..n).filter(|&v| labels.nodes[v].missing).collect(),
        noisy_labels: (0..n)
            .filter(|&v| labels.nodes[v].noisy)
            .map(|v| {
                let fused = labels.nodes[v].fused.expect("noisy implies a fused prediction");
                NoisyLabel {
                    node: v,
                    label: train_labels[v].expect("noisy implies a label"),
                    predicted: fused.label,
                    confidence: fused.confidence,
                }
            })
            .collect(),
        minority_classes: if labeled == 0 {
            Vec::new()
        } else {
            (0..g.num_classes())
                .filter(|&c| (labels.class_counts[c] as f64) < cfg.minority_ratio * max_count as f64)
                .collect()
        },
    };

    DetectionReport {
        schema: REPORT_SCHEMA.to_string(),
        log_base: "e".to_string(),
        n,
        m: g.num_edges(),
        num_classes: g.num_classes(),
        global: GlobalStats {
            text: text_global,
            structure: structure_global,
            label: label_global,
        },
        local,
        communities: communities.assignment.clone(),
        cluster_labels: labels.clusters.iter().map(|&c| labels.cluster_classes[c]).collect(),
    }
}

/// Run all diagnostics on `g` with the given node features.
pub fn detect(g: &TextAttributedGraph, features: &FeatureMatrix, cfg: &DetectionConfig) -> DetectionReport {
    let text = text_diagnostics(g, cfg);
    let communities = louvain(g, cfg.seed);
    let (stats, degree) = structure_diagnostics(g, &communities, cfg);
    let labels = label_diagnostics(g, features, cfg);
    assemble_report(g, cfg, &text, &communities, &stats, degree, &labels)
}
