use serde::{Deserialize, Serialize};

use super::louvain::Communities;
use super::DetectionConfig;
use crate::graph::TextAttributedGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityStats {
    pub id: usize,
    pub members: Vec<usize>,
    pub intra_edges: usize,
    pub mean_degree: f64,
    pub density: f64,
    pub entropy: f64,
    pub jaccard: f64,
    /// Density undefined (single node); reported as 0.
    pub density_degenerate: bool,
    /// Entropy or Jaccard undefined (no degree mass / no internal edge).
    pub entropy_degenerate: bool,
    pub jaccard_degenerate: bool,
    pub sparse: bool,
    pub noisy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub mean: f64,
    pub variance: f64,
    pub gini: f64,
}

/// Population variance of the degree sequence.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Gini coefficient, `Σ_i Σ_j |x_i − x_j| / (2 n² μ)`, computed on the
/// sorted sequence in O(n log n).
pub fn gini(xs: &[f64]) -> f64 {
    let n = xs.len();
    let total: f64 = xs.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σ_i Σ_j |x_i - x_j| = 2 Σ_i (2i - n + 1) x_(i)
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n as f64 + 1.0) * x)
        .sum();
    (2.0 * weighted) / (2.0 * (n * n) as f64 * (total / n as f64))
}

pub fn degree_stats(g: &TextAttributedGraph) -> DegreeStats {
    let d: Vec<f64> = g.degrees().into_iter().map(|x| x as f64).collect();
    DegreeStats {
        mean: if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 },
        variance: variance(&d),
        gini: gini(&d),
    }
}

fn jaccard(g: &TextAttributedGraph, u: usize, v: usize) -> f64 {
    let a = g.neighbor_set(u);
    let b = g.neighbor_set(v);
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Degree, density, structural entropy and mean Jaccard of one community.
/// Degrees and neighborhoods are taken on the full graph; the edge set is
/// the community's induced edges.
pub fn community_stats(
    g: &TextAttributedGraph,
    id: usize,
    members: &[usize],
    cfg: &DetectionConfig,
) -> CommunityStats {
    let size = members.len();
    let in_comm = |v: usize| members.binary_search(&v).is_ok();
    let intra: Vec<(usize, usize)> = members
        .iter()
        .flat_map(|&u| g.neighbors(u).filter(move |&v| v > u).map(move |v| (u, v)))
        .filter(|&(_, v)| in_comm(v))
        .collect();
    let degs: Vec<f64> = members.iter().map(|&v| g.degree(v) as f64).collect();
    let deg_sum: f64 = degs.iter().sum();
    let mean_degree = deg_sum / size as f64;

    let density_degenerate = size < 2;
    let density = if density_degenerate {
        0.0
    } else {
        2.0 * intra.len() as f64 / (size * (size - 1)) as f64
    };

    let entropy_degenerate = deg_sum <= 0.0;
    let entropy = if entropy_degenerate {
        0.0
    } else {
        degs.iter()
            .filter(|&&d| d > 0.0)
            .map(|&d| {
                let p = d / deg_sum;
                -p * p.ln()
            })
            .sum()
    };

    let jaccard_degenerate = intra.is_empty();
    let jaccard_mean = if jaccard_degenerate {
        0.0
    } else {
        intra.iter().map(|&(u, v)| jaccard(g, u, v)).sum::<f64>() / intra.len() as f64
    };

    let sparse = mean_degree < cfg.sparse_degree_ref || density < cfg.density_ref;
    // pairs and singletons have maximal entropy by construction
    let noisy = size > 2
        && (entropy > cfg.entropy_ref * (size as f64).ln() || jaccard_mean < cfg.jaccard_ref);
    CommunityStats {
        id,
        members: members.to_vec(),
        intra_edges: intra.len(),
        mean_degree,
        density,
        entropy,
        jaccard: jaccard_mean,
        density_degenerate,
        entropy_degenerate,
        jaccard_degenerate,
        sparse,
        noisy,
    }
}

pub fn structure_diagnostics(
    g: &TextAttributedGraph,
    communities: &Communities,
    cfg: &DetectionConfig,
) -> (Vec<CommunityStats>, DegreeStats) {
    let stats = communities
        .members()
        .iter()
        .enumerate()
        .map(|(k, m)| community_stats(g, k, m, cfg))
        .collect();
    (stats, degree_stats(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::unlabeled_graph;

    fn one_community(g: &TextAttributedGraph) -> CommunityStats {
        let members: Vec<usize> = (0..g.num_nodes()).collect();
        community_stats(g, 0, &members, &DetectionConfig::default())
    }

    #[test]
    fn cycle_entropy_is_uniform() {
        let g = unlabeled_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let s = one_community(&g);
        assert!((s.entropy - 4f64.ln()).abs() < 1e-12);
        assert!((s.entropy - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn star_entropy_and_gini() {
        let g = unlabeled_graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let s = one_community(&g);
        let expected = -(0.5 * 0.5f64.ln() + 3.0 * (1.0 / 6.0) * (1.0f64 / 6.0).ln());
        assert!((s.entropy - expected).abs() < 1e-12);
        assert!((s.entropy - 1.2425).abs() < 1e-4);
        assert!((degree_stats(&g).gini - 0.25).abs() < 1e-12);
    }

    #[test]
    fn triangle_jaccard() {
        let g = unlabeled_graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let s = one_community(&g);
        assert!((s.jaccard - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.density - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_markers() {
        let g = unlabeled_graph(2, &[]);
        let s = community_stats(&g, 0, &[0], &DetectionConfig::default());
        assert!(s.density_degenerate && s.jaccard_degenerate && s.entropy_degenerate);
        assert_eq!((s.density, s.jaccard, s.entropy), (0.0, 0.0, 0.0));
    }
}
