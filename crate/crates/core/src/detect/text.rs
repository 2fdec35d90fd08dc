use serde::{Deserialize, Serialize};

use super::DetectionConfig;
use crate::graph::TextAttributedGraph;
use crate::text::{self, Corpus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub tokens: usize,
    /// 1 when the text is shorter than the sparsity threshold.
    pub sparsity: u8,
    pub noise: f64,
    pub informativeness: f64,
    pub sparse: bool,
    pub noisy: bool,
    /// Uninformative, or much shorter than the corpus median.
    pub imbalanced: bool,
}

pub fn median(values: &mut [usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        (values[mid - 1] + values[mid]) as f64 / 2.0
    } else {
        values[mid] as f64
    }
}

/// Per-node sparsity, noise rate and informativeness with their flags.
pub fn text_diagnostics(g: &TextAttributedGraph, cfg: &DetectionConfig) -> Vec<TextScores> {
    let corpus = Corpus::new(g.nodes().iter().map(|n| n.text.as_str()));
    let toks: Vec<Vec<String>> = g.nodes().iter().map(|n| text::tokens(&n.text)).collect();
    let mut lengths: Vec<usize> = toks.iter().map(Vec::len).collect();
    let median_len = median(&mut lengths);

    toks.iter()
        .map(|t| {
            let len = t.len();
            let sparse = (len as f64) < cfg.tau_s_text;
            let noise = if len == 0 {
                0.0
            } else {
                corpus.error_count(t) as f64 / len as f64
            };
            let info = corpus.informativeness(t);
            let short = (len as f64) < cfg.length_ratio_ref * median_len;
            TextScores {
                tokens: len,
                sparsity: u8::from(sparse),
                noise,
                informativeness: info,
                sparse,
                noisy: noise > cfg.tau_n_text,
                imbalanced: !sparse && (info < cfg.tau_imb_text || short),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeRecord, Split};

    fn graph(texts: &[&str]) -> TextAttributedGraph {
        let nodes = texts
            .iter()
            .enumerate()
            .map(|(i, t)| NodeRecord::new(i, *t, None, Split::Unlabeled))
            .collect();
        TextAttributedGraph::new("t", 2, nodes, []).unwrap()
    }

    #[test]
    fn empty_text_convention() {
        let g = graph(&["", "a b c d e f"]);
        let s = text_diagnostics(&g, &DetectionConfig::default());
        assert_eq!((s[0].sparsity, s[0].noise, s[0].informativeness), (1, 0.0, 0.0));
        assert!(s[0].sparse && !s[0].imbalanced);
    }

    #[test]
    fn identical_texts_have_equal_informativeness() {
        let g = graph(&["graph neural nets", "graph neural nets", "graph neural nets"]);
        let s = text_diagnostics(&g, &DetectionConfig::default());
        assert!(s.windows(2).all(|w| w[0].informativeness == w[1].informativeness));
    }

    #[test]
    fn noise_rate_counts_oov_and_garbage() {
        let g = graph(&[
            "graph neural network model",
            "graph neural network model",
            "graph x7#q network zzzz",
        ]);
        let s = text_diagnostics(&g, &DetectionConfig::default());
        assert_eq!(s[0].noise, 0.0);
        assert!((s[2].noise - 0.5).abs() < 1e-12);
        assert!(s[2].noisy);
    }
}
