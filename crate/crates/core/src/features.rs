//! Node feature matrices and the default hashed TF-IDF encoder.

use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::{self, Corpus};

pub const DEFAULT_FEATURE_DIM: usize = 4096;

/// One sparse row: sorted column indices with their values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseRow) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&c, v)| v * dense[c as usize])
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub encoder: String,
    pub config_hash: String,
}

/// Row-aligned node features, stored sparsely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    dim: usize,
    rows: Vec<SparseRow>,
    provenance: Provenance,
}

impl FeatureMatrix {
    pub fn new(dim: usize, rows: Vec<SparseRow>, provenance: Provenance) -> Self {
        debug_assert!(rows
            .iter()
            .all(|r| r.indices.iter().all(|&c| (c as usize) < dim) && r.values.iter().all(|v| v.is_finite())));
        Self {
            dim,
            rows,
            provenance,
        }
    }

    /// Wrap a dense matrix (tests and external encoders).
    pub fn from_dense(dense: &Array2<f64>, provenance: Provenance) -> Self {
        let rows = dense
            .rows()
            .into_iter()
            .map(|r| {
                let mut row = SparseRow::default();
                for (c, &v) in r.iter().enumerate() {
                    if v != 0.0 {
                        row.indices.push(c as u32);
                        row.values.push(v);
                    }
                }
                row
            })
            .collect();
        Self::new(dense.ncols(), rows, provenance)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &SparseRow {
        &self.rows[i]
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn push_row(&mut self, row: SparseRow) {
        self.rows.push(row);
    }

    /// `X · W` for dense `W` of shape `dim × h`.
    pub fn matmul(&self, w: &Array2<f64>) -> Array2<f64> {
        assert_eq!(w.nrows(), self.dim);
        let mut out = Array2::zeros((self.rows.len(), w.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut out_row = out.row_mut(i);
            for (&c, &v) in row.indices.iter().zip(&row.values) {
                out_row.scaled_add(v, &w.row(c as usize));
            }
        }
        out
    }

    /// `Xᵀ · G` for dense `G` of shape `n × h`.
    pub fn t_matmul(&self, g: &Array2<f64>) -> Array2<f64> {
        assert_eq!(g.nrows(), self.rows.len());
        let mut out = Array2::zeros((self.dim, g.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let g_row = g.row(i);
            for (&c, &v) in row.indices.iter().zip(&row.values) {
                out.row_mut(c as usize).scaled_add(v, &g_row);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), self.dim));
        for (i, row) in self.rows.iter().enumerate() {
            for (&c, &v) in row.indices.iter().zip(&row.values) {
                out[[i, c as usize]] = v;
            }
        }
        out
    }
}

pub fn bucket(token: &str, dim: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % dim as u64) as u32
}

/// Hashed bag-of-words TF-IDF encoder fitted on a corpus.
///
/// Each token contributes `tf · (ln((1+N)/(1+df)) + 1)` to bucket
/// `fnv1a(token) mod dim`; rows are L2-normalized. Empty text maps to the
/// zero row.
#[derive(Clone, Debug)]
pub struct HashingEncoder {
    dim: usize,
    corpus: Corpus,
}

impl HashingEncoder {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, dim: usize) -> Self {
        Self {
            dim,
            corpus: Corpus::new(texts),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        let cfg = format!("hashing-tfidf/v1;dim={};smooth-idf;l2", self.dim);
        Provenance {
            encoder: "hashing-tfidf".into(),
            config_hash: hex::encode(&Sha256::digest(cfg.as_bytes())[..8]),
        }
    }

    pub fn encode(&self, text: &str) -> SparseRow {
        let toks = text::tokens(text);
        if toks.is_empty() {
            return SparseRow::default();
        }
        let len = toks.len() as f64;
        let n = self.corpus.num_docs() as f64;
        let mut acc: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
        for (tok, count) in text::term_counts(&toks) {
            let idf = ((1.0 + n) / (1.0 + self.corpus.df(tok) as f64)).ln() + 1.0;
            *acc.entry(bucket(tok, self.dim)).or_insert(0.0) += count as f64 / len * idf;
        }
        let norm = acc.values().map(|v| v * v).sum::<f64>().sqrt();
        let mut row = SparseRow::default();
        for (c, v) in acc {
            if v != 0.0 {
                row.indices.push(c);
                row.values.push(v / norm);
            }
        }
        row
    }

    pub fn encode_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> FeatureMatrix {
        let rows = texts.into_iter().map(|t| self.encode(t)).collect();
        FeatureMatrix::new(self.dim, rows, self.provenance())
    }
}

/// Fit the default encoder on `texts` and encode them.
pub fn encode_features(texts: &[&str], dim: usize) -> FeatureMatrix {
    HashingEncoder::fit(texts.iter().copied(), dim).encode_all(texts.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn unit_norm_identical_and_empty() {
        let texts = ["graph neural network", "graph neural network", "", "protein folding"];
        let fm = encode_features(&texts, DEFAULT_FEATURE_DIM);
        assert_eq!(fm.row(0), fm.row(1));
        assert!((fm.row(0).norm() - 1.0).abs() < 1e-6);
        assert!((fm.row(3).norm() - 1.0).abs() < 1e-6);
        assert!(fm.row(2).indices.is_empty());
    }

    #[test]
    fn disjoint_vocabularies_are_orthogonal() {
        let a = "graph neural network message passing";
        let b = "protein folding molecule energy";
        let buckets_a: std::collections::BTreeSet<u32> =
            text::tokens(a).iter().map(|t| bucket(t, DEFAULT_FEATURE_DIM)).collect();
        let buckets_b: std::collections::BTreeSet<u32> =
            text::tokens(b).iter().map(|t| bucket(t, DEFAULT_FEATURE_DIM)).collect();
        // bucket audit: no collisions across the two vocabularies
        assert!(buckets_a.is_disjoint(&buckets_b));
        let fm = encode_features(&[a, b], DEFAULT_FEATURE_DIM);
        assert_eq!(fm.row(0).dot(fm.row(1)), 0.0);
    }

    #[test]
    fn sparse_products_match_dense() {
        let dense = array![[0.0, 1.0, 2.0], [3.0, 0.0, 0.0]];
        let prov = Provenance {
            encoder: "test".into(),
            config_hash: String::new(),
        };
        let fm = FeatureMatrix::from_dense(&dense, prov);
        let w = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(fm.matmul(&w), dense.dot(&w));
        let g = array![[1.0, -1.0], [0.5, 2.0]];
        assert_eq!(fm.t_matmul(&g), dense.t().dot(&g));
        assert_eq!(fm.to_dense(), dense);
    }
}
