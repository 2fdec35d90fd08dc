//! Structural encoder: two-layer GCN with symmetric normalization, a linear
//! class head, and a symmetric link predictor.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::nn;
use super::{LossParts, Parameters};
use crate::features::{FeatureMatrix, SparseRow};
use crate::graph::TextAttributedGraph;
use crate::plan::LossWeights;
use crate::rng::Rng;

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` as weighted adjacency lists.
#[derive(Clone, Debug, PartialEq)]
pub struct NormAdj {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormAdj {
    pub fn new(g: &TextAttributedGraph) -> Self {
        let deg: Vec<f64> = (0..g.num_nodes()).map(|v| g.degree(v) as f64 + 1.0).collect();
        let rows = (0..g.num_nodes())
            .map(|v| {
                let mut row: Vec<(usize, f64)> = std::iter::once(v)
                    .chain(g.neighbors(v))
                    .map(|u| (u, 1.0 / (deg[v] * deg[u]).sqrt()))
                    .collect();
                row.sort_by_key(|&(u, _)| u);
                row
            })
            .collect();
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `Â · M`. Â is symmetric, so this is also the backward map.
    pub fn apply(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(m.raw_dim());
        for (i, row) in self.rows.iter().enumerate() {
            let mut o = out.row_mut(i);
            for &(j, w) in row {
                o.scaled_add(w, &m.row(j));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub g1: Array2<f64>,
    pub c1: Array1<f64>,
    pub g2: Array2<f64>,
    pub c2: Array1<f64>,
    pub wc: Array2<f64>,
    pub bc: Array1<f64>,
}

/// `â_ij = σ(m2 · tanh([h_i + h_j ; h_i ⊙ h_j] M1 + m1) + m0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkParams {
    pub m1: Array2<f64>,
    pub m1b: Array1<f64>,
    pub m2: Array1<f64>,
    pub m0: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuralParams {
    pub gcn: GcnParams,
    pub link: LinkParams,
}

impl StructuralParams {
    pub fn init(f: usize, h: usize, d: usize, rng: &mut Rng) -> Self {
        let gcn = GcnParams {
            g1: nn::glorot(f, h, rng),
            c1: Array1::zeros(h),
            g2: nn::glorot(h, h, rng),
            c2: Array1::zeros(h),
            wc: nn::glorot(h, d, rng),
            bc: Array1::zeros(d),
        };
        let m2 = nn::glorot(h, 1, rng).into_shape_with_order(h).expect("column");
        let link = LinkParams {
            m1: nn::glorot(2 * h, h, rng),
            m1b: Array1::zeros(h),
            m2,
            m0: Array1::zeros(1),
        };
        Self { gcn, link }
    }
}

impl Parameters for StructuralParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("gcn.g1", self.gcn.g1.as_slice().expect("standard layout")),
            ("gcn.c1", self.gcn.c1.as_slice().expect("standard layout")),
            ("gcn.g2", self.gcn.g2.as_slice().expect("standard layout")),
            ("gcn.c2", self.gcn.c2.as_slice().expect("standard layout")),
            ("gcn.wc", self.gcn.wc.as_slice().expect("standard layout")),
            ("gcn.bc", self.gcn.bc.as_slice().expect("standard layout")),
            ("link.m1", self.link.m1.as_slice().expect("standard layout")),
            ("link.m1b", self.link.m1b.as_slice().expect("standard layout")),
            ("link.m2", self.link.m2.as_slice().expect("standard layout")),
            ("link.m0", self.link.m0.as_slice().expect("standard layout")),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("gcn.g1", self.gcn.g1.as_slice_mut().expect("standard layout")),
            ("gcn.c1", self.gcn.c1.as_slice_mut().expect("standard layout")),
            ("gcn.g2", self.gcn.g2.as_slice_mut().expect("standard layout")),
            ("gcn.c2", self.gcn.c2.as_slice_mut().expect("standard layout")),
            ("gcn.wc", self.gcn.wc.as_slice_mut().expect("standard layout")),
            ("gcn.bc", self.gcn.bc.as_slice_mut().expect("standard layout")),
            ("link.m1", self.link.m1.as_slice_mut().expect("standard layout")),
            ("link.m1b", self.link.m1b.as_slice_mut().expect("standard layout")),
            ("link.m2", self.link.m2.as_slice_mut().expect("standard layout")),
            ("link.m0", self.link.m0.as_slice_mut().expect("standard layout")),
        ]
    }
}

/// Pairs on which the reconstruction and pairwise terms are evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub pos: Vec<(usize, usize)>,
    pub neg: Vec<(usize, usize)>,
}

impl Frame {
    /// Every edge and every non-edge.
    pub fn full(g: &TextAttributedGraph) -> Self {
        let n = g.num_nodes();
        let mut f = Frame::default();
        for u in 0..n {
            for v in u + 1..n {
                if g.has_edge(u, v) {
                    f.pos.push((u, v));
                } else {
                    f.neg.push((u, v));
                }
            }
        }
        f
    }

    /// All edges when there are at most `max_pos`, otherwise `max_pos`
    /// drawn without replacement; plus as many non-edges drawn uniformly
    /// with replacement (at least `n` when the graph has no edges).
    pub fn sample(g: &TextAttributedGraph, max_pos: usize, rng: &mut Rng) -> Self {
        let n = g.num_nodes();
        let mut pos: Vec<(usize, usize)> = g.edges().collect();
        if pos.len() > max_pos {
            pos.shuffle(rng);
            pos.truncate(max_pos);
            pos.sort_unstable();
        }
        let m = g.num_edges();
        let non_edges = n * n.saturating_sub(1) / 2 - m;
        let want = if pos.is_empty() { n } else { pos.len() };
        let mut neg = Vec::with_capacity(want);
        if non_edges > 0 {
            while neg.len() < want {
                let u = rng.random_range(0..n);
                let v = rng.random_range(0..n);
                if u != v && !g.has_edge(u, v) {
                    neg.push((u.min(v), u.max(v)));
                }
            }
        }
        Frame { pos, neg }
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pos.iter().chain(&self.neg).copied()
    }

    pub fn len(&self) -> usize {
        self.pos.len() + self.neg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StructuralBatch<'a> {
    pub x: &'a FeatureMatrix,
    pub adj: &'a NormAdj,
    /// Fixed semantic embeddings.
    pub h_sem: &'a Array2<f64>,
    pub labels: &'a [Option<usize>],
    pub frame: &'a Frame,
}

#[derive(Clone, Debug)]
pub struct GcnForward {
    pub h1: Array2<f64>,
    /// Structural embedding `h^stu`.
    pub h: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

pub fn gcn_forward(p: &GcnParams, x: &FeatureMatrix, adj: &NormAdj) -> GcnForward {
    let h1 = nn::tanh(&nn::add_bias(adj.apply(&x.matmul(&p.g1)), &p.c1));
    let h = nn::tanh(&nn::add_bias(adj.apply(&h1.dot(&p.g2)), &p.c2));
    let logits = nn::add_bias(h.dot(&p.wc), &p.bc);
    let probs = nn::softmax_rows(&logits);
    GcnForward { h1, h, logits, probs }
}

/// Structural embedding of a node with no edges (its normalized adjacency
/// row is the self-loop alone).
pub fn embed_isolated(p: &GcnParams, x: &SparseRow) -> Array1<f64> {
    let mut a1 = p.c1.clone();
    for (&c, &v) in x.indices.iter().zip(&x.values) {
        a1.scaled_add(v, &p.g1.row(c as usize));
    }
    let h1 = a1.mapv(f64::tanh);
    (h1.dot(&p.g2) + &p.c2).mapv(f64::tanh)
}

fn pair_features(hi: ArrayView1<'_, f64>, hj: ArrayView1<'_, f64>, out: &mut ndarray::ArrayViewMut1<'_, f64>) {
    let h = hi.len();
    for k in 0..h {
        out[k] = hi[k] + hj[k];
        out[h + k] = hi[k] * hj[k];
    }
}

pub struct LinkForward {
    u: Array2<f64>,
    hidden: Array2<f64>,
    pub probs: Array1<f64>,
}

pub fn link_forward(p: &LinkParams, h: &Array2<f64>, pairs: &[(usize, usize)]) -> LinkForward {
    let dim = h.ncols();
    let mut u = Array2::zeros((pairs.len(), 2 * dim));
    for (r, &(i, j)) in pairs.iter().enumerate() {
        pair_features(h.row(i), h.row(j), &mut u.row_mut(r));
    }
    let hidden = nn::tanh(&nn::add_bias(u.dot(&p.m1), &p.m1b));
    let probs = (hidden.dot(&p.m2) + p.m0[0]).mapv(nn::sigmoid);
    LinkForward { u, hidden, probs }
}

/// Edge probabilities for arbitrary embeddings (no validation).
pub fn link_probs(p: &LinkParams, h: &Array2<f64>, pairs: &[(usize, usize)]) -> Vec<f64> {
    link_forward(p, h, pairs).probs.to_vec()
}

/// Backpropagate `d â` into the link parameters and the embeddings.
fn link_backward(
    p: &LinkParams,
    h: &Array2<f64>,
    pairs: &[(usize, usize)],
    fw: &LinkForward,
    dprob: &Array1<f64>,
    dh: &mut Array2<f64>,
) -> LinkParams {
    let dim = h.ncols();
    let dout = dprob * &fw.probs.mapv(|a| a * (1.0 - a));
    let m2 = fw.hidden.t().dot(&dout);
    let m0 = Array1::from_elem(1, dout.sum());
    let dhidden = dout
        .view()
        .into_shape_with_order((pairs.len(), 1))
        .expect("column")
        .dot(&p.m2.view().into_shape_with_order((1, dim)).expect("row"));
    let da = nn::tanh_backward(&fw.hidden, &dhidden);
    let m1 = fw.u.t().dot(&da);
    let m1b = nn::col_sum(&da);
    let du = da.dot(&p.m1.t());
    for (r, &(i, j)) in pairs.iter().enumerate() {
        let dsum = du.slice(s![r, ..dim]);
        let dprod = du.slice(s![r, dim..]);
        let gi = &dsum + &(&dprod * &h.row(j));
        let gj = &dsum + &(&dprod * &h.row(i));
        dh.row_mut(i).scaled_add(1.0, &gi);
        dh.row_mut(j).scaled_add(1.0, &gj);
    }
    LinkParams { m1, m1b, m2, m0 }
}

/// `½·mean_pos (1 − â)² + ½·mean_neg â²` over a frame, with `d/dâ`.
pub fn reconstruction_loss(frame: &Frame, probs: &[f64]) -> (f64, Array1<f64>) {
    let np = frame.pos.len();
    let nn_ = frame.neg.len();
    let mut grad = Array1::zeros(probs.len());
    let mut loss = 0.0;
    for (k, &a) in probs.iter().enumerate() {
        if k < np {
            loss += 0.5 * (1.0 - a).powi(2) / np as f64;
            grad[k] = -(1.0 - a) / np as f64;
        } else {
            loss += 0.5 * a * a / nn_ as f64;
            grad[k] = a / nn_ as f64;
        }
    }
    (loss, grad)
}

/// Pairwise consistency targets `σ(sim(h^sem_i, h^sem_j))` over the frame.
pub fn consistency_targets(h_sem: &Array2<f64>, frame: &Frame) -> Vec<f64> {
    frame.pairs().map(|(i, j)| nn::sigmoid(nn::cosine_value(h_sem, i, j))).collect()
}

pub fn loss_and_grad(
    p: &StructuralParams,
    batch: &StructuralBatch<'_>,
    w: &LossWeights,
) -> (LossParts, StructuralParams) {
    let fw = gcn_forward(&p.gcn, batch.x, batch.adj);
    let n = fw.h.nrows().max(1) as f64;
    let (l_label, dlogits) = nn::ce_loss(&fw.probs, batch.labels);
    let mut dh = dlogits.dot(&p.gcn.wc.t()) * w.gamma;
    let wc = fw.h.t().dot(&dlogits) * w.gamma;
    let bc = nn::col_sum(&dlogits) * w.gamma;

    let mut l_sema = 0.0;
    let mut l_struct = 0.0;
    let mut link = LinkParams {
        m1: Array2::zeros(p.link.m1.raw_dim()),
        m1b: Array1::zeros(p.link.m1b.len()),
        m2: Array1::zeros(p.link.m2.len()),
        m0: Array1::zeros(1),
    };
    if w.alpha != 0.0 || w.beta != 0.0 {
        let diff = &fw.h - batch.h_sem;
        l_sema += diff.mapv(|v| v * v).sum() / n;
        dh.scaled_add(w.alpha * 2.0 / n, &diff);

        let pairs: Vec<(usize, usize)> = batch.frame.pairs().collect();
        let lf = link_forward(&p.link, &fw.h, &pairs);
        let targets = consistency_targets(batch.h_sem, batch.frame);
        let f = pairs.len().max(1) as f64;
        let mut dprob = Array1::zeros(pairs.len());
        for k in 0..pairs.len() {
            let e = targets[k] - lf.probs[k];
            l_sema += e * e / f;
            dprob[k] = -2.0 * e / f * w.alpha;
        }
        let (lr, dr) = reconstruction_loss(batch.frame, lf.probs.as_slice().expect("contiguous"));
        l_struct = lr;
        dprob.scaled_add(w.beta, &dr);
        link = link_backward(&p.link, &fw.h, &pairs, &lf, &dprob, &mut dh);
    }
    let parts = LossParts::new(l_sema, l_struct, l_label, w);

    let db2 = nn::tanh_backward(&fw.h, &dh);
    let c2 = nn::col_sum(&db2);
    let dm = batch.adj.apply(&db2);
    let g2 = fw.h1.t().dot(&dm);
    let dh1 = dm.dot(&p.gcn.g2.t());
    let db1 = nn::tanh_backward(&fw.h1, &dh1);
    let c1 = nn::col_sum(&db1);
    let g1 = batch.x.t_matmul(&batch.adj.apply(&db1));
    let grad = StructuralParams {
        gcn: GcnParams { g1, c1, g2, c2, wc, bc },
        link,
    };
    (parts, grad)
}

pub fn loss(p: &StructuralParams, batch: &StructuralBatch<'_>, w: &LossWeights) -> LossParts {
    loss_and_grad(p, batch, w).0
}

/// Unique unordered pairs from a candidate set, canonical order.
pub fn canonical_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Vec<(usize, usize)> {
    pairs
        .into_iter()
        .map(|(u, v)| (u.min(v), u.max(v)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
