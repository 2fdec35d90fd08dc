//! Semantic encoder: two-layer tanh MLP trunk over node features with a
//! linear class head.

use ndarray::{Array1, Array2};

use super::nn;
use super::{LossParts, Parameters};
use crate::features::FeatureMatrix;
use crate::plan::LossWeights;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wc: Array2<f64>,
    pub bc: Array1<f64>,
}

impl SemanticParams {
    pub fn init(f: usize, h: usize, d: usize, rng: &mut Rng) -> Self {
        Self {
            w1: nn::glorot(f, h, rng),
            b1: Array1::zeros(h),
            w2: nn::glorot(h, h, rng),
            b2: Array1::zeros(h),
            wc: nn::glorot(h, d, rng),
            bc: Array1::zeros(d),
        }
    }
}

impl Parameters for SemanticParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("sem.w1", self.w1.as_slice().expect("standard layout")),
            ("sem.b1", self.b1.as_slice().expect("standard layout")),
            ("sem.w2", self.w2.as_slice().expect("standard layout")),
            ("sem.b2", self.b2.as_slice().expect("standard layout")),
            ("sem.wc", self.wc.as_slice().expect("standard layout")),
            ("sem.bc", self.bc.as_slice().expect("standard layout")),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("sem.w1", self.w1.as_slice_mut().expect("standard layout")),
            ("sem.b1", self.b1.as_slice_mut().expect("standard layout")),
            ("sem.w2", self.w2.as_slice_mut().expect("standard layout")),
            ("sem.b2", self.b2.as_slice_mut().expect("standard layout")),
            ("sem.wc", self.wc.as_slice_mut().expect("standard layout")),
            ("sem.bc", self.bc.as_slice_mut().expect("standard layout")),
        ]
    }
}

/// Everything the semantic objective needs besides the parameters.
#[derive(Clone, Copy, Debug)]
pub struct SemanticBatch<'a> {
    pub x: &'a FeatureMatrix,
    pub y_pse: &'a Array2<f64>,
    pub labels: &'a [Option<usize>],
    pub neighbors: &'a [Vec<usize>],
    /// Fixed non-neighbor sample per node.
    pub negatives: &'a [Vec<usize>],
    pub tau: f64,
}

#[derive(Clone, Debug)]
pub struct SemanticForward {
    pub h1: Array2<f64>,
    /// Trunk embedding `h^sem`.
    pub z: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

pub fn forward(p: &SemanticParams, x: &FeatureMatrix) -> SemanticForward {
    let h1 = nn::tanh(&nn::add_bias(x.matmul(&p.w1), &p.b1));
    let z = nn::tanh(&nn::add_bias(h1.dot(&p.w2), &p.b2));
    let logits = nn::add_bias(z.dot(&p.wc), &p.bc);
    let probs = nn::softmax_rows(&logits);
    SemanticForward { h1, z, logits, probs }
}

/// Weighted objective `α·L_sema + β·L_struct + γ·L_label` and its gradient.
pub fn loss_and_grad(p: &SemanticParams, batch: &SemanticBatch<'_>, w: &LossWeights) -> (LossParts, SemanticParams) {
    let fw = forward(p, batch.x);
    let (l_sema, dlog_sema) = nn::sema_loss(&fw.probs, batch.y_pse);
    let (l_label, dlog_label) = nn::ce_loss(&fw.probs, batch.labels);
    let (l_struct, dz_struct) = if w.beta != 0.0 {
        nn::contrastive_loss(&fw.z, batch.neighbors, batch.negatives, batch.tau)
    } else {
        (0.0, Array2::zeros(fw.z.raw_dim()))
    };
    let parts = LossParts::new(l_sema, l_struct, l_label, w);

    let dlogits = dlog_sema * w.alpha + dlog_label * w.gamma;
    let wc = fw.z.t().dot(&dlogits);
    let bc = nn::col_sum(&dlogits);
    let dz = dlogits.dot(&p.wc.t()) + dz_struct * w.beta;
    let da2 = nn::tanh_backward(&fw.z, &dz);
    let w2 = fw.h1.t().dot(&da2);
    let b2 = nn::col_sum(&da2);
    let dh1 = da2.dot(&p.w2.t());
    let da1 = nn::tanh_backward(&fw.h1, &dh1);
    let w1 = batch.x.t_matmul(&da1);
    let b1 = nn::col_sum(&da1);
    (parts, SemanticParams { w1, b1, w2, b2, wc, bc })
}

pub fn loss(p: &SemanticParams, batch: &SemanticBatch<'_>, w: &LossWeights) -> LossParts {
    let fw = forward(p, batch.x);
    let (l_sema, _) = nn::sema_loss(&fw.probs, batch.y_pse);
    let (l_label, _) = nn::ce_loss(&fw.probs, batch.labels);
    let l_struct = if w.beta != 0.0 {
        nn::contrastive_loss(&fw.z, batch.neighbors, batch.negatives, batch.tau).0
    } else {
        0.0
    };
    LossParts::new(l_sema, l_struct, l_label, w)
}
