//! Dense building blocks with hand-written backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

/// Glorot-uniform initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-s..s))
}

pub fn tanh(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(f64::tanh)
}

/// Gradient through `out = tanh(a)` given `d out`.
pub fn tanh_backward(out: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    grad * &out.mapv(|y| 1.0 - y * y)
}

pub fn add_bias(mut a: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    a += b;
    a
}

pub fn col_sum(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(0))
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Gradient w.r.t. logits given gradient w.r.t. softmax probabilities.
pub fn softmax_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(p.raw_dim());
    for ((p_row, dp_row), mut o) in p.rows().into_iter().zip(dp.rows()).zip(out.rows_mut()) {
        let inner = p_row.dot(&dp_row);
        for k in 0..p_row.len() {
            o[k] = p_row[k] * (dp_row[k] - inner);
        }
    }
    out
}

/// `(1/n) Σ_i ‖p_i − y_i‖²` and its gradient w.r.t. the logits.
pub fn sema_loss(p: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = p.nrows().max(1) as f64;
    let diff = p - target;
    let loss = diff.mapv(|v| v * v).sum() / n;
    let dp = diff * (2.0 / n);
    (loss, softmax_backward(p, &dp))
}

/// Mean cross-entropy over labeled rows and its gradient w.r.t. logits.
pub fn ce_loss(p: &Array2<f64>, labels: &[Option<usize>]) -> (f64, Array2<f64>) {
    let count = labels.iter().flatten().count();
    let mut grad = Array2::zeros(p.raw_dim());
    if count == 0 {
        return (0.0, grad);
    }
    let c = count as f64;
    let mut loss = 0.0;
    for (i, y) in labels.iter().enumerate() {
        let Some(y) = *y else { continue };
        loss -= p[[i, y]].max(f64::MIN_POSITIVE).ln() / c;
        for k in 0..p.ncols() {
            grad[[i, k]] = (p[[i, k]] - if k == y { 1.0 } else { 0.0 }) / c;
        }
    }
    (loss, grad)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cosine similarity of rows `i` and `j`, with its gradients w.r.t. both
/// rows. Zero rows give similarity 0 and no gradient.
pub fn cosine(z: &Array2<f64>, i: usize, j: usize) -> (f64, Array1<f64>, Array1<f64>) {
    let a = z.row(i);
    let b = z.row(j);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return (0.0, Array1::zeros(a.len()), Array1::zeros(a.len()));
    }
    let s = a.dot(&b) / (na * nb);
    let da = &b / (na * nb) - &a * (s / (na * na));
    let db = &a / (na * nb) - &b * (s / (nb * nb));
    (s, da, db)
}

pub fn cosine_value(z: &Array2<f64>, i: usize, j: usize) -> f64 {
    let a = z.row(i);
    let b = z.row(j);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Neighbor-contrastive loss averaged over nodes that have at least one
/// neighbor, with its gradient w.r.t. the embeddings.
pub fn contrastive_loss(
    z: &Array2<f64>,
    neighbors: &[Vec<usize>],
    negatives: &[Vec<usize>],
    tau: f64,
) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(z.raw_dim());
    let active = neighbors.iter().filter(|n| !n.is_empty()).count();
    if active == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / active as f64;
    let mut loss = 0.0;
    for i in 0..z.nrows() {
        if neighbors[i].is_empty() {
            continue;
        }
        let pos: Vec<_> = neighbors[i].iter().map(|&j| (j, cosine(z, i, j))).collect();
        let neg: Vec<_> = negatives[i].iter().map(|&j| (j, cosine(z, i, j))).collect();
        let p: f64 = pos.iter().map(|(_, c)| (c.0 / tau).exp()).sum();
        let q: f64 = neg.iter().map(|(_, c)| (c.0 / tau).exp()).sum();
        loss += scale * ((p + q).ln() - p.ln());
        for (j, (s, di, dj)) in &pos {
            let w = (s / tau).exp() / tau;
            let coef = scale * w * (1.0 / (p + q) - 1.0 / p);
            grad.row_mut(i).scaled_add(coef, di);
            grad.row_mut(*j).scaled_add(coef, dj);
        }
        for (j, (s, di, dj)) in &neg {
            let coef = scale * (s / tau).exp() / tau / (p + q);
            grad.row_mut(i).scaled_add(coef, di);
            grad.row_mut(*j).scaled_add(coef, dj);
        }
    }
    (loss, grad)
}
