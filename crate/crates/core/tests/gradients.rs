use laga_core::features::encode_features;
use laga_core::learn::{
    neighbor_lists, sample_negatives, semantic, structural, Frame, NormAdj, Parameters, SemanticBatch, SemanticParams,
    StructuralBatch, StructuralParams,
};
use laga_core::plan::LossWeights;
use laga_core::rng;
use laga_core::{NodeRecord, Split, TextAttributedGraph};
use ndarray::Array2;
use rand::Rng as _;

const WORDS: [&str; 12] = [
    "graph", "node", "edge", "label", "text", "noise", "sparse", "dense", "model", "class", "token", "signal",
];

fn random_graph(seed: u64) -> TextAttributedGraph {
    let mut r = rng::stream(seed, "test.graph");
    let n = 10;
    let d = 3;
    let nodes = (0..n)
        .map(|i| {
            let len = r.random_range(2..7);
            let text: Vec<&str> = (0..len).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect();
            let label = r.random_bool(0.8).then(|| r.random_range(0..d));
            let split = if r.random_bool(0.6) { Split::Train } else { Split::Test };
            NodeRecord::new(i, text.join(" "), label, split)
        })
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random_bool(0.3) {
                edges.push((u, v));
            }
        }
    }
    TextAttributedGraph::new("grad", d, nodes, edges).unwrap()
}

/// Fourth-order central difference of `f` along every coordinate.
fn numeric<P: Parameters + Clone>(p: &P, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let h = 1e-4;
    let mut out = Vec::new();
    let sizes: Vec<usize> = p.tensors().iter().map(|(_, t)| t.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let at = |delta: f64| {
                let mut q = p.clone();
                q.tensors_mut()[t].1[k] += delta;
                f(&q)
            };
            out.push((8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h));
        }
    }
    out
}

/// Denominator floor: the difference quotient itself carries roughly 1e-11
/// absolute rounding error at this step, so smaller gradients are compared
/// on an absolute scale.
const FLOOR: f64 = 1e-4;

fn max_rel_err(analytic: &impl Parameters, numeric: &[f64]) -> f64 {
    let flat: Vec<f64> = analytic.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect();
    assert_eq!(flat.len(), numeric.len());
    flat.iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

fn weight_sets() -> [LossWeights; 4] {
    let w = |alpha, beta, gamma| LossWeights {
        alpha,
        beta,
        gamma,
        eta: 1.0,
    };
    [w(0.2, 0.5, 0.3), w(1.0, 0.0, 0.0), w(0.0, 1.0, 0.0), w(0.0, 0.0, 1.0)]
}

#[test]
fn semantic_gradients_match_finite_differences() {
    for seed in 0..3 {
        let g = random_graph(seed);
        let texts = g.texts();
        let x = encode_features(&texts, 24);
        let mut r = rng::stream(seed, "test.targets");
        let mut y = Array2::from_shape_simple_fn((10, 3), || r.random_range(0.0..1.0));
        for mut row in y.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let labels = g.train_labels();
        let neighbors = neighbor_lists(&g);
        let negatives = sample_negatives(&g, 3, &mut rng::stream(seed, "test.neg"));
        let batch = SemanticBatch {
            x: &x,
            y_pse: &y,
            labels: &labels,
            neighbors: &neighbors,
            negatives: &negatives,
            tau: 0.5,
        };
        let p = SemanticParams::init(24, 5, 3, &mut rng::stream(seed, "test.init"));
        for w in weight_sets() {
            let (_, grad) = semantic::loss_and_grad(&p, &batch, &w);
            let num = numeric(&p, |q| semantic::loss(q, &batch, &w).total);
            let err = max_rel_err(&grad, &num);
            assert!(err < 1e-6, "seed {seed} weights {w:?}: rel err {err:e}");
        }
    }
}

#[test]
fn structural_gradients_match_finite_differences() {
    for seed in 0..3 {
        let g = random_graph(seed);
        let texts = g.texts();
        let x = encode_features(&texts, 24);
        let mut r = rng::stream(seed, "test.hsem");
        let h_sem = Array2::from_shape_simple_fn((10, 5), || r.random_range(-1.0..1.0));
        let labels = g.train_labels();
        let adj = NormAdj::new(&g);
        let frame = Frame::full(&g);
        let batch = StructuralBatch {
            x: &x,
            adj: &adj,
            h_sem: &h_sem,
            labels: &labels,
            frame: &frame,
        };
        let p = StructuralParams::init(24, 5, 3, &mut rng::stream(seed, "test.init"));
        for w in weight_sets() {
            let (_, grad) = structural::loss_and_grad(&p, &batch, &w);
            let num = numeric(&p, |q| structural::loss(q, &batch, &w).total);
            let err = max_rel_err(&grad, &num);
            assert!(err < 1e-6, "seed {seed} weights {w:?}: rel err {err:e}");
        }
    }
}
