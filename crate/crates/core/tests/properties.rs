use laga_core::act::label_confidence;
use laga_core::cluster::nmi;
use laga_core::detect::structure::{community_stats, degree_stats};
use laga_core::detect::{louvain, modularity, text_diagnostics, DetectionConfig};
use laga_core::evaluate::{health, rules_q, should_stop, EvalConfig, StopReason};
use laga_core::io;
use laga_core::perturb::{apply_scenario, invert, ScenarioSpec};
use laga_core::plan::{decide_loss_weights, project_to_simplex, SeverityTable};
use laga_core::rng;
use laga_core::synth::{sbm_graph, SbmSpec};
use laga_core::{Issue, NodeRecord, Split, TextAttributedGraph};
use proptest::prelude::*;
use rand::Rng as _;

const WORDS: [&str; 9] = ["graph", "node", "edge", "label", "x7#q", "noise", "model", "class", "token"];

fn small_graph(seed: u64, n: usize, p: f64) -> TextAttributedGraph {
    let mut r = rng::stream(seed, "prop.graph");
    let nodes = (0..n)
        .map(|i| {
            let len = r.random_range(0..8);
            let text: Vec<&str> = (0..len).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect();
            let label = r.random_bool(0.8).then(|| r.random_range(0..3));
            let split = match r.random_range(0..3) {
                0 => Split::Train,
                1 => Split::Validation,
                _ => Split::Test,
            };
            NodeRecord::new(i, text.join(" "), label, split)
        })
        .collect();
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|_| r.random_bool(p))
        .collect();
    TextAttributedGraph::new("prop", 3, nodes, edges).unwrap()
}

fn kind() -> impl Strategy<Value = Issue> {
    prop::sample::select(Issue::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_is_identity(seed in any::<u64>(), n in 1usize..40, p in 0.0..0.5f64) {
        let g = small_graph(seed, n, p);
        let dir = tempfile::tempdir().unwrap();
        io::save_graph(&g, dir.path()).unwrap();
        let back = io::load_graph_dir(dir.path()).unwrap();
        prop_assert_eq!(&back, &g);
        for v in 0..n {
            prop_assert_eq!(g.degree(v), (0..n).filter(|&u| g.has_edge(u, v)).count());
        }
    }

    #[test]
    fn perturbation_inverts_and_stays_in_its_lane(seed in any::<u64>(), kind in kind(), ratio in 0.0..=1.0f64) {
        let g = sbm_graph(&SbmSpec { nodes: 60, classes: 3, seed: seed % 1000, ..SbmSpec::default() }).unwrap();
        let Ok((d, log)) = apply_scenario(&g, &ScenarioSpec { kind, ratio, seed }) else {
            // only SN may refuse, when too few eligible pairs exist
            prop_assert_eq!(kind, Issue::SN);
            return Ok(());
        };
        prop_assert_eq!(&invert(&d, &log).unwrap(), &g);
        if kind != Issue::LI {
            prop_assert_eq!(log.affected, (ratio * log.population as f64).round() as usize);
        }
        for c in &log.labels {
            prop_assert!(c.before != c.after);
        }
        for v in 0..g.num_nodes() {
            let (a, b) = (g.node(v), d.node(v));
            match kind {
                Issue::LS => prop_assert!(a.text == b.text && a.label == b.label),
                Issue::SS | Issue::SN | Issue::SI => prop_assert_eq!(a, b),
                _ => {}
            }
        }
    }

    #[test]
    fn structure_metrics_are_bounded(seed in any::<u64>(), n in 1usize..50, p in 0.0..0.6f64) {
        let g = small_graph(seed, n, p);
        let cfg = DetectionConfig::default();
        let c = louvain(&g, seed);
        for (k, members) in c.members().iter().enumerate() {
            let s = community_stats(&g, k, members, &cfg);
            prop_assert!(s.entropy >= 0.0 && s.entropy <= (members.len() as f64).ln() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&s.jaccard) && (0.0..=1.0).contains(&s.density));
            let degs: Vec<usize> = members.iter().map(|&v| g.degree(v)).collect();
            if degs.iter().all(|&d| d == degs[0] && d > 0) {
                prop_assert!((s.entropy - (members.len() as f64).ln()).abs() < 1e-12);
            }
        }
        prop_assert!((0.0..=1.0).contains(&degree_stats(&g).gini));
        for t in text_diagnostics(&g, &cfg) {
            prop_assert!((0.0..=1.0).contains(&t.noise));
        }
        let singletons: Vec<usize> = (0..n).collect();
        prop_assert!(modularity(&g, &c.assignment) >= modularity(&g, &singletons) - 1e-12);
    }

    #[test]
    fn weights_always_sum_to_one(s in prop::array::uniform3(-5.0..5.0f64), eta in 0.01..10.0f64) {
        let w = decide_loss_weights(&s, eta);
        prop_assert!((w.alpha + w.beta + w.gamma - 1.0).abs() < 1e-9);
        let p = project_to_simplex(s, eta);
        prop_assert!((p.alpha + p.beta + p.gamma - 1.0).abs() < 1e-9);
        prop_assert!(p.as_array().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn severity_is_monotone(k in 0usize..9, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let t = SeverityTable::default();
        let issue = Issue::ALL[k];
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(t.level(issue, lo) <= t.level(issue, hi));
    }

    #[test]
    fn confidence_grows_with_the_top_probability(second in 0.0..0.4f64, a in 0.0..0.5f64, b in 0.0..0.5f64, lambda in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c = |top: f64| label_confidence(&[second + top, second, 0.0], lambda);
        prop_assert!(c(lo) <= c(hi) + 1e-15);
    }

    #[test]
    fn nmi_is_symmetric_and_bounded(seed in any::<u64>(), n in 1usize..200, ka in 1usize..6, kb in 1usize..6) {
        let mut r = rng::stream(seed, "prop.nmi");
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| r.random_range(0..kb)).collect();
        let x = nmi(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((x - nmi(&b, &a)).abs() < 1e-12);
        prop_assert_eq!(nmi(&a, &a), 1.0);
    }

    #[test]
    fn quality_is_monotone_in_each_statistic(
        stats in prop::array::uniform9(0.0..1.0f64),
        k in 0usize..9,
        better in 0.0..1.0f64,
        acc in 0.0..=1.0f64,
    ) {
        let t = SeverityTable::default();
        let mut improved = stats;
        improved[k] = stats[k].min(better);
        prop_assert!(rules_q(&health(&improved, &t), acc) >= rules_q(&health(&stats, &t), acc));
    }

    #[test]
    fn loop_always_terminates(trace in prop::collection::vec((0.0..=10.0f64, any::<bool>()), 1..8), max_iters in 1usize..6, plateau in any::<bool>()) {
        let cfg = EvalConfig { max_iters, stop_on_plateau: plateau, ..EvalConfig::default() };
        let mut prev = None;
        for it in 1..=max_iters {
            let (q, delta) = trace[(it - 1) % trace.len()];
            let reason = should_stop(q, delta, prev, it, &cfg);
            if it == max_iters {
                prop_assert!(reason != StopReason::Continue);
            }
            if reason != StopReason::Continue {
                break;
            }
            prev = Some(q);
        }
    }
}
