//! Browser bindings: inject a scenario and diagnose it, explore the loss
//! weights, and lay out Louvain communities of a synthetic graph.

use laga_core::detect::{detect, louvain, modularity, DetectionConfig};
use laga_core::features::encode_features;
use laga_core::perturb::{apply_scenario, ScenarioSpec};
use laga_core::plan::{decide_loss_weights, plan, Mode, PlanConfig};
use laga_core::synth::{sbm_graph, SbmSpec};
use laga_core::{Issue, TextAttributedGraph};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const FEATURE_DIM: usize = 256;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json(v: &impl Serialize) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

fn fixture(nodes: usize, classes: usize, seed: u64) -> Result<TextAttributedGraph, JsValue> {
    sbm_graph(&SbmSpec {
        nodes,
        classes,
        seed,
        ..SbmSpec::default()
    })
    .map_err(js_err)
}

#[wasm_bindgen(start)]
pub fn start() {
    console_error_panic_hook::set_once();
}

#[derive(Serialize)]
struct Diagnosis {
    issues: Vec<&'static str>,
    statistics: [f64; 9],
    severities: [u8; 9],
}

#[derive(Serialize)]
struct ScenarioResult {
    kind: String,
    affected: usize,
    population: usize,
    clean: Diagnosis,
    degraded: Diagnosis,
    weights: [f64; 3],
    program: Vec<String>,
}

fn diagnose(g: &TextAttributedGraph, cfg: &PlanConfig) -> (Diagnosis, laga_core::detect::DetectionReport) {
    let x = encode_features(&g.texts(), FEATURE_DIM);
    let report = detect(g, &x, &DetectionConfig::default());
    let d = Diagnosis {
        issues: Issue::ALL.iter().map(|i| i.as_str()).collect(),
        statistics: report.global.issue_statistics(),
        severities: cfg.table.levels(&report.global),
    };
    (d, report)
}

/// Degrade an SBM graph with one scenario and diagnose both versions.
/// Returns JSON.
#[wasm_bindgen]
pub fn perturb_and_detect(kind: &str, ratio: f64, nodes: usize, classes: usize, seed: u64) -> Result<String, JsValue> {
    let kind: Issue = kind.parse().map_err(js_err)?;
    let g = fixture(nodes, classes, seed)?;
    let (degraded, log) = apply_scenario(&g, &ScenarioSpec { kind, ratio, seed }).map_err(js_err)?;
    let cfg = PlanConfig::default();
    let (clean, _) = diagnose(&g, &cfg);
    let (bad, report) = diagnose(&degraded, &cfg);
    let p = plan(&report, &cfg, Mode::Rules, None).map_err(js_err)?;
    to_json(&ScenarioResult {
        kind: kind.as_str().to_string(),
        affected: log.affected,
        population: log.population,
        clean,
        degraded: bad,
        weights: p.weights.as_array(),
        program: p.program.items.iter().map(|i| i.action.as_str().to_string()).collect(),
    })
}

/// Loss weights for mean text, structure and label severities. Returns
/// `[alpha, beta, gamma]`.
#[wasm_bindgen]
pub fn loss_weights(text: f64, structure: f64, label: f64, eta: f64) -> Result<Vec<f64>, JsValue> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(js_err("eta must be positive"));
    }
    Ok(decide_loss_weights(&[text, structure, label], eta).as_array().to_vec())
}

#[derive(Serialize)]
struct Layout {
    classes: Vec<Option<usize>>,
    communities: Vec<usize>,
    edges: Vec<(usize, usize)>,
    count: usize,
    modularity: f64,
}

/// Louvain partition of an SBM graph with the given block probabilities.
/// Returns JSON with per-node class and community plus the edge list.
#[wasm_bindgen]
pub fn communities(nodes: usize, classes: usize, p_in: f64, p_out: f64, seed: u64) -> Result<String, JsValue> {
    let g = sbm_graph(&SbmSpec {
        nodes,
        classes,
        p_in,
        p_out,
        seed,
        ..SbmSpec::default()
    })
    .map_err(js_err)?;
    let c = louvain(&g, seed);
    to_json(&Layout {
        classes: g.labels(),
        modularity: modularity(&g, &c.assignment),
        count: c.count(),
        communities: c.assignment,
        edges: g.edges().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_a_distribution() {
        let w = loss_weights(0.0, 2.0, 1.0, 1.0).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[2] && w[2] > w[1]);
    }

    #[test]
    fn scenario_round_trip() {
        let out = perturb_and_detect("LN", 0.4, 120, 3, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["kind"], "LN");
        assert_eq!(v["affected"], (0.4 * v["population"].as_f64().unwrap()).round() as u64);
    }

    #[test]
    fn layout_covers_every_node() {
        let v: serde_json::Value = serde_json::from_str(&communities(60, 3, 0.3, 0.01, 2).unwrap()).unwrap();
        assert_eq!(v["communities"].as_array().unwrap().len(), 60);
        assert!(v["modularity"].as_f64().unwrap() > 0.3);
    }
}
