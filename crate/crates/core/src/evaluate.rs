//! Evaluation: downstream accuracy and clustering, the quality score, and
//! the stopping rule.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::cluster::{kmeans_restarts, nmi};
use crate::detect::GlobalStats;
use crate::error::{Error, Result};
use crate::features::encode_features;
use crate::graph::{Split, TextAttributedGraph};
use crate::issue::Issue;
use crate::learn::{structural, train_structural, EncoderConfig, NormAdj};
use crate::llm::{prompts, LlmClient, ProviderRequest, Role, Schema};
use crate::plan::{LossWeights, Mode, SeverityTable};
use crate::{par, rng};

pub const EVAL_SCHEMA: &str = "eval/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// First-iteration quality bar.
    pub tau_impf: f64,
    /// Improvement threshold for later iterations.
    pub tau_imp: f64,
    pub max_iters: usize,
    /// Stop when the improvement is at most `tau_imp` (or nothing is left to
    /// fix) instead of when it exceeds it.
    pub stop_on_plateau: bool,
    /// Keep an iteration's graph only if it does not lower mean validation
    /// accuracy; otherwise the loop carries the previous graph forward.
    pub guard: bool,
    /// Number of independently seeded downstream classifiers.
    pub downstream_seeds: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
    pub classifier: EncoderConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau_impf: 8.0,
            tau_imp: 0.3,
            max_iters: 3,
            stop_on_plateau: false,
            guard: true,
            downstream_seeds: 3,
            kmeans_restarts: 5,
            seed: 0,
            classifier: EncoderConfig {
                learning_rate: 0.05,
                ..EncoderConfig::default()
            },
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.downstream_seeds == 0 || self.kmeans_restarts == 0 {
            return Err(Error::Config("downstream_seeds and kmeans_restarts must be positive".into()));
        }
        if !(0.0..=10.0).contains(&self.tau_impf) || !self.tau_imp.is_finite() {
            return Err(Error::Config("tau_impf must lie in [0,10] and tau_imp must be finite".into()));
        }
        self.classifier.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Downstream {
    /// Mean test accuracy over seeds.
    pub accuracy: f64,
    pub per_seed: Vec<f64>,
    pub test_nodes: usize,
    /// Mean accuracy on labeled validation nodes, when there are any.
    #[serde(default)]
    pub validation_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nmi: Option<f64>,
}

/// Link to the report of the previous iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrevRef {
    pub iteration: usize,
    pub q: f64,
    /// SHA-256 of the previous report's JSON.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub iteration: usize,
    pub global: GlobalStats,
    pub statistics: [f64; 9],
    pub health: [f64; 9],
    pub severities: [u8; 9],
    pub downstream: Downstream,
    pub q: f64,
    pub delta: bool,
    pub mode: Mode,
    pub fallback: bool,
    pub previous: Option<PrevRef>,
}

impl EvalReport {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("report serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn reference(&self) -> PrevRef {
        PrevRef {
            iteration: self.iteration,
            q: self.q,
            digest: self.digest(),
        }
    }
}

/// Test accuracy of one classifier's predictions.
pub fn accuracy(pred: &[usize], g: &TextAttributedGraph) -> Option<f64> {
    split_accuracy(pred, g, Split::Test)
}

/// Accuracy over the labeled nodes of one split.
pub fn split_accuracy(pred: &[usize], g: &TextAttributedGraph, split: Split) -> Option<f64> {
    let mut total = 0;
    let mut hit = 0;
    for (i, node) in g.nodes().iter().enumerate() {
        if node.split == split {
            if let Some(y) = node.label {
                total += 1;
                hit += usize::from(pred[i] == y);
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|r| (0..r.len()).fold(0, |b, k| if r[k] > r[b] { k } else { b }))
        .collect()
}

/// Fresh supervised two-layer GCNs on the raw texts; mean test accuracy
/// over `cfg.downstream_seeds` seeds. With `truth`, the first seed's
/// embeddings are also clustered and scored by NMI.
pub fn downstream_classification(
    g: &TextAttributedGraph,
    truth: Option<&[Option<usize>]>,
    cfg: &EvalConfig,
) -> Result<Downstream> {
    let test_nodes = g
        .nodes()
        .iter()
        .filter(|n| n.split == Split::Test && n.label.is_some())
        .count();
    if test_nodes == 0 {
        return Err(Error::invalid("downstream classification needs labeled test nodes"));
    }
    let x = encode_features(&g.texts(), cfg.classifier.feature_dim);
    let adj = NormAdj::new(g);
    let h_sem = Array2::zeros((g.num_nodes(), cfg.classifier.hidden_dim));
    let runs = par::try_map(cfg.downstream_seeds, |k| {
        let c = EncoderConfig {
            seed: rng::derive_seed(cfg.seed, &format!("eval.downstream.{k}")),
            ..cfg.classifier.clone()
        };
        let (params, _) = train_structural(&x, &h_sem, g, &LossWeights::supervised(), &c)?;
        let fw = structural::gcn_forward(&params.gcn, &x, &adj);
        let pred = argmax_rows(&fw.probs);
        let acc = accuracy(&pred, g).expect("test nodes present");
        let val = split_accuracy(&pred, g, Split::Validation);
        Ok((acc, val, (k == 0).then_some(fw.h)))
    })?;
    let nmi = match (truth, &runs[0].2) {
        (Some(t), Some(h)) if g.num_classes() >= 2 => Some(downstream_clustering(
            h,
            t,
            g.num_classes(),
            cfg.kmeans_restarts,
            rng::derive_seed(cfg.seed, "eval.kmeans"),
        )?),
        _ => None,
    };
    let val: Option<Vec<f64>> = runs.iter().map(|r| r.1).collect();
    let per_seed: Vec<f64> = runs.into_iter().map(|r| r.0).collect();
    Ok(Downstream {
        accuracy: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
        per_seed,
        test_nodes,
        validation_accuracy: val.map(|v| v.iter().sum::<f64>() / v.len() as f64),
        nmi,
    })
}

/// k-means (k = number of classes, best of `restarts` by inertia) on node
/// embeddings, scored by NMI against the known labels.
pub fn downstream_clustering(
    embeddings: &Array2<f64>,
    labels: &[Option<usize>],
    num_classes: usize,
    restarts: usize,
    seed: u64,
) -> Result<f64> {
    if num_classes < 2 {
        return Err(Error::invalid("NMI is undefined for a single class"));
    }
    let rows: Vec<usize> = (0..labels.len().min(embeddings.nrows())).filter(|&i| labels[i].is_some()).collect();
    if rows.len() < num_classes {
        return Err(Error::invalid("too few labeled nodes to cluster"));
    }
    let sub = embeddings.select(ndarray::Axis(0), &rows);
    let km = kmeans_restarts(&sub, num_classes, seed, restarts);
    let truth: Vec<usize> = rows.iter().map(|&i| labels[i].expect("filtered")).collect();
    Ok(nmi(&km.assignment, &truth))
}

/// Per-issue health: 1 at or below the issue's first severity cut, falling
/// linearly to 0 at the worst possible value 1.
pub fn health(statistics: &[f64; 9], table: &SeverityTable) -> [f64; 9] {
    let mut h = [0.0; 9];
    for (k, &s) in statistics.iter().enumerate() {
        let lo = table.cuts[k][0];
        h[k] = if lo >= 1.0 {
            if s >= 1.0 {
                0.0
            } else {
                1.0
            }
        } else {
            1.0 - ((s - lo) / (1.0 - lo)).clamp(0.0, 1.0)
        };
    }
    h
}

/// Rule-based quality score: ten times the even blend of mean health and
/// downstream accuracy.
pub fn rules_q(health: &[f64; 9], accuracy: f64) -> f64 {
    let mean = health.iter().sum::<f64>() / 9.0;
    (10.0 * (0.5 * mean + 0.5 * accuracy)).clamp(0.0, 10.0)
}

/// `(q, δ, fallback)`.
pub fn score_quality(
    global: &GlobalStats,
    table: &SeverityTable,
    downstream: &Downstream,
    prev: Option<&EvalReport>,
    iteration: usize,
    mode: Mode,
    llm: Option<&LlmClient>,
) -> Result<(f64, bool, bool)> {
    if iteration > 1 && prev.is_none() {
        return Err(Error::invalid(format!("iteration {iteration} needs the previous report")));
    }
    let stats = global.issue_statistics();
    let q = rules_q(&health(&stats, table), downstream.accuracy);
    let delta = table.levels(global).iter().any(|&l| l >= 2);
    let client = match (mode, llm) {
        (Mode::Llm, Some(c)) if c.is_online() => c,
        _ => return Ok((q, delta, mode == Mode::Llm)),
    };
    let named = |s: &[f64; 9]| -> serde_json::Value {
        Issue::ALL.iter().zip(s).map(|(i, v)| (i.as_str().to_string(), json!(v))).collect()
    };
    let before = prev.map_or(json!(null), |p| named(&p.statistics));
    let prompt = prompts::render(
        prompts::SCORE,
        &[
            ("before", &before.to_string()),
            ("after", &named(&stats).to_string()),
            ("downstream", &serde_json::to_string(downstream)?),
        ],
    );
    let req = ProviderRequest::new(Role::EvalScore, prompt, Schema::Score);
    let c = client.complete(&req, || json!({ "q": q, "delta": delta }))?;
    let q = c.value["q"].as_f64().unwrap_or(q);
    let delta = c.value["delta"].as_bool().unwrap_or(delta);
    Ok((q, delta, c.fallback))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// First iteration cleared the quality bar with nothing left to fix.
    QualityBar,
    /// Improvement rule of later iterations.
    Improvement,
    MaxIters,
    /// The plan was empty, so another round would repeat this one.
    Stalled,
    /// The validation guard turned the repaired graph down.
    Rejected,
    Continue,
}

/// Stopping rule. Iteration 1 stops when `q > τ_impf` and `δ` is false;
/// later iterations stop when `q − q_prev > τ_imp` and `δ` is false (or,
/// with `stop_on_plateau`, when `δ` is false or the improvement is at most
/// `τ_imp`). `max_iters` always stops.
pub fn should_stop(q: f64, delta: bool, prev_q: Option<f64>, iteration: usize, cfg: &EvalConfig) -> StopReason {
    let rule = match (iteration, prev_q) {
        (0 | 1, _) | (_, None) => {
            if q > cfg.tau_impf && !delta {
                Some(StopReason::QualityBar)
            } else {
                None
            }
        }
        (_, Some(p)) => {
            let gain = q - p;
            let stop = if cfg.stop_on_plateau {
                !delta || gain <= cfg.tau_imp
            } else {
                gain > cfg.tau_imp && !delta
            };
            stop.then_some(StopReason::Improvement)
        }
    };
    match rule {
        Some(r) => r,
        None if iteration >= cfg.max_iters => StopReason::MaxIters,
        None => StopReason::Continue,
    }
}

/// One row per report: iteration, the nine statistics, downstream metrics,
/// q and δ.
pub fn write_metrics_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut header = vec!["iteration".to_string()];
    header.extend(Issue::ALL.iter().map(|i| i.as_str().to_string()));
    header.extend(["accuracy", "nmi", "q", "delta"].map(String::from));
    w.write_record(&header).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for r in reports {
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.statistics.iter().map(|s| s.to_string()));
        row.push(r.downstream.accuracy.to_string());
        row.push(r.downstream.nmi.map(|x| x.to_string()).unwrap_or_default());
        row.push(r.q.to_string());
        row.push(r.delta.to_string());
        w.write_record(&row).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn health_boundaries() {
        let t = SeverityTable::default();
        let good = Issue::ALL.map(|i| t.cuts[i.index()][0] * 0.5);
        assert_eq!(health(&good, &t), [1.0; 9]);
        assert_eq!(health(&[1.0; 9], &t), [0.0; 9]);
        assert_eq!(rules_q(&[1.0; 9], 1.0), 10.0);
        assert_eq!(rules_q(&[0.0; 9], 0.0), 0.0);
        assert!((rules_q(&[0.8; 9], 0.8) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn stopping_branches() {
        let cfg = EvalConfig::default();
        assert_eq!(should_stop(9.1, false, None, 1, &cfg), StopReason::QualityBar);
        assert_eq!(should_stop(7.0, false, None, 1, &cfg), StopReason::Continue);
        assert_eq!(should_stop(7.5, false, Some(7.0), 2, &cfg), StopReason::Improvement);
        assert_eq!(should_stop(7.1, false, Some(7.0), 2, &cfg), StopReason::Continue);
        assert_eq!(should_stop(7.1, true, Some(7.0), 3, &cfg), StopReason::MaxIters);
        let plateau = EvalConfig {
            stop_on_plateau: true,
            ..EvalConfig::default()
        };
        assert_eq!(should_stop(7.1, true, Some(7.0), 2, &plateau), StopReason::Improvement);
        assert_eq!(should_stop(8.0, true, Some(7.0), 2, &plateau), StopReason::Continue);
    }
}
