//! The closed loop (detect, plan, learn and act, evaluate, repeat), its
//! configuration and record, and the scenario benchmark.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::act::{apply_program, partitioned_optimize, ChangeLog, OptimizeConfig};
use crate::detect::{detect, DetectionConfig, DetectionReport};
use crate::error::{Error, Result};
use crate::evaluate::{
    downstream_classification, health, score_quality, should_stop, write_metrics_csv, Downstream, EvalConfig,
    EvalReport, StopReason, EVAL_SCHEMA,
};
use crate::features::encode_features;
use crate::graph::{IndexMap, TextAttributedGraph};
use crate::issue::Issue;
use crate::learn::{augment_texts, save_state, train, EncoderConfig};
use crate::llm::{CallStats, LlmClient};
use crate::perturb::{apply_scenario, ScenarioSpec};
use crate::plan::{plan, Mode, PlanConfig, PlanReport};
use crate::{io, par, rng};

pub const RECORD_SCHEMA: &str = "run/1";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Graph directory holding nodes.jsonl, edges.csv and manifest.json.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Run directory. The CLI picks `runs/<timestamp>` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Community-balanced parts optimized independently; 1 disables it.
    pub partitions: usize,
    pub paths: Paths,
    pub detect: DetectionConfig,
    pub plan: PlanConfig,
    pub learn: EncoderConfig,
    pub optimize: OptimizeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Rules,
            partitions: 1,
            paths: Paths::default(),
            detect: DetectionConfig::default(),
            plan: PlanConfig::default(),
            learn: EncoderConfig::default(),
            optimize: OptimizeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.partitions == 0 {
            return Err(Error::Config("partitions must be at least 1".into()));
        }
        self.detect.validate()?;
        self.plan.validate()?;
        self.learn.validate()?;
        self.optimize.validate()?;
        self.eval.validate()
    }

    /// Copy with every component seed derived from the global one, and the
    /// planner's generation ratio tied to the optimizer's.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.detect.seed = rng::derive_seed(self.seed, "detect");
        c.learn.seed = rng::derive_seed(self.seed, "learn");
        c.optimize.seed = rng::derive_seed(self.seed, "act");
        c.eval.seed = rng::derive_seed(self.seed, "eval");
        c.plan.r_gen = c.optimize.r_gen;
        c
    }
}

/// Edits of one part of a partitioned iteration, in part-local indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartChanges {
    /// Original index of every part-local node.
    pub nodes: IndexMap,
    pub changes: ChangeLog,
}

/// A repaired graph the validation guard turned down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub validation_accuracy: f64,
    pub baseline_validation_accuracy: f64,
    /// Test accuracy the rejected graph would have scored.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub detection: DetectionReport,
    /// Plan for the whole graph. Partitioned runs re-plan every part.
    pub plan: PlanReport,
    pub changes: ChangeLog,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<PartChanges>,
    /// Evaluation of the graph carried into the next iteration.
    pub eval: EvalReport,
    pub stop: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<Rejection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    /// Final graph directory, relative to the run directory.
    pub final_graph: Option<String>,
    pub stop_reason: Option<StopReason>,
    pub llm: CallStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.iterations.last().map(|it| &it.eval)
    }
}

/// Wall-clock per stage, kept out of the record so that replays compare
/// byte for byte.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: u128,
    pub iterations: Vec<StageTiming>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub detect_ms: u128,
    pub plan_ms: u128,
    pub learn_ms: u128,
    pub act_ms: u128,
    pub eval_ms: u128,
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub graph: TextAttributedGraph,
    pub timing: Timing,
}

fn ms(t: Instant) -> u128 {
    t.elapsed().as_millis()
}

/// One detect, plan, learn and act pass on `g`.
pub fn single_pass(
    g: &TextAttributedGraph,
    cfg: &RunConfig,
    llm: Option<&LlmClient>,
) -> Result<(TextAttributedGraph, ChangeLog)> {
    let x = encode_features(&g.texts(), cfg.learn.feature_dim);
    let report = detect(g, &x, &cfg.detect);
    let p = plan(&report, &cfg.plan, cfg.mode, llm)?;
    let mut log = ChangeLog::default();
    log.notes.push(format!(
        "plan: [{}]",
        p.program.items.iter().map(|i| i.action.as_str()).collect::<Vec<_>>().join(", ")
    ));
    if p.program.items.is_empty() {
        return Ok((g.clone(), log));
    }
    let aug = augment_texts(g, &report.cluster_labels, llm)?;
    let state = train(g, &aug, &p.weights, &cfg.learn)?;
    let out = apply_program(g, &p.program, &state, &report.communities, llm, &cfg.optimize)?;
    log.extend(out.log);
    if let Some(reason) = out.aborted {
        log.notes.push(format!("aborted: {reason}"));
    }
    Ok((out.graph, log))
}

struct Persist<'a> {
    dir: Option<&'a Path>,
}

impl Persist<'_> {
    fn iteration_dir(&self, it: usize) -> Result<Option<PathBuf>> {
        let Some(dir) = self.dir else { return Ok(None) };
        let d = dir.join(format!("iter-{it}"));
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(Some(d))
    }
}

/// Iterate until the stopping rule fires. `truth` scores the clustering
/// metric (defaults to the graph's own labels). With `out`, every
/// intermediate artifact lands there; on failure a partial record is still
/// written before the error is returned.
pub fn run_loop(
    g: &TextAttributedGraph,
    truth: Option<&[Option<usize>]>,
    cfg: &RunConfig,
    llm: Option<&LlmClient>,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    let cfg = cfg.seeded();
    cfg.validate()?;
    let started = Instant::now();
    let mut record = RunRecord {
        schema: RECORD_SCHEMA.to_string(),
        seed: cfg.seed,
        ..RunRecord::default()
    };
    let mut timing = Timing::default();
    let mut current = g.clone();
    let result = iterate(&mut current, truth, &cfg, llm, out, &mut record, &mut timing);
    record.llm = llm.map(LlmClient::stats).unwrap_or_default();
    timing.total_ms = ms(started);
    if let Err(e) = &result {
        record.error = Some(e.to_string());
    }
    if let Some(dir) = out {
        if result.is_ok() {
            io::save_graph(&current, &dir.join("final"))?;
            record.final_graph = Some("final".to_string());
        }
        let evals: Vec<EvalReport> = record.iterations.iter().map(|it| it.eval.clone()).collect();
        write_metrics_csv(&dir.join("metrics.csv"), &evals)?;
        io::write_json(&dir.join("record.json"), &record)?;
        io::write_json(&dir.join("timing.json"), &timing)?;
    }
    result?;
    Ok(RunOutcome {
        record,
        graph: current,
        timing,
    })
}

fn iterate(
    current: &mut TextAttributedGraph,
    truth: Option<&[Option<usize>]>,
    cfg: &RunConfig,
    llm: Option<&LlmClient>,
    out: Option<&Path>,
    record: &mut RunRecord,
    timing: &mut Timing,
) -> Result<()> {
    let own_labels = current.labels();
    let truth = truth.unwrap_or(&own_labels).to_vec();
    let persist = Persist { dir: out };
    let mut prev: Option<EvalReport> = None;
    let mut current_down: Option<Downstream> = None;
    for it in 1..=cfg.eval.max_iters {
        let mut t = StageTiming::default();
        let dir = persist.iteration_dir(it)?;

        let clock = Instant::now();
        let x = encode_features(&current.texts(), cfg.learn.feature_dim);
        let detection = detect(current, &x, &cfg.detect);
        t.detect_ms = ms(clock);

        let clock = Instant::now();
        let p = plan(&detection, &cfg.plan, cfg.mode, llm)?;
        t.plan_ms = ms(clock);
        if let Some(d) = &dir {
            io::write_json(&d.join("detect.json"), &detection)?;
            io::write_json(&d.join("plan.json"), &p)?;
        }

        let mut changes = ChangeLog::default();
        let mut parts = Vec::new();
        let mut aborted = None;
        let next = if p.program.items.is_empty() {
            current.clone()
        } else if cfg.partitions > 1 {
            let clock = Instant::now();
            let inner_cfg = cfg.clone();
            let (merged, logs) =
                partitioned_optimize(current, cfg.partitions, cfg.detect.seed, |part| single_pass(part, &inner_cfg, llm))?;
            t.act_ms = ms(clock);
            parts = logs.into_iter().map(|(nodes, changes)| PartChanges { nodes, changes }).collect();
            merged
        } else {
            let clock = Instant::now();
            let aug = augment_texts(current, &detection.cluster_labels, llm)?;
            let state = train(current, &aug, &p.weights, &cfg.learn)?;
            t.learn_ms = ms(clock);
            if let Some(d) = &dir {
                save_state(&state, &d.join("state.bin"))?;
            }
            let clock = Instant::now();
            let outcome = apply_program(current, &p.program, &state, &detection.communities, llm, &cfg.optimize)?;
            t.act_ms = ms(clock);
            changes = outcome.log;
            aborted = outcome.aborted;
            outcome.graph
        };

        let clock = Instant::now();
        let x = encode_features(&next.texts(), cfg.learn.feature_dim);
        let mut after = detect(&next, &x, &cfg.detect);
        let mut downstream = match (&current_down, p.program.items.is_empty()) {
            (Some(d), true) => d.clone(),
            _ => downstream_classification(&next, Some(&truth), &cfg.eval)?,
        };
        let mut rejected = None;
        let mut next = next;
        if cfg.eval.guard && !p.program.items.is_empty() {
            let base = match current_down.take() {
                Some(d) => d,
                None => downstream_classification(current, Some(&truth), &cfg.eval)?,
            };
            if let (Some(cand), Some(prior)) = (downstream.validation_accuracy, base.validation_accuracy) {
                if cand < prior {
                    log::warn!("iteration {it}: validation accuracy {cand:.4} < {prior:.4}, keeping the previous graph");
                    rejected = Some(Rejection {
                        validation_accuracy: cand,
                        baseline_validation_accuracy: prior,
                        accuracy: downstream.accuracy,
                    });
                    next = current.clone();
                    after = detection.clone();
                    downstream = base;
                }
            }
        }
        current_down = Some(downstream.clone());
        let (q, delta, fallback) =
            score_quality(&after.global, &cfg.plan.table, &downstream, prev.as_ref(), it, cfg.mode, llm)?;
        let statistics = after.global.issue_statistics();
        let eval = EvalReport {
            schema: EVAL_SCHEMA.to_string(),
            iteration: it,
            statistics,
            health: health(&statistics, &cfg.plan.table),
            severities: cfg.plan.table.levels(&after.global),
            global: after.global,
            downstream,
            q,
            delta,
            mode: cfg.mode,
            fallback,
            previous: prev.as_ref().map(EvalReport::reference),
        };
        t.eval_ms = ms(clock);

        let mut stop = should_stop(q, delta, prev.as_ref().map(|r| r.q), it, &cfg.eval);
        if stop == StopReason::Continue && p.program.items.is_empty() {
            stop = StopReason::Stalled;
        }
        if rejected.is_some() && matches!(stop, StopReason::Continue | StopReason::MaxIters) {
            stop = StopReason::Rejected;
        }
        log::info!("iteration {it}: q = {q:.3}, delta = {delta}, {stop:?}");
        if let Some(d) = &dir {
            if parts.is_empty() {
                io::write_json(&d.join("changes.json"), &changes)?;
            } else {
                io::write_json(&d.join("changes.json"), &parts)?;
            }
            io::write_json(&d.join("eval.json"), &eval)?;
            io::save_graph(&next, &d.join("graph"))?;
        }
        record.iterations.push(IterationRecord {
            iteration: it,
            detection,
            plan: p,
            changes,
            parts,
            eval: eval.clone(),
            stop,
            aborted,
            rejected,
        });
        timing.iterations.push(t);
        *current = next;
        prev = Some(eval);
        if stop != StopReason::Continue {
            record.stop_reason = Some(stop);
            break;
        }
    }
    Ok(())
}

// ----------------------------------------------------------------- bench

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub kinds: Vec<Issue>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            kinds: Issue::ALL.to_vec(),
            ratios: vec![0.2, 0.4, 0.8],
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kind: Issue,
    pub ratio: f64,
    pub seed: u64,
    pub degraded_accuracy: Option<f64>,
    pub optimized_accuracy: Option<f64>,
    /// Optimized minus degraded accuracy.
    pub gain: Option<f64>,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub error: Option<String>,
}

fn bench_cell(
    g: &TextAttributedGraph,
    cfg: &RunConfig,
    kind: Issue,
    ratio: f64,
    seed: u64,
    llm: Option<&LlmClient>,
) -> Result<(f64, RunRecord)> {
    let (degraded, _) = apply_scenario(g, &ScenarioSpec { kind, ratio, seed })?;
    let cell = RunConfig {
        seed,
        ..cfg.clone()
    };
    let seeded = cell.seeded();
    let before = downstream_classification(&degraded, None, &seeded.eval)?.accuracy;
    let truth = g.labels();
    let outcome = run_loop(&degraded, Some(&truth), &cell, llm, None)?;
    Ok((before, outcome.record))
}

/// Perturb, measure, optimize and measure again for every grid cell. The
/// downstream classifier uses the same seeds before and after, so an
/// untouched graph scores identically. Failed cells are reported in their
/// row.
pub fn bench(g: &TextAttributedGraph, cfg: &RunConfig, grid: &BenchGrid, llm: Option<&LlmClient>) -> Vec<BenchRow> {
    let mut cells = Vec::new();
    for &kind in &grid.kinds {
        for &ratio in &grid.ratios {
            for &seed in &grid.seeds {
                cells.push((kind, ratio, seed));
            }
        }
    }
    par::map(cells.len(), |k| {
        let (kind, ratio, seed) = cells[k];
        match bench_cell(g, cfg, kind, ratio, seed, llm) {
            Ok((before, record)) => {
                let after = record.final_eval().map(|e| e.downstream.accuracy);
                BenchRow {
                    kind,
                    ratio,
                    seed,
                    degraded_accuracy: Some(before),
                    optimized_accuracy: after,
                    gain: after.map(|a| a - before),
                    iterations: record.iterations.len(),
                    stop_reason: record.stop_reason,
                    error: None,
                }
            }
            Err(e) => {
                log::error!("cell {} @ {ratio} seed {seed} failed: {e}", kind.as_str());
                BenchRow {
                    kind,
                    ratio,
                    seed,
                    degraded_accuracy: None,
                    optimized_accuracy: None,
                    gain: None,
                    iterations: 0,
                    stop_reason: None,
                    error: Some(e.to_string()),
                }
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub kind: Issue,
    pub ratio: f64,
    pub cells: usize,
    pub failed: usize,
    pub degraded_mean: f64,
    pub degraded_std: f64,
    pub optimized_mean: f64,
    pub optimized_std: f64,
    pub gain_mean: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Mean and population standard deviation per (kind, ratio), over the
/// cells that succeeded.
pub fn summarize(rows: &[BenchRow]) -> Vec<BenchSummary> {
    let mut keys: Vec<(Issue, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(k, x)| k == r.kind && x == r.ratio) {
            keys.push((r.kind, r.ratio));
        }
    }
    keys.into_iter()
        .map(|(kind, ratio)| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.kind == kind && r.ratio == ratio).collect();
            let ok: Vec<&BenchRow> = group.iter().copied().filter(|r| r.error.is_none()).collect();
            let before: Vec<f64> = ok.iter().filter_map(|r| r.degraded_accuracy).collect();
            let after: Vec<f64> = ok.iter().filter_map(|r| r.optimized_accuracy).collect();
            let gains: Vec<f64> = ok.iter().filter_map(|r| r.gain).collect();
            let (degraded_mean, degraded_std) = mean_std(&before);
            let (optimized_mean, optimized_std) = mean_std(&after);
            BenchSummary {
                kind,
                ratio,
                cells: group.len(),
                failed: group.len() - ok.len(),
                degraded_mean,
                degraded_std,
                optimized_mean,
                optimized_std,
                gain_mean: mean_std(&gains).0,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Table layout: one row per scenario and ratio, accuracy as mean ± std.
pub fn write_summary_csv(path: &Path, summary: &[BenchSummary]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        scenario: String,
        ratio: f64,
        degraded: String,
        optimized: String,
        gain: f64,
        failed: usize,
    }
    let rows: Vec<Row> = summary
        .iter()
        .map(|s| Row {
            scenario: s.kind.as_str().to_string(),
            ratio: s.ratio,
            degraded: format!("{:.4} ± {:.4}", s.degraded_mean, s.degraded_std),
            optimized: format!("{:.4} ± {:.4}", s.optimized_mean, s.optimized_std),
            gain: s.gain_mean,
            failed: s.failed,
        })
        .collect();
    write_csv(path, &rows)
}
