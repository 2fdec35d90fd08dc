use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use laga_core::act::{apply_program, OptimizeConfig};
use laga_core::detect::{detect, DetectionReport};
use laga_core::evaluate::{
    downstream_classification, health, score_quality, write_metrics_csv, EvalReport, EVAL_SCHEMA,
};
use laga_core::features::encode_features;
use laga_core::io::{self, GroundTruth};
use laga_core::learn::{augment_texts, load_state, save_state, train};
use laga_core::llm::{LlmClient, ResponseCache, CACHE_DIR};
use laga_core::perturb::{apply_scenario, ScenarioSpec};
use laga_core::pipeline::{bench, run_loop, summarize, write_bench_csv, write_summary_csv, BenchGrid, RunConfig};
use laga_core::plan::{plan, Mode, PlanReport};
use laga_core::synth::{sbm_graph, SbmSpec};
use laga_core::{Issue, TextAttributedGraph};

#[derive(Parser)]
#[command(name = "laga", version, about = "Detect and repair quality defects in text-attributed graphs")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg.seeded())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a stochastic-block-model graph with keyword texts.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inject one controlled defect.
    Perturb {
        #[arg(long)]
        kind: Issue,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Diagnose a graph.
    Detect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Turn a detection report into severities, loss weights and a program.
    Plan {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train both encoders and the link predictor.
    Learn {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Apply a program to a graph.
    Optimize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Detection report supplying the community membership; recomputed
        /// when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Score a graph and append to the metrics table.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        prev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics table; defaults to metrics.csv next to the report.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// The full loop.
    Run {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Perturb, optimize and compare over a scenario grid.
    Bench {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<Issue>>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Number of seeds, starting at 0.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn client(cfg: &RunConfig) -> Result<LlmClient> {
    let base = match cfg.mode {
        Mode::Llm => LlmClient::from_env()?,
        Mode::Rules => LlmClient::offline(),
    };
    let dir = cfg.paths.cache.clone().unwrap_or_else(|| PathBuf::from(CACHE_DIR));
    Ok(base.with_cache(ResponseCache::new(dir)))
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    io::read_json(path).with_context(|| format!("reading {}", path.display()))
}

fn load_graph(dir: &Path) -> Result<TextAttributedGraph> {
    io::load_graph_dir(dir).with_context(|| format!("loading graph from {}", dir.display()))
}

fn truth_or_labels(dir: &Path, g: &TextAttributedGraph) -> Result<GroundTruth> {
    Ok(io::load_truth(dir)?.unwrap_or_else(|| GroundTruth::from_graph(g)))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Synth {
            out,
            nodes,
            classes,
            seed,
        } => {
            let g = sbm_graph(&SbmSpec {
                nodes,
                classes,
                seed,
                ..SbmSpec::default()
            })?;
            io::save_graph(&g, &out)?;
            io::save_truth(&GroundTruth::from_graph(&g), &out)?;
            println!("{} nodes, {} edges -> {}", g.num_nodes(), g.num_edges(), out.display());
        }
        Command::Perturb {
            kind,
            ratio,
            seed,
            input,
            out,
            log,
        } => {
            let g = load_graph(&input)?;
            let truth = truth_or_labels(&input, &g)?;
            let (d, plog) = apply_scenario(&g, &ScenarioSpec { kind, ratio, seed })?;
            io::save_graph(&d, &out)?;
            io::save_truth(&truth, &out)?;
            io::write_json(&log, &plog)?;
            println!("{}: {} of {} affected", kind.as_str(), plog.affected, plog.population);
        }
        Command::Detect { input, out, config } => {
            let cfg = config.load()?;
            let g = load_graph(&input)?;
            let x = encode_features(&g.texts(), cfg.learn.feature_dim);
            let report = detect(&g, &x, &cfg.detect);
            io::write_json(&out, &report)?;
            let stats = report.global.issue_statistics();
            for (issue, s) in Issue::ALL.iter().zip(stats) {
                println!("{} {s:.4}", issue.as_str());
            }
        }
        Command::Plan {
            report,
            mode,
            out,
            config,
        } => {
            let mut cfg = config.load()?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            let r: DetectionReport = read_json(&report)?;
            let llm = client(&cfg)?;
            let p = plan(&r, &cfg.plan, cfg.mode, Some(&llm))?;
            io::write_json(&out, &p)?;
            for item in &p.program.items {
                println!("{} cost {} gain {:.3}", item.action.as_str(), item.cost, item.gain);
            }
        }
        Command::Learn {
            input,
            report,
            plan,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let g = load_graph(&input)?;
            let r: DetectionReport = read_json(&report)?;
            let p: PlanReport = read_json(&plan)?;
            if r.n != g.num_nodes() {
                bail!("report covers {} nodes but the graph has {}", r.n, g.num_nodes());
            }
            let llm = client(&cfg)?;
            let aug = augment_texts(&g, &r.cluster_labels, Some(&llm))?;
            let state = train(&g, &aug, &p.weights, &cfg.learn)?;
            save_state(&state, &out)?;
            if let Some(last) = state.trace.last() {
                println!("final {} loss {:.6}", last.encoder, last.loss.total);
            }
        }
        Command::Optimize {
            input,
            plan,
            state,
            out,
            log,
            report,
            config,
        } => {
            let cfg = config.load()?;
            let g = load_graph(&input)?;
            let p: PlanReport = read_json(&plan)?;
            let s = load_state(&state)?;
            let membership = match report {
                Some(path) => read_json::<DetectionReport>(&path)?.communities,
                None => {
                    let x = encode_features(&g.texts(), cfg.learn.feature_dim);
                    detect(&g, &x, &cfg.detect).communities
                }
            };
            let llm = client(&cfg)?;
            let opt: OptimizeConfig = cfg.optimize.clone();
            let outcome = apply_program(&g, &p.program, &s, &membership, Some(&llm), &opt)?;
            io::save_graph(&outcome.graph, &out)?;
            if let Some(t) = io::load_truth(&input)? {
                io::save_truth(&t, &out)?;
            }
            io::write_json(&log, &outcome.log)?;
            if let Some(reason) = &outcome.aborted {
                bail!("program aborted: {reason}");
            }
            let l = &outcome.log;
            println!(
                "{} text, {} structure, {} label, {} generated",
                l.text.len(),
                l.structure.len(),
                l.label.len(),
                l.class.len()
            );
        }
        Command::Evaluate {
            input,
            prev,
            out,
            metrics,
            config,
        } => {
            let cfg = config.load()?;
            let g = load_graph(&input)?;
            let truth = truth_or_labels(&input, &g)?;
            let previous: Option<EvalReport> = prev.as_deref().map(read_json).transpose()?;
            let iteration = previous.as_ref().map_or(1, |p| p.iteration + 1);
            let x = encode_features(&g.texts(), cfg.learn.feature_dim);
            let r = detect(&g, &x, &cfg.detect);
            let downstream = downstream_classification(&g, Some(&truth.labels), &cfg.eval)?;
            let llm = client(&cfg)?;
            let (q, delta, fallback) = score_quality(
                &r.global,
                &cfg.plan.table,
                &downstream,
                previous.as_ref(),
                iteration,
                cfg.mode,
                Some(&llm),
            )?;
            let statistics = r.global.issue_statistics();
            let report = EvalReport {
                schema: EVAL_SCHEMA.to_string(),
                iteration,
                statistics,
                health: health(&statistics, &cfg.plan.table),
                severities: cfg.plan.table.levels(&r.global),
                global: r.global,
                downstream,
                q,
                delta,
                mode: cfg.mode,
                fallback,
                previous: previous.as_ref().map(EvalReport::reference),
            };
            io::write_json(&out, &report)?;
            let metrics = metrics.unwrap_or_else(|| out.with_file_name("metrics.csv"));
            let mut rows: Vec<EvalReport> = previous.into_iter().collect();
            rows.push(report.clone());
            write_metrics_csv(&metrics, &rows)?;
            println!("q {:.3} delta {} accuracy {:.4}", report.q, report.delta, report.downstream.accuracy);
        }
        Command::Run { input, out, config } => {
            let mut cfg = config.load()?;
            if input.is_some() {
                cfg.paths.input = input;
            }
            let input = cfg.paths.input.clone().context("no input graph: pass --in or set paths.input")?;
            let out = out
                .or_else(|| cfg.paths.output.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(chrono::Local::now().format("%Y%m%d-%H%M%S").to_string()));
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
            let g = load_graph(&input)?;
            let truth = truth_or_labels(&input, &g)?;
            let llm = client(&cfg)?;
            let outcome = run_loop(&g, Some(&truth.labels), &cfg, Some(&llm), Some(&out))?;
            let r = &outcome.record;
            println!(
                "{} iteration(s), stop {:?}, q {:.3}, accuracy {:.4} -> {}",
                r.iterations.len(),
                r.stop_reason,
                r.final_eval().map_or(f64::NAN, |e| e.q),
                r.final_eval().map_or(f64::NAN, |e| e.downstream.accuracy),
                out.display()
            );
        }
        Command::Bench {
            input,
            out,
            kinds,
            ratios,
            seeds,
            config,
        } => {
            let cfg = config.load()?;
            let g = match input.or_else(|| cfg.paths.input.clone()) {
                Some(dir) => load_graph(&dir)?,
                None => sbm_graph(&SbmSpec::default())?,
            };
            let grid = BenchGrid {
                kinds: kinds.unwrap_or_else(|| Issue::ALL.to_vec()),
                ratios: ratios.unwrap_or_else(|| vec![0.2, 0.4, 0.8]),
                seeds: (0..seeds).collect(),
            };
            let llm = client(&cfg)?;
            let rows = bench(&g, &cfg, &grid, Some(&llm));
            std::fs::create_dir_all(&out)?;
            write_bench_csv(&out.join("bench.csv"), &rows)?;
            let summary = summarize(&rows);
            write_summary_csv(&out.join("summary.csv"), &summary)?;
            for s in &summary {
                println!(
                    "{} {:.1}: {:.4} ± {:.4} -> {:.4} ± {:.4}",
                    s.kind.as_str(),
                    s.ratio,
                    s.degraded_mean,
                    s.degraded_std,
                    s.optimized_mean,
                    s.optimized_std
                );
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} cell(s) failed; see bench.csv");
            }
        }
    }
    Ok(())
}
