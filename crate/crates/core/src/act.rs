//! Repair operators: text denoising and completion, edge pruning and
//! addition, label imputation and correction, minority-class generation.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::detect::louvain::louvain;
use crate::error::{Error, Result};
use crate::features::HashingEncoder;
use crate::graph::{self, NodeRecord, Split, TextAttributedGraph};
use crate::learn::structural::{embed_isolated, link_probs, GcnParams, LinkParams};
use crate::learn::LearnedState;
use crate::llm::{prompts, LlmClient, ProviderRequest, Role, Schema};
use crate::plan::{ActionItem, ActionKind, ActionProgram};
use crate::text::{self, Corpus};
use crate::{par, rng};

pub const CONTEXT_NEIGHBORS: usize = 3;
pub const CONTEXT_KEYWORDS: usize = 5;
/// Class examples shown to the generator.
pub const GENERATION_EXAMPLES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub k_edge: usize,
    pub tau_edge: f64,
    pub tau_lape: f64,
    pub lambda_label: f64,
    pub r_gen: f64,
    pub seed: u64,
    /// Replacement prompt templates; the built-in ones are used when absent.
    pub denoise_template: Option<String>,
    pub complete_template: Option<String>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            k_edge: 10,
            tau_edge: 0.5,
            tau_lape: 0.7,
            lambda_label: 0.5,
            r_gen: 0.5,
            seed: 0,
            denoise_template: None,
            complete_template: None,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.k_edge == 0 {
            return Err(Error::Config("k_edge must be positive".into()));
        }
        if !unit(self.tau_edge) || !unit(self.tau_lape) || !unit(self.lambda_label) || !unit(self.r_gen) {
            return Err(Error::Config("tau_edge, tau_lape, lambda_label and r_gen must lie in [0,1]".into()));
        }
        for (k, lo, hi, v) in [
            ("tau_edge", 0.4, 0.6, self.tau_edge),
            ("tau_lape", 0.6, 0.8, self.tau_lape),
            ("r_gen", 0.1, 0.5, self.r_gen),
        ] {
            if !(lo..=hi).contains(&v) {
                log::warn!("{k} = {v} is outside the usual search range [{lo}, {hi}]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextTask {
    Denoise,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEdit {
    pub node: usize,
    pub task: TextTask,
    pub before: String,
    pub after: String,
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeOp {
    Remove,
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeEdit {
    pub op: EdgeOp,
    pub u: usize,
    pub v: usize,
    pub prob: f64,
    /// For additions: the node whose deficit triggered the edge and its
    /// degree just before.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anchor: Option<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPath {
    Confident,
    Vote,
    Unchanged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEdit {
    pub node: usize,
    pub before: Option<usize>,
    pub after: Option<usize>,
    pub split_before: Split,
    pub split_after: Split,
    pub confidence: f64,
    pub path: LabelPath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedNode {
    pub node: usize,
    pub class: usize,
    pub text: String,
    pub edges: Vec<(usize, f64)>,
    pub fallback: bool,
}

/// Every edit of one program, grouped by operator family.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeLog {
    pub text: Vec<TextEdit>,
    pub structure: Vec<EdgeEdit>,
    pub label: Vec<LabelEdit>,
    pub class: Vec<GeneratedNode>,
    pub notes: Vec<String>,
}

impl ChangeLog {
    pub fn is_empty(&self) -> bool {
        self.text.is_empty() && self.structure.is_empty() && self.label.is_empty() && self.class.is_empty()
    }

    pub fn extend(&mut self, other: ChangeLog) {
        self.text.extend(other.text);
        self.structure.extend(other.structure);
        self.label.extend(other.label);
        self.class.extend(other.class);
        self.notes.extend(other.notes);
    }
}

/// Edge-probability oracle `â`.
pub trait EdgeScorer {
    fn prob(&self, i: usize, j: usize) -> f64;

    fn probs(&self, pairs: &[(usize, usize)]) -> Vec<f64> {
        pairs.iter().map(|&(i, j)| self.prob(i, j)).collect()
    }

    /// Make an appended node scorable. `text` is its raw text.
    fn register(&mut self, node: usize, text: &str);
}

/// Link predictor over a learned state's structural embeddings, extended
/// with embeddings of nodes generated after training.
#[derive(Clone, Debug)]
pub struct EdgeModel {
    link: LinkParams,
    gcn: GcnParams,
    encoder: HashingEncoder,
    h: Array2<f64>,
}

impl EdgeModel {
    pub fn new(state: &LearnedState) -> Self {
        Self {
            link: state.structural.link.clone(),
            gcn: state.structural.gcn.clone(),
            encoder: state.encoder(),
            h: state.h_stu.clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.h.nrows()
    }
}

impl EdgeScorer for EdgeModel {
    fn prob(&self, i: usize, j: usize) -> f64 {
        link_probs(&self.link, &self.h, &[(i, j)])[0]
    }

    fn probs(&self, pairs: &[(usize, usize)]) -> Vec<f64> {
        link_probs(&self.link, &self.h, pairs)
    }

    fn register(&mut self, node: usize, text: &str) {
        assert_eq!(node, self.h.nrows(), "nodes must be registered in order");
        let row: Array1<f64> = embed_isolated(&self.gcn, &self.encoder.encode(text));
        self.h.push_row(row.view()).expect("embedding width");
    }
}

/// Fixed table of scores, for scripted runs. Unknown pairs score 0.
#[derive(Clone, Debug, Default)]
pub struct TableScorer {
    pub table: BTreeMap<(usize, usize), f64>,
}

impl TableScorer {
    pub fn new(entries: impl IntoIterator<Item = ((usize, usize), f64)>) -> Self {
        Self {
            table: entries.into_iter().map(|((i, j), p)| ((i.min(j), i.max(j)), p)).collect(),
        }
    }
}

impl EdgeScorer for TableScorer {
    fn prob(&self, i: usize, j: usize) -> f64 {
        self.table.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    fn register(&mut self, _node: usize, _text: &str) {}
}

// ---------------------------------------------------------------- text

/// Drop garbage and out-of-vocabulary tokens, keeping surface forms.
pub fn denoise_fallback(corpus: &Corpus, text: &str) -> String {
    text::raw_tokens(text)
        .into_iter()
        .filter(|t| {
            let n = text::normalize(t);
            !text::is_garbage(&n) && corpus.in_vocabulary(&n)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Append the top keywords of the context, or of the text itself when there
/// is no context.
pub fn complete_fallback(corpus: &Corpus, text: &str, neighbor_texts: &[&str]) -> String {
    let source = if neighbor_texts.is_empty() {
        text.to_string()
    } else {
        neighbor_texts.join(" ")
    };
    let kw = corpus.keywords(&source, CONTEXT_KEYWORDS);
    [text.trim(), &kw.join(" ")]
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Up to three neighbors, most probable edge first.
pub fn context_neighbors(g: &TextAttributedGraph, i: usize, scorer: &dyn EdgeScorer) -> Vec<usize> {
    let nb: Vec<usize> = g.neighbors(i).collect();
    let pairs: Vec<(usize, usize)> = nb.iter().map(|&j| (i, j)).collect();
    let p = scorer.probs(&pairs);
    let mut ranked: Vec<(f64, usize)> = p.into_iter().zip(nb).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(CONTEXT_NEIGHBORS).map(|(_, j)| j).collect()
}

pub fn repair_texts(
    g: &TextAttributedGraph,
    targets: &[usize],
    task: TextTask,
    scorer: &dyn EdgeScorer,
    llm: Option<&LlmClient>,
    cfg: &OptimizeConfig,
) -> Result<(TextAttributedGraph, Vec<TextEdit>)> {
    for &i in targets {
        if i >= g.num_nodes() {
            return Err(Error::invalid(format!("text target {i} out of range")));
        }
    }
    let corpus = Corpus::new(g.nodes().iter().map(|n| n.text.as_str()));
    let online = llm.filter(|c| c.is_online());
    let contexts: Vec<Vec<usize>> = targets.iter().map(|&i| context_neighbors(g, i, scorer)).collect();
    let (template, role) = match task {
        TextTask::Denoise => (cfg.denoise_template.as_deref().unwrap_or(prompts::DENOISE), Role::ActDenoise),
        TextTask::Complete => (cfg.complete_template.as_deref().unwrap_or(prompts::COMPLETE), Role::ActComplete),
    };
    let edits = par::try_map(targets.len(), |k| {
        let i = targets[k];
        let before = g.node(i).text.clone();
        let ctx: Vec<&str> = contexts[k].iter().map(|&j| g.node(j).text.as_str()).collect();
        let fb = match task {
            TextTask::Denoise => denoise_fallback(&corpus, &before),
            TextTask::Complete => complete_fallback(&corpus, &before, &ctx),
        };
        let (after, fallback) = match online {
            None => (fb, true),
            Some(client) => {
                let summaries: Vec<String> = ctx
                    .iter()
                    .map(|t| text::first_sentences(t, crate::learn::augment::SUMMARY_SENTENCES))
                    .collect();
                let prompt = prompts::render(template, &[("context", &summaries.join("\n")), ("text", &before)]);
                let req = ProviderRequest::new(role, prompt, Schema::Text);
                let c = client.complete(&req, || json!({ "text": fb }))?;
                (c.value["text"].as_str().unwrap_or_default().to_string(), c.fallback)
            }
        };
        Ok(TextEdit {
            node: i,
            task,
            before,
            after,
            fallback,
        })
    })?;
    let edits: Vec<TextEdit> = edits.into_iter().filter(|e| e.before != e.after).collect();
    let out = g.edited(|e| {
        for t in &edits {
            e.node_mut(t.node).text = t.after.clone();
        }
    })?;
    Ok((out, edits))
}

// ----------------------------------------------------------- structure

/// Delete intra-community edges of the given communities whose `â` falls
/// below `tau_edge`.
pub fn prune_edges(
    g: &TextAttributedGraph,
    communities: &[Vec<usize>],
    scorer: &dyn EdgeScorer,
    cfg: &OptimizeConfig,
) -> Result<(TextAttributedGraph, Vec<EdgeEdit>)> {
    let mut pairs = Vec::new();
    for c in communities {
        let members: BTreeSet<usize> = c.iter().copied().collect();
        for &u in &members {
            if u >= g.num_nodes() {
                return Err(Error::invalid(format!("community member {u} out of range")));
            }
            pairs.extend(g.neighbor_set(u).range(u + 1..).filter(|v| members.contains(v)).map(|&v| (u, v)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let probs = scorer.probs(&pairs);
    let edits: Vec<EdgeEdit> = pairs
        .into_iter()
        .zip(probs)
        .filter(|&(_, p)| p < cfg.tau_edge)
        .map(|((u, v), prob)| EdgeEdit {
            op: EdgeOp::Remove,
            u,
            v,
            prob,
            anchor: None,
        })
        .collect();
    let out = g.edited(|e| {
        for x in &edits {
            e.remove_edge(x.u, x.v);
        }
    })?;
    Ok((out, edits))
}

/// For every target node with degree below `k_edge`, add same-community
/// non-edges in descending `â` while `â > tau_edge` and the degree ceiling
/// is not reached. Targets are processed in index order.
pub fn add_edges(
    g: &TextAttributedGraph,
    targets: &[usize],
    membership: &[usize],
    scorer: &dyn EdgeScorer,
    cfg: &OptimizeConfig,
) -> Result<(TextAttributedGraph, Vec<EdgeEdit>)> {
    if membership.len() < g.num_nodes() {
        return Err(Error::invalid("community membership does not cover the graph"));
    }
    let mut by_comm: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &c) in membership.iter().enumerate().take(g.num_nodes()) {
        by_comm.entry(c).or_default().push(v);
    }
    let targets: BTreeSet<usize> = targets.iter().copied().collect();
    let mut work = g.clone();
    let mut edits = Vec::new();
    for &i in &targets {
        if i >= g.num_nodes() {
            return Err(Error::invalid(format!("edge target {i} out of range")));
        }
        if work.degree(i) >= cfg.k_edge {
            continue;
        }
        let pool: Vec<(usize, usize)> = by_comm[&membership[i]]
            .iter()
            .filter(|&&u| u != i && !work.has_edge(i, u))
            .map(|&u| (i, u))
            .collect();
        let probs = scorer.probs(&pool);
        let mut ranked: Vec<(f64, usize)> = probs.into_iter().zip(pool.iter().map(|p| p.1)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (p, u) in ranked {
            let deg = work.degree(i);
            if deg >= cfg.k_edge || p <= cfg.tau_edge {
                break;
            }
            work.insert_edge(i, u);
            edits.push(EdgeEdit {
                op: EdgeOp::Add,
                u: i.min(u),
                v: i.max(u),
                prob: p,
                anchor: Some((i, deg)),
            });
        }
    }
    work.validate()?;
    Ok((work, edits))
}

/// Both structure rules: prune the flagged noisy communities, then densify
/// the flagged sparse nodes.
pub fn optimize_structure(
    g: &TextAttributedGraph,
    prune: &[Vec<usize>],
    add: &[usize],
    membership: &[usize],
    scorer: &dyn EdgeScorer,
    cfg: &OptimizeConfig,
) -> Result<(TextAttributedGraph, Vec<EdgeEdit>)> {
    let (g1, mut edits) = prune_edges(g, prune, scorer, cfg)?;
    let (g2, more) = add_edges(&g1, add, membership, scorer, cfg)?;
    edits.extend(more);
    Ok((g2, edits))
}

// --------------------------------------------------------------- labels

/// `c = exp(λ·ln p_max + (1−λ)·ln(p_max − p_second))`; 0 when the top two
/// probabilities tie.
pub fn label_confidence(p: &[f64], lambda: f64) -> f64 {
    let mut top = [0.0f64, 0.0];
    for &x in p {
        if x > top[0] {
            top = [x, top[0]];
        } else if x > top[1] {
            top[1] = x;
        }
    }
    if p.len() < 2 {
        return top[0];
    }
    let gap = top[0] - top[1];
    if gap <= 0.0 {
        return 0.0;
    }
    (lambda * top[0].ln() + (1.0 - lambda) * gap.ln()).exp()
}

/// Edge-weighted neighbor vote; ties go to the smaller class.
pub fn weighted_vote(votes: impl IntoIterator<Item = (usize, f64)>, num_classes: usize) -> Option<usize> {
    let mut score = vec![0.0; num_classes];
    let mut any = false;
    for (c, w) in votes {
        score[c] += w;
        any = true;
    }
    if !any {
        return None;
    }
    let mut best = 0;
    for c in 1..num_classes {
        if score[c] > score[best] {
            best = c;
        }
    }
    Some(best)
}

/// Repair labels of flagged nodes from structural class probabilities
/// (`probs`, one row per node) or, when not confident, from an
/// `â`-weighted vote over train-labeled neighbors. Repaired nodes join the
/// train split.
pub fn optimize_labels(
    g: &TextAttributedGraph,
    targets: &[usize],
    probs: &Array2<f64>,
    scorer: &dyn EdgeScorer,
    cfg: &OptimizeConfig,
) -> Result<(TextAttributedGraph, Vec<LabelEdit>)> {
    let d = g.num_classes();
    if probs.ncols() != d {
        return Err(Error::invalid("class probabilities do not match num_classes"));
    }
    let targets: BTreeSet<usize> = targets.iter().copied().collect();
    let mut edits = Vec::new();
    for &i in &targets {
        if i >= g.num_nodes() || i >= probs.nrows() {
            return Err(Error::invalid(format!("label target {i} out of range")));
        }
        let row = probs.row(i).to_vec();
        let c = label_confidence(&row, cfg.lambda_label);
        let (after, path) = if c > cfg.tau_lape {
            let arg = (0..d).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            (Some(arg), LabelPath::Confident)
        } else {
            let nb: Vec<usize> = g.neighbors(i).filter(|&j| g.node(j).train_label().is_some()).collect();
            let pairs: Vec<(usize, usize)> = nb.iter().map(|&j| (i, j)).collect();
            let w = scorer.probs(&pairs);
            let vote = weighted_vote(nb.iter().zip(w).map(|(&j, w)| (g.node(j).label.expect("labeled"), w)), d);
            match vote {
                Some(v) => (Some(v), LabelPath::Vote),
                None => (g.node(i).label, LabelPath::Unchanged),
            }
        };
        let node = g.node(i);
        let split_after = if path == LabelPath::Unchanged { node.split } else { Split::Train };
        edits.push(LabelEdit {
            node: i,
            before: node.label,
            after,
            split_before: node.split,
            split_after,
            confidence: c,
            path,
        });
    }
    let out = g.edited(|e| {
        for x in &edits {
            let n = e.node_mut(x.node);
            n.label = x.after;
            n.split = x.split_after;
        }
    })?;
    Ok((out, edits))
}

// ----------------------------------------------------------- generation

/// `τ_gen = r_gen · mean class size` and the per-class node deficit,
/// rounded up.
pub fn generation_targets(class_counts: &[usize], r_gen: f64) -> (f64, Vec<usize>) {
    if class_counts.is_empty() {
        return (0.0, Vec::new());
    }
    let tau = r_gen * class_counts.iter().sum::<usize>() as f64 / class_counts.len() as f64;
    let need = class_counts
        .iter()
        .map(|&c| if (c as f64) < tau { (tau - c as f64).ceil() as usize } else { 0 })
        .collect();
    (tau, need)
}

/// Synthesize nodes for classes below `τ_gen` (restricted to `classes`
/// when non-empty), each attached to its most probable existing partners.
pub fn generate_nodes(
    g: &TextAttributedGraph,
    classes: &[usize],
    scorer: &mut dyn EdgeScorer,
    llm: Option<&LlmClient>,
    cfg: &OptimizeConfig,
) -> Result<(TextAttributedGraph, Vec<GeneratedNode>, Vec<String>)> {
    let d = g.num_classes();
    if d < 2 {
        return Err(Error::invalid("node generation needs at least two classes"));
    }
    let mut counts = vec![0usize; d];
    for l in g.train_labels().into_iter().flatten() {
        counts[l] += 1;
    }
    let (_, need) = generation_targets(&counts, cfg.r_gen);
    let allowed: BTreeSet<usize> = classes.iter().copied().collect();
    let corpus = Corpus::new(g.nodes().iter().map(|n| n.text.as_str()));
    let mut rng = rng::stream(cfg.seed, "act.generate");
    let online = llm.filter(|c| c.is_online());
    let n0 = g.num_nodes();

    let mut work = g.clone();
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for (c, &k) in need.iter().enumerate() {
        if k == 0 || (!allowed.is_empty() && !allowed.contains(&c)) {
            continue;
        }
        let pool: Vec<usize> = (0..n0).filter(|&v| g.node(v).train_label() == Some(c)).collect();
        if pool.is_empty() {
            notes.push(format!("class {c} has no example texts; using a stub"));
        }
        for _ in 0..k {
            let examples: Vec<&str> = pool
                .choose_multiple(&mut rng, GENERATION_EXAMPLES)
                .map(|&v| g.node(v).text.as_str())
                .collect();
            let fb = if examples.is_empty() {
                format!("class {c}")
            } else {
                corpus.keywords(&examples.join(" "), 2 * CONTEXT_KEYWORDS).join(" ")
            };
            let (text, fallback) = match online {
                None => (fb, true),
                Some(client) => {
                    let prompt = prompts::render(
                        prompts::GENERATE,
                        &[("class", &c.to_string()), ("context", &examples.join("\n"))],
                    );
                    let req = ProviderRequest::new(Role::ActGenerate, prompt, Schema::Text);
                    let r = client.complete(&req, || json!({ "text": fb }))?;
                    (r.value["text"].as_str().unwrap_or_default().to_string(), r.fallback)
                }
            };
            let mut node = NodeRecord::new(0, text.clone(), Some(c), Split::Train);
            node.generated = true;
            let id = work.push_node(node);
            scorer.register(id, &text);
            let pairs: Vec<(usize, usize)> = (0..n0).map(|u| (id, u)).collect();
            let mut ranked: Vec<(f64, usize)> = scorer.probs(&pairs).into_iter().zip(0..n0).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let edges: Vec<(usize, f64)> = ranked
                .into_iter()
                .take_while(|&(p, _)| p > cfg.tau_edge)
                .take(cfg.k_edge)
                .map(|(p, u)| (u, p))
                .collect();
            for &(u, _) in &edges {
                work.insert_edge(id, u);
            }
            out.push(GeneratedNode {
                node: id,
                class: c,
                text,
                edges,
                fallback,
            });
        }
    }
    work.validate()?;
    Ok((work, out, notes))
}

// -------------------------------------------------------------- program

/// Result of running a program. On operator failure `graph` is the last
/// consistent graph and `aborted` carries the error.
#[derive(Clone, Debug)]
pub struct ActOutcome {
    pub graph: TextAttributedGraph,
    pub log: ChangeLog,
    pub aborted: Option<String>,
}

fn run_item(
    g: &TextAttributedGraph,
    item: &ActionItem,
    state: &LearnedState,
    membership: &[usize],
    scorer: &mut EdgeModel,
    llm: Option<&LlmClient>,
    cfg: &OptimizeConfig,
) -> Result<(TextAttributedGraph, ChangeLog)> {
    let mut log = ChangeLog::default();
    let t = &item.targets;
    let g2 = match item.action {
        ActionKind::DenoiseTexts | ActionKind::CompleteTexts => {
            let task = if item.action == ActionKind::DenoiseTexts {
                TextTask::Denoise
            } else {
                TextTask::Complete
            };
            let (g2, e) = repair_texts(g, &t.nodes, task, scorer, llm, cfg)?;
            log.text = e;
            g2
        }
        ActionKind::PruneEdges => {
            let (g2, e) = prune_edges(g, &t.communities, scorer, cfg)?;
            log.structure = e;
            g2
        }
        ActionKind::AddEdges => {
            let mut nodes: BTreeSet<usize> = t.nodes.iter().copied().collect();
            nodes.extend(t.communities.iter().flatten());
            let nodes: Vec<usize> = nodes.into_iter().collect();
            let (g2, e) = add_edges(g, &nodes, membership, scorer, cfg)?;
            log.structure = e;
            g2
        }
        ActionKind::ImputeLabels | ActionKind::CorrectLabels => {
            let (g2, e) = optimize_labels(g, &t.nodes, &state.structural_probs(), scorer, cfg)?;
            log.label = e;
            g2
        }
        ActionKind::GenerateMinorityNodes => {
            let (g2, e, notes) = generate_nodes(g, &t.classes, scorer, llm, cfg)?;
            log.class = e;
            log.notes = notes;
            g2
        }
    };
    Ok((g2, log))
}

/// Execute a program in order. `membership` is the community of every
/// original node; `state` must have been trained on `g`.
pub fn apply_program(
    g: &TextAttributedGraph,
    program: &ActionProgram,
    state: &LearnedState,
    membership: &[usize],
    llm: Option<&LlmClient>,
    cfg: &OptimizeConfig,
) -> Result<ActOutcome> {
    cfg.validate()?;
    if state.num_nodes() != g.num_nodes() {
        return Err(Error::invalid(format!(
            "learned state covers {} nodes but the graph has {}",
            state.num_nodes(),
            g.num_nodes()
        )));
    }
    let mut scorer = EdgeModel::new(state);
    let mut current = g.clone();
    let mut log = ChangeLog::default();
    for item in &program.items {
        match run_item(&current, item, state, membership, &mut scorer, llm, cfg) {
            Ok((next, l)) => {
                log::info!("{}: {} text, {} structure, {} label, {} generated", item.action.as_str(), l.text.len(), l.structure.len(), l.label.len(), l.class.len());
                current = next;
                log.extend(l);
            }
            Err(e) => {
                log::error!("{} failed: {e}", item.action.as_str());
                return Ok(ActOutcome {
                    graph: current,
                    log,
                    aborted: Some(format!("{}: {e}", item.action.as_str())),
                });
            }
        }
    }
    current.validate()?;
    Ok(ActOutcome {
        graph: current,
        log,
        aborted: None,
    })
}

// ----------------------------------------------------------- partitions

/// Louvain communities packed into `p` parts of balanced size (largest
/// community first, into the currently smallest part).
pub fn balanced_groups(g: &TextAttributedGraph, p: usize, seed: u64) -> Vec<BTreeSet<usize>> {
    let comms = louvain(g, seed).members();
    let mut p = p.max(1);
    if p > comms.len() {
        log::warn!("{p} parts requested but only {} communities; using {}", comms.len(), comms.len());
        p = comms.len().max(1);
    }
    let mut order: Vec<&Vec<usize>> = comms.iter().collect();
    order.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let mut groups = vec![BTreeSet::new(); p];
    for c in order {
        let k = (0..p).min_by_key(|&k| (groups[k].len(), k)).expect("p >= 1");
        groups[k].extend(c.iter().copied());
    }
    groups.retain(|s| !s.is_empty());
    groups
}

/// Run `inner` independently on each part and merge the results. Edges
/// between parts are carried over untouched. Returns the per-part logs in
/// part-local indices, with the index maps.
pub fn partitioned_optimize(
    g: &TextAttributedGraph,
    p: usize,
    seed: u64,
    inner: impl Fn(&TextAttributedGraph) -> Result<(TextAttributedGraph, ChangeLog)> + Sync,
) -> Result<(TextAttributedGraph, Vec<(graph::IndexMap, ChangeLog)>)> {
    let groups = balanced_groups(g, p, seed);
    let part = graph::partition(g, &groups)?;
    let results = par::try_map(part.parts.len(), |k| inner(&part.parts[k].0))?;
    let mut merged_parts = Vec::with_capacity(results.len());
    let mut logs = Vec::with_capacity(results.len());
    for ((g2, log), (_, map)) in results.into_iter().zip(&part.parts) {
        merged_parts.push((g2, map.clone()));
        logs.push((map.clone(), log));
    }
    let merged = graph::merge_subgraphs(&merged_parts, part.original_n, &part.cross_edges)?;
    Ok((merged, logs))
}
