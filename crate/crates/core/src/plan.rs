//! Severity assessment, priority ordering, loss weights and budgeted action
//! selection.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::detect::{DetectionReport, GlobalStats};
use crate::error::{Error, Result};
use crate::issue::{Issue, Modality};
use crate::llm::{prompts, LlmClient, ProviderRequest, Role, Schema};

pub const PLAN_SCHEMA: &str = "plan/1";
/// Above this many candidates selection switches from exhaustive to greedy.
pub const EXACT_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Rules,
    Llm,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rules" => Ok(Mode::Rules),
            "llm" => Ok(Mode::Llm),
            _ => Err(Error::invalid(format!("unknown mode `{s}` (expected rules or llm)"))),
        }
    }
}

/// Tie-break order when weighted severities are equal: label issues first,
/// then structure, then text.
pub const TIE_ORDER: [Issue; 9] = [
    Issue::LN,
    Issue::LS,
    Issue::LI,
    Issue::SN,
    Issue::SS,
    Issue::SI,
    Issue::TN,
    Issue::TS,
    Issue::TI,
];

/// Three ascending cut points per issue; the level is the number of cut
/// points the statistic reaches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeverityTable {
    pub cuts: [[f64; 3]; 9],
}

impl Default for SeverityTable {
    fn default() -> Self {
        Self {
            cuts: [
                [0.05, 0.15, 0.3],   // TS fraction of sparse texts
                [0.05, 0.15, 0.3],   // TN fraction of noisy texts
                [0.05, 0.15, 0.3],   // TI fraction of imbalanced texts
                [0.25, 0.45, 0.7],   // SS nodes in sparse communities
                [0.25, 0.45, 0.7],   // SN nodes in noisy communities
                [0.3, 0.4, 0.5],     // SI degree Gini
                [0.05, 0.15, 0.3],   // LS missing labels
                [0.1, 0.2, 0.3],     // LN suspected-noisy rate
                [0.25, 0.35, 0.5],   // LI 1 - min/max class count
            ],
        }
    }
}

impl SeverityTable {
    pub fn level(&self, issue: Issue, statistic: f64) -> u8 {
        self.cuts[issue.index()].iter().filter(|&&c| statistic >= c).count() as u8
    }

    pub fn levels(&self, global: &GlobalStats) -> [u8; 9] {
        Issue::ALL.map(|i| self.level(i, global.issue_statistic(i)))
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.cuts.iter().enumerate() {
            if !c.iter().all(|x| x.is_finite()) || !(c[0] <= c[1] && c[1] <= c[2]) {
                return Err(Error::Config(format!(
                    "severity cut points for {} must be finite and ascending",
                    Issue::ALL[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub eta: f64,
    pub budget: f64,
    pub lambda_plan: f64,
    /// Per-issue priority multipliers.
    pub r: [f64; 9],
    pub table: SeverityTable,
    /// Generation ratio used to estimate the cost of minority generation.
    pub r_gen: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            budget: 1000.0,
            lambda_plan: 0.01,
            r: [1.0; 9],
            table: SeverityTable::default(),
            r_gen: 0.5,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if !(self.budget >= 0.0) || !(self.lambda_plan >= 0.0) {
            return Err(Error::Config("budget and lambda_plan must be non-negative".into()));
        }
        if self.r.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("priority multipliers must be non-negative".into()));
        }
        self.table.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeverityAssessment {
    pub statistics: [f64; 9],
    pub s: [u8; 9],
    pub pi: Vec<Issue>,
    /// Mean severity of (text, structure, label).
    pub s_bar: [f64; 3],
    pub mode: Mode,
    pub fallback: bool,
}

impl SeverityAssessment {
    pub fn severity(&self, issue: Issue) -> u8 {
        self.s[issue.index()]
    }

    /// Position of `issue` in π.
    pub fn rank(&self, issue: Issue) -> usize {
        self.pi.iter().position(|&i| i == issue).expect("pi is a permutation")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl LossWeights {
    pub fn uniform() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
            eta: 1.0,
        }
    }

    pub fn supervised() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            eta: 1.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// π: issues sorted by `r ⊙ s` descending, ties in [`TIE_ORDER`].
pub fn priority(s: &[u8; 9], r: &[f64; 9]) -> Vec<Issue> {
    let mut pi = TIE_ORDER.to_vec();
    pi.sort_by(|a, b| {
        let sa = r[a.index()] * f64::from(s[a.index()]);
        let sb = r[b.index()] * f64::from(s[b.index()]);
        sb.total_cmp(&sa)
    });
    pi
}

pub fn dimension_means(s: &[u8; 9]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for issue in Issue::ALL {
        let k = match issue.modality() {
            Modality::Text => 0,
            Modality::Structure => 1,
            Modality::Label => 2,
        };
        out[k] += f64::from(s[issue.index()]) / 3.0;
    }
    out
}

fn assessment(statistics: [f64; 9], s: [u8; 9], r: &[f64; 9], mode: Mode, fallback: bool) -> SeverityAssessment {
    SeverityAssessment {
        statistics,
        s,
        pi: priority(&s, r),
        s_bar: dimension_means(&s),
        mode,
        fallback,
    }
}

/// ω̃ = softmax(−η s̄).
pub fn reference_weights(s_bar: &[f64; 3], eta: f64) -> LossWeights {
    let logits = s_bar.map(|s| -eta * s);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - max).exp());
    let z: f64 = e.iter().sum();
    LossWeights {
        alpha: e[0] / z,
        beta: e[1] / z,
        gamma: e[2] / z,
        eta,
    }
}

/// Clamp at zero and renormalize; uniform when nothing is left.
pub fn project_to_simplex(w: [f64; 3], eta: f64) -> LossWeights {
    let c = w.map(|x| if x.is_finite() { x.max(0.0) } else { 0.0 });
    let z: f64 = c.iter().sum();
    if z <= 0.0 {
        return LossWeights { eta, ..LossWeights::uniform() };
    }
    LossWeights {
        alpha: c[0] / z,
        beta: c[1] / z,
        gamma: c[2] / z,
        eta,
    }
}

pub fn assess_severity_rules(report: &DetectionReport, cfg: &PlanConfig) -> SeverityAssessment {
    let stats = report.global.issue_statistics();
    assessment(stats, cfg.table.levels(&report.global), &cfg.r, Mode::Rules, false)
}

pub fn decide_loss_weights(s_bar: &[f64; 3], eta: f64) -> LossWeights {
    reference_weights(s_bar, eta)
}

fn severity_prompt(stats: &[f64; 9], reference: &[u8; 9], weights: &LossWeights) -> String {
    let named: serde_json::Map<String, Value> = Issue::ALL
        .iter()
        .map(|i| (i.as_str().to_string(), json!(stats[i.index()])))
        .collect();
    prompts::render(
        prompts::SEVERITY,
        &[
            ("statistics", &serde_json::to_string_pretty(&named).expect("json")),
            ("reference", &serde_json::to_string(reference).expect("json")),
            ("weights", &serde_json::to_string(&weights.as_array()).expect("json")),
        ],
    )
}

/// Severities and loss weights. LLM mode issues a single request carrying
/// both and falls back to the rule tables on any violation.
pub fn assess(report: &DetectionReport, cfg: &PlanConfig, mode: Mode, llm: Option<&LlmClient>) -> Result<(SeverityAssessment, LossWeights)> {
    let rules = assess_severity_rules(report, cfg);
    let rule_weights = reference_weights(&rules.s_bar, cfg.eta);
    let client = match (mode, llm) {
        (Mode::Llm, Some(c)) => c,
        (Mode::Llm, None) => {
            log::warn!("llm mode requested without a client; using rules");
            return Ok((SeverityAssessment { fallback: true, mode, ..rules }, rule_weights));
        }
        (Mode::Rules, _) => return Ok((rules, rule_weights)),
    };
    let prompt = severity_prompt(&rules.statistics, &rules.s, &rule_weights);
    let req = ProviderRequest::new(Role::PlanSeverity, prompt, Schema::Plan);
    let fallback = || json!({ "severities": rules.s, "weights": rule_weights.as_array() });
    let c = client.complete(&req, fallback)?;
    let levels: Vec<u8> = c.value["severities"]
        .as_array()
        .expect("validated")
        .iter()
        .map(|x| x.as_u64().expect("validated") as u8)
        .collect();
    let s: [u8; 9] = levels.try_into().expect("validated length");
    let a = assessment(rules.statistics, s, &cfg.r, Mode::Llm, c.fallback);
    let omega = reference_weights(&a.s_bar, cfg.eta);
    let weights = match c.value.get("weights").and_then(Value::as_array) {
        Some(w) if !c.fallback => project_to_simplex(
            [0, 1, 2].map(|k| w[k].as_f64().unwrap_or(0.0)),
            cfg.eta,
        ),
        _ => omega,
    };
    Ok((a, weights))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    DenoiseTexts,
    CompleteTexts,
    PruneEdges,
    AddEdges,
    ImputeLabels,
    CorrectLabels,
    GenerateMinorityNodes,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::DenoiseTexts,
        ActionKind::CompleteTexts,
        ActionKind::PruneEdges,
        ActionKind::AddEdges,
        ActionKind::ImputeLabels,
        ActionKind::CorrectLabels,
        ActionKind::GenerateMinorityNodes,
    ];

    pub fn issues(self) -> &'static [Issue] {
        match self {
            ActionKind::DenoiseTexts => &[Issue::TN],
            ActionKind::CompleteTexts => &[Issue::TS, Issue::TI],
            ActionKind::PruneEdges => &[Issue::SN],
            ActionKind::AddEdges => &[Issue::SS, Issue::SI],
            ActionKind::ImputeLabels => &[Issue::LS],
            ActionKind::CorrectLabels => &[Issue::LN],
            ActionKind::GenerateMinorityNodes => &[Issue::LI],
        }
    }

    /// Issues whose π position decides where the action runs. The two
    /// structure actions share one slot so pruning always precedes addition.
    fn ordering_issues(self) -> &'static [Issue] {
        match self {
            ActionKind::PruneEdges | ActionKind::AddEdges => &[Issue::SN, Issue::SS, Issue::SI],
            other => other.issues(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::DenoiseTexts => "denoise_texts",
            ActionKind::CompleteTexts => "complete_texts",
            ActionKind::PruneEdges => "prune_edges",
            ActionKind::AddEdges => "add_edges",
            ActionKind::ImputeLabels => "impute_labels",
            ActionKind::CorrectLabels => "correct_labels",
            ActionKind::GenerateMinorityNodes => "generate_minority_nodes",
        }
    }
}

/// Targets copied out of the report's local problem sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    /// Names of the local-problem fields the targets were taken from.
    pub sources: Vec<String>,
    pub nodes: Vec<usize>,
    pub communities: Vec<Vec<usize>>,
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionItem {
    pub action: ActionKind,
    pub targets: Targets,
    pub gain: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionProgram {
    pub items: Vec<ActionItem>,
    pub total_cost: f64,
    pub total_gain: f64,
    pub budget: f64,
    pub lambda_plan: f64,
    pub exact: bool,
}

impl ActionProgram {
    pub fn empty(budget: f64, lambda_plan: f64) -> Self {
        Self {
            items: Vec::new(),
            total_cost: 0.0,
            total_gain: 0.0,
            budget,
            lambda_plan,
            exact: true,
        }
    }

    pub fn contains(&self, kind: ActionKind) -> bool {
        self.items.iter().any(|i| i.action == kind)
    }

    pub fn get(&self, kind: ActionKind) -> Option<&ActionItem> {
        self.items.iter().find(|i| i.action == kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub schema: String,
    pub analysis: SeverityAssessment,
    pub weights: LossWeights,
    pub program: ActionProgram,
}

/// Sort position of an action under π.
pub fn action_rank(kind: ActionKind, a: &SeverityAssessment) -> (usize, ActionKind) {
    let r = kind.ordering_issues().iter().map(|&i| a.rank(i)).min().expect("non-empty");
    (r, kind)
}

/// Estimated number of generated nodes: Σ_c ceil(τ_gen − |V_c|) over
/// classes below τ_gen = r_gen · mean class size.
pub fn generation_estimate(class_counts: &[usize], r_gen: f64) -> usize {
    if class_counts.is_empty() {
        return 0;
    }
    let tau = r_gen * class_counts.iter().sum::<usize>() as f64 / class_counts.len() as f64;
    class_counts
        .iter()
        .map(|&c| if (c as f64) < tau { (tau - c as f64).ceil() as usize } else { 0 })
        .sum()
}

/// Candidate actions with gains `U = severity × |targets|` and costs in
/// provider calls.
pub fn candidates(report: &DetectionReport, a: &SeverityAssessment, cfg: &PlanConfig) -> Vec<ActionItem> {
    let local = &report.local;
    let sev = |i: Issue| f64::from(a.severity(i));
    let nodes_in = |cs: &[Vec<usize>]| cs.iter().map(Vec::len).sum::<usize>();
    let mut out = Vec::new();
    let mut push = |action, targets: Targets, gain: f64, cost: f64| {
        if gain > 0.0 {
            out.push(ActionItem { action, targets, gain, cost });
        }
    };

    push(
        ActionKind::DenoiseTexts,
        Targets {
            sources: vec!["text_noisy".into()],
            nodes: local.text_noisy.clone(),
            ..Targets::default()
        },
        sev(Issue::TN) * local.text_noisy.len() as f64,
        local.text_noisy.len() as f64,
    );

    let mut complete: Vec<usize> = Vec::new();
    let mut sources = Vec::new();
    if a.severity(Issue::TS) > 0 {
        complete.extend(&local.text_sparse);
        sources.push("text_sparse".to_string());
    }
    if a.severity(Issue::TI) > 0 {
        complete.extend(&local.text_imbalanced);
        sources.push("text_imbalanced".to_string());
    }
    complete.sort_unstable();
    complete.dedup();
    push(
        ActionKind::CompleteTexts,
        Targets {
            sources,
            nodes: complete.clone(),
            ..Targets::default()
        },
        sev(Issue::TS) * local.text_sparse.len() as f64 + sev(Issue::TI) * local.text_imbalanced.len() as f64,
        complete.len() as f64,
    );

    push(
        ActionKind::PruneEdges,
        Targets {
            sources: vec!["noisy_communities".into()],
            communities: local.noisy_communities.clone(),
            ..Targets::default()
        },
        sev(Issue::SN) * nodes_in(&local.noisy_communities) as f64,
        1.0,
    );

    let mut add = Targets::default();
    if a.severity(Issue::SS) > 0 {
        add.sources.push("sparse_communities".into());
        add.communities = local.sparse_communities.clone();
    }
    if a.severity(Issue::SI) > 0 {
        add.sources.push("low_degree_nodes".into());
        add.nodes = local.low_degree_nodes.clone();
    }
    push(
        ActionKind::AddEdges,
        add,
        sev(Issue::SS) * nodes_in(&local.sparse_communities) as f64 + sev(Issue::SI) * local.low_degree_nodes.len() as f64,
        1.0,
    );

    push(
        ActionKind::ImputeLabels,
        Targets {
            sources: vec!["missing_labels".into()],
            nodes: local.missing_labels.clone(),
            ..Targets::default()
        },
        sev(Issue::LS) * local.missing_labels.len() as f64,
        1.0,
    );

    push(
        ActionKind::CorrectLabels,
        Targets {
            sources: vec!["noisy_labels".into()],
            nodes: local.noisy_labels.iter().map(|n| n.node).collect(),
            ..Targets::default()
        },
        sev(Issue::LN) * local.noisy_labels.len() as f64,
        1.0,
    );

    let generated = generation_estimate(&report.global.label.class_counts, cfg.r_gen);
    push(
        ActionKind::GenerateMinorityNodes,
        Targets {
            sources: vec!["minority_classes".into()],
            classes: local.minority_classes.clone(),
            ..Targets::default()
        },
        sev(Issue::LI) * generated as f64,
        generated as f64,
    );
    out
}

fn objective(gains: &[f64], costs: &[f64], lambda: f64, mask: u32) -> (f64, f64) {
    let mut u = 0.0;
    let mut ct = 0.0;
    for k in 0..gains.len() {
        if mask & (1 << k) != 0 {
            u += gains[k];
            ct += costs[k];
        }
    }
    (u - lambda * ct, ct)
}

/// Exhaustive maximization of `U − λ·CT` subject to `CT ≤ B`. Among equal
/// objectives the smallest subset mask wins.
pub fn optimal_subset(gains: &[f64], costs: &[f64], budget: f64, lambda: f64) -> Vec<usize> {
    assert_eq!(gains.len(), costs.len());
    assert!(gains.len() <= EXACT_LIMIT, "exhaustive search is limited to {EXACT_LIMIT} candidates");
    let mut best = (0.0, 0u32);
    for mask in 1u32..(1 << gains.len()) {
        let (obj, ct) = objective(gains, costs, lambda, mask);
        if ct <= budget && obj > best.0 {
            best = (obj, mask);
        }
    }
    (0..gains.len()).filter(|k| best.1 & (1 << k) != 0).collect()
}

/// Greedy by `(U − λ·CT) / CT`, visiting candidates in the given order on
/// ties.
pub fn greedy_subset(gains: &[f64], costs: &[f64], budget: f64, lambda: f64) -> Vec<usize> {
    let score = |k: usize| (gains[k] - lambda * costs[k]) / costs[k].max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..gains.len()).collect();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)));
    let mut spent = 0.0;
    let mut chosen = Vec::new();
    for k in order {
        if gains[k] - lambda * costs[k] > 0.0 && spent + costs[k] <= budget {
            spent += costs[k];
            chosen.push(k);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Choose the program and order it by π.
pub fn select_plan(mut items: Vec<ActionItem>, a: &SeverityAssessment, budget: f64, lambda: f64) -> ActionProgram {
    items.sort_by_key(|i| action_rank(i.action, a));
    let gains: Vec<f64> = items.iter().map(|i| i.gain).collect();
    let costs: Vec<f64> = items.iter().map(|i| i.cost).collect();
    if let Some(min) = costs.iter().copied().reduce(f64::min) {
        if budget < min {
            log::warn!("budget {budget} below the cheapest action ({min}); empty program");
        }
    }
    let exact = items.len() <= EXACT_LIMIT;
    let chosen = if exact {
        optimal_subset(&gains, &costs, budget, lambda)
    } else {
        greedy_subset(&gains, &costs, budget, lambda)
    };
    let mut program = ActionProgram::empty(budget, lambda);
    program.exact = exact;
    for k in chosen {
        program.total_cost += costs[k];
        program.total_gain += gains[k];
        program.items.push(items[k].clone());
    }
    program
}

/// Full planning step.
pub fn plan(report: &DetectionReport, cfg: &PlanConfig, mode: Mode, llm: Option<&LlmClient>) -> Result<PlanReport> {
    cfg.validate()?;
    let (analysis, weights) = assess(report, cfg, mode, llm)?;
    let items = candidates(report, &analysis, cfg);
    let program = select_plan(items, &analysis, cfg.budget, cfg.lambda_plan);
    Ok(PlanReport {
        schema: PLAN_SCHEMA.to_string(),
        analysis,
        weights,
        program,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels(pairs: &[(Issue, u8)]) -> [u8; 9] {
        let mut s = [0; 9];
        for &(i, l) in pairs {
            s[i.index()] = l;
        }
        s
    }

    #[test]
    fn clean_priority_is_tie_order() {
        assert_eq!(priority(&[0; 9], &[1.0; 9]), TIE_ORDER.to_vec());
    }

    #[test]
    fn unique_maximum_leads() {
        let s = levels(&[(Issue::LN, 3), (Issue::TS, 2)]);
        assert_eq!(priority(&s, &[1.0; 9])[0], Issue::LN);
    }

    #[test]
    fn multiplier_reorders() {
        let s = levels(&[(Issue::SS, 2), (Issue::LN, 3)]);
        let mut r = [1.0; 9];
        r[Issue::SS.index()] = 2.0;
        let pi = priority(&s, &r);
        assert_eq!(&pi[..2], &[Issue::SS, Issue::LN]);
    }

    #[test]
    fn weight_vectors() {
        let w = reference_weights(&[1.0, 1.0, 1.0], 1.0);
        for x in w.as_array() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let w = reference_weights(&[3.0, 0.0, 0.0], 1.0);
        let e3 = (-3.0f64).exp();
        assert!((w.alpha - e3 / (e3 + 2.0)).abs() < 1e-12);
        assert!((w.alpha - 0.0243).abs() < 1e-4 && (w.beta - 0.4878).abs() < 1e-4);
        let w = reference_weights(&[3.0, 0.0, 1.5], 1e-9);
        assert!((w.alpha - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn knapsack_example() {
        assert_eq!(optimal_subset(&[5.0, 4.0, 3.0], &[2.0, 3.0, 1.0], 4.0, 0.0), vec![0, 2]);
        assert!(optimal_subset(&[5.0, 4.0, 3.0], &[2.0, 3.0, 1.0], 4.0, 1e9).is_empty());
        assert_eq!(optimal_subset(&[2.0], &[1.0], 4.0, 1.0), vec![0]);
        assert!(optimal_subset(&[1.0], &[1.0], 4.0, 1.0).is_empty());
    }

    #[test]
    fn severity_is_monotone() {
        let t = SeverityTable::default();
        for issue in Issue::ALL {
            let mut last = 0;
            for k in 0..=100 {
                let l = t.level(issue, k as f64 / 100.0);
                assert!(l >= last);
                last = l;
            }
        }
    }

    #[test]
    fn projection_sums_to_one() {
        let w = project_to_simplex([2.0, -1.0, 2.0], 1.0);
        assert_eq!((w.alpha, w.beta, w.gamma), (0.5, 0.0, 0.5));
        let w = project_to_simplex([-1.0, -1.0, f64::NAN], 1.0);
        assert!((w.alpha + w.beta + w.gamma - 1.0).abs() < 1e-12);
    }
}
