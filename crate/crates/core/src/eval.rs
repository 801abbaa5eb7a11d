//! Budget-swept system evaluation: global defer ranking, expert completion,
//! utility metrics, incoherence decompositions, and trapezoidal AUCs.

use std::collections::BTreeSet;

use crate::coherence::{
    audit, classify_edge, classify_neighbourhood, complete_system_labels, Action, ActionVector,
    Contract, DefectClass,
};
use crate::decode::{
    action_scores, budgeted_bayes_decode, budgeted_decode, defer_priority, feasibility_closure,
    tbp_map_decode, ClosureStats, DeferPlan, RankedDecision, RiskTable,
};
use crate::error::{Error, Result};
use crate::propagation::{propagate, PrimitiveTable};
use crate::taxonomy::{LabelVector, Taxonomy};

/// Decoding strategy evaluated by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Independent per-node argmax of the local primitives.
    NodewiseBr,
    /// Exact coherent MAP with constrained-action-score ranking.
    Projection,
    /// Per-node argmax of propagated marginals (not coherence-guaranteed).
    TbpFast,
    /// Exact MAP under the joint action model.
    TbpExact,
    /// Minimum-risk coherent decoding over a risk table.
    BayesCoherent,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::NodewiseBr => "nodewise",
            Method::Projection => "project",
            Method::TbpFast => "tbp-fast",
            Method::TbpExact => "tbp-exact",
            Method::BayesCoherent => "bayes",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "nodewise" => Some(Method::NodewiseBr),
            "project" => Some(Method::Projection),
            "tbp-fast" => Some(Method::TbpFast),
            "tbp-exact" => Some(Method::TbpExact),
            "bayes" => Some(Method::BayesCoherent),
            _ => None,
        }
    }

    /// Exact decoders clamp a defer mask, so their raw selection must pass
    /// feasibility closure first.
    pub fn needs_closure(self) -> bool {
        matches!(
            self,
            Method::Projection | Method::TbpExact | Method::BayesCoherent
        )
    }
}

/// One evaluation case: primitives (and risks for the Bayes method), ground
/// truth, and per-expert labels.
#[derive(Debug, Clone)]
pub struct EvalInstance {
    pub id: String,
    /// Required by every method except the risk-table decoder.
    pub primitives: Option<PrimitiveTable>,
    pub risks: Option<RiskTable>,
    pub truth: LabelVector,
    pub experts: Vec<LabelVector>,
}

impl EvalInstance {
    fn primitives(&self) -> Result<&PrimitiveTable> {
        self.primitives
            .as_ref()
            .ok_or_else(|| Error::MissingPrimitiveTable(self.id.clone()))
    }

    fn risks(&self) -> Result<&RiskTable> {
        self.risks
            .as_ref()
            .ok_or_else(|| Error::MissingRiskTable(self.id.clone()))
    }
}

/// A full sweep input: shared taxonomy, contract, method, and instances.
#[derive(Debug, Clone)]
pub struct EvaluationSet {
    pub taxonomy: Taxonomy,
    pub contract: Contract,
    pub method: Method,
    pub instances: Vec<EvalInstance>,
}

impl EvaluationSet {
    pub fn new(
        taxonomy: Taxonomy,
        contract: Contract,
        method: Method,
        instances: Vec<EvalInstance>,
    ) -> Result<Self> {
        let n = taxonomy.len();
        for inst in &instances {
            if inst.truth.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "instance `{}` does not cover all {} node(s)",
                    inst.id, n
                )));
            }
            if method != Method::BayesCoherent {
                let prims = inst.primitives()?;
                if prims.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "instance `{}` does not cover all {} node(s)",
                        inst.id, n
                    )));
                }
                if prims.arity() != contract.arity() {
                    return Err(Error::ShapeMismatch(format!(
                        "instance `{}` arity {} does not match contract arity {}",
                        inst.id,
                        prims.arity(),
                        contract.arity()
                    )));
                }
            }
            if inst.experts.len() != contract.expert_count() as usize {
                return Err(Error::ShapeMismatch(format!(
                    "instance `{}` has {} expert vector(s), contract expects {}",
                    inst.id,
                    inst.experts.len(),
                    contract.expert_count()
                )));
            }
            for (e, m) in inst.experts.iter().enumerate() {
                if m.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "instance `{}` expert {} labels do not cover the taxonomy",
                        inst.id,
                        e + 1
                    )));
                }
                if !m.is_upward_closed(&taxonomy) {
                    return Err(Error::ExpertVectorNotClosed(e + 1));
                }
            }
            if method == Method::BayesCoherent {
                match &inst.risks {
                    None => return Err(Error::MissingRiskTable(inst.id.clone())),
                    Some(r) => {
                        if r.len() != n || r.arity() != contract.arity() {
                            return Err(Error::ShapeMismatch(format!(
                                "instance `{}` risk table shape is wrong",
                                inst.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(EvaluationSet {
            taxonomy,
            contract,
            method,
            instances,
        })
    }

    pub fn total_decisions(&self) -> usize {
        self.taxonomy.len() * self.instances.len()
    }
}

/// Integer thresholds: the unique rounded values of an evenly spaced grid of
/// `intervals + 1` points over `[0, n_total]`, endpoints always included.
pub fn budget_grid(n_total: usize, intervals: usize) -> Vec<usize> {
    assert!(n_total >= 1, "need at least one decision");
    assert!(intervals >= 1, "need at least one interval");
    let mut grid: Vec<usize> = (0..=intervals)
        .map(|i| ((n_total as f64) * (i as f64) / (intervals as f64)).round() as usize)
        .collect();
    grid.push(0);
    grid.push(n_total);
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Method-specific per-(instance, node) ranking value rows.
struct Rankings {
    /// `rows[instance][node]` over the action set.
    rows: Vec<Vec<Vec<f64>>>,
    /// Decisions sorted by defer priority, tie-broken by (id, node name).
    order: Vec<RankedDecision>,
}

fn compute_rankings(set: &EvaluationSet) -> Result<Rankings> {
    let t = &set.taxonomy;
    let mut rows = Vec::with_capacity(set.instances.len());
    for inst in &set.instances {
        let per_node: Vec<Vec<f64>> = match set.method {
            Method::NodewiseBr => inst.primitives()?.rows().to_vec(),
            Method::Projection => {
                let prims = inst.primitives()?;
                let mut v = Vec::with_capacity(t.len());
                for node in 0..t.len() {
                    v.push(action_scores(t, &set.contract, prims, node)?);
                }
                v
            }
            Method::TbpFast | Method::TbpExact => {
                propagate(t, &set.contract, inst.primitives()?)?.rows().to_vec()
            }
            Method::BayesCoherent => {
                let risks = inst.risks()?;
                (0..t.len())
                    .map(|v| risks.row(v).iter().map(|&r| -r).collect())
                    .collect()
            }
        };
        rows.push(per_node);
    }

    let mut order = Vec::with_capacity(set.total_decisions());
    for (i, per_node) in rows.iter().enumerate() {
        for (node, r) in per_node.iter().enumerate() {
            let priority = defer_priority(r);
            order.push(RankedDecision {
                instance: i,
                node,
                score: priority.score,
                expert: priority.expert,
            });
        }
    }
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("ranking scores are finite")
            .then_with(|| set.instances[a.instance].id.cmp(&set.instances[b.instance].id))
            .then_with(|| t.name(a.node).cmp(t.name(b.node)))
    });
    Ok(Rankings { rows, order })
}

fn plan_from_rankings(
    set: &EvaluationSet,
    rankings: &Rankings,
    threshold: usize,
) -> Result<DeferPlan> {
    let n_total = set.total_decisions();
    let selected: Vec<RankedDecision> = rankings.order[..threshold.min(n_total)].to_vec();
    let mut raw: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); set.instances.len()];
    for d in &selected {
        raw[d.instance].insert(d.node);
    }
    let mut closed = Vec::with_capacity(raw.len());
    let mut stats = ClosureStats::default();
    for r in &raw {
        let c = if set.method.needs_closure() {
            feasibility_closure(&set.taxonomy, &set.contract, r)?
        } else {
            r.clone()
        };
        stats.record(r.len(), c.len());
        closed.push(c);
    }
    Ok(DeferPlan {
        budget_fraction: threshold as f64 / n_total as f64,
        threshold,
        ranked_decisions: selected,
        raw_defer_sets: raw,
        closed_defer_sets: closed,
        closure_stats: stats,
    })
}

/// Global top-`threshold` selection of node-level decisions by defer
/// priority, with per-instance feasibility closure for the exact decoders.
pub fn rank_and_select(set: &EvaluationSet, threshold: usize) -> Result<DeferPlan> {
    let rankings = compute_rankings(set)?;
    plan_from_rankings(set, &rankings, threshold)
}

fn clamped_argmax(row: &[f64], deferred: bool) -> Action {
    if deferred {
        let mut best = 2usize;
        for (j, &p) in row.iter().enumerate().skip(3) {
            if p > row[best] {
                best = j;
            }
        }
        Action::from_index(best)
    } else if row[1] > row[0] {
        Action::Assert1
    } else {
        Action::Assert0
    }
}

fn decode_instance(
    set: &EvaluationSet,
    rankings: &Rankings,
    plan: &DeferPlan,
    i: usize,
) -> Result<ActionVector> {
    let t = &set.taxonomy;
    let inst = &set.instances[i];
    let defer = &plan.closed_defer_sets[i];
    match set.method {
        Method::NodewiseBr | Method::TbpFast => {
            let rows = &rankings.rows[i];
            Ok(ActionVector::new(
                (0..t.len())
                    .map(|v| clamped_argmax(&rows[v], defer.contains(&v)))
                    .collect(),
            ))
        }
        Method::Projection => {
            budgeted_decode(t, &set.contract, inst.primitives()?, defer).map(|(a, _)| a)
        }
        Method::TbpExact => {
            tbp_map_decode(t, &set.contract, inst.primitives()?, defer).map(|(a, _)| a)
        }
        Method::BayesCoherent => {
            budgeted_bayes_decode(t, &set.contract, inst.risks()?, defer).map(|(a, _)| a)
        }
    }
}

/// The four utility statistics over a completed label matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMetrics {
    pub balanced_accuracy: f64,
    pub instance_f1: f64,
    pub pooled_f1: f64,
    pub macro_f1: f64,
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        // no positives anywhere: defined as 0
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Balanced accuracy, instance-mean F1, pooled F1, and macro label F1.
pub fn system_metrics(pred: &[LabelVector], truth: &[LabelVector]) -> Result<SystemMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "prediction and truth matrices differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let nodes = truth[0].len();
    for (p, y) in pred.iter().zip(truth) {
        if p.len() != nodes || y.len() != nodes {
            return Err(Error::ShapeMismatch(
                "ragged label matrix".to_string(),
            ));
        }
    }

    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (p, y) in pred.iter().zip(truth) {
        for v in 0..nodes {
            match (p.get(v), y.get(v)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }

    // mean recall over the classes that actually occur
    let mut recalls = Vec::new();
    if tp + fn_ > 0 {
        recalls.push(tp as f64 / (tp + fn_) as f64);
    }
    if tn + fp > 0 {
        recalls.push(tn as f64 / (tn + fp) as f64);
    }
    let balanced_accuracy = if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    };

    let pooled_f1 = f1_from_counts(tp, fp, fn_);

    let mut instance_sum = 0.0;
    for (p, y) in pred.iter().zip(truth) {
        let (mut itp, mut ifp, mut ifn) = (0, 0, 0);
        for v in 0..nodes {
            match (p.get(v), y.get(v)) {
                (true, true) => itp += 1,
                (true, false) => ifp += 1,
                (false, true) => ifn += 1,
                _ => {}
            }
        }
        instance_sum += f1_from_counts(itp, ifp, ifn);
    }
    let instance_f1 = instance_sum / pred.len() as f64;

    let mut macro_sum = 0.0;
    for v in 0..nodes {
        let (mut ltp, mut lfp, mut lfn) = (0, 0, 0);
        for (p, y) in pred.iter().zip(truth) {
            match (p.get(v), y.get(v)) {
                (true, true) => ltp += 1,
                (true, false) => lfp += 1,
                (false, true) => lfn += 1,
                _ => {}
            }
        }
        macro_sum += f1_from_counts(ltp, lfp, lfn);
    }
    let macro_f1 = macro_sum / nodes as f64;

    Ok(SystemMetrics {
        balanced_accuracy,
        instance_f1,
        pooled_f1,
        macro_f1,
    })
}

/// Edge-weighted and neighbourhood-partition defect rates over a matrix of
/// action vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IncoherenceRates {
    pub edge_taxonomic: f64,
    pub edge_deductive: f64,
    pub edge_delegation: f64,
    pub edge_any: f64,
    pub neigh_taxonomic: f64,
    pub neigh_deductive: f64,
    pub neigh_delegation: f64,
    pub neigh_any: f64,
}

impl IncoherenceRates {
    pub fn is_zero(&self) -> bool {
        self.edge_any == 0.0 && self.neigh_any == 0.0
    }
}

/// Rates with denominators `N·|edges|` and `N·|parents with children|`.
pub fn incoherence_rates(
    actions: &[ActionVector],
    t: &Taxonomy,
    contract: &Contract,
) -> Result<IncoherenceRates> {
    let edges: Vec<(usize, usize)> = t.edges().collect();
    let parents: Vec<usize> = t
        .topo_order()
        .iter()
        .copied()
        .filter(|&p| !t.children(p).is_empty())
        .collect();
    let mut rates = IncoherenceRates::default();
    if actions.is_empty() || edges.is_empty() {
        return Ok(rates);
    }
    let mut edge_counts = [0usize; 3];
    let mut neigh_counts = [0usize; 3];
    for a in actions {
        if a.len() != t.len() {
            return Err(Error::ActionTaxonomyMismatch {
                actions: a.len(),
                nodes: t.len(),
            });
        }
        for &(p, c) in &edges {
            match classify_edge(contract, a.get(p), a.get(c)) {
                DefectClass::TaxonomicContradiction => edge_counts[0] += 1,
                DefectClass::DeductiveDefect => edge_counts[1] += 1,
                DefectClass::DelegationViolation => edge_counts[2] += 1,
                DefectClass::Coherent => {}
            }
        }
        for &p in &parents {
            let child_actions: Vec<Action> =
                t.children(p).iter().map(|&c| a.get(c)).collect();
            match classify_neighbourhood(contract, a.get(p), &child_actions) {
                DefectClass::TaxonomicContradiction => neigh_counts[0] += 1,
                DefectClass::DeductiveDefect => neigh_counts[1] += 1,
                DefectClass::DelegationViolation => neigh_counts[2] += 1,
                DefectClass::Coherent => {}
            }
        }
    }
    let edge_denom = (actions.len() * edges.len()) as f64;
    let neigh_denom = (actions.len() * parents.len()) as f64;
    rates.edge_taxonomic = edge_counts[0] as f64 / edge_denom;
    rates.edge_deductive = edge_counts[1] as f64 / edge_denom;
    rates.edge_delegation = edge_counts[2] as f64 / edge_denom;
    rates.edge_any = edge_counts.iter().sum::<usize>() as f64 / edge_denom;
    rates.neigh_taxonomic = neigh_counts[0] as f64 / neigh_denom;
    rates.neigh_deductive = neigh_counts[1] as f64 / neigh_denom;
    rates.neigh_delegation = neigh_counts[2] as f64 / neigh_denom;
    rates.neigh_any = neigh_counts.iter().sum::<usize>() as f64 / neigh_denom;
    Ok(rates)
}

/// Metrics at one budget threshold.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub threshold: usize,
    pub budget_fraction: f64,
    pub metrics: SystemMetrics,
    pub rates: IncoherenceRates,
    pub raw_defers: usize,
    pub realised_defers: usize,
}

/// Trapezoidal areas under each curve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AucSummary {
    pub balanced_accuracy: f64,
    pub instance_f1: f64,
    pub pooled_f1: f64,
    pub macro_f1: f64,
    pub edge_taxonomic: f64,
    pub edge_deductive: f64,
    pub edge_delegation: f64,
    pub edge_any: f64,
    pub neigh_taxonomic: f64,
    pub neigh_deductive: f64,
    pub neigh_delegation: f64,
    pub neigh_any: f64,
}

/// Per-budget curves plus AUC summaries and closure diagnostics.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub auc: AucSummary,
    pub closure: ClosureStats,
}

pub(crate) fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Run the full protocol: for every threshold, select, close (when the
/// decoder requires it), decode, complete with expert labels, and score.
pub fn run_sweep(set: &EvaluationSet, intervals: usize) -> Result<SweepResult> {
    if set.instances.is_empty() {
        return Err(Error::ShapeMismatch("no instances to sweep".to_string()));
    }
    let t = &set.taxonomy;
    let rankings = compute_rankings(set)?;
    let grid = budget_grid(set.total_decisions(), intervals);
    let truths: Vec<LabelVector> = set.instances.iter().map(|i| i.truth.clone()).collect();

    let mut points = Vec::with_capacity(grid.len());
    let mut closure = ClosureStats::default();
    for &threshold in &grid {
        let plan = plan_from_rankings(set, &rankings, threshold)?;
        let mut decoded = Vec::with_capacity(set.instances.len());
        let mut completed = Vec::with_capacity(set.instances.len());
        for i in 0..set.instances.len() {
            let a = decode_instance(set, &rankings, &plan, i)?;
            completed.push(complete_system_labels(t, &a, &set.instances[i].experts)?);
            decoded.push(a);
        }
        let metrics = system_metrics(&completed, &truths)?;
        let rates = incoherence_rates(&decoded, t, &set.contract)?;
        let stats = plan.closure_stats;
        closure.pairs += stats.pairs;
        closure.activations += stats.activations;
        closure.added_total += stats.added_total;
        closure.added_max = closure.added_max.max(stats.added_max);
        closure.raw_total += stats.raw_total;
        closure.realised_total += stats.realised_total;
        points.push(SweepPoint {
            threshold,
            budget_fraction: plan.budget_fraction,
            metrics,
            rates,
            raw_defers: stats.raw_total,
            realised_defers: stats.realised_total,
        });
    }

    let xs: Vec<f64> = points.iter().map(|p| p.budget_fraction).collect();
    let curve = |f: &dyn Fn(&SweepPoint) -> f64| {
        let ys: Vec<f64> = points.iter().map(f).collect();
        trapezoid(&xs, &ys)
    };
    let auc = AucSummary {
        balanced_accuracy: curve(&|p| p.metrics.balanced_accuracy),
        instance_f1: curve(&|p| p.metrics.instance_f1),
        pooled_f1: curve(&|p| p.metrics.pooled_f1),
        macro_f1: curve(&|p| p.metrics.macro_f1),
        edge_taxonomic: curve(&|p| p.rates.edge_taxonomic),
        edge_deductive: curve(&|p| p.rates.edge_deductive),
        edge_delegation: curve(&|p| p.rates.edge_delegation),
        edge_any: curve(&|p| p.rates.edge_any),
        neigh_taxonomic: curve(&|p| p.rates.neigh_taxonomic),
        neigh_deductive: curve(&|p| p.rates.neigh_deductive),
        neigh_delegation: curve(&|p| p.rates.neigh_delegation),
        neigh_any: curve(&|p| p.rates.neigh_any),
    };

    Ok(SweepResult {
        points,
        auc,
        closure,
    })
}

/// Decode one instance of an evaluation set at an explicit defer plan;
/// exposed for the CLI and tests. The audit of the decoded vector is
/// returned alongside.
pub fn decode_at_plan(
    set: &EvaluationSet,
    plan: &DeferPlan,
    instance: usize,
) -> Result<(ActionVector, crate::coherence::AuditReport)> {
    let rankings = compute_rankings(set)?;
    let a = decode_instance(set, &rankings, plan, instance)?;
    let report = audit(&set.taxonomy, &set.contract, &a)?;
    Ok((a, report))
}

/// Rank, close, and decode a whole batch at one threshold. This is the
/// budgeted decode entry point for callers without ground truth.
pub fn budgeted_batch_decode(
    set: &EvaluationSet,
    threshold: usize,
) -> Result<(DeferPlan, Vec<ActionVector>)> {
    let rankings = compute_rankings(set)?;
    let plan = plan_from_rankings(set, &rankings, threshold)?;
    let mut decoded = Vec::with_capacity(set.instances.len());
    for i in 0..set.instances.len() {
        decoded.push(decode_instance(set, &rankings, &plan, i)?);
    }
    Ok((plan, decoded))
}
