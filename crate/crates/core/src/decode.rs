//! Exact decoders over contract-coherent action sets.
//!
//! All exact decoders run the same bottom-up tree dynamic program over
//! per-node (or per-edge) additive scores, differing only in the score table
//! and the admissibility masks. Ties are broken by the lower action index in
//! the order `[0, 1, ⊥₁..⊥_E]`, then first-in-children-order, so decodes are
//! bit-reproducible.

use std::collections::BTreeSet;

use crate::coherence::{audit, Action, ActionVector, AuditReport, Contract};
use crate::error::{Error, Result};
use crate::propagation::{build_kernel, check_table, propagate, PrimitiveTable};
use crate::taxonomy::Taxonomy;

/// Per-node action risks `ρ_v(a)`, all finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    arity: usize,
    rows: Vec<Vec<f64>>,
}

impl RiskTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let arity = rows.first().map(Vec::len).unwrap_or(0);
        if arity < 3 {
            return Err(Error::ShapeMismatch(format!(
                "risk rows need at least 3 entries, got {arity}"
            )));
        }
        for (node, row) in rows.iter().enumerate() {
            if row.len() != arity {
                return Err(Error::ShapeMismatch(format!(
                    "risk row {node} has {} entries, expected {arity}",
                    row.len()
                )));
            }
            for &r in row {
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::ShapeMismatch(format!(
                        "risk {r} at node {node} is not finite and nonnegative"
                    )));
                }
            }
        }
        Ok(RiskTable { arity, rows })
    }

    /// Assemble risks from their parts: `ρ(0) = w·P(Y=1)`, `ρ(1) = w·P(Y=0)`,
    /// `ρ(⊥_e) = w·(P(M_e≠Y) + λ_e)`.
    pub fn from_components(
        weights: &[f64],
        p_present: &[f64],
        expert_error: &[Vec<f64>],
        defer_cost: &[Vec<f64>],
    ) -> Result<Self> {
        let n = weights.len();
        if p_present.len() != n || expert_error.len() != n || defer_cost.len() != n {
            return Err(Error::ShapeMismatch(
                "risk components must all cover the same nodes".to_string(),
            ));
        }
        let mut rows = Vec::with_capacity(n);
        for v in 0..n {
            let experts = expert_error[v].len();
            if defer_cost[v].len() != experts {
                return Err(Error::ShapeMismatch(format!(
                    "node {v}: {} expert errors but {} defer costs",
                    experts,
                    defer_cost[v].len()
                )));
            }
            let w = weights[v];
            let mut row = vec![w * p_present[v], w * (1.0 - p_present[v])];
            for e in 0..experts {
                row.push(w * (expert_error[v][e] + defer_cost[v][e]));
            }
            rows.push(row);
        }
        RiskTable::new(rows)
    }

    /// Zero-cost single-expert risks from calibrated scores: `π = P(Y=1)` and
    /// `q = P(M=Y)` give rows `(π, 1−π, 1−q)`.
    pub fn from_pi_q(pi: &[f64], q: &[f64]) -> Result<Self> {
        if pi.len() != q.len() {
            return Err(Error::ShapeMismatch(
                "pi and q must cover the same nodes".to_string(),
            ));
        }
        let errors: Vec<Vec<f64>> = q.iter().map(|&qv| vec![1.0 - qv]).collect();
        let costs = vec![vec![0.0]; pi.len()];
        RiskTable::from_components(&vec![1.0; pi.len()], pi, &errors, &costs)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.rows[v]
    }

    /// Total risk of an action vector: flat sum in node order.
    pub fn total(&self, a: &ActionVector) -> f64 {
        a.actions
            .iter()
            .enumerate()
            .map(|(v, act)| self.rows[v][act.index()])
            .sum()
    }
}

/// Defer-priority score and the expert that realises it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeferPriority {
    pub score: f64,
    pub expert: u32,
}

/// `r(⊥) − max(r(0), r(1))`; in multi-expert mode the defer value is the
/// best expert's and that expert index is recorded.
pub fn defer_priority(r: &[f64]) -> DeferPriority {
    debug_assert!(r.len() >= 3);
    let assert_best = r[0].max(r[1]);
    let mut best = r[2];
    let mut expert = 1u32;
    for (e, &val) in r.iter().enumerate().skip(3) {
        if val > best {
            best = val;
            expert = (e - 1) as u32;
        }
    }
    DeferPriority {
        score: best - assert_best,
        expert,
    }
}

/// One globally ranked node-level decision.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDecision {
    pub instance: usize,
    pub node: usize,
    pub score: f64,
    pub expert: u32,
}

/// Aggregated feasibility-closure diagnostics across (instance, threshold)
/// pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClosureStats {
    pub pairs: usize,
    pub activations: usize,
    pub added_total: usize,
    pub added_max: usize,
    pub raw_total: usize,
    pub realised_total: usize,
}

impl ClosureStats {
    pub fn record(&mut self, raw: usize, realised: usize) {
        self.pairs += 1;
        self.raw_total += raw;
        self.realised_total += realised;
        let added = realised - raw;
        if added > 0 {
            self.activations += 1;
        }
        self.added_total += added;
        self.added_max = self.added_max.max(added);
    }

    pub fn activation_rate(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.activations as f64 / self.pairs as f64
        }
    }

    pub fn mean_added(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.added_total as f64 / self.pairs as f64
        }
    }

    /// Realised over raw defer count; 1 exactly when closure never adds.
    pub fn realised_raw_ratio(&self) -> f64 {
        if self.raw_total == 0 {
            1.0
        } else {
            self.realised_total as f64 / self.raw_total as f64
        }
    }
}

/// A budgeted selection: the chosen decisions plus per-instance raw and
/// closed defer sets.
#[derive(Debug, Clone)]
pub struct DeferPlan {
    pub budget_fraction: f64,
    pub threshold: usize,
    pub ranked_decisions: Vec<RankedDecision>,
    pub raw_defer_sets: Vec<BTreeSet<usize>>,
    pub closed_defer_sets: Vec<BTreeSet<usize>>,
    pub closure_stats: ClosureStats,
}

// ---------------------------------------------------------------------------
// Shared tree dynamic program
// ---------------------------------------------------------------------------

/// Exact MAP over the taxonomy for additive transition scores.
///
/// `root_score(r, j)` and `trans_score(v, i, j)` return `None` for forbidden
/// choices. All finite scores must be `<= 0`; infeasible cells use a finite
/// sentinel placed below the least feasible total so sums never produce NaN
/// or overflow.
fn tree_map<RS, TS>(
    t: &Taxonomy,
    arity: usize,
    root_score: RS,
    trans_score: TS,
) -> Result<(ActionVector, f64)>
where
    RS: Fn(usize, usize) -> Option<f64>,
    TS: Fn(usize, usize, usize) -> Option<f64>,
{
    if !t.is_tree_or_forest() {
        return Err(Error::DagUnsupported);
    }
    let n = t.len();

    // Least achievable total over available choices; the sentinel sits one
    // below it so "< threshold" detects any path through a forbidden cell.
    let mut floor_total = 0.0f64;
    for v in 0..n {
        let mut worst = f64::INFINITY;
        if t.is_root(v) {
            for j in 0..arity {
                if let Some(s) = root_score(v, j) {
                    worst = worst.min(s);
                }
            }
        } else {
            for i in 0..arity {
                for j in 0..arity {
                    if let Some(s) = trans_score(v, i, j) {
                        worst = worst.min(s);
                    }
                }
            }
        }
        if worst == f64::INFINITY {
            return Err(Error::InfeasibleBudgetMask);
        }
        floor_total += worst;
    }
    let sentinel = floor_total - 1.0;
    let threshold = floor_total - 0.5;

    let mut table = vec![0.0f64; n * arity];
    let mut back = vec![0usize; n * arity];
    let mut root_choice = vec![0usize; n];
    let mut total = 0.0f64;

    for &v in t.topo_order().iter().rev() {
        // subtree mass below v if v takes action j
        let mut below = vec![0.0f64; arity];
        for &u in t.children(v) {
            for (j, b) in below.iter_mut().enumerate() {
                *b += table[u * arity + j];
            }
        }
        if t.is_root(v) {
            let mut best = sentinel;
            let mut arg = 0usize;
            for j in 0..arity {
                if let Some(s) = root_score(v, j) {
                    let val = s + below[j];
                    if val > best {
                        best = val;
                        arg = j;
                    }
                }
            }
            if best < threshold {
                return Err(Error::InfeasibleBudgetMask);
            }
            root_choice[v] = arg;
            total += best;
        } else {
            for i in 0..arity {
                let mut best = sentinel;
                let mut arg = 0usize;
                for j in 0..arity {
                    if let Some(s) = trans_score(v, i, j) {
                        let val = s + below[j];
                        if val > best {
                            best = val;
                            arg = j;
                        }
                    }
                }
                table[v * arity + i] = best;
                back[v * arity + i] = arg;
            }
        }
    }

    let mut actions = vec![Action::Assert0; n];
    for &v in t.topo_order() {
        let j = match t.parent(v) {
            None => root_choice[v],
            Some(p) => back[v * arity + actions[p].index()],
        };
        actions[v] = Action::from_index(j);
    }
    Ok((ActionVector::new(actions), total))
}

fn log_rows(primitives: &PrimitiveTable) -> Vec<Vec<f64>> {
    primitives
        .rows()
        .iter()
        .map(|row| row.iter().map(|&p| p.ln()).collect())
        .collect()
}

fn gamma_masks(contract: &Contract) -> Vec<u32> {
    (0..contract.arity())
        .map(|i| contract.admissible_mask(Action::from_index(i)))
        .collect()
}

fn flat_score(scores: &[Vec<f64>], a: &ActionVector) -> f64 {
    a.actions
        .iter()
        .enumerate()
        .map(|(v, act)| scores[v][act.index()])
        .sum()
}

// ---------------------------------------------------------------------------
// Decoders
// ---------------------------------------------------------------------------

/// Exact coherent MAP of the local primitives: maximise `Σ_v log η_v(a_v)`
/// over the contract's coherent set. The returned vector audits fully
/// coherent; the score is the flat sum of chosen log-primitives.
pub fn project_map(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
) -> Result<(ActionVector, f64)> {
    check_table(t, contract, primitives)?;
    let logp = log_rows(primitives);
    let masks = gamma_masks(contract);
    let (actions, _) = tree_map(
        t,
        contract.arity(),
        |r, j| Some(logp[r][j]),
        |v, i, j| (masks[i] & (1 << j) != 0).then(|| logp[v][j]),
    )?;
    let score = flat_score(&logp, &actions);
    Ok((actions, score))
}

/// Constrained MAP action scores `V_target(a*)`: the best coherent total
/// log-score with the target clamped to each action. Infeasible clamps are
/// reported as `f64::NEG_INFINITY`.
pub fn action_scores(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
    target: usize,
) -> Result<Vec<f64>> {
    check_table(t, contract, primitives)?;
    if target >= t.len() {
        return Err(Error::NodeIndexOutOfRange {
            index: target,
            len: t.len(),
        });
    }
    let logp = log_rows(primitives);
    let masks = gamma_masks(contract);
    let mut out = Vec::with_capacity(contract.arity());
    for clamp in 0..contract.arity() {
        let result = tree_map(
            t,
            contract.arity(),
            |r, j| (r != target || j == clamp).then(|| logp[r][j]),
            |v, i, j| {
                ((v != target || j == clamp) && masks[i] & (1 << j) != 0).then(|| logp[v][j])
            },
        );
        match result {
            Ok((actions, _)) => out.push(flat_score(&logp, &actions)),
            Err(Error::InfeasibleBudgetMask) => out.push(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Minimal superset of `raw` under which clamped decoding stays feasible:
/// every forced-deferred ancestor–descendant pair is connected by a deferred
/// path (for subtree handoff, whole subtrees are deferred). Idempotent and
/// monotone; computed top-down to fixpoint.
pub fn feasibility_closure(
    t: &Taxonomy,
    contract: &Contract,
    raw: &BTreeSet<usize>,
) -> Result<BTreeSet<usize>> {
    if !t.is_tree_or_forest() {
        return Err(Error::DagUnsupported);
    }
    for &v in raw {
        if v >= t.len() {
            return Err(Error::NodeIndexOutOfRange {
                index: v,
                len: t.len(),
            });
        }
    }
    let mut closed = raw.clone();
    if matches!(
        contract.kind(),
        crate::coherence::ContractKind::SubtreeHandoff
    ) {
        for &v in raw {
            closed.extend(t.descendants(v)?);
        }
        return Ok(closed);
    }
    // subtree_holds[v]: some raw defer lies in the subtree rooted at v
    let mut holds = vec![false; t.len()];
    for &v in t.topo_order().iter().rev() {
        holds[v] = raw.contains(&v) || t.children(v).iter().any(|&c| holds[c]);
    }
    for &v in t.topo_order() {
        if closed.contains(&v) {
            for &c in t.children(v) {
                if holds[c] {
                    closed.insert(c);
                }
            }
        }
    }
    Ok(closed)
}

fn defer_flags(n: usize, defer: &BTreeSet<usize>) -> Vec<bool> {
    let mut flags = vec![false; n];
    for &v in defer {
        if v < n {
            flags[v] = true;
        }
    }
    flags
}

fn budget_allowed(deferred: &[bool], v: usize, j: usize) -> bool {
    if deferred[v] {
        j >= 2
    } else {
        j < 2
    }
}

/// Exact coherent MAP with deferred nodes clamped to `⊥` and all others
/// restricted to `{0, 1}`. The defer set must already be closed; an
/// infeasible mask is an error.
pub fn budgeted_decode(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
    defer: &BTreeSet<usize>,
) -> Result<(ActionVector, f64)> {
    check_table(t, contract, primitives)?;
    let logp = log_rows(primitives);
    let masks = gamma_masks(contract);
    let deferred = defer_flags(t.len(), defer);
    let (actions, _) = tree_map(
        t,
        contract.arity(),
        |r, j| budget_allowed(&deferred, r, j).then(|| logp[r][j]),
        |v, i, j| {
            (budget_allowed(&deferred, v, j) && masks[i] & (1 << j) != 0).then(|| logp[v][j])
        },
    )?;
    let score = flat_score(&logp, &actions);
    Ok((actions, score))
}

/// Budgeted minimum-risk coherent decode: same feasible set as
/// [`budgeted_decode`] but minimising `Σ ρ_v(a_v)`.
pub fn budgeted_bayes_decode(
    t: &Taxonomy,
    contract: &Contract,
    risks: &RiskTable,
    defer: &BTreeSet<usize>,
) -> Result<(ActionVector, f64)> {
    check_risks(t, contract, risks)?;
    let neg: Vec<Vec<f64>> = risks
        .rows
        .iter()
        .map(|row| row.iter().map(|&r| -r).collect())
        .collect();
    let masks = gamma_masks(contract);
    let deferred = defer_flags(t.len(), defer);
    let (actions, _) = tree_map(
        t,
        contract.arity(),
        |r, j| budget_allowed(&deferred, r, j).then(|| neg[r][j]),
        |v, i, j| {
            (budget_allowed(&deferred, v, j) && masks[i] & (1 << j) != 0).then(|| neg[v][j])
        },
    )?;
    let total = risks.total(&actions);
    Ok((actions, total))
}

/// Exact MAP of the joint action model over the budgeted feasible set: edge
/// scores are log kernel entries, roots use log primitives. Structural zeros
/// are never selected, so the output is exactly coherent.
pub fn tbp_map_decode(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
    defer: &BTreeSet<usize>,
) -> Result<(ActionVector, f64)> {
    if !t.is_tree_or_forest() {
        return Err(Error::DagUnsupported);
    }
    check_table(t, contract, primitives)?;
    let arity = contract.arity();
    let kernels: Vec<_> = (0..t.len())
        .map(|v| build_kernel(contract, primitives.row(v)))
        .collect();
    let deferred = defer_flags(t.len(), defer);
    let (actions, _) = tree_map(
        t,
        arity,
        |r, j| budget_allowed(&deferred, r, j).then(|| primitives.row(r)[j].ln()),
        |v, i, j| {
            if !budget_allowed(&deferred, v, j) {
                return None;
            }
            let p = kernels[v].get(i, j);
            (p > 0.0).then(|| p.ln())
        },
    )?;
    // flat log-score in node order: roots from primitives, edges from kernels
    let mut score = 0.0;
    for v in 0..t.len() {
        score += match t.parent(v) {
            None => primitives.row(v)[actions.get(v).index()].ln(),
            Some(p) => kernels[v]
                .get(actions.get(p).index(), actions.get(v).index())
                .ln(),
        };
    }
    Ok((actions, score))
}

/// Unbudgeted exact MAP of the joint action model over the full coherent
/// set.
pub fn tbp_map_full(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
) -> Result<(ActionVector, f64)> {
    if !t.is_tree_or_forest() {
        return Err(Error::DagUnsupported);
    }
    check_table(t, contract, primitives)?;
    let kernels: Vec<_> = (0..t.len())
        .map(|v| build_kernel(contract, primitives.row(v)))
        .collect();
    let (actions, _) = tree_map(
        t,
        contract.arity(),
        |r, j| Some(primitives.row(r)[j].ln()),
        |v, i, j| {
            let p = kernels[v].get(i, j);
            (p > 0.0).then(|| p.ln())
        },
    )?;
    let mut score = 0.0;
    for v in 0..t.len() {
        score += match t.parent(v) {
            None => primitives.row(v)[actions.get(v).index()].ln(),
            Some(p) => kernels[v]
                .get(actions.get(p).index(), actions.get(v).index())
                .ln(),
        };
    }
    Ok((actions, score))
}

/// Per-node argmax of the propagated marginals under budget clamping:
/// deferred nodes take their best defer action, all others the better of
/// `{0, 1}`. Not coherence-guaranteed; the audit is attached.
pub fn fast_marginal_decode(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
    defer: &BTreeSet<usize>,
) -> Result<(ActionVector, AuditReport)> {
    let mu = propagate(t, contract, primitives)?;
    let actions: Vec<Action> = (0..t.len())
        .map(|v| clamped_argmax(mu.row(v), defer.contains(&v)))
        .collect();
    let actions = ActionVector::new(actions);
    let report = audit(t, contract, &actions)?;
    Ok((actions, report))
}

/// Unbudgeted marginal decode: per-node argmax over the full action set.
pub fn marginal_argmax(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
) -> Result<(ActionVector, AuditReport)> {
    let mu = propagate(t, contract, primitives)?;
    let actions = ActionVector::new((0..t.len()).map(|v| argmax_action(mu.row(v))).collect());
    let report = audit(t, contract, &actions)?;
    Ok((actions, report))
}

/// Minimum-risk coherent action vector via the subtree recursion over the
/// contract's admissible sets. Returns the vector and its total risk.
pub fn bayes_coherent_decode(
    t: &Taxonomy,
    contract: &Contract,
    risks: &RiskTable,
) -> Result<(ActionVector, f64)> {
    check_risks(t, contract, risks)?;
    let neg: Vec<Vec<f64>> = risks
        .rows
        .iter()
        .map(|row| row.iter().map(|&r| -r).collect())
        .collect();
    let masks = gamma_masks(contract);
    let (actions, _) = tree_map(
        t,
        contract.arity(),
        |r, j| Some(neg[r][j]),
        |v, i, j| (masks[i] & (1 << j) != 0).then(|| neg[v][j]),
    )?;
    let total = risks.total(&actions);
    Ok((actions, total))
}

/// Independent per-node risk argmin. No coherence guarantee; the audit is
/// attached so callers see the damage.
pub fn nodewise_bayes_baseline(
    t: &Taxonomy,
    contract: &Contract,
    risks: &RiskTable,
) -> Result<(ActionVector, AuditReport)> {
    check_risks(t, contract, risks)?;
    let actions = ActionVector::new(
        (0..t.len())
            .map(|v| {
                let row = risks.row(v);
                let mut best = 0usize;
                for (j, &r) in row.iter().enumerate().skip(1) {
                    if r < row[best] {
                        best = j;
                    }
                }
                Action::from_index(best)
            })
            .collect(),
    );
    let report = audit(t, contract, &actions)?;
    Ok((actions, report))
}

/// Independent per-node argmax of the local primitives.
pub fn nodewise_argmax(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
) -> Result<(ActionVector, AuditReport)> {
    check_table(t, contract, primitives)?;
    let actions =
        ActionVector::new((0..t.len()).map(|v| argmax_action(primitives.row(v))).collect());
    let report = audit(t, contract, &actions)?;
    Ok((actions, report))
}

fn argmax_action(row: &[f64]) -> Action {
    let mut best = 0usize;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    Action::from_index(best)
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

fn check_risks(t: &Taxonomy, contract: &Contract, risks: &RiskTable) -> Result<()> {
    if risks.len() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "risk table covers {} node(s), taxonomy has {}",
            risks.len(),
            t.len()
        )));
    }
    if risks.arity() != contract.arity() {
        return Err(Error::ShapeMismatch(format!(
            "risk arity {} does not match contract arity {}",
            risks.arity(),
            contract.arity()
        )));
    }
    Ok(())
}
