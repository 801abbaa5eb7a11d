//! Action spaces, handoff contracts, and the defect taxonomy.
//!
//! Classifies ternary prediction/defer vectors edge-by-edge and
//! neighbourhood-by-neighbourhood, and decides exact compatibility and
//! entailment on small instances by enumeration.

use crate::error::{Error, Result};
use crate::taxonomy::{LabelVector, Taxonomy};

/// One node-level decision: assert absent, assert present, or hand off to an
/// expert. Expert indices are 1-based; single-expert contracts use index 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Assert0,
    Assert1,
    Defer(u32),
}

impl Action {
    pub fn is_defer(self) -> bool {
        matches!(self, Action::Defer(_))
    }

    /// Position in the canonical action order `[0, 1, ⊥₁..⊥_E]`.
    pub fn index(self) -> usize {
        match self {
            Action::Assert0 => 0,
            Action::Assert1 => 1,
            Action::Defer(e) => 1 + e as usize,
        }
    }

    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Assert0,
            1 => Action::Assert1,
            e => Action::Defer((e - 1) as u32),
        }
    }
}

/// Handoff semantics when an internal concept is deferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractKind {
    /// Deferred parent: children may be excluded or deferred, never asserted
    /// present.
    SelectiveExclusion,
    /// Deferred parent: the whole subtree must be deferred.
    SubtreeHandoff,
    /// Selective exclusion over expert-indexed deferral actions.
    MultiExpert,
}

/// A handoff contract: the kind plus the expert count (1 unless multi-expert).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contract {
    kind: ContractKind,
    experts: u32,
    same_expert: bool,
}

impl Contract {
    pub fn selective_exclusion() -> Self {
        Contract {
            kind: ContractKind::SelectiveExclusion,
            experts: 1,
            same_expert: false,
        }
    }

    pub fn subtree_handoff() -> Self {
        Contract {
            kind: ContractKind::SubtreeHandoff,
            experts: 1,
            same_expert: false,
        }
    }

    pub fn multi_expert(experts: u32) -> Result<Self> {
        if experts == 0 {
            return Err(Error::InvalidExpertIndex { index: 0, experts });
        }
        Ok(Contract {
            kind: ContractKind::MultiExpert,
            experts,
            same_expert: false,
        })
    }

    /// Experimental stricter variant: a deferred parent pins its subtree's
    /// deferrals to the same expert.
    pub fn with_same_expert(mut self) -> Self {
        self.same_expert = true;
        self
    }

    pub fn kind(&self) -> ContractKind {
        self.kind
    }

    pub fn expert_count(&self) -> u32 {
        self.experts
    }

    pub fn same_expert(&self) -> bool {
        self.same_expert
    }

    /// Size of the action set: `2 + E`.
    pub fn arity(&self) -> usize {
        2 + self.experts as usize
    }

    /// All actions in canonical index order.
    pub fn actions(&self) -> impl Iterator<Item = Action> {
        (0..self.arity()).map(Action::from_index)
    }

    pub fn validate_action(&self, a: Action) -> Result<()> {
        if let Action::Defer(e) = a {
            if e == 0 || e > self.experts {
                return Err(Error::InvalidExpertIndex {
                    index: e,
                    experts: self.experts,
                });
            }
        }
        Ok(())
    }

    /// Bitmask over action indices admissible for a child of `parent`.
    pub(crate) fn admissible_mask(&self, parent: Action) -> u32 {
        let all: u32 = (1 << self.arity()) - 1;
        let defers: u32 = all & !0b11;
        match (self.kind, parent) {
            (_, Action::Assert0) => 0b01,
            (_, Action::Assert1) => all,
            (ContractKind::SelectiveExclusion, Action::Defer(_)) => 0b01 | defers,
            (ContractKind::SubtreeHandoff, Action::Defer(_)) => defers,
            (ContractKind::MultiExpert, Action::Defer(e)) => {
                if self.same_expert {
                    0b01 | (1 << (1 + e as usize))
                } else {
                    0b01 | defers
                }
            }
        }
    }
}

/// Admissible child actions given the parent's action, in canonical order.
pub fn admissible_child_actions(contract: &Contract, parent: Action) -> Result<Vec<Action>> {
    contract.validate_action(parent)?;
    let mask = contract.admissible_mask(parent);
    Ok((0..contract.arity())
        .filter(|i| mask & (1 << i) != 0)
        .map(Action::from_index)
        .collect())
}

/// One decision per taxonomy node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionVector {
    pub actions: Vec<Action>,
}

impl ActionVector {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, v: usize) -> Action {
        self.actions[v]
    }
}

/// Edge-level defect classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectClass {
    Coherent,
    TaxonomicContradiction,
    DelegationViolation,
    DeductiveDefect,
}

impl DefectClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DefectClass::Coherent => "coherent",
            DefectClass::TaxonomicContradiction => "taxonomic_contradiction",
            DefectClass::DelegationViolation => "delegation_violation",
            DefectClass::DeductiveDefect => "deductive_defect",
        }
    }
}

/// Classification of one edge. `contract_escape` marks violations that the
/// three-way decomposition does not name (a child escaping a subtree handoff,
/// or switching experts under the same-expert contract); these are reported
/// as delegation violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeDefect {
    pub parent: usize,
    pub child: usize,
    pub class: DefectClass,
    pub contract_escape: bool,
}

/// Edge class as a function of `(a_p, a_c)` only.
pub fn classify_edge(contract: &Contract, a_p: Action, a_c: Action) -> DefectClass {
    classify_edge_detail(contract, a_p, a_c).0
}

pub(crate) fn classify_edge_detail(
    contract: &Contract,
    a_p: Action,
    a_c: Action,
) -> (DefectClass, bool) {
    match (a_p, a_c) {
        (Action::Assert0, Action::Assert1) => (DefectClass::TaxonomicContradiction, false),
        (Action::Assert0, Action::Defer(_)) => (DefectClass::DeductiveDefect, false),
        (Action::Defer(_), Action::Assert1) => (DefectClass::DelegationViolation, false),
        (Action::Defer(_), Action::Assert0)
            if contract.kind() == ContractKind::SubtreeHandoff =>
        {
            (DefectClass::DelegationViolation, true)
        }
        (Action::Defer(e), Action::Defer(f))
            if contract.kind() == ContractKind::MultiExpert
                && contract.same_expert()
                && e != f =>
        {
            (DefectClass::DelegationViolation, true)
        }
        _ => (DefectClass::Coherent, false),
    }
}

/// Neighbourhood class under the ordered predicates: first violated wins.
///
/// (1) parent absent and any child present; (2) parent deferred and any child
/// outside the contract's admissible set; (3) parent absent, no child
/// present, some child deferred; (4) coherent otherwise.
pub fn classify_neighbourhood(
    contract: &Contract,
    a_p: Action,
    children: &[Action],
) -> DefectClass {
    let any_present = children.iter().any(|&c| c == Action::Assert1);
    match a_p {
        Action::Assert0 => {
            if any_present {
                DefectClass::TaxonomicContradiction
            } else if children.iter().any(|c| c.is_defer()) {
                DefectClass::DeductiveDefect
            } else {
                DefectClass::Coherent
            }
        }
        Action::Assert1 => DefectClass::Coherent,
        Action::Defer(_) => {
            let mask = contract.admissible_mask(a_p);
            if children.iter().any(|&c| mask & (1 << c.index()) == 0) {
                DefectClass::DelegationViolation
            } else {
                DefectClass::Coherent
            }
        }
    }
}

/// Per-class tallies for one view of an audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DefectCounts {
    pub coherent: usize,
    pub taxonomic: usize,
    pub delegation: usize,
    pub deductive: usize,
}

impl DefectCounts {
    fn record(&mut self, class: DefectClass) {
        match class {
            DefectClass::Coherent => self.coherent += 1,
            DefectClass::TaxonomicContradiction => self.taxonomic += 1,
            DefectClass::DelegationViolation => self.delegation += 1,
            DefectClass::DeductiveDefect => self.deductive += 1,
        }
    }

    pub fn incoherent(&self) -> usize {
        self.taxonomic + self.delegation + self.deductive
    }

    pub fn total(&self) -> usize {
        self.coherent + self.incoherent()
    }
}

/// Full edge and neighbourhood classification of one action vector.
#[derive(Debug, Clone)]
pub struct AuditReport {
    /// Every edge with its class, grouped by parent in topological order.
    pub edges: Vec<EdgeDefect>,
    /// One class per parent that has children, in topological order.
    pub neighbourhoods: Vec<(usize, DefectClass)>,
    pub edge_counts: DefectCounts,
    pub neighbourhood_counts: DefectCounts,
    pub any_incoherent: bool,
}

/// Classify every edge and parent neighbourhood of `a` under `contract`.
pub fn audit(t: &Taxonomy, contract: &Contract, a: &ActionVector) -> Result<AuditReport> {
    if a.len() != t.len() {
        return Err(Error::ActionTaxonomyMismatch {
            actions: a.len(),
            nodes: t.len(),
        });
    }
    for &act in &a.actions {
        contract.validate_action(act)?;
    }

    let mut edges = Vec::with_capacity(t.edge_count());
    let mut edge_counts = DefectCounts::default();
    let mut neighbourhoods = Vec::new();
    let mut neighbourhood_counts = DefectCounts::default();

    for &p in t.topo_order() {
        let kids = t.children(p);
        if kids.is_empty() {
            continue;
        }
        for &c in kids {
            let (class, escape) = classify_edge_detail(contract, a.get(p), a.get(c));
            edge_counts.record(class);
            edges.push(EdgeDefect {
                parent: p,
                child: c,
                class,
                contract_escape: escape,
            });
        }
        let child_actions: Vec<Action> = kids.iter().map(|&c| a.get(c)).collect();
        let class = classify_neighbourhood(contract, a.get(p), &child_actions);
        neighbourhood_counts.record(class);
        neighbourhoods.push((p, class));
    }

    let any_incoherent = edge_counts.incoherent() > 0;
    Ok(AuditReport {
        edges,
        neighbourhoods,
        edge_counts,
        neighbourhood_counts,
        any_incoherent,
    })
}

/// Hard cap on nodes for the exponential enumeration operations.
pub const ENUMERATION_NODE_LIMIT: usize = 20;

fn enumeration_guard(n: usize) -> Result<()> {
    if n > ENUMERATION_NODE_LIMIT {
        return Err(Error::InstanceTooLarge {
            size: (1u128) << n,
            limit: (1u128) << ENUMERATION_NODE_LIMIT,
        });
    }
    Ok(())
}

/// All upward-closed label vectors agreeing with every non-deferred
/// assertion of `a`. Empty exactly when `a` is a taxonomic contradiction.
pub fn compatibility_set(t: &Taxonomy, a: &ActionVector) -> Result<Vec<LabelVector>> {
    if a.len() != t.len() {
        return Err(Error::ActionTaxonomyMismatch {
            actions: a.len(),
            nodes: t.len(),
        });
    }
    enumeration_guard(t.len())?;
    let n = t.len();
    let edges: Vec<(usize, usize)> = t.edges().collect();
    let mut out = Vec::new();
    'outer: for mask in 0u32..(1u32 << n) {
        for v in 0..n {
            let y_v = mask & (1 << v) != 0;
            match a.get(v) {
                Action::Assert0 if y_v => continue 'outer,
                Action::Assert1 if !y_v => continue 'outer,
                _ => {}
            }
        }
        for &(p, c) in &edges {
            if mask & (1 << c) != 0 && mask & (1 << p) == 0 {
                continue 'outer;
            }
        }
        out.push(LabelVector::new((0..n).map(|v| mask & (1 << v) != 0).collect()));
    }
    Ok(out)
}

/// Result of the entailment check: `witness` is the first deferred node whose
/// value is already forced, with the entailed bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosureCheck {
    pub is_closed: bool,
    pub witness: Option<(usize, bool)>,
}

/// True iff every deferred node still has both label completions available.
pub fn is_deductively_closed(t: &Taxonomy, a: &ActionVector) -> Result<ClosureCheck> {
    let compat = compatibility_set(t, a)?;
    if compat.is_empty() {
        return Err(Error::UnsatisfiableInput);
    }
    for v in 0..t.len() {
        if !a.get(v).is_defer() {
            continue;
        }
        let mut seen = [false, false];
        for y in &compat {
            seen[y.get(v) as usize] = true;
        }
        if !(seen[0] && seen[1]) {
            return Ok(ClosureCheck {
                is_closed: false,
                witness: Some((v, seen[1])),
            });
        }
    }
    Ok(ClosureCheck {
        is_closed: true,
        witness: None,
    })
}

/// Fill deferred nodes from the designated expert's labels; asserted nodes
/// keep their asserted value. Expert vectors are rejected unless already
/// upward-closed.
pub fn complete_system_labels(
    t: &Taxonomy,
    a: &ActionVector,
    experts: &[LabelVector],
) -> Result<LabelVector> {
    if a.len() != t.len() {
        return Err(Error::ActionTaxonomyMismatch {
            actions: a.len(),
            nodes: t.len(),
        });
    }
    for (e, m) in experts.iter().enumerate() {
        if m.len() != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "expert {} labels cover {} nodes, taxonomy has {}",
                e + 1,
                m.len(),
                t.len()
            )));
        }
        if !m.is_upward_closed(t) {
            return Err(Error::ExpertVectorNotClosed(e + 1));
        }
    }
    let mut values = vec![false; t.len()];
    for v in 0..t.len() {
        values[v] = match a.get(v) {
            Action::Assert0 => false,
            Action::Assert1 => true,
            Action::Defer(e) => {
                if e == 0 || e as usize > experts.len() {
                    return Err(Error::InvalidExpertIndex {
                        index: e,
                        experts: experts.len() as u32,
                    });
                }
                experts[e as usize - 1].get(v)
            }
        };
    }
    Ok(LabelVector::new(values))
}
