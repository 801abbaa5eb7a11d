//! Taxonomic belief propagation over action spaces.
//!
//! Local primitive distributions are pushed top-down through per-edge
//! transition kernels whose structural zeros remove contract-forbidden
//! parent–child action pairs, yielding marginals with coherent support and a
//! joint action model that multiplies along edges.

use crate::coherence::{ActionVector, Contract, ContractKind};
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

/// Lower clamp applied to primitive entries at intake, matching the
/// decode-time probability floor.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Tolerance for row-sum validation.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Per-node probability rows over the action set, ordered `[0, 1, ⊥₁..⊥_E]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveTable {
    arity: usize,
    rows: Vec<Vec<f64>>,
}

impl PrimitiveTable {
    /// Validate rows (nonnegative, summing to one within tolerance), then
    /// clamp every entry up to [`PROBABILITY_FLOOR`] and renormalise.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let arity = rows.first().map(Vec::len).unwrap_or(0);
        if arity < 3 {
            return Err(Error::InvalidDistribution {
                node: 0,
                reason: format!("action rows need at least 3 entries, got {arity}"),
            });
        }
        let mut clamped = Vec::with_capacity(rows.len());
        for (node, row) in rows.into_iter().enumerate() {
            if row.len() != arity {
                return Err(Error::InvalidDistribution {
                    node,
                    reason: format!("row has {} entries, expected {arity}", row.len()),
                });
            }
            let mut sum = 0.0;
            for &p in &row {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidDistribution {
                        node,
                        reason: format!("entry {p} is not a probability"),
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidDistribution {
                    node,
                    reason: format!("row sums to {sum}, expected 1"),
                });
            }
            let mut row: Vec<f64> = row
                .into_iter()
                .map(|p| p.max(PROBABILITY_FLOOR))
                .collect();
            let total: f64 = row.iter().sum();
            for p in &mut row {
                // renormalise, then restore the floor; the re-clamp adds only
                // O(floor²) mass, far inside the row-sum tolerance
                *p = (*p / total).max(PROBABILITY_FLOOR);
            }
            clamped.push(row);
        }
        Ok(PrimitiveTable {
            arity,
            rows: clamped,
        })
    }

    /// Derive primitives from per-node logits via a numerically stable
    /// softmax. Softmax outputs are strictly positive, so no clamp is
    /// applied and gradients through the rows stay exact.
    pub fn from_logits(logits: &[Vec<f64>]) -> Self {
        let arity = logits.first().map(Vec::len).unwrap_or(0);
        let rows = logits.iter().map(|row| softmax(row)).collect();
        PrimitiveTable { arity, rows }
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

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Share of a deferred parent's admissible mass that lands on child absence:
/// `η(0) / (η(0) + η(⊥))`, with the convention that it is 1 when the
/// admissible mass vanishes. The pair `(α, 1−α)` is the reverse-KL projection
/// of `η` onto the face excluding the present action.
pub fn alpha(eta: &[f64]) -> f64 {
    debug_assert_eq!(eta.len(), 3);
    let denom = eta[0] + eta[2];
    if denom == 0.0 {
        1.0
    } else {
        (eta[0] / denom).clamp(0.0, 1.0)
    }
}

/// Row-stochastic transition matrix over the action set; rows indexed by the
/// parent action, columns by the child action.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    arity: usize,
    data: Vec<f64>,
}

impl TransitionKernel {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn get(&self, parent: usize, child: usize) -> f64 {
        self.data[parent * self.arity + child]
    }

    pub fn row(&self, parent: usize) -> &[f64] {
        &self.data[parent * self.arity..(parent + 1) * self.arity]
    }
}

/// Build the contract's transition kernel from one primitive row.
///
/// Selective exclusion renormalises the deferred-parent row onto `{0, ⊥}`;
/// subtree handoff makes that row deterministic on `⊥`; the multi-expert
/// kernel renormalises over `{0, ⊥₁..⊥_E}` with a one-hot-on-0 fallback when
/// the admissible mass is zero.
pub fn build_kernel(contract: &Contract, eta: &[f64]) -> TransitionKernel {
    let arity = contract.arity();
    debug_assert_eq!(eta.len(), arity);
    let mut data = vec![0.0; arity * arity];

    // parent asserted absent: child forced absent
    data[0] = 1.0;
    // parent asserted present: child follows its primitive
    data[arity..2 * arity].copy_from_slice(eta);

    match contract.kind() {
        ContractKind::SelectiveExclusion => {
            let a = alpha(eta);
            data[2 * arity] = a;
            data[2 * arity + 2] = 1.0 - a;
        }
        ContractKind::SubtreeHandoff => {
            data[2 * arity + 2] = 1.0;
        }
        ContractKind::MultiExpert => {
            for parent in 2..arity {
                let row = &mut data[parent * arity..(parent + 1) * arity];
                let admissible: Vec<usize> = if contract.same_expert() {
                    vec![0, parent]
                } else {
                    std::iter::once(0).chain(2..arity).collect()
                };
                let z: f64 = admissible.iter().map(|&a| eta[a]).sum();
                if z == 0.0 {
                    row[0] = 1.0;
                } else {
                    for &a in &admissible {
                        row[a] = eta[a] / z;
                    }
                }
            }
        }
    }
    TransitionKernel { arity, data }
}

/// Unconditional per-node marginals over the action set.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    arity: usize,
    rows: Vec<Vec<f64>>,
}

impl MarginalTable {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.rows[v]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// One top-down pass: roots copy their primitives, every other node is its
/// parent's marginal pushed through the edge kernel.
pub fn propagate(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
) -> Result<MarginalTable> {
    if !t.is_tree_or_forest() {
        return Err(Error::DagUnsupported);
    }
    check_table(t, contract, primitives)?;

    let arity = contract.arity();
    let mut rows = vec![Vec::new(); t.len()];
    for &v in t.topo_order() {
        match t.parent(v) {
            None => rows[v] = primitives.row(v).to_vec(),
            Some(p) => {
                let kernel = build_kernel(contract, primitives.row(v));
                let parent_row = &rows[p];
                let mut mu = vec![0.0; arity];
                for (i, &mass) in parent_row.iter().enumerate() {
                    let krow = kernel.row(i);
                    for j in 0..arity {
                        mu[j] += mass * krow[j];
                    }
                }
                rows[v] = mu;
            }
        }
    }
    Ok(MarginalTable { arity, rows })
}

/// Probability of a full action vector under the joint model: the product of
/// root primitives and per-edge kernel entries. Exactly zero outside the
/// contract's coherent set.
pub fn joint_probability(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
    a: &ActionVector,
) -> Result<f64> {
    if !t.is_tree_or_forest() {
        return Err(Error::DagUnsupported);
    }
    check_table(t, contract, primitives)?;
    if a.len() != t.len() {
        return Err(Error::ActionTaxonomyMismatch {
            actions: a.len(),
            nodes: t.len(),
        });
    }
    for &act in &a.actions {
        contract.validate_action(act)?;
    }

    let mut p = 1.0;
    for v in 0..t.len() {
        match t.parent(v) {
            None => p *= primitives.row(v)[a.get(v).index()],
            Some(parent) => {
                let kernel = build_kernel(contract, primitives.row(v));
                p *= kernel.get(a.get(parent).index(), a.get(v).index());
            }
        }
    }
    Ok(p)
}

pub(crate) fn check_table(
    t: &Taxonomy,
    contract: &Contract,
    primitives: &PrimitiveTable,
) -> Result<()> {
    if primitives.len() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "primitive table covers {} node(s), taxonomy has {}",
            primitives.len(),
            t.len()
        )));
    }
    if primitives.arity() != contract.arity() {
        return Err(Error::ShapeMismatch(format!(
            "primitive arity {} does not match contract arity {}",
            primitives.arity(),
            contract.arity()
        )));
    }
    Ok(())
}
