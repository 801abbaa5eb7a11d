//! Brute-force reference implementations used only by tests.
//!
//! Everything here is deliberately written from the definitions — exhaustive
//! enumeration and central differences — and shares no logic with the
//! dynamic programs it certifies. Enumeration walks action vectors in
//! lexicographic order over the topological node order with actions ordered
//! `[0, 1, ⊥₁..⊥_E]`, which reproduces the decoders' documented tie-break.

#![forbid(unsafe_code)]

use taxdefer::coherence::{Action, ActionVector, Contract, ContractKind};
use taxdefer::taxonomy::Taxonomy;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration space of {size} states exceeds the {limit} guard")]
    InstanceTooLarge { size: u128, limit: u128 },

    #[error("no action vector satisfies the constraints")]
    EmptyFeasibleSet,

    #[error("function value is not finite near the evaluation point")]
    NonFiniteValue,
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Guard on the number of enumerated states.
pub const STATE_LIMIT: u128 = 1_000_000;

/// Admissibility of a child action given a parent action, written straight
/// from the contract definitions.
fn contract_allows(contract: &Contract, parent: Action, child: Action) -> bool {
    match parent {
        Action::Assert0 => child == Action::Assert0,
        Action::Assert1 => true,
        Action::Defer(p) => match contract.kind() {
            ContractKind::SelectiveExclusion => child != Action::Assert1,
            ContractKind::SubtreeHandoff => child.is_defer(),
            ContractKind::MultiExpert => match child {
                Action::Assert0 => true,
                Action::Assert1 => false,
                Action::Defer(c) => !contract.same_expert() || c == p,
            },
        },
    }
}

/// True iff every edge (for DAGs, every parent of every node) admits the
/// child action.
pub fn is_coherent(t: &Taxonomy, contract: &Contract, a: &ActionVector) -> bool {
    (0..t.len()).all(|v| {
        t.parents(v)
            .iter()
            .all(|&p| contract_allows(contract, a.get(p), a.get(v)))
    })
}

fn guard(t: &Taxonomy, contract: &Contract) -> Result<u128> {
    let size = (contract.arity() as u128)
        .checked_pow(t.len() as u32)
        .unwrap_or(u128::MAX);
    if size > STATE_LIMIT {
        return Err(OracleError::InstanceTooLarge {
            size,
            limit: STATE_LIMIT,
        });
    }
    Ok(size)
}

/// Visit every action vector once, lexicographically over the topological
/// node order.
fn for_each_vector<F: FnMut(&ActionVector)>(
    t: &Taxonomy,
    contract: &Contract,
    mut visit: F,
) -> Result<()> {
    guard(t, contract)?;
    let n = t.len();
    let arity = contract.arity();
    let topo = t.topo_order();
    let mut digits = vec![0usize; n];
    let mut actions = vec![Action::Assert0; n];
    loop {
        for (pos, &digit) in digits.iter().enumerate() {
            actions[topo[pos]] = Action::from_index(digit);
        }
        let vector = ActionVector::new(actions.clone());
        visit(&vector);
        // odometer: the last topo position is least significant
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < arity {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Filter of all action vectors by per-edge contract admissibility (for
/// DAGs: the intersection over all parents).
pub fn enumerate_coherent_set(t: &Taxonomy, contract: &Contract) -> Result<Vec<ActionVector>> {
    let mut out = Vec::new();
    for_each_vector(t, contract, |a| {
        if is_coherent(t, contract, a) {
            out.push(a.clone());
        }
    })?;
    Ok(out)
}

/// Exhaustive optimum of an arbitrary vector objective over the coherent set,
/// optionally restricted by a per-node allowed-action mask. The first
/// enumerated optimum wins, matching the decoders' tie-break.
pub fn brute_map_by<F: FnMut(&ActionVector) -> f64>(
    t: &Taxonomy,
    contract: &Contract,
    allowed: Option<&[Vec<bool>]>,
    mut objective: F,
    maximise: bool,
) -> Result<(ActionVector, f64)> {
    let mut best: Option<(ActionVector, f64)> = None;
    for_each_vector(t, contract, |a| {
        if !is_coherent(t, contract, a) {
            return;
        }
        if let Some(masks) = allowed {
            if (0..t.len()).any(|v| !masks[v][a.get(v).index()]) {
                return;
            }
        }
        let value = objective(a);
        let better = match &best {
            None => true,
            Some((_, incumbent)) => {
                if maximise {
                    value > *incumbent
                } else {
                    value < *incumbent
                }
            }
        };
        if better {
            best = Some((a.clone(), value));
        }
    })?;
    best.ok_or(OracleError::EmptyFeasibleSet)
}

/// Exhaustive argmax (or argmin) of a flat per-node additive score.
pub fn brute_map(
    t: &Taxonomy,
    contract: &Contract,
    scores: &[Vec<f64>],
    allowed: Option<&[Vec<bool>]>,
    maximise: bool,
) -> Result<(ActionVector, f64)> {
    brute_map_by(
        t,
        contract,
        allowed,
        |a| {
            a.actions
                .iter()
                .enumerate()
                .map(|(v, act)| scores[v][act.index()])
                .sum()
        },
        maximise,
    )
}

/// Central-difference gradient estimate of a scalar function.
pub fn finite_difference<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    point: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let plus = f(&probe);
        probe[i] = point[i] - step;
        let minus = f(&probe);
        probe[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(OracleError::NonFiniteValue);
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
