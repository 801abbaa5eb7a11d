//! Staged objectives and exact analytic gradients through the propagation
//! recursion, at toy scale and without any network.
//!
//! Stage one scores the defer-aware cross-entropy on local primitives; the
//! recursive objective scores the same loss on propagated marginals, so
//! descendant losses reach ancestor logits through the kernel entries
//! (including the quotient rule through the deferred-parent renormaliser).

use crate::coherence::{Contract, ContractKind};
use crate::error::{Error, Result};
use crate::propagation::{build_kernel, softmax, PrimitiveTable};
use crate::taxonomy::{LabelVector, Taxonomy};

/// Free per-node logit vectors; primitives are their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitParameters {
    pub theta: Vec<Vec<f64>>,
}

impl LogitParameters {
    pub fn new(theta: Vec<Vec<f64>>) -> Self {
        Self { theta }
    }

    pub fn arity(&self) -> usize {
        self.theta.first().map(Vec::len).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn primitives(&self) -> PrimitiveTable {
        PrimitiveTable::from_logits(&self.theta)
    }

    /// Flatten node-major for finite-difference probes.
    pub fn to_flat(&self) -> Vec<f64> {
        self.theta.iter().flatten().copied().collect()
    }

    pub fn from_flat(nodes: usize, arity: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), nodes * arity);
        Self {
            theta: flat.chunks(arity).map(|c| c.to_vec()).collect(),
        }
    }
}

/// Classification target for one node: a hard label or a soft score used as
/// `(1−s, s)` weights on the absent/present actions.
#[derive(Debug, Clone, Copy)]
pub enum ClassTarget {
    Hard(bool),
    Soft(f64),
}

/// One labelled instance: hard labels, per-expert labels, and optional soft
/// scores (monotone along edges when present).
#[derive(Debug, Clone)]
pub struct SupervisedInstance {
    pub labels: LabelVector,
    pub experts: Vec<LabelVector>,
    pub soft: Option<Vec<f64>>,
}

impl SupervisedInstance {
    pub fn new(labels: LabelVector, experts: Vec<LabelVector>) -> Self {
        Self {
            labels,
            experts,
            soft: None,
        }
    }

    fn target(&self, v: usize) -> ClassTarget {
        match &self.soft {
            Some(s) => ClassTarget::Soft(s[v]),
            None => ClassTarget::Hard(self.labels.get(v)),
        }
    }

    fn expert_correct(&self, v: usize) -> Vec<bool> {
        self.experts
            .iter()
            .map(|m| m.get(v) == self.labels.get(v))
            .collect()
    }
}

/// Defer-aware cross-entropy on one action distribution:
/// `−log p(y) − Σ_e 1[m_e = y] · log p(⊥_e)`.
pub fn defer_loss(dist: &[f64], target: ClassTarget, expert_correct: &[bool]) -> f64 {
    let mut loss = match target {
        ClassTarget::Hard(y) => -dist[y as usize].ln(),
        ClassTarget::Soft(s) => -(1.0 - s) * dist[0].ln() - s * dist[1].ln(),
    };
    for (e, &correct) in expert_correct.iter().enumerate() {
        if correct {
            loss -= dist[2 + e].ln();
        }
    }
    loss
}

/// Gradient of [`defer_loss`] with respect to the distribution entries.
pub fn defer_loss_grad(dist: &[f64], target: ClassTarget, expert_correct: &[bool]) -> Vec<f64> {
    let mut grad = vec![0.0; dist.len()];
    match target {
        ClassTarget::Hard(y) => grad[y as usize] = -1.0 / dist[y as usize],
        ClassTarget::Soft(s) => {
            grad[0] = -(1.0 - s) / dist[0];
            grad[1] = -s / dist[1];
        }
    }
    for (e, &correct) in expert_correct.iter().enumerate() {
        if correct {
            grad[2 + e] = -1.0 / dist[2 + e];
        }
    }
    grad
}

/// Pull a gradient on softmax outputs back to the logits:
/// `dθ_a = η_a (dη_a − Σ_b η_b dη_b)`.
fn softmax_backward(eta: &[f64], d_eta: &[f64]) -> Vec<f64> {
    let dot: f64 = eta.iter().zip(d_eta).map(|(&p, &g)| p * g).sum();
    eta.iter()
        .zip(d_eta)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}

/// Pull a gradient on the kernel entries back to the primitive row.
fn kernel_backward(contract: &Contract, eta: &[f64], d_kernel: &[Vec<f64>]) -> Vec<f64> {
    let arity = contract.arity();
    let mut d_eta = vec![0.0; arity];
    // asserted-present row is the primitive itself
    for j in 0..arity {
        d_eta[j] += d_kernel[1][j];
    }
    match contract.kind() {
        ContractKind::SelectiveExclusion => {
            let denom = eta[0] + eta[2];
            if denom > 0.0 {
                // row ⊥ = [α, 0, 1−α]; quotient rule through α
                let d_alpha = d_kernel[2][0] - d_kernel[2][2];
                d_eta[0] += d_alpha * eta[2] / (denom * denom);
                d_eta[2] += d_alpha * (-eta[0]) / (denom * denom);
            }
        }
        ContractKind::SubtreeHandoff => {}
        ContractKind::MultiExpert => {
            for parent in 2..arity {
                let admissible: Vec<usize> = if contract.same_expert() {
                    vec![0, parent]
                } else {
                    std::iter::once(0).chain(2..arity).collect()
                };
                let z: f64 = admissible.iter().map(|&a| eta[a]).sum();
                if z <= 0.0 {
                    continue;
                }
                let weighted: f64 = admissible
                    .iter()
                    .map(|&a| d_kernel[parent][a] * eta[a])
                    .sum();
                for &b in &admissible {
                    d_eta[b] += d_kernel[parent][b] / z - weighted / (z * z);
                }
            }
        }
    }
    d_eta
}

fn check_batch(nodes: usize, arity: usize, batch: &[SupervisedInstance]) -> Result<()> {
    for (i, inst) in batch.iter().enumerate() {
        if inst.labels.len() != nodes {
            return Err(Error::ShapeMismatch(format!(
                "instance {i} labels cover {} node(s), parameters have {nodes}",
                inst.labels.len()
            )));
        }
        if inst.experts.len() != arity - 2 {
            return Err(Error::ShapeMismatch(format!(
                "instance {i} has {} expert vector(s), the action set expects {}",
                inst.experts.len(),
                arity - 2
            )));
        }
        for m in &inst.experts {
            if m.len() != nodes {
                return Err(Error::ShapeMismatch(format!(
                    "instance {i} expert labels cover {} node(s), parameters have {nodes}",
                    m.len()
                )));
            }
        }
        if let Some(s) = &inst.soft {
            if s.len() != nodes {
                return Err(Error::ShapeMismatch(format!(
                    "instance {i} soft scores cover {} node(s), parameters have {nodes}",
                    s.len()
                )));
            }
        }
    }
    Ok(())
}

/// Sum of defer losses on local primitives over nodes and instances, with
/// its exact gradient in logit space.
pub fn stage_one_objective(
    theta: &LogitParameters,
    batch: &[SupervisedInstance],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let arity = theta.arity();
    check_batch(theta.len(), arity, batch)?;
    let mut total = 0.0;
    let mut grad = vec![vec![0.0; arity]; theta.len()];
    for inst in batch {
        for v in 0..theta.len() {
            let eta = softmax(&theta.theta[v]);
            let correct = inst.expert_correct(v);
            total += defer_loss(&eta, inst.target(v), &correct);
            let d_eta = defer_loss_grad(&eta, inst.target(v), &correct);
            let d_theta = softmax_backward(&eta, &d_eta);
            for a in 0..arity {
                grad[v][a] += d_theta[a];
            }
        }
    }
    Ok((total, grad))
}

/// Sum of defer losses on propagated marginals, with the exact gradient
/// backpropagated through every kernel. `node_weights` scales each node's
/// loss term (1 everywhere for the plain objective).
pub fn recursive_objective_weighted(
    t: &Taxonomy,
    contract: &Contract,
    theta: &LogitParameters,
    batch: &[SupervisedInstance],
    node_weights: &[f64],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if !t.is_tree_or_forest() {
        return Err(Error::DagUnsupported);
    }
    if theta.len() != t.len() || node_weights.len() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "parameters cover {} node(s), weights {}, taxonomy has {}",
            theta.len(),
            node_weights.len(),
            t.len()
        )));
    }
    if theta.arity() != contract.arity() {
        return Err(Error::ShapeMismatch(format!(
            "logit arity {} does not match contract arity {}",
            theta.arity(),
            contract.arity()
        )));
    }
    check_batch(theta.len(), contract.arity(), batch)?;

    let arity = contract.arity();
    let n = t.len();
    let eta: Vec<Vec<f64>> = theta.theta.iter().map(|row| softmax(row)).collect();
    let kernels: Vec<_> = (0..n)
        .map(|v| build_kernel(contract, &eta[v]))
        .collect();

    let mut total = 0.0;
    let mut grad = vec![vec![0.0; arity]; n];

    for inst in batch {
        // forward: marginals in topological order
        let mut mu = vec![Vec::new(); n];
        for &v in t.topo_order() {
            mu[v] = match t.parent(v) {
                None => eta[v].clone(),
                Some(p) => {
                    let mut row = vec![0.0; arity];
                    for i in 0..arity {
                        let mass = mu[p][i];
                        if mass == 0.0 {
                            continue;
                        }
                        let krow = kernels[v].row(i);
                        for j in 0..arity {
                            row[j] += mass * krow[j];
                        }
                    }
                    row
                }
            };
        }

        // loss and seed gradients on the marginals
        let mut d_mu = vec![vec![0.0; arity]; n];
        for v in 0..n {
            let w = node_weights[v];
            if w == 0.0 {
                continue;
            }
            let correct = inst.expert_correct(v);
            total += w * defer_loss(&mu[v], inst.target(v), &correct);
            let g = defer_loss_grad(&mu[v], inst.target(v), &correct);
            for a in 0..arity {
                d_mu[v][a] += w * g[a];
            }
        }

        // backward: children before parents
        let mut d_eta = vec![vec![0.0; arity]; n];
        for &v in t.topo_order().iter().rev() {
            match t.parent(v) {
                None => {
                    for a in 0..arity {
                        d_eta[v][a] += d_mu[v][a];
                    }
                }
                Some(p) => {
                    let mut d_kernel = vec![vec![0.0; arity]; arity];
                    for i in 0..arity {
                        let krow = kernels[v].row(i);
                        let mut back = 0.0;
                        for j in 0..arity {
                            back += d_mu[v][j] * krow[j];
                            d_kernel[i][j] = mu[p][i] * d_mu[v][j];
                        }
                        d_mu[p][i] += back;
                    }
                    let pulled = kernel_backward(contract, &eta[v], &d_kernel);
                    for a in 0..arity {
                        d_eta[v][a] += pulled[a];
                    }
                }
            }
        }

        for v in 0..n {
            let d_theta = softmax_backward(&eta[v], &d_eta[v]);
            for a in 0..arity {
                grad[v][a] += d_theta[a];
            }
        }
    }
    Ok((total, grad))
}

/// Plain recursive objective: unit weight on every node.
pub fn recursive_objective(
    t: &Taxonomy,
    contract: &Contract,
    theta: &LogitParameters,
    batch: &[SupervisedInstance],
) -> Result<(f64, Vec<Vec<f64>>)> {
    recursive_objective_weighted(t, contract, theta, batch, &vec![1.0; t.len()])
}

/// Allowed consecutive objective rises before descent is declared divergent.
pub const MAX_CONSECUTIVE_RISES: usize = 10;

/// Fixed-step gradient descent on the recursive objective. Returns the
/// objective trajectory (length `steps + 1`) and the final parameters.
pub fn gradient_descent_demo(
    t: &Taxonomy,
    contract: &Contract,
    theta0: &LogitParameters,
    batch: &[SupervisedInstance],
    steps: usize,
    rate: f64,
) -> Result<(Vec<f64>, LogitParameters)> {
    let mut theta = theta0.clone();
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut rises = 0usize;
    let (mut value, mut grad) = recursive_objective(t, contract, &theta, batch)?;
    trajectory.push(value);
    for step in 0..steps {
        for (row, grow) in theta.theta.iter_mut().zip(&grad) {
            for (p, g) in row.iter_mut().zip(grow) {
                *p -= rate * g;
            }
        }
        let (next, next_grad) = recursive_objective(t, contract, &theta, batch)?;
        if next > value {
            rises += 1;
            if rises > MAX_CONSECUTIVE_RISES {
                return Err(Error::DivergenceDetected {
                    step,
                    max_rises: MAX_CONSECUTIVE_RISES,
                });
            }
        } else {
            rises = 0;
        }
        value = next;
        grad = next_grad;
        trajectory.push(value);
    }
    Ok((trajectory, theta))
}
