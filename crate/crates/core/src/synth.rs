//! Reproducible synthetic taxonomies, hierarchy-consistent ground truth,
//! expert error models, primitive tables, and the named counterexample
//! scenarios used as golden fixtures.
//!
//! Every generator takes an explicit seed and drives its own ChaCha stream;
//! there is no global RNG state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::coherence::Action;
use crate::decode::RiskTable;
use crate::propagation::PrimitiveTable;
use crate::taxonomy::{parse_taxonomy, LabelVector, Taxonomy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tree by sequential parent attachment: node `n{i}` picks a uniform
/// parent among earlier nodes that still have fewer than `max_children`
/// children. Deterministic per seed.
pub fn random_tree(node_count: usize, max_children: usize, seed: u64) -> Taxonomy {
    assert!(node_count >= 1, "need at least one node");
    assert!(max_children >= 1, "need room for at least one child");
    let mut rng = rng(seed);
    let mut pairs: Vec<(String, String)> = vec![("n0".to_string(), "ROOT".to_string())];
    let mut child_count = vec![0usize; node_count];
    for i in 1..node_count {
        let eligible: Vec<usize> = (0..i).filter(|&p| child_count[p] < max_children).collect();
        let parent = eligible[rng.gen_range(0..eligible.len())];
        child_count[parent] += 1;
        pairs.push((format!("n{i}"), format!("n{parent}")));
    }
    parse_taxonomy(&pairs).expect("generated tree is always valid")
}

/// Marginal specification for top-down label sampling.
#[derive(Debug, Clone, Copy)]
pub struct LabelSpec {
    /// P(root = 1).
    pub root_rate: f64,
    /// P(child = 1 | parent = 1); children of negative parents stay 0.
    pub child_rate: f64,
}

/// Top-down sampling; upward-closed by construction.
pub fn sample_labels_with(t: &Taxonomy, spec: LabelSpec, rng: &mut impl Rng) -> LabelVector {
    let mut values = vec![false; t.len()];
    for &v in t.topo_order() {
        let rate = match t.parent(v) {
            None => spec.root_rate,
            Some(p) => {
                if values[p] {
                    spec.child_rate
                } else {
                    0.0
                }
            }
        };
        values[v] = rng.gen_bool(rate);
    }
    LabelVector::new(values)
}

pub fn sample_labels(t: &Taxonomy, spec: LabelSpec, seed: u64) -> LabelVector {
    sample_labels_with(t, spec, &mut rng(seed))
}

/// Per-expert, per-node correctness probabilities.
#[derive(Debug, Clone)]
pub struct ExpertModel {
    /// `q[expert][node]` = P(expert label = truth).
    pub q: Vec<Vec<f64>>,
}

impl ExpertModel {
    pub fn uniform(experts: usize, nodes: usize, q: f64) -> Self {
        ExpertModel {
            q: vec![vec![q; nodes]; experts],
        }
    }

    pub fn expert_count(&self) -> usize {
        self.q.len()
    }

    /// Sample each expert's labels nodewise via its correctness probability,
    /// then restore upward closure. Closure may raise effective parent
    /// correctness above the nominal q.
    pub fn sample_with(
        &self,
        t: &Taxonomy,
        truth: &LabelVector,
        rng: &mut impl Rng,
    ) -> Vec<LabelVector> {
        self.q
            .iter()
            .map(|per_node| {
                let values: Vec<bool> = (0..t.len())
                    .map(|v| {
                        let correct = rng.gen_bool(per_node[v].clamp(0.0, 1.0));
                        if correct {
                            truth.get(v)
                        } else {
                            !truth.get(v)
                        }
                    })
                    .collect();
                t.upward_close(&LabelVector::new(values))
            })
            .collect()
    }

    pub fn sample(&self, t: &Taxonomy, truth: &LabelVector, seed: u64) -> Vec<LabelVector> {
        self.sample_with(t, truth, &mut rng(seed))
    }
}

/// What the generated primitives should concentrate on.
#[derive(Debug, Clone, Copy)]
pub enum PrimitiveTarget<'a> {
    /// Logits centred on the node's true label.
    Labels(&'a LabelVector),
    /// Logits proportional to `(1−π, π, q₁..q_E)`.
    Scores { pi: &'a [f64], q: &'a [Vec<f64>] },
}

/// Softmax of noisy logits centred on the target; `sharpness` scales the
/// target term while the noise keeps a fixed small scale.
pub fn make_primitives(
    t: &Taxonomy,
    target: PrimitiveTarget,
    sharpness: f64,
    seed: u64,
) -> PrimitiveTable {
    let mut rng = rng(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let arity = match target {
        PrimitiveTarget::Labels(_) => 3,
        PrimitiveTarget::Scores { q, .. } => 2 + q.len(),
    };
    let mut logits = Vec::with_capacity(t.len());
    for v in 0..t.len() {
        let mut row = vec![0.0f64; arity];
        match target {
            PrimitiveTarget::Labels(y) => {
                row[y.get(v) as usize] = sharpness;
            }
            PrimitiveTarget::Scores { pi, q } => {
                row[0] = sharpness * (1.0 - pi[v]);
                row[1] = sharpness * pi[v];
                for (e, per_node) in q.iter().enumerate() {
                    row[2 + e] = sharpness * per_node[v];
                }
            }
        }
        for entry in &mut row {
            *entry += noise.sample(&mut rng);
        }
        logits.push(row);
    }
    PrimitiveTable::from_logits(&logits)
}

/// Uniformly random primitive rows (normalised exponentials), handy for
/// oracle-equivalence sweeps.
pub fn random_primitives(nodes: usize, arity: usize, seed: u64) -> PrimitiveTable {
    let mut rng = rng(seed);
    let rows: Vec<Vec<f64>> = (0..nodes)
        .map(|_| {
            let raw: Vec<f64> = (0..arity).map(|_| -rng.gen::<f64>().ln()).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    PrimitiveTable::new(rows).expect("normalised rows are valid")
}

/// Random risk rows in `[0, 1]`.
pub fn random_risks(nodes: usize, arity: usize, seed: u64) -> RiskTable {
    let mut rng = rng(seed);
    let rows: Vec<Vec<f64>> = (0..nodes)
        .map(|_| (0..arity).map(|_| rng.gen::<f64>()).collect())
        .collect();
    RiskTable::new(rows).expect("random risks are valid")
}

/// Random per-node logit rows for gradient checks.
pub fn random_logits(nodes: usize, arity: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng(seed);
    (0..nodes)
        .map(|_| {
            (0..arity)
                .map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * scale)
                .collect()
        })
        .collect()
}

/// Joint distribution over a parent–child label pair; P(0,1) is always 0.
#[derive(Debug, Clone, Copy)]
pub struct JointTable {
    pub p11: f64,
    pub p10: f64,
    pub p00: f64,
}

impl JointTable {
    pub fn total(&self) -> f64 {
        self.p11 + self.p10 + self.p00
    }

    pub fn parent_marginal(&self) -> f64 {
        self.p11 + self.p10
    }

    pub fn child_marginal(&self) -> f64 {
        self.p11
    }
}

/// A named two-node fixture with calibrated scores and expected decodes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub taxonomy: Taxonomy,
    /// P(Y_v = 1) per node, parent first.
    pub pi: Vec<f64>,
    /// P(M_v = Y_v) per node.
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    pub weight: Vec<f64>,
    pub joint: Option<JointTable>,
    /// Actions the independent nodewise rule picks.
    pub expected_nodewise: Option<Vec<Action>>,
    /// Minimum-risk coherent actions with their total risk.
    pub expected_bayes: Option<(Vec<Action>, f64)>,
    /// Best coherent total risk when the parent is forced to defer.
    pub defer_parent_risk: Option<f64>,
}

impl Scenario {
    pub fn risks(&self) -> RiskTable {
        let errors: Vec<Vec<f64>> = self.q.iter().map(|&qv| vec![1.0 - qv]).collect();
        let costs: Vec<Vec<f64>> = self.lambda.iter().map(|&l| vec![l]).collect();
        RiskTable::from_components(&self.weight, &self.pi, &errors, &costs)
            .expect("scenario risks are valid")
    }

    /// Primitive rows proportional to `(1−π, π, q)`, whose per-node argmax
    /// reproduces the zero-cost nodewise rule.
    pub fn primitives(&self) -> PrimitiveTable {
        let rows: Vec<Vec<f64>> = self
            .pi
            .iter()
            .zip(&self.q)
            .map(|(&pi, &q)| {
                let z = 1.0 + q;
                vec![(1.0 - pi) / z, pi / z, q / z]
            })
            .collect();
        PrimitiveTable::new(rows).expect("scenario rows are normalised")
    }

    /// Render the fixture in the interchange formats, ready for the CLI:
    /// `(taxonomy, primitives, risks)`.
    pub fn dump(&self) -> (String, String, String) {
        let contract = crate::coherence::Contract::selective_exclusion();
        let id = self.name.to_string();
        let taxonomy = crate::io::taxonomy_to_csv(&self.taxonomy);
        let primitives = crate::io::primitives_to_csv(
            &self.taxonomy,
            &contract,
            &[(id.clone(), self.primitives())],
        );
        let risks = risks_csv(&self.taxonomy, &id, &self.risks());
        (taxonomy, primitives, risks)
    }
}

fn risks_csv(t: &Taxonomy, id: &str, risks: &RiskTable) -> String {
    let mut out = String::from("instance_id,node,r0,r1,rd\n");
    for v in 0..t.len() {
        let row: Vec<String> = risks.row(v).iter().map(|r| format!("{r}")).collect();
        out.push_str(&format!("{id},{},{}\n", t.name(v), row.join(",")));
    }
    out
}

fn two_node_chain() -> Taxonomy {
    parse_taxonomy(&[("parent", "ROOT"), ("child", "parent")]).unwrap()
}

/// The named two-node counterexample constructions, frozen as fixtures.
pub fn counterexample_scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "delegation_violation",
            taxonomy: two_node_chain(),
            pi: vec![0.70, 0.60],
            q: vec![0.80, 0.40],
            lambda: vec![0.0, 0.0],
            weight: vec![1.0, 1.0],
            joint: Some(JointTable {
                p11: 0.60,
                p10: 0.10,
                p00: 0.30,
            }),
            expected_nodewise: Some(vec![Action::Defer(1), Action::Assert1]),
            expected_bayes: None,
            defer_parent_risk: None,
        },
        Scenario {
            name: "deductive_defect",
            taxonomy: two_node_chain(),
            pi: vec![0.20, 0.10],
            q: vec![0.10, 0.95],
            lambda: vec![0.0, 0.0],
            weight: vec![1.0, 1.0],
            joint: Some(JointTable {
                p11: 0.10,
                p10: 0.10,
                p00: 0.80,
            }),
            expected_nodewise: Some(vec![Action::Assert0, Action::Defer(1)]),
            expected_bayes: None,
            defer_parent_risk: None,
        },
        Scenario {
            name: "option_value",
            taxonomy: two_node_chain(),
            pi: vec![0.9, 0.9],
            q: vec![1.0, 0.6],
            lambda: vec![0.05, 0.05],
            weight: vec![1.0, 1.0],
            joint: Some(JointTable {
                p11: 0.9,
                p10: 0.0,
                p00: 0.1,
            }),
            expected_nodewise: None,
            expected_bayes: Some((vec![Action::Assert1, Action::Assert1], 0.20)),
            defer_parent_risk: Some(0.50),
        },
    ]
}

pub fn scenario(name: &str) -> Option<Scenario> {
    counterexample_scenarios().into_iter().find(|s| s.name == name)
}
