//! Acceptance suite: one test per release criterion, each printing a PASS
//! line (run with `--nocapture` to see them). Every tolerance is pinned in
//! code next to its assertion.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;
use taxdefer::coherence::{audit, Action, Contract};
use taxdefer::decode::{
    action_scores, bayes_coherent_decode, budgeted_decode, feasibility_closure,
    nodewise_bayes_baseline, project_map, tbp_map_decode, RiskTable,
};
use taxdefer::eval::{run_sweep, rank_and_select, EvalInstance, EvaluationSet, Method};
use taxdefer::loss::{
    recursive_objective, recursive_objective_weighted, stage_one_objective, LogitParameters,
    SupervisedInstance,
};
use taxdefer::propagation::{alpha, build_kernel, joint_probability, propagate};
use taxdefer::synth::{self, LabelSpec, PrimitiveTarget};
use taxdefer::taxonomy::{parse_taxonomy, LabelVector, Taxonomy};
use taxdefer_oracle as oracle;

fn assert_runtime(start: Instant, budget: Duration, criterion: &str) {
    let elapsed = start.elapsed();
    assert!(
        elapsed < budget,
        "{criterion} exceeded its runtime budget: {elapsed:?} > {budget:?}"
    );
}

#[test]
fn criterion_01_counterexample_goldens() {
    let start = Instant::now();
    let se = Contract::selective_exclusion();

    let delegation = synth::scenario("delegation_violation").unwrap();
    let (actions, report) =
        nodewise_bayes_baseline(&delegation.taxonomy, &se, &delegation.risks()).unwrap();
    assert_eq!(actions.actions, vec![Action::Defer(1), Action::Assert1]);
    assert_eq!(report.edge_counts.delegation, 1);

    let deductive = synth::scenario("deductive_defect").unwrap();
    let (actions, report) =
        nodewise_bayes_baseline(&deductive.taxonomy, &se, &deductive.risks()).unwrap();
    assert_eq!(actions.actions, vec![Action::Assert0, Action::Defer(1)]);
    assert_eq!(report.edge_counts.deductive, 1);

    // the rule cannot produce (0, 1) whenever pi_c <= pi_p
    let chain = parse_taxonomy(&[("p", "ROOT"), ("c", "p")]).unwrap();
    let mut rng = synth::rng(0x01);
    for _ in 0..10_000 {
        let pi_p: f64 = rng.gen();
        let pi_c: f64 = rng.gen::<f64>() * pi_p;
        let q_p: f64 = rng.gen();
        let q_c: f64 = rng.gen();
        let risks = RiskTable::from_pi_q(&[pi_p, pi_c], &[q_p, q_c]).unwrap();
        let (a, _) = nodewise_bayes_baseline(&chain, &se, &risks).unwrap();
        assert!(
            !(a.get(0) == Action::Assert0 && a.get(1) == Action::Assert1),
            "pi=({pi_p},{pi_c}) q=({q_p},{q_c})"
        );
    }

    assert_runtime(start, Duration::from_secs(1), "criterion 1");
    println!("PASS criterion 1: counterexample goldens and the impossible (0,1) scan");
}

#[test]
fn criterion_02_option_value_golden() {
    let start = Instant::now();
    let se = Contract::selective_exclusion();
    let scenario = synth::scenario("option_value").unwrap();
    let risks = scenario.risks();

    let (actions, total) = bayes_coherent_decode(&scenario.taxonomy, &se, &risks).unwrap();
    assert_eq!(actions.actions, vec![Action::Assert1, Action::Assert1]);
    assert!((total - 0.20).abs() <= 1e-12, "risk {total}");

    // best coherent vector with the parent forced to defer
    let rows: Vec<Vec<f64>> = (0..2).map(|v| risks.row(v).to_vec()).collect();
    let allowed = vec![
        vec![false, false, true],
        vec![true, true, true],
    ];
    let (_, defer_branch) =
        oracle::brute_map(&scenario.taxonomy, &se, &rows, Some(&allowed), false).unwrap();
    assert!((defer_branch - 0.50).abs() <= 1e-12, "risk {defer_branch}");

    assert_runtime(start, Duration::from_secs(1), "criterion 2");
    println!("PASS criterion 2: option-value golden (0.20 beats the 0.50 defer branch)");
}

#[test]
fn criterion_03_oracle_equivalence() {
    let start = Instant::now();
    let se = Contract::selective_exclusion();
    let mut rng = synth::rng(0x03);
    let cases = 200u64;

    for case in 0..cases {
        let n = 2 + (case % 9) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let prims = synth::random_primitives(n, 3, rng.gen());
        let scores: Vec<Vec<f64>> = prims
            .rows()
            .iter()
            .map(|r| r.iter().map(|&p| p.ln()).collect())
            .collect();

        // full coherent projection
        let (dp_a, dp_s) = project_map(&t, &se, &prims).unwrap();
        let (br_a, br_s) = oracle::brute_map(&t, &se, &scores, None, true).unwrap();
        assert_eq!(dp_s, br_s);
        assert_eq!(dp_a, br_a);

        // budgeted decode under a closed random mask
        let raw: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.3)).collect();
        let defer = feasibility_closure(&t, &se, &raw).unwrap();
        let masks: Vec<Vec<bool>> = (0..n)
            .map(|v| {
                (0..3)
                    .map(|j| if defer.contains(&v) { j >= 2 } else { j < 2 })
                    .collect()
            })
            .collect();
        let (dp_a, dp_s) = budgeted_decode(&t, &se, &prims, &defer).unwrap();
        let (br_a, br_s) = oracle::brute_map(&t, &se, &scores, Some(&masks), true).unwrap();
        assert_eq!(dp_s, br_s);
        assert_eq!(dp_a, br_a);

        // exact decode of the joint action model
        let (dp_a, _) = tbp_map_decode(&t, &se, &prims, &defer).unwrap();
        let (br_a, br_p) = oracle::brute_map_by(
            &t,
            &se,
            Some(&masks),
            |a| joint_probability(&t, &se, &prims, a).unwrap(),
            true,
        )
        .unwrap();
        assert_eq!(joint_probability(&t, &se, &prims, &dp_a).unwrap(), br_p);
        assert_eq!(dp_a, br_a);

        // minimum-risk coherent decode
        let risks = synth::random_risks(n, 3, rng.gen());
        let rows: Vec<Vec<f64>> = (0..n).map(|v| risks.row(v).to_vec()).collect();
        let (dp_a, dp_r) = bayes_coherent_decode(&t, &se, &risks).unwrap();
        let (br_a, br_r) = oracle::brute_map(&t, &se, &rows, None, false).unwrap();
        assert_eq!(dp_r, br_r);
        assert_eq!(dp_a, br_a);

        // constrained action scores, every (node, action) pair at once
        let mut best = vec![[f64::NEG_INFINITY; 3]; n];
        for a in oracle::enumerate_coherent_set(&t, &se).unwrap() {
            let value: f64 = (0..n).map(|v| scores[v][a.get(v).index()]).sum();
            for v in 0..n {
                let j = a.get(v).index();
                if value > best[v][j] {
                    best[v][j] = value;
                }
            }
        }
        for target in 0..n {
            let v_scores = action_scores(&t, &se, &prims, target).unwrap();
            for j in 0..3 {
                assert_eq!(v_scores[j], best[target][j]);
            }
        }
    }

    assert_runtime(start, Duration::from_secs(60), "criterion 3");
    println!("PASS criterion 3: {cases} random instances per decoder match brute force exactly");
}

fn sweep_fixture(seed: u64, experts: usize, instances: usize) -> (Taxonomy, Vec<EvalInstance>) {
    let t = synth::random_tree(8, 3, 71);
    let mut rng = synth::rng(seed);
    let spec = LabelSpec {
        root_rate: 0.7,
        child_rate: 0.55,
    };
    let model = synth::ExpertModel::uniform(experts, t.len(), 0.8);
    let mut out = Vec::new();
    for i in 0..instances as u64 {
        let mut pi = vec![0.0; t.len()];
        for &v in t.topo_order() {
            pi[v] = match t.parent(v) {
                None => rng.gen_range(0.3..0.9),
                Some(p) => pi[p] * rng.gen_range(0.5..1.0),
            };
        }
        let q: Vec<Vec<f64>> = (0..experts)
            .map(|_| (0..t.len()).map(|_| rng.gen_range(0.4..0.95)).collect())
            .collect();
        let primitives = synth::make_primitives(
            &t,
            PrimitiveTarget::Scores { pi: &pi, q: &q },
            2.5,
            seed * 1000 + i,
        );
        let truth = synth::sample_labels_with(&t, spec, &mut rng);
        let expert_labels = model.sample_with(&t, &truth, &mut rng);
        out.push(EvalInstance {
            id: format!("i{i:02}"),
            primitives: Some(primitives),
            risks: None,
            truth,
            experts: expert_labels,
        });
    }
    (t, out)
}

#[test]
fn criterion_04_exact_coherence_across_sweeps() {
    let start = Instant::now();
    let (t, instances) = sweep_fixture(5, 1, 50);
    let se = Contract::selective_exclusion();

    for method in [Method::Projection, Method::TbpExact] {
        let set = EvaluationSet::new(t.clone(), se, method, instances.clone()).unwrap();
        let result = run_sweep(&set, 101).unwrap();
        assert_eq!(result.points.len(), 102);
        for p in &result.points {
            assert_eq!(p.rates.edge_any, 0.0, "{method:?} threshold {}", p.threshold);
            assert_eq!(p.rates.neigh_any, 0.0, "{method:?} threshold {}", p.threshold);
        }
        assert!(result.closure.realised_raw_ratio() >= 1.0);
    }

    let set = EvaluationSet::new(t, se, Method::NodewiseBr, instances).unwrap();
    let result = run_sweep(&set, 101).unwrap();
    let rates: Vec<f64> = result.points.iter().map(|p| p.rates.edge_any).collect();
    let (peak_idx, &peak) = rates
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    assert!(peak > 0.0);
    assert!(peak_idx > 0 && peak_idx < rates.len() - 1);
    assert!(peak > rates[0] && peak > *rates.last().unwrap());

    assert_runtime(start, Duration::from_secs(30), "criterion 4");
    println!("PASS criterion 4: exact decoders at 0 incoherence over 102 thresholds; baseline peaks mid-budget");
}

#[test]
fn criterion_05_propagation_validity_suite() {
    let start = Instant::now();
    let se = Contract::selective_exclusion();
    let mut rng = synth::rng(0x05);

    // normalisation, bounds, structural zeros, monotonicity
    for case in 0..1000u64 {
        let n = 2 + (case % 9) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let prims = synth::random_primitives(n, 3, rng.gen());
        let mu = propagate(&t, &se, &prims).unwrap();
        for v in 0..n {
            let row = mu.row(v);
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            if let Some(p) = t.parent(v) {
                assert!(row[1] <= mu.row(p)[1] + 1e-12);
            }
        }
        let kernel = build_kernel(&se, prims.row(n - 1));
        assert_eq!(kernel.get(0, 1), 0.0);
        assert_eq!(kernel.get(0, 2), 0.0);
        assert_eq!(kernel.get(2, 1), 0.0);
    }

    // joint sums to one with support inside the coherent set (≤ 5 nodes)
    for case in 0..100u64 {
        let n = 2 + (case % 4) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let prims = synth::random_primitives(n, 3, rng.gen());
        let mut total = 0.0;
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let actions: Vec<Action> = (0..n)
                .map(|_| {
                    let d = c % 3;
                    c /= 3;
                    Action::from_index(d)
                })
                .collect();
            let a = taxdefer::coherence::ActionVector::new(actions);
            let p = joint_probability(&t, &se, &prims, &a).unwrap();
            total += p;
            if p > 0.0 {
                assert!(oracle::is_coherent(&t, &se, &a));
            }
        }
        assert!((total - 1.0).abs() <= 1e-10);
    }

    // reverse-KL optimality of the renormalised defer row, 10^4-point grid
    for _ in 0..1000 {
        let prims = synth::random_primitives(1, 3, rng.gen());
        let eta = prims.row(0);
        let a = alpha(eta);
        let kl = |q0: f64| {
            let qd = 1.0 - q0;
            let mut val = 0.0;
            if q0 > 0.0 {
                val += q0 * (q0 / eta[0]).ln();
            }
            if qd > 0.0 {
                val += qd * (qd / eta[2]).ln();
            }
            val
        };
        let at_alpha = kl(a);
        let mut grid_best = f64::INFINITY;
        for i in 0..=10_000 {
            let val = kl(i as f64 / 10_000.0);
            if val < grid_best {
                grid_best = val;
            }
        }
        assert!(at_alpha <= grid_best + 1e-12);
        assert!((at_alpha - grid_best).abs() < 1e-6);
    }

    assert_runtime(start, Duration::from_secs(30), "criterion 5");
    println!("PASS criterion 5: propagation validity over 1000+ random inputs");
}

#[test]
fn criterion_06_gradient_certification() {
    let start = Instant::now();
    let se = Contract::selective_exclusion();
    let spec = LabelSpec {
        root_rate: 0.7,
        child_rate: 0.5,
    };
    let model_seeded = |t: &Taxonomy, rng: &mut rand_chacha::ChaCha8Rng| {
        let model = synth::ExpertModel::uniform(1, t.len(), 0.75);
        let labels = synth::sample_labels_with(t, spec, rng);
        let experts = model.sample_with(t, &labels, rng);
        SupervisedInstance::new(labels, experts)
    };
    let mut rng = synth::rng(0x06);
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let t = synth::random_tree(6, 3, rng.gen());
        let theta = LogitParameters::new(synth::random_logits(6, 3, 1.5, rng.gen()));
        let batch: Vec<SupervisedInstance> =
            (0..3).map(|_| model_seeded(&t, &mut rng)).collect();

        for objective in 0..2 {
            let (grad, numeric): (Vec<f64>, Vec<f64>) = if objective == 0 {
                let (_, g) = stage_one_objective(&theta, &batch).unwrap();
                let fd = oracle::finite_difference(
                    |flat| {
                        let probe = LogitParameters::from_flat(6, 3, flat);
                        stage_one_objective(&probe, &batch).unwrap().0
                    },
                    &theta.to_flat(),
                    1e-5,
                )
                .unwrap();
                (g.concat(), fd)
            } else {
                let (_, g) = recursive_objective(&t, &se, &theta, &batch).unwrap();
                let fd = oracle::finite_difference(
                    |flat| {
                        let probe = LogitParameters::from_flat(6, 3, flat);
                        recursive_objective(&t, &se, &probe, &batch).unwrap().0
                    },
                    &theta.to_flat(),
                    1e-5,
                )
                .unwrap();
                (g.concat(), fd)
            };
            let err = grad
                .iter()
                .zip(&numeric)
                .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
                .fold(0.0f64, f64::max);
            assert!(err < 1e-5, "case {case} objective {objective}: {err}");
            worst = worst.max(err);
        }
    }

    // descendant loss reaches ancestor logits on a two-node chain
    let t = parse_taxonomy(&[("p", "ROOT"), ("c", "p")]).unwrap();
    let theta = LogitParameters::new(synth::random_logits(2, 3, 1.0, 0xbeef));
    let batch = vec![SupervisedInstance::new(
        LabelVector::new(vec![true, true]),
        vec![LabelVector::new(vec![true, false])],
    )];
    let (_, grad) =
        recursive_objective_weighted(&t, &se, &theta, &batch, &[0.0, 1.0]).unwrap();
    let parent_norm: f64 = grad[0].iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(parent_norm > 1e-8);

    assert_runtime(start, Duration::from_secs(30), "criterion 6");
    println!("PASS criterion 6: analytic gradients within 1e-5 of finite differences (worst {worst:.2e})");
}

#[test]
fn criterion_07_closure_correctness() {
    let start = Instant::now();
    let se = Contract::selective_exclusion();

    // chain fixture
    let chain = parse_taxonomy(&[("r", "ROOT"), ("a", "r"), ("b", "a")]).unwrap();
    let raw: BTreeSet<usize> = [0, 2].into_iter().collect();
    let closed = feasibility_closure(&chain, &se, &raw).unwrap();
    assert_eq!(closed, [0, 1, 2].into_iter().collect());

    // idempotent and monotone
    let mut rng = synth::rng(0x07);
    for _ in 0..200 {
        let n = 2 + (rng.gen::<u64>() % 9) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let small: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.25)).collect();
        let mut large = small.clone();
        large.extend((0..n).filter(|_| rng.gen_bool(0.25)));
        let cs = feasibility_closure(&t, &se, &small).unwrap();
        let cl = feasibility_closure(&t, &se, &large).unwrap();
        assert_eq!(feasibility_closure(&t, &se, &cs).unwrap(), cs);
        assert!(cl.is_superset(&cs));
    }

    // minimality by brute-force subset search on trees up to 8 nodes
    for case in 0..12u64 {
        let n = 3 + (case % 6) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let raw: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.3)).collect();
        let closed = feasibility_closure(&t, &se, &raw).unwrap();
        let feasible = |mask: &BTreeSet<usize>| {
            let allowed: Vec<Vec<bool>> = (0..n)
                .map(|v| {
                    (0..3)
                        .map(|j| if mask.contains(&v) { j >= 2 } else { j < 2 })
                        .collect()
                })
                .collect();
            let scores = vec![vec![0.0; 3]; n];
            oracle::brute_map(&t, &se, &scores, Some(&allowed), true).is_ok()
        };
        assert!(feasible(&closed));
        let complement: Vec<usize> = (0..n).filter(|v| !raw.contains(v)).collect();
        for code in 0u32..(1 << complement.len()) {
            let mut candidate = raw.clone();
            for (bit, &v) in complement.iter().enumerate() {
                if code & (1 << bit) != 0 {
                    candidate.insert(v);
                }
            }
            if feasible(&candidate) {
                assert!(candidate.is_superset(&closed));
            }
        }
    }

    // realised/raw ratio at least one across a sweep with closure activity
    let t = synth::random_tree(8, 3, 71);
    let spec = LabelSpec {
        root_rate: 0.7,
        child_rate: 0.55,
    };
    let model = synth::ExpertModel::uniform(1, t.len(), 0.8);
    let instances: Vec<EvalInstance> = (0..30u64)
        .map(|i| {
            let truth = synth::sample_labels_with(&t, spec, &mut rng);
            EvalInstance {
                id: format!("i{i:02}"),
                primitives: Some(synth::random_primitives(t.len(), 3, 7000 + i)),
                risks: None,
                truth: truth.clone(),
                experts: model.sample_with(&t, &truth, &mut rng),
            }
        })
        .collect();
    let set = EvaluationSet::new(t, se, Method::Projection, instances).unwrap();
    let result = run_sweep(&set, 101).unwrap();
    assert!(result.closure.realised_raw_ratio() >= 1.0);
    assert!(result.closure.activations > 0);

    assert_runtime(start, Duration::from_secs(30), "criterion 7");
    println!("PASS criterion 7: closure idempotent, monotone, minimal, and ratio >= 1 in sweeps");
}

#[test]
fn criterion_08_coherence_characterisation() {
    let start = Instant::now();
    let se = Contract::selective_exclusion();
    let mut checked = 0usize;
    for n in 1..=5usize {
        // all parent arrays with parent index below the child index
        let mut parents = vec![0usize; n];
        loop {
            let pairs: Vec<(String, String)> = (0..n)
                .map(|i| {
                    if i == 0 {
                        ("n0".to_string(), "ROOT".to_string())
                    } else {
                        (format!("n{i}"), format!("n{}", parents[i]))
                    }
                })
                .collect();
            let t = parse_taxonomy(&pairs).unwrap();
            let coherent_set = oracle::enumerate_coherent_set(&t, &se).unwrap();
            for code in 0..3usize.pow(n as u32) {
                let mut c = code;
                let actions: Vec<Action> = (0..n)
                    .map(|_| {
                        let d = c % 3;
                        c /= 3;
                        Action::from_index(d)
                    })
                    .collect();
                let a = taxdefer::coherence::ActionVector::new(actions);
                let report = audit(&t, &se, &a).unwrap();
                let by_edges = !report.any_incoherent;

                let compat = taxdefer::coherence::compatibility_set(&t, &a).unwrap();
                let by_definition = if compat.is_empty() {
                    false
                } else {
                    let admissible = t.edges().all(|(p, ch)| {
                        !(a.get(p).is_defer() && a.get(ch) == Action::Assert1)
                    });
                    admissible
                        && taxdefer::coherence::is_deductively_closed(&t, &a)
                            .unwrap()
                            .is_closed
                };
                let by_enumeration = coherent_set.contains(&a);
                assert_eq!(by_edges, by_definition);
                assert_eq!(by_edges, by_enumeration);

                // the neighbourhood view agrees on incoherence
                let neigh_bad = report
                    .neighbourhoods
                    .iter()
                    .any(|&(_, c)| c != taxdefer::coherence::DefectClass::Coherent);
                assert_eq!(by_edges, !neigh_bad);
                checked += 1;
            }
            let mut i = n;
            loop {
                if i <= 1 {
                    i = 0;
                    break;
                }
                i -= 1;
                parents[i] += 1;
                if parents[i] < i {
                    break;
                }
                parents[i] = 0;
            }
            if i == 0 {
                break;
            }
        }
    }
    assert_eq!(checked, 6384);

    assert_runtime(start, Duration::from_secs(30), "criterion 8");
    println!("PASS criterion 8: three-view agreement on all {checked} vectors over trees with <= 5 nodes");
}

#[test]
fn criterion_09_subtree_handoff_contract() {
    let start = Instant::now();
    let ssh = Contract::subtree_handoff();

    // deterministic defer row
    let mut rng = synth::rng(0x09);
    for _ in 0..200 {
        let prims = synth::random_primitives(1, 3, rng.gen());
        let kernel = build_kernel(&ssh, prims.row(0));
        assert_eq!(kernel.row(2), &[0.0, 0.0, 1.0]);
    }

    // sweeps stay coherent and monotone
    let (t, instances) = sweep_fixture(11, 1, 30);
    for method in [Method::Projection, Method::TbpExact] {
        let set = EvaluationSet::new(t.clone(), ssh, method, instances.clone()).unwrap();
        let result = run_sweep(&set, 101).unwrap();
        for p in &result.points {
            assert_eq!(p.rates.edge_any, 0.0);
            assert_eq!(p.rates.neigh_any, 0.0);
        }
        let n_total = set.total_decisions();
        for threshold in [0, n_total / 3, n_total / 2, 2 * n_total / 3, n_total] {
            let plan = rank_and_select(&set, threshold).unwrap();
            for i in 0..set.instances.len() {
                let inst = &set.instances[i];
                let defer = &plan.closed_defer_sets[i];
                let (a, _) = match method {
                    Method::Projection => {
                        budgeted_decode(&t, &ssh, inst.primitives.as_ref().unwrap(), defer).unwrap()
                    }
                    _ => tbp_map_decode(&t, &ssh, inst.primitives.as_ref().unwrap(), defer).unwrap(),
                };
                assert!(!audit(&t, &ssh, &a).unwrap().any_incoherent);
                for (p, c) in t.edges() {
                    if a.get(p).is_defer() {
                        assert!(a.get(c).is_defer(), "deferral must cover the subtree");
                    }
                }
            }
        }
    }

    assert_runtime(start, Duration::from_secs(30), "criterion 9");
    println!("PASS criterion 9: subtree handoff stays coherent with monotone deferral");
}

#[test]
fn criterion_10_multi_expert() {
    let start = Instant::now();
    let me = Contract::multi_expert(3).unwrap();
    let arity = me.arity();
    let mut rng = synth::rng(0x10);

    // kernel rows normalise within 1e-12
    for _ in 0..500 {
        let prims = synth::random_primitives(1, arity, rng.gen());
        let kernel = build_kernel(&me, prims.row(0));
        for i in 0..arity {
            assert!((kernel.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    // oracle equivalence on the enlarged action set, trees up to 6 nodes
    for case in 0..200u64 {
        let n = 2 + (case % 5) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let prims = synth::random_primitives(n, arity, rng.gen());
        let scores: Vec<Vec<f64>> = prims
            .rows()
            .iter()
            .map(|r| r.iter().map(|&p| p.ln()).collect())
            .collect();
        let (dp_a, dp_s) = project_map(&t, &me, &prims).unwrap();
        let (br_a, br_s) = oracle::brute_map(&t, &me, &scores, None, true).unwrap();
        assert_eq!(dp_s, br_s);
        assert_eq!(dp_a, br_a);
        for (p, c) in t.edges() {
            assert!(!(dp_a.get(p).is_defer() && dp_a.get(c) == Action::Assert1));
        }

        let risks = synth::random_risks(n, arity, rng.gen());
        let rows: Vec<Vec<f64>> = (0..n).map(|v| risks.row(v).to_vec()).collect();
        let (dp_a, dp_r) = bayes_coherent_decode(&t, &me, &risks).unwrap();
        let (br_a, br_r) = oracle::brute_map(&t, &me, &rows, None, false).unwrap();
        assert_eq!(dp_r, br_r);
        assert_eq!(dp_a, br_a);
    }

    // sweeps on synthetic three-expert data never commit a deferred parent
    let (t, instances) = sweep_fixture(13, 3, 20);
    let set = EvaluationSet::new(t.clone(), me, Method::TbpExact, instances).unwrap();
    let result = run_sweep(&set, 51).unwrap();
    for p in &result.points {
        assert_eq!(p.rates.edge_any, 0.0);
    }

    assert_runtime(start, Duration::from_secs(60), "criterion 10");
    println!("PASS criterion 10: multi-expert kernels, decodes, and sweeps with E=3");
}

#[test]
fn criterion_11_linear_scaling_of_budgeted_decode() {
    let se = Contract::selective_exclusion();

    // per-node decode time at 100 and 10,000 nodes, fixed 10% defer budget
    let slope = |n: usize, seed: u64| -> f64 {
        let t = synth::random_tree(n, 4, seed);
        let prims = synth::random_primitives(n, 3, seed + 1);
        let mut rng = synth::rng(seed + 2);
        let raw: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.1)).collect();
        let defer = feasibility_closure(&t, &se, &raw).unwrap();
        // warm up
        let (a, _) = budgeted_decode(&t, &se, &prims, &defer).unwrap();
        assert_eq!(a.len(), n);
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let mut reps = 0usize;
            let start = Instant::now();
            while start.elapsed() < Duration::from_millis(150) {
                let (a, _) = budgeted_decode(&t, &se, &prims, &defer).unwrap();
                std::hint::black_box(&a);
                reps += 1;
            }
            let per_node = start.elapsed().as_secs_f64() / (reps as f64 * n as f64);
            best = best.min(per_node);
        }
        best
    };

    let small = slope(100, 0xaa);
    let large = slope(10_000, 0xbb);
    let ratio = large / small;
    assert!(
        ratio < 2.0,
        "per-node cost grew superlinearly: {small:.3e} -> {large:.3e} (ratio {ratio:.2})"
    );
    println!(
        "PASS criterion 11: per-node decode cost {small:.3e}s at 100 nodes vs {large:.3e}s at 10000 nodes (ratio {ratio:.2})"
    );
}
