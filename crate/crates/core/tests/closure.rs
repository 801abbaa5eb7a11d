//! Feasibility closure: idempotence, monotonicity, and minimality against a
//! brute-force subset search.

use std::collections::BTreeSet;

use rand::Rng;
use taxdefer::coherence::Contract;
use taxdefer::decode::feasibility_closure;
use taxdefer::synth;
use taxdefer::taxonomy::Taxonomy;
use taxdefer_oracle as oracle;

/// A defer mask is feasible when some coherent vector defers exactly the
/// masked nodes and asserts everywhere else.
fn mask_is_feasible(t: &Taxonomy, contract: &Contract, mask: &BTreeSet<usize>) -> bool {
    let arity = contract.arity();
    let allowed: Vec<Vec<bool>> = (0..t.len())
        .map(|v| {
            (0..arity)
                .map(|j| if mask.contains(&v) { j >= 2 } else { j < 2 })
                .collect()
        })
        .collect();
    let scores = vec![vec![0.0; arity]; t.len()];
    oracle::brute_map(t, contract, &scores, Some(&allowed), true).is_ok()
}

fn random_subset(n: usize, p: f64, rng: &mut impl Rng) -> BTreeSet<usize> {
    (0..n).filter(|_| rng.gen_bool(p)).collect()
}

#[test]
fn chain_fixture() {
    let t = taxdefer::taxonomy::parse_taxonomy(&[("r", "ROOT"), ("a", "r"), ("b", "a")]).unwrap();
    let se = Contract::selective_exclusion();
    let raw: BTreeSet<usize> = [0, 2].into_iter().collect();
    let closed = feasibility_closure(&t, &se, &raw).unwrap();
    assert_eq!(closed, [0, 1, 2].into_iter().collect());
}

#[test]
fn closure_is_idempotent_and_monotone() {
    let se = Contract::selective_exclusion();
    let mut rng = synth::rng(0xc1);
    for case in 0..300u64 {
        let n = 2 + (case % 9) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let small = random_subset(n, 0.25, &mut rng);
        let mut large = small.clone();
        large.extend(random_subset(n, 0.25, &mut rng));

        let closed_small = feasibility_closure(&t, &se, &small).unwrap();
        let closed_large = feasibility_closure(&t, &se, &large).unwrap();
        // idempotent
        assert_eq!(
            feasibility_closure(&t, &se, &closed_small).unwrap(),
            closed_small
        );
        // superset of the input
        assert!(closed_small.is_superset(&small));
        // monotone in the input set
        assert!(closed_large.is_superset(&closed_small), "case {case}");
    }
}

#[test]
fn closure_output_is_the_least_feasible_superset() {
    let se = Contract::selective_exclusion();
    let mut rng = synth::rng(0xc2);
    for case in 0..24u64 {
        let n = 3 + (case % 6) as usize; // trees up to 8 nodes
        let t = synth::random_tree(n, 3, rng.gen());
        let raw = random_subset(n, 0.3, &mut rng);
        let closed = feasibility_closure(&t, &se, &raw).unwrap();
        assert!(mask_is_feasible(&t, &se, &closed), "case {case}");

        // brute-force subset search over every superset of the raw set
        let complement: Vec<usize> = (0..n).filter(|v| !raw.contains(v)).collect();
        let mut best: Option<BTreeSet<usize>> = None;
        for code in 0u32..(1 << complement.len()) {
            let mut candidate = raw.clone();
            for (bit, &v) in complement.iter().enumerate() {
                if code & (1 << bit) != 0 {
                    candidate.insert(v);
                }
            }
            if mask_is_feasible(&t, &se, &candidate) {
                // every feasible superset must contain the closure
                assert!(
                    candidate.is_superset(&closed),
                    "case {case}: feasible {candidate:?} misses part of {closed:?}"
                );
                let better = match &best {
                    None => true,
                    Some(b) => candidate.len() < b.len(),
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
        assert_eq!(best.as_ref(), Some(&closed), "case {case}");
    }
}

#[test]
fn subtree_handoff_closure_is_minimal_too() {
    let ssh = Contract::subtree_handoff();
    let mut rng = synth::rng(0xc3);
    for case in 0..16u64 {
        let n = 3 + (case % 5) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let raw = random_subset(n, 0.3, &mut rng);
        let closed = feasibility_closure(&t, &ssh, &raw).unwrap();
        assert!(mask_is_feasible(&t, &ssh, &closed), "case {case}");
        // deferred parent forces the whole subtree deferred
        for &v in &closed {
            for d in t.descendants(v).unwrap() {
                assert!(closed.contains(&d), "case {case}");
            }
        }
        let complement: Vec<usize> = (0..n).filter(|v| !raw.contains(v)).collect();
        for code in 0u32..(1 << complement.len()) {
            let mut candidate = raw.clone();
            for (bit, &v) in complement.iter().enumerate() {
                if code & (1 << bit) != 0 {
                    candidate.insert(v);
                }
            }
            if mask_is_feasible(&t, &ssh, &candidate) {
                assert!(candidate.is_superset(&closed), "case {case}");
            }
        }
    }
}

#[test]
fn infeasible_raw_masks_become_feasible_exactly_at_closure() {
    let se = Contract::selective_exclusion();
    let mut rng = synth::rng(0xc4);
    let mut saw_infeasible_raw = false;
    for case in 0..200u64 {
        let n = 3 + (case % 6) as usize;
        let t = synth::random_tree(n, 3, rng.gen());
        let raw = random_subset(n, 0.35, &mut rng);
        let closed = feasibility_closure(&t, &se, &raw).unwrap();
        if !mask_is_feasible(&t, &se, &raw) {
            saw_infeasible_raw = true;
            assert!(closed.len() > raw.len());
        }
        assert!(mask_is_feasible(&t, &se, &closed));
    }
    assert!(saw_infeasible_raw, "sampling never produced a gap to close");
}
