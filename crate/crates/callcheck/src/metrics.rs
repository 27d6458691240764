//! Tool-calling accuracy: micro-averaged F1 at two strictness tiers.
//!
//! A predicted call earns name credit when a gold call with the same tool
//! name exists, and full credit when additionally its arguments match
//! exactly (after value normalization). Each gold call can be consumed at
//! most once: [`match_calls`] builds a maximum-cardinality one-to-one
//! matching on name equality, preferring pairings that maximize
//! exact-argument matches, with a deterministic (pred index, gold index)
//! tie-break. Counts then fall out of the matching:
//!
//! ```text
//! tp_name = |matching| = Σ_t min(#pred calls of tool t, #gold calls of tool t)
//! tp_full = matched pairs with exactly equal argument maps
//!
//!           2 · tp           (P = total predicted calls,
//! F1 = ---------------        G = total gold calls,
//!           P + G             since fp = P − tp and fn = G − tp)
//! ```
//!
//! Corpus scores are micro-averaged: tp, P, and G are summed over cases
//! before the F1 ratio is taken. A case with no predicted and no gold calls
//! is perfect (per-case F1 = 1); a corpus with no calls at all has no
//! defined F1.

use serde::Serialize;
use serde_json::{Map, Value};
use std::collections::BTreeMap;

use crate::callparse::ToolCall;

/// Per-case match counts.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize)]
pub struct CaseScore {
    /// Number of predicted calls (P).
    pub pred_count: usize,
    /// Number of gold calls (G).
    pub gold_count: usize,
    /// Name-tier true positives.
    pub tp_name: usize,
    /// Full-tier (name + exact arguments) true positives.
    pub tp_full: usize,
}

impl CaseScore {
    /// Per-case name-tier F1. Both sides empty counts as a perfect match.
    pub fn f1_name(&self) -> f64 {
        f1(self.tp_name, self.pred_count, self.gold_count).unwrap_or(1.0)
    }

    /// Per-case full-tier F1. Both sides empty counts as a perfect match.
    pub fn f1_full(&self) -> f64 {
        f1(self.tp_full, self.pred_count, self.gold_count).unwrap_or(1.0)
    }

    /// Predicted calls left unmatched at the name tier.
    pub fn fp_name(&self) -> usize {
        self.pred_count - self.tp_name
    }

    /// Gold calls left unmatched at the name tier.
    pub fn fn_name(&self) -> usize {
        self.gold_count - self.tp_name
    }

    /// Predicted calls without an exact-argument match.
    pub fn fp_full(&self) -> usize {
        self.pred_count - self.tp_full
    }

    /// Gold calls without an exact-argument match.
    pub fn fn_full(&self) -> usize {
        self.gold_count - self.tp_full
    }
}

/// Micro-averaged corpus result: summed counts, the two F1 scores, and the
/// per-case records they came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalResult {
    /// Total name-tier true positives.
    pub tp_name: usize,
    /// Total name-tier false positives (unmatched predictions).
    pub fp_name: usize,
    /// Total name-tier false negatives (unmatched gold calls).
    pub fn_name: usize,
    /// Total full-tier true positives.
    pub tp_full: usize,
    /// Total full-tier false positives.
    pub fp_full: usize,
    /// Total full-tier false negatives.
    pub fn_full: usize,
    /// Micro-averaged name-tier F1; `None` when the corpus has no calls.
    pub f1_name: Option<f64>,
    /// Micro-averaged full-tier F1; `None` when the corpus has no calls.
    pub f1_full: Option<f64>,
    /// The per-case records, in input order.
    pub per_case: Vec<CaseScore>,
}

impl EvalResult {
    /// Number of cases aggregated.
    pub fn cases(&self) -> usize {
        self.per_case.len()
    }

    /// Total predicted calls.
    pub fn pred_count(&self) -> usize {
        self.tp_name + self.fp_name
    }

    /// Total gold calls.
    pub fn gold_count(&self) -> usize {
        self.tp_name + self.fn_name
    }
}

fn f1(tp: usize, pred: usize, gold: usize) -> Option<f64> {
    if pred + gold == 0 {
        None
    } else {
        Some(2.0 * tp as f64 / (pred + gold) as f64)
    }
}

/// One-to-one matching between predicted and gold calls as (pred index,
/// gold index) pairs, sorted by pred index.
///
/// The matching has maximum cardinality under name equality; among
/// same-named candidates it prefers the pairing that maximizes
/// exact-argument matches (found by augmenting paths), and all remaining
/// choices are broken deterministically by ascending (pred index, gold
/// index).
pub fn match_calls(pred: &[ToolCall], gold: &[ToolCall]) -> Vec<(usize, usize)> {
    let mut groups: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, call) in pred.iter().enumerate() {
        groups.entry(&call.name).or_default().0.push(i);
    }
    for (i, call) in gold.iter().enumerate() {
        groups.entry(&call.name).or_default().1.push(i);
    }
    let mut matching = Vec::new();
    for (p_idx, g_idx) in groups.values() {
        // Pass 1: a maximum matching on exact-argument edges.
        let owner = max_matching(p_idx.len(), g_idx.len(), |pi, gi| {
            args_eq(&pred[p_idx[pi]].arguments, &gold[g_idx[gi]].arguments)
        });
        let mut pred_taken = vec![false; p_idx.len()];
        for (gi, slot) in owner.iter().enumerate() {
            if let Some(pi) = *slot {
                matching.push((p_idx[pi], g_idx[gi]));
                pred_taken[pi] = true;
            }
        }
        // Pass 2: pair the leftovers (same name, unequal arguments) in
        // ascending index order up to the group's min count.
        let free_preds = p_idx.iter().enumerate().filter(|(pi, _)| !pred_taken[*pi]);
        let mut free_golds = g_idx
            .iter()
            .enumerate()
            .filter(|(gi, _)| owner[*gi].is_none())
            .map(|(_, g)| *g);
        for (_, p) in free_preds {
            match free_golds.next() {
                Some(g) => matching.push((*p, g)),
                None => break,
            }
        }
    }
    matching.sort_unstable();
    matching
}

/// Scores one case: predicted calls against gold calls, counted off the
/// preferred matching.
pub fn score_case(pred: &[ToolCall], gold: &[ToolCall]) -> CaseScore {
    let matching = match_calls(pred, gold);
    let tp_full = matching
        .iter()
        .filter(|(p, g)| args_eq(&pred[*p].arguments, &gold[*g].arguments))
        .count();
    CaseScore {
        pred_count: pred.len(),
        gold_count: gold.len(),
        tp_name: matching.len(),
        tp_full,
    }
}

/// Micro-averages per-case counts into a corpus result.
pub fn aggregate(scores: Vec<CaseScore>) -> EvalResult {
    let mut pred_count = 0;
    let mut gold_count = 0;
    let mut tp_name = 0;
    let mut tp_full = 0;
    for s in &scores {
        pred_count += s.pred_count;
        gold_count += s.gold_count;
        tp_name += s.tp_name;
        tp_full += s.tp_full;
    }
    EvalResult {
        tp_name,
        fp_name: pred_count - tp_name,
        fn_name: gold_count - tp_name,
        tp_full,
        fp_full: pred_count - tp_full,
        fn_full: gold_count - tp_full,
        f1_name: f1(tp_name, pred_count, gold_count),
        f1_full: f1(tp_full, pred_count, gold_count),
        per_case: scores,
    }
}

/// Maximum bipartite matching by augmenting paths over an `edge` predicate,
/// scanning left vertices (and right candidates) in ascending order.
/// Returns, per right vertex, the left vertex matched to it.
fn max_matching(lefts: usize, rights: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Option<usize>> {
    let mut owner: Vec<Option<usize>> = vec![None; rights];
    // Greedy seed: lowest free partner first, so that ties keep ascending
    // index order instead of the displacement order an augmenting search
    // would produce.
    let mut unmatched = Vec::new();
    for li in 0..lefts {
        match (0..rights).find(|&ri| owner[ri].is_none() && edge(li, ri)) {
            Some(ri) => owner[ri] = Some(li),
            None => unmatched.push(li),
        }
    }
    for li in unmatched {
        let mut visited = vec![false; rights];
        augment(li, rights, &edge, &mut visited, &mut owner);
    }
    owner
}

fn augment(
    li: usize,
    rights: usize,
    edge: &impl Fn(usize, usize) -> bool,
    visited: &mut [bool],
    owner: &mut [Option<usize>],
) -> bool {
    for ri in 0..rights {
        if visited[ri] || !edge(li, ri) {
            continue;
        }
        visited[ri] = true;
        let free = match owner[ri] {
            None => true,
            Some(holder) => augment(holder, rights, edge, visited, owner),
        };
        if free {
            owner[ri] = Some(li);
            return true;
        }
    }
    false
}

/// Exact argument-map equality: identical key sets and normalized-equal
/// values per key.
pub fn args_eq(a: &Map<String, Value>, b: &Map<String, Value>) -> bool {
    a.len() == b.len()
        && a.iter()
            .all(|(k, va)| b.get(k).is_some_and(|vb| normalized_eq(va, vb)))
}

/// Value equality up to numeric representation: an integer-valued float
/// equals the same integer (`4.0 == 4`), text is compared exactly, lists
/// element-wise in order, and objects by key set and per-key values.
pub fn normalized_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => num_eq(x, y),
        (Value::Array(xs), Value::Array(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| normalized_eq(x, y))
        }
        (Value::Object(xo), Value::Object(yo)) => args_eq(xo, yo),
        _ => a == b,
    }
}

fn num_eq(x: &serde_json::Number, y: &serde_json::Number) -> bool {
    fn int_of(n: &serde_json::Number) -> Option<i128> {
        n.as_i64()
            .map(i128::from)
            .or_else(|| n.as_u64().map(i128::from))
    }
    match (int_of(x), int_of(y)) {
        // Exact integer comparison avoids f64 precision loss on huge values.
        (Some(a), Some(b)) => a == b,
        (None, None) => x.as_f64() == y.as_f64(),
        (Some(a), None) => y.as_f64().is_some_and(|f| f.fract() == 0.0 && f == a as f64),
        (None, Some(b)) => x.as_f64().is_some_and(|f| f.fract() == 0.0 && f == b as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callparse::parse_strict;
    use crate::fixtures;
    use proptest::prelude::*;
    use serde_json::json;

    fn calls(text: &str) -> Vec<ToolCall> {
        parse_strict(text).unwrap().calls
    }

    /// Exhaustive oracle: the size of the best injective pred→gold mapping
    /// over all assignments (feasible for the small corpora used in tests).
    fn brute_force_tp_full(pred: &[ToolCall], gold: &[ToolCall]) -> usize {
        fn go(pi: usize, pred: &[ToolCall], gold: &[ToolCall], used: &mut Vec<bool>) -> usize {
            if pi == pred.len() {
                return 0;
            }
            let mut best = go(pi + 1, pred, gold, used);
            for gi in 0..gold.len() {
                if used[gi]
                    || pred[pi].name != gold[gi].name
                    || !args_eq(&pred[pi].arguments, &gold[gi].arguments)
                {
                    continue;
                }
                used[gi] = true;
                best = best.max(1 + go(pi + 1, pred, gold, used));
                used[gi] = false;
            }
            best
        }
        go(0, pred, gold, &mut vec![false; gold.len()])
    }

    /// Exhaustive oracle at the name tier: best injective mapping counting
    /// name equality only.
    fn brute_force_tp_name(pred: &[ToolCall], gold: &[ToolCall]) -> usize {
        fn go(pi: usize, pred: &[ToolCall], gold: &[ToolCall], used: &mut Vec<bool>) -> usize {
            if pi == pred.len() {
                return 0;
            }
            let mut best = go(pi + 1, pred, gold, used);
            for gi in 0..gold.len() {
                if used[gi] || pred[pi].name != gold[gi].name {
                    continue;
                }
                used[gi] = true;
                best = best.max(1 + go(pi + 1, pred, gold, used));
                used[gi] = false;
            }
            best
        }
        go(0, pred, gold, &mut vec![false; gold.len()])
    }

    #[test]
    fn near_miss_pair_scores_name_two_full_one() {
        let pred = calls(fixtures::HEXAGON_REJECTED);
        let gold = calls(fixtures::HEXAGON_CHOSEN);
        let score = score_case(&pred, &gold);
        assert_eq!(score.tp_name, 2);
        assert_eq!(score.tp_full, 1);
        assert_eq!(score.f1_name(), 1.0);
        assert_eq!(score.f1_full(), 0.5);
    }

    #[test]
    fn identical_calls_are_perfect() {
        let gold = calls(fixtures::HEXAGON_CHOSEN);
        let score = score_case(&gold, &gold);
        assert_eq!(score.tp_name, 2);
        assert_eq!(score.tp_full, 2);
        assert_eq!(score.f1_name(), 1.0);
        assert_eq!(score.f1_full(), 1.0);
    }

    #[test]
    fn empty_sides_have_edge_semantics() {
        let gold = calls(fixtures::HEXAGON_CHOSEN);
        let both_empty = score_case(&[], &[]);
        assert_eq!(both_empty.f1_name(), 1.0);
        assert_eq!(both_empty.f1_full(), 1.0);
        let pred_empty = score_case(&[], &gold);
        assert_eq!(pred_empty.f1_name(), 0.0);
        assert_eq!(pred_empty.f1_full(), 0.0);
        let gold_empty = score_case(&gold, &[]);
        assert_eq!(gold_empty.f1_name(), 0.0);
        assert_eq!(gold_empty.f1_full(), 0.0);
    }

    #[test]
    fn duplicate_calls_are_consumed_at_most_once() {
        let one = calls(r#"[{"name": "t", "arguments": {"a": 1}}]"#);
        let twice = calls(r#"[{"name": "t", "arguments": {"a": 1}}, {"name": "t", "arguments": {"a": 1}}]"#);
        let score = score_case(&twice, &one);
        assert_eq!(score.tp_name, 1);
        assert_eq!(score.tp_full, 1);
        assert_eq!(score.f1_full(), 2.0 / 3.0);
        // Two gold duplicates admit two credits.
        let score = score_case(&twice, &twice);
        assert_eq!(score.tp_full, 2);
    }

    #[test]
    fn matching_handles_cross_assignments() {
        // pred0 matches both golds, pred1 matches only gold0: a greedy
        // pairing of pred0→gold0 would strand pred1, the maximum is 2.
        let pred = calls(r#"[{"name": "t", "arguments": {"a": 1}}, {"name": "t", "arguments": {"a": 1}}]"#);
        let gold = calls(r#"[{"name": "t", "arguments": {"a": 1}}, {"name": "t", "arguments": {"a": 1.0}}]"#);
        let score = score_case(&pred, &gold);
        assert_eq!(score.tp_full, 2);
        assert_eq!(score.tp_full, brute_force_tp_full(&pred, &gold));
    }

    #[test]
    fn aggregation_is_micro_averaged() {
        let gold = calls(fixtures::HEXAGON_CHOSEN);
        let rejected = calls(fixtures::HEXAGON_REJECTED);
        let scores = vec![
            score_case(&gold, &gold),     // 2/2 full
            score_case(&rejected, &gold), // 1/2 full
            score_case(&[], &gold),       // 0/2 full, P=0
        ];
        let total = aggregate(scores);
        assert_eq!(total.cases(), 3);
        assert_eq!(total.pred_count(), 4);
        assert_eq!(total.gold_count(), 6);
        assert_eq!(total.tp_name, 4);
        assert_eq!((total.fp_name, total.fn_name), (0, 2));
        assert_eq!(total.tp_full, 3);
        assert_eq!((total.fp_full, total.fn_full), (1, 3));
        assert_eq!(total.f1_name, Some(0.8));
        assert_eq!(total.f1_full, Some(0.6));
    }

    #[test]
    fn half_precision_half_recall_gives_half_f1() {
        // counts {tp=1, fp=1, fn=0} and {tp=0, fp=0, fn=1}: P = R = 0.5.
        let scores = vec![
            CaseScore { pred_count: 2, gold_count: 1, tp_name: 1, tp_full: 1 },
            CaseScore { pred_count: 0, gold_count: 1, tp_name: 0, tp_full: 0 },
        ];
        let total = aggregate(scores);
        assert_eq!(total.f1_name, Some(0.5));
        assert_eq!(total.f1_full, Some(0.5));
    }

    #[test]
    fn empty_corpus_f1_is_undefined() {
        let total = aggregate(Vec::new());
        assert_eq!(total.f1_name, None);
        assert_eq!(total.f1_full, None);
        let all_empty = aggregate(vec![score_case(&[], &[])]);
        assert_eq!(all_empty.f1_name, None);
    }

    #[test]
    fn matching_pairs_identical_sides_in_order() {
        let gold = calls(fixtures::HEXAGON_CHOSEN);
        assert_eq!(match_calls(&gold, &gold), vec![(0, 0), (1, 1)]);
        assert_eq!(match_calls(&[], &gold), Vec::new());
        assert_eq!(match_calls(&gold, &[]), Vec::new());
    }

    #[test]
    fn duplicate_names_match_at_most_available_golds() {
        let pred = calls(r#"[{"name": "a", "arguments": {}}, {"name": "a", "arguments": {}}]"#);
        let gold = calls(r#"[{"name": "a", "arguments": {}}, {"name": "b", "arguments": {}}]"#);
        assert_eq!(match_calls(&pred, &gold), vec![(0, 0)]);
    }

    #[test]
    fn matching_prefers_exact_argument_pairings() {
        // Only pred[1] agrees with the single gold call; a naive
        // first-come pairing would choose pred[0] and lose the full match.
        let pred = calls(r#"[{"name": "t", "arguments": {"a": 1}}, {"name": "t", "arguments": {"a": 2}}]"#);
        let gold = calls(r#"[{"name": "t", "arguments": {"a": 2}}]"#);
        assert_eq!(match_calls(&pred, &gold), vec![(1, 0)]);
        // With a second gold slot the leftover pred is paired too.
        let gold2 = calls(r#"[{"name": "t", "arguments": {"a": 2}}, {"name": "t", "arguments": {"a": 9}}]"#);
        assert_eq!(match_calls(&pred, &gold2), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn ties_break_by_ascending_indices() {
        let pred = calls(r#"[{"name": "t", "arguments": {}}, {"name": "t", "arguments": {}}]"#);
        assert_eq!(match_calls(&pred, &pred), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn numeric_normalization_rules() {
        assert!(normalized_eq(&json!(4.0), &json!(4)));
        assert!(normalized_eq(&json!(4), &json!(4.0)));
        assert!(normalized_eq(&json!(-2.0), &json!(-2)));
        assert!(!normalized_eq(&json!(4.5), &json!(4)));
        assert!(!normalized_eq(&json!(4), &json!(5)));
        assert!(!normalized_eq(&json!("4"), &json!(4)));
        assert!(!normalized_eq(&json!(1), &json!(true)));
        assert!(normalized_eq(&json!(u64::MAX), &json!(u64::MAX)));
        assert!(!normalized_eq(&json!(u64::MAX), &json!(u64::MAX - 1)));
    }

    #[test]
    fn structural_normalization_recurses() {
        assert!(normalized_eq(&json!([[1.0, 2], [3, 4.0]]), &json!([[1, 2.0], [3.0, 4]])));
        assert!(!normalized_eq(&json!([1, 2]), &json!([2, 1])), "lists are ordered");
        assert!(normalized_eq(
            &json!({"a": 1.0, "b": [2]}),
            &json!({"b": [2.0], "a": 1})
        ));
        assert!(!normalized_eq(&json!({"a": 1}), &json!({"a": 1, "b": 2})));
        assert!(normalized_eq(&json!(""), &json!("")));
        assert!(!normalized_eq(&json!("x"), &json!("X")), "text is exact");
    }

    /// Strategy for small argument maps over a tiny value alphabet so
    /// collisions (equal calls) actually occur.
    fn arb_call() -> impl Strategy<Value = ToolCall> {
        let value = prop_oneof![
            Just(json!(1)),
            Just(json!(1.0)),
            Just(json!(2)),
            Just(json!("x")),
            Just(json!([1, 2])),
        ];
        (
            prop_oneof![Just("alpha".to_string()), Just("beta".to_string())],
            proptest::collection::btree_map(
                prop_oneof![Just("a".to_string()), Just("b".to_string())],
                value,
                0..3,
            ),
        )
            .prop_map(|(name, args)| ToolCall {
                name,
                arguments: args.into_iter().collect(),
            })
    }

    fn arb_calls(max: usize) -> impl Strategy<Value = Vec<ToolCall>> {
        proptest::collection::vec(arb_call(), 0..=max)
    }

    proptest! {
        #[test]
        fn matching_equals_brute_force(pred in arb_calls(4), gold in arb_calls(4)) {
            let score = score_case(&pred, &gold);
            prop_assert_eq!(score.tp_full, brute_force_tp_full(&pred, &gold));
        }

        #[test]
        fn matching_is_injective_name_consistent_and_maximal(
            pred in arb_calls(4),
            gold in arb_calls(4),
        ) {
            let matching = match_calls(&pred, &gold);
            let mut seen_p = std::collections::BTreeSet::new();
            let mut seen_g = std::collections::BTreeSet::new();
            for (p, g) in &matching {
                prop_assert_eq!(&pred[*p].name, &gold[*g].name);
                prop_assert!(seen_p.insert(*p), "pred index used twice");
                prop_assert!(seen_g.insert(*g), "gold index used twice");
            }
            prop_assert_eq!(matching.len(), brute_force_tp_name(&pred, &gold));
        }

        #[test]
        fn full_tier_never_exceeds_name_tier(pred in arb_calls(5), gold in arb_calls(5)) {
            let score = score_case(&pred, &gold);
            prop_assert!(score.tp_full <= score.tp_name);
            prop_assert!(score.tp_name <= pred.len().min(gold.len()));
            prop_assert!(score.f1_full() <= score.f1_name() + 1e-15);
            prop_assert!((0.0..=1.0).contains(&score.f1_name()));
            prop_assert!((0.0..=1.0).contains(&score.f1_full()));
        }

        #[test]
        fn scoring_is_symmetric(pred in arb_calls(4), gold in arb_calls(4)) {
            let ab = score_case(&pred, &gold);
            let ba = score_case(&gold, &pred);
            prop_assert_eq!(ab.tp_name, ba.tp_name);
            prop_assert_eq!(ab.tp_full, ba.tp_full);
        }

        #[test]
        fn scoring_is_order_invariant(
            pred in arb_calls(4),
            gold in arb_calls(4),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pred_shuffled = pred.clone();
            let mut gold_shuffled = gold.clone();
            pred_shuffled.shuffle(&mut rng);
            gold_shuffled.shuffle(&mut rng);
            prop_assert_eq!(
                score_case(&pred, &gold),
                score_case(&pred_shuffled, &gold_shuffled)
            );
        }

        #[test]
        fn self_score_is_perfect(gold in arb_calls(5)) {
            let score = score_case(&gold, &gold);
            prop_assert_eq!(score.tp_full, gold.len());
            prop_assert_eq!(score.f1_full(), 1.0);
        }

        #[test]
        fn normalized_eq_is_reflexive_and_symmetric(a in arb_call(), b in arb_call()) {
            prop_assert!(args_eq(&a.arguments, &a.arguments));
            prop_assert_eq!(
                args_eq(&a.arguments, &b.arguments),
                args_eq(&b.arguments, &a.arguments)
            );
        }
    }
}
