//! Negative-sample generation: builds pairwise preference data by injecting
//! exactly one checklist error into a gold answer.
//!
//! Each case contributes at most one pair:
//!
//! ```text
//! chosen   = canonical rendering of the gold calls          (label: true)
//! rejected = gold with one seeded error injected            (label: false)
//! ```
//!
//! The eight injection operators mirror the checker's error classes, so a
//! generated pair always round-trips: the checker in referenced mode flags
//! the injected code on the rejected answer and nothing on the chosen one.
//! For parameter-level errors (E1–E4) the rejected answer differs from the
//! gold rendering in exactly one argument site, which keeps the pair
//! token-minimal — the property that matters for preference-tuning analyses.
//! Everything is deterministic: the per-case seed mixes the policy seed with
//! a hash of the case id, so corpus order never changes an individual pair.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::callparse::{parse_lenient, parse_strict, render, ToolCall};
use crate::checker::{check, value_satisfies, CheckMode, ErrorCode};
use crate::ingest::{EvalCase, PairLabels, PreferencePair};
use crate::toolspec::{registry_from_specs, ParamType, ToolRegistry, ToolSpec, TypeKind};

/// Errors from a single injection attempt.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PerturbError {
    /// The gold answer offers no legal site for the requested error code
    /// (for example, a redundant-parameter injection when every declared
    /// parameter is already used).
    #[error("no legal injection site for {code}")]
    Inapplicable {
        /// The code that could not be injected.
        code: ErrorCode,
    },
}

/// Controls which errors are injected and how often.
#[derive(Clone, Debug)]
pub struct PerturbPolicy {
    /// Codes eligible for injection (never empty via the constructors).
    pub allowed_codes: BTreeSet<ErrorCode>,
    /// Relative draw weights; missing entries default to 1, entries for
    /// disallowed codes are ignored.
    pub weights: BTreeMap<ErrorCode, f64>,
    /// Base seed mixed with each case id.
    pub seed: u64,
}

impl PerturbPolicy {
    /// Uniform policy over all eight error classes.
    pub fn uniform(seed: u64) -> Self {
        PerturbPolicy {
            allowed_codes: ErrorCode::ALL.into_iter().collect(),
            weights: BTreeMap::new(),
            seed,
        }
    }

    /// Uniform policy over a chosen subset; an empty subset falls back to
    /// all codes so the at-least-one-code invariant always holds.
    pub fn with_codes(codes: impl IntoIterator<Item = ErrorCode>, seed: u64) -> Self {
        let allowed: BTreeSet<ErrorCode> = codes.into_iter().collect();
        if allowed.is_empty() {
            return PerturbPolicy::uniform(seed);
        }
        PerturbPolicy {
            allowed_codes: allowed,
            weights: BTreeMap::new(),
            seed,
        }
    }

    fn weight(&self, code: ErrorCode) -> f64 {
        self.weights.get(&code).copied().unwrap_or(1.0).max(0.0)
    }
}

/// Why a case produced no pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PtcSkip {
    /// Id of the skipped case.
    pub id: String,
    /// Human-readable reason.
    pub reason: String,
}

/// Result of building a pairwise dataset.
#[derive(Clone, Debug, Default)]
pub struct PtcBuild {
    /// One pair per non-skipped case, in case order.
    pub pairs: Vec<PreferencePair>,
    /// Cases where no allowed code was applicable.
    pub skipped: Vec<PtcSkip>,
    /// Injection plan actually executed: per-code pair counts.
    pub plan: BTreeMap<ErrorCode, usize>,
}

/// Injects `code` into the gold calls and returns the rejected answer text.
///
/// The result always differs from the canonical gold rendering and triggers
/// `code` under the checker (referenced against the original gold). Returns
/// [`PerturbError::Inapplicable`] when the gold answer has no legal site for
/// this code — including an empty gold for every code except E5/E6, which
/// operate on the output envelope rather than any call.
pub fn perturb(
    gold: &[ToolCall],
    tools: &[ToolSpec],
    code: ErrorCode,
    seed: u64,
) -> Result<String, PerturbError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let registry = registry_from_specs(tools);
    let fail = || PerturbError::Inapplicable { code };
    if gold.is_empty()
        && !matches!(code, ErrorCode::E5InvalidFormat | ErrorCode::E6RedundantInformation)
    {
        return Err(fail());
    }
    match code {
        ErrorCode::E0WrongToolName => {
            let ci = rng.random_range(0..gold.len());
            let mut calls = gold.to_vec();
            calls[ci].name = mutate_name(&calls[ci].name, &registry, &mut rng);
            Ok(render(&calls))
        }
        ErrorCode::E1MissingRequiredParameter => {
            let sites = required_sites(gold, &registry);
            let (ci, key) = pick_site(&mut rng, &sites).ok_or_else(fail)?.clone();
            let mut calls = gold.to_vec();
            calls[ci].arguments.shift_remove(&key);
            Ok(render(&calls))
        }
        ErrorCode::E2InvalidParameterType => {
            let sites = typed_sites(gold, &registry);
            let (ci, key, ptype) = pick_site(&mut rng, &sites).ok_or_else(fail)?.clone();
            let mut calls = gold.to_vec();
            let old = calls[ci].arguments[&key].clone();
            calls[ci].arguments[&key] = retype(&old, &ptype);
            Ok(render(&calls))
        }
        ErrorCode::E3EmptyParameterValue => {
            let sites = nonempty_sites(gold, &registry);
            let (ci, key, kind) = pick_site(&mut rng, &sites).ok_or_else(fail)?.clone();
            let mut calls = gold.to_vec();
            calls[ci].arguments[&key] = blank_for(kind);
            Ok(render(&calls))
        }
        ErrorCode::E4RedundantParameter => {
            let sites = spare_sites(gold, tools);
            let (ci, key, ptype) = pick_site(&mut rng, &sites).ok_or_else(fail)?.clone();
            let mut calls = gold.to_vec();
            let value = plausible_value(gold, &ptype);
            calls[ci].arguments.insert(key, value);
            Ok(render(&calls))
        }
        ErrorCode::E5InvalidFormat => Ok(render_wrong_keys(gold)),
        ErrorCode::E6RedundantInformation => {
            let tool_name = gold
                .first()
                .map_or("name_of_the_tool", |c| c.name.as_str());
            Ok(format!(
                "Based on the query, I will make a function call to the '{}' tool to get \
                 the query answered. Here is the output in the required JSON format:\n{}",
                tool_name,
                render(gold)
            ))
        }
        ErrorCode::E7WrongNumberOfTools => {
            let ci = rng.random_range(0..gold.len());
            let mut calls = gold.to_vec();
            if rng.random_bool(0.5) {
                let copy = calls[ci].clone();
                calls.insert(ci, copy);
            } else {
                calls.remove(ci);
            }
            Ok(render(&calls))
        }
    }
}

fn pick_site<'a, T>(rng: &mut ChaCha8Rng, sites: &'a [T]) -> Option<&'a T> {
    if sites.is_empty() {
        None
    } else {
        Some(&sites[rng.random_range(0..sites.len())])
    }
}

/// A registry-absent variant of `name`, preferring small realistic slips
/// (capitalization, affixes) over mechanical suffixes.
fn mutate_name(name: &str, registry: &ToolRegistry, rng: &mut ChaCha8Rng) -> String {
    let mut first_upper = name.to_string();
    if let Some(c) = first_upper.get_mut(0..1) {
        c.make_ascii_uppercase();
    }
    let candidates = [
        first_upper,
        format!("get_{name}"),
        format!("{name}_v2"),
        name.replace('_', ""),
    ];
    let start = rng.random_range(0..candidates.len());
    for offset in 0..candidates.len() {
        let candidate = &candidates[(start + offset) % candidates.len()];
        if candidate != name && !candidate.is_empty() && registry.get(candidate).is_none() {
            return candidate.clone();
        }
    }
    // Every stylistic variant collides with a real tool; extend until free.
    let mut fallback = format!("{name}_x");
    while registry.get(&fallback).is_some() {
        fallback.push('x');
    }
    fallback
}

/// Sites `(call, required param present in the arguments)`.
fn required_sites(gold: &[ToolCall], registry: &ToolRegistry) -> Vec<(usize, String)> {
    let mut sites = Vec::new();
    for (ci, call) in gold.iter().enumerate() {
        if let Some(tool) = registry.get(&call.name) {
            for p in tool.required_params() {
                if call.arguments.contains_key(&p.name) {
                    sites.push((ci, p.name.clone()));
                }
            }
        }
    }
    sites
}

/// Sites where the declared type is concrete and the value is non-null, so
/// a retype provably violates the declaration.
fn typed_sites(gold: &[ToolCall], registry: &ToolRegistry) -> Vec<(usize, String, ParamType)> {
    let mut sites = Vec::new();
    for (ci, call) in gold.iter().enumerate() {
        if let Some(tool) = registry.get(&call.name) {
            for (key, value) in &call.arguments {
                if let Some(p) = tool.param(key) {
                    if !p.ptype.is_unknown() && !value.is_null() {
                        sites.push((ci, key.clone(), p.ptype.clone()));
                    }
                }
            }
        }
    }
    sites
}

/// Sites whose current value is not already empty.
fn nonempty_sites(gold: &[ToolCall], registry: &ToolRegistry) -> Vec<(usize, String, TypeKind)> {
    let mut sites = Vec::new();
    for (ci, call) in gold.iter().enumerate() {
        for (key, value) in &call.arguments {
            if !crate::checker::is_empty_value(value) {
                let kind = registry
                    .get(&call.name)
                    .and_then(|t| t.param(key))
                    .map_or(TypeKind::Unknown, |p| p.ptype.kind);
                sites.push((ci, key.clone(), kind));
            }
        }
    }
    sites
}

/// Sites `(call, declared param of some tool absent from that call)`,
/// deduplicated and sorted so the seeded draw is stable.
fn spare_sites(gold: &[ToolCall], tools: &[ToolSpec]) -> Vec<(usize, String, ParamType)> {
    let mut seen = BTreeSet::new();
    let mut sites = Vec::new();
    for (ci, call) in gold.iter().enumerate() {
        for tool in tools {
            for p in &tool.params {
                if !call.arguments.contains_key(&p.name) && seen.insert((ci, p.name.clone())) {
                    sites.push((ci, p.name.clone(), p.ptype.clone()));
                }
            }
        }
    }
    sites.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    sites
}

/// A value of the wrong type for `ptype`, kept non-empty so only the type
/// check fires.
fn retype(value: &Value, ptype: &ParamType) -> Value {
    let flipped = match ptype.kind {
        // Numbers become their textual form — "4" instead of 4.
        TypeKind::Integer | TypeKind::Number => Value::String(value.to_string()),
        TypeKind::String => json!(0),
        TypeKind::Boolean => json!("true"),
        // Arrays lose their brackets: the first element escapes the list.
        TypeKind::List | TypeKind::Tuple => match value.as_array().and_then(|a| a.first()) {
            Some(first) => first.clone(),
            None => json!(0),
        },
        TypeKind::Object | TypeKind::Unknown => json!(0),
    };
    if value_satisfies(&flipped, ptype) || crate::checker::is_empty_value(&flipped) {
        json!(0)
    } else {
        flipped
    }
}

/// The empty value matching a declared type kind.
fn blank_for(kind: TypeKind) -> Value {
    match kind {
        TypeKind::String => json!(""),
        TypeKind::List | TypeKind::Tuple => json!([]),
        _ => Value::Null,
    }
}

/// The first value anywhere in gold that satisfies `ptype`, else a
/// type-appropriate default.
fn plausible_value(gold: &[ToolCall], ptype: &ParamType) -> Value {
    for call in gold {
        for value in call.arguments.values() {
            if !value.is_null() && value_satisfies(value, ptype) {
                return value.clone();
            }
        }
    }
    match ptype.kind {
        TypeKind::Integer | TypeKind::Number => json!(0),
        TypeKind::String | TypeKind::Unknown => json!(""),
        TypeKind::List | TypeKind::Tuple => json!([]),
        TypeKind::Boolean => json!(false),
        TypeKind::Object => json!({}),
    }
}

/// Re-renders the calls with the wrong `Name`/`Parameter` keys: a bare
/// object for a single call, an array of wrong-keyed objects otherwise.
fn render_wrong_keys(gold: &[ToolCall]) -> String {
    fn wrong(call: &ToolCall) -> Value {
        json!({"Name": call.name, "Parameter": Value::Object(call.arguments.clone())})
    }
    let value = match gold {
        [] => json!({"Name": "name_of_the_tool", "Parameter": {}}),
        [only] => wrong(only),
        many => Value::Array(many.iter().map(wrong).collect()),
    };
    serde_json::to_string(&value).expect("calls always serialize")
}

/// Builds the pairwise dataset: for each case, draws a code from the policy
/// and injects it into the gold answer. A code whose injection is
/// inapplicable (or fails validation) falls through to the remaining
/// allowed codes in seeded-shuffled order; a case with no workable code is
/// skipped with a record. Deterministic in `(cases, policy)`.
pub fn build_ptc(cases: &[EvalCase], policy: &PerturbPolicy) -> PtcBuild {
    let mut out = PtcBuild::default();
    let codes: Vec<ErrorCode> = policy.allowed_codes.iter().copied().collect();
    if codes.is_empty() {
        out.skipped = cases
            .iter()
            .map(|c| PtcSkip {
                id: c.id.clone(),
                reason: "policy allows no error codes".into(),
            })
            .collect();
        return out;
    }
    for case in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed(policy.seed, &case.id));
        let registry = registry_from_specs(&case.tools);
        let chosen = render(&case.gold);
        let first = draw_weighted(&codes, policy, &mut rng);
        let mut order = vec![first];
        let mut rest: Vec<ErrorCode> = codes.iter().copied().filter(|&c| c != first).collect();
        rest.shuffle(&mut rng);
        order.extend(rest);

        let mut injected = None;
        for code in order {
            let attempt_seed = rng.random::<u64>();
            let Ok(rejected) = perturb(&case.gold, &case.tools, code, attempt_seed) else {
                continue;
            };
            let pair = PreferencePair {
                prompt: crate::ingest::render_case_prompt(&case.tools, &case.query),
                chosen: chosen.clone(),
                rejected,
                injected_error: Some(code),
                labels: PairLabels::default(),
            };
            if validate_pair(&pair, &registry, &case.gold) {
                injected = Some((code, pair));
                break;
            }
        }
        match injected {
            Some((code, pair)) => {
                out.pairs.push(pair);
                *out.plan.entry(code).or_insert(0) += 1;
            }
            None => out.skipped.push(PtcSkip {
                id: case.id.clone(),
                reason: "no allowed error code is applicable to this gold answer".into(),
            }),
        }
    }
    out
}

/// Quality gate: true iff the chosen answer is clean under the checker and
/// the rejected answer actually triggers the recorded injected error (any
/// finding at all when no code is recorded). Pairs whose two sides are
/// identical never validate.
pub fn validate_pair(pair: &PreferencePair, registry: &ToolRegistry, gold: &[ToolCall]) -> bool {
    if pair.chosen == pair.rejected {
        return false;
    }
    let Ok(chosen) = parse_strict(&pair.chosen) else {
        return false;
    };
    let Ok(chosen_findings) = check(&chosen, registry, Some(gold), CheckMode::Referenced) else {
        return false;
    };
    if !chosen_findings.is_empty() {
        return false;
    }
    let rejected = parse_lenient(&pair.rejected);
    let Ok(findings) = check(&rejected, registry, Some(gold), CheckMode::Referenced) else {
        return false;
    };
    match pair.injected_error {
        Some(code) => findings.iter().any(|f| f.code == code),
        None => !findings.is_empty(),
    }
}

/// Mixes the policy seed with an FNV-1a hash of the case id (stable across
/// runs and platforms, unlike the standard library's default hasher), then
/// finalizes with SplitMix64 for avalanche.
fn case_seed(policy_seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (policy_seed ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn draw_weighted(codes: &[ErrorCode], policy: &PerturbPolicy, rng: &mut ChaCha8Rng) -> ErrorCode {
    let weights: Vec<f64> = codes.iter().map(|&c| policy.weight(c)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return codes[rng.random_range(0..codes.len())];
    }
    let mut x = rng.random_range(0.0..total);
    for (code, w) in codes.iter().zip(&weights) {
        if x < *w {
            return *code;
        }
        x -= w;
    }
    *codes.last().expect("codes is non-empty")
}
