//! Acceptance gate: one test per criterion, each printing a single
//! `acceptance N: PASS` line on success (run with `--nocapture` to see
//! them; cargo's own per-test status lines carry the failures).
//!
//! 1. Checker/injector round trip over 1,000 synthetic cases.
//! 2. The redundant-parameter fixture pair, exact findings and counts.
//! 3. Call matching and F1 against brute-force oracles, 500 instances.
//! 4. Loss values at the model==reference fixed point.
//! 5. Analytic gradients against central finite differences, plus the
//!    closed-form single-difference gradient against the generic one.
//! 6. The preference-optimization failure-mode demonstration verdicts.
//! 7. Hermetic conversation pipeline determinism through the binary.
//! 8. Negative-sample generation determinism through the binary.
//! 9. Optional live endpoint comparison (never gating).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use callcheck::callparse::{parse_lenient, parse_strict, render, ToolCall};
use callcheck::checker::{check, CheckMode, ErrorCode};
use callcheck::fixtures;
use callcheck::ingest::read_ptc;
use callcheck::metrics::{aggregate, args_eq, match_calls, score_case, CaseScore};
use callcheck::negsample::{build_ptc, PerturbPolicy};
use callcheck::prefopt::{
    dpo_gradient, dpo_loss, gen_minimal_pairs, kto_loss, kto_token_gradient, run_demo,
    train_toy, DemoConfig, GradTable, KtoConfig, PairGenConfig, PrefMethod, RefPair, ToyModel,
};
use callcheck::toolspec::registry_from_specs;

#[test]
fn criterion_1_checker_and_injector_round_trip() {
    let start = Instant::now();
    let cases = fixtures::synth_corpus(1000);
    let policy = PerturbPolicy::uniform(2026);
    let build = build_ptc(&cases, &policy);
    assert!(build.skipped.is_empty(), "no synthetic case may be skipped: {:?}", build.skipped);
    assert_eq!(build.pairs.len(), 1000);
    for (case, pair) in cases.iter().zip(&build.pairs) {
        let injected = pair.injected_error.expect("generated pairs carry their injected code");
        let registry = registry_from_specs(&case.tools);
        let rejected = parse_lenient(&pair.rejected);
        let findings =
            check(&rejected, &registry, Some(&case.gold), CheckMode::Referenced).unwrap();
        assert!(
            findings.iter().any(|f| f.code == injected),
            "case `{}`: injected {injected} not among findings {:?}",
            case.id,
            findings.iter().map(|f| f.code).collect::<Vec<_>>()
        );
        let chosen = parse_lenient(&pair.chosen);
        let findings =
            check(&chosen, &registry, Some(&case.gold), CheckMode::Referenced).unwrap();
        assert!(findings.is_empty(), "case `{}`: chosen answer flagged {findings:?}", case.id);
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "acceptance 1: PASS — 1000/1000 injected codes detected, 1000/1000 chosen answers clean ({elapsed:?})"
    );
}

#[test]
fn criterion_2_fixture_pair_exact_findings_and_counts() {
    let tools = fixtures::hexagon_tools();
    let registry = registry_from_specs(&tools);
    let chosen = parse_strict(fixtures::HEXAGON_CHOSEN).unwrap();
    assert_eq!(chosen.calls.len(), 2);
    let rejected = parse_lenient(fixtures::HEXAGON_REJECTED);
    for mode in [CheckMode::SchemaOnly, CheckMode::Referenced] {
        let gold = matches!(mode, CheckMode::Referenced).then_some(chosen.calls.as_slice());
        let findings = check(&rejected, &registry, gold, mode).unwrap();
        assert_eq!(findings.len(), 1, "{mode:?}: expected exactly one finding, got {findings:?}");
        assert_eq!(findings[0].code, ErrorCode::E4RedundantParameter);
        assert_eq!(findings[0].call_index, Some(0));
        assert_eq!(findings[0].param.as_deref(), Some("n"));
    }
    let score = score_case(&rejected.calls, &chosen.calls);
    assert_eq!((score.tp_name, score.tp_full), (2, 1));
    println!(
        "acceptance 2: PASS — one redundant-parameter finding on call 0 param `n` in both modes; tp_name=2 tp_full=1"
    );
}

/// Exhaustive oracle: maximum name-matching cardinality and, among
/// maximum-cardinality matchings, the maximum number of exact-argument
/// pairs. Exponential, fine for ≤4 calls per side.
fn brute_force(pred: &[ToolCall], gold: &[ToolCall]) -> (usize, usize) {
    fn rec(pi: usize, pred: &[ToolCall], gold: &[ToolCall], used: &mut [bool]) -> (usize, usize) {
        if pi == pred.len() {
            return (0, 0);
        }
        let mut best = rec(pi + 1, pred, gold, used);
        for gi in 0..gold.len() {
            if used[gi] || gold[gi].name != pred[pi].name {
                continue;
            }
            used[gi] = true;
            let (c, e) = rec(pi + 1, pred, gold, used);
            used[gi] = false;
            let exact = usize::from(args_eq(&pred[pi].arguments, &gold[gi].arguments));
            best = best.max((c + 1, e + exact));
        }
        best
    }
    rec(0, pred, gold, &mut vec![false; gold.len()])
}

fn random_calls(rng: &mut ChaCha8Rng) -> Vec<ToolCall> {
    let n = rng.random_range(0..=4);
    (0..n)
        .map(|_| {
            let name = ["alpha", "beta", "gamma"][rng.random_range(0..3)].to_string();
            let mut arguments = Map::new();
            for key in ["a", "b"] {
                if rng.random_bool(0.7) {
                    arguments.insert(key.into(), json!(rng.random_range(0..3_i64)));
                }
            }
            ToolCall { name, arguments }
        })
        .collect()
}

#[test]
fn criterion_3_f1_matches_brute_force_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut scores: Vec<CaseScore> = Vec::new();
    for instance in 0..500 {
        let pred = random_calls(&mut rng);
        let gold = random_calls(&mut rng);
        let matching = match_calls(&pred, &gold);
        let exact = matching
            .iter()
            .filter(|&&(p, g)| args_eq(&pred[p].arguments, &gold[g].arguments))
            .count();
        let (oracle_cardinality, oracle_exact) = brute_force(&pred, &gold);
        assert_eq!(matching.len(), oracle_cardinality, "instance {instance}");
        assert_eq!(exact, oracle_exact, "instance {instance}");
        scores.push(score_case(&pred, &gold));
    }
    let result = aggregate(scores.clone());
    let micro = |tp: usize, p: usize, g: usize| 2.0 * tp as f64 / (p + g) as f64;
    let p: usize = scores.iter().map(|s| s.pred_count).sum();
    let g: usize = scores.iter().map(|s| s.gold_count).sum();
    let tp_name: usize = scores.iter().map(|s| s.tp_name).sum();
    let tp_full: usize = scores.iter().map(|s| s.tp_full).sum();
    let f1_name = result.f1_name.unwrap();
    let f1_full = result.f1_full.unwrap();
    assert!((f1_name - micro(tp_name, p, g)).abs() <= 1e-12);
    assert!((f1_full - micro(tp_full, p, g)).abs() <= 1e-12);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "acceptance 3: PASS — 500 instances match the brute-force oracle; f1_name={f1_name:.4} f1_name_param={f1_full:.4} equal the hand micro-average ({elapsed:?})"
    );
}

#[test]
fn criterion_4_losses_at_the_reference_fixed_point() {
    // Uniform model and jittered model alike: all that matters is
    // model == reference and z0 = 0.
    let pair = RefPair::new(vec![0, 1], vec![2, 3, 4], vec![2, 5, 4]).unwrap();
    let uniform = ToyModel::<f64>::uniform(6, 8);
    let pairs = gen_minimal_pairs(&PairGenConfig { groups: 2, per_group: 2, ..Default::default() });
    let jittered = train_toy(&pairs, PrefMethod::Dpo, &KtoConfig::default(), 0, 1.0, 3).unwrap();
    let cfg = KtoConfig { beta: 0.37, lambda_w: 1.3, lambda_l: 0.6, z0: 0.0 };
    for (model, reference, probe) in [
        (&uniform, &uniform, &pair),
        (&jittered.model, &jittered.reference, &pairs[0]),
    ] {
        let dpo = dpo_loss(model, reference, probe, cfg.beta).unwrap();
        assert!((dpo - std::f64::consts::LN_2).abs() <= 1e-12, "dpo {dpo}");
        let (kto, _) = kto_loss(model, reference, probe, &cfg).unwrap();
        assert!((kto - 0.5 * (cfg.lambda_w + cfg.lambda_l)).abs() <= 1e-12, "kto {kto}");
    }
    println!(
        "acceptance 4: PASS — dpo loss = ln 2 and kto loss = (λ_w+λ_l)/2 at model==reference, within 1e-12"
    );
}

fn pair_contexts(pair: &RefPair) -> BTreeSet<Vec<u32>> {
    let mut keys = BTreeSet::new();
    for k in 0..pair.y_w.len() {
        keys.insert(ToyModel::<f64>::context_key(&pair.x, &pair.y_w[..k]));
        keys.insert(ToyModel::<f64>::context_key(&pair.x, &pair.y_l[..k]));
    }
    keys
}

/// Largest relative deviation between the analytic table and central
/// finite differences of `loss`, over every stored logit.
fn fd_worst_error(
    loss: &dyn Fn(&ToyModel<f64>) -> f64,
    model: &ToyModel<f64>,
    analytic: &GradTable<f64>,
) -> f64 {
    const EPS: f64 = 1e-5;
    let mut worst = 0.0_f64;
    for (key, row) in analytic {
        for (j, &grad) in row.iter().enumerate() {
            let mut plus = model.clone();
            plus.row_mut(key)[j] += EPS;
            let mut minus = model.clone();
            minus.row_mut(key)[j] -= EPS;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
            worst = worst.max((fd - grad).abs() / grad.abs().max(1e-3));
        }
    }
    worst
}

#[test]
fn criterion_5_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let vocab = rng.random_range(2..=8_usize);
        let k = rng.random_range(1..=5_usize);
        let prompt_len = rng.random_range(0..=2_usize);
        let x: Vec<u32> = (0..prompt_len).map(|_| rng.random_range(0..vocab as u32)).collect();
        let y_l: Vec<u32> = (0..k).map(|_| rng.random_range(0..vocab as u32)).collect();
        let mut y_w = y_l.clone();
        let i = rng.random_range(0..k);
        y_w[i] = (y_l[i] + rng.random_range(1..vocab as u32)) % vocab as u32;
        let pair = RefPair::new(x, y_w, y_l).unwrap();
        let mut model = ToyModel::<f64>::uniform(vocab, prompt_len + k);
        let mut reference = model.clone();
        for key in pair_contexts(&pair) {
            for slot in model.row_mut(&key) {
                *slot = rng.random_range(-1.5..1.5);
            }
            for slot in reference.row_mut(&key) {
                *slot = rng.random_range(-1.5..1.5);
            }
        }
        let cfg = KtoConfig {
            beta: rng.random_range(0.05..0.6),
            lambda_w: rng.random_range(0.5..1.5),
            lambda_l: rng.random_range(0.5..1.5),
            z0: rng.random_range(-0.5..0.5),
        };
        let (_, dpo_grad) = dpo_gradient(&model, &reference, &pair, cfg.beta).unwrap();
        worst = worst.max(fd_worst_error(
            &|m| dpo_loss(m, &reference, &pair, cfg.beta).unwrap(),
            &model,
            &dpo_grad,
        ));
        let (_, report) = kto_loss(&model, &reference, &pair, &cfg).unwrap();
        worst = worst.max(fd_worst_error(
            &|m| kto_loss(m, &reference, &pair, &cfg).unwrap().0,
            &model,
            &report.grad,
        ));
        let closed = kto_token_gradient(&model, &reference, &pair, &cfg).unwrap();
        assert_eq!(
            closed.keys().collect::<Vec<_>>(),
            report.grad.keys().collect::<Vec<_>>(),
            "closed form must touch the same contexts"
        );
        for (key, row) in &closed {
            for (j, v) in row.iter().enumerate() {
                let generic = report.grad[key][j];
                assert!(
                    (v - generic).abs() <= 1e-8,
                    "closed {v} vs generic {generic} at {key:?}[{j}]"
                );
            }
        }
    }
    assert!(worst <= 1e-4, "max relative finite-difference error {worst:e}");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "acceptance 5: PASS — 100 instances, max relative FD error {worst:.2e} ≤ 1e-4; closed form within 1e-8 ({elapsed:?})"
    );
}

#[test]
fn criterion_6_failure_mode_demonstration() {
    let start = Instant::now();
    let report = run_demo(&DemoConfig::default()).unwrap();
    let a = report.dpo_chosen_logprob_fell();
    let b = report.kto_correct_logit_rose();
    let c = report.minimal_norm_is_smaller();
    assert!(a, "dpo mean chosen log-probability did not fall: {report:?}");
    assert!(b, "kto mean corrected-token logit did not rise: {report:?}");
    assert!(c, "dpo gradient norm on one-token pairs not smaller: {report:?}");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "acceptance 6: PASS — dpo chosen logp fell ({a}), kto correct-token logit rose ({b}), one-token-difference gradient norm smaller ({c}) ({elapsed:?})"
    );
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_callcheck"))
}

fn write_cases(dir: &Path, cases: &[callcheck::ingest::EvalCase]) -> PathBuf {
    let path = dir.join("cases.jsonl");
    let mut buf = String::new();
    for case in cases {
        buf.push_str(&serde_json::to_string(case).unwrap());
        buf.push('\n');
    }
    fs::write(&path, buf).unwrap();
    path
}

#[test]
fn criterion_7_hermetic_conversation_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cases = fixtures::synth_corpus(10);
    let cases_path = write_cases(dir.path(), &cases);

    let mut script = String::new();
    let (mut expect_prompt, mut expect_generated) = (0_u64, 0_u64);
    for (i, case) in cases.iter().enumerate() {
        let text = render(&case.gold);
        let (p1, g1, p2, g2) = (100 + i as u64, 40, 260 + i as u64, 41);
        expect_prompt += p1 + p2;
        expect_generated += g1 + g2;
        for (round, p, g) in [(1, p1, g1), (2, p2, g2)] {
            script.push_str(
                &json!({
                    "tag": format!("{}/round{round}", case.id),
                    "text": text,
                    "usage": {"prompt_tokens": p, "generated_tokens": g},
                })
                .to_string(),
            );
            script.push('\n');
        }
    }
    let script_path = dir.path().join("script.jsonl");
    fs::write(&script_path, script).unwrap();

    let records_path = dir.path().join("records.jsonl");
    let invoke = || -> (String, Vec<u8>) {
        let out = bin()
            .args(["icl", "--cases"])
            .arg(&cases_path)
            .arg("--script")
            .arg(&script_path)
            .arg("--records")
            .arg(&records_path)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "icl failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        (String::from_utf8(out.stdout).unwrap(), fs::read(&records_path).unwrap())
    };
    let (stdout_a, records_a) = invoke();
    let (stdout_b, records_b) = invoke();
    assert_eq!(records_a, records_b, "run records must be byte-identical");
    assert_eq!(stdout_a, stdout_b, "score reports must be byte-identical");

    let report: Value = serde_json::from_str(&stdout_a).unwrap();
    assert_eq!(report["usage"]["prompt_tokens"], json!(expect_prompt));
    assert_eq!(report["usage"]["generated_tokens"], json!(expect_generated));
    assert_eq!(report["f1_name_param"], json!(1.0), "scripted answers equal gold");
    println!(
        "acceptance 7: PASS — two runs byte-identical; usage {expect_prompt}+{expect_generated} tokens equals the script's declared counts"
    );
}

#[test]
fn criterion_8_negative_sample_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cases = fixtures::synth_corpus(300);
    let cases_path = write_cases(dir.path(), &cases);
    let out_path = dir.path().join("pairs.jsonl");
    let invoke = || -> (String, Vec<u8>) {
        let out = bin()
            .args(["gen-neg", "--seed", "5", "--cases"])
            .arg(&cases_path)
            .arg("--out")
            .arg(&out_path)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "gen-neg failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        (String::from_utf8(out.stdout).unwrap(), fs::read(&out_path).unwrap())
    };
    let (stdout_a, bytes_a) = invoke();
    let (stdout_b, bytes_b) = invoke();
    assert_eq!(bytes_a, bytes_b, "pair files must be byte-identical");
    assert_eq!(stdout_a, stdout_b);

    let report: Value = serde_json::from_str(&stdout_a).unwrap();
    let pairs = read_ptc(&out_path).unwrap();
    assert_eq!(report["pairs"], json!(pairs.len()));
    let mut recount: BTreeMap<ErrorCode, usize> = BTreeMap::new();
    for pair in &pairs {
        *recount.entry(pair.injected_error.expect("labelled pairs")).or_insert(0) += 1;
    }
    let mut plan = report["plan"].as_object().unwrap().clone();
    plan.retain(|_, count| count.as_u64() != Some(0));
    assert_eq!(Value::Object(plan), serde_json::to_value(&recount).unwrap());
    println!(
        "acceptance 8: PASS — byte-identical output across runs; {} pairs match the recorded injection plan per code",
        pairs.len()
    );
}

#[test]
fn criterion_9_optional_live_comparison() {
    let endpoint = std::env::var("CALLCHECK_LIVE_ENDPOINT").ok();
    let cases_file = std::env::var("CALLCHECK_LIVE_CASES").ok();
    let has_key = std::env::var("CHAT_API_KEY").is_ok();
    let (Some(endpoint), Some(cases_file), true) = (endpoint, cases_file, has_key) else {
        println!(
            "acceptance 9: PASS — optional live comparison skipped (set CHAT_API_KEY, CALLCHECK_LIVE_ENDPOINT, CALLCHECK_LIVE_CASES to run); never gating"
        );
        return;
    };
    // Restrict to the multi-call subset, where the second round has the
    // most room to help.
    let outcome =
        callcheck::ingest::load_cases(Path::new(&cases_file), &callcheck::ingest::CaseFormat::Unified)
            .expect("live cases readable");
    let multi: Vec<_> = outcome.cases.into_iter().filter(|c| c.gold.len() >= 2).collect();
    if multi.is_empty() {
        println!("acceptance 9: PASS — live comparison skipped (no multi-call cases); never gating");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let cases_path = write_cases(dir.path(), &multi);
    let run_mode = |extra: &[&str]| -> Option<f64> {
        let out = bin()
            .args(["icl", "--cases"])
            .arg(&cases_path)
            .args(["--endpoint", &endpoint])
            .args(extra)
            .output()
            .unwrap();
        if !out.status.success() {
            eprintln!("live run failed: {}", String::from_utf8_lossy(&out.stderr));
            return None;
        }
        let report: Value = serde_json::from_str(std::str::from_utf8(&out.stdout).ok()?).ok()?;
        report["f1_name_param"].as_f64()
    };
    match (run_mode(&["--two-round"]), run_mode(&["--vanilla"])) {
        (Some(two_round), Some(vanilla)) => {
            let direction = if two_round >= vanilla { "confirmed" } else { "NOT confirmed" };
            println!(
                "acceptance 9: PASS — live multi-call f1_name_param two-round {two_round:.4} vs vanilla {vanilla:.4}; direction {direction} (never gating)"
            );
        }
        _ => println!("acceptance 9: PASS — live comparison could not complete; never gating"),
    }
}
