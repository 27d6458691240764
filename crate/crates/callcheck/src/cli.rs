//! Command-line entry point wiring all modules into batch workflows.
//!
//! Subcommands: `check` (run the checker over pair files or model outputs),
//! `gen-local` (per-tool checklists), `gen-neg` (pairwise preference data),
//! `eval` (F1 reports), `icl` (checklist-guided conversations), and
//! `kto-demo` (the preference-optimization failure-mode demonstration).
//!
//! Reports are machine-first: standard output carries exactly one JSON
//! object per run, bulk artifacts go to the files named by flags, and a
//! short human-readable table goes to standard error. Every randomized
//! subcommand takes `--seed` (default 0) and echoes it in the report, so a
//! run is reproducible from its flags and input files alone when using
//! offline or scripted clients.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O error, 3 client
//! error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use crate::callparse::{parse_lenient, parse_strict};
use crate::checker::{self, CheckMode, ErrorCode, ErrorFinding};
use crate::icl::{
    cost_table, run_icl_batch, write_run_records, ChatClient, HttpChatClient, HttpClientConfig,
    IclError, IclOptions, IclRunRecord, PriceConfig, ScriptedClient,
};
use crate::ingest::{self, CaseFormat, EvalCase, IngestError};
use crate::localgen::{self, LocalChecklist, SynthOptions};
use crate::metrics::{self, CaseScore};
use crate::negsample::{self, PerturbPolicy};
use crate::prefopt::{
    self, gen_minimal_pairs, train_toy, write_trajectory_csv, DemoConfig, KtoConfig,
    PairGenConfig, PrefMethod,
};
use crate::toolspec::{parse_tool_spec, registry_from_specs, ToolSpec};

/// Parsed command line.
#[derive(Debug, Parser)]
#[command(
    name = "callcheck",
    version,
    about = "Checklist-driven validation, data synthesis, and evaluation for tool calling"
)]
pub struct RunConfig {
    /// Seed for every randomized step; echoed in the report.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Maximum concurrent chat requests.
    #[arg(long, global = true, default_value_t = 4)]
    pub concurrency: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check answers against the error checklist and report a histogram.
    Check(CheckArgs),
    /// Generate per-tool local error checklists.
    GenLocal(GenLocalArgs),
    /// Generate pairwise preference data by error injection.
    GenNeg(GenNegArgs),
    /// Score predictions against gold calls (F1 name / name+parameter).
    Eval(EvalArgs),
    /// Run checklist-guided conversations through a chat client.
    Icl(IclArgs),
    /// Train the toy preference models and report the failure-mode verdicts.
    KtoDemo(KtoDemoArgs),
}

#[derive(Clone, Copy, Debug, Eq, PartialEq, ValueEnum)]
enum ModeArg {
    /// Judge from tool specs alone.
    Schema,
    /// Additionally compare against reference calls.
    Referenced,
}

impl From<ModeArg> for CheckMode {
    fn from(mode: ModeArg) -> CheckMode {
        match mode {
            ModeArg::Schema => CheckMode::SchemaOnly,
            ModeArg::Referenced => CheckMode::Referenced,
        }
    }
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Preference-pair JSONL: each rejected answer is checked against the
    /// tools embedded in its prompt (and, in referenced mode, the chosen
    /// answer as reference).
    #[arg(long, conflicts_with_all = ["cases", "outputs"])]
    ptc: Option<PathBuf>,
    /// Benchmark cases (unified JSONL); requires --outputs.
    #[arg(long, requires = "outputs")]
    cases: Option<PathBuf>,
    /// Model outputs JSONL `{"id", "output"}` matched to --cases by id.
    #[arg(long, requires = "cases")]
    outputs: Option<PathBuf>,
    /// What context the checker may use.
    #[arg(long, value_enum, default_value_t = ModeArg::Schema)]
    mode: ModeArg,
    /// Write one JSON line per finding here.
    #[arg(long)]
    findings: Option<PathBuf>,
    /// Exit 1 when any finding is reported.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct GenLocalArgs {
    /// JSON file with an array of tool specs.
    #[arg(long)]
    tools: Option<PathBuf>,
    /// Collect the distinct tools of a case file instead.
    #[arg(long)]
    cases: Option<PathBuf>,
    /// Directory receiving one `<tool>.json` checklist per tool.
    #[arg(long)]
    out_dir: PathBuf,
    /// Scripted chat client JSONL (tags `checklist/<tool>`).
    #[arg(long, conflicts_with = "endpoint")]
    script: Option<PathBuf>,
    /// HTTP chat-completions endpoint (credentials via CHAT_API_KEY).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model id for the HTTP client.
    #[arg(long, default_value = "default")]
    model: String,
    /// Offline synthesis: also include a wrong-tool-name entry.
    #[arg(long)]
    include_wrong_name: bool,
}

#[derive(Args, Debug)]
struct GenNegArgs {
    /// Benchmark cases (unified JSONL).
    #[arg(long)]
    cases: PathBuf,
    /// Output preference-pair JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Error codes to allow (e.g. E0,E1,E4); default all eight.
    #[arg(long, value_delimiter = ',')]
    codes: Vec<String>,
    /// Draw weights per code as code=weight (e.g. E4=2.0); default 1.0.
    #[arg(long, value_delimiter = ',')]
    weight: Vec<String>,
    /// Process at most this many cases.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Gold cases (unified JSONL).
    #[arg(long)]
    gold: PathBuf,
    /// Predictions JSONL `{"id", "output"}`; output is parsed leniently.
    #[arg(long, conflicts_with = "runs")]
    pred: Option<PathBuf>,
    /// Conversation run records JSONL; final calls are scored.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Optional per-case CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IclArgs {
    /// Benchmark cases (unified JSONL).
    #[arg(long)]
    cases: PathBuf,
    /// Scripted chat client JSONL (tags `<case>/round1`, `<case>/round2`).
    #[arg(long, conflicts_with = "endpoint")]
    script: Option<PathBuf>,
    /// HTTP chat-completions endpoint (credentials via CHAT_API_KEY).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model id for the HTTP client.
    #[arg(long, default_value = "default")]
    model: String,
    /// Sampling temperature for the HTTP client.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Generation cap per completion for the HTTP client.
    #[arg(long, default_value_t = 1024)]
    max_tokens: u64,
    /// Two rounds with global and local checklists (the default mode).
    #[arg(long, conflicts_with_all = ["no_local", "vanilla"])]
    two_round: bool,
    /// Ablation: global checklist only, no second round.
    #[arg(long, conflicts_with = "vanilla")]
    no_local: bool,
    /// Baseline: no checklists, single round.
    #[arg(long)]
    vanilla: bool,
    /// Local checklist JSON files; defaults to offline synthesis per tool.
    #[arg(long = "checklist")]
    checklists: Vec<PathBuf>,
    /// Write run records here as JSONL.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Abort a case when its total tokens exceed this cap.
    #[arg(long)]
    budget: Option<u64>,
    /// Price per 1,000 prompt tokens (enables the currency column).
    #[arg(long)]
    price_in: Option<f64>,
    /// Price per 1,000 generated tokens.
    #[arg(long)]
    price_out: Option<f64>,
}

#[derive(Clone, Copy, Debug, Eq, PartialEq, ValueEnum)]
enum MethodArg {
    /// Train both methods and compare (full demonstration).
    Both,
    /// Direct preference optimization only.
    Dpo,
    /// Kahneman–Tversky optimization only.
    Kto,
}

#[derive(Args, Debug)]
struct KtoDemoArgs {
    /// Which loss to train.
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,
    /// Total number of shared-draft preference pairs.
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    /// Gradient-descent steps.
    #[arg(long, default_value_t = 300)]
    steps: usize,
    /// Inverse temperature β shared by both losses.
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// Gradient-descent learning rate.
    #[arg(long, default_value_t = 1.0)]
    learning_rate: f64,
    /// Directory for trajectory CSV files (default: current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
enum CmdError {
    /// Bad inputs or violated invariants (exit 1).
    Validation(String),
    /// The filesystem failed (exit 2).
    Io(String),
    /// The chat client failed (exit 3).
    Client(String),
}

impl CmdError {
    fn exit_code(&self) -> i32 {
        match self {
            CmdError::Validation(_) => 1,
            CmdError::Io(_) => 2,
            CmdError::Client(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CmdError::Validation(m) | CmdError::Io(m) | CmdError::Client(m) => m,
        }
    }
}

/// Parses the process arguments, runs the subcommand, and returns the exit
/// code for the process.
pub fn run() -> i32 {
    // Fold clap's own exit convention into the documented one: usage
    // errors are validation failures (1), help/version output is success.
    let config = match RunConfig::try_parse() {
        Ok(config) => config,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(config: &RunConfig) -> Result<i32, CmdError> {
    match &config.command {
        Command::Check(args) => cmd_check(config, args),
        Command::GenLocal(args) => cmd_gen_local(config, args),
        Command::GenNeg(args) => cmd_gen_neg(config, args),
        Command::Eval(args) => cmd_eval(config, args),
        Command::Icl(args) => cmd_icl(config, args),
        Command::KtoDemo(args) => cmd_kto_demo(config, args),
    }
}

fn emit_report(report: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(report).expect("reports always serialize"));
}

fn table(rows: &[(&str, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (key, value) in rows {
        eprintln!("  {key:width$}  {value}");
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CmdError {
    CmdError::Io(format!("{}: {e}", path.display()))
}

fn load_cases_or_empty(path: &Path) -> Result<Vec<EvalCase>, CmdError> {
    match ingest::load_cases(path, &CaseFormat::Unified) {
        Ok(out) => {
            for skip in &out.skipped {
                eprintln!("warning: {} line {}: {}", path.display(), skip.line, skip.reason);
            }
            Ok(out.cases)
        }
        Err(IngestError::EmptyDataset { skipped: 0 }) => Ok(Vec::new()),
        Err(e @ IngestError::UnreadableFile { .. }) => Err(CmdError::Io(e.to_string())),
        Err(e) => Err(CmdError::Validation(e.to_string())),
    }
}

fn parse_code(text: &str) -> Result<ErrorCode, CmdError> {
    let trimmed = text.trim().trim_start_matches(['E', 'e']);
    trimmed
        .parse::<u8>()
        .ok()
        .and_then(ErrorCode::from_index)
        .ok_or_else(|| CmdError::Validation(format!("not an error code: `{text}`")))
}

/// One finding as a JSONL line, prefixed with the id it belongs to.
fn finding_line(id: &str, finding: &ErrorFinding) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("id".into(), json!(id));
    if let serde_json::Value::Object(fields) =
        serde_json::to_value(finding).expect("findings always serialize")
    {
        obj.extend(fields);
    }
    serde_json::Value::Object(obj).to_string()
}

fn cmd_check(config: &RunConfig, args: &CheckArgs) -> Result<i32, CmdError> {
    // (id, findings) per checked answer.
    let mut checked: Vec<(String, Vec<ErrorFinding>)> = Vec::new();
    let mode: CheckMode = args.mode.into();
    if let Some(path) = &args.ptc {
        let pairs = ingest::read_ptc(path).map_err(|e| CmdError::Io(e.to_string()))?;
        for (idx, pair) in pairs.iter().enumerate() {
            let tools = ingest::tools_from_prompt(&pair.prompt);
            let registry = registry_from_specs(&tools);
            let gold = match mode {
                CheckMode::Referenced => Some(
                    parse_strict(&pair.chosen)
                        .map_err(|e| {
                            CmdError::Validation(format!("pair {idx}: chosen does not parse: {e}"))
                        })?
                        .calls,
                ),
                CheckMode::SchemaOnly => None,
            };
            let outcome = parse_lenient(&pair.rejected);
            let findings = checker::check(&outcome, &registry, gold.as_deref(), mode)
                .map_err(|e| CmdError::Validation(format!("pair {idx}: {e}")))?;
            checked.push((format!("pair-{idx}"), findings));
        }
    } else if let (Some(cases_path), Some(outputs_path)) = (&args.cases, &args.outputs) {
        #[derive(Deserialize)]
        struct PredRecord {
            id: String,
            output: String,
        }
        let cases = load_cases_or_empty(cases_path)?;
        let text = fs::read_to_string(outputs_path).map_err(|e| io_err(outputs_path, e))?;
        let mut outputs: BTreeMap<String, String> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: PredRecord = serde_json::from_str(line).map_err(|e| {
                CmdError::Validation(format!("{} line {}: {e}", outputs_path.display(), idx + 1))
            })?;
            outputs.insert(record.id, record.output);
        }
        for case in &cases {
            let Some(output) = outputs.get(&case.id) else {
                eprintln!("warning: no output for case `{}`", case.id);
                continue;
            };
            let registry = registry_from_specs(&case.tools);
            let gold = matches!(mode, CheckMode::Referenced).then_some(case.gold.as_slice());
            let outcome = parse_lenient(output);
            let findings = checker::check(&outcome, &registry, gold, mode)
                .map_err(|e| CmdError::Validation(format!("case `{}`: {e}", case.id)))?;
            checked.push((case.id.clone(), findings));
        }
    } else {
        return Err(CmdError::Validation(
            "nothing to check: pass --ptc or --cases with --outputs".into(),
        ));
    }

    let per_answer: Vec<Vec<ErrorFinding>> = checked.iter().map(|(_, f)| f.clone()).collect();
    let histogram = checker::error_histogram(&per_answer);
    let total: usize = histogram.values().sum();
    if let Some(path) = &args.findings {
        let mut buf = String::new();
        for (id, findings) in &checked {
            for finding in findings {
                buf.push_str(&finding_line(id, finding));
                buf.push('\n');
            }
        }
        fs::write(path, buf).map_err(|e| io_err(path, e))?;
    }
    emit_report(&json!({
        "seed": config.seed,
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "answers": checked.len(),
        "findings": total,
        "histogram": histogram,
    }));
    eprintln!("check:");
    let mut rows = vec![
        ("answers", checked.len().to_string()),
        ("findings", total.to_string()),
    ];
    for (code, count) in &histogram {
        if *count > 0 {
            rows.push(("", format!("{code} {}: {count}", code.title())));
        }
    }
    table(&rows);
    Ok(if args.strict && total > 0 { 1 } else { 0 })
}

fn cmd_gen_local(config: &RunConfig, args: &GenLocalArgs) -> Result<i32, CmdError> {
    let mut tools: Vec<ToolSpec> = Vec::new();
    if let Some(path) = &args.tools {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let raw: Vec<serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| CmdError::Validation(format!("{}: {e}", path.display())))?;
        for value in &raw {
            tools.push(
                parse_tool_spec(value)
                    .map_err(|e| CmdError::Validation(format!("{}: {e}", path.display())))?,
            );
        }
    }
    if let Some(path) = &args.cases {
        let cases = load_cases_or_empty(path)?;
        let mut by_name: BTreeMap<String, ToolSpec> = BTreeMap::new();
        for case in cases {
            for tool in case.tools {
                by_name.entry(tool.name.clone()).or_insert(tool);
            }
        }
        tools.extend(by_name.into_values());
    }
    tools.sort_by(|a, b| a.name.cmp(&b.name));
    tools.dedup_by(|a, b| a.name == b.name);
    if tools.is_empty() {
        eprintln!("warning: no tools to generate checklists for");
        emit_report(&json!({"seed": config.seed, "tools": 0, "files": []}));
        return Ok(0);
    }

    let client: Option<Box<dyn ChatClient>> = if let Some(path) = &args.script {
        Some(Box::new(
            ScriptedClient::from_path(path).map_err(|e| CmdError::Client(e.to_string()))?,
        ))
    } else {
        args.endpoint.as_ref().map(|endpoint| {
            Box::new(HttpChatClient::new(HttpClientConfig {
                endpoint: endpoint.clone(),
                model: args.model.clone(),
                ..HttpClientConfig::default()
            })) as Box<dyn ChatClient>
        })
    };

    fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let mut files = Vec::new();
    let mut dropped = Vec::new();
    for (index, tool) in tools.iter().enumerate() {
        let checklist: LocalChecklist = match &client {
            Some(client) => {
                let parsed = localgen::generate_checklist(client.as_ref(), tool)
                    .map_err(|e| CmdError::Client(format!("tool `{}`: {e}", tool.name)))?;
                for drop in &parsed.dropped {
                    dropped.push(json!({
                        "tool": tool.name,
                        "heading": drop.heading,
                        "reason": drop.reason,
                    }));
                }
                parsed.checklist
            }
            None => localgen::synth_checklist(
                tool,
                config.seed.wrapping_add(index as u64),
                SynthOptions { include_wrong_tool_name: args.include_wrong_name },
            ),
        };
        let name = tool.name.replace(['/', '\\'], "_");
        let path = args.out_dir.join(format!("{name}.json"));
        let text =
            serde_json::to_string_pretty(&checklist).expect("checklists always serialize");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        files.push(path.display().to_string());
    }
    emit_report(&json!({
        "seed": config.seed,
        "tools": tools.len(),
        "files": files,
        "dropped": dropped,
    }));
    eprintln!("gen-local:");
    table(&[
        ("tools", tools.len().to_string()),
        ("files", files.len().to_string()),
        ("dropped entries", dropped.len().to_string()),
        ("seed", config.seed.to_string()),
    ]);
    Ok(0)
}

fn cmd_gen_neg(config: &RunConfig, args: &GenNegArgs) -> Result<i32, CmdError> {
    let mut cases = load_cases_or_empty(&args.cases)?;
    if let Some(limit) = args.limit {
        cases.truncate(limit);
    }
    let mut policy = if args.codes.is_empty() {
        PerturbPolicy::uniform(config.seed)
    } else {
        let mut codes = std::collections::BTreeSet::new();
        for text in &args.codes {
            codes.insert(parse_code(text)?);
        }
        PerturbPolicy::with_codes(codes, config.seed)
    };
    for entry in &args.weight {
        let (code_text, weight_text) = entry.split_once('=').ok_or_else(|| {
            CmdError::Validation(format!("weight `{entry}` is not code=value"))
        })?;
        let code = parse_code(code_text)?;
        let weight: f64 = weight_text
            .trim()
            .parse()
            .map_err(|e| CmdError::Validation(format!("weight `{entry}`: {e}")))?;
        policy.weights.insert(code, weight);
    }
    let build = negsample::build_ptc(&cases, &policy);
    ingest::write_ptc(&build.pairs, &args.out).map_err(|e| match e {
        IngestError::UnreadableFile { .. } => CmdError::Io(e.to_string()),
        other => CmdError::Validation(other.to_string()),
    })?;
    for skip in &build.skipped {
        eprintln!("warning: case `{}` skipped: {}", skip.id, skip.reason);
    }
    emit_report(&json!({
        "seed": config.seed,
        "cases": cases.len(),
        "pairs": build.pairs.len(),
        "skipped": build.skipped.len(),
        "plan": build.plan,
        "out": args.out.display().to_string(),
    }));
    eprintln!("gen-neg:");
    let mut rows = vec![
        ("cases", cases.len().to_string()),
        ("pairs", build.pairs.len().to_string()),
        ("skipped", build.skipped.len().to_string()),
        ("seed", config.seed.to_string()),
    ];
    for (code, count) in &build.plan {
        rows.push(("", format!("{code} {}: {count}", code.title())));
    }
    table(&rows);
    Ok(0)
}

fn cmd_eval(config: &RunConfig, args: &EvalArgs) -> Result<i32, CmdError> {
    let gold_cases = load_cases_or_empty(&args.gold)?;
    let mut predictions: BTreeMap<String, Vec<crate::callparse::ToolCall>> = BTreeMap::new();
    if let Some(path) = &args.pred {
        #[derive(Deserialize)]
        struct PredRecord {
            id: String,
            output: String,
        }
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: PredRecord = serde_json::from_str(line).map_err(|e| {
                CmdError::Validation(format!("{} line {}: {e}", path.display(), idx + 1))
            })?;
            predictions.insert(record.id, parse_lenient(&record.output).calls);
        }
    } else if let Some(path) = &args.runs {
        let records = crate::icl::read_run_records(path).map_err(|e| io_err(path, e))?;
        for record in records {
            predictions.insert(record.id, record.final_calls);
        }
    } else {
        return Err(CmdError::Validation("pass --pred or --runs".into()));
    }

    let empty: Vec<crate::callparse::ToolCall> = Vec::new();
    let mut per_case_ids = Vec::new();
    let mut scores: Vec<CaseScore> = Vec::new();
    for case in &gold_cases {
        let pred = predictions.get(&case.id).unwrap_or(&empty);
        per_case_ids.push(case.id.clone());
        scores.push(metrics::score_case(pred, &case.gold));
    }
    let result = metrics::aggregate(scores);
    if let Some(path) = &args.csv {
        let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
        writer
            .write_record([
                "id", "pred_count", "gold_count", "tp_name", "tp_full", "f1_name", "f1_full",
            ])
            .map_err(|e| io_err(path, e))?;
        for (id, score) in per_case_ids.iter().zip(&result.per_case) {
            writer
                .write_record([
                    id.clone(),
                    score.pred_count.to_string(),
                    score.gold_count.to_string(),
                    score.tp_name.to_string(),
                    score.tp_full.to_string(),
                    score.f1_name().to_string(),
                    score.f1_full().to_string(),
                ])
                .map_err(|e| io_err(path, e))?;
        }
        writer.flush().map_err(|e| io_err(path, e))?;
    }
    let per_case: Vec<serde_json::Value> = per_case_ids
        .iter()
        .zip(&result.per_case)
        .map(|(id, s)| {
            json!({
                "id": id,
                "pred_count": s.pred_count,
                "gold_count": s.gold_count,
                "tp_name": s.tp_name,
                "tp_full": s.tp_full,
                "f1_name": s.f1_name(),
                "f1_full": s.f1_full(),
            })
        })
        .collect();
    emit_report(&json!({
        "seed": config.seed,
        "cases": result.cases(),
        "f1_name": result.f1_name,
        "f1_name_param": result.f1_full,
        "counts": {
            "tp_name": result.tp_name, "fp_name": result.fp_name, "fn_name": result.fn_name,
            "tp_full": result.tp_full, "fp_full": result.fp_full, "fn_full": result.fn_full,
        },
        "per_case": per_case,
    }));
    eprintln!("eval:");
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    table(&[
        ("cases", result.cases().to_string()),
        ("f1 name", fmt(result.f1_name)),
        ("f1 name+param", fmt(result.f1_full)),
    ]);
    Ok(0)
}

fn cmd_icl(config: &RunConfig, args: &IclArgs) -> Result<i32, CmdError> {
    let cases = load_cases_or_empty(&args.cases)?;
    let client: Box<dyn ChatClient> = if let Some(path) = &args.script {
        Box::new(ScriptedClient::from_path(path).map_err(|e| CmdError::Client(e.to_string()))?)
    } else if let Some(endpoint) = &args.endpoint {
        Box::new(HttpChatClient::new(HttpClientConfig {
            endpoint: endpoint.clone(),
            model: args.model.clone(),
            temperature: args.temperature,
            max_tokens: args.max_tokens,
            ..HttpClientConfig::default()
        }))
    } else {
        return Err(CmdError::Validation("pass --script or --endpoint".into()));
    };

    let (two_round, with_global, mode_name) = if args.vanilla {
        (false, false, "vanilla")
    } else if args.no_local {
        (false, true, "no-local")
    } else {
        (true, true, "two-round")
    };

    let checklists: Vec<LocalChecklist> = if two_round {
        if args.checklists.is_empty() {
            let mut by_name: BTreeMap<String, ToolSpec> = BTreeMap::new();
            for case in &cases {
                for tool in &case.tools {
                    by_name.entry(tool.name.clone()).or_insert_with(|| tool.clone());
                }
            }
            by_name
                .into_values()
                .enumerate()
                .map(|(i, tool)| {
                    localgen::synth_checklist_offline(&tool, config.seed.wrapping_add(i as u64))
                })
                .collect()
        } else {
            let mut loaded = Vec::new();
            for path in &args.checklists {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                loaded.push(serde_json::from_str(&text).map_err(|e| {
                    CmdError::Validation(format!("{}: {e}", path.display()))
                })?);
            }
            loaded
        }
    } else {
        Vec::new()
    };

    let options = IclOptions { two_round, with_global, checklists, budget: args.budget };
    let results = run_icl_batch(&cases, client.as_ref(), &options, config.concurrency);
    let mut records: Vec<IclRunRecord> = Vec::with_capacity(results.len());
    for result in results {
        match result {
            Ok(record) => records.push(record),
            Err(IclError::BudgetExceeded { used, budget }) => {
                return Err(CmdError::Validation(format!(
                    "token budget exceeded: used {used} of {budget}"
                )))
            }
            Err(e) => return Err(CmdError::Client(e.to_string())),
        }
    }
    if let Some(path) = &args.records {
        write_run_records(&records, path).map_err(|e| io_err(path, e))?;
    }

    let scores: Vec<CaseScore> = cases
        .iter()
        .zip(&records)
        .map(|(case, record)| metrics::score_case(&record.final_calls, &case.gold))
        .collect();
    let result = metrics::aggregate(scores);
    let prices = args
        .price_in
        .zip(args.price_out)
        .map(|(input_per_1k, output_per_1k)| PriceConfig { input_per_1k, output_per_1k });
    let costs = cost_table(&records, prices);
    emit_report(&json!({
        "seed": config.seed,
        "mode": mode_name,
        "cases": records.len(),
        "f1_name": result.f1_name,
        "f1_name_param": result.f1_full,
        "usage": {
            "prompt_tokens": costs.prompt_tokens,
            "generated_tokens": costs.generated_tokens,
        },
        "cost": costs,
        "records": args.records.as_ref().map(|p| p.display().to_string()),
    }));
    eprintln!("icl ({mode_name}):");
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    let mut rows = vec![
        ("cases", records.len().to_string()),
        ("f1 name", fmt(result.f1_name)),
        ("f1 name+param", fmt(result.f1_full)),
        ("prompt tokens", costs.prompt_tokens.to_string()),
        ("generated tokens", costs.generated_tokens.to_string()),
    ];
    if let Some(cost) = costs.cost_per_case {
        rows.push(("cost per case", format!("{cost:.6}")));
    }
    table(&rows);
    Ok(0)
}

fn cmd_kto_demo(config: &RunConfig, args: &KtoDemoArgs) -> Result<i32, CmdError> {
    let groups = 10usize;
    let per_group = args.pairs.div_ceil(groups).max(1);
    let pair_gen = PairGenConfig {
        groups,
        per_group,
        seed: config.seed,
        ..PairGenConfig::default()
    };
    let kto = KtoConfig { beta: args.beta, ..KtoConfig::default() };
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let write_csv = |name: &str, rows: &[prefopt::TrajectoryRow<f64>]| -> Result<String, CmdError> {
        let path = out_dir.join(name);
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_trajectory_csv(rows, file).map_err(|e| io_err(&path, e))?;
        Ok(path.display().to_string())
    };
    let report = match args.method {
        MethodArg::Both => {
            let demo_config = DemoConfig {
                pair_gen,
                steps: args.steps,
                learning_rate: args.learning_rate,
                kto,
                train_seed: config.seed,
            };
            let demo = prefopt::run_demo(&demo_config)
                .map_err(|e| CmdError::Validation(e.to_string()))?;
            let dpo_csv = write_csv("dpo_trajectory.csv", &demo.dpo_trajectory)?;
            let kto_csv = write_csv("kto_trajectory.csv", &demo.kto_trajectory)?;
            let dpo_first = demo.dpo_trajectory.first().expect("trajectory non-empty");
            let dpo_last = demo.dpo_trajectory.last().expect("trajectory non-empty");
            eprintln!("kto-demo (both):");
            table(&[
                ("pairs", (groups * per_group).to_string()),
                ("steps", args.steps.to_string()),
                ("dpo chosen logp", format!("{:.4} -> {:.4}", dpo_first.logp_chosen, dpo_last.logp_chosen)),
                ("kto correct logit", format!("{:.4} -> {:.4}", demo.kto_correct_logit_first, demo.kto_correct_logit_last)),
                ("dpo grad norm", format!("minimal {:.4} vs divergent {:.4}", demo.dpo_norm_minimal, demo.dpo_norm_divergent)),
                ("seed", config.seed.to_string()),
            ]);
            json!({
                "seed": config.seed,
                "method": "both",
                "pairs": groups * per_group,
                "steps": args.steps,
                "trajectories": {"dpo": dpo_csv, "kto": kto_csv},
                "dpo_chosen_logp": {"first": dpo_first.logp_chosen, "last": dpo_last.logp_chosen},
                "kto_correct_logit": {
                    "first": demo.kto_correct_logit_first,
                    "last": demo.kto_correct_logit_last,
                },
                "dpo_grad_norm": {
                    "minimal_pairs": demo.dpo_norm_minimal,
                    "divergent_pairs": demo.dpo_norm_divergent,
                },
                "verdicts": {
                    "dpo_chosen_logprob_fell": demo.dpo_chosen_logprob_fell(),
                    "kto_correct_logit_rose": demo.kto_correct_logit_rose(),
                    "minimal_grad_norm_smaller": demo.minimal_norm_is_smaller(),
                },
            })
        }
        MethodArg::Dpo | MethodArg::Kto => {
            let method = if args.method == MethodArg::Dpo { PrefMethod::Dpo } else { PrefMethod::Kto };
            let pairs = gen_minimal_pairs(&pair_gen);
            let run = train_toy(&pairs, method, &kto, args.steps, args.learning_rate, config.seed)
                .map_err(|e| CmdError::Validation(e.to_string()))?;
            let csv_path = write_csv(&format!("{method}_trajectory.csv"), &run.trajectory)?;
            let first = run.trajectory.first().expect("trajectory non-empty");
            let last = run.trajectory.last().expect("trajectory non-empty");
            let logit_shift = prefopt::mean_correct_token_logit(&run.model, &pairs)
                .and_then(|after| {
                    prefopt::mean_correct_token_logit(&run.reference, &pairs)
                        .map(|before| (before, after))
                })
                .map_err(|e| CmdError::Validation(e.to_string()))?;
            eprintln!("kto-demo ({method}):");
            table(&[
                ("pairs", pairs.len().to_string()),
                ("steps", args.steps.to_string()),
                ("loss", format!("{:.4} -> {:.4}", first.loss, last.loss)),
                ("chosen logp", format!("{:.4} -> {:.4}", first.logp_chosen, last.logp_chosen)),
                ("seed", config.seed.to_string()),
            ]);
            json!({
                "seed": config.seed,
                "method": method.to_string(),
                "pairs": pairs.len(),
                "steps": args.steps,
                "trajectory": csv_path,
                "loss": {"first": first.loss, "last": last.loss},
                "chosen_logp": {"first": first.logp_chosen, "last": last.logp_chosen},
                "rejected_logp": {"first": first.logp_rejected, "last": last.logp_rejected},
                "correct_token_logit": {"first": logit_shift.0, "last": logit_shift.1},
            })
        }
    };
    emit_report(&report);
    Ok(0)
}
