//! Unified benchmark-case loading and the pairwise preference (PTC) file
//! format.
//!
//! Both interchange formats are JSON-lines, one record per line:
//!
//! ```text
//! case: {"id", "query", "tools": [ToolSpec...],
//!        "gold": [{"name", "arguments"}...],
//!        "context": [{"role", "content"}...]?}
//! pair: {"prompt", "chosen", "rejected", "injected_error",
//!        "labels": {"chosen": true, "rejected": false}}
//! ```
//!
//! Loading is tolerant: malformed lines are collected as skip records rather
//! than aborting, so one bad record cannot sink a large generation run.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::callparse::{self, ToolCall};
use crate::checker::ErrorCode;
use crate::icl::ChatMessage;
use crate::toolspec::{parse_tool_spec, ToolSpec};

/// Errors from loading or writing interchange files.
#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    /// The file could not be opened or read.
    #[error("cannot read `{path}`: {reason}")]
    UnreadableFile {
        /// Offending path.
        path: String,
        /// Underlying I/O failure.
        reason: String,
    },
    /// The file contained zero valid records.
    #[error("no valid records ({skipped} line(s) skipped)")]
    EmptyDataset {
        /// How many lines were rejected.
        skipped: usize,
    },
    /// The requested input adapter is not built in.
    #[error("unknown input adapter `{0}` (only `unified` is built in)")]
    UnknownAdapter(String),
    /// A preference pair failed its own invariants on write.
    #[error("invalid preference pair: {0}")]
    InvariantViolation(String),
}

/// One benchmark item: a query, the candidate tools, and the gold calls.
#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
pub struct EvalCase {
    /// Stable case identifier.
    pub id: String,
    /// The user query.
    pub query: String,
    /// Candidate tools offered to the model.
    pub tools: Vec<ToolSpec>,
    /// Reference calls; may be empty (the explicit no-call convention).
    pub gold: Vec<ToolCall>,
    /// Optional prior-turn messages injected as predefined context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<ChatMessage>>,
}

/// Boolean labels attached to a preference pair.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Serialize)]
pub struct PairLabels {
    /// Label for the chosen answer (conventionally true).
    pub chosen: bool,
    /// Label for the rejected answer (conventionally false).
    pub rejected: bool,
}

impl Default for PairLabels {
    fn default() -> Self {
        PairLabels { chosen: true, rejected: false }
    }
}

/// One pairwise preference record: a prompt with a correct and an incorrect
/// tool-calling answer.
#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
pub struct PreferencePair {
    /// The full task prompt (instructions, tools, query).
    pub prompt: String,
    /// The correct answer in canonical array form.
    pub chosen: String,
    /// The answer with one injected checklist error.
    pub rejected: String,
    /// Which error was injected, when known.
    #[serde(default)]
    pub injected_error: Option<ErrorCode>,
    /// Pair labels; chosen=true, rejected=false by construction.
    #[serde(default)]
    pub labels: PairLabels,
}

/// Reason a line was skipped during loading.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkipRecord {
    /// 1-based line number in the source file.
    pub line: usize,
    /// Human-readable reason.
    pub reason: String,
}

/// Cases accepted from a file plus the lines that were not.
#[derive(Clone, Debug, Default)]
pub struct LoadOutcome {
    /// Valid cases in file order.
    pub cases: Vec<EvalCase>,
    /// Rejected lines with reasons, in file order.
    pub skipped: Vec<SkipRecord>,
}

/// Input format selector for [`load_cases`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CaseFormat {
    /// The unified JSONL schema (the native contract).
    Unified,
    /// A named adapter for an upstream benchmark layout (none built in).
    Adapter(String),
}

/// Loads benchmark cases from a JSON-lines file.
///
/// Returns cases in file order. Per-line failures (bad JSON, missing fields,
/// gold calls naming tools absent from `tools`) become [`SkipRecord`]s
/// instead of errors; blank lines are ignored. Fails only when the file is
/// unreadable or contains zero valid records.
pub fn load_cases(path: &Path, format: &CaseFormat) -> Result<LoadOutcome, IngestError> {
    if let CaseFormat::Adapter(name) = format {
        return Err(IngestError::UnknownAdapter(name.clone()));
    }
    let text = fs::read_to_string(path).map_err(|e| IngestError::UnreadableFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut out = LoadOutcome::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalCase>(line) {
            Ok(case) => match violated_case_invariant(&case) {
                None => out.cases.push(case),
                Some(reason) => out.skipped.push(SkipRecord { line: idx + 1, reason }),
            },
            Err(e) => out.skipped.push(SkipRecord { line: idx + 1, reason: e.to_string() }),
        }
    }
    if out.cases.is_empty() {
        return Err(IngestError::EmptyDataset { skipped: out.skipped.len() });
    }
    Ok(out)
}

/// Returns why a case violates its invariants, or None when it is sound.
fn violated_case_invariant(case: &EvalCase) -> Option<String> {
    if case.id.is_empty() {
        return Some("empty case id".into());
    }
    for call in &case.gold {
        if !case.tools.iter().any(|t| t.name == call.name) {
            return Some(format!("gold call names unknown tool `{}`", call.name));
        }
    }
    None
}

/// Writes preference pairs as JSON-lines after validating pair invariants:
/// chosen must differ from rejected and must itself be a clean canonical
/// call array (strict parse; plus zero schema findings when the prompt
/// carries a recoverable tool list).
pub fn write_ptc(pairs: &[PreferencePair], path: &Path) -> Result<(), IngestError> {
    let mut buf = Vec::new();
    for pair in pairs {
        if pair.chosen == pair.rejected {
            return Err(IngestError::InvariantViolation("chosen equals rejected".into()));
        }
        let outcome = callparse::parse_strict(&pair.chosen)
            .map_err(|e| IngestError::InvariantViolation(format!("chosen does not parse: {e}")))?;
        let tools = tools_from_prompt(&pair.prompt);
        if !tools.is_empty() {
            let registry = crate::toolspec::registry_from_specs(&tools);
            let findings = crate::checker::check(
                &outcome,
                &registry,
                None,
                crate::checker::CheckMode::SchemaOnly,
            )
            .expect("schema-only mode needs no gold");
            if !findings.is_empty() {
                return Err(IngestError::InvariantViolation(format!(
                    "chosen answer is not clean: {}",
                    findings[0].message
                )));
            }
        }
        let line = serde_json::to_string(pair).expect("pairs always serialize");
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| IngestError::UnreadableFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    file.write_all(&buf).map_err(|e| IngestError::UnreadableFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Reads preference pairs from a JSON-lines file. Inverse of [`write_ptc`]:
/// `read_ptc(write_ptc(x)) == x` element-wise.
pub fn read_ptc(path: &Path) -> Result<Vec<PreferencePair>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::UnreadableFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PreferencePair>(line) {
            Ok(p) => pairs.push(p),
            Err(_) => skipped += 1,
        }
    }
    if pairs.is_empty() && skipped > 0 {
        return Err(IngestError::EmptyDataset { skipped });
    }
    Ok(pairs)
}

/// The task instruction block: assistant role, the serialized tool list,
/// and the output-format contract — everything in the task prompt except
/// the query itself. Also serves as the conversation system message.
pub fn render_task_instructions(tools: &[ToolSpec]) -> String {
    let tool_json = serde_json::to_string(tools).expect("tool specs always serialize");
    format!(
        "You are a tool calling assistant. In order to complete the user's request, \
you need to select one or more appropriate tools from the following tools and fill in \
the correct values for the tool parameters. Your specific tasks are:\n\
1. Make one or more function/tool calls to meet the request based on the question.\n\
2. If none of the function can be used, point it out and refuse to answer.\n\
3. If the given question lacks the parameters required by the function, also point it out.\n\
\n\
{tool_json}\n\
\n\
The output MUST strictly adhere to the following JSON format, and NO other text MUST be included.\n\
The example format is as follows. Please make sure the parameter type is correct. \
If no function call is needed, please directly output an empty list \"[]\"\n\
\n\
[\n\
    {{\"name\": \"func_name1\", \"arguments\": {{\"argument1\": \"value1\", \"argument2\": \"value2\"}}}},\n\
    ... (more tool calls as required)\n\
]"
    )
}

/// The tool-calling task prompt: assistant instructions, the serialized tool
/// list, the output-format contract, and the query. This is the `prompt`
/// field of generated preference pairs.
pub fn render_case_prompt(tools: &[ToolSpec], query: &str) -> String {
    format!("{}\n\n{query}", render_task_instructions(tools))
}

/// Recovers the tool list embedded in a task prompt.
///
/// Scans for the longest balanced array whose elements all parse as tool
/// specs and none of which looks like a call (`arguments` key). Returns an
/// empty list when no such array exists.
pub fn tools_from_prompt(prompt: &str) -> Vec<ToolSpec> {
    callparse::longest_array_parse(prompt, |candidate| {
        let value: serde_json::Value = serde_json::from_str(candidate).ok()?;
        let items = value.as_array()?;
        if items.is_empty() {
            return None;
        }
        let mut tools = Vec::with_capacity(items.len());
        for item in items {
            let obj = item.as_object()?;
            if obj.contains_key("arguments") {
                return None;
            }
            if !obj.contains_key("parameters") && !obj.contains_key("description") {
                return None;
            }
            tools.push(parse_tool_spec(item).ok()?);
        }
        Some(tools)
    })
    .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use tempfile::tempdir;

    #[test]
    fn loads_unified_case_with_two_gold_calls() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cases.jsonl");
        fs::write(&path, format!("{}\n", fixtures::hexagon_case_line())).unwrap();
        let out = load_cases(&path, &CaseFormat::Unified).unwrap();
        assert_eq!(out.cases.len(), 1);
        assert!(out.skipped.is_empty());
        let case = &out.cases[0];
        assert_eq!(case.tools.len(), 2);
        assert_eq!(case.gold.len(), 2);
        assert!(case.query.contains("hexagon"));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        assert!(matches!(
            load_cases(&path, &CaseFormat::Unified),
            Err(IngestError::EmptyDataset { skipped: 0 })
        ));
    }

    #[test]
    fn malformed_lines_become_skip_records() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mixed.jsonl");
        let good = fixtures::hexagon_case_line();
        let text = format!("{good}\nnot json\n{good}\n{{\"id\": \"x\"}}\n{good}\n");
        fs::write(&path, text).unwrap();
        let out = load_cases(&path, &CaseFormat::Unified).unwrap();
        assert_eq!(out.cases.len(), 3);
        assert_eq!(out.skipped.len(), 2);
        assert_eq!(out.skipped[0].line, 2);
        assert_eq!(out.skipped[1].line, 4);
    }

    #[test]
    fn gold_call_with_unknown_tool_is_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad_gold.jsonl");
        let line = r#"{"id": "c1", "query": "q", "tools": [{"name": "a", "parameters": {}}], "gold": [{"name": "b", "arguments": {}}]}"#;
        let good = fixtures::hexagon_case_line();
        fs::write(&path, format!("{line}\n{good}\n")).unwrap();
        let out = load_cases(&path, &CaseFormat::Unified).unwrap();
        assert_eq!(out.cases.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        assert!(out.skipped[0].reason.contains("unknown tool"));
    }

    #[test]
    fn unknown_adapter_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "").unwrap();
        assert!(matches!(
            load_cases(&path, &CaseFormat::Adapter("hammer".into())),
            Err(IngestError::UnknownAdapter(_))
        ));
    }

    #[test]
    fn ptc_round_trip_is_lossless() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let case = fixtures::hexagon_case();
        let pair = PreferencePair {
            prompt: render_case_prompt(&case.tools, &case.query),
            chosen: fixtures::HEXAGON_CHOSEN.to_string(),
            rejected: fixtures::HEXAGON_REJECTED.to_string(),
            injected_error: Some(ErrorCode::E4RedundantParameter),
            labels: PairLabels::default(),
        };
        write_ptc(std::slice::from_ref(&pair), &path).unwrap();
        let back = read_ptc(&path).unwrap();
        assert_eq!(back, vec![pair]);
    }

    #[test]
    fn empty_pair_list_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("none.jsonl");
        write_ptc(&[], &path).unwrap();
        assert_eq!(read_ptc(&path).unwrap(), Vec::new());
    }

    #[test]
    fn write_rejects_equal_chosen_and_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let pair = PreferencePair {
            prompt: "p".into(),
            chosen: "[]".into(),
            rejected: "[]".into(),
            injected_error: None,
            labels: PairLabels::default(),
        };
        assert!(matches!(
            write_ptc(&[pair], &path),
            Err(IngestError::InvariantViolation(_))
        ));
    }

    #[test]
    fn write_rejects_unparseable_chosen() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad2.jsonl");
        let pair = PreferencePair {
            prompt: "p".into(),
            chosen: "not a call".into(),
            rejected: "[]".into(),
            injected_error: None,
            labels: PairLabels::default(),
        };
        assert!(matches!(
            write_ptc(&[pair], &path),
            Err(IngestError::InvariantViolation(_))
        ));
    }

    #[test]
    fn prompt_embeds_tools_and_query_recoverably() {
        let case = fixtures::hexagon_case();
        let prompt = render_case_prompt(&case.tools, &case.query);
        assert!(prompt.contains("You are a tool calling assistant"));
        assert!(prompt.contains(&case.query));
        let recovered = tools_from_prompt(&prompt);
        assert_eq!(recovered, case.tools);
    }

    #[test]
    fn tools_from_prompt_ignores_call_and_scalar_arrays() {
        assert!(tools_from_prompt("numbers [1, 2, 3] only").is_empty());
        assert!(tools_from_prompt(r#"[{"name": "t", "arguments": {}}]"#).is_empty());
        assert!(tools_from_prompt("no arrays at all").is_empty());
    }
}
