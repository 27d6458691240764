//! Per-tool local error checklists: worked examples of each error class
//! instantiated on one concrete tool.
//!
//! A local checklist entry is a miniature lesson:
//!
//! ```text
//! Error N: <class title>
//! Query: a perfect, self-contained request
//! Function Calling Output: an answer that evokes the error
//! Error Message: {"error": ..., "message": ...}
//! Thought of Error: how to correct it
//! ```
//!
//! Checklists come from two sources: a chat model prompted with
//! [`render_generation_prompt`] (untrusted — every parsed entry is verified
//! by the checker and dropped if its faulty output does not actually
//! trigger the claimed error), or [`synth_checklist_offline`], a
//! deterministic synthesizer that instantiates the same template through
//! the negative-sample operators so the full pipeline is testable without
//! any model.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::callparse::{normalize_quotes, parse_lenient, ToolCall};
use crate::checker::{check, CheckMode, ErrorCode};
use crate::icl::{ChatClient, ChatMessage, ClientError};
use crate::negsample::perturb;
use crate::toolspec::{parse_tool_spec, registry_from_specs, ParamType, ToolSpec, TypeKind};

/// Errors from checklist generation and parsing.
#[derive(Debug, thiserror::Error)]
pub enum LocalGenError {
    /// The response contained no entry that parses and survives validation.
    #[error("no valid checklist entries recovered ({0} dropped)")]
    NoEntriesParsed(usize),
    /// The response's tool-information block could not be recovered.
    #[error("response carries no parseable tool information block")]
    MissingToolInfo,
    /// The chat client failed.
    #[error("chat client error: {0}")]
    Client(#[from] ClientError),
}

/// One validated checklist entry.
#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
pub struct LocalChecklistEntry {
    /// The error class this entry demonstrates.
    pub code: ErrorCode,
    /// A self-contained query that a correct call would satisfy.
    pub query: String,
    /// A model answer that evokes the error.
    pub faulty_output: String,
    /// The diagnostic block, `{"error": ..., "message": ...}`.
    pub error_message: String,
    /// The remediation explanation.
    pub thought: String,
}

/// A tool together with its validated error entries.
#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
pub struct LocalChecklist {
    /// The tool these entries are about.
    pub tool: ToolSpec,
    /// Validated entries, at most one per error class.
    pub entries: Vec<LocalChecklistEntry>,
}

/// An entry that was recognized but rejected during parsing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropRecord {
    /// The entry heading as it appeared in the response.
    pub heading: String,
    /// Why the entry was dropped.
    pub reason: String,
}

/// A parsed response: the surviving checklist plus what was dropped.
#[derive(Clone, Debug)]
pub struct ParsedChecklist {
    /// Entries that parsed and passed the trigger validation.
    pub checklist: LocalChecklist,
    /// Entries that did not, with reasons.
    pub dropped: Vec<DropRecord>,
}

/// Options for the offline synthesizer.
#[derive(Clone, Copy, Debug, Default)]
pub struct SynthOptions {
    /// Also emit a wrong-tool-name entry (off by default: the checklist
    /// template demonstrates parameter- and format-level errors only).
    pub include_wrong_tool_name: bool,
}

const TASK_BLOCK: &str = r#"Task:
You are given information about a tool and an example template of an error checklist. Your task is to generate an error checklist for the tool in the same format as the template. More specifically, for each error, you should:
- Provide a **perfect query**. The query should be self-contained and contain all the necessary information for a correct tool call. For example: "Can you verify the access to the database named 'customer_data'?"
- Provide the **corresponding answer** from the model that evokes the error.
- Provide an **error message** that describes what went wrong.
- Provide a **thought** explaining how the error should be corrected.

Note: You should strictly follow the format of the template.

------

**Error Checklist Template**

Tool Information

name: 'name_of_the_tool'
description: 'description_of_the_tool'
parameters: {"parameter_1": {"type": "type_1", "description": "description_of_the_parameter"}, "parameter_2": {"type": "type_2", "description": "description_of_the_parameter"}} required parameters: ["parameter_1"]
(Include other relevant information about the tool if necessary.)

---

Error 2: Missing Required Parameter Error

Query: "a_query_that_calls_the_tool"

Function Calling Output: [{"name": "name_of_the_tool","arguments": {"parameter_2":"parameter_value"}}]

Error Message: {"error": "MissingRequiredParameter","message": "The 'parameter_1' parameter is required."}

Thought of Error: Parameter 'parameter_1' is missing. Ensure all required parameters ('parameter_1') are included in the function call.

---

Error 3: Invalid Parameter Type Error

Query: "a_query_that_calls_the_tool"

Function Calling Output:
[
  {
    "name": "name_of_the_tool",
    "arguments": {
      "parameter_1": "parameter_value",
      "parameter_2": "parameter_value (but not of type_2)"
    }
  }
]

Error Message:
{
  "error": "InvalidParameterType",
  "message": "The 'parameter_2' is not of 'type_2'."
}

Thought of Error:
Parameter 'parameter_2' should be of type 'type_2', but an invalid type was provided. Ensure all parameters match their expected types.

---

Error 4: Empty Parameter Value Error

Query: "a_query_that_calls_the_tool"

Function Calling Output:
[
  {
    "name": "name_of_the_tool",
    "arguments": {
      "parameter_1": "parameter_value",
      "parameter_2": ""
    }
  }
]

Error Message:
{
  "error": "EmptyParameterValue",
  "message": "The 'parameter_2' parameter cannot be empty."
}

Thought of Error:
Parameter 'parameter_2' has an empty value. It should not be empty as specified by the tool's requirements.

---

Error 5: Redundant Parameter Error

Query: "a_query_that_calls_the_tool (that only needs to fill in part of the parameters of the tool)"

Function Calling Output:
[
  {
    "name": "name_of_the_tool",
    "arguments": {
      "parameter_1": "parameter_value",
      "parameter_2": "parameter_value"
    }
  }
]

Error Message:
{
  "error": "RedundantParameter",
  "message": "The parameter 'parameter_2' is not indicated by the query and should not be called."
}

Thought of Error:
Parameter 'parameter_2' is unnecessary and was not specified in the query. Ensure only the required and specified parameters are included in the function call.

---

Error 6: Invalid Function Calling Output Format Error

Query: "a_query_that_calls_the_tool"

Function Calling Output:
{
  "Name": "name_of_the_tool",
  "Parameter": {
    "parameter_1": "parameter_value",
    "parameter_2": "parameter_value"
  }
}

Error Message:
{
  "error": "InvalidFormat",
  "message": "The function calling output does not follow the required format and cannot be parsed."
}

Thought of Error:
The output format is incorrect due to improperly formatted keys and symbols. The correct function calling output should be:
[
  {
    "name": "func_name1",
    "arguments": {
      "parameter_1": "value1",
      "parameter_2": "value2"
    }
  }
]

---

Error 7: Redundant Information Error

Query: "a_query_that_calls_the_tool"

Function Calling Output:
"Based on the query, I will make a function call to the 'name_of_the_tool' tool to get the query answered. Here is the output in the required JSON format:
[
  {
    'name': 'name_of_the_tool',
    'arguments': {
      'parameter_1': 'parameter_value',
      'parameter_2': 'parameter_value'
    }
  }
]"

Error Message:
{
  "error": "RedundantInformationError",
  "message": "The function calling output contains redundant text such as 'Based on the query, I will make a function call...' which is unnecessary."
}

Thought of Error:
No additional text should be included in the output. The correct function calling output should only contain:
[
  {
    "name": "func_name1",
    "arguments": {
      "parameter_1": "value1",
      "parameter_2": "value2"
    }
  }
]

------

Instructions

Now, generate an error checklist for the following tool:

"#;

/// Renders the checklist-generation prompt for one tool: the fixed task
/// header and worked template, followed by the tool's information block.
/// Byte-deterministic in the tool.
pub fn render_generation_prompt(tool: &ToolSpec) -> String {
    format!("{TASK_BLOCK}{}", render_tool_info(tool))
}

/// The `Tool Information` block in the template's layout.
fn render_tool_info(tool: &ToolSpec) -> String {
    let spec_json = tool.to_json();
    let params = serde_json::to_string(&spec_json["parameters"]).expect("spec serializes");
    let required = serde_json::to_string(&spec_json["required"]).expect("spec serializes");
    format!(
        "Tool Information\n\nname: '{}'\ndescription: '{}'\nparameters: {} required parameters: {}\n",
        tool.name, tool.description, params, required
    )
}

/// Parses a checklist response: recovers the tool from its information
/// block, extracts entries by their section markers, and keeps only the
/// entries whose faulty output actually triggers the claimed error under
/// the checker. Duplicated codes keep the first occurrence.
pub fn parse_checklist_response(text: &str) -> Result<ParsedChecklist, LocalGenError> {
    let tool = recover_tool_info(text).ok_or(LocalGenError::MissingToolInfo)?;
    let mut entries = Vec::new();
    let mut dropped = Vec::new();
    for raw in split_entries(text) {
        match validate_entry(&tool, &raw) {
            Ok(entry) => {
                if entries.iter().any(|e: &LocalChecklistEntry| e.code == entry.code) {
                    dropped.push(DropRecord {
                        heading: raw.heading.clone(),
                        reason: format!("duplicate entry for {}", entry.code),
                    });
                } else {
                    entries.push(entry);
                }
            }
            Err(reason) => dropped.push(DropRecord { heading: raw.heading.clone(), reason }),
        }
    }
    if entries.is_empty() {
        return Err(LocalGenError::NoEntriesParsed(dropped.len()));
    }
    Ok(ParsedChecklist { checklist: LocalChecklist { tool, entries }, dropped })
}

/// Generates a checklist for `tool` through a chat client and parses the
/// response. The client's output is untrusted; only validated entries
/// survive.
pub fn generate_checklist(
    client: &dyn ChatClient,
    tool: &ToolSpec,
) -> Result<ParsedChecklist, LocalGenError> {
    let messages = vec![ChatMessage {
        role: "user".into(),
        content: render_generation_prompt(tool),
    }];
    let tag = format!("checklist/{}", tool.name);
    let response = client.complete(&tag, &messages)?;
    parse_checklist_response(&response.text)
}

/// Deterministic checklist synthesis without a model: instantiates the
/// template on this tool via the negative-sample operators. Parameter-level
/// entries appear only when the tool offers a legal site; the two
/// format-level entries always exist, so the checklist is never empty.
pub fn synth_checklist_offline(tool: &ToolSpec, seed: u64) -> LocalChecklist {
    synth_checklist(tool, seed, SynthOptions::default())
}

/// [`synth_checklist_offline`] with explicit options.
pub fn synth_checklist(tool: &ToolSpec, seed: u64, options: SynthOptions) -> LocalChecklist {
    let gold = vec![exemplar_call(tool)];
    let registry = registry_from_specs(std::slice::from_ref(tool));
    let tools = vec![tool.clone()];
    let mut codes = vec![
        ErrorCode::E1MissingRequiredParameter,
        ErrorCode::E2InvalidParameterType,
        ErrorCode::E3EmptyParameterValue,
        ErrorCode::E4RedundantParameter,
        ErrorCode::E5InvalidFormat,
        ErrorCode::E6RedundantInformation,
    ];
    if options.include_wrong_tool_name {
        codes.insert(0, ErrorCode::E0WrongToolName);
    }
    let mut entries = Vec::new();
    for code in codes {
        let code_seed = seed.wrapping_mul(8).wrapping_add(u64::from(code.index()));
        let Ok(faulty) = perturb(&gold, &tools, code, code_seed) else {
            continue;
        };
        let outcome = parse_lenient(&faulty);
        let findings = check(&outcome, &registry, Some(&gold), CheckMode::Referenced)
            .expect("gold is present");
        let Some(finding) = findings.into_iter().find(|f| f.code == code) else {
            continue;
        };
        entries.push(LocalChecklistEntry {
            code,
            query: exemplar_query(tool, &gold[0]),
            faulty_output: faulty,
            error_message: finding.machine_message(),
            thought: finding.thought,
        });
    }
    LocalChecklist { tool: tool.clone(), entries }
}

/// Renders a checklist in the template's response layout; feeding the
/// result back through [`parse_checklist_response`] recovers the same
/// entries. Also the embedding format for prompts.
pub fn render_checklist_response(checklist: &LocalChecklist) -> String {
    let mut out = render_tool_info(&checklist.tool);
    for entry in &checklist.entries {
        out.push_str(&format!(
            "\n---\n\nError {}: {}\n\nQuery: \"{}\"\n\nFunction Calling Output:\n{}\n\n\
             Error Message:\n{}\n\nThought of Error:\n{}\n",
            entry.code.index() + 1,
            entry.code.title(),
            entry.query,
            entry.faulty_output,
            entry.error_message,
            entry.thought
        ));
    }
    out
}

/// A clean call of the tool: every required parameter filled with a
/// type-appropriate placeholder, optional parameters left out (so a
/// redundant-parameter site exists whenever the tool declares one).
fn exemplar_call(tool: &ToolSpec) -> ToolCall {
    let mut arguments = serde_json::Map::new();
    for p in tool.required_params() {
        arguments.insert(p.name.clone(), placeholder_value(&p.ptype));
    }
    ToolCall { name: tool.name.clone(), arguments }
}

fn exemplar_query(tool: &ToolSpec, call: &ToolCall) -> String {
    if call.arguments.is_empty() {
        return format!("Use the '{}' tool to answer my request.", tool.name);
    }
    let parts: Vec<String> = call
        .arguments
        .iter()
        .map(|(k, v)| format!("'{k}' set to {v}"))
        .collect();
    format!("Use the '{}' tool with {}.", tool.name, parts.join(" and "))
}

fn placeholder_value(ptype: &ParamType) -> Value {
    match ptype.kind {
        TypeKind::String | TypeKind::Unknown => Value::String("parameter_value".into()),
        TypeKind::Integer => serde_json::json!(1),
        TypeKind::Number => serde_json::json!(1.5),
        TypeKind::Boolean => serde_json::json!(true),
        TypeKind::Object => serde_json::json!({"key": "value"}),
        TypeKind::List => match ptype.element.first() {
            Some(t) => Value::Array(vec![placeholder_value(t)]),
            None => serde_json::json!(["parameter_value"]),
        },
        TypeKind::Tuple => {
            Value::Array(ptype.element.iter().map(placeholder_value).collect())
        }
    }
}

/// Recovers a [`ToolSpec`] from the response's `Tool Information` block.
fn recover_tool_info(text: &str) -> Option<ToolSpec> {
    let lower = text.to_lowercase();
    let start = lower.find("tool information")?;
    let end = find_heading_offset(&text[start..]).map_or(text.len(), |o| start + o);
    let block = &text[start..end];

    let name = labeled_line(block, "name:")?;
    let name = strip_quotes(&name);
    let description = labeled_line(block, "description:")
        .map(|d| strip_quotes(&d))
        .unwrap_or_default();

    let params_at = block.find("parameters:")? + "parameters:".len();
    let params_blob = &block[params_at..];
    let required_blob = params_blob
        .find("required parameters:")
        .map(|i| &params_blob[i + "required parameters:".len()..]);
    let params: Value = first_json(params_blob)?;
    let required: Option<Value> = required_blob.and_then(first_json);

    let mut spec = serde_json::json!({
        "name": name,
        "description": description,
        "parameters": params,
    });
    if let Some(required) = required {
        spec["required"] = required;
    }
    parse_tool_spec(&spec).ok()
}

/// Parses the first JSON value in `s`, ignoring trailing text; retries with
/// quote normalization for single-quoted pseudo-JSON.
fn first_json<T: serde::de::DeserializeOwned>(s: &str) -> Option<T> {
    let attempt = |text: &str| {
        serde_json::Deserializer::from_str(text)
            .into_iter::<T>()
            .next()?
            .ok()
    };
    attempt(s).or_else(|| attempt(&normalize_quotes(s)))
}

fn labeled_line(block: &str, label: &str) -> Option<String> {
    block.lines().find_map(|line| {
        let trimmed = line.trim().trim_start_matches(['*', '#']).trim_start();
        trimmed
            .strip_prefix(label)
            .map(|rest| rest.trim().to_string())
    })
}

fn strip_quotes(s: &str) -> String {
    s.trim()
        .trim_matches(|c| c == '\'' || c == '"')
        .to_string()
}

struct RawEntry {
    heading: String,
    code: Option<ErrorCode>,
    query: String,
    faulty_output: String,
    error_message: String,
    thought: String,
}

/// Byte offset of the first entry heading (`Error <digits>:`) in `text`.
fn find_heading_offset(text: &str) -> Option<usize> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if heading_code(line).is_some() {
            return Some(offset);
        }
        offset += line.len();
    }
    None
}

/// Parses `Error <n>: <title>` headings; the title decides the code (it is
/// numbering-scheme independent), with the template's shifted numbering
/// (`Error N` demonstrates class N−1) as fallback.
fn heading_code(line: &str) -> Option<(Option<ErrorCode>, String)> {
    let trimmed = line.trim().trim_start_matches(['*', '#']).trim();
    let rest = trimmed.strip_prefix("Error ")?;
    let colon = rest.find(':')?;
    let number: u8 = rest[..colon].trim().parse().ok()?;
    let title = rest[colon + 1..].trim().trim_end_matches(['*', '#']).trim();
    let by_title = ErrorCode::ALL
        .into_iter()
        .find(|c| title.eq_ignore_ascii_case(c.title()));
    let code = by_title.or_else(|| ErrorCode::from_index(number.checked_sub(1)?));
    Some((code, trimmed.to_string()))
}

fn split_entries(text: &str) -> Vec<RawEntry> {
    #[derive(Clone, Copy, PartialEq)]
    enum Field {
        None,
        Query,
        Output,
        Message,
        Thought,
    }
    let mut entries: Vec<RawEntry> = Vec::new();
    let mut field = Field::None;
    for line in text.lines() {
        if let Some((code, heading)) = heading_code(line) {
            entries.push(RawEntry {
                heading,
                code,
                query: String::new(),
                faulty_output: String::new(),
                error_message: String::new(),
                thought: String::new(),
            });
            field = Field::None;
            continue;
        }
        let Some(entry) = entries.last_mut() else {
            continue;
        };
        let stripped = line.trim().trim_start_matches(['*', '#']).trim_start();
        let (new_field, rest) = if let Some(rest) = stripped.strip_prefix("Query:") {
            (Field::Query, rest)
        } else if let Some(rest) = stripped.strip_prefix("Function Calling Output:") {
            (Field::Output, rest)
        } else if let Some(rest) = stripped.strip_prefix("Error Message:") {
            (Field::Message, rest)
        } else if let Some(rest) = stripped.strip_prefix("Thought of Error:") {
            (Field::Thought, rest)
        } else {
            if line.trim().chars().all(|c| c == '-') && line.trim().len() >= 3 {
                field = Field::None; // `---` separator ends the section
                continue;
            }
            let target = match field {
                Field::None => continue,
                Field::Query => &mut entry.query,
                Field::Output => &mut entry.faulty_output,
                Field::Message => &mut entry.error_message,
                Field::Thought => &mut entry.thought,
            };
            if !target.is_empty() {
                target.push('\n');
            }
            target.push_str(line);
            continue;
        };
        field = new_field;
        let target = match field {
            Field::Query => &mut entry.query,
            Field::Output => &mut entry.faulty_output,
            Field::Message => &mut entry.error_message,
            Field::Thought => &mut entry.thought,
            Field::None => unreachable!(),
        };
        let rest = rest.trim();
        if !rest.is_empty() {
            target.push_str(rest);
        }
    }
    entries
}

/// Validates one raw entry: the faulty output must trigger the claimed code
/// under the checker. Intent-relative codes (redundant parameter, call
/// count) are checked against the gold implied by the entry itself.
fn validate_entry(tool: &ToolSpec, raw: &RawEntry) -> Result<LocalChecklistEntry, String> {
    let code = raw.code.ok_or("unrecognized error class in heading")?;
    let faulty = raw.faulty_output.trim().to_string();
    if faulty.is_empty() {
        return Err("missing Function Calling Output".into());
    }
    let registry = registry_from_specs(std::slice::from_ref(tool));
    let outcome = parse_lenient(&faulty);
    let schema = check(&outcome, &registry, None, CheckMode::SchemaOnly)
        .expect("schema-only mode never fails");
    let mut triggers = schema.iter().any(|f| f.code == code);
    if !triggers && !outcome.calls.is_empty() {
        // Intent-relative errors need a reference; imply the weakest gold
        // consistent with the claim.
        let implied: Option<Vec<ToolCall>> = match code {
            ErrorCode::E4RedundantParameter => Some(
                outcome
                    .calls
                    .iter()
                    .map(|c| ToolCall { name: c.name.clone(), arguments: serde_json::Map::new() })
                    .collect(),
            ),
            ErrorCode::E7WrongNumberOfTools => Some(if outcome.calls.len() > 1 {
                outcome.calls[..1].to_vec()
            } else {
                vec![outcome.calls[0].clone(), outcome.calls[0].clone()]
            }),
            _ => None,
        };
        if let Some(gold) = implied {
            let referenced = check(&outcome, &registry, Some(&gold), CheckMode::Referenced)
                .expect("gold is present");
            triggers = referenced.iter().any(|f| f.code == code);
        }
    }
    if !triggers {
        return Err(format!("faulty output does not trigger {code}"));
    }
    Ok(LocalChecklistEntry {
        code,
        query: strip_quotes(&raw.query),
        faulty_output: faulty,
        error_message: raw.error_message.trim().to_string(),
        thought: raw.thought.trim().to_string(),
    })
}
