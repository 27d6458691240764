//! The global error checklist: eight failure classes applied to parsed tool
//! calls.
//!
//! ```text
//! E0  Wrong Tool Name                      tool level
//! E1  Missing Required Parameter           parameter level
//! E2  Invalid Parameter Type               parameter level
//! E3  Empty Parameter Value                parameter level
//! E4  Redundant Parameter                  parameter level
//! E5  Invalid Function Calling Output Format   output level
//! E6  Redundant Information                output level
//! E7  Wrong Number of Tools                tool level (reference required)
//! ```
//!
//! Two modes: `SchemaOnly` checks everything knowable from the tool specs
//! alone; `Referenced` additionally uses gold calls as a proxy for query
//! intent (redundant-but-declared parameters, call-count mismatches). Every
//! schema-only finding also appears in referenced mode (monotonicity).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::callparse::{ParseOutcome, ToolCall};
use crate::toolspec::{ParamType, ToolRegistry, ToolSpec, TypeKind};

/// Errors from running the checker itself.
#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    /// Referenced mode was requested without gold calls.
    #[error("referenced mode requires gold calls")]
    MissingReference,
}

/// The eight checklist error classes.
#[derive(Clone, Copy, Debug, Eq, Hash, Ord, PartialEq, PartialOrd)]
pub enum ErrorCode {
    /// E0: called tool name does not exist.
    E0WrongToolName,
    /// E1: a required parameter is absent.
    E1MissingRequiredParameter,
    /// E2: an argument value violates its declared type.
    E2InvalidParameterType,
    /// E3: an argument value is empty text, an empty list, or null.
    E3EmptyParameterValue,
    /// E4: an argument not indicated by the query/schema is present.
    E4RedundantParameter,
    /// E5: the output cannot be parsed as a call array at all.
    E5InvalidFormat,
    /// E6: a valid call array is wrapped in redundant text.
    E6RedundantInformation,
    /// E7: the number of calls differs from the reference.
    E7WrongNumberOfTools,
}

impl ErrorCode {
    /// All eight codes in numeric order.
    pub const ALL: [ErrorCode; 8] = [
        ErrorCode::E0WrongToolName,
        ErrorCode::E1MissingRequiredParameter,
        ErrorCode::E2InvalidParameterType,
        ErrorCode::E3EmptyParameterValue,
        ErrorCode::E4RedundantParameter,
        ErrorCode::E5InvalidFormat,
        ErrorCode::E6RedundantInformation,
        ErrorCode::E7WrongNumberOfTools,
    ];

    /// The numeric index 0–7.
    pub fn index(self) -> u8 {
        match self {
            ErrorCode::E0WrongToolName => 0,
            ErrorCode::E1MissingRequiredParameter => 1,
            ErrorCode::E2InvalidParameterType => 2,
            ErrorCode::E3EmptyParameterValue => 3,
            ErrorCode::E4RedundantParameter => 4,
            ErrorCode::E5InvalidFormat => 5,
            ErrorCode::E6RedundantInformation => 6,
            ErrorCode::E7WrongNumberOfTools => 7,
        }
    }

    /// The code for a numeric index 0–7.
    pub fn from_index(i: u8) -> Option<ErrorCode> {
        ErrorCode::ALL.get(usize::from(i)).copied()
    }

    /// Machine identifier used in `error` fields of findings.
    pub fn identifier(self) -> &'static str {
        match self {
            ErrorCode::E0WrongToolName => "WrongToolName",
            ErrorCode::E1MissingRequiredParameter => "MissingRequiredParameter",
            ErrorCode::E2InvalidParameterType => "InvalidParameterType",
            ErrorCode::E3EmptyParameterValue => "EmptyParameterValue",
            ErrorCode::E4RedundantParameter => "RedundantParameter",
            ErrorCode::E5InvalidFormat => "InvalidFormat",
            ErrorCode::E6RedundantInformation => "RedundantInformationError",
            ErrorCode::E7WrongNumberOfTools => "WrongNumberOfTools",
        }
    }

    /// Human title of the error class.
    pub fn title(self) -> &'static str {
        match self {
            ErrorCode::E0WrongToolName => "Wrong Tool Name Error",
            ErrorCode::E1MissingRequiredParameter => "Missing Required Parameter Error",
            ErrorCode::E2InvalidParameterType => "Invalid Parameter Type Error",
            ErrorCode::E3EmptyParameterValue => "Empty Parameter Value Error",
            ErrorCode::E4RedundantParameter => "Redundant Parameter Error",
            ErrorCode::E5InvalidFormat => "Invalid Function Calling Output Format Error",
            ErrorCode::E6RedundantInformation => "Redundant Information Error",
            ErrorCode::E7WrongNumberOfTools => "Wrong Number of Tools Error",
        }
    }

    /// One-line description for checklist rendering.
    fn summary(self) -> &'static str {
        match self {
            ErrorCode::E0WrongToolName => {
                "the called tool name does not exist among the provided tools"
            }
            ErrorCode::E1MissingRequiredParameter => {
                "a required parameter is missing from the arguments"
            }
            ErrorCode::E2InvalidParameterType => {
                "a parameter value does not match its declared type"
            }
            ErrorCode::E3EmptyParameterValue => "a parameter value is empty",
            ErrorCode::E4RedundantParameter => {
                "a parameter not indicated by the query is included in the call"
            }
            ErrorCode::E5InvalidFormat => {
                "the output does not follow the required JSON format and cannot be parsed"
            }
            ErrorCode::E6RedundantInformation => {
                "the output contains redundant text beyond the JSON array of calls"
            }
            ErrorCode::E7WrongNumberOfTools => {
                "the number of tool calls does not match what the query requires"
            }
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E{}", self.index())
    }
}

impl Serialize for ErrorCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ErrorCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = Value::deserialize(deserializer)?;
        let parsed = match &v {
            Value::Number(n) => n.as_u64().and_then(|i| u8::try_from(i).ok()),
            Value::String(s) => {
                let t = s.trim().trim_start_matches(['E', 'e']);
                t.parse::<u8>().ok()
            }
            _ => None,
        };
        parsed
            .and_then(ErrorCode::from_index)
            .ok_or_else(|| D::Error::custom(format!("not an error code: {v}")))
    }
}

/// Check configuration: what context is available for judging calls.
#[derive(Clone, Copy, Debug, Eq, PartialEq)]
pub enum CheckMode {
    /// Judge from tool specs alone.
    SchemaOnly,
    /// Additionally use gold calls as the proxy for query intent.
    Referenced,
}

/// One detected checklist violation.
#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
pub struct ErrorFinding {
    /// The error class.
    pub code: ErrorCode,
    /// Machine identifier (for example `RedundantParameter`).
    pub error: String,
    /// Diagnostic sentence naming the offending parameter/tool.
    pub message: String,
    /// Remediation sentence ("Thought of Error").
    pub thought: String,
    /// Offending call position, when the error is call-scoped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_index: Option<usize>,
    /// Offending parameter, for parameter-level errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
}

impl ErrorFinding {
    fn new(code: ErrorCode, message: String, thought: String) -> Self {
        ErrorFinding {
            code,
            error: code.identifier().to_string(),
            message,
            thought,
            call_index: None,
            param: None,
        }
    }

    fn at(mut self, call_index: usize) -> Self {
        self.call_index = Some(call_index);
        self
    }

    fn on(mut self, param: &str) -> Self {
        self.param = Some(param.to_string());
        self
    }

    /// The compact machine form `{"error": ..., "message": ...}` used when
    /// embedding findings into prompts.
    pub fn machine_message(&self) -> String {
        serde_json::to_string(&serde_json::json!({
            "error": self.error,
            "message": self.message,
        }))
        .expect("finding always serializes")
    }
}

/// Applies the checklist to a parse outcome.
///
/// Returns every finding (multiple errors can co-exist); the list is empty
/// iff the outcome is clean under the selected mode. In `Referenced` mode
/// `gold` must be present.
pub fn check(
    outcome: &ParseOutcome,
    registry: &ToolRegistry,
    gold: Option<&[ToolCall]>,
    mode: CheckMode,
) -> Result<Vec<ErrorFinding>, CheckError> {
    let gold = match (mode, gold) {
        (CheckMode::Referenced, None) => return Err(CheckError::MissingReference),
        (CheckMode::Referenced, Some(g)) => Some(g),
        (CheckMode::SchemaOnly, g) => {
            // Gold may be supplied; schema-only mode simply ignores it.
            let _ = g;
            None
        }
    };
    let mut findings = Vec::new();

    if !outcome.strict {
        if outcome.salvage {
            findings.push(ErrorFinding::new(
                ErrorCode::E6RedundantInformation,
                "The function calling output contains redundant text such as 'Based on the \
                 query, I will make a function call...' which is unnecessary."
                    .into(),
                "No additional text should be included in the output. The correct function \
                 calling output should only contain the JSON array of tool calls."
                    .into(),
            ));
        } else {
            findings.push(ErrorFinding::new(
                ErrorCode::E5InvalidFormat,
                "The function calling output does not follow the required format and cannot \
                 be parsed."
                    .into(),
                "The output format is incorrect due to improperly formatted keys and symbols. \
                 The correct function calling output should be a JSON array of objects, each \
                 with a 'name' and an 'arguments' key."
                    .into(),
            ));
        }
    }

    let matched_gold = gold.map(|g| match_to_gold(&outcome.calls, g));

    for (index, call) in outcome.calls.iter().enumerate() {
        let Some(tool) = registry.get(&call.name) else {
            let mut message = format!("The tool '{}' does not exist.", call.name);
            if let Some(suggestion) = registry.near_miss(&call.name) {
                message.push_str(&format!(" Did you mean '{suggestion}'?"));
            }
            findings.push(
                ErrorFinding::new(
                    ErrorCode::E0WrongToolName,
                    message,
                    format!(
                        "Tool '{}' is not among the provided tools. Ensure the tool name \
                         exactly matches one of the available tools.",
                        call.name
                    ),
                )
                .at(index),
            );
            continue;
        };

        check_call_params(call, tool, index, &mut findings);

        // Referenced-only redundancy: declared keys the gold call does not
        // use are redundant with respect to query intent.
        if let (Some(gold), Some(matches)) = (gold, &matched_gold) {
            if let Some(gi) = matches[index] {
                for key in call.arguments.keys() {
                    if tool.param(key).is_some() && !gold[gi].arguments.contains_key(key) {
                        findings.push(redundant_param_finding(key).at(index));
                    }
                }
            }
        }
    }

    if let Some(gold) = gold {
        if outcome.calls.len() != gold.len() {
            findings.push(ErrorFinding::new(
                ErrorCode::E7WrongNumberOfTools,
                format!(
                    "The number of tool calls ({}) does not match the expected number ({}).",
                    outcome.calls.len(),
                    gold.len()
                ),
                format!(
                    "The output contains {} tool call(s) but the query requires {}. Ensure \
                     exactly the required tool calls are made.",
                    outcome.calls.len(),
                    gold.len()
                ),
            ));
        }
    }

    Ok(findings)
}

/// Schema-level parameter checks for one registered call.
fn check_call_params(
    call: &ToolCall,
    tool: &ToolSpec,
    index: usize,
    findings: &mut Vec<ErrorFinding>,
) {
    for p in tool.required_params() {
        if !call.arguments.contains_key(&p.name) {
            findings.push(
                ErrorFinding::new(
                    ErrorCode::E1MissingRequiredParameter,
                    format!("The '{}' parameter is required.", p.name),
                    format!(
                        "Parameter '{}' is missing. Ensure all required parameters ('{}') \
                         are included in the function call.",
                        p.name, p.name
                    ),
                )
                .at(index)
                .on(&p.name),
            );
        }
    }

    for (key, value) in &call.arguments {
        match tool.param(key) {
            None => {
                // Undeclared keys are redundant regardless of mode.
                findings.push(redundant_param_finding(key).at(index));
            }
            Some(p) => {
                // Null marks emptiness, not a type mismatch, so type
                // checking skips it and the emptiness check below owns it.
                if !value.is_null()
                    && !p.ptype.is_unknown()
                    && !value_satisfies(value, &p.ptype)
                {
                    findings.push(
                        ErrorFinding::new(
                            ErrorCode::E2InvalidParameterType,
                            format!("The '{}' is not of '{}'.", key, p.ptype),
                            format!(
                                "Parameter '{}' should be of type '{}', but an invalid type \
                                 was provided. Ensure all parameters match their expected \
                                 types.",
                                key, p.ptype
                            ),
                        )
                        .at(index)
                        .on(key),
                    );
                }
            }
        }
        if is_empty_value(value) {
            findings.push(
                ErrorFinding::new(
                    ErrorCode::E3EmptyParameterValue,
                    format!("The '{}' parameter cannot be empty.", key),
                    format!(
                        "Parameter '{}' has an empty value. It should not be empty as \
                         specified by the tool's requirements.",
                        key
                    ),
                )
                .at(index)
                .on(key),
            );
        }
    }
}

fn redundant_param_finding(key: &str) -> ErrorFinding {
    ErrorFinding::new(
        ErrorCode::E4RedundantParameter,
        format!(
            "The parameter '{}' is not indicated by the query and should not be called.",
            key
        ),
        format!(
            "Parameter '{}' is unnecessary and was not specified in the query. Ensure only \
             the required and specified parameters are included in the function call.",
            key
        ),
    )
    .on(key)
}

/// True when `value` is empty text, an empty list, or null.
pub(crate) fn is_empty_value(value: &Value) -> bool {
    match value {
        Value::Null => true,
        Value::String(s) => s.is_empty(),
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

/// Structural type check of a JSON value against a declared type.
///
/// Integers satisfy `float` (widening) but floats do not satisfy `int`;
/// booleans satisfy only `bool`. Unknown types always pass (checking is
/// disabled rather than guessed).
pub(crate) fn value_satisfies(value: &Value, ptype: &ParamType) -> bool {
    match ptype.kind {
        TypeKind::Unknown => true,
        TypeKind::String => value.is_string(),
        TypeKind::Integer => value.is_i64() || value.is_u64(),
        TypeKind::Number => value.is_number(),
        TypeKind::Boolean => value.is_boolean(),
        TypeKind::Object => value.is_object(),
        TypeKind::List => match value.as_array() {
            None => false,
            Some(items) => match ptype.element.len() {
                0 => true,
                1 => items.iter().all(|v| value_satisfies(v, &ptype.element[0])),
                _ => items
                    .iter()
                    .all(|v| ptype.element.iter().any(|t| value_satisfies(v, t))),
            },
        },
        TypeKind::Tuple => match value.as_array() {
            None => false,
            Some(items) => {
                items.len() == ptype.element.len()
                    && items
                        .iter()
                        .zip(&ptype.element)
                        .all(|(v, t)| value_satisfies(v, t))
            }
        },
    }
}

/// Greedy reference matching: each predicted call takes the unconsumed gold
/// call with the same name that overlaps most on exactly-equal arguments;
/// ties go to the earliest gold index.
fn match_to_gold(pred: &[ToolCall], gold: &[ToolCall]) -> Vec<Option<usize>> {
    let mut taken = vec![false; gold.len()];
    pred.iter()
        .map(|call| {
            let mut best: Option<(usize, usize)> = None; // (overlap, gold index)
            for (gi, g) in gold.iter().enumerate() {
                if taken[gi] || g.name != call.name {
                    continue;
                }
                let overlap = call
                    .arguments
                    .iter()
                    .filter(|(k, v)| g.arguments.get(*k) == Some(*v))
                    .count();
                let better = match best {
                    None => true,
                    Some((bo, _)) => overlap > bo,
                };
                if better {
                    best = Some((overlap, gi));
                }
            }
            best.map(|(_, gi)| {
                taken[gi] = true;
                gi
            })
        })
        .collect()
}

/// Renders the fixed checklist as a deterministic numbered text block for
/// embedding in prompts: one header line plus one line per error class.
pub fn render_global_checklist() -> String {
    let mut out =
        String::from("Global Error Checklist — common issues to avoid when calling tools:\n");
    for code in ErrorCode::ALL {
        out.push_str(&format!(
            "Error {}: {} — {}.\n",
            code.index(),
            code.title(),
            code.summary()
        ));
    }
    out
}

/// Sums per-code finding counts over many cases. Every code is present in
/// the result, zero-valued when unseen.
pub fn error_histogram(findings_per_case: &[Vec<ErrorFinding>]) -> BTreeMap<ErrorCode, usize> {
    let mut hist: BTreeMap<ErrorCode, usize> =
        ErrorCode::ALL.iter().map(|&c| (c, 0)).collect();
    for findings in findings_per_case {
        for f in findings {
            *hist.get_mut(&f.code).expect("all codes present") += 1;
        }
    }
    hist
}
