//! Extraction of structured tool calls from raw model text.
//!
//! Two entry points with different strictness:
//!
//! - [`parse_strict`] accepts only the canonical output contract: the whole
//!   text (modulo surrounding whitespace) is one JSON array whose elements
//!   each carry exactly a `name` text field and an `arguments` object field.
//! - [`parse_lenient`] never fails: when strict parsing is impossible it
//!   scans the text for the longest bracket-balanced array substring that
//!   still parses as a call array and returns it flagged as `salvage` —
//!   evidence that the model wrapped a valid call in redundant prose.
//!
//! The distinction feeds the downstream checker: unsalvageable text is a
//! format error, salvaged text is a redundant-information error.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// One parsed tool invocation.
///
/// `arguments` preserves key order and serde_json's integer/float
/// distinction, so `4` and `"4"` and `4.0` remain distinguishable for type
/// checking.
#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToolCall {
    /// Tool name; non-empty.
    pub name: String,
    /// Argument map in output order.
    pub arguments: Map<String, Value>,
}

/// Result of extracting calls from raw text.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseOutcome {
    /// The extracted calls (possibly empty).
    pub calls: Vec<ToolCall>,
    /// True when the whole text was the canonical array form.
    pub strict: bool,
    /// True when calls were recovered from inside non-conforming text.
    /// Mutually exclusive with `strict`.
    pub salvage: bool,
    /// The original input text, unmodified.
    pub raw: String,
}

/// First structural violation found by [`parse_strict`].
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum FormatError {
    /// The text is not parseable JSON at all.
    #[error("output is not valid JSON: {0}")]
    NotJson(String),
    /// The top-level JSON value is not an array.
    #[error("top-level value is not an array of calls")]
    NotArray,
    /// An array element is not a JSON object.
    #[error("call {index} is not an object")]
    ElementNotObject {
        /// Element position.
        index: usize,
    },
    /// An element carries a key other than `name`/`arguments` (for example
    /// the wrong-cased `Name`/`Parameter` variants).
    #[error("call {index} has unexpected key `{key}`")]
    UnexpectedKey {
        /// Element position.
        index: usize,
        /// The offending key.
        key: String,
    },
    /// An element is missing `name` or `arguments`.
    #[error("call {index} is missing key `{key}`")]
    MissingKey {
        /// Element position.
        index: usize,
        /// The absent key.
        key: String,
    },
    /// `name` is present but not non-empty text.
    #[error("call {index} has a non-text or empty `name`")]
    BadName {
        /// Element position.
        index: usize,
    },
    /// `arguments` is present but not an object.
    #[error("call {index} has non-object `arguments`")]
    BadArguments {
        /// Element position.
        index: usize,
    },
}

/// Parses text that must be exactly the canonical call-array form.
///
/// Succeeds iff the trimmed input is a single JSON array whose elements each
/// have exactly a non-empty `name` text field and an `arguments` object
/// field. On success `strict` is true and `salvage` false. The error carries
/// the first structural violation encountered.
pub fn parse_strict(raw: &str) -> Result<ParseOutcome, FormatError> {
    let value: Value =
        serde_json::from_str(raw.trim()).map_err(|e| FormatError::NotJson(e.to_string()))?;
    let calls = calls_from_value(&value)?;
    Ok(ParseOutcome { calls, strict: true, salvage: false, raw: raw.to_string() })
}

/// Validates a parsed JSON value as a call array.
fn calls_from_value(value: &Value) -> Result<Vec<ToolCall>, FormatError> {
    let items = value.as_array().ok_or(FormatError::NotArray)?;
    let mut calls = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let obj = item.as_object().ok_or(FormatError::ElementNotObject { index })?;
        for key in obj.keys() {
            if key != "name" && key != "arguments" {
                return Err(FormatError::UnexpectedKey { index, key: key.clone() });
            }
        }
        let name = obj
            .get("name")
            .ok_or_else(|| FormatError::MissingKey { index, key: "name".into() })?
            .as_str()
            .ok_or(FormatError::BadName { index })?;
        if name.is_empty() {
            return Err(FormatError::BadName { index });
        }
        let arguments = obj
            .get("arguments")
            .ok_or_else(|| FormatError::MissingKey { index, key: "arguments".into() })?
            .as_object()
            .ok_or(FormatError::BadArguments { index })?;
        calls.push(ToolCall { name: name.to_string(), arguments: arguments.clone() });
    }
    Ok(calls)
}

/// Parses text tolerantly; never fails.
///
/// If [`parse_strict`] succeeds the strict outcome is returned unchanged.
/// Otherwise every `[`..`]` substring is tried (raw, then with single quotes
/// normalized to double quotes) and the longest one that parses as a call
/// array wins, ties broken by earliest start; the result is flagged
/// `salvage`. If nothing qualifies, zero calls are returned with both flags
/// false.
pub fn parse_lenient(raw: &str) -> ParseOutcome {
    if let Ok(outcome) = parse_strict(raw) {
        return outcome;
    }
    match longest_array_parse(raw, try_parse_call_array) {
        Some(calls) => ParseOutcome { calls, strict: false, salvage: true, raw: raw.to_string() },
        None => {
            ParseOutcome { calls: Vec::new(), strict: false, salvage: false, raw: raw.to_string() }
        }
    }
}

/// Finds the longest `[`..`]` substring accepted by `try_parse`, ties broken
/// by earliest start, and returns its parse. Every bracket index pair is a
/// candidate, so brackets inside string literals cannot hide the true array.
pub(crate) fn longest_array_parse<T>(
    raw: &str,
    try_parse: impl Fn(&str) -> Option<T>,
) -> Option<T> {
    let bytes = raw.as_bytes();
    let opens: Vec<usize> = (0..bytes.len()).filter(|&i| bytes[i] == b'[').collect();
    let closes: Vec<usize> = (0..bytes.len()).filter(|&i| bytes[i] == b']').collect();
    let mut best: Option<(usize, usize, T)> = None; // (len, start, parse)
    for &start in &opens {
        for &end in closes.iter().rev() {
            if end <= start {
                break;
            }
            let len = end - start + 1;
            if let Some((best_len, best_start, _)) = &best {
                // Only a longer candidate, or an equal-length one starting
                // earlier, can replace the current best.
                if len < *best_len || (len == *best_len && start >= *best_start) {
                    continue;
                }
            }
            if !raw.is_char_boundary(start) || !raw.is_char_boundary(end + 1) {
                continue;
            }
            if let Some(parsed) = try_parse(&raw[start..=end]) {
                best = Some((len, start, parsed));
            }
        }
    }
    best.map(|(_, _, parsed)| parsed)
}

/// Attempts to parse a candidate substring as a call array, first as-is and
/// then with single-quoted pseudo-JSON normalized to double quotes.
fn try_parse_call_array(candidate: &str) -> Option<Vec<ToolCall>> {
    if let Ok(value) = serde_json::from_str::<Value>(candidate) {
        if let Ok(calls) = calls_from_value(&value) {
            return Some(calls);
        }
    }
    let normalized = normalize_quotes(candidate);
    if normalized != candidate {
        if let Ok(value) = serde_json::from_str::<Value>(&normalized) {
            if let Ok(calls) = calls_from_value(&value) {
                return Some(calls);
            }
        }
    }
    None
}

/// Replaces single quotes with double quotes outside existing double-quoted
/// strings, so `{'name': 'tool'}` becomes parseable JSON. Apostrophes inside
/// double-quoted strings are preserved.
pub(crate) fn normalize_quotes(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_double = false;
    let mut escaped = false;
    for c in s.chars() {
        match c {
            '\\' if in_double && !escaped => {
                escaped = true;
                out.push(c);
                continue;
            }
            '"' if !escaped => {
                in_double = !in_double;
                out.push(c);
            }
            '\'' if !in_double => out.push('"'),
            _ => out.push(c),
        }
        escaped = false;
    }
    out
}

/// Renders calls in the canonical array form that [`parse_strict`] accepts.
pub fn render(calls: &[ToolCall]) -> String {
    serde_json::to_string(calls).expect("tool calls always serialize")
}
