//! Shared example data used by unit, property, and acceptance tests.
//!
//! The running example is a two-tool case (polygon area plus n-largest
//! numbers) whose rejected answer differs from the chosen one by a single
//! redundant argument — the smallest possible corruption, which is exactly
//! the regime the preference-pair tooling is built around.

#![allow(missing_docs)]

use crate::callparse::parse_strict;
use crate::ingest::EvalCase;
use crate::toolspec::{parse_tool_spec, ToolSpec};

/// Candidate tools for the running example, in interchange form.
pub const HEXAGON_TOOLS: &str = r#"[{"name": "polygon_area_shoelace", "description": "Calculates the area of a polygon using the shoelace formula.", "parameters": {"vertices": {"description": "A list of polygon vertices represented as tuples (x, y).", "type": "List[Tuple[float, float]]"}}}, {"name": "find_n_largest_numbers", "description": "Finds the n largest numbers in a list.", "parameters": {"nums": {"description": "The list of numbers.", "type": "List[int]"}, "n": {"description": "The number of largest numbers to find.", "type": "int"}}}]"#;

/// The running example's user query.
pub const HEXAGON_QUERY: &str = "What is the area of a hexagon with vertices at (1, 1), (5, 1), (7, 5), (5, 9), (1, 9), and (0, 5)? Also, extract the 4 largest numbers in the list [120, 130, 140, 150, 160]";

/// The correct answer: two calls, one per tool.
pub const HEXAGON_CHOSEN: &str = r#"[{"name": "polygon_area_shoelace", "arguments": {"vertices": [[1, 1], [5, 1], [7, 5], [5, 9], [1, 9], [0, 5]]}}, {"name": "find_n_largest_numbers", "arguments": {"nums": [120, 130, 140, 150, 160], "n": 4}}]"#;

/// The corrupted answer: identical except the first call gains a redundant
/// `"n": 4` argument that belongs to the sibling tool.
pub const HEXAGON_REJECTED: &str = r#"[{"name": "polygon_area_shoelace", "arguments": {"vertices": [[1, 1], [5, 1], [7, 5], [5, 9], [1, 9], [0, 5]], "n": 4}}, {"name": "find_n_largest_numbers", "arguments": {"nums": [120, 130, 140, 150, 160], "n": 4}}]"#;

/// Parses the example tools.
pub fn hexagon_tools() -> Vec<ToolSpec> {
    let raws: Vec<serde_json::Value> = serde_json::from_str(HEXAGON_TOOLS).unwrap();
    raws.iter().map(|r| parse_tool_spec(r).unwrap()).collect()
}

/// The running example as a full evaluation case (gold = chosen answer).
pub fn hexagon_case() -> EvalCase {
    EvalCase {
        id: "hexagon".into(),
        query: HEXAGON_QUERY.into(),
        tools: hexagon_tools(),
        gold: parse_strict(HEXAGON_CHOSEN).unwrap().calls,
        context: None,
    }
}

/// The running example as one unified-format JSONL line.
pub fn hexagon_case_line() -> String {
    serde_json::to_string(&hexagon_case()).unwrap()
}

/// A deterministic corpus of `n` two-tool cases on which every checklist
/// error class has a legal injection site: both tools are called, every
/// declared parameter is filled with a non-empty, correctly typed value,
/// and each call leaves the sibling tool's parameters as spare keys.
pub fn synth_corpus(n: usize) -> Vec<EvalCase> {
    (0..n)
        .map(|i| {
            let lookup = parse_tool_spec(&serde_json::json!({
                "name": format!("lookup_record_{i}"),
                "description": "Fetches one record by key.",
                "parameters": {
                    "key": {"type": "str", "description": "Record key."},
                    "limit": {"type": "int", "description": "Result cap."}
                }
            }))
            .unwrap();
            let score = parse_tool_spec(&serde_json::json!({
                "name": format!("score_batch_{i}"),
                "description": "Scores a batch of values.",
                "parameters": {
                    "values": {"type": "List[float]", "description": "Batch values."},
                    "label": {"type": "str", "description": "Batch label."}
                }
            }))
            .unwrap();
            let limit = i % 7 + 1;
            let gold_text = format!(
                r#"[{{"name": "lookup_record_{i}", "arguments": {{"key": "record-{i}", "limit": {limit}}}}}, {{"name": "score_batch_{i}", "arguments": {{"values": [{}.5, {}.25], "label": "batch-{i}"}}}}]"#,
                i,
                i + 1
            );
            EvalCase {
                id: format!("case-{i:04}"),
                query: format!(
                    "Fetch record {i} with at most {limit} results, then score the batch {i}."
                ),
                tools: vec![lookup, score],
                gold: parse_strict(&gold_text).unwrap().calls,
                context: None,
            }
        })
        .collect()
}

/// A small two-parameter tool in the shape of the checklist template's
/// placeholder tool: one required text parameter, one optional integer.
pub fn template_tool() -> ToolSpec {
    parse_tool_spec(&serde_json::json!({
        "name": "name_of_the_tool",
        "description": "description_of_the_tool",
        "parameters": {
            "parameter_1": {"type": "str", "description": "description_of_the_parameter"},
            "parameter_2": {"type": "int", "description": "description_of_the_parameter"}
        },
        "required": ["parameter_1"]
    }))
    .unwrap()
}
