//! Tool and parameter type system plus the in-memory tool registry.
//!
//! Every other module speaks in terms of [`ToolSpec`]: a callable tool with a
//! name, a description, and an ordered list of typed parameters. Tool specs
//! are read from JSON objects of the shape
//!
//! ```text
//! {"name": "...", "description": "...",
//!  "parameters": {"param": {"type": "List[int]", "description": "..."}},
//!  "required": ["param"]}
//! ```
//!
//! Type strings use a small Python-typing-like grammar (`str`, `int`,
//! `float`, `bool`, `List[..]`, `Tuple[..]`, `dict`); anything unrecognized
//! parses to [`TypeKind::Unknown`], which downstream checking treats as
//! "do not type-check" rather than guessing.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

/// Errors produced while interpreting a raw tool specification.
#[derive(Debug, thiserror::Error)]
pub enum ToolSpecError {
    /// The raw object is missing a usable `name`, or declares the same
    /// parameter twice.
    #[error("malformed tool spec: {0}")]
    MalformedSpec(String),
}

/// The kind of a parameter type.
#[derive(Clone, Copy, Debug, Eq, Hash, PartialEq)]
pub enum TypeKind {
    /// Textual value (`"str"` / `"string"`).
    String,
    /// Integer number (`"int"` / `"integer"`).
    Integer,
    /// Any numeric value, integer or not (`"float"` / `"number"`).
    Number,
    /// Boolean (`"bool"` / `"boolean"`).
    Boolean,
    /// Homogeneous sequence (`List[X]`).
    List,
    /// Fixed-arity positional sequence (`Tuple[X, Y]`).
    Tuple,
    /// String-keyed object (`"dict"` / `"object"`).
    Object,
    /// Unrecognized type string; disables type checking for the parameter.
    Unknown,
}

impl TypeKind {
    /// True for kinds that may carry element types.
    pub fn is_composite(self) -> bool {
        matches!(self, TypeKind::List | TypeKind::Tuple | TypeKind::Object)
    }
}

/// A parsed parameter type: a kind plus element types for composites.
///
/// Scalar kinds carry no element types; `List` conventionally carries one
/// (the element type), `Tuple` carries one per position. An empty element
/// list on a composite means "elements are unchecked".
#[derive(Clone, Debug, Eq, Hash, PartialEq)]
pub struct ParamType {
    /// The type's kind.
    pub kind: TypeKind,
    /// Nested element types (composites only; empty for scalars).
    pub element: Vec<ParamType>,
}

impl ParamType {
    /// A scalar type of the given kind (no element types).
    pub fn scalar(kind: TypeKind) -> Self {
        ParamType { kind, element: Vec::new() }
    }

    /// A `List` with the given element type.
    pub fn list(element: ParamType) -> Self {
        ParamType { kind: TypeKind::List, element: vec![element] }
    }

    /// A `Tuple` with the given positional element types.
    pub fn tuple(element: Vec<ParamType>) -> Self {
        ParamType { kind: TypeKind::Tuple, element }
    }

    /// True when type checking should be skipped for this type.
    pub fn is_unknown(&self) -> bool {
        self.kind == TypeKind::Unknown
    }
}

impl fmt::Display for ParamType {
    /// Renders the canonical type string; parsing the rendering yields an
    /// equal `ParamType` (round-trip identity).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TypeKind::String => write!(f, "str"),
            TypeKind::Integer => write!(f, "int"),
            TypeKind::Number => write!(f, "float"),
            TypeKind::Boolean => write!(f, "bool"),
            TypeKind::Object => write!(f, "dict"),
            TypeKind::Unknown => write!(f, "unknown"),
            TypeKind::List | TypeKind::Tuple => {
                let head = if self.kind == TypeKind::List { "List" } else { "Tuple" };
                let inner: Vec<String> = self.element.iter().map(|e| e.to_string()).collect();
                write!(f, "{}[{}]", head, inner.join(", "))
            }
        }
    }
}

/// Parses a type string into a [`ParamType`].
///
/// Total by design: unrecognized inputs (including unbalanced brackets)
/// return [`TypeKind::Unknown`] instead of failing. Keyword matching is
/// case-insensitive and whitespace-tolerant.
pub fn parse_param_type(s: &str) -> ParamType {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    match lower.as_str() {
        "str" | "string" => return ParamType::scalar(TypeKind::String),
        "int" | "integer" => return ParamType::scalar(TypeKind::Integer),
        "float" | "number" => return ParamType::scalar(TypeKind::Number),
        "bool" | "boolean" => return ParamType::scalar(TypeKind::Boolean),
        "dict" | "object" => return ParamType::scalar(TypeKind::Object),
        _ => {}
    }
    if let Some((head, inner)) = split_bracketed(t) {
        let kind = match head.to_ascii_lowercase().as_str() {
            "list" => Some(TypeKind::List),
            "tuple" => Some(TypeKind::Tuple),
            _ => None,
        };
        if let Some(kind) = kind {
            let element = split_top_level(inner).iter().map(|e| parse_param_type(e)).collect();
            return ParamType { kind, element };
        }
    }
    ParamType::scalar(TypeKind::Unknown)
}

/// Splits `Head[inner]` into `(Head, inner)` when the brackets are balanced
/// and the closing bracket ends the string.
fn split_bracketed(t: &str) -> Option<(&str, &str)> {
    let open = t.find('[')?;
    if !t.ends_with(']') {
        return None;
    }
    let inner = &t[open + 1..t.len() - 1];
    let mut depth = 0i32;
    for c in inner.chars() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    Some((&t[..open], inner))
}

/// Splits on commas at bracket depth zero; returns no parts for blank input.
fn split_top_level(inner: &str) -> Vec<&str> {
    if inner.trim().is_empty() {
        return Vec::new();
    }
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0usize;
    for (i, c) in inner.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&inner[start..]);
    parts
}

/// One declared parameter of a tool.
#[derive(Clone, Debug, Eq, Hash, PartialEq)]
pub struct ParamSpec {
    /// Parameter name; non-empty and unique within its tool.
    pub name: String,
    /// Declared type.
    pub ptype: ParamType,
    /// Free-form description (prose only; never constrains values).
    pub description: String,
    /// Whether the parameter must be supplied in every call.
    pub required: bool,
}

/// A callable tool: name, description, and ordered parameter list.
#[derive(Clone, Debug, Eq, PartialEq)]
pub struct ToolSpec {
    /// Tool name; non-empty.
    pub name: String,
    /// Free-form description.
    pub description: String,
    /// Declared parameters in declaration order.
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    /// Looks up a declared parameter by exact name.
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Iterates over the required parameters in declaration order.
    pub fn required_params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| p.required)
    }

    /// Serializes to the interchange JSON object shape.
    pub fn to_json(&self) -> Value {
        let mut params = Map::new();
        for p in &self.params {
            params.insert(
                p.name.clone(),
                json!({"description": p.description, "type": p.ptype.to_string()}),
            );
        }
        let required: Vec<&str> =
            self.params.iter().filter(|p| p.required).map(|p| p.name.as_str()).collect();
        json!({
            "name": self.name,
            "description": self.description,
            "parameters": Value::Object(params),
            "required": required,
        })
    }
}

impl Serialize for ToolSpec {
    fn serialize<S>(&self, serializer: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
    {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ToolSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Value::deserialize(deserializer)?;
        parse_tool_spec(&raw).map_err(D::Error::custom)
    }
}

/// Interprets a raw JSON object as a [`ToolSpec`].
///
/// Accepts `parameters` either as an object (`{name: {type, description}}`)
/// or as an array of `{name, type, description}` objects; `parameters` may be
/// absent entirely (zero-parameter tool). A missing `description` becomes
/// empty text. When no `required` list is present, every declared parameter
/// is treated as required (conservative default). Entries of `required` that
/// name no declared parameter are ignored.
pub fn parse_tool_spec(raw: &Value) -> Result<ToolSpec, ToolSpecError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| ToolSpecError::MalformedSpec("tool spec is not an object".into()))?;
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or("")
        .trim()
        .to_string();
    if name.is_empty() {
        return Err(ToolSpecError::MalformedSpec("missing or empty `name`".into()));
    }
    let description = obj
        .get("description")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();

    let mut params: Vec<ParamSpec> = Vec::new();
    match obj.get("parameters") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (pname, pval) in map {
                params.push(param_from_entry(&name, pname, pval)?);
            }
        }
        Some(Value::Array(items)) => {
            for item in items {
                let pname = item
                    .get("name")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .trim()
                    .to_string();
                if pname.is_empty() {
                    return Err(ToolSpecError::MalformedSpec(format!(
                        "tool `{name}`: parameter entry without a name"
                    )));
                }
                params.push(param_from_entry(&name, &pname, item)?);
            }
        }
        Some(other) => {
            return Err(ToolSpecError::MalformedSpec(format!(
                "tool `{name}`: `parameters` must be an object or array, got {other}"
            )));
        }
    }

    // Duplicate declarations are a spec-authoring bug, not a recoverable state.
    for (i, p) in params.iter().enumerate() {
        if params[..i].iter().any(|q| q.name == p.name) {
            return Err(ToolSpecError::MalformedSpec(format!(
                "tool `{name}`: duplicate parameter `{}`",
                p.name
            )));
        }
    }

    if let Some(req) = obj.get("required").and_then(Value::as_array) {
        let listed: Vec<&str> = req.iter().filter_map(Value::as_str).collect();
        for p in &mut params {
            p.required = listed.contains(&p.name.as_str());
        }
    }

    Ok(ToolSpec { name, description, params })
}

/// Builds one [`ParamSpec`] from a `{type, description}` entry object.
fn param_from_entry(tool: &str, pname: &str, pval: &Value) -> Result<ParamSpec, ToolSpecError> {
    let entry = pval.as_object().ok_or_else(|| {
        ToolSpecError::MalformedSpec(format!(
            "tool `{tool}`: parameter `{pname}` entry is not an object"
        ))
    })?;
    let ptype = entry
        .get("type")
        .and_then(Value::as_str)
        .map(parse_param_type)
        .unwrap_or_else(|| ParamType::scalar(TypeKind::Unknown));
    let description = entry
        .get("description")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    Ok(ParamSpec { name: pname.to_string(), ptype, description, required: true })
}

/// Immutable name-keyed collection of tool specs.
///
/// Lookup is exact-match and case-sensitive; [`ToolRegistry::near_miss`]
/// offers a case-insensitive suggestion for wrong-name diagnostics. Safe to
/// share across threads once built.
#[derive(Clone, Debug, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
    warnings: Vec<String>,
}

impl ToolRegistry {
    /// Number of registered tools.
    pub fn len(&self) -> usize {
        self.tools.len()
    }

    /// True when no tools are registered.
    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Case-sensitive exact lookup.
    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name)
    }

    /// Case-insensitive lookup for "did you mean" suggestions; returns the
    /// first registered name (in sorted order) equal to `name` ignoring case.
    pub fn near_miss(&self, name: &str) -> Option<&str> {
        self.tools
            .keys()
            .find(|k| k.eq_ignore_ascii_case(name) && k.as_str() != name)
            .map(String::as_str)
    }

    /// Iterates tools in sorted-name order.
    pub fn iter(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values()
    }

    /// Warnings recorded during construction (duplicate names).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Builds a registry from specs; on duplicate names the later spec wins and a
/// warning is recorded on the registry.
pub fn registry_from_specs(specs: &[ToolSpec]) -> ToolRegistry {
    let mut reg = ToolRegistry::default();
    for spec in specs {
        if reg.tools.contains_key(&spec.name) {
            reg.warnings
                .push(format!("duplicate tool name `{}`: later spec wins", spec.name));
        }
        reg.tools.insert(spec.name.clone(), spec.clone());
    }
    reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(s: &str) -> ParamType {
        parse_param_type(s)
    }

    #[test]
    fn scalar_aliases_parse() {
        assert_eq!(pt("int"), ParamType::scalar(TypeKind::Integer));
        assert_eq!(pt("integer"), ParamType::scalar(TypeKind::Integer));
        assert_eq!(pt("str"), ParamType::scalar(TypeKind::String));
        assert_eq!(pt(" string "), ParamType::scalar(TypeKind::String));
        assert_eq!(pt("float"), ParamType::scalar(TypeKind::Number));
        assert_eq!(pt("number"), ParamType::scalar(TypeKind::Number));
        assert_eq!(pt("bool"), ParamType::scalar(TypeKind::Boolean));
        assert_eq!(pt("Boolean"), ParamType::scalar(TypeKind::Boolean));
        assert_eq!(pt("dict"), ParamType::scalar(TypeKind::Object));
    }

    #[test]
    fn unknown_fallback_is_total() {
        assert_eq!(pt("Frobnicator"), ParamType::scalar(TypeKind::Unknown));
        assert_eq!(pt(""), ParamType::scalar(TypeKind::Unknown));
        assert_eq!(pt("List[int"), ParamType::scalar(TypeKind::Unknown));
        assert_eq!(pt("]["), ParamType::scalar(TypeKind::Unknown));
    }

    #[test]
    fn nested_composites_parse() {
        assert_eq!(
            pt("List[Tuple[float, float]]"),
            ParamType::list(ParamType::tuple(vec![
                ParamType::scalar(TypeKind::Number),
                ParamType::scalar(TypeKind::Number),
            ]))
        );
        assert_eq!(pt("List[int]"), ParamType::list(ParamType::scalar(TypeKind::Integer)));
        assert_eq!(pt("List[]"), ParamType { kind: TypeKind::List, element: vec![] });
        assert_eq!(
            pt("Tuple[int, str, bool]").element.len(),
            3,
            "top-level comma split inside Tuple"
        );
        assert_eq!(
            pt("List[Frobnicator]"),
            ParamType::list(ParamType::scalar(TypeKind::Unknown))
        );
    }

    fn two_tool_fixture() -> Vec<Value> {
        serde_json::from_str(
            r#"[{"name": "polygon_area_shoelace", "description": "Calculates the area of a polygon using the shoelace formula.", "parameters": {"vertices": {"description": "A list of polygon vertices represented as tuples (x, y).", "type": "List[Tuple[float, float]]"}}}, {"name": "find_n_largest_numbers", "description": "Finds the n largest numbers in a list.", "parameters": {"nums": {"description": "The list of numbers.", "type": "List[int]"}, "n": {"description": "The number of largest numbers to find.", "type": "int"}}}]"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_two_param_tool_with_all_required_default() {
        let raw = &two_tool_fixture()[1];
        let tool = parse_tool_spec(raw).unwrap();
        assert_eq!(tool.name, "find_n_largest_numbers");
        assert_eq!(tool.params.len(), 2);
        // Declaration order is preserved: nums before n.
        assert_eq!(tool.params[0].name, "nums");
        assert_eq!(tool.params[0].ptype, pt("List[int]"));
        assert_eq!(tool.params[1].name, "n");
        assert_eq!(tool.params[1].ptype, pt("int"));
        // No `required` list: every parameter is required.
        assert!(tool.params.iter().all(|p| p.required));
    }

    #[test]
    fn zero_parameter_tool_parses() {
        let tool = parse_tool_spec(&serde_json::json!({"name": "t", "parameters": {}})).unwrap();
        assert_eq!(tool.name, "t");
        assert!(tool.params.is_empty());
        assert_eq!(tool.description, "");
    }

    #[test]
    fn duplicate_parameter_names_are_malformed() {
        let raw = serde_json::json!({
            "name": "t",
            "parameters": [
                {"name": "a", "type": "int"},
                {"name": "a", "type": "str"}
            ]
        });
        assert!(matches!(parse_tool_spec(&raw), Err(ToolSpecError::MalformedSpec(_))));
    }

    #[test]
    fn missing_name_is_malformed() {
        assert!(parse_tool_spec(&serde_json::json!({"parameters": {}})).is_err());
        assert!(parse_tool_spec(&serde_json::json!({"name": "", "parameters": {}})).is_err());
    }

    #[test]
    fn explicit_required_list_marks_others_optional() {
        let raw = serde_json::json!({
            "name": "t",
            "parameters": {"a": {"type": "int"}, "b": {"type": "str"}},
            "required": ["a"]
        });
        let tool = parse_tool_spec(&raw).unwrap();
        assert!(tool.param("a").unwrap().required);
        assert!(!tool.param("b").unwrap().required);
    }

    #[test]
    fn registry_duplicates_warn_and_later_wins() {
        let mut a = parse_tool_spec(&serde_json::json!({"name": "t", "parameters": {}})).unwrap();
        let b = parse_tool_spec(
            &serde_json::json!({"name": "t", "parameters": {"x": {"type": "int"}}}),
        )
        .unwrap();
        a.description = "first".into();
        let reg = registry_from_specs(&[a, b]);
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.warnings().len(), 1);
        assert_eq!(reg.get("t").unwrap().params.len(), 1, "later spec wins");
    }

    #[test]
    fn registry_of_fixture_tools_has_size_two() {
        let tools: Vec<ToolSpec> =
            two_tool_fixture().iter().map(|v| parse_tool_spec(v).unwrap()).collect();
        let reg = registry_from_specs(&tools);
        assert_eq!(reg.len(), 2);
        assert!(reg.get("polygon_area_shoelace").is_some());
        assert!(reg.get("find_n_largest_numbers").is_some());
        assert!(reg.get("Polygon_Area_Shoelace").is_none(), "lookup is case-sensitive");
        assert_eq!(reg.near_miss("Polygon_Area_Shoelace"), Some("polygon_area_shoelace"));
    }

    #[test]
    fn tool_spec_round_trips_through_json() {
        for raw in two_tool_fixture() {
            let tool = parse_tool_spec(&raw).unwrap();
            let rendered = tool.to_json();
            let back = parse_tool_spec(&rendered).unwrap();
            assert_eq!(tool, back);
        }
    }

    /// Strategy for well-formed `ParamType`s (invariant: scalars carry no
    /// element types).
    fn arb_param_type() -> impl Strategy<Value = ParamType> {
        let scalar = prop_oneof![
            Just(TypeKind::String),
            Just(TypeKind::Integer),
            Just(TypeKind::Number),
            Just(TypeKind::Boolean),
            Just(TypeKind::Object),
            Just(TypeKind::Unknown),
        ]
        .prop_map(ParamType::scalar);
        scalar.prop_recursive(3, 12, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..3)
                    .prop_map(|element| ParamType { kind: TypeKind::List, element }),
                prop::collection::vec(inner, 0..3)
                    .prop_map(|element| ParamType { kind: TypeKind::Tuple, element }),
            ]
        })
    }

    proptest! {
        #[test]
        fn parse_param_type_never_panics(s in ".*") {
            let _ = parse_param_type(&s);
        }

        #[test]
        fn param_type_display_round_trips(t in arb_param_type()) {
            prop_assert_eq!(parse_param_type(&t.to_string()), t);
        }

        #[test]
        fn tool_spec_serde_round_trips(
            name in "[a-z_][a-z0-9_]{0,12}",
            pnames in prop::collection::btree_set("[a-z][a-z0-9_]{0,8}", 0..4),
            reqmask in prop::collection::vec(any::<bool>(), 4),
            types in prop::collection::vec(arb_param_type(), 4),
        ) {
            let params: Vec<ParamSpec> = pnames
                .iter()
                .enumerate()
                .map(|(i, p)| ParamSpec {
                    name: p.clone(),
                    ptype: types[i].clone(),
                    description: format!("param {p}"),
                    required: reqmask[i],
                })
                .collect();
            let tool = ToolSpec { name, description: "d".into(), params };
            let text = serde_json::to_string(&tool).unwrap();
            let back: ToolSpec = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(tool, back);
        }
    }
}
