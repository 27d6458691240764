//! Two-round checklist-guided conversations against a provider-agnostic
//! chat client, with token accounting.
//!
//! Round 1 sends the task instructions as the system message and the query
//! with the global error checklist appended as the user message. Round 2
//! replays the conversation, appends the assistant's first answer, and asks
//! for a corrected final answer guided by the local checklists of the tools
//! the assistant actually invoked, plus the schema-level findings our own
//! checker raised against that first answer:
//!
//! ```text
//! round 1: [system: instructions+tools] [user: query + global checklist]
//! round 2: ...round 1... [assistant: output 1]
//!          [user: findings + local checklists + re-emit instruction]
//! ```
//!
//! The second round is unconditional when enabled — the checklist prompt
//! asks the model to confirm or correct — except when round 1 invoked no
//! tools at all, in which case there is nothing to correct and the run
//! stays single-round. Prompt construction is pure: identical inputs yield
//! byte-identical message lists, so a scripted client makes the whole
//! pipeline deterministic and network-free.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::callparse::{parse_lenient, ToolCall};
use crate::checker::{check, render_global_checklist, CheckMode, ErrorFinding};
use crate::ingest::{render_task_instructions, EvalCase};
use crate::localgen::LocalChecklist;
use crate::toolspec::registry_from_specs;

/// One conversation turn.
#[derive(Clone, Debug, Deserialize, Eq, PartialEq, Serialize)]
pub struct ChatMessage {
    /// `system`, `user`, or `assistant`.
    pub role: String,
    /// Turn text; non-empty for system and user turns.
    pub content: String,
}

impl ChatMessage {
    /// A system turn.
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    /// A user turn.
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }

    /// An assistant turn.
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: content.into() }
    }
}

/// Token counts reported by a completion.
#[derive(Clone, Copy, Debug, Default, Deserialize, Eq, PartialEq, Serialize)]
pub struct Usage {
    /// Tokens consumed by the prompt.
    pub prompt_tokens: u64,
    /// Tokens generated by the model.
    pub generated_tokens: u64,
}

impl Usage {
    /// Component-wise sum.
    pub fn plus(self, other: Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens + other.prompt_tokens,
            generated_tokens: self.generated_tokens + other.generated_tokens,
        }
    }

    /// Prompt plus generated tokens.
    pub fn total(self) -> u64 {
        self.prompt_tokens + self.generated_tokens
    }
}

/// A completion: the model's text and its usage counts.
#[derive(Clone, Debug, Deserialize, Eq, PartialEq, Serialize)]
pub struct ChatResponse {
    /// The completion text.
    pub text: String,
    /// Declared token counts.
    pub usage: Usage,
}

/// Chat transport failures.
#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The request could not be sent or the response not received.
    #[error("chat transport failure for `{tag}`: {reason}")]
    Transport {
        /// The request tag.
        tag: String,
        /// Underlying failure.
        reason: String,
    },
    /// The provider answered with something other than a completion.
    #[error("malformed provider response for `{tag}`: {reason}")]
    MalformedResponse {
        /// The request tag.
        tag: String,
        /// What was wrong with the payload.
        reason: String,
    },
    /// A scripted client had no entry for the tag.
    #[error("no scripted response for `{tag}`")]
    MissingScript {
        /// The request tag.
        tag: String,
    },
    /// The configured credentials variable is not set.
    #[error("missing credentials: set the `{var}` environment variable")]
    MissingCredentials {
        /// The environment variable name.
        var: String,
    },
}

/// A provider-agnostic chat completion client. Implementations must
/// tolerate concurrent calls.
///
/// The `tag` names the request within a run (for example `case-7/round2`)
/// so that scripted clients can key on it and errors can identify the
/// failing call; transports are free to ignore it.
pub trait ChatClient: Send + Sync {
    /// Completes a conversation, returning text and usage counts.
    fn complete(&self, tag: &str, messages: &[ChatMessage]) -> Result<ChatResponse, ClientError>;
}

/// A canned client mapping request tags to fixed responses. Hermetic: the
/// whole pipeline becomes deterministic and network-free.
#[derive(Clone, Debug, Default)]
pub struct ScriptedClient {
    responses: BTreeMap<String, ChatResponse>,
}

#[derive(Deserialize)]
struct ScriptEntry {
    tag: String,
    text: String,
    #[serde(default)]
    usage: Usage,
}

impl ScriptedClient {
    /// An empty script.
    pub fn new() -> Self {
        ScriptedClient::default()
    }

    /// Registers the response for a tag, replacing any previous one.
    pub fn insert(&mut self, tag: impl Into<String>, response: ChatResponse) {
        self.responses.insert(tag.into(), response);
    }

    /// Loads a script from JSON-lines records
    /// `{"tag", "text", "usage": {"prompt_tokens", "generated_tokens"}?}`.
    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        let text = fs::read_to_string(path).map_err(|e| ClientError::Transport {
            tag: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut client = ScriptedClient::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| ClientError::MalformedResponse {
                    tag: format!("{}:{}", path.display(), idx + 1),
                    reason: e.to_string(),
                })?;
            client.insert(entry.tag, ChatResponse { text: entry.text, usage: entry.usage });
        }
        Ok(client)
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, tag: &str, _messages: &[ChatMessage]) -> Result<ChatResponse, ClientError> {
        self.responses
            .get(tag)
            .cloned()
            .ok_or_else(|| ClientError::MissingScript { tag: tag.to_string() })
    }
}

/// Configuration of the HTTP chat-completions client.
#[derive(Clone, Debug)]
pub struct HttpClientConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Provider model identifier.
    pub model: String,
    /// Sampling temperature.
    pub temperature: f64,
    /// Generation cap per completion.
    pub max_tokens: u64,
    /// Environment variable holding the API key.
    pub api_key_env: String,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            temperature: 0.0,
            max_tokens: 1024,
            api_key_env: "CHAT_API_KEY".into(),
        }
    }
}

/// A client speaking the HTTP chat-completions wire format: messages array
/// in, choice text plus usage out. Credentials come from the environment
/// variable named in the configuration.
pub struct HttpChatClient {
    config: HttpClientConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// Builds a client over a fresh connection pool.
    pub fn new(config: HttpClientConfig) -> Self {
        HttpChatClient { config, http: reqwest::blocking::Client::new() }
    }
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatClient for HttpChatClient {
    fn complete(&self, tag: &str, messages: &[ChatMessage]) -> Result<ChatResponse, ClientError> {
        let key = std::env::var(&self.config.api_key_env).map_err(|_| {
            ClientError::MissingCredentials { var: self.config.api_key_env.clone() }
        })?;
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let response = self
            .http
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| ClientError::Transport { tag: tag.to_string(), reason: e.to_string() })?;
        let status = response.status();
        if !status.is_success() {
            return Err(ClientError::Transport {
                tag: tag.to_string(),
                reason: format!("HTTP {status}"),
            });
        }
        let wire: WireResponse = response.json().map_err(|e| ClientError::MalformedResponse {
            tag: tag.to_string(),
            reason: e.to_string(),
        })?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| {
            ClientError::MalformedResponse { tag: tag.to_string(), reason: "no choices".into() }
        })?;
        let usage = wire.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            generated_tokens: u.completion_tokens,
        });
        Ok(ChatResponse { text: choice.message.content, usage: usage.unwrap_or_default() })
    }
}

/// Tokenizer-free token estimate: whitespace-separated word count. Used
/// only for prompt-growth comparisons, never for billing.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Errors from running a conversation.
#[derive(Debug, thiserror::Error)]
pub enum IclError {
    /// The chat client failed; `round` is the failing round (1 or 2).
    #[error("round {round} failed: {source}")]
    Client {
        /// Which round was being executed.
        round: u8,
        /// The underlying client failure.
        #[source]
        source: ClientError,
    },
    /// The configured token budget was exhausted.
    #[error("token budget exceeded: used {used} of {budget}")]
    BudgetExceeded {
        /// Tokens consumed so far.
        used: u64,
        /// The configured cap.
        budget: u64,
    },
}

/// A complete run of one case: every prompt, every output, the findings our
/// checker raised per round, and summed usage. Serializable for offline
/// re-scoring without re-querying. The round-2 fields are absent exactly
/// when no second round was issued — either because the run was configured
/// single-round or because round 1 invoked no tools.
#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
pub struct IclRunRecord {
    /// The case id.
    pub id: String,
    /// Messages sent in round 1.
    pub round1_messages: Vec<ChatMessage>,
    /// The model's round-1 output.
    pub round1_output: String,
    /// Schema-level findings against the round-1 output.
    pub round1_findings: Vec<ErrorFinding>,
    /// Messages sent in round 2, when a second round was issued.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round2_messages: Option<Vec<ChatMessage>>,
    /// The model's round-2 output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round2_output: Option<String>,
    /// Schema-level findings against the round-2 output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round2_findings: Option<Vec<ErrorFinding>>,
    /// Tools invoked in round 1 for which no local checklist was supplied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_checklists: Vec<String>,
    /// Lenient parse of the last round's output.
    pub final_calls: Vec<ToolCall>,
    /// Usage summed across rounds.
    pub usage: Usage,
}

/// How to run a case.
#[derive(Clone, Debug)]
pub struct IclOptions {
    /// Issue the checklist-guided second round.
    pub two_round: bool,
    /// Append the global checklist to the round-1 user message. Disabling
    /// this together with `two_round = false` gives the vanilla baseline.
    pub with_global: bool,
    /// Local checklists available for round 2.
    pub checklists: Vec<LocalChecklist>,
    /// Optional cap on total tokens (prompt + generated) per case.
    pub budget: Option<u64>,
}

impl Default for IclOptions {
    /// Two rounds with the global checklist and no budget.
    fn default() -> Self {
        IclOptions { two_round: true, with_global: true, checklists: Vec::new(), budget: None }
    }
}

/// Round-2 user message skeleton. `{FINDINGS}` receives the automatic check
/// results for the round-1 output and `{CHECKLISTS}` the invoked tools'
/// local checklist entries. Isolated as one constant so the wording can be
/// swapped without touching the protocol.
pub const ROUND2_INSTRUCTION: &str = "Your previous function calling output was checked against \
the error checklists of the tools you invoked. Review each checklist entry below, verify that \
your previous output avoids every listed error, and correct it where necessary.\n\
\n\
{FINDINGS}\n\
\n\
{CHECKLISTS}\n\
Output the corrected final answer now. The output MUST strictly adhere to the following JSON \
format, and NO other text MUST be included. If no function call is needed, please directly \
output an empty list \"[]\"\n\
\n\
[\n\
    {\"name\": \"func_name1\", \"arguments\": {\"argument1\": \"value1\", \"argument2\": \"value2\"}},\n\
    ... (more tool calls as required)\n\
]";

/// Builds the round-1 conversation: the task instruction block (with the
/// case's tools serialized) as the system message, any predefined context
/// turns, then the query with the global checklist appended. Pure: the
/// same inputs always yield the same bytes.
pub fn build_round1(case: &EvalCase, global_text: &str) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(render_task_instructions(&case.tools))];
    if let Some(context) = &case.context {
        messages.extend(context.iter().cloned());
    }
    let user = if global_text.is_empty() {
        case.query.clone()
    } else {
        format!("{}\n\n{}", case.query, global_text)
    };
    messages.push(ChatMessage::user(user));
    messages
}

/// The messages of a prepared second round plus the invoked tools that had
/// no local checklist.
#[derive(Clone, Debug)]
pub struct Round2Build {
    /// Full message list for the round-2 request.
    pub messages: Vec<ChatMessage>,
    /// Invoked tool names lacking a supplied checklist, in invocation order.
    pub skipped_tools: Vec<String>,
}

/// Builds the round-2 conversation from a round-1 record in progress:
/// replays round 1, appends the assistant's output, and adds a user message
/// with the automatic findings, the invoked tools' local checklist entries,
/// and the instruction to re-emit the corrected canonical array.
pub fn build_round2(record: &IclRunRecord, checklists: &[LocalChecklist]) -> Round2Build {
    let outcome = parse_lenient(&record.round1_output);
    let mut invoked: Vec<&str> = Vec::new();
    for call in &outcome.calls {
        if !invoked.contains(&call.name.as_str()) {
            invoked.push(&call.name);
        }
    }
    let mut blocks = Vec::new();
    let mut skipped_tools = Vec::new();
    for name in invoked {
        match checklists.iter().find(|c| c.tool.name == name) {
            Some(checklist) => blocks.push(render_local_block(checklist)),
            None => skipped_tools.push(name.to_string()),
        }
    }
    let checklist_text = if blocks.is_empty() {
        "No local checklists are available for the invoked tools.\n".to_string()
    } else {
        blocks.concat()
    };
    let findings_text = if record.round1_findings.is_empty() {
        "Automatic checks reported no errors.".to_string()
    } else {
        let lines: Vec<String> = record
            .round1_findings
            .iter()
            .map(|f| f.machine_message())
            .collect();
        format!("Automatic checks reported:\n{}", lines.join("\n"))
    };
    let user = ROUND2_INSTRUCTION
        .replace("{FINDINGS}", &findings_text)
        .replace("{CHECKLISTS}", &checklist_text);
    let mut messages = record.round1_messages.clone();
    messages.push(ChatMessage::assistant(record.round1_output.clone()));
    messages.push(ChatMessage::user(user));
    Round2Build { messages, skipped_tools }
}

fn render_local_block(checklist: &LocalChecklist) -> String {
    let mut out = format!("Local error checklist for the tool '{}':\n\n", checklist.tool.name);
    for entry in &checklist.entries {
        out.push_str(&format!(
            "Error: {}\nQuery: {}\nFunction Calling Output: {}\nError Message: {}\nThought of Error: {}\n\n",
            entry.code.title(),
            entry.query,
            entry.faulty_output,
            entry.error_message,
            entry.thought,
        ));
    }
    out
}

fn check_budget(usage: Usage, budget: Option<u64>) -> Result<(), IclError> {
    match budget {
        Some(cap) if usage.total() > cap => {
            Err(IclError::BudgetExceeded { used: usage.total(), budget: cap })
        }
        _ => Ok(()),
    }
}

/// Runs one case: round 1 always, round 2 when enabled and round 1 invoked
/// at least one tool. `final_calls` is the lenient parse of the last
/// round's output; usage is summed across rounds.
pub fn run_icl(
    case: &EvalCase,
    client: &dyn ChatClient,
    options: &IclOptions,
) -> Result<IclRunRecord, IclError> {
    let global_text = if options.with_global {
        render_global_checklist()
    } else {
        String::new()
    };
    let round1_messages = build_round1(case, &global_text);
    let response1 = client
        .complete(&format!("{}/round1", case.id), &round1_messages)
        .map_err(|source| IclError::Client { round: 1, source })?;
    check_budget(response1.usage, options.budget)?;
    let registry = registry_from_specs(&case.tools);
    let outcome1 = parse_lenient(&response1.text);
    let round1_findings = check(&outcome1, &registry, None, CheckMode::SchemaOnly)
        .expect("schema-only checking needs no gold");
    let mut record = IclRunRecord {
        id: case.id.clone(),
        round1_messages,
        round1_output: response1.text,
        round1_findings,
        round2_messages: None,
        round2_output: None,
        round2_findings: None,
        skipped_checklists: Vec::new(),
        final_calls: outcome1.calls.clone(),
        usage: response1.usage,
    };
    if options.two_round && !outcome1.calls.is_empty() {
        let built = build_round2(&record, &options.checklists);
        let response2 = client
            .complete(&format!("{}/round2", case.id), &built.messages)
            .map_err(|source| IclError::Client { round: 2, source })?;
        record.usage = record.usage.plus(response2.usage);
        check_budget(record.usage, options.budget)?;
        let outcome2 = parse_lenient(&response2.text);
        record.round2_findings = Some(
            check(&outcome2, &registry, None, CheckMode::SchemaOnly)
                .expect("schema-only checking needs no gold"),
        );
        record.final_calls = outcome2.calls;
        record.skipped_checklists = built.skipped_tools;
        record.round2_messages = Some(built.messages);
        record.round2_output = Some(response2.text);
    }
    Ok(record)
}

/// Runs many cases with at most `in_flight` concurrent requests. Each
/// case's rounds stay strictly sequential; results land in case order.
pub fn run_icl_batch(
    cases: &[EvalCase],
    client: &dyn ChatClient,
    options: &IclOptions,
    in_flight: usize,
) -> Vec<Result<IclRunRecord, IclError>> {
    let workers = in_flight.max(1).min(cases.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<IclRunRecord, IclError>>>> =
        Mutex::new((0..cases.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cases.len() {
                    break;
                }
                let result = run_icl(&cases[i], client, options);
                slots.lock().expect("result mutex never poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result mutex never poisoned")
        .into_iter()
        .map(|slot| slot.expect("every slot filled"))
        .collect()
}

/// Writes run records as JSON-lines.
pub fn write_run_records(records: &[IclRunRecord], path: &Path) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for record in records {
        let line = serde_json::to_string(record).expect("records always serialize");
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    fs::write(path, buf)
}

/// Reads run records from a JSON-lines file, skipping blank lines.
pub fn read_run_records(path: &Path) -> std::io::Result<Vec<IclRunRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        records.push(record);
    }
    Ok(records)
}

/// Per-token prices for cost accounting, in currency units per 1,000
/// tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriceConfig {
    /// Price per 1,000 prompt tokens.
    pub input_per_1k: f64,
    /// Price per 1,000 generated tokens.
    pub output_per_1k: f64,
}

/// Aggregated usage over a batch of run records. Token counts are always
/// reported; currency only when prices are configured.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostTable {
    /// Number of records.
    pub cases: usize,
    /// Total prompt tokens.
    pub prompt_tokens: u64,
    /// Total generated tokens.
    pub generated_tokens: u64,
    /// Mean prompt tokens per case.
    pub prompt_tokens_per_case: f64,
    /// Mean generated tokens per case.
    pub generated_tokens_per_case: f64,
    /// Mean cost per case, when prices were supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_per_case: Option<f64>,
}

/// Sums usage over records and prices it per case when prices are given.
pub fn cost_table(records: &[IclRunRecord], prices: Option<PriceConfig>) -> CostTable {
    let prompt_tokens: u64 = records.iter().map(|r| r.usage.prompt_tokens).sum();
    let generated_tokens: u64 = records.iter().map(|r| r.usage.generated_tokens).sum();
    let cases = records.len();
    let denom = cases.max(1) as f64;
    CostTable {
        cases,
        prompt_tokens,
        generated_tokens,
        prompt_tokens_per_case: prompt_tokens as f64 / denom,
        generated_tokens_per_case: generated_tokens as f64 / denom,
        cost_per_case: prices.map(|p| {
            (prompt_tokens as f64 / 1000.0 * p.input_per_1k
                + generated_tokens as f64 / 1000.0 * p.output_per_1k)
                / denom
        }),
    }
}
