//! Checklist-driven validation, data synthesis, and evaluation for LLM
//! tool calling.
//!
//! The crate is organized around a hierarchical error checklist for
//! function-calling outputs — wrong tool name, missing required parameter,
//! invalid parameter type, empty parameter value, redundant parameter,
//! invalid output format, redundant information, and wrong number of tools
//! — and builds four workflows on top of it:
//!
//! - **Checking** ([`callparse`], [`toolspec`], [`checker`]): parse a
//!   model's serialized tool calls, then judge them against the tool
//!   specs and, optionally, reference calls. Every failure is reported as
//!   a structured finding with a templated error message and a
//!   correction thought.
//! - **Data synthesis** ([`negsample`], [`localgen`]): inject exactly one
//!   checklist error into a known-good answer to form chosen/rejected
//!   preference pairs, and instantiate per-tool error checklists either
//!   offline or through a chat model.
//! - **Evaluation** ([`metrics`], [`ingest`]): align predicted calls with
//!   gold calls and micro-average two F1 tiers — name match and
//!   name+parameter match.
//! - **Conversation protocol** ([`icl`]): a two-round loop where round
//!   one carries the global checklist and round two feeds back automatic
//!   findings plus the local checklists of the invoked tools.
//!
//! [`prefopt`] is a self-contained numerical companion: a tabular toy
//! model and exact gradients for two preference-tuning losses,
//! demonstrating why pairwise optimization stalls on pairs that differ in
//! a single token while the unpaired loss does not.
//!
//! Numeric code in [`prefopt`] is generic over the scalar type; the
//! crate root exports `f64` aliases ([`ToyModelF64`], [`KtoConfigF64`],
//! …) for callers that do not care about the type parameter.
//!
//! The `callcheck` binary (see [`cli`]) wires these modules into batch
//! subcommands with JSON reports.

pub mod callparse;
pub mod checker;
pub mod cli;
#[doc(hidden)]
pub mod fixtures;
pub mod icl;
pub mod ingest;
pub mod localgen;
pub mod metrics;
pub mod negsample;
pub mod prefopt;
pub mod toolspec;

/// [`prefopt::ToyModel`] over `f64`.
pub type ToyModelF64 = prefopt::ToyModel<f64>;
/// [`prefopt::KtoConfig`] over `f64`.
pub type KtoConfigF64 = prefopt::KtoConfig<f64>;
/// [`prefopt::GradientReport`] over `f64`.
pub type GradientReportF64 = prefopt::GradientReport<f64>;
/// [`prefopt::GradTable`] over `f64`.
pub type GradTableF64 = prefopt::GradTable<f64>;
/// [`prefopt::TrajectoryRow`] over `f64`.
pub type TrajectoryRowF64 = prefopt::TrajectoryRow<f64>;
/// [`prefopt::TrainRun`] over `f64`.
pub type TrainRunF64 = prefopt::TrainRun<f64>;
