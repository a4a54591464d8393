//! Staged prompting over the scene graph, a rule-based critic and the
//! propose/validate loop around a pluggable language-model backend.
//!
//! Backend replies use one `KEY: value` line per stage:
//!
//! ```text
//! ROOMS: 0, 1
//! OCTANT: Front-Left-Top
//! GROUPS: 2
//! OBJECTS: 3, 5
//! ACTION: go_near(3)
//! ```
//!
//! `TOOL: name(args)` may replace `ACTION`; the tool result is sent back in a
//! follow-up turn. A missing `ROOMS` line means every room; `none` or an
//! empty value means an empty list.

mod backend;
pub mod reg;
mod tools;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::ChatMessage;
use crate::dsg::{NodeId, SceneGraph};
use crate::geometry::Pose;
use crate::view::{OctantLabel, SerializedView, TokenEstimator};

pub use backend::{
    backend_registry, BackendError, BackendRequest, HttpChatBackend, ReasonerBackend, ReplayBackend, ScriptedOracle, TaskContext,
};
pub use tools::{default_toolbox, tool_registry, Tool, ToolBox, ToolContext, ToolError};

pub const DEFAULT_REPLAN_BUDGET: usize = 3;
pub const SYSTEM_ROLE: &str = "You are a High-Level Spatial Robotics Expert controlling a mobile robot through a layered scene graph.";

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("replan budget must be at least 1")]
    ZeroBudget,
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    pub message: String,
    /// Byte range of the offending text within the parsed input.
    pub span: Range<usize>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}..{}", self.message, self.span.start, self.span.end)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "snake_case")]
pub enum ActionPrimitive {
    GoToRoom(u32),
    TurnTo(OctantLabel),
    GoNear(u32),
    Stop(u32),
}

impl ActionPrimitive {
    pub fn target_object(&self) -> Option<u32> {
        match self {
            ActionPrimitive::GoNear(id) | ActionPrimitive::Stop(id) => Some(*id),
            _ => None,
        }
    }
}

impl fmt::Display for ActionPrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionPrimitive::GoToRoom(r) => write!(f, "go_to_room({r})"),
            ActionPrimitive::TurnTo(o) => write!(f, "turn_to({o})"),
            ActionPrimitive::GoNear(id) => write!(f, "go_near({id})"),
            ActionPrimitive::Stop(id) => write!(f, "stop({id})"),
        }
    }
}

/// `name(arg)` with a lowercase snake-case name; returns name and argument
/// with their byte ranges in `text`.
fn split_call(text: &str) -> Result<((&str, Range<usize>), (&str, Range<usize>)), ParseError> {
    let start = text.len() - text.trim_start().len();
    let end = text.trim_end().len();
    let body = &text[start..end];
    let name_len = body.find(|c: char| !(c.is_ascii_lowercase() || c == '_')).unwrap_or(body.len());
    if name_len == 0 {
        return Err(ParseError { message: "expected a primitive name".into(), span: start..end.max(start + 1).min(text.len()) });
    }
    let name = (&body[..name_len], start..start + name_len);
    let rest = &body[name_len..];
    let open = start + name_len;
    if !rest.starts_with('(') {
        return Err(ParseError { message: "expected '(' after name".into(), span: open..end });
    }
    if !rest.ends_with(')') || rest.len() < 2 {
        return Err(ParseError { message: "expected ')' at end".into(), span: open..end });
    }
    let inner = &rest[1..rest.len() - 1];
    if inner.contains(['(', ')']) {
        return Err(ParseError { message: "nested parentheses".into(), span: open..end });
    }
    let lead = inner.len() - inner.trim_start().len();
    let arg = inner.trim();
    let arg_start = open + 1 + lead;
    Ok((name, (arg, arg_start..arg_start + arg.len())))
}

fn parse_id(arg: &str, span: Range<usize>) -> Result<u32, ParseError> {
    arg.parse::<u32>()
        .ok()
        .filter(|_| !arg.starts_with('+'))
        .ok_or_else(|| ParseError { message: format!("expected a non-negative integer id, found {arg:?}"), span })
}

/// Strict primitive grammar: `go_to_room(<int>)`, `turn_to(<octant>)`,
/// `go_near(<int>)`, `stop(<int>)`.
pub fn parse_action(text: &str) -> Result<ActionPrimitive, ParseError> {
    let ((name, name_span), (arg, arg_span)) = split_call(text)?;
    match name {
        "go_to_room" => parse_id(arg, arg_span).map(ActionPrimitive::GoToRoom),
        "go_near" => parse_id(arg, arg_span).map(ActionPrimitive::GoNear),
        "stop" => parse_id(arg, arg_span).map(ActionPrimitive::Stop),
        "turn_to" => arg
            .parse::<OctantLabel>()
            .map(ActionPrimitive::TurnTo)
            .map_err(|_| ParseError { message: format!("expected an octant like Front-Left-Top, found {arg:?}"), span: arg_span }),
        other => Err(ParseError { message: format!("unknown primitive {other:?}"), span: name_span }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub args: Vec<String>,
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.args.join(", "))
    }
}

pub fn parse_tool_call(text: &str) -> Result<ToolCall, ParseError> {
    let ((name, _), (arg, _)) = split_call(text)?;
    let args = if arg.is_empty() { Vec::new() } else { arg.split(',').map(|a| a.trim().to_string()).collect() };
    Ok(ToolCall { name: name.into(), args })
}

/// Stage outputs of one decision.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HCoTTrace {
    pub rooms: Vec<u32>,
    pub octant: Option<OctantLabel>,
    pub groups: Vec<u32>,
    pub objects: Vec<u32>,
    pub action: Option<ActionPrimitive>,
}

impl HCoTTrace {
    /// Drops groups outside the filtered rooms and objects outside the
    /// filtered rooms or (when groups are given) outside the listed groups.
    pub fn narrow(&mut self, g: &SceneGraph) {
        let rooms: BTreeSet<u32> = self.rooms.iter().copied().collect();
        self.groups.retain(|&gid| g.group(gid).is_some_and(|gr| rooms.contains(&gr.room.index)));
        let groups: BTreeSet<u32> = self.groups.iter().copied().collect();
        let restrict_groups = !groups.is_empty();
        self.objects.retain(|&id| {
            g.object(NodeId::object(id)).is_some_and(|o| {
                o.room.is_some_and(|r| rooms.contains(&r.index))
                    && (!restrict_groups || o.group.is_some_and(|gid| groups.contains(&gid)))
            })
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Action(ActionPrimitive),
    Tool(ToolCall),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub trace: HCoTTrace,
    pub proposal: Proposal,
}

fn parse_list(value: &str, offset: usize) -> Result<Vec<u32>, ParseError> {
    let v = value.trim();
    if v.is_empty() || v.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut pos = offset;
    for part in value.split(',') {
        let t = part.trim().trim_start_matches('#');
        let span = pos..pos + part.len();
        out.push(t.parse::<u32>().map_err(|_| ParseError { message: format!("expected an id list, found {part:?}"), span })?);
        pos += part.len() + 1;
    }
    Ok(out)
}

/// Parses a staged reply. `all_rooms` fills in a missing `ROOMS` line.
pub fn parse_response(text: &str, all_rooms: &[u32]) -> Result<ParsedResponse, ParseError> {
    let mut trace = HCoTTrace { rooms: all_rooms.to_vec(), ..Default::default() };
    let mut proposal = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let Some((key, value)) = line.split_once(':') else { continue };
        let value_start = line_start + key.len() + 1;
        let value = value.trim_end_matches(['\n', '\r']);
        match key.trim().to_ascii_uppercase().as_str() {
            "ROOMS" => trace.rooms = parse_list(value, value_start)?,
            "GROUPS" => trace.groups = parse_list(value, value_start)?,
            "OBJECTS" => trace.objects = parse_list(value, value_start)?,
            "OCTANT" => {
                let v = value.trim();
                trace.octant = if v.is_empty() || v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    let lead = value.len() - value.trim_start().len();
                    Some(v.parse().map_err(|_| ParseError {
                        message: format!("bad octant {v:?}"),
                        span: value_start + lead..value_start + lead + v.len(),
                    })?)
                };
            }
            "ACTION" if proposal.is_none() => {
                let a = parse_action(value).map_err(|e| ParseError {
                    message: e.message,
                    span: e.span.start + value_start..e.span.end + value_start,
                })?;
                trace.action = Some(a);
                proposal = Some(Proposal::Action(a));
            }
            "TOOL" if proposal.is_none() => {
                let call = parse_tool_call(value).map_err(|e| ParseError {
                    message: e.message,
                    span: e.span.start + value_start..e.span.end + value_start,
                })?;
                proposal = Some(Proposal::Tool(call));
            }
            _ => {}
        }
    }
    let proposal = proposal.ok_or(ParseError { message: "reply has no ACTION or TOOL line".into(), span: 0..text.len() })?;
    Ok(ParsedResponse { trace, proposal })
}

/// Parsed navigation instruction. Only `... nearest <category>` carries a
/// machine-checkable goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub category: Option<String>,
}

impl Instruction {
    pub fn parse(text: &str) -> Result<Self, ReasoningError> {
        let t = text.trim();
        if t.is_empty() {
            return Err(ReasoningError::EmptyInstruction);
        }
        let words: Vec<String> =
            t.split_whitespace().map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()).collect();
        let category = words.iter().position(|w| w == "nearest").and_then(|i| words.get(i + 1)).cloned();
        Ok(Self { text: t.to_string(), category })
    }

    pub fn nearest(category: &str) -> Self {
        Self { text: format!("go to the nearest {category}"), category: Some(category.to_string()) }
    }
}

/// Everything a decision may look at.
#[derive(Clone, Copy)]
pub struct DecisionContext<'a> {
    pub graph: &'a SceneGraph,
    pub pose: Pose,
    pub agent_room: NodeId,
    pub instruction: &'a Instruction,
    /// Actions accepted earlier in the episode, oldest first.
    pub history: &'a [ActionPrimitive],
    pub view: &'a SerializedView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticRule {
    OutsideFilteredRooms,
    IncompatibleTopology,
    UnknownObject,
    StopBeforeApproach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: CriticRule,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueResult {
    pub accepted: bool,
    pub violations: Vec<Violation>,
    pub hint: String,
}

pub fn critique(a: &ActionPrimitive, trace: &HCoTTrace, g: &SceneGraph, agent_room: NodeId, history: &[ActionPrimitive]) -> CritiqueResult {
    let mut violations = Vec::new();
    match *a {
        ActionPrimitive::GoToRoom(r) => {
            if !g.adjacent_rooms(agent_room).contains(&NodeId::room(r)) {
                violations.push(Violation {
                    rule: CriticRule::IncompatibleTopology,
                    message: format!("Room {r} is not adjacent to the current Room {}", agent_room.index),
                });
            }
        }
        ActionPrimitive::TurnTo(_) => {}
        ActionPrimitive::GoNear(id) | ActionPrimitive::Stop(id) => match g.object(NodeId::object(id)) {
            None => violations.push(Violation { rule: CriticRule::UnknownObject, message: format!("object #{id} does not exist") }),
            Some(o) => {
                let room = o.room.map(|r| r.index);
                if !room.is_some_and(|r| trace.rooms.contains(&r)) {
                    violations.push(Violation {
                        rule: CriticRule::OutsideFilteredRooms,
                        message: format!("object #{id} is in Room {}, outside the filtered rooms {:?}", room.map_or(-1, i64::from), trace.rooms),
                    });
                }
            }
        },
    }
    if let ActionPrimitive::Stop(id) = *a {
        if !history.contains(&ActionPrimitive::GoNear(id)) {
            violations.push(Violation {
                rule: CriticRule::StopBeforeApproach,
                message: format!("stop({id}) issued before go_near({id})"),
            });
        }
    }
    let hint = if violations.is_empty() {
        String::new()
    } else {
        let reasons: Vec<&str> = violations.iter().map(|v| v.message.as_str()).collect();
        format!("{}. Choose a different primitive.", reasons.join("; "))
    };
    CritiqueResult { accepted: violations.is_empty(), violations, hint }
}

/// Full prompt text: role, instruction, scene view with room graph,
/// groups and history, stage protocol, primitive grammar, tool roster and
/// reply format.
pub fn build_hcot_prompt(ctx: &DecisionContext, tools: &ToolBox) -> Result<String, ReasoningError> {
    if ctx.instruction.text.trim().is_empty() {
        return Err(ReasoningError::EmptyInstruction);
    }
    let g = ctx.graph;
    let mut s = String::new();
    s.push_str(SYSTEM_ROLE);
    s.push_str("\n\nINSTRUCTION: ");
    s.push_str(&ctx.instruction.text);
    s.push_str("\n\nSCENE\n");
    s.push_str(&ctx.view.text);
    let mut links = Vec::new();
    for r in g.rooms() {
        for n in g.adjacent_rooms(r.id) {
            if n > r.id {
                links.push(format!("{}-{}", r.id.index, n.index));
            }
        }
    }
    s.push_str(&format!("CURRENT ROOM: {}\nROOM LINKS: {}\n", ctx.agent_room.index, links.join(" ")));
    let local: Vec<_> = g.groups().iter().filter(|gr| gr.room == ctx.agent_room).collect();
    if !local.is_empty() {
        s.push_str("GROUPS\n");
        for gr in local {
            let ids: Vec<String> = gr.members.iter().map(|m| format!("#{}", m.index)).collect();
            s.push_str(&format!("G{} in room {}, anchor {}: {}\n", gr.id, gr.room.index, gr.anchor, ids.join(" ")));
        }
    }
    if !ctx.history.is_empty() {
        let h: Vec<String> = ctx.history.iter().map(ToString::to_string).collect();
        s.push_str(&format!("HISTORY: {}\n", h.join(", ")));
    }
    s.push_str(
        "\nPROTOCOL\n\
1. Filter rooms: keep only rooms that can hold the goal.\n\
2. Orient: pick the octant facing the goal.\n\
3. Infer groups: keep functional groups in those rooms that fit the goal.\n\
4. Localize: list candidate object ids from those groups.\n\
5. Emit exactly one primitive or one tool call.\n\
\nPRIMITIVES\n\
go_to_room(<room id>): move into an adjacent room\n\
turn_to(<Front|Back>-<Left|Right>-<Top|Bottom>): rotate toward an octant\n\
go_near(<object id>): approach an object\n\
stop(<object id>): finish next to an approached object\n",
    );
    s.push_str("\nTOOLS\n");
    s.push_str(&tools.roster());
    s.push_str(
        "\nREPLY FORMAT\n\
ROOMS: <room ids>\n\
OCTANT: <octant or none>\n\
GROUPS: <group ids>\n\
OBJECTS: <object ids>\n\
ACTION: <primitive> (or TOOL: <tool call>)\n",
    );
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Accepted,
    Rejected,
    ParseError,
    Tool,
    ToolError,
}

/// One backend round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub call: usize,
    pub prompt: String,
    pub prompt_tokens: usize,
    pub response: String,
    pub outcome: CallOutcome,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepOutcome {
    Action(ActionPrimitive),
    /// Replan budget or call cap reached without an accepted action.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub outcome: StepOutcome,
    pub trace: HCoTTrace,
    pub rejections: Vec<CritiqueResult>,
    pub parse_errors: usize,
    pub transcript: Vec<TranscriptEntry>,
    pub prompt_tokens: usize,
}

/// One actor-critic decision. Parse errors and critic rejections each use
/// one unit of `budget`; at most `budget + 1` backend calls are made.
pub fn step(
    ctx: &DecisionContext,
    backend: &mut dyn ReasonerBackend,
    tools: &ToolBox,
    estimator: &dyn TokenEstimator,
    budget: usize,
) -> Result<StepResult, ReasoningError> {
    if budget == 0 {
        return Err(ReasoningError::ZeroBudget);
    }
    let all_rooms: Vec<u32> = ctx.graph.rooms().iter().map(|r| r.id.index).collect();
    let mut messages = vec![ChatMessage::user(build_hcot_prompt(ctx, tools)?)];
    let mut result = StepResult {
        outcome: StepOutcome::Exhausted,
        trace: HCoTTrace::default(),
        rejections: Vec::new(),
        parse_errors: 0,
        transcript: Vec::new(),
        prompt_tokens: 0,
    };
    let tool_ctx = ToolContext { graph: ctx.graph, pose: ctx.pose };
    for call in 0..=budget {
        let prompt: String = messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n\n");
        let tokens = estimator.count(&prompt);
        result.prompt_tokens += tokens;
        let response = backend.complete(&BackendRequest { messages: &messages, task: TaskContext::Navigate(ctx) })?;
        let mut entry = TranscriptEntry {
            call,
            prompt,
            prompt_tokens: tokens,
            response: response.clone(),
            outcome: CallOutcome::Accepted,
            note: String::new(),
        };
        messages.push(ChatMessage::assistant(response.clone()));
        match parse_response(&response, &all_rooms) {
            Err(e) => {
                entry.outcome = CallOutcome::ParseError;
                entry.note = e.to_string();
                result.parse_errors += 1;
                messages.push(ChatMessage::user(format!("PARSE ERROR: {e}. Reply again in the required format.")));
            }
            Ok(ParsedResponse { mut trace, proposal: Proposal::Tool(tc) }) => {
                trace.narrow(ctx.graph);
                result.trace = trace;
                let (reply, outcome) = match tools.call(&tc, &tool_ctx) {
                    Ok(text) => (format!("TOOL RESULT {tc}: {text}"), CallOutcome::Tool),
                    Err(e) => (format!("TOOL ERROR {tc}: {e}"), CallOutcome::ToolError),
                };
                entry.outcome = outcome;
                entry.note = reply.clone();
                messages.push(ChatMessage::user(reply));
            }
            Ok(ParsedResponse { mut trace, proposal: Proposal::Action(a) }) => {
                trace.narrow(ctx.graph);
                let verdict = critique(&a, &trace, ctx.graph, ctx.agent_room, ctx.history);
                result.trace = trace;
                if verdict.accepted {
                    result.transcript.push(entry);
                    result.outcome = StepOutcome::Action(a);
                    return Ok(result);
                }
                entry.outcome = CallOutcome::Rejected;
                entry.note = verdict.hint.clone();
                messages.push(ChatMessage::user(format!("CRITIQUE: {}", verdict.hint)));
                result.rejections.push(verdict);
            }
        }
        result.transcript.push(entry);
        if result.rejections.len() + result.parse_errors >= budget {
            break;
        }
    }
    Ok(result)
}

/// Line-delimited JSON, one object per transcript entry, each tagged with
/// the given `step` index.
pub fn transcript_jsonl(steps: &[(usize, &[TranscriptEntry])]) -> String {
    let mut out = String::new();
    for (step, entries) in steps {
        for e in entries.iter() {
            let mut v = serde_json::to_value(e).expect("transcript serialises");
            v["step"] = serde_json::json!(step);
            out.push_str(&serde_json::to_string(&v).expect("json"));
            out.push('\n');
        }
    }
    out
}
