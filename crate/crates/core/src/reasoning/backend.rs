use std::collections::VecDeque;

use serde_json::Value;
use thiserror::Error;

use super::reg::{oracle_reg_answer, RegTask};
use super::tools::nearest_instance;
use super::{ActionPrimitive, DecisionContext};
use crate::chat::{ChatClient, ChatEndpoint, ChatError, ChatMessage};
use crate::dsg::NodeId;
use crate::registry::Registry;
use crate::view::{octant_of, DEFAULT_H_CAM};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("replay script exhausted after {0} responses")]
    ReplayExhausted(usize),
    #[error("instruction has no reachable goal: {0}")]
    NoGoal(String),
}

pub enum TaskContext<'a> {
    Navigate(&'a DecisionContext<'a>),
    Reg(&'a RegTask<'a>),
}

pub struct BackendRequest<'a> {
    pub messages: &'a [ChatMessage],
    /// Ground truth for scripted backends; prose backends ignore it.
    pub task: TaskContext<'a>,
}

pub trait ReasonerBackend: Send {
    fn name(&self) -> &str;
    fn complete(&mut self, req: &BackendRequest) -> Result<String, BackendError>;
}

/// Ground-truth policy: fixes the XY-nearest instance of the requested
/// category on its first call, walks the room path to it, approaches it and
/// stops. One instance per episode.
#[derive(Debug, Default)]
pub struct ScriptedOracle {
    target: Option<u32>,
}

impl ScriptedOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn target(&self) -> Option<u32> {
        self.target
    }

    fn navigate(&mut self, ctx: &DecisionContext) -> Result<String, BackendError> {
        let g = ctx.graph;
        let target = match self.target {
            Some(t) => t,
            None => {
                let cat = ctx.instruction.category.as_deref().ok_or_else(|| BackendError::NoGoal(ctx.instruction.text.clone()))?;
                let t = nearest_instance(g, &ctx.pose, cat)
                    .ok_or_else(|| BackendError::NoGoal(format!("no {cat} in the scene")))?
                    .id
                    .index;
                self.target = Some(t);
                t
            }
        };
        let obj = g.object(NodeId::object(target)).expect("target fixed from the graph");
        let goal_room = obj.room.ok_or_else(|| BackendError::NoGoal(format!("object #{target} has no room")))?;
        let path = g
            .room_path(ctx.agent_room, goal_room)
            .ok_or_else(|| BackendError::NoGoal(format!("room {} unreachable", goal_room.index)))?;
        let action = if path.len() > 1 {
            ActionPrimitive::GoToRoom(path[1].index)
        } else if ctx.history.contains(&ActionPrimitive::GoNear(target)) {
            ActionPrimitive::Stop(target)
        } else {
            ActionPrimitive::GoNear(target)
        };
        let rooms: Vec<String> = path.iter().map(|r| r.index.to_string()).collect();
        let groups = obj.group.map_or("none".to_string(), |gid| gid.to_string());
        Ok(format!(
            "ROOMS: {}\nOCTANT: {}\nGROUPS: {groups}\nOBJECTS: {target}\nACTION: {action}\n",
            rooms.join(", "),
            octant_of(&obj.centroid, &ctx.pose, DEFAULT_H_CAM)
        ))
    }
}

impl ReasonerBackend for ScriptedOracle {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&mut self, req: &BackendRequest) -> Result<String, BackendError> {
        match req.task {
            TaskContext::Navigate(ctx) => self.navigate(ctx),
            TaskContext::Reg(task) => Ok(oracle_reg_answer(task)),
        }
    }
}

/// Replays canned responses in order.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    responses: VecDeque<String>,
    served: usize,
}

impl ReplayBackend {
    pub fn new(responses: impl IntoIterator<Item = String>) -> Self {
        Self { responses: responses.into_iter().collect(), served: 0 }
    }

    /// Accepts a JSON array of strings, or JSONL whose objects carry a
    /// `response` field (a saved transcript).
    pub fn parse(text: &str) -> Result<Self, String> {
        if let Ok(list) = serde_json::from_str::<Vec<String>>(text) {
            return Ok(Self::new(list));
        }
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            let r = v.get("response").and_then(Value::as_str).ok_or_else(|| format!("line {}: no `response` string", i + 1))?;
            out.push(r.to_string());
        }
        Ok(Self::new(out))
    }
}

impl ReasonerBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&mut self, _req: &BackendRequest) -> Result<String, BackendError> {
        let r = self.responses.pop_front().ok_or(BackendError::ReplayExhausted(self.served))?;
        self.served += 1;
        Ok(r)
    }
}

/// OpenAI-compatible chat endpoint at temperature 0.
pub struct HttpChatBackend {
    client: ChatClient,
}

impl HttpChatBackend {
    pub fn new(mut cfg: ChatEndpoint) -> Result<Self, ChatError> {
        cfg.temperature = 0.0;
        Ok(Self { client: ChatClient::new(cfg)? })
    }
}

impl ReasonerBackend for HttpChatBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&mut self, req: &BackendRequest) -> Result<String, BackendError> {
        Ok(self.client.complete(req.messages)?)
    }
}

/// `scripted` (no options), `replay` (`{"responses": [..]}` or
/// `{"path": ".."}`) and `http` (a chat endpoint table).
pub fn backend_registry() -> Registry<dyn ReasonerBackend> {
    Registry::<dyn ReasonerBackend>::new("reasoner backend")
        .with("scripted", |_| Ok(Box::new(ScriptedOracle::new())))
        .with("replay", |opts| {
            if let Some(list) = opts.get("responses") {
                let list: Vec<String> = serde_json::from_value(list.clone()).map_err(|e| e.to_string())?;
                return Ok(Box::new(ReplayBackend::new(list)));
            }
            let path = opts.get("path").and_then(Value::as_str).ok_or("replay needs `responses` or `path`")?;
            let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
            Ok(Box::new(ReplayBackend::parse(&text)?))
        })
        .with("http", |opts| {
            let cfg: ChatEndpoint = serde_json::from_value(opts.clone()).map_err(|e| e.to_string())?;
            Ok(Box::new(HttpChatBackend::new(cfg).map_err(|e| e.to_string())?))
        })
}
