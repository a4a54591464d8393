//! Deterministic graph queries a backend may call between proposals.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use super::ToolCall;
use crate::dsg::{NodeId, ObjectNode, SceneGraph};
use crate::geometry::Pose;
use crate::registry::{Registry, RegistryError};
use crate::scenegen::ABOVE_COLUMN_RADIUS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    Unknown(String),
    #[error("{tool} takes {expected} argument(s), got {got}")]
    Arity { tool: String, expected: usize, got: usize },
    #[error("bad argument {0:?}")]
    BadArgument(String),
    #[error("no such {0}")]
    NotFound(String),
}

pub struct ToolContext<'a> {
    pub graph: &'a SceneGraph,
    pub pose: Pose,
}

pub trait Tool: Send + Sync {
    fn name(&self) -> &str;
    /// Call shape shown in the roster, e.g. `find_near(<object id>, <radius m>)`.
    fn signature(&self) -> &str;
    fn description(&self) -> &str;
    fn call(&self, args: &[String], ctx: &ToolContext) -> Result<String, ToolError>;
}

fn arity(tool: &str, args: &[String], n: usize) -> Result<(), ToolError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(ToolError::Arity { tool: tool.into(), expected: n, got: args.len() })
    }
}

fn object_arg<'g>(g: &'g SceneGraph, arg: &str) -> Result<&'g ObjectNode, ToolError> {
    let id: u32 = arg.trim_start_matches('#').parse().map_err(|_| ToolError::BadArgument(arg.into()))?;
    g.object(NodeId::object(id)).ok_or_else(|| ToolError::NotFound(format!("object #{id}")))
}

fn listing<'a>(objs: impl Iterator<Item = &'a ObjectNode>) -> String {
    let items: Vec<String> = objs.map(|o| format!("#{} {}", o.id.index, o.label)).collect();
    if items.is_empty() {
        "none".into()
    } else {
        items.join(", ")
    }
}

fn xy_dist(a: &ObjectNode, b: &ObjectNode) -> f64 {
    (a.centroid.xy() - b.centroid.xy()).norm()
}

struct Stacked {
    above: bool,
}

impl Tool for Stacked {
    fn name(&self) -> &str {
        if self.above {
            "find_above"
        } else {
            "find_below"
        }
    }
    fn signature(&self) -> &str {
        if self.above {
            "find_above(<object id>)"
        } else {
            "find_below(<object id>)"
        }
    }
    fn description(&self) -> &str {
        if self.above {
            "objects stacked over the given one"
        } else {
            "objects underneath the given one"
        }
    }
    fn call(&self, args: &[String], ctx: &ToolContext) -> Result<String, ToolError> {
        arity(self.name(), args, 1)?;
        let o = object_arg(ctx.graph, &args[0])?;
        Ok(listing(ctx.graph.objects().iter().filter(|c| {
            c.id != o.id
                && xy_dist(c, o) < ABOVE_COLUMN_RADIUS
                && if self.above { c.centroid.z > o.centroid.z } else { c.centroid.z < o.centroid.z }
        })))
    }
}

struct FindNear;

impl Tool for FindNear {
    fn name(&self) -> &str {
        "find_near"
    }
    fn signature(&self) -> &str {
        "find_near(<object id>, <radius m>)"
    }
    fn description(&self) -> &str {
        "objects within the radius, closest first"
    }
    fn call(&self, args: &[String], ctx: &ToolContext) -> Result<String, ToolError> {
        arity(self.name(), args, 2)?;
        let o = object_arg(ctx.graph, &args[0])?;
        let r: f64 = args[1].parse().ok().filter(|r: &f64| r.is_finite() && *r >= 0.0).ok_or_else(|| ToolError::BadArgument(args[1].clone()))?;
        let mut hits: Vec<(f64, &ObjectNode)> = ctx
            .graph
            .objects()
            .iter()
            .filter(|c| c.id != o.id)
            .map(|c| ((c.centroid - o.centroid).norm(), c))
            .filter(|(d, _)| *d <= r)
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        Ok(listing(hits.into_iter().map(|(_, c)| c)))
    }
}

struct Nearest;

/// XY-nearest instance of `category` to `pose`, ties to the lower id.
pub(crate) fn nearest_instance<'g>(g: &'g SceneGraph, pose: &Pose, category: &str) -> Option<&'g ObjectNode> {
    let p = pose.position().xy();
    g.objects()
        .iter()
        .filter(|o| o.label == category)
        .min_by(|a, b| (a.centroid.xy() - p).norm().total_cmp(&(b.centroid.xy() - p).norm()).then(a.id.cmp(&b.id)))
}

impl Tool for Nearest {
    fn name(&self) -> &str {
        "nearest"
    }
    fn signature(&self) -> &str {
        "nearest(<category>)"
    }
    fn description(&self) -> &str {
        "closest instance of a category to the robot"
    }
    fn call(&self, args: &[String], ctx: &ToolContext) -> Result<String, ToolError> {
        arity(self.name(), args, 1)?;
        let o = nearest_instance(ctx.graph, &ctx.pose, &args[0]).ok_or_else(|| ToolError::NotFound(format!("category {:?}", args[0])))?;
        let d = (o.centroid.xy() - ctx.pose.position().xy()).norm();
        let room = o.room.map_or("?".to_string(), |r| r.index.to_string());
        Ok(format!("#{} {} {d:.1}m in room {room}", o.id.index, o.label))
    }
}

struct PathRooms;

impl Tool for PathRooms {
    fn name(&self) -> &str {
        "path_rooms"
    }
    fn signature(&self) -> &str {
        "path_rooms(<room id>, <room id>)"
    }
    fn description(&self) -> &str {
        "shortest room sequence between two rooms"
    }
    fn call(&self, args: &[String], ctx: &ToolContext) -> Result<String, ToolError> {
        arity(self.name(), args, 2)?;
        let mut ends = [NodeId::room(0); 2];
        for (slot, a) in ends.iter_mut().zip(args) {
            let i: u32 = a.parse().map_err(|_| ToolError::BadArgument(a.clone()))?;
            if !ctx.graph.rooms().iter().any(|r| r.id.index == i) {
                return Err(ToolError::NotFound(format!("room {i}")));
            }
            *slot = NodeId::room(i);
        }
        Ok(match ctx.graph.room_path(ends[0], ends[1]) {
            Some(path) => path.iter().map(|r| r.index.to_string()).collect::<Vec<_>>().join(" -> "),
            None => "unreachable".into(),
        })
    }
}

pub fn tool_registry() -> Registry<dyn Tool> {
    Registry::<dyn Tool>::new("tool")
        .with("find_above", |_| Ok(Box::new(Stacked { above: true })))
        .with("find_below", |_| Ok(Box::new(Stacked { above: false })))
        .with("find_near", |_| Ok(Box::new(FindNear)))
        .with("nearest", |_| Ok(Box::new(Nearest)))
        .with("path_rooms", |_| Ok(Box::new(PathRooms)))
}

/// Instantiated tools offered to a backend.
pub struct ToolBox {
    tools: BTreeMap<String, Box<dyn Tool>>,
}

impl ToolBox {
    pub fn from_registry(reg: &Registry<dyn Tool>, names: &[&str]) -> Result<Self, RegistryError> {
        let mut tools = BTreeMap::new();
        for &n in names {
            tools.insert(n.to_string(), reg.create(n, &Value::Null)?);
        }
        Ok(Self { tools })
    }

    pub fn empty() -> Self {
        Self { tools: BTreeMap::new() }
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.keys().map(String::as_str).collect()
    }

    pub fn roster(&self) -> String {
        if self.tools.is_empty() {
            return "none\n".into();
        }
        self.tools.values().map(|t| format!("{}: {}\n", t.signature(), t.description())).collect()
    }

    pub fn call(&self, call: &ToolCall, ctx: &ToolContext) -> Result<String, ToolError> {
        let tool = self.tools.get(&call.name).ok_or_else(|| ToolError::Unknown(call.name.clone()))?;
        tool.call(&call.args, ctx)
    }
}

/// Every registered tool.
pub fn default_toolbox() -> ToolBox {
    let reg = tool_registry();
    let names: Vec<&str> = reg.names();
    ToolBox::from_registry(&reg, &names).expect("built-in tools construct")
}
