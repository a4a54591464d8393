//! Agent-centric octant labels, distance tiers and prompt serialisation.
//!
//! Tiered template (sections with no lines are omitted):
//!
//! ```text
//! AGENT room=0 pos=(2.50, 2.50, 0.00) yaw=0deg
//! FOCAL
//! #3 chair Front-Left-Top 1.2m: <caption>
//! #8 table Back-Left-Bottom 2.9m
//! PERIPHERAL
//! #7 cabinet Front-Right-Top 4.2m
//! GLOBAL
//! Room 1 (via Room 0): 2 cabinets, 1 chair
//! Room 3 (via Room 1): empty
//! ```
//!
//! Focal and peripheral lines are sorted by XY distance, then id. Only the
//! nearest `focal_capacity` focal objects keep their caption; the rest of the
//! focal zone is listed in the compact peripheral form. Global lines cover
//! every room other than the agent's, ascending by id; `via` names the room
//! preceding it on the shortest room path from the agent (or `unreachable`).
//! Category counts are alphabetical.
//!
//! Flat template:
//!
//! ```text
//! AGENT pos=(2.50, 2.50, 0.00) yaw=0deg
//! OBJECTS
//! #0 chair (1.23, 4.56, 0.78): <caption>
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsg::{NodeId, ObjectNode, SceneGraph};
use crate::geometry::{to_local, Pose, Vec3};
use crate::registry::Registry;

pub const DEFAULT_H_CAM: f64 = 1.0;
pub const DEFAULT_FOCAL_RADIUS: f64 = 3.0;
pub const DEFAULT_FOCAL_CAPACITY: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewError {
    #[error("object {0} has no room")]
    NoRoom(NodeId),
    #[error("agent position is not inside any room")]
    AgentOutsideRooms,
    #[error("bad octant label {0:?}")]
    BadOctant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ForeAft {
    Front,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LeftRight {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UpDown {
    Top,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OctantLabel {
    pub fore_aft: ForeAft,
    pub left_right: LeftRight,
    pub up_down: UpDown,
}

impl OctantLabel {
    pub fn all() -> [OctantLabel; 8] {
        let mut out = [OctantLabel { fore_aft: ForeAft::Front, left_right: LeftRight::Left, up_down: UpDown::Top }; 8];
        for (i, o) in out.iter_mut().enumerate() {
            o.fore_aft = if i & 4 == 0 { ForeAft::Front } else { ForeAft::Back };
            o.left_right = if i & 2 == 0 { LeftRight::Left } else { LeftRight::Right };
            o.up_down = if i & 1 == 0 { UpDown::Top } else { UpDown::Bottom };
        }
        out
    }

    /// 0..8, Front-Left-Top first, matching [`OctantLabel::all`].
    pub fn index(&self) -> usize {
        (usize::from(self.fore_aft == ForeAft::Back) << 2)
            | (usize::from(self.left_right == LeftRight::Right) << 1)
            | usize::from(self.up_down == UpDown::Bottom)
    }
}

impl fmt::Display for OctantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}-{:?}-{:?}", self.fore_aft, self.left_right, self.up_down)
    }
}

impl FromStr for OctantLabel {
    type Err = ViewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OctantLabel::all()
            .into_iter()
            .find(|o| o.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ViewError::BadOctant(s.into()))
    }
}

impl Serialize for OctantLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OctantLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Octant of a world point in the agent frame; zero falls on the
/// Front/Left/Top side.
pub fn octant_of(centroid: &Vec3, pose: &Pose, h_cam: f64) -> OctantLabel {
    let p = to_local(centroid, pose);
    OctantLabel {
        fore_aft: if p.x >= 0.0 { ForeAft::Front } else { ForeAft::Back },
        left_right: if p.y >= 0.0 { LeftRight::Left } else { LeftRight::Right },
        up_down: if p.z - h_cam >= 0.0 { UpDown::Top } else { UpDown::Bottom },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Focal,
    Peripheral,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierAssignment {
    pub tier: Tier,
    /// Horizontal distance to the agent.
    pub distance: f64,
    pub room: NodeId,
}

pub fn assign_tier(obj: &ObjectNode, pose: &Pose, agent_room: NodeId, focal_radius: f64) -> Result<TierAssignment, ViewError> {
    let room = obj.room.ok_or(ViewError::NoRoom(obj.id))?;
    let distance = (obj.centroid.xy() - pose.position().xy()).norm();
    let tier = if room != agent_room {
        Tier::Global
    } else if distance <= focal_radius {
        Tier::Focal
    } else {
        Tier::Peripheral
    };
    Ok(TierAssignment { tier, distance, room })
}

pub trait TokenEstimator: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Maximal alphanumeric runs plus individual punctuation characters;
/// whitespace is free.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctEstimator;

impl TokenEstimator for WordPunctEstimator {
    fn name(&self) -> &str {
        "words-punct"
    }

    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_run = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_run {
                    n += 1;
                    in_run = true;
                }
            } else {
                in_run = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Rough byte-pair proxy: one token per four characters, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharQuarterEstimator;

impl TokenEstimator for CharQuarterEstimator {
    fn name(&self) -> &str {
        "chars4"
    }

    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

pub fn estimator_registry() -> Registry<dyn TokenEstimator> {
    Registry::<dyn TokenEstimator>::new("token estimator")
        .with("words-punct", |_| Ok(Box::new(WordPunctEstimator)))
        .with("chars4", |_| Ok(Box::new(CharQuarterEstimator)))
}

/// Token count under the default estimator.
pub fn count_tokens(text: &str) -> usize {
    WordPunctEstimator.count(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Label, octant, distance and caption.
    Full,
    /// Label, octant and distance.
    Compact,
    /// Counted in its room's summary line.
    Summary,
    /// Flat listing with absolute coordinates and caption.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: NodeId,
    pub tier: Option<Tier>,
    pub resolution: Resolution,
    pub distance: f64,
    pub octant: OctantLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedView {
    pub text: String,
    pub token_count: usize,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewConfig {
    pub h_cam: f64,
    pub focal_radius: f64,
    /// Focal objects beyond this many (nearest first) lose their caption.
    pub focal_capacity: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { h_cam: DEFAULT_H_CAM, focal_radius: DEFAULT_FOCAL_RADIUS, focal_capacity: DEFAULT_FOCAL_CAPACITY }
    }
}

fn yaw_degrees(pose: &Pose) -> i64 {
    let d = pose.yaw().to_degrees().round() as i64;
    if d == -180 {
        180
    } else {
        d
    }
}

fn plural(label: &str, n: usize) -> String {
    if n == 1 {
        return label.to_string();
    }
    if ["s", "x", "ch", "sh"].iter().any(|suf| label.ends_with(suf)) {
        format!("{label}es")
    } else {
        format!("{label}s")
    }
}

/// Tiered view for an agent at `pose`; the agent's room is looked up from
/// the graph's place layer.
pub fn serialize_tiered(
    g: &SceneGraph,
    pose: &Pose,
    cfg: &ViewConfig,
    estimator: &dyn TokenEstimator,
) -> Result<SerializedView, ViewError> {
    let agent_room = g.room_at(&pose.position()).ok_or(ViewError::AgentOutsideRooms)?;
    serialize_tiered_in(g, pose, agent_room, cfg, estimator)
}

pub fn serialize_tiered_in(
    g: &SceneGraph,
    pose: &Pose,
    agent_room: NodeId,
    cfg: &ViewConfig,
    estimator: &dyn TokenEstimator,
) -> Result<SerializedView, ViewError> {
    let mut local: Vec<(TierAssignment, &ObjectNode)> = Vec::new();
    let mut summaries: BTreeMap<NodeId, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut records = Vec::with_capacity(g.objects().len());
    for o in g.objects() {
        let t = assign_tier(o, pose, agent_room, cfg.focal_radius)?;
        if t.tier == Tier::Global {
            *summaries.entry(t.room).or_default().entry(o.label.as_str()).or_default() += 1;
            records.push(ObjectRecord {
                id: o.id,
                tier: Some(Tier::Global),
                resolution: Resolution::Summary,
                distance: t.distance,
                octant: octant_of(&o.centroid, pose, cfg.h_cam),
            });
        } else {
            local.push((t, o));
        }
    }
    local.sort_by(|(ta, a), (tb, b)| ta.tier.cmp(&tb.tier).then(ta.distance.total_cmp(&tb.distance)).then(a.id.cmp(&b.id)));

    let p = pose.position();
    let mut text = format!(
        "AGENT room={} pos=({:.2}, {:.2}, {:.2}) yaw={}deg\n",
        agent_room.index,
        p.x,
        p.y,
        p.z,
        yaw_degrees(pose)
    );
    let mut section = None;
    let mut captioned = 0;
    for (t, o) in &local {
        if section != Some(t.tier) {
            text.push_str(if t.tier == Tier::Focal { "FOCAL\n" } else { "PERIPHERAL\n" });
            section = Some(t.tier);
        }
        let octant = octant_of(&o.centroid, pose, cfg.h_cam);
        text.push_str(&format!("#{} {} {} {:.1}m", o.id.index, o.label, octant, t.distance));
        let full = t.tier == Tier::Focal && captioned < cfg.focal_capacity;
        if full {
            captioned += 1;
            text.push_str(": ");
            text.push_str(&o.caption);
        }
        text.push('\n');
        records.push(ObjectRecord {
            id: o.id,
            tier: Some(t.tier),
            resolution: if full { Resolution::Full } else { Resolution::Compact },
            distance: t.distance,
            octant,
        });
    }

    let others: Vec<NodeId> = g.rooms().iter().map(|r| r.id).filter(|&r| r != agent_room).collect();
    if !others.is_empty() {
        text.push_str("GLOBAL\n");
    }
    for room in others {
        let via = match g.room_path(agent_room, room) {
            Some(path) if path.len() >= 2 => format!("via Room {}", path[path.len() - 2].index),
            _ => "unreachable".to_string(),
        };
        let counts = match summaries.get(&room) {
            Some(c) => c.iter().map(|(label, n)| format!("{n} {}", plural(label, *n))).collect::<Vec<_>>().join(", "),
            None => "empty".into(),
        };
        text.push_str(&format!("Room {} ({via}): {counts}\n", room.index));
    }
    records.sort_by_key(|r| r.id);
    Ok(SerializedView { token_count: estimator.count(&text), text, objects: records })
}

/// Baseline listing of every object with absolute coordinates and caption.
pub fn serialize_flat(g: &SceneGraph, pose: &Pose, cfg: &ViewConfig, estimator: &dyn TokenEstimator) -> SerializedView {
    let p = pose.position();
    let mut text = format!("AGENT pos=({:.2}, {:.2}, {:.2}) yaw={}deg\nOBJECTS\n", p.x, p.y, p.z, yaw_degrees(pose));
    let mut records = Vec::with_capacity(g.objects().len());
    for o in g.objects() {
        let c = o.centroid;
        text.push_str(&format!("#{} {} ({:.2}, {:.2}, {:.2}): {}\n", o.id.index, o.label, c.x, c.y, c.z, o.caption));
        records.push(ObjectRecord {
            id: o.id,
            tier: None,
            resolution: Resolution::Absolute,
            distance: (c.xy() - p.xy()).norm(),
            octant: octant_of(&c, pose, cfg.h_cam),
        });
    }
    SerializedView { token_count: estimator.count(&text), text, objects: records }
}

/// Which section of a tiered view each line belongs to, for string-level
/// checks: returns (section header, line) pairs, header-less lines mapped to
/// `"AGENT"`.
pub fn sections(text: &str) -> Vec<(&str, &str)> {
    let mut current = "AGENT";
    let mut out = Vec::new();
    for line in text.lines() {
        if matches!(line, "FOCAL" | "PERIPHERAL" | "GLOBAL" | "OBJECTS") {
            current = line;
            continue;
        }
        out.push((current, line));
    }
    out
}
