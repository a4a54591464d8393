//! Five-layer scene graph: occupancy (mesh surrogate), objects, places,
//! rooms and the building root.

mod grid;
mod groups;
mod persist;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub use grid::{OccupancyGrid, Voxel};
pub use groups::{group_objects, DEFAULT_GROUP_RADIUS};
pub use persist::{load_graph, objects_to_ply, save_graph, GRAPH_SCHEMA, GRAPH_VERSION};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node {0} does not exist")]
    MissingNode(NodeId),
    #[error("self-loop on {0}")]
    SelfLoop(NodeId),
    #[error("adjacency edge must stay within one layer: {0} - {1}")]
    CrossLayerAdjacency(NodeId, NodeId),
    #[error("{child} cannot be a child of {parent}")]
    BadParent { child: NodeId, parent: NodeId },
    #[error("{0} already has a parent")]
    DuplicateParent(NodeId),
    #[error("relation edges connect objects only: {0} - {1}")]
    RelationEndpoints(NodeId, NodeId),
    #[error("no such edge")]
    MissingEdge,
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("corrupt graph document: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Occupancy,
    Object,
    Place,
    Room,
    Building,
}

impl Layer {
    /// Layer a node of this layer hangs from in the hierarchy. Objects and
    /// places both attach directly to rooms.
    pub fn parent_layer(self) -> Option<Layer> {
        match self {
            Layer::Object | Layer::Place => Some(Layer::Room),
            Layer::Room => Some(Layer::Building),
            Layer::Occupancy | Layer::Building => None,
        }
    }

    fn tag(self) -> char {
        match self {
            Layer::Occupancy => 'M',
            Layer::Object => 'O',
            Layer::Place => 'P',
            Layer::Room => 'R',
            Layer::Building => 'B',
        }
    }
}

/// Layer-tagged node index, written as e.g. `O12` or `R0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub layer: Layer,
    pub index: u32,
}

impl NodeId {
    pub const fn new(layer: Layer, index: u32) -> Self {
        Self { layer, index }
    }
    pub const fn object(index: u32) -> Self {
        Self::new(Layer::Object, index)
    }
    pub const fn place(index: u32) -> Self {
        Self::new(Layer::Place, index)
    }
    pub const fn room(index: u32) -> Self {
        Self::new(Layer::Room, index)
    }
    pub const BUILDING: NodeId = NodeId::new(Layer::Building, 0);
    pub const OCCUPANCY: NodeId = NodeId::new(Layer::Occupancy, 0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.layer.tag(), self.index)
    }
}

impl FromStr for NodeId {
    type Err = GraphError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let layer = match chars.next() {
            Some('M') => Layer::Occupancy,
            Some('O') => Layer::Object,
            Some('P') => Layer::Place,
            Some('R') => Layer::Room,
            Some('B') => Layer::Building,
            _ => return Err(GraphError::Corrupt(format!("bad node id {s:?}"))),
        };
        let index = chars.as_str().parse().map_err(|_| GraphError::Corrupt(format!("bad node id {s:?}")))?;
        Ok(Self { layer, index })
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode {
    pub id: NodeId,
    pub centroid: Vec3,
    pub label: String,
    pub caption: String,
    pub half_extents: Vec3,
    pub room: Option<NodeId>,
    pub group: Option<u32>,
}

impl ObjectNode {
    pub fn new(label: impl Into<String>, caption: impl Into<String>, centroid: Vec3, half_extents: Vec3) -> Self {
        Self {
            id: NodeId::object(0),
            centroid,
            label: label.into(),
            caption: caption.into(),
            half_extents,
            room: None,
            group: None,
        }
    }

    pub fn footprint_volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceNode {
    pub id: NodeId,
    pub position: Vec3,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomNode {
    pub id: NodeId,
    pub centroid: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "label", rename_all = "snake_case")]
pub enum EdgeKind {
    Adjacency,
    /// Endpoint `a` is the child, `b` the parent.
    ParentChild,
    Relation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub kind: EdgeKind,
    pub confidence: f64,
    /// Kept because verification was unavailable rather than confirmed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unverified: bool,
}

impl Edge {
    pub fn adjacency(a: NodeId, b: NodeId) -> Self {
        Self { a, b, kind: EdgeKind::Adjacency, confidence: 1.0, unverified: false }
    }
    pub fn parent_child(child: NodeId, parent: NodeId) -> Self {
        Self { a: child, b: parent, kind: EdgeKind::ParentChild, confidence: 1.0, unverified: false }
    }
    pub fn relation(a: NodeId, b: NodeId, label: impl Into<String>, confidence: f64) -> Self {
        Self { a, b, kind: EdgeKind::Relation(label.into()), confidence, unverified: false }
    }
    pub fn touches(&self, n: NodeId) -> bool {
        self.a == n || self.b == n
    }
    pub fn other(&self, n: NodeId) -> Option<NodeId> {
        if self.a == n {
            Some(self.b)
        } else if self.b == n {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalGroup {
    pub id: u32,
    pub members: Vec<NodeId>,
    pub anchor: String,
    pub room: NodeId,
}

#[derive(Debug, Clone, Default)]
pub struct SceneGraph {
    grid: Option<OccupancyGrid>,
    objects: Vec<ObjectNode>,
    places: Vec<PlaceNode>,
    rooms: Vec<RoomNode>,
    has_building: bool,
    edges: Vec<Edge>,
    groups: Vec<FunctionalGroup>,
    /// Free-form run metadata (filtration diagnostics, provenance).
    pub metadata: BTreeMap<String, serde_json::Value>,
    parents: HashMap<NodeId, NodeId>,
}

impl PartialEq for SceneGraph {
    fn eq(&self, o: &Self) -> bool {
        self.grid == o.grid
            && self.objects == o.objects
            && self.places == o.places
            && self.rooms == o.rooms
            && self.has_building == o.has_building
            && self.edges == o.edges
            && self.groups == o.groups
            && self.metadata == o.metadata
    }
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_grid(&mut self, grid: OccupancyGrid) {
        self.grid = Some(grid);
    }

    pub fn grid(&self) -> Option<&OccupancyGrid> {
        self.grid.as_ref()
    }

    pub fn add_object(&mut self, mut node: ObjectNode) -> NodeId {
        let id = NodeId::object(self.objects.len() as u32);
        node.id = id;
        node.room = None;
        node.group = None;
        self.objects.push(node);
        id
    }

    pub fn add_place(&mut self, position: Vec3, clearance: f64) -> Result<NodeId, GraphError> {
        if !(clearance >= 0.0) {
            return Err(GraphError::Invalid(format!("clearance must be non-negative, got {clearance}")));
        }
        let id = NodeId::place(self.places.len() as u32);
        self.places.push(PlaceNode { id, position, clearance });
        Ok(id)
    }

    pub fn add_room(&mut self, centroid: Vec3) -> NodeId {
        let id = NodeId::room(self.rooms.len() as u32);
        self.rooms.push(RoomNode { id, centroid });
        id
    }

    /// Creates the building root if missing.
    pub fn ensure_building(&mut self) -> NodeId {
        self.has_building = true;
        NodeId::BUILDING
    }

    pub fn contains(&self, id: NodeId) -> bool {
        let i = id.index as usize;
        match id.layer {
            Layer::Occupancy => i == 0 && self.grid.is_some(),
            Layer::Object => i < self.objects.len(),
            Layer::Place => i < self.places.len(),
            Layer::Room => i < self.rooms.len(),
            Layer::Building => i == 0 && self.has_building,
        }
    }

    fn check_edge(&self, e: &Edge) -> Result<(), GraphError> {
        for n in [e.a, e.b] {
            if !self.contains(n) {
                return Err(GraphError::MissingNode(n));
            }
        }
        if e.a == e.b {
            return Err(GraphError::SelfLoop(e.a));
        }
        if !(0.0..=1.0).contains(&e.confidence) {
            return Err(GraphError::Invalid(format!("confidence {} outside [0, 1]", e.confidence)));
        }
        match &e.kind {
            EdgeKind::Adjacency if e.a.layer != e.b.layer => Err(GraphError::CrossLayerAdjacency(e.a, e.b)),
            EdgeKind::ParentChild => {
                if e.a.layer.parent_layer() != Some(e.b.layer) {
                    Err(GraphError::BadParent { child: e.a, parent: e.b })
                } else if self.parents.contains_key(&e.a) {
                    Err(GraphError::DuplicateParent(e.a))
                } else {
                    Ok(())
                }
            }
            EdgeKind::Relation(_) if e.a.layer != Layer::Object || e.b.layer != Layer::Object => {
                Err(GraphError::RelationEndpoints(e.a, e.b))
            }
            _ => Ok(()),
        }
    }

    pub fn add_edge(&mut self, e: Edge) -> Result<usize, GraphError> {
        self.check_edge(&e)?;
        if e.kind == EdgeKind::ParentChild {
            self.parents.insert(e.a, e.b);
            if e.a.layer == Layer::Object {
                self.objects[e.a.index as usize].room = Some(e.b);
            }
        }
        self.edges.push(e);
        Ok(self.edges.len() - 1)
    }

    pub fn set_parent(&mut self, child: NodeId, parent: NodeId) -> Result<usize, GraphError> {
        self.add_edge(Edge::parent_child(child, parent))
    }

    pub fn remove_edge(&mut self, index: usize) -> Result<Edge, GraphError> {
        if index >= self.edges.len() {
            return Err(GraphError::MissingEdge);
        }
        let e = self.edges.remove(index);
        if e.kind == EdgeKind::ParentChild {
            self.parents.remove(&e.a);
            if e.a.layer == Layer::Object {
                self.objects[e.a.index as usize].room = None;
            }
        }
        Ok(e)
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.parents.get(&id).copied()
    }

    /// Children in edge insertion order.
    pub fn children_of(&self, id: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::ParentChild && e.b == id).map(|e| e.a).collect()
    }

    /// Object ids in the room, ascending.
    pub fn objects_in_room(&self, room: NodeId) -> Vec<NodeId> {
        self.objects.iter().filter(|o| o.room == Some(room)).map(|o| o.id).collect()
    }

    pub fn places_in_room(&self, room: NodeId) -> Vec<NodeId> {
        self.places.iter().filter(|p| self.parent_of(p.id) == Some(room)).map(|p| p.id).collect()
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn object(&self, id: NodeId) -> Option<&ObjectNode> {
        (id.layer == Layer::Object).then(|| self.objects.get(id.index as usize)).flatten()
    }

    pub fn object_mut(&mut self, id: NodeId) -> Option<&mut ObjectNode> {
        if id.layer != Layer::Object {
            return None;
        }
        self.objects.get_mut(id.index as usize)
    }

    pub fn places(&self) -> &[PlaceNode] {
        &self.places
    }

    pub fn place(&self, id: NodeId) -> Option<&PlaceNode> {
        (id.layer == Layer::Place).then(|| self.places.get(id.index as usize)).flatten()
    }

    pub fn rooms(&self) -> &[RoomNode] {
        &self.rooms
    }

    pub fn has_building(&self) -> bool {
        self.has_building
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn retain_edges(&mut self, mut keep: impl FnMut(&Edge) -> bool) {
        let parents = &mut self.parents;
        let objects = &mut self.objects;
        self.edges.retain(|e| {
            let k = keep(e);
            if !k && e.kind == EdgeKind::ParentChild {
                parents.remove(&e.a);
                if e.a.layer == Layer::Object {
                    objects[e.a.index as usize].room = None;
                }
            }
            k
        });
    }

    pub fn groups(&self) -> &[FunctionalGroup] {
        &self.groups
    }

    pub fn group(&self, id: u32) -> Option<&FunctionalGroup> {
        self.groups.iter().find(|g| g.id == id)
    }

    /// Replaces all functional groups and the per-object group links.
    pub fn set_groups(&mut self, groups: Vec<FunctionalGroup>) -> Result<(), GraphError> {
        for o in &mut self.objects {
            o.group = None;
        }
        for g in &groups {
            if g.members.is_empty() {
                return Err(GraphError::Invalid(format!("group {} is empty", g.id)));
            }
            for m in &g.members {
                let obj = self.objects.get(m.index as usize).filter(|_| m.layer == Layer::Object);
                let obj = obj.ok_or(GraphError::MissingNode(*m))?;
                if obj.room != Some(g.room) {
                    return Err(GraphError::Invalid(format!("{m} is not in room {}", g.room)));
                }
            }
            for m in &g.members {
                self.objects[m.index as usize].group = Some(g.id);
            }
        }
        self.groups = groups;
        Ok(())
    }

    /// Rooms linked by adjacency edges to `room`, ascending.
    pub fn adjacent_rooms(&self, room: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Adjacency && e.a.layer == Layer::Room)
            .filter_map(|e| e.other(room))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Room containing a world position: the room of the closest place node
    /// in the XY plane (ties to the lower place id).
    pub fn room_at(&self, p: &Vec3) -> Option<NodeId> {
        let mut best: Option<(f64, NodeId)> = None;
        for place in &self.places {
            let Some(room) = self.parent_of(place.id) else { continue };
            let d = (place.position.xy() - p.xy()).norm_squared();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, room));
            }
        }
        best.map(|(_, r)| r)
    }

    /// Breadth-first room path from `from` to `to`, both inclusive. Neighbours
    /// are expanded in ascending order so the result is deterministic.
    pub fn room_path(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        if !self.contains(from) || !self.contains(to) {
            return None;
        }
        let mut prev: HashMap<NodeId, NodeId> = HashMap::new();
        let mut queue = std::collections::VecDeque::from([from]);
        let mut seen = std::collections::HashSet::from([from]);
        while let Some(r) = queue.pop_front() {
            if r == to {
                let mut path = vec![to];
                let mut cur = to;
                while let Some(&p) = prev.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for n in self.adjacent_rooms(r) {
                if seen.insert(n) {
                    prev.insert(n, r);
                    queue.push_back(n);
                }
            }
        }
        None
    }

    fn rebuild_index(&mut self) {
        self.parents.clear();
        for e in &self.edges {
            if e.kind == EdgeKind::ParentChild {
                self.parents.insert(e.a, e.b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chair(x: f64, y: f64) -> ObjectNode {
        ObjectNode::new("chair", "a chair", Vec3::new(x, y, 0.5), Vec3::new(0.25, 0.25, 0.45))
    }

    #[test]
    fn node_id_text_roundtrip() {
        for id in [NodeId::object(12), NodeId::room(0), NodeId::BUILDING, NodeId::place(399), NodeId::OCCUPANCY] {
            assert_eq!(id.to_string().parse::<NodeId>().unwrap(), id);
        }
        assert!("X1".parse::<NodeId>().is_err());
        assert!("O".parse::<NodeId>().is_err());
    }

    #[test]
    fn parent_object_to_room() {
        let mut g = SceneGraph::new();
        let room = g.add_room(Vec3::zeros());
        let obj = g.add_object(chair(1.0, 1.0));
        g.set_parent(obj, room).unwrap();
        assert_eq!(g.objects_in_room(room), vec![obj]);
        assert_eq!(g.parent_of(obj), Some(room));
        assert_eq!(g.children_of(room), vec![obj]);
        assert!(matches!(g.set_parent(obj, room), Err(GraphError::DuplicateParent(_))));
    }

    #[test]
    fn structural_rejections() {
        let mut g = SceneGraph::new();
        let obj = g.add_object(chair(0.0, 0.0));
        let place = g.add_place(Vec3::zeros(), 1.0).unwrap();
        assert!(matches!(g.add_edge(Edge::adjacency(obj, place)), Err(GraphError::CrossLayerAdjacency(..))));
        assert!(matches!(g.add_edge(Edge::adjacency(obj, obj)), Err(GraphError::SelfLoop(_))));
        assert!(matches!(
            g.add_edge(Edge::adjacency(obj, NodeId::object(7))),
            Err(GraphError::MissingNode(_))
        ));
        // object cannot hang from a place
        assert!(matches!(g.set_parent(obj, place), Err(GraphError::BadParent { .. })));
        assert!(matches!(g.add_edge(Edge::relation(obj, place, "near", 1.0)), Err(GraphError::RelationEndpoints(..))));
        assert!(g.add_place(Vec3::zeros(), -0.1).is_err());
        // building has to exist before rooms attach to it
        let room = g.add_room(Vec3::zeros());
        assert!(g.set_parent(room, NodeId::BUILDING).is_err());
        g.ensure_building();
        g.set_parent(room, NodeId::BUILDING).unwrap();
    }

    #[test]
    fn remove_edge_clears_parent() {
        let mut g = SceneGraph::new();
        let room = g.add_room(Vec3::zeros());
        let obj = g.add_object(chair(0.0, 0.0));
        let idx = g.set_parent(obj, room).unwrap();
        g.remove_edge(idx).unwrap();
        assert_eq!(g.parent_of(obj), None);
        assert!(g.objects_in_room(room).is_empty());
        assert!(matches!(g.remove_edge(5), Err(GraphError::MissingEdge)));
    }

    #[test]
    fn room_paths() {
        let mut g = SceneGraph::new();
        let r: Vec<NodeId> = (0..4).map(|_| g.add_room(Vec3::zeros())).collect();
        for (a, b) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
            g.add_edge(Edge::adjacency(r[a], r[b])).unwrap();
        }
        assert_eq!(g.room_path(r[0], r[0]).unwrap(), vec![r[0]]);
        assert_eq!(g.room_path(r[0], r[3]).unwrap(), vec![r[0], r[1], r[3]]);
        assert_eq!(g.adjacent_rooms(r[3]), vec![r[1], r[2]]);
    }
}
