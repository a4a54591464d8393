//! Graph document (JSON) and PLY sidecars.
//!
//! Document fields, in order: `schema`, `version`, `labels` (sorted label
//! table), `objects` (label referenced by table index), `places`, `rooms`,
//! `building`, `edges`, `groups`, `grid`, `metadata`. Object room and group
//! links are not stored on the objects; they are rebuilt from parent-child
//! edges and the group array on load.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Edge, FunctionalGroup, GraphError, Layer, NodeId, ObjectNode, OccupancyGrid, PlaceNode, RoomNode, SceneGraph};
use crate::geometry::Vec3;

pub const GRAPH_SCHEMA: &str = "omnivln-dsg";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    id: NodeId,
    label: u32,
    caption: String,
    centroid: Vec3,
    half_extents: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    schema: String,
    version: u32,
    labels: Vec<String>,
    objects: Vec<ObjectDoc>,
    places: Vec<PlaceNode>,
    rooms: Vec<RoomNode>,
    building: bool,
    edges: Vec<Edge>,
    groups: Vec<FunctionalGroup>,
    grid: Option<OccupancyGrid>,
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Serialises the graph to its JSON document (single line, trailing newline).
pub fn save_graph(g: &SceneGraph) -> String {
    let labels: Vec<String> = g.objects.iter().map(|o| o.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let objects = g
        .objects
        .iter()
        .map(|o| ObjectDoc {
            id: o.id,
            label: labels.binary_search(&o.label).expect("label in table") as u32,
            caption: o.caption.clone(),
            centroid: o.centroid,
            half_extents: o.half_extents,
        })
        .collect();
    let doc = GraphDocument {
        schema: GRAPH_SCHEMA.into(),
        version: GRAPH_VERSION,
        labels,
        objects,
        places: g.places.clone(),
        rooms: g.rooms.clone(),
        building: g.has_building,
        edges: g.edges.clone(),
        groups: g.groups.clone(),
        grid: g.grid.clone(),
        metadata: g.metadata.clone(),
    };
    let mut s = serde_json::to_string(&doc).expect("graph document serialises");
    s.push('\n');
    s
}

fn check_dense(kind: &str, ids: impl Iterator<Item = NodeId>, layer: Layer) -> Result<(), GraphError> {
    for (i, id) in ids.enumerate() {
        if id.layer != layer || id.index as usize != i {
            return Err(GraphError::Corrupt(format!("{kind} #{i} has id {id}")));
        }
    }
    Ok(())
}

pub fn load_graph(text: &str) -> Result<SceneGraph, GraphError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| GraphError::Corrupt(e.to_string()))?;
    match (raw.get("schema").and_then(|v| v.as_str()), raw.get("version").and_then(|v| v.as_u64())) {
        (Some(GRAPH_SCHEMA), Some(v)) if v == GRAPH_VERSION as u64 => {}
        (s, v) => return Err(GraphError::Schema(format!("expected {GRAPH_SCHEMA} v{GRAPH_VERSION}, found {s:?} v{v:?}"))),
    }
    let doc: GraphDocument = serde_json::from_value(raw).map_err(|e| GraphError::Corrupt(e.to_string()))?;

    check_dense("object", doc.objects.iter().map(|o| o.id), Layer::Object)?;
    check_dense("place", doc.places.iter().map(|p| p.id), Layer::Place)?;
    check_dense("room", doc.rooms.iter().map(|r| r.id), Layer::Room)?;

    let mut g = SceneGraph::new();
    if let Some(grid) = doc.grid {
        g.set_grid(grid);
    }
    for o in doc.objects {
        let label = doc
            .labels
            .get(o.label as usize)
            .ok_or_else(|| GraphError::Corrupt(format!("label index {} out of range", o.label)))?;
        g.add_object(ObjectNode::new(label.clone(), o.caption, o.centroid, o.half_extents));
    }
    for p in doc.places {
        g.add_place(p.position, p.clearance)?;
    }
    g.rooms = doc.rooms;
    g.has_building = doc.building;
    for e in doc.edges {
        g.add_edge(e)?;
    }
    g.set_groups(doc.groups)?;
    g.metadata = doc.metadata;
    g.rebuild_index();
    Ok(g)
}

/// ASCII PLY of object centroids with their numeric ids.
pub fn objects_to_ply(g: &SceneGraph) -> String {
    let mut out = String::from("ply\nformat ascii 1.0\ncomment omnivln object centroids\n");
    out.push_str(&format!("element vertex {}\n", g.objects.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\nproperty uint id\nend_header\n");
    for o in &g.objects {
        out.push_str(&format!("{:.4} {:.4} {:.4} {}\n", o.centroid.x, o.centroid.y, o.centroid.z, o.id.index));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SceneGraph {
        let mut g = SceneGraph::new();
        let mut grid = OccupancyGrid::new(Vec3::new(0.0, 0.0, 0.0), 0.1, [10, 10, 5]).unwrap();
        grid.insert([-1, 3, 0]);
        grid.insert([4, 4, 2]);
        g.set_grid(grid);
        let b = g.ensure_building();
        let r = g.add_room(Vec3::new(0.5, 0.5, 0.0));
        g.set_parent(r, b).unwrap();
        let o1 = g.add_object(ObjectNode::new("table", "a table", Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.6, 0.4, 0.37)));
        let o2 = g.add_object(ObjectNode::new("chair", "a chair", Vec3::new(0.7, 0.2, 0.3), Vec3::new(0.2, 0.2, 0.4)));
        let p = g.add_place(Vec3::new(0.25, 0.25, 1.0), 0.1 + 0.2).unwrap();
        for n in [o1, o2, p] {
            g.set_parent(n, r).unwrap();
        }
        let mut rel = Edge::relation(o1, o2, "near", 0.75);
        rel.unverified = true;
        g.add_edge(rel).unwrap();
        g.set_groups(vec![FunctionalGroup { id: 0, members: vec![o1, o2], anchor: "table".into(), room: r }]).unwrap();
        g.metadata.insert("delta_star".into(), serde_json::json!(0.65));
        g
    }

    #[test]
    fn empty_graph_roundtrips() {
        let g = SceneGraph::new();
        let doc = save_graph(&g);
        assert_eq!(load_graph(&doc).unwrap(), g);
    }

    #[test]
    fn populated_graph_roundtrips_byte_stable() {
        let g = sample();
        let doc = save_graph(&g);
        let back = load_graph(&doc).unwrap();
        assert_eq!(back, g);
        assert_eq!(save_graph(&back), doc);
        assert_eq!(back.object(NodeId::object(1)).unwrap().group, Some(0));
        assert_eq!(back.parent_of(NodeId::place(0)), Some(NodeId::room(0)));
    }

    #[test]
    fn schema_and_corruption_errors() {
        let doc = save_graph(&sample());
        let wrong = doc.replace("\"version\":1", "\"version\":9");
        assert!(matches!(load_graph(&wrong), Err(GraphError::Schema(_))));
        assert!(matches!(load_graph("{not json"), Err(GraphError::Corrupt(_))));
        let dangling = doc.replace("\"a\":\"O0\",\"b\":\"O1\"", "\"a\":\"O0\",\"b\":\"O9\"");
        assert_ne!(dangling, doc);
        assert!(matches!(load_graph(&dangling), Err(GraphError::MissingNode(_))));
        let extra = doc.replacen("{", "{\"bogus\":1,", 1);
        assert!(matches!(load_graph(&extra), Err(GraphError::Corrupt(_))));
    }

    #[test]
    fn centroid_ply() {
        let ply = objects_to_ply(&sample());
        assert!(ply.contains("element vertex 2\n"));
        assert!(ply.ends_with("0.7000 0.2000 0.3000 1\n"));
    }
}
