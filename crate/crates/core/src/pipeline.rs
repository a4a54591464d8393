//! Scene construction: occupancy, places, objects and checked relation
//! edges (`build`), then room discovery, hierarchy and groups (`partition`).

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dsg::{group_objects, Edge, EdgeKind, GraphError, Layer, NodeId, SceneGraph, DEFAULT_GROUP_RADIUS};
use crate::geometry::Vec3;
use crate::scenegen::{to_objects, to_occupancy, SceneSpec, ABOVE_COLUMN_RADIUS};
use crate::topology::{
    build_place_graph, find_plateau, partition_rooms, prune_edge_geometric, verify_edges, EdgeVerdict, FiltrationResult,
    PlaceGraph, RelationQuery, RelationVerifier, RoomPartition, TopologyError, VerifyConfig, DEFAULT_EPSILON,
    DEFAULT_PLACE_HEIGHT, DEFAULT_SAMPLE_SPACING,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph already has rooms")]
    AlreadyPartitioned,
    #[error("graph has no place nodes")]
    NoPlaces,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    pub sample_spacing: f64,
    pub place_height: f64,
    pub epsilon: f64,
    pub group_radius: f64,
    /// Object pairs closer than this become relation candidates.
    pub relation_radius: f64,
    pub verify: VerifyConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            sample_spacing: DEFAULT_SAMPLE_SPACING,
            place_height: DEFAULT_PLACE_HEIGHT,
            epsilon: DEFAULT_EPSILON,
            group_radius: DEFAULT_GROUP_RADIUS,
            relation_radius: 2.0,
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub candidates: usize,
    pub geometric_pruned: usize,
    pub bypassed: usize,
    pub verified_kept: usize,
    pub verified_pruned: usize,
    pub unverified: usize,
}

/// Candidate label for an ordered pair: vertical relations inside a narrow
/// column, otherwise proximity.
pub fn candidate_relation(a: &Vec3, b: &Vec3) -> &'static str {
    if (a.xy() - b.xy()).norm() < ABOVE_COLUMN_RADIUS && a.z != b.z {
        if a.z > b.z {
            "above"
        } else {
            "below"
        }
    } else {
        "near"
    }
}

/// Occupancy, place lattice (with geometric place edges), objects and
/// relation edges. Rooms are left for [`partition_graph`].
pub fn build_graph(
    spec: &SceneSpec,
    cfg: &BuildConfig,
    verifier: &dyn RelationVerifier,
) -> Result<(SceneGraph, RelationStats), PipelineError> {
    let grid = to_occupancy(spec);
    let places = build_place_graph(&grid, cfg.sample_spacing, cfg.place_height, cfg.epsilon)?;
    let mut g = SceneGraph::new();
    for (p, c) in places.positions.iter().zip(&places.clearance) {
        g.add_place(*p, *c)?;
    }
    for &(a, b) in &places.edges {
        g.add_edge(Edge::adjacency(NodeId::place(a as u32), NodeId::place(b as u32)))?;
    }
    let objects = to_objects(spec);
    let mut stats = RelationStats::default();
    let mut pairs = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        for b in &objects[i + 1..] {
            if (a.centroid - b.centroid).norm() >= cfg.relation_radius {
                continue;
            }
            stats.candidates += 1;
            if prune_edge_geometric(&a.centroid, &b.centroid, &grid, cfg.epsilon) {
                stats.geometric_pruned += 1;
                continue;
            }
            pairs.push((a, b, candidate_relation(&a.centroid, &b.centroid)));
        }
    }
    let queries: Vec<RelationQuery> =
        pairs.iter().map(|(a, b, rel)| RelationQuery { subject: a, object: b, relation: rel }).collect();
    let verdicts = verify_edges(&queries, verifier, &cfg.verify);
    let mut edges = Vec::new();
    for (q, v) in queries.iter().zip(&verdicts) {
        match (v.verdict, v.keep) {
            (EdgeVerdict::Bypassed, _) => stats.bypassed += 1,
            (EdgeVerdict::Verified, true) => stats.verified_kept += 1,
            (EdgeVerdict::Verified, false) => stats.verified_pruned += 1,
            (EdgeVerdict::Unverified, _) => stats.unverified += 1,
        }
        if v.keep {
            let mut e = Edge::relation(q.subject.id, q.object.id, q.relation, v.confidence.unwrap_or(1.0));
            e.unverified = v.verdict == EdgeVerdict::Unverified;
            edges.push(e);
        }
    }
    for o in objects {
        g.add_object(o);
    }
    for e in edges {
        g.add_edge(e)?;
    }
    g.set_grid(grid);
    g.metadata.insert(
        "build".into(),
        json!({
            "sample_spacing": cfg.sample_spacing,
            "place_height": cfg.place_height,
            "epsilon": cfg.epsilon,
            "relations": stats,
        }),
    );
    g.metadata.insert("scene".into(), json!({ "dataset": spec.dataset, "seed": spec.seed }));
    Ok((g, stats))
}

/// Place layer and its adjacency edges as a filtration input.
pub fn place_graph_of(g: &SceneGraph) -> PlaceGraph {
    let positions = g.places().iter().map(|p| p.position).collect();
    let clearance = g.places().iter().map(|p| p.clearance).collect();
    let edges = g
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::Adjacency && e.a.layer == Layer::Place)
        .map(|e| (e.a.index as usize, e.b.index as usize))
        .collect();
    PlaceGraph::new(positions, clearance, edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub filtration: FiltrationResult,
    pub partition: RoomPartition,
}

/// Discovers rooms from the place layer and links everything into the
/// hierarchy: places and objects under rooms (objects by their nearest
/// place), rooms under the building, room adjacency, functional groups.
pub fn partition_graph(g: &mut SceneGraph, cfg: &BuildConfig) -> Result<PartitionReport, PipelineError> {
    if !g.rooms().is_empty() {
        return Err(PipelineError::AlreadyPartitioned);
    }
    if g.places().is_empty() {
        return Err(PipelineError::NoPlaces);
    }
    let pg = place_graph_of(g);
    let filtration = find_plateau(&pg);
    let partition = partition_rooms(&pg, &filtration);
    let building = g.ensure_building();
    for r in 0..partition.room_count {
        let members = partition.members(r);
        let centroid = members.iter().map(|&i| pg.positions[i]).sum::<Vec3>() / members.len() as f64;
        let room = g.add_room(centroid);
        g.set_parent(room, building)?;
    }
    for (i, &r) in partition.assignment.iter().enumerate() {
        g.set_parent(NodeId::place(i as u32), NodeId::room(r as u32))?;
    }
    for (a, b) in partition.room_adjacency(&pg) {
        g.add_edge(Edge::adjacency(NodeId::room(a as u32), NodeId::room(b as u32)))?;
    }
    let homes: Vec<(NodeId, NodeId)> =
        g.objects().iter().map(|o| (o.id, g.room_at(&o.centroid).expect("rooms have places"))).collect();
    for (o, r) in homes {
        g.set_parent(o, r)?;
    }
    let mut groups = Vec::new();
    for r in 0..partition.room_count {
        let room = NodeId::room(r as u32);
        let members: Vec<_> = g.objects().iter().filter(|o| o.room == Some(room)).collect();
        groups.extend(group_objects(room, &members, cfg.group_radius, groups.len() as u32));
    }
    g.set_groups(groups)?;
    g.metadata.insert(
        "filtration".into(),
        json!({ "k": filtration.k, "delta_star": filtration.delta_star, "plateau": filtration.plateau }),
    );
    Ok(PartitionReport { filtration, partition })
}

/// `build_graph` followed by `partition_graph`.
pub fn build_world(
    spec: &SceneSpec,
    cfg: &BuildConfig,
    verifier: &dyn RelationVerifier,
) -> Result<(SceneGraph, PartitionReport), PipelineError> {
    let (mut g, _) = build_graph(spec, cfg, verifier)?;
    let report = partition_graph(&mut g, cfg)?;
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsg::{load_graph, save_graph};
    use crate::scenegen::{generate, reg_fixture, DatasetId};
    use crate::topology::ScriptedVerifier;
    use std::collections::{BTreeMap, BTreeSet};

    fn world(d: usize, seed: u64) -> (SceneSpec, SceneGraph, PartitionReport) {
        let spec = generate(DatasetId::from_index(d).unwrap(), seed);
        let v = ScriptedVerifier::new(spec.relations());
        let (g, r) = build_world(&spec, &BuildConfig::default(), &v).unwrap();
        (spec, g, r)
    }

    /// Discovered room -> ground-truth quadrant, requiring a bijection.
    fn room_map(spec: &SceneSpec, g: &SceneGraph) -> BTreeMap<NodeId, u32> {
        let mut map = BTreeMap::new();
        for p in g.places() {
            let gt = spec.arena.room_of(p.position.x, p.position.y);
            let r = g.parent_of(p.id).unwrap();
            assert_eq!(*map.entry(r).or_insert(gt), gt, "room {r} spans quadrants");
        }
        let image: BTreeSet<u32> = map.values().copied().collect();
        assert_eq!(image.len(), map.len());
        map
    }

    #[test]
    fn four_room_arena_recovers_layout() {
        let (spec, g, report) = world(9, 7);
        assert_eq!(report.filtration.k, 4);
        assert_eq!(g.rooms().len(), 4);
        let map = room_map(&spec, &g);
        let mut adj = BTreeSet::new();
        for r in g.rooms() {
            for n in g.adjacent_rooms(r.id) {
                let (a, b) = (map[&r.id], map[&n]);
                adj.insert((a.min(b), a.max(b)));
            }
        }
        assert_eq!(adj, spec.arena.adjacency());
        let pg = place_graph_of(&g);
        for v in report.partition.boundary_nodes(&pg) {
            let mut rooms: BTreeSet<usize> = pg.neighbors()[v].iter().map(|&n| report.partition.assignment[n]).collect();
            rooms.insert(report.partition.assignment[v]);
            assert_eq!(rooms.len(), 2, "boundary place {v} touches {rooms:?}");
        }
        for o in g.objects() {
            assert_eq!(map[&o.room.unwrap()], spec.objects[o.id.index as usize].room);
        }
    }

    #[test]
    fn delta_star_sits_between_doorway_and_room_clearance() {
        let (_, _, report) = world(1, 0);
        let p = report.filtration.plateau.unwrap();
        assert!(report.filtration.delta_star > 0.29 && report.filtration.delta_star < 1.0, "{p:?}");
        assert!(p.hi > 2.0);
    }

    #[test]
    fn hierarchy_and_groups_are_consistent() {
        let spec = reg_fixture(0);
        let v = ScriptedVerifier::new(spec.relations());
        let (g, _) = build_world(&spec, &BuildConfig::default(), &v).unwrap();
        assert!(g.has_building());
        for r in g.rooms() {
            assert_eq!(g.parent_of(r.id), Some(NodeId::BUILDING));
        }
        let grouped: usize = g.groups().iter().map(|gr| gr.members.len()).sum();
        assert_eq!(grouped, g.objects().len());
        for gr in g.groups() {
            assert!(gr.members.iter().all(|m| g.object(*m).unwrap().room == Some(gr.room)));
        }
        let rel = g.edges().iter().filter(|e| matches!(e.kind, EdgeKind::Relation(_))).count();
        assert!(rel > 0);
    }

    #[test]
    fn relation_edges_have_line_of_sight() {
        let spec = reg_fixture(1);
        let v = ScriptedVerifier::new(spec.relations());
        let (g, stats) = build_graph(&spec, &BuildConfig::default(), &v).unwrap();
        assert!(stats.geometric_pruned > 0, "{stats:?}");
        let grid = g.grid().unwrap();
        let mut relations = 0;
        for e in g.edges() {
            if let EdgeKind::Relation(_) = e.kind {
                relations += 1;
                let (a, b) = (&spec.objects[e.a.index as usize], &spec.objects[e.b.index as usize]);
                assert!(!prune_edge_geometric(&a.position, &b.position, grid, DEFAULT_EPSILON), "{e:?}");
            }
        }
        assert_eq!(relations, stats.candidates - stats.geometric_pruned - stats.verified_pruned);
    }

    #[test]
    fn partition_twice_is_rejected() {
        let (_, mut g, _) = world(1, 0);
        assert!(matches!(partition_graph(&mut g, &BuildConfig::default()), Err(PipelineError::AlreadyPartitioned)));
    }

    #[test]
    fn built_graph_roundtrips_byte_stable() {
        let (_, g, _) = world(8, 7);
        let doc = save_graph(&g);
        let back = load_graph(&doc).unwrap();
        assert_eq!(save_graph(&back), doc);
    }

    #[test]
    fn candidate_labels() {
        assert_eq!(candidate_relation(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(0.2, 0.0, 0.2)), "above");
        assert_eq!(candidate_relation(&Vec3::new(0.0, 0.0, 0.2), &Vec3::new(0.2, 0.0, 1.0)), "below");
        assert_eq!(candidate_relation(&Vec3::new(0.0, 0.0, 0.2), &Vec3::new(0.9, 0.0, 1.0)), "near");
    }
}
