use super::{FunctionalGroup, NodeId, ObjectNode};

pub const DEFAULT_GROUP_RADIUS: f64 = 1.5;

/// Single-linkage clustering of a room's objects on horizontal centroid
/// distance. Groups come out ordered by their lowest member id, members
/// ascending; the anchor is the label of the member with the largest box
/// volume (lowest id on ties). Group ids count up from `first_id`.
pub fn group_objects(room: NodeId, objects: &[&ObjectNode], radius: f64, first_id: u32) -> Vec<FunctionalGroup> {
    let mut sorted: Vec<&ObjectNode> = objects.to_vec();
    sorted.sort_by_key(|o| o.id);
    let n = sorted.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (sorted[i].centroid.xy() - sorted[j].centroid.xy()).norm();
            if d <= radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    // keep the smaller index as root so roots follow member order
                    let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                    parent[hi] = lo;
                }
            }
        }
    }
    let mut clusters: Vec<(usize, Vec<&ObjectNode>)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match clusters.iter_mut().find(|(root, _)| *root == r) {
            Some((_, members)) => members.push(sorted[i]),
            None => clusters.push((r, vec![sorted[i]])),
        }
    }
    clusters
        .into_iter()
        .enumerate()
        .map(|(k, (_, members))| {
            let anchor = members
                .iter()
                .fold(None::<&ObjectNode>, |best, o| match best {
                    Some(b) if b.footprint_volume() >= o.footprint_volume() => Some(b),
                    _ => Some(o),
                })
                .map(|o| o.label.clone())
                .unwrap_or_default();
            FunctionalGroup { id: first_id + k as u32, members: members.iter().map(|o| o.id).collect(), anchor, room }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn obj(i: u32, label: &str, x: f64, y: f64, half: f64) -> ObjectNode {
        let mut o = ObjectNode::new(label, "", Vec3::new(x, y, 0.5), Vec3::new(half, half, half));
        o.id = NodeId::object(i);
        o
    }

    // Reference: connected components of the "within radius" graph by repeated flood fill.
    fn brute_clusters(objs: &[ObjectNode], radius: f64) -> Vec<Vec<u32>> {
        let mut seen = vec![false; objs.len()];
        let mut out = Vec::new();
        for s in 0..objs.len() {
            if seen[s] {
                continue;
            }
            let mut stack = vec![s];
            let mut comp = Vec::new();
            seen[s] = true;
            while let Some(i) = stack.pop() {
                comp.push(objs[i].id.index);
                for j in 0..objs.len() {
                    let d = (objs[i].centroid.xy() - objs[j].centroid.xy()).norm();
                    if !seen[j] && d <= radius {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
        out.sort();
        out
    }

    #[test]
    fn chairs_around_a_table() {
        let objs = [obj(0, "chair", 1.5, 1.0, 0.25), obj(1, "table", 1.0, 1.0, 0.6), obj(2, "chair", 0.5, 1.0, 0.25)];
        let refs: Vec<&ObjectNode> = objs.iter().collect();
        let groups = group_objects(NodeId::room(0), &refs, DEFAULT_GROUP_RADIUS, 0);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].anchor, "table");
        assert_eq!(groups[0].members, vec![NodeId::object(0), NodeId::object(1), NodeId::object(2)]);
        let expected = brute_clusters(&objs, DEFAULT_GROUP_RADIUS);
        assert_eq!(expected, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn far_apart_objects_are_singletons() {
        let objs = [obj(3, "chair", 0.0, 0.0, 0.2), obj(1, "screen", 2.0, 0.0, 0.2), obj(2, "cabinet", 4.0, 0.0, 0.2)];
        let refs: Vec<&ObjectNode> = objs.iter().collect();
        let groups = group_objects(NodeId::room(1), &refs, DEFAULT_GROUP_RADIUS, 5);
        let members: Vec<Vec<NodeId>> = groups.iter().map(|g| g.members.clone()).collect();
        assert_eq!(members, vec![vec![NodeId::object(1)], vec![NodeId::object(2)], vec![NodeId::object(3)]]);
        assert_eq!(groups.iter().map(|g| g.id).collect::<Vec<_>>(), vec![5, 6, 7]);
    }

    #[test]
    fn empty_room() {
        assert!(group_objects(NodeId::room(0), &[], DEFAULT_GROUP_RADIUS, 0).is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn groups_partition_and_match_flood_fill(pts in proptest::collection::vec((0.0f64..6.0, 0.0f64..6.0, 0.1f64..0.8), 0..25)) {
                let objs: Vec<ObjectNode> = pts.iter().enumerate().map(|(i, (x, y, h))| obj(i as u32, "x", *x, *y, *h)).collect();
                let refs: Vec<&ObjectNode> = objs.iter().collect();
                let groups = group_objects(NodeId::room(0), &refs, 1.5, 0);
                let mut all: Vec<u32> = groups.iter().flat_map(|g| g.members.iter().map(|m| m.index)).collect();
                all.sort();
                prop_assert_eq!(all, (0..objs.len() as u32).collect::<Vec<_>>());
                let mut got: Vec<Vec<u32>> = groups.iter().map(|g| g.members.iter().map(|m| m.index).collect()).collect();
                got.sort();
                prop_assert_eq!(got, brute_clusters(&objs, 1.5));
                let firsts: Vec<NodeId> = groups.iter().map(|g| g.members[0]).collect();
                let mut sorted = firsts.clone();
                sorted.sort();
                prop_assert_eq!(firsts, sorted);
            }
        }
    }
}
