//! Place-graph sampling, Betti-0 filtration, room partitioning and
//! hybrid (geometric + verifier) edge pruning.

mod union_find;
pub mod verify;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsg::OccupancyGrid;
use crate::geometry::Vec3;

pub use union_find::UnionFind;
pub use verify::{
    verify_edge, verify_edges, EdgeVerdict, HttpVerifier, RelationQuery, RelationVerifier, ScriptedVerifier,
    Verification, VerifierError, VerifyConfig,
};

pub const DEFAULT_SAMPLE_SPACING: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_PLACE_HEIGHT: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("no free space to sample places from")]
    NoFreeSpace,
    #[error("sample spacing must be positive, got {0}")]
    BadSpacing(f64),
}

/// Clearance-annotated topological graph over free space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaceGraph {
    pub positions: Vec<Vec3>,
    pub clearance: Vec<f64>,
    pub edges: Vec<(usize, usize)>,
}

impl PlaceGraph {
    pub fn new(positions: Vec<Vec3>, clearance: Vec<f64>, edges: Vec<(usize, usize)>) -> Self {
        assert_eq!(positions.len(), clearance.len());
        Self { positions, clearance, edges }
    }

    pub fn len(&self) -> usize {
        self.clearance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clearance.is_empty()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for n in &mut adj {
            n.sort_unstable();
            n.dedup();
        }
        adj
    }
}

/// Whether the straight segment between two points passes within `epsilon`
/// of the occupied set (`true` means prune).
///
/// Portions of the segment closer than one voxel to either endpoint are
/// ignored, so endpoints resting against geometry do not obstruct
/// themselves. Rather than stepping along the segment, the minimum distance
/// over the remaining sub-segment is found exactly per candidate voxel (the
/// distance to a box is convex along a line), which is the limit of
/// arbitrarily fine sampling. Endpoints are put in a canonical order first so
/// the result is exactly symmetric.
pub fn prune_edge_geometric(a: &Vec3, b: &Vec3, grid: &OccupancyGrid, epsilon: f64) -> bool {
    let (a, b) = if (a.x, a.y, a.z) <= (b.x, b.y, b.z) { (a, b) } else { (b, a) };
    let vs = grid.voxel_size;
    let len = (b - a).norm();
    if len <= 2.0 * vs || grid.is_empty() {
        return false;
    }
    let dir = (b - a) / len;
    let p0 = a + dir * vs;
    let p1 = a + dir * (len - vs);
    let lo = p0.inf(&p1).add_scalar(-epsilon);
    let hi = p0.sup(&p1).add_scalar(epsilon);
    let (vlo, vhi) = (grid.voxel_of(&lo), grid.voxel_of(&hi));
    let span = len - 2.0 * vs;
    let occupied = grid.occupied();
    for i in vlo[0]..=vhi[0] {
        for j in vlo[1]..=vhi[1] {
            let first = [i, j, vlo[2]];
            let last = [i, j, vhi[2]];
            for v in occupied.range(first..=last) {
                let dist = |t: f64| grid.box_distance(&(p0 + dir * t), *v);
                if min_convex(dist, 0.0, span) < epsilon {
                    return true;
                }
            }
        }
    }
    false
}

/// Golden-section minimum of a convex function on `[lo, hi]`.
fn min_convex(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut best = f(lo).min(f(hi));
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-9 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        best = best.min(f1).min(f2);
    }
    best
}

/// Samples free space on a square lattice at `spacing` (cell centres across
/// the grid's mapped extent, at height `place_height` above the origin) and
/// connects 4-neighbours whose segment is unobstructed. Place ids run
/// x-fastest.
pub fn build_place_graph(
    grid: &OccupancyGrid,
    spacing: f64,
    place_height: f64,
    epsilon: f64,
) -> Result<PlaceGraph, TopologyError> {
    if !(spacing > 0.0) {
        return Err(TopologyError::BadSpacing(spacing));
    }
    let extent = grid.extent();
    let nx = (extent.x / spacing + 1e-9).floor() as usize;
    let ny = (extent.y / spacing + 1e-9).floor() as usize;
    let z = grid.origin.z + place_height;
    let mut lattice = vec![None; nx * ny];
    let mut g = PlaceGraph::default();
    for j in 0..ny {
        for i in 0..nx {
            let p = grid.origin + Vec3::new((i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing, 0.0);
            let p = Vec3::new(p.x, p.y, z);
            let c = grid.clearance(&p);
            if c > 0.0 {
                lattice[i + j * nx] = Some(g.len());
                g.positions.push(p);
                g.clearance.push(c);
            }
        }
    }
    if g.is_empty() {
        return Err(TopologyError::NoFreeSpace);
    }
    for j in 0..ny {
        for i in 0..nx {
            let Some(a) = lattice[i + j * nx] else { continue };
            let right = (i + 1 < nx).then(|| lattice[i + 1 + j * nx]).flatten();
            let up = (j + 1 < ny).then(|| lattice[i + (j + 1) * nx]).flatten();
            for b in [right, up].into_iter().flatten() {
                if !prune_edge_geometric(&g.positions[a], &g.positions[b], grid, epsilon) {
                    g.edges.push((a, b));
                }
            }
        }
    }
    Ok(g)
}

/// Components of the subgraph induced by nodes with clearance `>= delta`.
pub fn betti0_at(g: &PlaceGraph, delta: f64) -> usize {
    let alive: Vec<bool> = g.clearance.iter().map(|&c| c >= delta).collect();
    let mut uf = UnionFind::new(g.len());
    for &(a, b) in &g.edges {
        if alive[a] && alive[b] {
            uf.union(a, b);
        }
    }
    let dead = alive.iter().filter(|a| !**a).count();
    uf.set_count() - dead
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Smallest filtration value inside the run.
    pub lo: f64,
    /// Largest filtration value inside the run.
    pub hi: f64,
    /// Width of the δ-interval over which β0 stays at `k`, i.e. from the
    /// previous change point (or 0) up to `hi`.
    pub length: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltrationResult {
    pub thresholds: Vec<f64>,
    pub betti0: Vec<usize>,
    pub plateau: Option<Plateau>,
    pub k: usize,
    pub delta_star: f64,
}

impl FiltrationResult {
    /// Two-column `delta<TAB>betti0` table for plotting the curve.
    pub fn curve_tsv(&self) -> String {
        let mut out = String::from("delta\tbetti0\n");
        for (d, b) in self.thresholds.iter().zip(&self.betti0) {
            out.push_str(&format!("{d:.6}\t{b}\n"));
        }
        out
    }
}

/// β0 at every distinct clearance value, computed by adding nodes in
/// decreasing clearance order and merging with already-present neighbours.
pub fn betti0_curve(g: &PlaceGraph) -> (Vec<f64>, Vec<usize>) {
    let adj = g.neighbors();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g.clearance[b].total_cmp(&g.clearance[a]).then(a.cmp(&b)));
    let mut uf = UnionFind::new(g.len());
    let mut present = vec![false; g.len()];
    let mut components = 0usize;
    let mut thresholds = Vec::new();
    let mut betti = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let c = g.clearance[order[i]];
        let mut j = i;
        while j < order.len() && g.clearance[order[j]] == c {
            let v = order[j];
            present[v] = true;
            components += 1;
            for &n in &adj[v] {
                if present[n] && uf.union(v, n) {
                    components -= 1;
                }
            }
            j += 1;
        }
        thresholds.push(c);
        betti.push(components);
        i = j;
    }
    thresholds.reverse();
    betti.reverse();
    (thresholds, betti)
}

/// Longest run of constant β0 = k > 1 along the filtration.
///
/// Ties prefer the smaller k, then the earlier run. δ* is the smallest
/// filtration value in the winning run, which keeps the most place nodes
/// while still separating the k components. Without any multi-component run
/// the result falls back to k = 1, δ* = 0.
pub fn find_plateau(g: &PlaceGraph) -> FiltrationResult {
    let (thresholds, betti0) = betti0_curve(g);
    let mut best: Option<Plateau> = None;
    let mut start = 0;
    while start < thresholds.len() {
        let k = betti0[start];
        let mut end = start;
        while end + 1 < thresholds.len() && betti0[end + 1] == k {
            end += 1;
        }
        if k > 1 {
            let prev = if start == 0 { 0.0 } else { thresholds[start - 1] };
            let cand = Plateau { lo: thresholds[start], hi: thresholds[end], length: thresholds[end] - prev, k };
            let better = match best {
                None => true,
                Some(b) => cand.length > b.length || (cand.length == b.length && cand.k < b.k),
            };
            if better {
                best = Some(cand);
            }
        }
        start = end + 1;
    }
    match best {
        Some(p) => FiltrationResult { thresholds, betti0, plateau: Some(p), k: p.k, delta_star: p.lo },
        None => FiltrationResult { thresholds, betti0, plateau: None, k: 1, delta_star: 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomPartition {
    /// Room index per place node.
    pub assignment: Vec<usize>,
    pub room_count: usize,
    /// Places below δ*, assigned to a room after the fact.
    pub doorway_nodes: Vec<usize>,
}

impl RoomPartition {
    /// Unordered room pairs joined by at least one place edge.
    pub fn room_adjacency(&self, g: &PlaceGraph) -> BTreeSet<(usize, usize)> {
        g.edges
            .iter()
            .map(|&(a, b)| (self.assignment[a], self.assignment[b]))
            .filter(|(ra, rb)| ra != rb)
            .map(|(ra, rb)| (ra.min(rb), ra.max(rb)))
            .collect()
    }

    /// Place nodes with a graph neighbour in a different room.
    pub fn boundary_nodes(&self, g: &PlaceGraph) -> Vec<usize> {
        let mut out: Vec<usize> = g
            .edges
            .iter()
            .filter(|&&(a, b)| self.assignment[a] != self.assignment[b])
            .flat_map(|&(a, b)| [a, b])
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn members(&self, room: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == room).collect()
    }
}

fn bfs_hops(adj: &[Vec<usize>], sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut q = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        q.push_back(s);
    }
    while let Some(v) = q.pop_front() {
        for &n in &adj[v] {
            if dist[n] == usize::MAX {
                dist[n] = dist[v] + 1;
                q.push_back(n);
            }
        }
    }
    dist
}

/// Labels places by their component at δ*. Places below δ* join the
/// component with the fewest hops (lower index on ties); places no component
/// can reach join the Euclidean-nearest surviving place. Rooms are finally
/// numbered by their lowest place id.
pub fn partition_rooms(g: &PlaceGraph, f: &FiltrationResult) -> RoomPartition {
    let n = g.len();
    if f.plateau.is_none() || n == 0 {
        return RoomPartition { assignment: vec![0; n], room_count: usize::from(n > 0), doorway_nodes: Vec::new() };
    }
    let alive: Vec<bool> = g.clearance.iter().map(|&c| c >= f.delta_star).collect();
    let mut uf = UnionFind::new(n);
    for &(a, b) in &g.edges {
        if alive[a] && alive[b] {
            uf.union(a, b);
        }
    }
    // provisional labels in order of lowest surviving node
    let mut root_label: Vec<Option<usize>> = vec![None; n];
    let mut label = vec![usize::MAX; n];
    let mut sources: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        if !alive[v] {
            continue;
        }
        let r = uf.find(v);
        let l = *root_label[r].get_or_insert_with(|| {
            sources.push(Vec::new());
            sources.len() - 1
        });
        label[v] = l;
        sources[l].push(v);
    }
    let adj = g.neighbors();
    let hops: Vec<Vec<usize>> = sources.iter().map(|s| bfs_hops(&adj, s)).collect();
    let doorway_nodes: Vec<usize> = (0..n).filter(|&v| !alive[v]).collect();
    for &v in &doorway_nodes {
        let best = (0..sources.len()).filter(|&l| hops[l][v] != usize::MAX).min_by_key(|&l| (hops[l][v], l));
        label[v] = match best {
            Some(l) => l,
            None => {
                let mut nearest = (f64::INFINITY, usize::MAX);
                for u in (0..n).filter(|&u| alive[u]) {
                    let d = (g.positions[u] - g.positions[v]).norm();
                    if d < nearest.0 {
                        nearest = (d, u);
                    }
                }
                label[nearest.1]
            }
        };
    }
    // final numbering by lowest contained place
    let mut remap = vec![usize::MAX; sources.len()];
    let mut next = 0;
    for &l in &label {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
    }
    RoomPartition { assignment: label.iter().map(|&l| remap[l]).collect(), room_count: next, doorway_nodes }
}
