use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::GraphError;
use crate::geometry::Vec3;

pub type Voxel = [i32; 3];

/// Occupancy voxels standing in for the mesh layer.
///
/// `dims` bounds the region treated as the mapped interior (used for place
/// sampling); occupied voxels may lie outside it, e.g. perimeter walls.
#[derive(Debug, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [u32; 3],
    occupied: BTreeSet<Voxel>,
    #[serde(skip)]
    index: OnceLock<ColumnIndex>,
}

impl Clone for OccupancyGrid {
    fn clone(&self) -> Self {
        Self {
            origin: self.origin,
            voxel_size: self.voxel_size,
            dims: self.dims,
            occupied: self.occupied.clone(),
            index: OnceLock::new(),
        }
    }
}

impl PartialEq for OccupancyGrid {
    fn eq(&self, other: &Self) -> bool {
        self.origin == other.origin
            && self.voxel_size == other.voxel_size
            && self.dims == other.dims
            && self.occupied == other.occupied
    }
}

/// Occupied voxels grouped by XY column, each column a sorted list of z indices.
#[derive(Debug)]
struct ColumnIndex {
    min: [i32; 2],
    nx: usize,
    ny: usize,
    columns: Vec<Vec<i32>>,
}

impl ColumnIndex {
    fn build(occupied: &BTreeSet<Voxel>) -> Option<Self> {
        let first = occupied.iter().next()?;
        let (mut lo, mut hi) = ([first[0], first[1]], [first[0], first[1]]);
        for v in occupied {
            lo = [lo[0].min(v[0]), lo[1].min(v[1])];
            hi = [hi[0].max(v[0]), hi[1].max(v[1])];
        }
        let nx = (hi[0] - lo[0] + 1) as usize;
        let ny = (hi[1] - lo[1] + 1) as usize;
        let mut columns = vec![Vec::new(); nx * ny];
        // BTreeSet order is (x, y, z) so each column receives z ascending.
        for v in occupied {
            columns[(v[0] - lo[0]) as usize + (v[1] - lo[1]) as usize * nx].push(v[2]);
        }
        Some(Self { min: lo, nx, ny, columns })
    }

    fn column(&self, i: i32, j: i32) -> Option<&[i32]> {
        let (di, dj) = (i - self.min[0], j - self.min[1]);
        if di < 0 || dj < 0 || di as usize >= self.nx || dj as usize >= self.ny {
            return None;
        }
        Some(&self.columns[di as usize + dj as usize * self.nx])
    }
}

fn axis_gap(p: f64, lo: f64, hi: f64) -> f64 {
    if p < lo {
        lo - p
    } else if p > hi {
        p - hi
    } else {
        0.0
    }
}

impl OccupancyGrid {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [u32; 3]) -> Result<Self, GraphError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(GraphError::Invalid(format!("voxel size must be positive, got {voxel_size}")));
        }
        Ok(Self { origin, voxel_size, dims, occupied: BTreeSet::new(), index: OnceLock::new() })
    }

    pub fn occupied(&self) -> &BTreeSet<Voxel> {
        &self.occupied
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn insert(&mut self, v: Voxel) {
        if self.occupied.insert(v) {
            self.index = OnceLock::new();
        }
    }

    pub fn remove(&mut self, v: &Voxel) {
        if self.occupied.remove(v) {
            self.index = OnceLock::new();
        }
    }

    pub fn voxel_of(&self, p: &Vec3) -> Voxel {
        let r = (p - self.origin) / self.voxel_size;
        [r.x.floor() as i32, r.y.floor() as i32, r.z.floor() as i32]
    }

    pub fn voxel_center(&self, v: Voxel) -> Vec3 {
        self.origin + Vec3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5) * self.voxel_size
    }

    pub fn is_occupied(&self, p: &Vec3) -> bool {
        self.occupied.contains(&self.voxel_of(p))
    }

    /// Extent of the mapped interior in world coordinates.
    pub fn extent(&self) -> Vec3 {
        Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_size
    }

    /// Euclidean distance from `p` to the closest voxel cube, treating each
    /// occupied voxel as a solid box.
    pub fn box_distance(&self, p: &Vec3, v: Voxel) -> f64 {
        let s = self.voxel_size;
        let lo = self.origin + Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64) * s;
        let dx = axis_gap(p.x, lo.x, lo.x + s);
        let dy = axis_gap(p.y, lo.y, lo.y + s);
        let dz = axis_gap(p.z, lo.z, lo.z + s);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn index(&self) -> Option<&ColumnIndex> {
        if self.occupied.is_empty() {
            return None;
        }
        Some(self.index.get_or_init(|| ColumnIndex::build(&self.occupied).expect("nonempty")))
    }

    /// Distance to the nearest occupied voxel, searching no further than
    /// `max_distance`; returns `f64::INFINITY` when nothing is that close.
    ///
    /// Walks Chebyshev rings of XY columns outward from the query column. A
    /// column on ring `r + 1` is at least `r * voxel_size` away horizontally,
    /// which bounds the search.
    pub fn distance_to_occupied(&self, p: &Vec3, max_distance: f64) -> f64 {
        let Some(index) = self.index() else {
            return f64::INFINITY;
        };
        let s = self.voxel_size;
        let c = self.voxel_of(p);
        let zf = (p.z - self.origin.z) / s;
        let mut best = f64::INFINITY;

        // Farthest ring that can still hold an occupied column.
        let span = [
            (c[0] - index.min[0]).abs().max((index.min[0] + index.nx as i32 - 1 - c[0]).abs()),
            (c[1] - index.min[1]).abs().max((index.min[1] + index.ny as i32 - 1 - c[1]).abs()),
        ];
        let r_max = span[0].max(span[1]);

        let visit = |i: i32, j: i32, best: &mut f64| {
            let Some(col) = index.column(i, j) else { return };
            if col.is_empty() {
                return;
            }
            let x0 = self.origin.x + i as f64 * s;
            let y0 = self.origin.y + j as f64 * s;
            let dx = axis_gap(p.x, x0, x0 + s);
            let dy = axis_gap(p.y, y0, y0 + s);
            let hxy = dx * dx + dy * dy;
            if hxy >= *best * *best {
                return;
            }
            // nearest z index in the sorted column
            let kz = zf.floor() as i32;
            let pos = col.partition_point(|&k| k < kz);
            for cand in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
                if let Some(&k) = col.get(cand) {
                    let z0 = self.origin.z + k as f64 * s;
                    let dz = axis_gap(p.z, z0, z0 + s);
                    let d = (hxy + dz * dz).sqrt();
                    if d < *best {
                        *best = d;
                    }
                }
            }
        };

        for r in 0..=r_max {
            let floor = (r - 1) as f64 * s;
            if r > 0 && (floor >= best || floor > max_distance) {
                break;
            }
            if r == 0 {
                visit(c[0], c[1], &mut best);
                continue;
            }
            for d in -r..=r {
                visit(c[0] + d, c[1] - r, &mut best);
                visit(c[0] + d, c[1] + r, &mut best);
            }
            for d in (-r + 1)..r {
                visit(c[0] - r, c[1] + d, &mut best);
                visit(c[0] + r, c[1] + d, &mut best);
            }
        }
        if best <= max_distance {
            best
        } else {
            f64::INFINITY
        }
    }

    /// Unbounded nearest-obstacle distance, the clearance `R(v)` of a place.
    pub fn clearance(&self, p: &Vec3) -> f64 {
        self.distance_to_occupied(p, f64::INFINITY)
    }

    /// ASCII PLY point list of occupied voxel centres.
    pub fn to_ply(&self) -> String {
        let mut out = String::new();
        out.push_str("ply\nformat ascii 1.0\ncomment omnivln occupancy voxel centres\n");
        out.push_str(&format!("element vertex {}\n", self.occupied.len()));
        out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
        for v in &self.occupied {
            let c = self.voxel_center(*v);
            out.push_str(&format!("{:.4} {:.4} {:.4}\n", c.x, c.y, c.z));
        }
        out
    }
}
