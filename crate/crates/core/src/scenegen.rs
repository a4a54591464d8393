//! Seeded synthetic scenes in a four-room arena.
//!
//! Layout: a 10 x 10 m square split into 5 x 5 m rooms, Room 0 at
//! [0,5]x[0,5], Room 1 at [5,10]x[0,5], Room 2 at [0,5]x[5,10] and Room 3 at
//! [5,10]x[5,10]. Internal walls are 0.2 m thick and centred on x = 5 and
//! y = 5, each shared wall having a 1 m doorway at its midpoint. The agent
//! starts at (2.5, 2.5, 0) facing +x.
//!
//! Generation uses ChaCha8 seeded with `seed` mixed with the tier, and draws
//! the tier's high-density object list; lower densities take a prefix of that
//! list, so datasets in one tier are nested. Per object the stream yields, in
//! order: category, position, z, caption length, caption fragments.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsg::{NodeId, ObjectNode, OccupancyGrid};
use crate::geometry::{Pose, Vec3};

pub const SCENE_SCHEMA: &str = "omnivln-scene";
pub const SCENE_VERSION: u32 = 1;
pub const CATEGORIES: [&str; 4] = ["chair", "table", "cabinet", "screen"];
pub const WALL_MARGIN: f64 = 0.3;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("unknown dataset {0:?} (expected D1..D9)")]
    UnknownDataset(String),
    #[error("scene document: {0}")]
    Format(String),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpatialTier {
    Foveal,
    Peripheral,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Density {
    Low,
    Mid,
    High,
}

/// One of the nine benchmark datasets, D1..D9, tier-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DatasetId {
    pub tier: SpatialTier,
    pub density: Density,
}

impl DatasetId {
    pub fn all() -> [DatasetId; 9] {
        let mut out = [DatasetId { tier: SpatialTier::Foveal, density: Density::Low }; 9];
        for (i, d) in out.iter_mut().enumerate() {
            *d = DatasetId::from_index(i + 1).expect("1..=9");
        }
        out
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if !(1..=9).contains(&i) {
            return None;
        }
        let tier = [SpatialTier::Foveal, SpatialTier::Peripheral, SpatialTier::Global][(i - 1) / 3];
        let density = [Density::Low, Density::Mid, Density::High][(i - 1) % 3];
        Some(Self { tier, density })
    }

    pub fn index(&self) -> usize {
        let t = self.tier as usize;
        let d = self.density as usize;
        3 * t + d + 1
    }

    pub fn object_count(&self) -> usize {
        match (self.tier, self.density) {
            (SpatialTier::Global, Density::Low) => 15,
            (SpatialTier::Global, Density::Mid) => 30,
            (SpatialTier::Global, Density::High) => 50,
            (_, Density::Low) => 5,
            (_, Density::Mid) => 10,
            (_, Density::High) => 15,
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.index())
    }
}

impl FromStr for DatasetId {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        t.strip_prefix('D')
            .or_else(|| t.strip_prefix('d'))
            .and_then(|n| n.parse().ok())
            .and_then(DatasetId::from_index)
            .ok_or_else(|| SceneError::UnknownDataset(s.into()))
    }
}

impl Serialize for DatasetId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatasetId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn shrink(&self, m: f64) -> Rect {
        Rect { min: [self.min[0] + m, self.min[1] + m], max: [self.max[0] - m, self.max[1] - m] }
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }
}

/// A gap in the wall between two rooms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doorway {
    pub rooms: [u32; 2],
    /// Midpoint of the gap, on the wall centreline, at floor height.
    pub center: [f64; 2],
    /// Axis the wall runs along: 0 for a wall of constant y, 1 for constant x.
    pub along: usize,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub room_size: f64,
    pub wall_thickness: f64,
    pub wall_height: f64,
    pub doorway_width: f64,
    pub voxel_size: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Self { room_size: 5.0, wall_thickness: 0.2, wall_height: 2.5, doorway_width: 1.0, voxel_size: 0.1 }
    }
}

impl Arena {
    pub fn size(&self) -> f64 {
        2.0 * self.room_size
    }

    /// Room rectangle up to the wall centrelines.
    pub fn room_rect(&self, room: u32) -> Rect {
        let s = self.room_size;
        let (cx, cy) = ((room % 2) as f64, (room / 2) as f64);
        Rect { min: [cx * s, cy * s], max: [(cx + 1.0) * s, (cy + 1.0) * s] }
    }

    /// Ground-truth room by quadrant (shared boundaries go to the lower room).
    pub fn room_of(&self, x: f64, y: f64) -> u32 {
        u32::from(x > self.room_size) + 2 * u32::from(y > self.room_size)
    }

    pub fn doorways(&self) -> [Doorway; 4] {
        let s = self.room_size;
        let (h, w) = (s / 2.0, self.doorway_width);
        [
            Doorway { rooms: [0, 1], center: [s, h], along: 1, width: w },
            Doorway { rooms: [0, 2], center: [h, s], along: 0, width: w },
            Doorway { rooms: [1, 3], center: [s + h, s], along: 0, width: w },
            Doorway { rooms: [2, 3], center: [s, s + h], along: 1, width: w },
        ]
    }

    pub fn adjacency(&self) -> BTreeSet<(u32, u32)> {
        self.doorways().iter().map(|d| (d.rooms[0], d.rooms[1])).collect()
    }

    /// Whether a point on a wall centreline falls inside a doorway gap.
    fn in_doorway(&self, along: usize, wall: f64, t: f64) -> bool {
        self.doorways().iter().any(|d| {
            let wall_coord = if along == 1 { d.center[0] } else { d.center[1] };
            let c = d.center[along];
            d.along == along && (wall_coord - wall).abs() < 1e-9 && (t - c).abs() < d.width / 2.0
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    pub position: Vec3,
    pub half_extents: Vec3,
    pub caption: String,
    /// Ground-truth room, for oracles only.
    pub room: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub schema: String,
    pub version: u32,
    pub dataset: Option<DatasetId>,
    pub seed: u64,
    pub arena: Arena,
    pub agent_start: [f64; 4],
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn start_pose(&self) -> Pose {
        let [x, y, z, yaw] = self.agent_start;
        Pose::from_xyz_yaw(x, y, z, yaw)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| SceneError::Format(e.to_string()))?;
        match (raw.get("schema").and_then(|v| v.as_str()), raw.get("version").and_then(|v| v.as_u64())) {
            (Some(SCENE_SCHEMA), Some(v)) if v == SCENE_VERSION as u64 => {}
            (s, v) => return Err(SceneError::Format(format!("expected {SCENE_SCHEMA} v{SCENE_VERSION}, found {s:?} v{v:?}"))),
        }
        let spec: SceneSpec = serde_json::from_value(raw).map_err(|e| SceneError::Format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, o) in self.objects.iter().enumerate() {
            if o.id as usize != i {
                return Err(SceneError::Invalid(format!("object #{i} has id {}", o.id)));
            }
            if o.room > 3 {
                return Err(SceneError::Invalid(format!("object {} in room {}", o.id, o.room)));
            }
            let rect = self.arena.room_rect(o.room).shrink(WALL_MARGIN - 1e-9);
            if !rect.contains(o.position.x, o.position.y) {
                return Err(SceneError::Invalid(format!("object {} outside room {} interior", o.id, o.room)));
            }
            let words = o.caption.split_whitespace().count();
            if !(20..=40).contains(&words) {
                return Err(SceneError::Invalid(format!("object {} caption has {words} words", o.id)));
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> Vec<&str> {
        self.objects.iter().map(|o| o.category.as_str()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Ground-truth spatial relations used by the scripted verifier:
    /// `above`/`below` for pairs within 0.75 m horizontally, `near` for pairs
    /// closer than 1 m.
    pub fn relations(&self) -> Vec<(NodeId, NodeId, String)> {
        let mut out = Vec::new();
        for a in &self.objects {
            for b in &self.objects {
                if a.id == b.id {
                    continue;
                }
                let (pa, pb) = (a.position, b.position);
                if (pa.xy() - pb.xy()).norm() < ABOVE_COLUMN_RADIUS && pa.z > pb.z {
                    out.push((NodeId::object(a.id), NodeId::object(b.id), "above".into()));
                    out.push((NodeId::object(b.id), NodeId::object(a.id), "below".into()));
                }
                if a.id < b.id && (pa - pb).norm() < NEAR_RADIUS {
                    out.push((NodeId::object(a.id), NodeId::object(b.id), "near".into()));
                }
            }
        }
        out.sort();
        out
    }
}

pub const ABOVE_COLUMN_RADIUS: f64 = 0.75;
pub const NEAR_RADIUS: f64 = 1.0;

pub fn half_extents(category: &str) -> Vec3 {
    match category {
        "chair" => Vec3::new(0.25, 0.25, 0.45),
        "table" => Vec3::new(0.6, 0.4, 0.375),
        "cabinet" => Vec3::new(0.4, 0.3, 0.9),
        "screen" => Vec3::new(0.3, 0.05, 0.2),
        _ => Vec3::repeat(0.25),
    }
}

const COLORS: [&str; 10] = ["grey", "black", "white", "oak", "walnut", "blue", "green", "red", "beige", "silver"];
const MATERIALS: [&str; 6] = ["wooden", "metal", "plastic", "fabric", "glass-topped", "laminate"];
const CLAUSES: [&str; 16] = [
    "with a slightly scuffed finish along its lower edge",
    "showing light wear from daily use in the office",
    "placed a little away from the nearest wall",
    "with a small sticker near one corner",
    "partly catching the light from the ceiling panels",
    "next to a coiled power cable on the floor",
    "with rounded corners and a matte surface",
    "that looks recently cleaned and well kept",
    "with a faint coffee ring on the top surface",
    "angled slightly toward the middle of the room",
    "bearing an asset tag with a printed barcode",
    "with visible screws on the side panel",
    "sitting on a thin grey rug",
    "whose shadow falls across the floor tiles",
    "with a handwritten note taped to it",
    "in a style matching the rest of the furniture",
];

fn caption(rng: &mut ChaCha8Rng, category: &str) -> String {
    let target = rng.random_range(20..=40usize);
    let color = COLORS.choose(rng).expect("nonempty");
    let material = MATERIALS.choose(rng).expect("nonempty");
    let mut words: Vec<&str> = vec!["A", color, material, category];
    while words.len() < target {
        words.extend(CLAUSES.choose(rng).expect("nonempty").split(' '));
    }
    words.truncate(target);
    let mut s = words.join(" ");
    s.push('.');
    s
}

fn mm(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn tier_salt(t: SpatialTier) -> u64 {
    match t {
        SpatialTier::Foveal => 0x9e37_79b9_7f4a_7c15,
        SpatialTier::Peripheral => 0xbf58_476d_1ce4_e5b9,
        SpatialTier::Global => 0x94d0_49bb_1331_11eb,
    }
}

pub const AGENT_START: [f64; 4] = [2.5, 2.5, 0.0, 0.0];
const FOVEAL_MAX_R: f64 = 2.9;
const FOVEAL_MIN_R: f64 = 0.5;
const PERIPHERAL_MIN_R: f64 = 3.02;

/// Deterministic scene for dataset `d`.
pub fn generate(d: DatasetId, seed: u64) -> SceneSpec {
    let arena = Arena::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tier_salt(d.tier));
    let high = DatasetId { tier: d.tier, density: Density::High }.object_count();
    let [ax, ay, _, _] = AGENT_START;
    let half = arena.room_size / 2.0 - WALL_MARGIN;
    let mut objects = Vec::with_capacity(high);
    for i in 0..high {
        let category = *CATEGORIES.choose(&mut rng).expect("nonempty");
        let (x, y, z, room) = match d.tier {
            SpatialTier::Foveal => {
                // octant i mod 8: bit 2 back, bit 1 right, bit 0 bottom
                let sx = if i & 4 == 0 { 1.0 } else { -1.0 };
                let sy = if i & 2 == 0 { 1.0 } else { -1.0 };
                let (dx, dy) = loop {
                    let dx = rng.random_range(0.05..half);
                    let dy = rng.random_range(0.05..half);
                    let r = dx.hypot(dy);
                    if (FOVEAL_MIN_R..=FOVEAL_MAX_R).contains(&r) {
                        break (dx, dy);
                    }
                };
                let z = if i & 1 == 0 { rng.random_range(1.0..2.0) } else { rng.random_range(0.2..0.95) };
                (ax + sx * dx, ay + sy * dy, z, 0)
            }
            SpatialTier::Peripheral => {
                // only the corners of Room 0 lie beyond the focal radius
                let sx = if i & 1 == 0 { 1.0 } else { -1.0 };
                let sy = if i & 2 == 0 { 1.0 } else { -1.0 };
                let lo = (PERIPHERAL_MIN_R * PERIPHERAL_MIN_R - half * half).sqrt();
                let (dx, dy) = loop {
                    let dx = rng.random_range(lo..half);
                    let dy = rng.random_range(lo..half);
                    if dx.hypot(dy) > PERIPHERAL_MIN_R {
                        break (dx, dy);
                    }
                };
                (ax + sx * dx, ay + sy * dy, rng.random_range(0.2..2.0), 0)
            }
            SpatialTier::Global => {
                let room = rng.random_range(1..=3u32);
                let r = arena.room_rect(room).shrink(WALL_MARGIN);
                let x = rng.random_range(r.min[0]..r.max[0]);
                let y = rng.random_range(r.min[1]..r.max[1]);
                (x, y, rng.random_range(0.2..2.0), room)
            }
        };
        let caption = caption(&mut rng, category);
        objects.push(SceneObject {
            id: i as u32,
            category: category.to_string(),
            position: Vec3::new(mm(x), mm(y), mm(z)),
            half_extents: half_extents(category),
            caption,
            room,
        });
    }
    objects.truncate(d.object_count());
    SceneSpec {
        schema: SCENE_SCHEMA.into(),
        version: SCENE_VERSION,
        dataset: Some(d),
        seed,
        arena,
        agent_start: AGENT_START,
        objects,
    }
}

/// Object-rich fixture for referring-expression experiments: 44 objects in
/// tight functional clusters across Rooms 0-2, several of them pressed
/// against shared walls so that neighbours across a wall are closer than
/// neighbours within the room.
pub fn reg_fixture(seed: u64) -> SceneSpec {
    let arena = Arena::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_4e6);
    // (room, anchor x, anchor y): clusters hugging the shared walls plus a few interior ones
    let clusters: [(u32, f64, f64); 11] = [
        (0, 4.45, 1.1),
        (1, 5.55, 1.1),
        (0, 1.2, 4.45),
        (2, 1.2, 5.55),
        (0, 4.45, 4.0),
        (1, 5.55, 4.0),
        (2, 4.45, 8.8),
        (0, 1.3, 1.3),
        (1, 8.6, 2.2),
        (2, 2.0, 7.6),
        (2, 4.45, 6.3),
    ];
    let members_per_cluster = 4;
    let mut objects = Vec::new();
    for &(room, cx, cy) in &clusters {
        let rect = arena.room_rect(room).shrink(WALL_MARGIN);
        for m in 0..members_per_cluster {
            let category = if m == 0 {
                if rng.random_bool(0.5) { "table" } else { "cabinet" }
            } else {
                *["chair", "chair", "screen"].choose(&mut rng).expect("nonempty")
            };
            let (x, y) = if m == 0 {
                (cx, cy)
            } else {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let r = rng.random_range(0.35..0.6);
                (
                    (cx + r * a.cos()).clamp(rect.min[0], rect.max[0]),
                    (cy + r * a.sin()).clamp(rect.min[1], rect.max[1]),
                )
            };
            let z = match category {
                "table" => 0.375,
                "cabinet" => 0.9,
                "screen" => rng.random_range(0.9..1.3),
                _ => 0.45,
            };
            objects.push(SceneObject {
                id: objects.len() as u32,
                category: category.into(),
                position: Vec3::new(mm(x), mm(y), mm(z)),
                half_extents: half_extents(category),
                caption: caption(&mut rng, category),
                room,
            });
        }
    }
    SceneSpec {
        schema: SCENE_SCHEMA.into(),
        version: SCENE_VERSION,
        dataset: None,
        seed,
        arena,
        agent_start: AGENT_START,
        objects,
    }
}

/// Rasterises the arena walls. The mapped interior is the 10 x 10 x 2.5 m
/// box from the origin; perimeter walls sit one voxel outside it.
pub fn to_occupancy(spec: &SceneSpec) -> OccupancyGrid {
    let a = &spec.arena;
    let vs = a.voxel_size;
    let n = (a.size() / vs).round() as i32;
    let nz = (a.wall_height / vs).round() as i32;
    let mut grid = OccupancyGrid::new(Vec3::zeros(), vs, [n as u32, n as u32, nz as u32]).expect("positive voxel size");
    let half_t = a.wall_thickness / 2.0;
    let mid = a.room_size;
    for k in 0..nz {
        for i in -1..=n {
            grid.insert([i, -1, k]);
            grid.insert([i, n, k]);
            grid.insert([-1, i, k]);
            grid.insert([n, i, k]);
        }
        for i in 0..n {
            let t = (i as f64 + 0.5) * vs;
            for j in 0..n {
                let c = (j as f64 + 0.5) * vs;
                // vertical wall x = mid (runs along y), horizontal wall y = mid (runs along x)
                if (c - mid).abs() < half_t && !a.in_doorway(1, mid, t) {
                    grid.insert([j, i, k]);
                }
                if (c - mid).abs() < half_t && !a.in_doorway(0, mid, t) {
                    grid.insert([i, j, k]);
                }
            }
        }
    }
    grid
}

/// Object nodes in id order, without room links.
pub fn to_objects(spec: &SceneSpec) -> Vec<ObjectNode> {
    spec.objects
        .iter()
        .map(|o| {
            let mut n = ObjectNode::new(o.category.clone(), o.caption.clone(), o.position, o.half_extents);
            n.id = NodeId::object(o.id);
            n
        })
        .collect()
}
