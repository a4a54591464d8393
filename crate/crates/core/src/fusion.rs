//! Panoramic mask sampling and majority-vote label fusion.
//!
//! # Mask file layout (`OMNIMASK1`)
//!
//! All integers little-endian.
//!
//! | bytes | field |
//! |-------|-------|
//! | 9     | ASCII magic `OMNIMASK1` |
//! | 4     | width `W` (u32) |
//! | 4     | height `H` (u32) |
//! | 8     | timestamp, seconds (f64) |
//! | 4     | label count `N` (u32) |
//! | ...   | `N` entries: u32 byte length + UTF-8 name; entry `i` is label id `i + 1` |
//! | 4·W·H | row-major label ids (u32), row 0 is the top of the panorama; 0 = unlabeled |

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_equirect, to_local, PanoramaSpec, Pose, Vec3};

pub const MASK_MAGIC: &[u8; 9] = b"OMNIMASK1";

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cannot vote on an empty histogram")]
    EmptyHistogram,
    #[error("label grid has {got} cells, expected {expected}")]
    GridSize { got: usize, expected: usize },
    #[error("label id {id} not in a table of {table} labels")]
    UnknownLabel { id: u32, table: usize },
    #[error("bad mask magic")]
    BadMagic,
    #[error("malformed mask file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One segmented panorama: dense label ids plus the id → name table.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFrame {
    pub spec: PanoramaSpec,
    /// Names for ids `1..=labels.len()`.
    pub labels: Vec<String>,
    /// Row-major, `height * width` ids.
    pub grid: Vec<u32>,
    pub timestamp: f64,
}

impl MaskFrame {
    pub fn new(spec: PanoramaSpec, labels: Vec<String>, grid: Vec<u32>, timestamp: f64) -> Result<Self, FusionError> {
        let expected = spec.width as usize * spec.height as usize;
        if grid.len() != expected {
            return Err(FusionError::GridSize { got: grid.len(), expected });
        }
        if let Some(&id) = grid.iter().find(|&&id| id as usize > labels.len()) {
            return Err(FusionError::UnknownLabel { id, table: labels.len() });
        }
        Ok(Self { spec, labels, grid, timestamp })
    }

    pub fn blank(spec: PanoramaSpec, labels: Vec<String>, timestamp: f64) -> Self {
        let n = spec.width as usize * spec.height as usize;
        Self { spec, labels, grid: vec![0; n], timestamp }
    }

    pub fn id_at(&self, col: u32, row: u32) -> u32 {
        self.grid[row as usize * self.spec.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, id: u32) {
        let w = self.spec.width as usize;
        self.grid[row as usize * w + col as usize] = id;
    }

    pub fn label_name(&self, id: u32) -> Option<&str> {
        if id == 0 {
            None
        } else {
            self.labels.get(id as usize - 1).map(String::as_str)
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), FusionError> {
        w.write_all(MASK_MAGIC)?;
        w.write_all(&self.spec.width.to_le_bytes())?;
        w.write_all(&self.spec.height.to_le_bytes())?;
        w.write_all(&self.timestamp.to_le_bytes())?;
        w.write_all(&(self.labels.len() as u32).to_le_bytes())?;
        for name in &self.labels {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        for id in &self.grid {
            w.write_all(&id.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FusionError> {
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)?;
        if &magic != MASK_MAGIC {
            return Err(FusionError::BadMagic);
        }
        let width = read_u32(&mut r)?;
        let height = read_u32(&mut r)?;
        let mut ts = [0u8; 8];
        r.read_exact(&mut ts)?;
        let timestamp = f64::from_le_bytes(ts);
        let spec = PanoramaSpec::new(width, height).map_err(|e| FusionError::Malformed(e.to_string()))?;
        let count = read_u32(&mut r)? as usize;
        let mut labels = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            labels.push(String::from_utf8(buf).map_err(|e| FusionError::Malformed(e.to_string()))?);
        }
        let cells = width as usize * height as usize;
        let mut raw = vec![0u8; cells * 4];
        r.read_exact(&mut raw)?;
        let grid = raw.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(FusionError::Malformed("trailing bytes".into()));
        }
        Self::new(spec, labels, grid, timestamp)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FusionError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Label of the mask pixel a world point projects to, or `None` when the
/// pixel is unlabeled or the point sits at the sensor origin.
pub fn label_point<'a>(p_world: &Vec3, pose: &Pose, frame: &'a MaskFrame) -> Option<&'a str> {
    let local = to_local(p_world, pose);
    let (u, v) = project_equirect(&local, &frame.spec).ok()?;
    let col = (u.floor() as i64).clamp(0, frame.spec.width as i64 - 1) as u32;
    let row = (v.floor() as i64).clamp(0, frame.spec.height as i64 - 1) as u32;
    frame.label_name(frame.id_at(col, row))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub counts: BTreeMap<String, u64>,
    pub frames_observed: u64,
}

impl LabelHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one frame's worth of point labels.
    pub fn accumulate<'a, I>(&mut self, labels: I)
    where
        I: IntoIterator<Item = Option<&'a str>>,
    {
        for label in labels.into_iter().flatten() {
            *self.counts.entry(label.to_owned()).or_default() += 1;
        }
        self.frames_observed += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Functional form of [`LabelHistogram::accumulate`].
pub fn accumulate<'a, I>(mut h: LabelHistogram, labels: I) -> LabelHistogram
where
    I: IntoIterator<Item = Option<&'a str>>,
{
    h.accumulate(labels);
    h
}

/// Majority label; ties go to the lexicographically smallest name.
pub fn vote_label(h: &LabelHistogram) -> Result<&str, FusionError> {
    let mut best: Option<(&str, u64)> = None;
    // BTreeMap iterates in lexicographic order, so strict > keeps the smallest on ties.
    for (label, &count) in &h.counts {
        if count == 0 {
            continue;
        }
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best.map(|(l, _)| l).ok_or(FusionError::EmptyHistogram)
}

/// Pools every (point, frame) observation of an object's member points and
/// returns the fused histogram.
pub fn fuse_object(points: &[Vec3], observations: &[(Pose, &MaskFrame)]) -> LabelHistogram {
    let mut h = LabelHistogram::new();
    for (pose, frame) in observations {
        h.accumulate(points.iter().map(|p| label_point(p, pose, frame)));
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::unproject_equirect;

    fn small_spec() -> PanoramaSpec {
        PanoramaSpec::new(64, 32).unwrap()
    }

    fn hist(pairs: &[(&str, u64)]) -> LabelHistogram {
        LabelHistogram { counts: pairs.iter().map(|(l, c)| (l.to_string(), *c)).collect(), frames_observed: 1 }
    }

    #[test]
    fn label_lookup_and_unlabeled() {
        let spec = small_spec();
        let mut frame = MaskFrame::blank(spec, vec!["chair".into(), "table".into()], 0.0);
        // forward direction hits column 32, row 16
        frame.set(32, 16, 1);
        let pose = Pose::identity();
        assert_eq!(label_point(&Vec3::new(3.0, 0.0, 0.0), &pose, &frame), Some("chair"));
        assert_eq!(label_point(&Vec3::new(0.0, 3.0, 0.0), &pose, &frame), None);
        assert_eq!(label_point(&Vec3::zeros(), &pose, &frame), None);
    }

    #[test]
    fn rear_points_resolve_near_seam() {
        let spec = small_spec();
        let mut frame = MaskFrame::blank(spec, vec!["cabinet".into()], 0.0);
        for row in 0..spec.height {
            frame.set(0, row, 1);
            frame.set(spec.width - 1, row, 1);
        }
        let pose = Pose::from_xyz_yaw(1.0, 1.0, 0.0, 0.0);
        // slightly left of straight behind -> θ just below +π -> right edge
        assert_eq!(label_point(&Vec3::new(-4.0, 1.01, 0.2), &pose, &frame), Some("cabinet"));
        // slightly right of straight behind -> θ just above −π -> left edge
        assert_eq!(label_point(&Vec3::new(-4.0, 0.99, 0.2), &pose, &frame), Some("cabinet"));
        // exactly behind: atan2(0, -x) = π -> u = W, clamped into the last column
        assert_eq!(label_point(&Vec3::new(-4.0, 1.0, 0.0), &pose, &frame), Some("cabinet"));
    }

    #[test]
    fn label_point_agrees_with_pixel_centre_rays() {
        let spec = small_spec();
        let mut frame = MaskFrame::blank(spec, vec!["a".into(), "b".into(), "c".into()], 0.0);
        for row in 0..spec.height {
            for col in 0..spec.width {
                frame.set(col, row, (row * 7 + col * 3) % 4);
            }
        }
        let pose = Pose::from_xyz_yaw(0.5, -0.3, 1.0, 0.4);
        for row in 0..spec.height {
            for col in 0..spec.width {
                let dir = unproject_equirect(col as f64 + 0.5, row as f64 + 0.5, &spec).unwrap();
                let world = pose.apply(&(dir * 2.5));
                let expected = frame.label_name(frame.id_at(col, row));
                assert_eq!(label_point(&world, &pose, &frame), expected, "pixel {col},{row}");
            }
        }
    }

    #[test]
    fn vote_cases() {
        assert_eq!(vote_label(&hist(&[("chair", 3), ("table", 1)])).unwrap(), "chair");
        assert_eq!(vote_label(&hist(&[("table", 2), ("chair", 2)])).unwrap(), "chair");
        assert!(matches!(vote_label(&LabelHistogram::new()), Err(FusionError::EmptyHistogram)));
        assert!(matches!(vote_label(&hist(&[("x", 0)])), Err(FusionError::EmptyHistogram)));
    }

    #[test]
    fn accumulate_counts_labeled_only() {
        let h = accumulate(LabelHistogram::new(), [Some("chair"), Some("chair"), None]);
        assert_eq!(h.counts.get("chair"), Some(&2));
        assert_eq!(h.counts.len(), 1);
        assert_eq!(h.frames_observed, 1);
    }

    #[test]
    fn accumulation_order_does_not_matter() {
        let frames: Vec<Vec<Option<&str>>> =
            vec![vec![Some("a"), None, Some("b")], vec![Some("b"), Some("b")], vec![None, Some("c"), Some("a")]];
        let forward = frames.iter().fold(LabelHistogram::new(), |h, f| accumulate(h, f.iter().copied()));
        let backward = frames.iter().rev().fold(LabelHistogram::new(), |h, f| accumulate(h, f.iter().copied()));
        assert_eq!(forward, backward);
    }

    // Five scripted frames of one object; frame 3 sees the wrong class.
    #[test]
    fn majority_survives_a_mislabelled_frame() {
        let spec = small_spec();
        let labels = vec!["chair".to_string(), "table".to_string()];
        let points: Vec<Vec3> =
            (0..6).map(|i| Vec3::new(2.0 + 0.05 * i as f64, 0.1 * (i as f64 - 2.5), 0.1)).collect();
        let mut frames = Vec::new();
        for t in 0..5u32 {
            let id = if t == 2 { 2 } else { 1 };
            let grid = vec![id; (spec.width * spec.height) as usize];
            frames.push(MaskFrame::new(spec, labels.clone(), grid, t as f64 * 0.1).unwrap());
        }
        let obs: Vec<(Pose, &MaskFrame)> = frames.iter().map(|f| (Pose::identity(), f)).collect();
        let h = fuse_object(&points, &obs);
        assert_eq!(h.counts["chair"], 24);
        assert_eq!(h.counts["table"], 6);
        assert_eq!(h.frames_observed, 5);
        assert_eq!(vote_label(&h).unwrap(), "chair");
    }

    // Hand-counted replay: label of frame t, point i is table when (t + i) % 3 == 0,
    // unlabeled when (t * i) % 5 == 4, chair otherwise.
    #[test]
    fn ten_frame_replay_matches_recount() {
        let mut h = LabelHistogram::new();
        let (mut chair, mut table) = (0u64, 0u64);
        for t in 0..10u64 {
            let mut frame = Vec::new();
            for i in 0..4u64 {
                if (t * i) % 5 == 4 {
                    frame.push(None);
                } else if (t + i) % 3 == 0 {
                    table += 1;
                    frame.push(Some("table"));
                } else {
                    chair += 1;
                    frame.push(Some("chair"));
                }
            }
            h.accumulate(frame);
        }
        assert_eq!(h.counts["chair"], chair);
        assert_eq!(h.counts["table"], table);
        assert_eq!(h.frames_observed, 10);
        assert_eq!(h.total(), chair + table);
    }

    #[test]
    fn mask_file_roundtrip_and_rejections() {
        let spec = PanoramaSpec::new(4, 2).unwrap();
        let frame = MaskFrame::new(spec, vec!["chair".into(), "écran".into()], vec![0, 1, 2, 0, 1, 1, 0, 2], 1.5).unwrap();
        let mut buf = Vec::new();
        frame.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..9], b"OMNIMASK1");
        assert_eq!(MaskFrame::read_from(buf.as_slice()).unwrap(), frame);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(MaskFrame::read_from(bad.as_slice()), Err(FusionError::BadMagic)));
        assert!(MaskFrame::read_from(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(MaskFrame::read_from(extra.as_slice()).is_err());
        assert!(matches!(
            MaskFrame::new(spec, vec!["a".into()], vec![0, 0, 0, 0, 0, 0, 0, 2], 0.0),
            Err(FusionError::UnknownLabel { id: 2, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vote_has_maximal_count(counts in proptest::collection::btree_map("[a-e]{1,3}", 1u64..20, 1..8)) {
                let h = LabelHistogram { counts: counts.clone(), frames_observed: 1 };
                let winner = vote_label(&h).unwrap();
                let max = counts.values().max().unwrap();
                prop_assert_eq!(counts[winner], *max);
            }

            #[test]
            fn replay_is_deterministic(seq in proptest::collection::vec(proptest::collection::vec(proptest::option::of("[xyz]"), 0..6), 0..10)) {
                let run = || seq.iter().fold(LabelHistogram::new(), |h, f| accumulate(h, f.iter().map(|o| o.as_deref())));
                let a = serde_json::to_string(&run()).unwrap();
                let b = serde_json::to_string(&run()).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
