//! Referring-expression grounding: the backend names each object's room and
//! group (instance identification, VI) and states spatial relations to a
//! candidate list (visual disambiguation, VD). Hierarchical prompts draw
//! candidates from the object's group and room, flat prompts from the k
//! nearest objects anywhere.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, BackendRequest, ReasonerBackend, TaskContext};
use crate::chat::ChatMessage;
use crate::dsg::{NodeId, ObjectNode, SceneGraph};
use crate::geometry::{to_local, Pose, Vec3};
use crate::scenegen::NEAR_RADIUS;
use crate::view::TokenEstimator;

pub const DEFAULT_CANDIDATES: usize = 3;
pub const BETWEEN_TOLERANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    Hierarchical,
    Flat,
}

impl fmt::Display for RegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegMode::Hierarchical => "hierarchical",
            RegMode::Flat => "flat",
        })
    }
}

impl FromStr for RegMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hierarchical" | "tiered" => Ok(RegMode::Hierarchical),
            "flat" => Ok(RegMode::Flat),
            _ => Err(format!("unknown REG mode {s:?} (hierarchical, flat)")),
        }
    }
}

pub struct RegTask<'a> {
    pub graph: &'a SceneGraph,
    pub pose: Pose,
    pub mode: RegMode,
    pub candidates: &'a BTreeMap<u32, Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegPrompt {
    pub mode: RegMode,
    pub text: String,
    /// Object id -> candidate ids offered for relations.
    pub candidates: BTreeMap<u32, Vec<u32>>,
}

fn dist(a: &ObjectNode, b: &ObjectNode) -> f64 {
    (a.centroid - b.centroid).norm()
}

fn closest<'g>(o: &ObjectNode, pool: impl Iterator<Item = &'g ObjectNode>) -> Vec<&'g ObjectNode> {
    let mut v: Vec<&ObjectNode> = pool.filter(|c| c.id != o.id).collect();
    v.sort_by(|a, b| dist(o, a).total_cmp(&dist(o, b)).then(a.id.cmp(&b.id)));
    v
}

/// Up to `k` candidate ids for `id`, nearest first within each stage.
pub fn vd_candidates(g: &SceneGraph, id: u32, mode: RegMode, k: usize) -> Vec<u32> {
    let Some(o) = g.object(NodeId::object(id)) else { return Vec::new() };
    let picked: Vec<&ObjectNode> = match mode {
        RegMode::Flat => closest(o, g.objects().iter()),
        RegMode::Hierarchical => {
            let mut v = match o.group {
                Some(gid) => closest(o, g.objects().iter().filter(|c| c.group == Some(gid))),
                None => Vec::new(),
            };
            if o.room.is_some() {
                v.extend(closest(o, g.objects().iter().filter(|c| c.room == o.room && (o.group.is_none() || c.group != o.group))));
            }
            v
        }
    };
    picked.into_iter().take(k).map(|c| c.id.index).collect()
}

fn object_line(o: &ObjectNode) -> String {
    let c = o.centroid;
    format!("#{} {} ({:.2}, {:.2}, {:.2})", o.id.index, o.label, c.x, c.y, c.z)
}

fn ids(v: &[u32]) -> String {
    v.iter().map(|i| format!("#{i}")).collect::<Vec<_>>().join(", ")
}

pub fn build_reg_prompt(g: &SceneGraph, pose: &Pose, mode: RegMode, k: usize) -> RegPrompt {
    let candidates: BTreeMap<u32, Vec<u32>> =
        g.objects().iter().map(|o| (o.id.index, vd_candidates(g, o.id.index, mode, k))).collect();
    let p = pose.position();
    let mut s = format!(
        "{}\n\nTASK: For every object give its room id, its functional group id (null if none) and relations to its listed candidates.\n\
AGENT pos=({:.2}, {:.2}, {:.2}) yaw={:.0}deg\n\n",
        super::SYSTEM_ROLE,
        p.x,
        p.y,
        p.z,
        pose.yaw().to_degrees()
    );
    match mode {
        RegMode::Hierarchical => {
            s.push_str("BUILDING\n");
            for r in g.rooms() {
                s.push_str(&format!("Room {}\n", r.id.index));
                let in_room: Vec<&ObjectNode> = g.objects().iter().filter(|o| o.room == Some(r.id)).collect();
                let mut sections: Vec<(String, Vec<&ObjectNode>)> = g
                    .groups()
                    .iter()
                    .filter(|gr| gr.room == r.id)
                    .map(|gr| (format!("Group {} (anchor {})", gr.id, gr.anchor), in_room.iter().copied().filter(|o| o.group == Some(gr.id)).collect()))
                    .collect();
                let loose: Vec<&ObjectNode> = in_room.iter().copied().filter(|o| o.group.is_none()).collect();
                if !loose.is_empty() {
                    sections.push(("Ungrouped".into(), loose));
                }
                for (title, members) in sections {
                    s.push_str(&format!("  {title}\n"));
                    for o in members {
                        s.push_str(&format!("    {} candidates: {}\n", object_line(o), ids(&candidates[&o.id.index])));
                    }
                }
            }
        }
        RegMode::Flat => {
            s.push_str("OBJECTS\n");
            for o in g.objects() {
                s.push_str(&format!("{} candidates: {}\n", object_line(o), ids(&candidates[&o.id.index])));
            }
        }
    }
    s.push_str(
        "\nRELATIONS\n\
left_of, right_of: compared along the robot's left axis\n\
near: centroids closer than 1.0 m\n\
between: the object lies within 0.3 m of the segment joining two others\n\
\nANSWER FORMAT (JSON only)\n\
{\"objects\": [{\"id\": 0, \"room\": 0, \"group\": 0, \"relations\": [{\"relation\": \"left_of\", \"others\": [1]}]}]}\n",
    );
    RegPrompt { mode, text: s, candidates }
}

/// Candidate pairs whose two objects sit in different rooms.
pub fn cross_room_pairs(g: &SceneGraph, prompt: &RegPrompt) -> usize {
    let room = |i: u32| g.object(NodeId::object(i)).and_then(|o| o.room);
    prompt.candidates.iter().map(|(&a, cs)| cs.iter().filter(|&&c| room(a) != room(c)).count()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Near,
    Between,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationClaim {
    pub relation: Relation,
    pub others: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnswer {
    pub id: u32,
    pub room: Option<u32>,
    #[serde(default)]
    pub group: Option<u32>,
    #[serde(default)]
    pub relations: Vec<RelationClaim>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegAnswer {
    pub objects: Vec<ObjectAnswer>,
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

/// Whether a claimed relation holds in the scene, seen from `pose`.
pub fn check_relation(g: &SceneGraph, pose: &Pose, subject: u32, claim: &RelationClaim) -> bool {
    let get = |i: u32| g.object(NodeId::object(i)).map(|o| o.centroid);
    let (Some(s), Some(others)) = (get(subject), claim.others.iter().map(|&i| get(i)).collect::<Option<Vec<Vec3>>>()) else {
        return false;
    };
    if claim.others.contains(&subject) {
        return false;
    }
    match (claim.relation, others.as_slice()) {
        (Relation::LeftOf, [o]) => to_local(&s, pose).y > to_local(o, pose).y,
        (Relation::RightOf, [o]) => to_local(&s, pose).y < to_local(o, pose).y,
        (Relation::Near, [o]) => (s - o).norm() < NEAR_RADIUS,
        (Relation::Between, [a, b]) => point_segment_distance(&s, a, b) <= BETWEEN_TOLERANCE,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegScore {
    pub objects: usize,
    pub vi_correct: usize,
    pub vd_correct: usize,
    pub parse_error: Option<String>,
}

impl RegScore {
    pub fn vi_accuracy(&self) -> f64 {
        if self.objects == 0 {
            0.0
        } else {
            self.vi_correct as f64 / self.objects as f64
        }
    }

    pub fn vd_accuracy(&self) -> f64 {
        if self.objects == 0 {
            0.0
        } else {
            self.vd_correct as f64 / self.objects as f64
        }
    }
}

/// JSON object embedded in free text: from the first `{` to the last `}`.
fn json_slice(text: &str) -> Option<&str> {
    let a = text.find('{')?;
    let b = text.rfind('}')?;
    (a < b).then(|| &text[a..=b])
}

/// Scores an answer against every object in `g`. An object is VI-correct
/// when room and group match, VD-correct when it states at least one
/// relation and all of them hold. Unparseable answers score zero.
pub fn evaluate_reg(answer: &str, g: &SceneGraph, pose: &Pose) -> RegScore {
    let mut score = RegScore { objects: g.objects().len(), vi_correct: 0, vd_correct: 0, parse_error: None };
    let parsed = json_slice(answer)
        .ok_or_else(|| "no JSON object in answer".to_string())
        .and_then(|j| serde_json::from_str::<RegAnswer>(j).map_err(|e| e.to_string()));
    let ans = match parsed {
        Ok(a) => a,
        Err(e) => {
            score.parse_error = Some(e);
            return score;
        }
    };
    let by_id: BTreeMap<u32, &ObjectAnswer> = ans.objects.iter().map(|a| (a.id, a)).collect();
    for o in g.objects() {
        let Some(a) = by_id.get(&o.id.index) else { continue };
        if a.room == o.room.map(|r| r.index) && a.group == o.group {
            score.vi_correct += 1;
        }
        if !a.relations.is_empty() && a.relations.iter().all(|c| check_relation(g, pose, o.id.index, c)) {
            score.vd_correct += 1;
        }
    }
    score
}

/// Ground-truth answer over the task's candidate lists.
pub fn oracle_reg_answer(task: &RegTask) -> String {
    let g = task.graph;
    let mut objects = Vec::new();
    for o in g.objects() {
        let id = o.id.index;
        let cands = task.candidates.get(&id).cloned().unwrap_or_default();
        let mut relations = Vec::new();
        let candidates_claims = cands.iter().flat_map(|&c| {
            [
                RelationClaim { relation: Relation::LeftOf, others: vec![c] },
                RelationClaim { relation: Relation::RightOf, others: vec![c] },
                RelationClaim { relation: Relation::Near, others: vec![c] },
            ]
        });
        let pair = (cands.len() >= 2).then(|| RelationClaim { relation: Relation::Between, others: cands[..2].to_vec() });
        for claim in candidates_claims.chain(pair) {
            if check_relation(g, &task.pose, id, &claim) {
                relations.push(claim);
            }
        }
        objects.push(ObjectAnswer { id, room: o.room.map(|r| r.index), group: o.group, relations });
    }
    serde_json::to_string(&RegAnswer { objects }).expect("answer serialises")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegRun {
    pub mode: RegMode,
    pub prompt_tokens: usize,
    pub cross_room_pairs: usize,
    pub response: String,
    pub score: RegScore,
}

pub fn run_reg(
    g: &SceneGraph,
    pose: &Pose,
    mode: RegMode,
    k: usize,
    backend: &mut dyn ReasonerBackend,
    estimator: &dyn TokenEstimator,
) -> Result<RegRun, BackendError> {
    let prompt = build_reg_prompt(g, pose, mode, k);
    let task = RegTask { graph: g, pose: *pose, mode, candidates: &prompt.candidates };
    let messages = [ChatMessage::user(prompt.text.clone())];
    let response = backend.complete(&BackendRequest { messages: &messages, task: TaskContext::Reg(&task) })?;
    let score = evaluate_reg(&response, g, pose);
    Ok(RegRun { mode, prompt_tokens: estimator.count(&prompt.text), cross_room_pairs: cross_room_pairs(g, &prompt), response, score })
}
