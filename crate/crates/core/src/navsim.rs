//! Episode simulator: executes accepted primitives on the arena and scores
//! navigation against a brute-force ground truth.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dsg::{EdgeKind, Layer, NodeId, SceneGraph};
use crate::geometry::{Pose, Vec3};
use crate::pipeline::{build_world, BuildConfig, PipelineError};
use crate::reasoning::{
    backend_registry, default_toolbox, step, ActionPrimitive, DecisionContext, HCoTTrace, Instruction, ReasonerBackend,
    StepOutcome, ToolBox, TranscriptEntry, DEFAULT_REPLAN_BUDGET,
};
use crate::registry::RegistryError;
use crate::scenegen::{generate, DatasetId, SceneSpec};
use crate::topology::{prune_edge_geometric, ScriptedVerifier, DEFAULT_EPSILON};
use crate::view::{estimator_registry, serialize_flat, serialize_tiered_in, ForeAft, LeftRight, SerializedView, ViewConfig};

pub const DEFAULT_MAX_STEPS: usize = 10;
pub const DEFAULT_SUCCESS_RADIUS: f64 = 1.0;
/// XY distance `go_near` leaves between the agent and the object centroid.
pub const APPROACH_STANDOFF: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SerializerMode {
    Tiered,
    Flat,
}

impl fmt::Display for SerializerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SerializerMode::Tiered => "tiered",
            SerializerMode::Flat => "flat",
        })
    }
}

impl FromStr for SerializerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tiered" => Ok(SerializerMode::Tiered),
            "flat" => Ok(SerializerMode::Flat),
            _ => Err(format!("unknown serializer mode {s:?} (tiered, flat)")),
        }
    }
}

/// A scene together with its partitioned graph.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: SceneSpec,
    pub graph: SceneGraph,
    /// Clearance threshold separating room interiors from doorways.
    pub delta_star: f64,
    pub epsilon: f64,
}

impl World {
    /// Builds with the scripted verifier over the scene's own relations.
    pub fn build(spec: SceneSpec, cfg: &BuildConfig) -> Result<Self, PipelineError> {
        let verifier = ScriptedVerifier::new(spec.relations());
        let (graph, report) = build_world(&spec, cfg, &verifier)?;
        Ok(Self { spec, graph, delta_star: report.filtration.delta_star, epsilon: cfg.epsilon })
    }

    /// Wraps an already partitioned graph, reading thresholds from its
    /// metadata.
    pub fn from_graph(spec: SceneSpec, graph: SceneGraph) -> Self {
        let num = |key: &str, field: &str| graph.metadata.get(key).and_then(|v| v.get(field)).and_then(Value::as_f64);
        let delta_star = num("filtration", "delta_star").unwrap_or(0.0);
        let epsilon = num("build", "epsilon").unwrap_or(DEFAULT_EPSILON);
        Self { spec, graph, delta_star, epsilon }
    }

    fn nav_height(&self) -> f64 {
        self.graph.places().first().map_or(1.0, |p| p.position.z)
    }

    pub fn room_of(&self, pose: &Pose) -> Option<NodeId> {
        self.graph.room_at(&pose.position())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("path from ({0:.2}, {1:.2}) is obstructed")]
    Blocked(f64, f64),
    #[error("agent is outside every room")]
    OutsideRooms,
    #[error("room {0} shares no doorway with room {1}")]
    NoDoorway(u32, u32),
    #[error("object #{0} does not exist")]
    UnknownObject(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub pose: Pose,
    pub stopped: Option<u32>,
}

fn heading(from: &Vec3, to: &Vec3, fallback: f64) -> f64 {
    let d = to.xy() - from.xy();
    if d.norm() < 1e-9 {
        fallback
    } else {
        d.y.atan2(d.x)
    }
}

fn go_to_room(target: u32, pose: &Pose, w: &World) -> Result<Pose, ExecError> {
    let g = &w.graph;
    let here = w.room_of(pose).ok_or(ExecError::OutsideRooms)?;
    let there = NodeId::room(target);
    let p = pose.position();
    let room_of_place = |id: NodeId| g.parent_of(id);
    let crossing = g
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::Adjacency && e.a.layer == Layer::Place && e.b.layer == Layer::Place)
        .filter(|e| {
            let (ra, rb) = (room_of_place(e.a), room_of_place(e.b));
            (ra == Some(here) && rb == Some(there)) || (ra == Some(there) && rb == Some(here))
        })
        .map(|e| {
            let (a, b) = (g.place(e.a).unwrap().position, g.place(e.b).unwrap().position);
            (a + b) * 0.5
        })
        .min_by(|a, b| (a.xy() - p.xy()).norm().total_cmp(&(b.xy() - p.xy()).norm()))
        .ok_or(ExecError::NoDoorway(here.index, target))?;
    let members: Vec<_> = g.places().iter().filter(|pl| room_of_place(pl.id) == Some(there)).collect();
    let survivors: Vec<_> = members.iter().copied().filter(|pl| pl.clearance >= w.delta_star).collect();
    let pool = if survivors.is_empty() { &members } else { &survivors };
    let dest = pool
        .iter()
        .min_by(|a, b| {
            (a.position.xy() - crossing.xy())
                .norm()
                .total_cmp(&(b.position.xy() - crossing.xy()).norm())
                .then(a.id.cmp(&b.id))
        })
        .ok_or(ExecError::NoDoorway(here.index, target))?
        .position;
    Ok(Pose::from_xyz_yaw(dest.x, dest.y, p.z, heading(&p, &dest, pose.yaw())))
}

fn go_near(id: u32, pose: &Pose, w: &World) -> Result<Pose, ExecError> {
    let obj = w.graph.object(NodeId::object(id)).ok_or(ExecError::UnknownObject(id))?;
    let p = pose.position();
    let d = obj.centroid.xy() - p.xy();
    let yaw = heading(&p, &obj.centroid, pose.yaw());
    let dist = d.norm();
    if dist <= APPROACH_STANDOFF {
        return Ok(Pose::from_xyz_yaw(p.x, p.y, p.z, yaw));
    }
    let dest = p.xy() + d * ((dist - APPROACH_STANDOFF) / dist);
    if let Some(grid) = w.graph.grid() {
        let h = w.nav_height();
        if prune_edge_geometric(&Vec3::new(p.x, p.y, h), &Vec3::new(dest.x, dest.y, h), grid, w.epsilon) {
            return Err(ExecError::Blocked(p.x, p.y));
        }
    }
    Ok(Pose::from_xyz_yaw(dest.x, dest.y, p.z, yaw))
}

/// Applies one primitive. `turn_to` rotates by ±45° towards front octants
/// and ±135° towards back octants; the vertical half is ignored.
pub fn execute(a: &ActionPrimitive, pose: &Pose, w: &World) -> Result<ExecOutcome, ExecError> {
    let (pose, stopped) = match *a {
        ActionPrimitive::GoToRoom(r) => (go_to_room(r, pose, w)?, None),
        ActionPrimitive::TurnTo(o) => {
            let mag = match o.fore_aft {
                ForeAft::Front => 45f64,
                ForeAft::Back => 135f64,
            };
            let delta = if o.left_right == LeftRight::Left { mag } else { -mag };
            let p = pose.position();
            (Pose::from_xyz_yaw(p.x, p.y, p.z, pose.yaw() + delta.to_radians()), None)
        }
        ActionPrimitive::GoNear(id) => (go_near(id, pose, w)?, None),
        ActionPrimitive::Stop(id) => {
            if w.graph.object(NodeId::object(id)).is_none() {
                return Err(ExecError::UnknownObject(id));
            }
            (*pose, Some(id))
        }
    };
    Ok(ExecOutcome { pose, stopped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub success_radius: f64,
    pub replan_budget: usize,
    pub mode: SerializerMode,
    pub view: ViewConfig,
    pub estimator: String,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            success_radius: DEFAULT_SUCCESS_RADIUS,
            replan_budget: DEFAULT_REPLAN_BUDGET,
            mode: SerializerMode::Tiered,
            view: ViewConfig::default(),
            estimator: "words-punct".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum ExecStatus {
    Ok,
    Failed(String),
    NotExecuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub index: usize,
    pub agent_room: u32,
    /// x, y, z, yaw (rad) before the step.
    pub pose: [f64; 4],
    pub view_tokens: usize,
    pub trace: HCoTTrace,
    pub action: Option<ActionPrimitive>,
    /// Actions accepted before this step.
    pub history: Vec<ActionPrimitive>,
    pub rejections: usize,
    pub parse_errors: usize,
    pub prompt_tokens: usize,
    pub exec: ExecStatus,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub instruction: Instruction,
    pub mode: SerializerMode,
    pub target: Option<u32>,
    pub stopped_at: Option<u32>,
    pub success: bool,
    pub cumulative_tokens: usize,
    pub final_pose: [f64; 4],
    pub final_distance: Option<f64>,
    pub failure: Option<String>,
    /// Episode ended because the reasoner backend itself failed.
    #[serde(default)]
    pub backend_error: bool,
    pub steps: Vec<StepLog>,
}

fn pose_array(p: &Pose) -> [f64; 4] {
    let t = p.position();
    [t.x, t.y, t.z, p.yaw()]
}

/// Brute-force XY-nearest instance of the instruction's category in the
/// scene file, ties to the lower id.
pub fn ground_truth_target(spec: &SceneSpec, instruction: &Instruction, start: &Pose) -> Option<u32> {
    let cat = instruction.category.as_deref()?;
    let p = start.position();
    let mut best: Option<(f64, u32)> = None;
    for o in spec.objects.iter().filter(|o| o.category == cat) {
        let d = ((o.position[0] - p.x).powi(2) + (o.position[1] - p.y).powi(2)).sqrt();
        if best.is_none_or(|(bd, bid)| d < bd || (d == bd && o.id < bid)) {
            best = Some((d, o.id));
        }
    }
    best.map(|(_, id)| id)
}

pub fn render_view(w: &World, pose: &Pose, room: NodeId, cfg: &EpisodeConfig, est: &dyn crate::view::TokenEstimator) -> Result<SerializedView, String> {
    match cfg.mode {
        SerializerMode::Tiered => serialize_tiered_in(&w.graph, pose, room, &cfg.view, est).map_err(|e| e.to_string()),
        SerializerMode::Flat => Ok(serialize_flat(&w.graph, pose, &cfg.view, est)),
    }
}

pub fn run_episode(
    w: &World,
    instruction: &Instruction,
    backend: &mut dyn ReasonerBackend,
    tools: &ToolBox,
    cfg: &EpisodeConfig,
) -> Result<EpisodeReport, RegistryError> {
    let est = estimator_registry().create(&cfg.estimator, &Value::Null)?;
    let start = w.spec.start_pose();
    let mut report = EpisodeReport {
        instruction: instruction.clone(),
        mode: cfg.mode,
        target: ground_truth_target(&w.spec, instruction, &start),
        stopped_at: None,
        success: false,
        cumulative_tokens: 0,
        final_pose: pose_array(&start),
        final_distance: None,
        failure: None,
        backend_error: false,
        steps: Vec::new(),
    };
    let mut pose = start;
    let mut history: Vec<ActionPrimitive> = Vec::new();
    for index in 0..cfg.max_steps {
        let Some(room) = w.room_of(&pose) else {
            report.failure = Some("agent is outside every room".into());
            break;
        };
        let view = match render_view(w, &pose, room, cfg, est.as_ref()) {
            Ok(v) => v,
            Err(e) => {
                report.failure = Some(e);
                break;
            }
        };
        let ctx = DecisionContext { graph: &w.graph, pose, agent_room: room, instruction, history: &history, view: &view };
        let r = match step(&ctx, backend, tools, est.as_ref(), cfg.replan_budget) {
            Ok(r) => r,
            Err(e) => {
                report.backend_error = matches!(e, crate::reasoning::ReasoningError::Backend(_));
                report.failure = Some(e.to_string());
                break;
            }
        };
        report.cumulative_tokens += r.prompt_tokens;
        let mut log = StepLog {
            index,
            agent_room: room.index,
            pose: pose_array(&pose),
            view_tokens: view.token_count,
            trace: r.trace,
            action: None,
            history: history.clone(),
            rejections: r.rejections.len(),
            parse_errors: r.parse_errors,
            prompt_tokens: r.prompt_tokens,
            exec: ExecStatus::NotExecuted,
            transcript: r.transcript,
        };
        let StepOutcome::Action(a) = r.outcome else {
            report.failure = Some(format!("replan budget exhausted at step {index}"));
            report.steps.push(log);
            break;
        };
        log.action = Some(a);
        history.push(a);
        match execute(&a, &pose, w) {
            Ok(out) => {
                log.exec = ExecStatus::Ok;
                pose = out.pose;
                report.steps.push(log);
                if let Some(id) = out.stopped {
                    report.stopped_at = Some(id);
                    break;
                }
            }
            Err(e) => {
                log::debug!("step {index}: {a} failed: {e}");
                log.exec = ExecStatus::Failed(e.to_string());
                report.steps.push(log);
            }
        }
    }
    if report.stopped_at.is_none() && report.failure.is_none() {
        report.failure = Some(format!("no stop within {} steps", cfg.max_steps));
    }
    report.final_pose = pose_array(&pose);
    if let Some(t) = report.target {
        let o = &w.spec.objects[t as usize];
        let d = ((o.position[0] - pose.position().x).powi(2) + (o.position[1] - pose.position().y).powi(2)).sqrt();
        report.final_distance = Some(d);
        report.success = report.stopped_at == Some(t) && d <= cfg.success_radius;
    }
    Ok(report)
}

/// `go to the nearest <category>`, cycling through the scene's categories
/// by seed.
pub fn default_instruction(spec: &SceneSpec) -> Instruction {
    let cats = spec.categories();
    if cats.is_empty() {
        return Instruction { text: "stay".into(), category: None };
    }
    Instruction::nearest(cats[(spec.seed % cats.len() as u64) as usize])
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("world build failed for {dataset} seed {seed}: {source}")]
    Build { dataset: DatasetId, seed: u64, source: PipelineError },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub datasets: Vec<DatasetId>,
    pub seeds: Vec<u64>,
    pub modes: Vec<SerializerMode>,
    pub backend: String,
    pub backend_options: Value,
    pub threads: Option<usize>,
    pub episode: EpisodeConfig,
    pub build: BuildConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            datasets: DatasetId::all().to_vec(),
            seeds: (0..5).collect(),
            modes: vec![SerializerMode::Tiered, SerializerMode::Flat],
            backend: "scripted".into(),
            backend_options: Value::Null,
            threads: None,
            episode: EpisodeConfig::default(),
            build: BuildConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub dataset: DatasetId,
    pub seed: u64,
    pub mode: SerializerMode,
    pub instruction: String,
    pub target: Option<u32>,
    pub stopped_at: Option<u32>,
    pub success: bool,
    pub steps: usize,
    pub cumulative_tokens: usize,
    pub first_view_tokens: usize,
    pub final_distance: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub dataset: DatasetId,
    pub mode: SerializerMode,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub rows: Vec<EpisodeRow>,
    pub cells: Vec<SuiteCell>,
    /// Per dataset: 1 - mean tiered tokens / mean flat tokens.
    pub token_reduction: Vec<(DatasetId, f64)>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeReport>,
}

impl SuiteReport {
    fn from_rows(rows: Vec<EpisodeRow>, episodes: Vec<EpisodeReport>) -> Self {
        let mut cells = Vec::new();
        let mut keys: Vec<(DatasetId, SerializerMode)> = rows.iter().map(|r| (r.dataset, r.mode)).collect();
        keys.sort();
        keys.dedup();
        for (dataset, mode) in keys {
            let sel: Vec<&EpisodeRow> = rows.iter().filter(|r| r.dataset == dataset && r.mode == mode).collect();
            let n = sel.len() as f64;
            cells.push(SuiteCell {
                dataset,
                mode,
                episodes: sel.len(),
                success_rate: sel.iter().filter(|r| r.success).count() as f64 / n,
                mean_tokens: sel.iter().map(|r| r.cumulative_tokens as f64).sum::<f64>() / n,
            });
        }
        let mut token_reduction = Vec::new();
        for c in cells.iter().filter(|c| c.mode == SerializerMode::Tiered) {
            if let Some(f) = cells.iter().find(|f| f.dataset == c.dataset && f.mode == SerializerMode::Flat) {
                if f.mean_tokens > 0.0 {
                    token_reduction.push((c.dataset, 1.0 - c.mean_tokens / f.mean_tokens));
                }
            }
        }
        Self { rows, cells, token_reduction, episodes }
    }

    pub fn to_csv(&self) -> Result<String, SuiteError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "dataset",
            "seed",
            "mode",
            "instruction",
            "target",
            "stopped_at",
            "success",
            "steps",
            "cumulative_tokens",
            "first_view_tokens",
            "final_distance",
            "failure",
        ])?;
        let opt = |v: Option<u32>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            w.write_record([
                r.dataset.to_string(),
                r.seed.to_string(),
                r.mode.to_string(),
                r.instruction.clone(),
                opt(r.target),
                opt(r.stopped_at),
                r.success.to_string(),
                r.steps.to_string(),
                r.cumulative_tokens.to_string(),
                r.first_view_tokens.to_string(),
                r.final_distance.map_or(String::new(), |d| format!("{d:.3}")),
                r.failure.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| SuiteError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

fn run_one(w: &World, cfg: &SuiteConfig, mode: SerializerMode, tools: &ToolBox) -> Result<(EpisodeRow, EpisodeReport), RegistryError> {
    let mut backend = backend_registry().create(&cfg.backend, &cfg.backend_options)?;
    let instruction = default_instruction(&w.spec);
    let ep_cfg = EpisodeConfig { mode, ..cfg.episode.clone() };
    let rep = run_episode(w, &instruction, backend.as_mut(), tools, &ep_cfg)?;
    let row = EpisodeRow {
        dataset: w.spec.dataset.expect("suite scenes carry a dataset id"),
        seed: w.spec.seed,
        mode,
        instruction: instruction.text,
        target: rep.target,
        stopped_at: rep.stopped_at,
        success: rep.success,
        steps: rep.steps.len(),
        cumulative_tokens: rep.cumulative_tokens,
        first_view_tokens: rep.steps.first().map_or(0, |s| s.view_tokens),
        final_distance: rep.final_distance,
        failure: rep.failure.clone(),
    };
    Ok((row, rep))
}

/// Every dataset x seed x mode episode, run in parallel; rows come back in
/// that nesting order regardless of scheduling.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport, SuiteError> {
    // Fail fast on a bad backend name or options.
    backend_registry().create(&cfg.backend, &cfg.backend_options)?;
    let work = || -> Result<SuiteReport, SuiteError> {
        let pairs: Vec<(DatasetId, u64)> = cfg.datasets.iter().flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
        let worlds: Vec<World> = pairs
            .par_iter()
            .map(|&(d, s)| World::build(generate(d, s), &cfg.build).map_err(|source| SuiteError::Build { dataset: d, seed: s, source }))
            .collect::<Result<_, _>>()?;
        let tools = default_toolbox();
        let jobs: Vec<(&World, SerializerMode)> = worlds.iter().flat_map(|w| cfg.modes.iter().map(move |&m| (w, m))).collect();
        let results: Vec<(EpisodeRow, EpisodeReport)> =
            jobs.par_iter().map(|&(w, m)| run_one(w, cfg, m, &tools)).collect::<Result<_, _>>()?;
        let (rows, episodes) = results.into_iter().unzip();
        Ok(SuiteReport::from_rows(rows, episodes))
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| SuiteError::Pool(e.to_string()))?.install(work),
        None => work(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::{critique, ReplayBackend};
    use crate::view::OctantLabel;
    use std::sync::OnceLock;

    fn world(d: usize, seed: u64) -> World {
        World::build(generate(DatasetId::from_index(d).unwrap(), seed), &BuildConfig::default()).unwrap()
    }

    fn d9() -> &'static World {
        static W: OnceLock<World> = OnceLock::new();
        W.get_or_init(|| world(9, 7))
    }

    #[test]
    fn turn_to_rotates_by_octant() {
        let w = d9();
        let start = Pose::from_xyz_yaw(2.5, 2.5, 0.0, 0.0);
        for o in OctantLabel::all() {
            let out = execute(&ActionPrimitive::TurnTo(o), &start, w).unwrap();
            let expect: f64 = match (o.fore_aft, o.left_right) {
                (ForeAft::Front, LeftRight::Left) => 45.0,
                (ForeAft::Front, LeftRight::Right) => -45.0,
                (ForeAft::Back, LeftRight::Left) => 135.0,
                (ForeAft::Back, LeftRight::Right) => -135.0,
            };
            assert!((out.pose.yaw().to_degrees() - expect).abs() < 1e-9);
            assert_eq!(out.pose.position(), start.position());
        }
    }

    #[test]
    fn go_to_room_lands_inside_the_adjacent_room() {
        let w = d9();
        let start = w.spec.start_pose();
        for target in [1, 2] {
            let out = execute(&ActionPrimitive::GoToRoom(target), &start, w).unwrap();
            assert_eq!(w.room_of(&out.pose), Some(NodeId::room(target)));
            assert_eq!(w.spec.arena.room_of(out.pose.position().x, out.pose.position().y), target);
            // Lands by the shared doorway, not deep inside the room.
            let dw = w.spec.arena.doorways().into_iter().find(|d| d.rooms.contains(&0) && d.rooms.contains(&target)).unwrap();
            let c = Vec3::new(dw.center[0], dw.center[1], 0.0);
            assert!((out.pose.position().xy() - c.xy()).norm() < 1.5, "{:?}", out.pose.position());
        }
        assert_eq!(execute(&ActionPrimitive::GoToRoom(3), &start, w), Err(ExecError::NoDoorway(0, 3)));
    }

    #[test]
    fn go_near_stops_short_and_detects_walls() {
        let w = d9();
        let o = w.graph.objects().iter().find(|o| o.room == Some(NodeId::room(1))).unwrap();
        let id = o.id.index;
        let inside = Pose::from_xyz_yaw(7.5, 2.5, 0.0, 0.0);
        let out = execute(&ActionPrimitive::GoNear(id), &inside, w).unwrap();
        let d = (out.pose.position().xy() - o.centroid.xy()).norm();
        let d0 = (inside.position().xy() - o.centroid.xy()).norm();
        assert!((d - APPROACH_STANDOFF.min(d0)).abs() < 1e-9);
        // From Room 2 the straight line to a Room 1 object crosses walls.
        let across = Pose::from_xyz_yaw(2.5, 7.5, 0.0, 0.0);
        assert!(matches!(execute(&ActionPrimitive::GoNear(id), &across, w), Err(ExecError::Blocked(..))));
        assert_eq!(execute(&ActionPrimitive::Stop(9999), &inside, w), Err(ExecError::UnknownObject(9999)));
    }

    #[test]
    fn ground_truth_target_is_nearest_by_brute_force() {
        let w = d9();
        let start = w.spec.start_pose();
        for cat in w.spec.categories() {
            let t = ground_truth_target(&w.spec, &Instruction::nearest(cat), &start).unwrap();
            let dt = |o: &crate::scenegen::SceneObject| (o.position[0] - 2.5).hypot(o.position[1] - 2.5);
            let best = w.spec.objects.iter().filter(|o| o.category == cat).map(dt).fold(f64::INFINITY, f64::min);
            assert_eq!(dt(&w.spec.objects[t as usize]), best);
        }
        assert_eq!(ground_truth_target(&w.spec, &Instruction::nearest("piano"), &start), None);
    }

    #[test]
    fn scripted_episode_reaches_goal_in_other_room() {
        let w = d9();
        let tools = default_toolbox();
        for cat in w.spec.categories() {
            let instr = Instruction::nearest(cat);
            let mut b = crate::reasoning::ScriptedOracle::new();
            let rep = run_episode(w, &instr, &mut b, &tools, &EpisodeConfig::default()).unwrap();
            assert!(rep.success, "{cat}: {rep:?}");
            assert_eq!(b.target(), rep.target);
            assert!(rep.steps.len() <= DEFAULT_MAX_STEPS);
            assert_eq!(rep.cumulative_tokens, rep.steps.iter().map(|s| s.prompt_tokens).sum::<usize>());
            let logged: usize = rep.steps.iter().flat_map(|s| &s.transcript).map(|e| crate::view::count_tokens(&e.prompt)).sum();
            assert_eq!(rep.cumulative_tokens, logged);
            for s in &rep.steps {
                let a = s.action.unwrap();
                let g = &w.graph;
                assert!(critique(&a, &s.trace, g, NodeId::room(s.agent_room), &s.history).accepted);
            }
        }
    }

    #[test]
    fn failures_are_reported_not_fatal() {
        let w = d9();
        let tools = default_toolbox();
        let instr = Instruction::nearest("chair");
        let mut b = ReplayBackend::new(vec!["ACTION: go_to_room(3)".to_string(); 3]);
        let rep = run_episode(w, &instr, &mut b, &tools, &EpisodeConfig::default()).unwrap();
        assert!(!rep.success);
        assert!(rep.failure.unwrap().contains("budget exhausted"));
        let mut b = ReplayBackend::new(vec!["ACTION: turn_to(Front-Left-Top)".to_string(); 40]);
        let cfg = EpisodeConfig { max_steps: 4, ..Default::default() };
        let rep = run_episode(w, &instr, &mut b, &tools, &cfg).unwrap();
        assert_eq!(rep.steps.len(), 4);
        assert!(rep.failure.unwrap().contains("no stop within 4"));
        assert!((rep.final_pose[3].to_degrees() - (-180.0)).abs() < 1e-6 || (rep.final_pose[3].to_degrees() - 180.0).abs() < 1e-6);
        let mut b = ReplayBackend::new(vec![]);
        let rep = run_episode(w, &instr, &mut b, &tools, &cfg).unwrap();
        assert!(rep.failure.unwrap().contains("exhausted after 0"));
    }

    #[test]
    fn suite_is_deterministic_and_exports() {
        let cfg = SuiteConfig {
            datasets: vec![DatasetId::from_index(1).unwrap(), DatasetId::from_index(7).unwrap()],
            seeds: vec![0, 1],
            threads: Some(3),
            ..Default::default()
        };
        let a = run_suite(&cfg).unwrap();
        let b = run_suite(&SuiteConfig { threads: Some(1), ..cfg.clone() }).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 8);
        assert!(a.rows.iter().all(|r| r.success));
        let order: Vec<(String, u64, SerializerMode)> = a.rows.iter().map(|r| (r.dataset.to_string(), r.seed, r.mode)).collect();
        assert_eq!(order[0], ("D1".into(), 0, SerializerMode::Tiered));
        assert_eq!(order[3], ("D1".into(), 1, SerializerMode::Flat));
        assert_eq!(order[4], ("D7".into(), 0, SerializerMode::Tiered));
        let csv = a.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 9);
        assert!(csv.starts_with("dataset,seed,mode,instruction"));
        let json: Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(json["cells"].as_array().unwrap().len(), 4);
        assert_eq!(a.token_reduction.len(), 2);
        assert!(run_suite(&SuiteConfig { backend: "nope".into(), ..cfg }).is_err());
    }
}
