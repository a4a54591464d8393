mod config;
mod error;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use omnivln::dsg::{load_graph, save_graph, SceneGraph};
use omnivln::geometry::Pose;
use omnivln::navsim::{run_episode, run_suite, SerializerMode, SuiteConfig, SuiteReport, World};
use omnivln::pipeline::{build_graph, partition_graph};
use omnivln::reasoning::reg::{build_reg_prompt, cross_room_pairs, run_reg, RegMode, DEFAULT_CANDIDATES};
use omnivln::reasoning::{backend_registry, default_toolbox, transcript_jsonl, Instruction};
use omnivln::scenegen::{generate, reg_fixture, DatasetId, SceneSpec, AGENT_START};
use omnivln::topology::{HttpVerifier, RelationVerifier, ScriptedVerifier};
use omnivln::view::{estimator_registry, serialize_flat, serialize_tiered};
use serde_json::{json, Value};

use config::RunConfig;
use error::{Failure, Kind};

type Result<T> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "omnivln", version, about = "Scene-graph construction, tiered serialization and navigation benchmarks")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug); RUST_LOG also works.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded scene files (D1..D9, `all`, or `reg` for the REG fixture).
    Gen(GenArgs),
    /// Build a graph document (occupancy, objects, places, pruned edges) from a scene.
    Build(BuildArgs),
    /// Discover rooms on a built graph and export the Betti-0 curve.
    Partition(PartitionArgs),
    /// Render tiered and/or flat views of a partitioned graph for one pose.
    Serialize(SerializeArgs),
    /// Write REG prompts and, with a backend, score the answers.
    Reg(RegArgs),
    /// Run one episode on a scene, or the whole benchmark suite.
    Run(RunArgs),
    /// Turn a suite report into tables and plot data.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value = "all")]
    dataset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `scripted` or `http`.
    #[arg(long)]
    verifier: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    sample_spacing: Option<f64>,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Defaults to overwriting `--graph`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Two-column delta/betti0 table.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PoseArgs {
    /// Scene file supplying the start pose.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// `x,y,z,yaw_deg`; overrides the scene start pose.
    #[arg(long)]
    pose: Option<String>,
}

#[derive(Debug, Args)]
struct SerializeArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    pose: PoseArgs,
    /// `tiered`, `flat` or `both`.
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long)]
    focal_radius: Option<f64>,
    #[arg(long)]
    estimator: Option<String>,
    /// Directory for the prompt texts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RegArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    pose: PoseArgs,
    /// `hierarchical`, `flat` or `both`.
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    candidates: usize,
    /// Score answers from this backend.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scene for a single episode.
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    scene: Option<PathBuf>,
    /// Partitioned graph for `--scene`; built on the fly when absent.
    #[arg(long, requires = "scene")]
    graph: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    instruction: Option<String>,
    /// Run every dataset x seed x mode episode.
    #[arg(long)]
    suite: bool,
    /// Comma-separated dataset ids for `--suite`.
    #[arg(long)]
    datasets: Option<String>,
    /// Comma-separated seeds for `--suite`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    backend: Option<String>,
    /// `tiered`, `flat` (single episode) or `both` (suite).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    focal_radius: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `suite.json` written by `run --suite`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn defaults_help() -> String {
    let c = RunConfig::default();
    let b = &c.build;
    format!(
        "Defaults (override in --config or with flags):\n  \
seed = {}\n  voxel_size = {} m\n  build.sample_spacing = {} m\n  build.place_height = {} m\n  build.epsilon = {} m\n  \
build.group_radius = {} m\n  build.relation_radius = {} m\n  build.verify.tau = {}\n  build.verify.short_range = {} m\n  \
build.verify.fail_open = {}\n  build.verify.max_in_flight = {}\n  view.h_cam = {} m\n  view.focal_radius = {} m\n  \
view.focal_capacity = {}\n  episode.max_steps = {}\n  episode.success_radius = {} m\n  episode.replan_budget = {}\n  approach standoff = {} m (fixed)\n  \
episode.estimator = {}\n  episode.mode = {}\n  backend.name = {}\n  verifier.name = {}\n  suite.seeds = {:?}\n\n\
Backend auth: the API key is read from the variable named by endpoint.api_key_env (default OMNIVLN_API_KEY).\n\
Exit codes: 0 ok, 2 config, 3 data, 4 backend, 5 contract. Errors are printed to stderr as one JSON line.",
        c.seed,
        generate(DatasetId::from_index(1).unwrap(), 0).arena.voxel_size,
        b.sample_spacing,
        b.place_height,
        b.epsilon,
        b.group_radius,
        b.relation_radius,
        b.verify.tau,
        b.verify.short_range,
        b.verify.fail_open,
        b.verify.max_in_flight,
        c.view.h_cam,
        c.view.focal_radius,
        c.view.focal_capacity,
        c.episode.max_steps,
        c.episode.success_radius,
        c.episode.replan_budget,
        omnivln::navsim::APPROACH_STANDOFF,
        c.episode.estimator,
        c.episode.mode,
        c.backend.name,
        c.verifier.name,
        c.suite.seeds,
    )
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn load_scene(path: &Path) -> Result<SceneSpec> {
    SceneSpec::from_json(&read(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn load_graph_file(path: &Path) -> Result<SceneGraph> {
    load_graph(&read(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn require_partitioned(g: &SceneGraph, path: &Path) -> Result<()> {
    if g.rooms().is_empty() {
        return Err(Failure::contract(format!("{} has no rooms; run `partition` first", path.display())));
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',').map(|p| p.trim().parse::<T>().map_err(|e| Failure::config(format!("bad {what} {p:?}: {e}")))).collect()
}

fn resolve_pose(args: &PoseArgs) -> Result<Pose> {
    if let Some(p) = &args.pose {
        let v: Vec<f64> = parse_list(p, "pose component")?;
        if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
            return Err(Failure::config(format!("--pose wants x,y,z,yaw_deg, got {p:?}")));
        }
        return Ok(Pose::from_xyz_yaw(v[0], v[1], v[2], v[3].to_radians()));
    }
    if let Some(s) = &args.scene {
        return Ok(load_scene(s)?.start_pose());
    }
    let a = AGENT_START;
    Ok(Pose::from_xyz_yaw(a[0], a[1], a[2], a[3].to_radians()))
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn cmd_gen(a: GenArgs, cfg: &RunConfig) -> Result<()> {
    let seed = a.seed.unwrap_or(cfg.seed);
    let voxel = a.voxel_size.or(cfg.voxel_size);
    if let Some(v) = voxel {
        if !(v.is_finite() && v > 0.0) {
            return Err(Failure::config(format!("voxel size must be positive, got {v}")));
        }
    }
    let mut scenes: Vec<(String, SceneSpec)> = match a.dataset.to_ascii_lowercase().as_str() {
        "all" => DatasetId::all().into_iter().map(|d| (d.to_string(), generate(d, seed))).collect(),
        "reg" => vec![("REG".into(), reg_fixture(seed))],
        _ => {
            let d: DatasetId = a.dataset.parse()?;
            vec![(d.to_string(), generate(d, seed))]
        }
    };
    let mut files = Vec::new();
    for (name, spec) in &mut scenes {
        if let Some(v) = voxel {
            spec.arena.voxel_size = v;
        }
        let path = a.out.join(format!("{name}-s{seed}.scene.json"));
        write(&path, &spec.to_json())?;
        files.push(json!({ "dataset": name, "objects": spec.objects.len(), "path": path }));
    }
    print_json(&json!({ "seed": seed, "scenes": files }));
    Ok(())
}

fn make_verifier(cfg: &RunConfig, spec: &SceneSpec, name: &str) -> Result<Box<dyn RelationVerifier>> {
    match name {
        "scripted" => Ok(Box::new(ScriptedVerifier::new(spec.relations()))),
        "http" => {
            let ep = cfg.verifier.endpoint.clone().ok_or_else(|| Failure::config("verifier \"http\" needs a [verifier.endpoint] table"))?;
            let mut v = HttpVerifier::new(ep)?;
            if let Some(p) = &cfg.verifier.panorama {
                let bytes = fs::read(p).map_err(|e| Failure::data(format!("{p}: {e}")))?;
                let mime = if p.ends_with(".png") { "image/png" } else { "image/jpeg" };
                v = v.with_panorama(bytes, mime);
            }
            Ok(Box::new(v))
        }
        other => Err(Failure::config(format!("unknown verifier {other:?}; available: http, scripted"))),
    }
}

fn cmd_build(a: BuildArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(e) = a.epsilon {
        cfg.build.epsilon = e;
    }
    if let Some(t) = a.tau {
        cfg.build.verify.tau = t;
    }
    if let Some(s) = a.sample_spacing {
        cfg.build.sample_spacing = s;
    }
    cfg.validate()?;
    let spec = load_scene(&a.scene)?;
    let name = a.verifier.unwrap_or_else(|| cfg.verifier.name.clone());
    let verifier = make_verifier(&cfg, &spec, &name)?;
    let (g, stats) = build_graph(&spec, &cfg.build, verifier.as_ref())?;
    write(&a.out, &save_graph(&g))?;
    print_json(&json!({
        "graph": a.out,
        "objects": g.objects().len(),
        "places": g.places().len(),
        "edges": g.edges().len(),
        "verifier": name,
        "relations": stats,
    }));
    Ok(())
}

fn cmd_partition(a: PartitionArgs, cfg: RunConfig) -> Result<()> {
    cfg.validate()?;
    let mut g = load_graph_file(&a.graph)?;
    let report = partition_graph(&mut g, &cfg.build)?;
    let out = a.out.unwrap_or_else(|| a.graph.clone());
    write(&out, &save_graph(&g))?;
    if let Some(c) = &a.curve {
        write(c, &report.filtration.curve_tsv())?;
    }
    let adjacency: Vec<[u32; 2]> = report.partition.room_adjacency(&omnivln::pipeline::place_graph_of(&g)).into_iter().map(|(x, y)| [x as u32, y as u32]).collect();
    print_json(&json!({
        "graph": out,
        "rooms": g.rooms().len(),
        "k": report.filtration.k,
        "delta_star": report.filtration.delta_star,
        "plateau": report.filtration.plateau,
        "room_adjacency": adjacency,
        "groups": g.groups().len(),
    }));
    Ok(())
}

fn cmd_serialize(a: SerializeArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(r) = a.focal_radius {
        cfg.view.focal_radius = r;
    }
    if let Some(e) = a.estimator {
        cfg.episode.estimator = e;
    }
    cfg.validate()?;
    let modes: Vec<SerializerMode> = match a.mode.as_str() {
        "both" => vec![SerializerMode::Tiered, SerializerMode::Flat],
        m => vec![m.parse().map_err(Failure::config)?],
    };
    let est = estimator_registry().create(&cfg.episode.estimator, &Value::Null)?;
    let g = load_graph_file(&a.graph)?;
    require_partitioned(&g, &a.graph)?;
    let pose = resolve_pose(&a.pose)?;
    let mut out = serde_json::Map::new();
    let mut counts = BTreeMap::new();
    for m in modes {
        let view = match m {
            SerializerMode::Tiered => serialize_tiered(&g, &pose, &cfg.view, est.as_ref())?,
            SerializerMode::Flat => serialize_flat(&g, &pose, &cfg.view, est.as_ref()),
        };
        if let Some(dir) = &a.out {
            write(&dir.join(format!("{m}.txt")), &view.text)?;
        }
        counts.insert(m, view.token_count);
        out.insert(m.to_string(), json!({ "tokens": view.token_count, "text": view.text }));
    }
    if let (Some(t), Some(f)) = (counts.get(&SerializerMode::Tiered), counts.get(&SerializerMode::Flat)) {
        let reduction = if *f == 0 { 0.0 } else { 1.0 - *t as f64 / *f as f64 };
        out.insert("reduction".into(), json!(reduction));
    }
    out.insert("estimator".into(), json!(est.name()));
    print_json(&Value::Object(out));
    Ok(())
}

fn cmd_reg(a: RegArgs, cfg: RunConfig) -> Result<()> {
    cfg.validate()?;
    let modes: Vec<RegMode> = match a.mode.as_str() {
        "both" => vec![RegMode::Hierarchical, RegMode::Flat],
        m => vec![m.parse().map_err(Failure::config)?],
    };
    let est = estimator_registry().create(&cfg.episode.estimator, &Value::Null)?;
    let g = load_graph_file(&a.graph)?;
    require_partitioned(&g, &a.graph)?;
    let pose = resolve_pose(&a.pose)?;
    let backend_cfg = a.backend.map(|name| RunConfig { backend: config::BackendSection { name, ..cfg.backend.clone() }, ..cfg.clone() });
    let mut results = serde_json::Map::new();
    for m in modes {
        let prompt = build_reg_prompt(&g, &pose, m, a.candidates);
        if let Some(dir) = &a.out {
            write(&dir.join(format!("reg-{m}.txt")), &prompt.text)?;
        }
        let mut entry = json!({ "prompt_tokens": est.count(&prompt.text), "cross_room_pairs": cross_room_pairs(&g, &prompt) });
        if let Some(bc) = &backend_cfg {
            let mut backend = backend_registry().create(&bc.backend.name, &bc.backend_options()?)?;
            let run = run_reg(&g, &pose, m, a.candidates, backend.as_mut(), est.as_ref())?;
            if let Some(dir) = &a.out {
                write(&dir.join(format!("reg-{m}.answer.txt")), &run.response)?;
            }
            entry["vi_accuracy"] = json!(run.score.vi_accuracy());
            entry["vd_accuracy"] = json!(run.score.vd_accuracy());
            entry["score"] = serde_json::to_value(&run.score).expect("json");
        }
        results.insert(m.to_string(), entry);
    }
    print_json(&Value::Object(results));
    Ok(())
}

fn cmd_run(a: RunArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(b) = a.backend {
        cfg.backend.name = b;
    }
    if let Some(r) = a.focal_radius {
        cfg.view.focal_radius = r;
    }
    cfg.validate()?;
    if a.suite {
        if let Some(d) = &a.datasets {
            cfg.suite.datasets = d.split(',').map(|s| s.trim().to_string()).collect();
        }
        if let Some(s) = &a.seeds {
            cfg.suite.seeds = parse_list(s, "seed")?;
        }
        let datasets: Vec<DatasetId> = cfg.suite.datasets.iter().map(|d| d.parse::<DatasetId>()).collect::<std::result::Result<_, _>>()?;
        let modes = match a.mode.as_deref() {
            None | Some("both") => vec![SerializerMode::Tiered, SerializerMode::Flat],
            Some(m) => vec![m.parse().map_err(Failure::config)?],
        };
        let suite = SuiteConfig {
            datasets,
            seeds: cfg.suite.seeds.clone(),
            modes,
            backend: cfg.backend.name.clone(),
            backend_options: cfg.backend_options()?,
            threads: a.threads.or(cfg.suite.threads),
            episode: cfg.episode_config(),
            build: cfg.build.clone(),
        };
        let rep = run_suite(&suite)?;
        write(&a.out.join("suite.json"), &rep.to_json())?;
        write(&a.out.join("suite.csv"), &rep.to_csv()?)?;
        let mut transcripts = String::new();
        for (row, ep) in rep.rows.iter().zip(&rep.episodes) {
            let steps: Vec<(usize, &[_])> = ep.steps.iter().map(|s| (s.index, s.transcript.as_slice())).collect();
            for line in transcript_jsonl(&steps).lines() {
                let mut v: Value = serde_json::from_str(line).expect("json line");
                v["dataset"] = json!(row.dataset);
                v["seed"] = json!(row.seed);
                v["mode"] = json!(row.mode);
                transcripts.push_str(&v.to_string());
                transcripts.push('\n');
            }
        }
        write(&a.out.join("transcripts.jsonl"), &transcripts)?;
        print_json(&json!({ "episodes": rep.rows.len(), "cells": rep.cells, "token_reduction": rep.token_reduction, "out": a.out }));
        return Ok(());
    }
    let scene_path = a.scene.expect("clap enforces --scene without --suite");
    let spec = load_scene(&scene_path)?;
    if let Some(m) = &a.mode {
        cfg.episode.mode = m.parse().map_err(Failure::config)?;
    }
    let world = match &a.graph {
        Some(p) => {
            let g = load_graph_file(p)?;
            require_partitioned(&g, p)?;
            if g.objects().len() != spec.objects.len() {
                return Err(Failure::contract(format!("{} does not match {}", p.display(), scene_path.display())));
            }
            World::from_graph(spec, g)
        }
        None => World::build(spec, &cfg.build)?,
    };
    let instruction = match &a.instruction {
        Some(t) => Instruction::parse(t).map_err(|e| Failure::config(e.to_string()))?,
        None => omnivln::navsim::default_instruction(&world.spec),
    };
    let mut backend = backend_registry().create(&cfg.backend.name, &cfg.backend_options()?)?;
    let rep = run_episode(&world, &instruction, backend.as_mut(), &default_toolbox(), &cfg.episode_config())?;
    write(&a.out.join("episode.json"), &(serde_json::to_string_pretty(&rep).expect("json") + "\n"))?;
    let steps: Vec<(usize, &[_])> = rep.steps.iter().map(|s| (s.index, s.transcript.as_slice())).collect();
    write(&a.out.join("transcript.jsonl"), &transcript_jsonl(&steps))?;
    print_json(&json!({
        "instruction": rep.instruction.text,
        "mode": rep.mode,
        "target": rep.target,
        "stopped_at": rep.stopped_at,
        "success": rep.success,
        "steps": rep.steps.len(),
        "cumulative_tokens": rep.cumulative_tokens,
        "failure": rep.failure,
        "out": a.out,
    }));
    if rep.backend_error {
        return Err(Failure::backend(rep.failure.unwrap_or_default()));
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let rep: SuiteReport = serde_json::from_str(&read(&a.input)?).map_err(|e| Failure::data(format!("{}: {e}", a.input.display())))?;
    let datasets: Vec<DatasetId> = {
        let mut d: Vec<DatasetId> = rep.cells.iter().map(|c| c.dataset).collect();
        d.dedup();
        d
    };
    let cell = |d: DatasetId, m: SerializerMode| rep.cells.iter().find(|c| c.dataset == d && c.mode == m);
    // Table: one column per dataset, rows per metric and mode.
    let mut table = String::from("metric");
    for d in &datasets {
        table.push_str(&format!(",{d}"));
    }
    table.push('\n');
    for m in [SerializerMode::Flat, SerializerMode::Tiered] {
        for (metric, f) in [("mean_tokens", (|c: &omnivln::navsim::SuiteCell| c.mean_tokens) as fn(&_) -> f64), ("success_rate", |c| c.success_rate)] {
            table.push_str(&format!("{metric}_{m}"));
            for d in &datasets {
                table.push_str(&cell(*d, m).map_or(",".to_string(), |c| format!(",{:.2}", f(c))));
            }
            table.push('\n');
        }
    }
    table.push_str("reduction_pct");
    for d in &datasets {
        let r = rep.token_reduction.iter().find(|(x, _)| x == d).map_or(String::new(), |(_, r)| format!("{:.2}", r * 100.0));
        table.push_str(&format!(",{r}"));
    }
    table.push('\n');
    let mut tokens = String::from("dataset\ttiered\tflat\treduction\n");
    let mut sr = String::from("dataset\tmode\tsuccess_rate\n");
    for d in &datasets {
        let (t, f) = (cell(*d, SerializerMode::Tiered), cell(*d, SerializerMode::Flat));
        if let (Some(t), Some(f)) = (t, f) {
            tokens.push_str(&format!("{d}\t{:.2}\t{:.2}\t{:.4}\n", t.mean_tokens, f.mean_tokens, 1.0 - t.mean_tokens / f.mean_tokens));
        }
        for c in [t, f].into_iter().flatten() {
            sr.push_str(&format!("{d}\t{}\t{:.4}\n", c.mode, c.success_rate));
        }
    }
    write(&a.out.join("table.csv"), &table)?;
    write(&a.out.join("tokens.tsv"), &tokens)?;
    write(&a.out.join("success.tsv"), &sr)?;
    print_json(&json!({ "datasets": datasets.len(), "episodes": rep.rows.len(), "out": a.out }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    log::debug!("config: {cfg:?}");
    match cli.command {
        Command::Gen(a) => cmd_gen(a, &cfg),
        Command::Build(a) => cmd_build(a, cfg),
        Command::Partition(a) => cmd_partition(a, cfg),
        Command::Serialize(a) => cmd_serialize(a, cfg),
        Command::Reg(a) => cmd_reg(a, cfg),
        Command::Run(a) => cmd_run(a, cfg),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() {
    let help = defaults_help();
    let matches = match Cli::command().after_help(help).try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", Failure::new(Kind::Config, e.to_string().trim_end()).to_json());
            std::process::exit(Kind::Config as i32);
        }
    };
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(f) = run(cli) {
        eprintln!("{}", f.to_json());
        std::process::exit(f.exit_code());
    }
}
