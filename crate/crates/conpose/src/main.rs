use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use conpose::harness::{self, BenchConfig, WallClock};
use conpose::llm::{LlmClient, LlmConfig};
use conpose::render::render_episode;
use conpose::scenario::{load_scenario, LoadOptions, Scenario, ShapeKind, BUNDLED_SCENES};
use conpose::write_trajectory_jsonl;
use conpose_core::geometry::{generate_contact_points, to_world};
use conpose_core::planner::{
    angular_tolerance, build_costmap, plan_object_path, rdp_indices, target_direction, CostmapConfig,
};
use conpose_core::selection::{InitializerKind, SelectionRequest, SelectorKind};
use conpose_core::sim::{run_episode, EpisodeRecord, NullClock, SimConfig};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "conpose", version, about = "Cooperative multi-robot pushing: selection, simulation and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the object costmap and print the planned path.
    Plan(PlanArgs),
    /// One-shot selection at the scenario start state.
    Select(SelectArgs),
    /// Run a single episode.
    Run(RunArgs),
    /// Run the benchmark matrix and write per-episode CSV.
    Bench(BenchArgs),
    /// Render a run record to SVG.
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectorArg {
    Conpose,
    Analytical,
    Naive,
}

impl From<SelectorArg> for SelectorKind {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Conpose => SelectorKind::Conpose,
            SelectorArg::Analytical => SelectorKind::Analytical,
            SelectorArg::Naive => SelectorKind::Naive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitializerArg {
    Llm,
    Greedy,
    Random,
}

impl From<InitializerArg> for InitializerKind {
    fn from(s: InitializerArg) -> Self {
        match s {
            InitializerArg::Llm => InitializerKind::Llm,
            InitializerArg::Greedy => InitializerKind::Greedy,
            InitializerArg::Random => InitializerKind::Random,
        }
    }
}

#[derive(Args)]
struct SceneArgs {
    /// Scenario JSON file or bundled scene name (scene-1 .. scene-5).
    #[arg(long, default_value = "scene-1")]
    scenario: String,
    /// Object shape; defaults to the scenario's own footprint.
    #[arg(long)]
    shape: Option<ShapeKind>,
    #[arg(long)]
    n_robots: Option<usize>,
}

impl SceneArgs {
    fn load(&self, cfg: &SimConfig) -> Result<Scenario> {
        let opts = LoadOptions { shape: self.shape, n_robots: self.n_robots, robot_radius: Some(cfg.robot_radius) };
        load_scenario(&self.scenario, &opts).map_err(config_error)
    }
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "conpose")]
    selector: SelectorArg,
    #[arg(long, value_enum, default_value = "greedy")]
    initializer: InitializerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of the pushing-direction slip noise (radians).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = conpose_core::selection::DEFAULT_I_MAX)]
    imax: usize,
    /// Evaluation cap for the analytical selector.
    #[arg(long, default_value_t = harness::DEFAULT_EVAL_CAP)]
    eval_budget: u128,
}

impl MethodArgs {
    fn sim_config(&self) -> Result<SimConfig> {
        let cfg = SimConfig { slip_noise_std: self.noise, rng_seed: self.seed, ..SimConfig::default() };
        cfg.validate().map_err(config_error)?;
        Ok(cfg)
    }

    fn llm(&self) -> Result<Option<Arc<LlmClient>>> {
        if !matches!(self.initializer, InitializerArg::Llm) {
            return Ok(None);
        }
        let cfg = LlmConfig::from_env().map_err(config_error)?;
        Ok(Some(Arc::new(LlmClient::new(cfg).map_err(config_error)?)))
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Write the plan as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Run record (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory samples as JSON lines.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Also render the episode to this SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Selectors to run, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["conpose", "analytical", "naive"])]
    selector: Vec<SelectorArg>,
    #[arg(long, value_enum, default_value = "greedy")]
    initializer: InitializerArg,
    #[arg(long, value_delimiter = ',', default_values = ["cuboid", "cylinder"])]
    shape: Vec<ShapeKind>,
    /// Scenes (bundled names or files), comma separated.
    #[arg(long, value_delimiter = ',')]
    scenario: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [3usize])]
    n_robots: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = conpose_core::selection::DEFAULT_I_MAX)]
    imax: usize,
    #[arg(long, default_value_t = harness::DEFAULT_EVAL_CAP)]
    eval_budget: u128,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Fill the mean_T_sel_wall_s column.
    #[arg(long)]
    wall_clock: bool,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregate table as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Run record written by `run --out`.
    #[arg(long)]
    record: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// What `run --out` writes; enough to reload the scene for rendering.
#[derive(Serialize, Deserialize)]
struct RunFile {
    scenario: String,
    shape: Option<ShapeKind>,
    n_robots: usize,
    selector: SelectorKind,
    initializer: InitializerKind,
    seed: u64,
    sim: SimConfig,
    record: EpisodeRecord,
}

fn config_error(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow::anyhow!("{e}")
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn plan(args: PlanArgs) -> Result<()> {
    let cfg = SimConfig::default();
    let scenario = args.scene.load(&cfg)?;
    let r_safety = scenario.footprint.circumradius() + cfg.safety_margin;
    let cm_cfg = CostmapConfig { resolution: cfg.costmap_resolution, ..CostmapConfig::new(r_safety) };
    let map = build_costmap(scenario.arena, &scenario.obstacles, &cm_cfg)?;
    let lethal = map.cost.iter().filter(|c| c.is_infinite()).count();
    let value = match plan_object_path(&map, scenario.start.position(), scenario.goal) {
        Ok(path) => {
            let keys: Vec<_> = rdp_indices(&path.waypoints, cfg.rdp_epsilon).into_iter().map(|i| path.waypoints[i]).collect();
            serde_json::json!({
                "scenario": scenario.name,
                "costmap": { "width": map.width, "height": map.height, "resolution": map.resolution, "lethal_cells": lethal },
                "path_cost": map.path_cost(&path.cells),
                "waypoints": path.waypoints,
                "key_waypoints": keys,
            })
        }
        Err(e) => serde_json::json!({ "scenario": scenario.name, "error": e.to_string() }),
    };
    write_json(&args.out, &value)
}

fn select(args: SelectArgs) -> Result<()> {
    let cfg = args.method.sim_config()?;
    let scenario = args.scene.load(&cfg)?;
    let llm = args.method.llm()?;
    let set = generate_contact_points(&scenario.footprint, cfg.w_min, cfg.robot_radius)?;
    let world = to_world(&set, &scenario.start);
    let r_safety = scenario.footprint.circumradius() + cfg.safety_margin;
    let cm_cfg = CostmapConfig { resolution: cfg.costmap_resolution, ..CostmapConfig::new(r_safety) };
    let map = build_costmap(scenario.arena, &scenario.obstacles, &cm_cfg)?;
    let path = plan_object_path(&map, scenario.start.position(), scenario.goal)?;
    let keys: Vec<_> = rdp_indices(&path.waypoints, cfg.rdp_epsilon).into_iter().map(|i| path.waypoints[i]).collect();
    let wp = *keys.get(1).unwrap_or(&scenario.goal);
    let pos = scenario.start.position();
    let phi = target_direction(pos, wp)?;
    let epsilon = angular_tolerance(cfg.d_repl, pos.distance(wp));
    let mut selector = harness::make_selector(
        args.method.selector.into(),
        args.method.initializer.into(),
        args.method.seed,
        args.method.imax,
        Some(args.method.eval_budget),
        llm.as_ref(),
    )?;
    let request = SelectionRequest { candidates: &world, target_phi: phi, epsilon, n: scenario.n_robots() };
    let value = match selector.select(&request) {
        Ok(outcome) => serde_json::json!({
            "target_phi": phi,
            "epsilon": epsilon,
            "m": world.len(),
            "outcome": outcome,
        }),
        Err(e) => serde_json::json!({ "target_phi": phi, "epsilon": epsilon, "m": world.len(), "error": e.to_string() }),
    };
    write_json(&args.out, &value)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.method.sim_config()?;
    let scenario = args.scene.load(&cfg)?;
    let llm = args.method.llm()?;
    let mut selector = harness::make_selector(
        args.method.selector.into(),
        args.method.initializer.into(),
        args.method.seed,
        args.method.imax,
        Some(args.method.eval_budget),
        llm.as_ref(),
    )?;
    let record = if args.wall_clock {
        run_episode(&scenario.setup(), &mut selector, &cfg, &WallClock::default())
    } else {
        run_episode(&scenario.setup(), &mut selector, &cfg, &NullClock)
    };
    eprintln!(
        "{}: success={} Z={} T_exe={:.1}s mean T_sw={:.1}s{}",
        scenario.name,
        record.success,
        record.z,
        record.t_exe,
        record.mean_switch_time(),
        record.failure_cause.as_ref().map(|c| format!(" failure={}", c.label())).unwrap_or_default()
    );
    if let Some(p) = &args.trajectory {
        write_trajectory_jsonl(&record, BufWriter::new(File::create(p)?))?;
    }
    if let Some(p) = &args.svg {
        render_episode(&record, &scenario, cfg.w_min, cfg.robot_radius, p)?;
    }
    let file = RunFile {
        scenario: args.scene.scenario.clone(),
        shape: args.scene.shape,
        n_robots: scenario.n_robots(),
        selector: selector.kind,
        initializer: selector.initializer_kind(),
        seed: args.method.seed,
        sim: cfg,
        record,
    };
    if args.out.is_some() {
        write_json(&args.out, &file)?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let sim = SimConfig::default();
    sim.validate().map_err(config_error)?;
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        bail!("--noise must be non-negative, got {}", args.noise);
    }
    let initializer: InitializerKind = args.initializer.into();
    let llm = if initializer == InitializerKind::Llm {
        let c = LlmConfig::from_env().map_err(config_error)?;
        Some(Arc::new(LlmClient::new(c).map_err(config_error)?))
    } else {
        None
    };
    let scenes = if args.scenario.is_empty() {
        BUNDLED_SCENES.iter().map(|s| s.to_string()).collect()
    } else {
        args.scenario.clone()
    };
    let cfg = BenchConfig {
        selectors: args.selector.iter().map(|&s| s.into()).collect(),
        initializer,
        shapes: args.shape.clone(),
        scenes,
        n_values: args.n_robots.clone(),
        repetitions: args.reps,
        seed: args.seed,
        noise: args.noise,
        i_max: args.imax,
        eval_cap: args.eval_budget,
        workers: args.workers,
        wall_clock: args.wall_clock,
        sim,
        llm,
    };
    let report = harness::run_benchmark(&cfg)?;
    let mut out = output(&args.out)?;
    report.write_csv(&mut out)?;
    out.flush()?;
    eprint!("{}", report.summary());
    if args.summary.is_some() {
        write_json(&args.summary, &serde_json::json!({ "aggregates": report.aggregates, "skipped": report.skipped }))?;
    }
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.record).with_context(|| format!("reading {}", args.record.display()))?;
    let file: RunFile = serde_json::from_str(&text).map_err(config_error)?;
    let opts = LoadOptions { shape: file.shape, n_robots: Some(file.n_robots), robot_radius: Some(file.sim.robot_radius) };
    let scenario = load_scenario(&file.scenario, &opts).map_err(config_error)?;
    render_episode(&file.record, &scenario, file.sim.w_min, file.sim.robot_radius, &args.out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => plan(a),
        Command::Select(a) => select(a),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Render(a) => render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // episode failures land in the record; anything reaching here is a bad flag, file or path
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
    }
}
