//! Benchmark orchestration: methods × shapes × scenes × fleet sizes.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use conpose_core::geometry::generate_contact_points;
use conpose_core::selection::{
    binomial, GreedyInitializer, Initializer, InitializerKind, RandomInitializer, Selector, SelectorKind,
    DEFAULT_I_MAX,
};
use conpose_core::sim::{run_episode, Clock, EpisodeRecord, NullClock, SimConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;
use thiserror::Error;

use crate::llm::{LlmClient, LlmInitializer};
use crate::scenario::{load_scenario, LoadOptions, Scenario, ScenarioError, ShapeKind, BUNDLED_SCENES};

pub const DEFAULT_EVAL_CAP: u128 = 10_000_000;

pub const CSV_HEADER: [&str; 13] = [
    "selector",
    "initializer",
    "shape",
    "scene",
    "N",
    "seed",
    "success",
    "Z",
    "mean_T_sel_evals",
    "mean_T_sel_wall_s",
    "T_exe_s",
    "mean_T_sw_s",
    "failure_cause",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("initializer `llm` requested but no LLM client configured")]
    NoLlmClient,
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Monotonic wall clock for selection timing.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub selectors: Vec<SelectorKind>,
    pub initializer: InitializerKind,
    pub shapes: Vec<ShapeKind>,
    /// Bundled scene names or scenario file paths.
    pub scenes: Vec<String>,
    pub n_values: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub noise: f64,
    pub i_max: usize,
    /// Analytical cells with C(M, N) above this are skipped.
    pub eval_cap: u128,
    pub workers: usize,
    pub wall_clock: bool,
    pub sim: SimConfig,
    pub llm: Option<Arc<LlmClient>>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            selectors: vec![SelectorKind::Conpose, SelectorKind::Analytical, SelectorKind::Naive],
            initializer: InitializerKind::Greedy,
            shapes: vec![ShapeKind::Cuboid, ShapeKind::Cylinder],
            scenes: BUNDLED_SCENES.iter().map(|s| s.to_string()).collect(),
            n_values: vec![3],
            repetitions: 1,
            seed: 0,
            noise: 0.0,
            i_max: DEFAULT_I_MAX,
            eval_cap: DEFAULT_EVAL_CAP,
            workers: 0,
            wall_clock: false,
            sim: SimConfig::default(),
            llm: None,
        }
    }
}

/// One benchmark episode: the cell coordinates plus the repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub selector: SelectorKind,
    pub initializer: InitializerKind,
    pub shape: ShapeKind,
    pub scene: String,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub selector: SelectorKind,
    pub shape: ShapeKind,
    pub scene: String,
    pub n: usize,
    pub m: usize,
    pub combinations: u128,
    pub reason: SkipReason,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub selector: SelectorKind,
    pub initializer: InitializerKind,
    pub shape: ShapeKind,
    pub scene: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub success: bool,
    #[serde(rename = "Z")]
    pub z: usize,
    #[serde(rename = "mean_T_sel_evals")]
    pub mean_t_sel_evals: f64,
    #[serde(rename = "mean_T_sel_wall_s")]
    pub mean_t_sel_wall_s: Option<f64>,
    #[serde(rename = "T_exe_s")]
    pub t_exe_s: f64,
    #[serde(rename = "mean_T_sw_s")]
    pub mean_t_sw_s: f64,
    pub failure_cause: String,
}

impl EpisodeRow {
    pub fn from_record(spec: &EpisodeSpec, record: &EpisodeRecord, wall_clock: bool) -> Self {
        Self {
            selector: spec.selector,
            initializer: spec.initializer,
            shape: spec.shape,
            scene: spec.scene.clone(),
            n: spec.n,
            seed: spec.seed,
            success: record.success,
            z: record.z,
            mean_t_sel_evals: record.mean_evaluations(),
            mean_t_sel_wall_s: wall_clock.then(|| record.mean_selection_wall()),
            t_exe_s: record.t_exe,
            mean_t_sw_s: record.mean_switch_time(),
            failure_cause: record.failure_cause.as_ref().map(|c| c.label().to_string()).unwrap_or_default(),
        }
    }
}

/// Mean and sample standard deviation; `std` is NaN below two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        Self { mean: values.mean(), std: values.std_dev() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.mean.is_nan() {
            f.write_str("-")
        } else if self.std.is_nan() {
            write!(f, "{:.2}", self.mean)
        } else {
            write!(f, "{:.2} ± {:.2}", self.mean, self.std)
        }
    }
}

/// Per (selector, initializer, shape, N) summary. Timing and Z statistics
/// are over successful episodes only; SR is over all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub selector: SelectorKind,
    pub initializer: InitializerKind,
    pub shape: ShapeKind,
    pub n: usize,
    pub episodes: usize,
    pub successes: usize,
    pub sr: f64,
    pub t_exe: MeanStd,
    pub z: MeanStd,
    pub t_sel_evals: MeanStd,
    pub t_sw: MeanStd,
}

pub fn aggregate(rows: &[EpisodeRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(SelectorKind, InitializerKind, ShapeKind, usize)> = Vec::new();
    for r in rows {
        let k = (r.selector, r.initializer, r.shape, r.n);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(selector, initializer, shape, n)| {
            let cell: Vec<&EpisodeRow> = rows
                .iter()
                .filter(|r| r.selector == selector && r.initializer == initializer && r.shape == shape && r.n == n)
                .collect();
            let ok: Vec<&&EpisodeRow> = cell.iter().filter(|r| r.success).collect();
            let col = |f: fn(&EpisodeRow) -> f64| MeanStd::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            Aggregate {
                selector,
                initializer,
                shape,
                n,
                episodes: cell.len(),
                successes: ok.len(),
                sr: ok.len() as f64 / cell.len() as f64,
                t_exe: col(|r| r.t_exe_s),
                z: col(|r| r.z as f64),
                t_sel_evals: col(|r| r.mean_t_sel_evals),
                t_sw: col(|r| r.mean_t_sw_s),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<EpisodeRow>,
    pub skipped: Vec<SkippedCell>,
    pub aggregates: Vec<Aggregate>,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        write_csv(&self.rows, out)
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::from("selector\tinitializer\tshape\tN\tSR\tT_exe_s\tZ\tT_sel_evals\tT_sw_s\n");
        for a in &self.aggregates {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}/{} ({:.2})\t{}\t{}\t{}\t{}\n",
                a.selector, a.initializer, a.shape, a.n, a.successes, a.episodes, a.sr, a.t_exe, a.z, a.t_sel_evals, a.t_sw
            ));
        }
        for k in &self.skipped {
            s.push_str(&format!(
                "skipped {} {} {} N={}: C({}, {}) = {} ({:?})\n",
                k.selector, k.shape, k.scene, k.n, k.m, k.n, k.combinations, k.reason
            ));
        }
        s
    }
}

pub fn write_csv<W: Write>(rows: &[EpisodeRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Seed of repetition `rep`; shared by every cell so methods face the same streams.
pub fn episode_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add(rep as u64)
}

pub fn make_initializer(
    kind: InitializerKind,
    seed: u64,
    llm: Option<&Arc<LlmClient>>,
) -> Result<Box<dyn Initializer + Send>, HarnessError> {
    Ok(match kind {
        InitializerKind::Greedy | InitializerKind::None => Box::new(GreedyInitializer),
        InitializerKind::Random => Box::new(RandomInitializer::new(seed)),
        InitializerKind::Llm => Box::new(LlmInitializer::new(llm.ok_or(HarnessError::NoLlmClient)?.clone())),
    })
}

pub fn make_selector(
    kind: SelectorKind,
    initializer: InitializerKind,
    seed: u64,
    i_max: usize,
    eval_cap: Option<u128>,
    llm: Option<&Arc<LlmClient>>,
) -> Result<Selector, HarnessError> {
    Ok(Selector::new(kind, make_initializer(initializer, seed, llm)?, seed).with_i_max(i_max).with_eval_budget(eval_cap))
}

/// Loads a scene by bundled name or path with the given shape and fleet size.
pub fn load_cell(scene: &str, shape: ShapeKind, n: usize, robot_radius: f64) -> Result<Scenario, ScenarioError> {
    load_scenario(
        scene,
        &LoadOptions { shape: Some(shape), n_robots: Some(n), robot_radius: Some(robot_radius) },
    )
}

/// Runs one episode for a scenario with the benchmark's settings.
pub fn run_cell(
    scenario: &Scenario,
    spec: &EpisodeSpec,
    cfg: &BenchConfig,
) -> Result<EpisodeRecord, HarnessError> {
    let mut sim = cfg.sim.clone();
    sim.slip_noise_std = cfg.noise;
    sim.rng_seed = spec.seed;
    let mut selector =
        make_selector(spec.selector, spec.initializer, spec.seed, cfg.i_max, Some(cfg.eval_cap), cfg.llm.as_ref())?;
    let record = if cfg.wall_clock {
        run_episode(&scenario.setup(), &mut selector, &sim, &WallClock::default())
    } else {
        run_episode(&scenario.setup(), &mut selector, &sim, &NullClock)
    };
    Ok(record)
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport, HarnessError> {
    if cfg.repetitions == 0 || cfg.n_values.is_empty() || cfg.selectors.is_empty() {
        return Err(HarnessError::Config("empty benchmark matrix".into()));
    }
    if cfg.initializer == InitializerKind::Llm && cfg.llm.is_none() {
        return Err(HarnessError::NoLlmClient);
    }
    cfg.sim.validate().map_err(|e| HarnessError::Config(e.to_string()))?;

    let mut jobs: Vec<(Arc<Scenario>, EpisodeSpec)> = Vec::new();
    let mut skipped = Vec::new();
    for &shape in &cfg.shapes {
        for scene in &cfg.scenes {
            for &n in &cfg.n_values {
                let scenario = Arc::new(load_cell(scene, shape, n, cfg.sim.robot_radius)?);
                let m = generate_contact_points(&scenario.footprint, cfg.sim.w_min, cfg.sim.robot_radius)
                    .map(|c| c.len())
                    .unwrap_or(0);
                for &selector in &cfg.selectors {
                    let combinations = if m >= n { binomial(m as u64, n as u64) } else { 0 };
                    if selector == SelectorKind::Analytical && combinations > cfg.eval_cap {
                        log::info!("skipping analytical {shape} {scene} N={n}: C({m}, {n}) = {combinations}");
                        skipped.push(SkippedCell {
                            selector,
                            shape,
                            scene: scene.clone(),
                            n,
                            m,
                            combinations,
                            reason: SkipReason::BudgetExceeded,
                        });
                        continue;
                    }
                    let initializer =
                        if selector == SelectorKind::Analytical { InitializerKind::None } else { cfg.initializer };
                    for rep in 0..cfg.repetitions {
                        let spec = EpisodeSpec {
                            selector,
                            initializer,
                            shape,
                            scene: scene.clone(),
                            n,
                            seed: episode_seed(cfg.seed, rep),
                        };
                        jobs.push((scenario.clone(), spec));
                    }
                }
            }
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        builder = builder.num_threads(cfg.workers);
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let rows: Vec<EpisodeRow> = pool.install(|| {
        jobs.par_iter()
            .map(|(scenario, spec)| {
                let record = run_cell(scenario, spec, cfg)?;
                log::info!(
                    "{} {} {} N={} seed={}: success={} Z={} T_exe={:.1}",
                    spec.selector,
                    spec.shape,
                    spec.scene,
                    spec.n,
                    spec.seed,
                    record.success,
                    record.z,
                    record.t_exe
                );
                Ok(EpisodeRow::from_record(spec, &record, cfg.wall_clock))
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let aggregates = aggregate(&rows);
    Ok(BenchReport { rows, skipped, aggregates })
}
