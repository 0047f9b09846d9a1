use conpose::harness::{run_benchmark, BenchConfig, CSV_HEADER};
use conpose::render::render_svg;
use conpose::scenario::{load_scenario, LoadOptions, ShapeKind};
use conpose_core::selection::{InitializerKind, SelectorKind};
use conpose_core::sim::{run_episode, NullClock, SimConfig};

fn small() -> BenchConfig {
    BenchConfig {
        selectors: vec![SelectorKind::Conpose, SelectorKind::Naive],
        initializer: InitializerKind::Random,
        shapes: vec![ShapeKind::Cuboid, ShapeKind::Tshape],
        scenes: vec!["scene-2".into(), "scene-4".into()],
        repetitions: 3,
        noise: 0.05,
        seed: 5,
        ..BenchConfig::default()
    }
}

fn csv_bytes(cfg: &BenchConfig) -> Vec<u8> {
    let mut out = Vec::new();
    run_benchmark(cfg).unwrap().write_csv(&mut out).unwrap();
    out
}

#[test]
fn greedy_cuboid_five_scenes() {
    let cfg = BenchConfig { selectors: vec![SelectorKind::Conpose], shapes: vec![ShapeKind::Cuboid], ..BenchConfig::default() };
    let report = run_benchmark(&cfg).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert_eq!(report.aggregates.len(), 1);
    let a = &report.aggregates[0];
    assert_eq!(a.episodes, 5);
    assert_eq!(a.sr, a.successes as f64 / 5.0);
}

#[test]
fn csv_is_deterministic_across_worker_counts() {
    let one = csv_bytes(&BenchConfig { workers: 1, ..small() });
    let many = csv_bytes(&BenchConfig { workers: 4, ..small() });
    assert_eq!(one, many);
}

#[test]
fn aggregates_match_recomputation_from_csv() {
    let cfg = small();
    let report = run_benchmark(&cfg).unwrap();
    let bytes = csv_bytes(&cfg);
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 2 * 2 * 2 * 3);

    for a in &report.aggregates {
        let cell: Vec<&csv::StringRecord> = records
            .iter()
            .filter(|r| r[0] == *a.selector.to_string() && r[2] == *a.shape.to_string() && r[4] == *a.n.to_string())
            .collect();
        assert_eq!(cell.len(), a.episodes);
        let ok: Vec<&&csv::StringRecord> = cell.iter().filter(|r| &r[6] == "true").collect();
        let sr = ok.len() as f64 / cell.len() as f64;
        assert!((0.0..=1.0).contains(&a.sr));
        assert_eq!(sr, a.sr);
        for (col, stat) in [(7, a.z), (10, a.t_exe), (8, a.t_sel_evals), (11, a.t_sw)] {
            let xs: Vec<f64> = ok.iter().map(|r| r[col].parse::<f64>().unwrap()).collect();
            if xs.is_empty() {
                assert!(stat.mean.is_nan());
                continue;
            }
            let k = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / k;
            assert!((mean - stat.mean).abs() <= 1e-9 * mean.abs().max(1.0), "column {col}");
            if xs.len() > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
                assert!((var.sqrt() - stat.std).abs() <= 1e-9 * var.sqrt().max(1.0), "column {col}");
            }
        }
    }
    for r in &records {
        assert_eq!(&r[9], "", "wall-clock column is blank by default");
    }
}

#[test]
fn wall_clock_column_filled_when_requested() {
    let cfg = BenchConfig {
        selectors: vec![SelectorKind::Conpose],
        shapes: vec![ShapeKind::Cylinder],
        scenes: vec!["scene-1".into()],
        wall_clock: true,
        ..BenchConfig::default()
    };
    let report = run_benchmark(&cfg).unwrap();
    assert!(report.rows[0].mean_t_sel_wall_s.is_some_and(|w| w >= 0.0));
}

fn svg_for(scene: &str, shape: ShapeKind) -> (String, usize) {
    let cfg = SimConfig::default();
    let scenario = load_scenario(scene, &LoadOptions { shape: Some(shape), ..LoadOptions::default() }).unwrap();
    let mut selector = conpose::harness::make_selector(SelectorKind::Conpose, InitializerKind::Greedy, 0, 5, None, None).unwrap();
    let record = run_episode(&scenario.setup(), &mut selector, &cfg, &NullClock);
    assert!(record.success);
    (render_svg(&record, &scenario, cfg.w_min, cfg.robot_radius), scenario.n_robots())
}

#[test]
fn render_parses_and_has_annotations() {
    let (svg, n) = svg_for("scene-1", ShapeKind::Cuboid);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let robots = doc.descendants().filter(|e| e.has_tag_name("polyline") && e.attribute("class") == Some("robot")).count();
    assert_eq!(robots, n);
    let group = |id: &str| doc.descendants().find(|e| e.attribute("id") == Some(id)).unwrap();
    assert!(group("planned-path").children().filter(|e| e.has_tag_name("circle")).count() > 10);
    assert!(group("key-waypoints").children().filter(|e| e.has_tag_name("polygon")).count() >= 2);
    let labels: Vec<&str> = group("candidates").children().filter(|e| e.has_tag_name("text")).filter_map(|e| e.text()).collect();
    assert_eq!(labels.first(), Some(&"0"));
    assert!(doc.descendants().any(|e| e.attribute("id") == Some("object-trajectory")));
}

#[test]
fn render_degenerate_record_is_static_scene() {
    let cfg = SimConfig::default();
    let mut scenario = load_scenario("scene-2", &LoadOptions::default()).unwrap();
    scenario.goal = scenario.start.position();
    let mut selector = conpose::harness::make_selector(SelectorKind::Conpose, InitializerKind::Greedy, 0, 5, None, None).unwrap();
    let record = run_episode(&scenario.setup(), &mut selector, &cfg, &NullClock);
    assert_eq!(record.z, 0);
    assert!(record.trajectory.is_empty());
    let svg = render_svg(&record, &scenario, cfg.w_min, cfg.robot_radius);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert!(doc.descendants().all(|e| !e.has_tag_name("polyline")));
    assert!(doc.descendants().any(|e| e.attribute("id") == Some("obstacles")));
}
