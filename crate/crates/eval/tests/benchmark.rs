use std::collections::HashMap;

use nbv_core::planning::{GainMode, SamplerKind};
use nbv_core::WorldKind;
use nbv_eval::benchmark::is_timing_column;
use nbv_eval::pareto::read_benchmark_csv;
use nbv_eval::{pareto_report, run_benchmark, BenchmarkConfig, EvalError, ModelPaths, VariantConfig, WorldSource};

fn variant(name: &str, sampler: SamplerKind, gain_mode: GainMode, n: &[usize]) -> VariantConfig {
    VariantConfig {
        name: name.into(),
        sampler,
        gain_mode,
        n_samples: n.to_vec(),
        yaw_bins: None,
    }
}

fn config(worlds: usize, repeats: usize, budget: usize) -> BenchmarkConfig {
    BenchmarkConfig {
        seed: 3,
        variants: vec![variant("uniform", SamplerKind::Uniform, GainMode::Raycast, &[1, 5])],
        worlds: vec![WorldSource::Generated {
            kind: WorldKind::Maze,
            count: worlds,
            seed: 808,
            first: 0,
        }],
        repeats,
        step_budget: budget,
        ..BenchmarkConfig::default()
    }
}

fn strip_timing(csv_text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = r.headers().unwrap().clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| !is_timing_column(&headers[i])).collect();
    let mut rows = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in r.records() {
        let rec = rec.unwrap();
        rows.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    rows
}

#[test]
fn episode_counts_follow_worlds_starts_and_repeats() {
    let results = run_benchmark(&config(5, 3, 3)).unwrap();
    assert_eq!(results.rows.len(), 2);
    for row in &results.rows {
        assert_eq!(row.episodes, 15);
    }
    assert_eq!(results.episodes.len(), 30);

    let mut cfg = config(2, 1, 3);
    cfg.starts_per_world = 2;
    let results = run_benchmark(&cfg).unwrap();
    assert!(results.rows.iter().all(|r| r.episodes == 4));
    // Distinct start poses, shared across variants.
    let starts: Vec<(String, usize, u64)> = results
        .episodes
        .iter()
        .filter(|e| e.n_samples == 1)
        .map(|e| (e.world.clone(), e.start_index, e.seed))
        .collect();
    let others: Vec<(String, usize, u64)> = results
        .episodes
        .iter()
        .filter(|e| e.n_samples == 5)
        .map(|e| (e.world.clone(), e.start_index, e.seed))
        .collect();
    assert_eq!(starts, others);
}

#[test]
fn deviations_are_zero_for_a_single_episode() {
    let results = run_benchmark(&config(1, 1, 40)).unwrap();
    for row in &results.rows {
        assert_eq!(row.episodes, 1);
        for stat in [
            row.distance,
            row.true_utility,
            row.compute_per_step,
            row.compute_per_episode,
            row.objective,
        ]
        .into_iter()
        .flatten()
        {
            assert_eq!(stat.1, 0.0);
        }
        for (_, t, _) in &row.time_to_target {
            if let Some((_, s)) = t {
                assert_eq!(*s, 0.0);
            }
        }
    }
}

#[test]
fn csv_is_deterministic_apart_from_timing_columns() {
    let cfg = config(2, 2, 25);
    let run = || {
        let r = run_benchmark(&cfg).unwrap();
        let mut rows = Vec::new();
        r.write_rows_csv(&mut rows).unwrap();
        let mut eps = Vec::new();
        r.write_episodes_csv(&mut eps).unwrap();
        (String::from_utf8(rows).unwrap(), String::from_utf8(eps).unwrap())
    };
    let (a_rows, a_eps) = run();
    let (b_rows, b_eps) = run();
    assert_eq!(strip_timing(&a_rows), strip_timing(&b_rows));
    assert_eq!(strip_timing(&a_eps), strip_timing(&b_eps));
    let header = &strip_timing(&a_rows)[0];
    for col in [
        "variant",
        "n_samples",
        "episodes",
        "time_to_90_mean",
        "time_to_99_std",
        "true_utility_mean",
    ] {
        assert!(header.iter().any(|h| h == col), "missing {col}");
    }
    assert_eq!(strip_timing(&a_eps).len(), 1 + 8);
}

#[test]
fn missing_models_are_listed() {
    let mut cfg = config(1, 1, 5);
    cfg.variants
        .push(variant("cvae", SamplerKind::Cvae, GainMode::LearnedMlp, &[1]));
    cfg.models = ModelPaths {
        cvae: Some("/nonexistent/cvae.bin".into()),
        ..ModelPaths::default()
    };
    match run_benchmark(&cfg) {
        Err(EvalError::MissingArtifacts(list)) => {
            let text = list.join("; ");
            assert!(text.contains("/nonexistent/cvae.bin"), "{text}");
            assert!(text.contains("gain_mlp"), "{text}");
        }
        other => panic!("expected missing artifacts, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = config(1, 0, 5);
    assert!(matches!(run_benchmark(&cfg), Err(EvalError::Config(_))));
    cfg.repeats = 1;
    cfg.coverage_targets = vec![0.0];
    assert!(matches!(run_benchmark(&cfg), Err(EvalError::Config(_))));
}

#[test]
fn toml_config_parses_with_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.toml");
    std::fs::write(
        &path,
        r#"
seed = 7
repeats = 2
coverage_targets = [0.5, 0.9]
gamma = 2.0

[models]
cvae = "models/cvae.bin"

[[variants]]
name = "uniform"
sampler = "uniform"
gain_mode = "raycast"
n_samples = [1, 10]

[[worlds]]
kind = "maze"
count = 4
seed = 11

[[worlds]]
path = "w.bin"
start = [1.0, 2.0, 0.5]
"#,
    )
    .unwrap();
    let cfg = BenchmarkConfig::from_file(&path).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.variants[0].n_samples, [1, 10]);
    assert_eq!(
        cfg.models.cvae.as_deref(),
        Some(dir.path().join("models/cvae.bin").as_path())
    );
    assert!(
        matches!(cfg.worlds[1], WorldSource::File { ref path, start: Some([1.0, 2.0, 0.5]) } if path == &dir.path().join("w.bin"))
    );
    assert!(matches!(
        cfg.worlds[0],
        WorldSource::Generated { count: 4, seed: 11, .. }
    ));
    cfg.validate().unwrap();
}

#[test]
fn pareto_reads_benchmark_output() {
    let mut cfg = config(1, 1, 500);
    cfg.variants[0].n_samples = vec![1, 10];
    let results = run_benchmark(&cfg).unwrap();
    let mut buf = Vec::new();
    results.write_rows_csv(&mut buf).unwrap();
    let rows = read_benchmark_csv(&buf[..], 0.9).unwrap();
    assert_eq!(rows.len(), 2);
    let report = pareto_report(&rows);
    assert_eq!(report.points.len(), 2);
    assert!(report.excluded.is_empty());
    assert!(report.points.iter().any(|p| p.pareto_optimal));
    let by_n: HashMap<usize, f64> = rows.iter().filter_map(|r| r.time.map(|t| (r.n_samples, t))).collect();
    assert!(by_n.values().all(|t| *t > 0.0));
    assert!(read_benchmark_csv(&buf[..], 0.75).is_err());
}
