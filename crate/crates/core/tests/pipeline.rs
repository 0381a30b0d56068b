use std::fs;
use std::path::{Path, PathBuf};

use focal_petr::cost_model::HeadConfig;
use focal_petr::encoding::EncodingMode;
use focal_petr::harness::dump::write_token_table;
use focal_petr::harness::{generate_scene, run_pipeline, RunOptions, SceneConfig, ScoreSource, SyntheticScene};
use focal_petr::numeric::DenseMatrix;
use focal_petr::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn small_scene(seed: u64) -> SyntheticScene {
    generate_scene(&SceneConfig { seed, ..Default::default() }).unwrap()
}

#[test]
fn reference_head_fixture_matches_builtin() {
    let cfg = HeadConfig::from_json_file(&fixture("reference_head.json")).unwrap();
    assert_eq!(cfg, HeadConfig::reference_scale());
}

#[test]
fn scene_fixture_is_reproduced_byte_for_byte() {
    let golden = fs::read_to_string(fixture("scene_seed7.json")).unwrap();
    assert_eq!(small_scene(7).to_json().unwrap(), golden);
    let read = SyntheticScene::read(&fixture("scene_seed7.json")).unwrap();
    assert_eq!(read, small_scene(7));
}

#[test]
fn scene_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let scene = small_scene(21);
    scene.write(&path).unwrap();
    assert_eq!(SyntheticScene::read(&path).unwrap(), scene);
}

#[test]
fn unknown_scene_fields_are_rejected_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, "{\n  \"seed\": 1,\n  \"bogus\": 2\n}\n").unwrap();
    match SceneConfig::from_json_file(&path) {
        Err(Error::Input { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected input error, got {other:?}"),
    }
}

fn oracle_score_csv(scene: &SyntheticScene) -> String {
    let out = run_pipeline(scene, &RunOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_token_table(&out.truth, &out.maps, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn score_file_reproduces_oracle_run() {
    let scene = small_scene(4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    fs::write(&path, oracle_score_csv(&scene)).unwrap();
    let from_file = run_pipeline(&scene, &RunOptions { scores: ScoreSource::File(path), ..Default::default() }).unwrap();
    let oracle = run_pipeline(&scene, &RunOptions::default()).unwrap();
    assert_eq!(from_file.maps, oracle.maps);
    assert_eq!(from_file.kv, oracle.kv);
}

fn score_file_error(contents: &str) -> Error {
    let scene = small_scene(4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    fs::write(&path, contents).unwrap();
    run_pipeline(&scene, &RunOptions { scores: ScoreSource::File(path), ..Default::default() }).unwrap_err()
}

#[test]
fn malformed_score_files_report_the_line() {
    let good = oracle_score_csv(&small_scene(4));
    let lines: Vec<&str> = good.lines().collect();

    let mut dup = lines.clone();
    dup.insert(2, lines[1]);
    match score_file_error(&dup.join("\n")) {
        Error::Input { line, message, .. } => {
            assert_eq!(line, 3);
            assert!(message.contains("duplicate"), "{message}");
        }
        e => panic!("{e:?}"),
    }

    let mut bad = lines.clone();
    let replaced = lines[5].replacen(",0,", ",999,", 1);
    bad[5] = &replaced;
    assert!(matches!(score_file_error(&bad.join("\n")), Error::Input { line: 6, .. }));

    let truncated = lines[..lines.len() - 1].join("\n");
    match score_file_error(&truncated) {
        Error::Input { message, .. } => assert!(message.contains("no score"), "{message}"),
        e => panic!("{e:?}"),
    }

    let mut out_of_range = lines.clone();
    let row: Vec<&str> = lines[3].split(',').collect();
    let patched = format!("{},{},{},1.5,{}", row[0], row[1], row[2], row[4]);
    out_of_range[3] = &patched;
    assert!(matches!(score_file_error(&out_of_range.join("\n")), Error::Input { line: 4, .. }));
}

#[test]
fn missing_score_file_is_an_io_error() {
    let scene = small_scene(4);
    let opts = RunOptions { scores: ScoreSource::File("/nonexistent/scores.csv".into()), ..Default::default() };
    let e = run_pipeline(&scene, &opts).unwrap_err();
    assert!(matches!(e, Error::Io { .. }), "{e:?}");
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn sampled_count_follows_ratio() {
    let scene = small_scene(2);
    for rho in [0.1, 0.25, 0.5, 1.0] {
        let out = run_pipeline(&scene, &RunOptions { rho: Some(rho), ..Default::default() }).unwrap();
        let r = &out.report;
        assert_eq!(r.sampled_tokens, (rho * r.total_tokens as f64).ceil() as usize);
        assert_eq!(out.maps.sampled.iter().filter(|&&s| s).count(), r.sampled_tokens);
        assert_eq!(out.kv.keys.rows(), r.sampled_tokens);
        for attn in &out.trace.attention {
            assert_eq!(attn.cols(), r.sampled_tokens);
        }
    }
}

#[test]
fn petr_values_are_raw_sampled_features() {
    let scene = small_scene(2);
    let out = run_pipeline(&scene, &RunOptions { mode: EncodingMode::Petr, rho: Some(0.25), ..Default::default() })
        .unwrap();
    assert!(out.aligned.is_none());
    let grids: Vec<&DenseMatrix> = out.grids.iter().map(|g| &g.features).collect();
    let raw = DenseMatrix::vstack(&grids).unwrap().select_rows(&out.maps.sampled_indices()).unwrap();
    assert_eq!(out.kv.values, raw);
    assert_eq!(out.kv.keys.rows(), out.report.sampled_tokens);
}

#[test]
fn invalid_overrides_are_config_errors() {
    let scene = small_scene(0);
    for opts in [
        RunOptions { rho: Some(0.0), ..Default::default() },
        RunOptions { rho: Some(1.5), ..Default::default() },
        RunOptions { alpha: Some(-0.1), ..Default::default() },
    ] {
        let e = run_pipeline(&scene, &opts).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e:?}");
    }
}

#[test]
fn reports_serialize_deterministically() {
    let scene = small_scene(13);
    let opts = RunOptions { scores: ScoreSource::Random, ..Default::default() };
    let a = run_pipeline(&scene, &opts).unwrap().report.to_json().unwrap();
    let b = run_pipeline(&scene, &opts).unwrap().report.to_json().unwrap();
    assert_eq!(a, b);
    assert!(a.ends_with('\n'));
}
