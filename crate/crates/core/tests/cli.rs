use std::path::Path;
use std::process::{Command, Output};

use bevbench::detect::{Detection, DetectionFile};
use bevbench::scene::Scene;

fn bevbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let o = bevbench(&["sweep", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_exits_0() {
    let o = bevbench(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["gen", "render", "degrade", "detect", "eval", "sweep"] {
        assert!(stdout(&o).contains(sub));
    }
}

#[test]
fn missing_config_exits_1_naming_the_path() {
    let o = bevbench(&["sweep", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.cfg"), "{}", stderr(&o));
}

#[test]
fn malformed_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"n_scenes": 0}"#).unwrap();
    let o = bevbench(&["sweep", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"not_a_field": 1}"#).unwrap();
    let o = bevbench(&["gen", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn runtime_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bevbench(&["detect", "--input", path(&dir.path().join("nothing-here"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn eval_of_ground_truth_as_detections_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let o = bevbench(&["gen", "--count", "2", "--seed", "11", "--out", path(&scenes)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut args = vec!["eval".to_string(), "--scene".into()];
    let mut dets = vec!["--dets".to_string()];
    for i in 0..2 {
        let scene_path = scenes.join(format!("scene_{i:04}.json"));
        let scene = Scene::load(&scene_path).unwrap();
        assert!(!scene.objects.is_empty());
        let perfect: Vec<Detection> = scene
            .objects
            .iter()
            .enumerate()
            .map(|(k, g)| Detection {
                center: g.center,
                size: g.size,
                yaw: g.yaw,
                velocity: g.velocity,
                class_label: g.class_label,
                score: 1.0 - k as f64 * 0.01,
            })
            .collect();
        let det_path = dir.path().join(format!("dets_{i}.json"));
        DetectionFile::new(scene.scene_id.clone(), perfect).save(&det_path).unwrap();
        args.push(path(&scene_path).to_string());
        dets.push(path(&det_path).to_string());
    }
    args.extend(dets);
    args.extend(["--out".to_string(), path(dir.path()).to_string()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = bevbench(&refs);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("mAP=1.0000"), "{}", stdout(&o));
    assert!(stdout(&o).contains("NDS=1.0000"), "{}", stdout(&o));
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["mAP"], 1.0);
}

#[test]
fn render_degrade_detect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    assert!(bevbench(&["gen", "--count", "1", "--seed", "5", "--out", path(&scenes)]).status.success());
    let scene = scenes.join("scene_0000.json");

    let rendered = dir.path().join("rendered");
    let o = bevbench(&["render", "--scene", path(&scene), "--out", path(&rendered)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(rendered.join("lidar.bin").is_file());

    let degraded = dir.path().join("degraded");
    let o = bevbench(&[
        "degrade",
        "--input",
        path(&rendered),
        "--lidar-drop",
        "0.5",
        "--camera-coverage",
        "0.3",
        "--out",
        path(&degraded),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kept = bevbench::sensors::read_point_cloud(&degraded.join("lidar.bin")).unwrap();
    let full = bevbench::sensors::read_point_cloud(&rendered.join("lidar.bin")).unwrap();
    assert_eq!(kept.len(), bevbench::degrade::retained_count(full.len(), 0.5));

    let o = bevbench(&["degrade", "--input", path(&rendered), "--lidar-drop", "1.5", "--out", path(&degraded)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let out = dir.path().join("dets");
    let o = bevbench(&["detect", "--input", path(&degraded), "--mode", "L", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let file = DetectionFile::load(&out.join("detections.json")).unwrap();
    assert_eq!(file.scene_id, Scene::load(&scene).unwrap().scene_id);
}

#[test]
fn sweep_writes_reports_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"n_scenes": 2, "sensor_modes": ["L"], "lidar_levels": [0.0, 0.9],
            "scene": {"count_range": [2, 4]}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = bevbench(&["sweep", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.csv", "report.md", "report.json", "manifest.json", "timings.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.to_string().contains("report.csv"));
}

#[test]
fn shipped_default_config_matches_builtin_defaults() {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let loaded = bevbench::harness::ExperimentConfig::load(&p).unwrap();
    assert_eq!(loaded.to_json(), bevbench::harness::ExperimentConfig::default().to_json());
}
