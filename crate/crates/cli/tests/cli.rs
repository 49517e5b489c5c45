use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn handfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handfit"))
        .args(args)
        .env_remove("HANDFIT_MODEL")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, cases: usize, extra: &str) -> String {
    let cfg = dir.join("synth.json");
    fs::write(&cfg, format!(r#"{{"seed": 11, "sample_count": {cases}{extra}}}"#)).unwrap();
    let data = dir.join("data");
    let out = handfit(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data.to_str().unwrap().to_string()
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {line}"))
        .parse()
        .unwrap()
}

#[test]
fn perspective_fit_writes_mesh_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, r#", "pose_noise_sigma": 0.1"#);
    let mesh = dir.path().join("out/hand.obj");
    let report = dir.path().join("out/fit.json");
    let out = handfit(&[
        "fit",
        "--keypoints",
        &format!("{data}/case_00000.obs.json"),
        "--camera",
        &format!("{data}/camera.json"),
        "--init",
        &format!("{data}/case_00000.init.json"),
        "--out-mesh",
        mesh.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let line = stdout(&out);
    assert!(field(&line, "s_star") > 0.0);
    assert!(field(&line, "elapsed_ms") >= 0.0);

    let obj = fs::read_to_string(&mesh).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("v ")));
    assert!(obj.lines().any(|l| l.starts_with("f ")));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let trace = json["energy_trace"].as_array().unwrap();
    assert_eq!(trace.len(), 20);
    assert!(trace.last().unwrap().as_f64().unwrap() < json["initial_energy"].as_f64().unwrap());
    assert_eq!(json["final_energy"].as_f64().unwrap(), field(&line, "final_energy"));
}

#[test]
fn weak_mode_needs_no_camera() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1, "");
    let out = handfit(&[
        "fit",
        "--keypoints",
        &format!("{data}/case_00000.obs.json"),
        "--weak",
        "--iters",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("mode=weak"));
    assert!(field(&stdout(&out), "s_star") > 0.0);
}

#[test]
fn missing_camera_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1, "");
    let out = handfit(&["fit", "--keypoints", &format!("{data}/case_00000.obs.json")]);
    assert_eq!(code(&out), 1);
    assert_eq!(stderr(&out).lines().count(), 1);
    assert!(stdout(&out).is_empty());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&handfit(&[])), 1);
    assert_eq!(code(&handfit(&["frobnicate"])), 1);
    assert_eq!(code(&handfit(&["fit", "--weak"])), 1);
    assert_eq!(code(&handfit(&["gradcheck", "--trials", "many"])), 1);
    assert_eq!(code(&handfit(&["--help"])), 0);
    assert_eq!(code(&handfit(&["--version"])), 0);
}

#[test]
fn corrupt_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1, "");
    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "{ not json").unwrap();
    let g = garbage.to_str().unwrap();

    let out = handfit(&["fit", "--keypoints", g, "--weak"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stderr(&out).lines().count(), 1);

    let obs = format!("{data}/case_00000.obs.json");
    let out = handfit(&["fit", "--keypoints", &obs, "--camera", g]);
    assert_eq!(code(&out), 2);
    let out = handfit(&["fit", "--keypoints", &obs, "--weak", "--model", g]);
    assert_eq!(code(&out), 2);
    let out = handfit(&["fit", "--keypoints", &obs, "--weak", "--init", "/nonexistent/init.json"]);
    assert_eq!(code(&out), 2);

    // Twenty keypoints instead of 21.
    let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&obs).unwrap()).unwrap();
    value["keypoints"].as_array_mut().unwrap().pop();
    let short = dir.path().join("short.json");
    fs::write(&short, value.to_string()).unwrap();
    assert_eq!(
        code(&handfit(&["fit", "--keypoints", short.to_str().unwrap(), "--weak"])),
        2
    );
}

#[test]
fn degenerate_geometry_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1, "");
    let obs = format!("{data}/case_00000.obs.json");
    let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&obs).unwrap()).unwrap();
    // Every keypoint on the root pixel: the hand has no extent in the image.
    let root = value["keypoints"][0].clone();
    for kp in value["keypoints"].as_array_mut().unwrap() {
        *kp = root.clone();
    }
    let flat = dir.path().join("flat.json");
    fs::write(&flat, value.to_string()).unwrap();
    let out = handfit(&[
        "fit",
        "--keypoints",
        flat.to_str().unwrap(),
        "--camera",
        &format!("{data}/camera.json"),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert_eq!(stderr(&out).lines().count(), 1);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, "");
    let out_json = dir.path().join("metrics/self.json");
    let out = handfit(&[
        "eval",
        "--pred-dir",
        &data,
        "--gt-dir",
        &data,
        "--suffix",
        "gt",
        "--out",
        out_json.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(out_json.with_extension("csv")).unwrap();
    assert_eq!(csv, stdout(&out));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(&out_json).unwrap()).unwrap()["rows"]
            .as_array()
            .unwrap()
            .clone();
    let get = |metric: &str, range: &str| {
        rows.iter()
            .find(|r| r["metric"] == metric && r["range"] == range)
            .unwrap()["value"]
            .as_f64()
            .unwrap()
    };
    assert!(get("pa_mpjpe", "") < 1e-9);
    assert_eq!(get("auc", "20-50"), 1.0);
}

#[test]
fn eval_uses_the_metrics_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, r#", "pose_noise_sigma": 0.2"#);
    let fits = dir.path().join("fits");
    let out = handfit(&[
        "fit",
        "--dataset",
        &data,
        "--out-dir",
        fits.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("fitted=2"));
    let metrics = dir.path().join("metrics.json");
    fs::write(
        &metrics,
        r#"{"mm_per_unit": 1000.0, "auc_ranges": [[0.0, 30.0]], "pck_thresholds": [10.0]}"#,
    )
    .unwrap();
    let out_json = dir.path().join("eval.json");
    let out = handfit(&[
        "eval",
        "--pred-dir",
        fits.to_str().unwrap(),
        "--gt-dir",
        &data,
        "--metrics",
        metrics.to_str().unwrap(),
        "--out",
        out_json.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = stdout(&out);
    assert!(csv.contains("auc,0-30,"));
    assert!(csv.contains("pck,10,"));

    fs::write(&metrics, r#"{"auc_ranges": [[0.0, 30.0]]}"#).unwrap();
    let out = handfit(&[
        "eval",
        "--pred-dir",
        fits.to_str().unwrap(),
        "--gt-dir",
        &data,
        "--metrics",
        metrics.to_str().unwrap(),
        "--out",
        out_json.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_replays_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, r#", "keypoint_noise_px": 1.5"#);
    let again = dir.path().join("again");
    let out = handfit(&[
        "synth",
        "--config",
        &format!("{data}/manifest.json"),
        "--out-dir",
        again.to_str().unwrap(),
        "--jobs",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for entry in fs::read_dir(&data).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(again.join(name)).unwrap(),
            "{name:?}"
        );
    }

    let other = dir.path().join("other");
    let out = handfit(&[
        "synth",
        "--config",
        &format!("{data}/manifest.json"),
        "--out-dir",
        other.to_str().unwrap(),
        "--seed",
        "12",
    ]);
    assert_eq!(code(&out), 0);
    assert_ne!(
        fs::read(Path::new(&data).join("manifest.json")).unwrap(),
        fs::read(other.join("manifest.json")).unwrap()
    );
}

#[test]
fn synth_rejects_a_manifest_from_another_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1, "");
    let model = dir.path().join("model.json");
    assert_eq!(
        code(&handfit(&[
            "export-model",
            "--out",
            model.to_str().unwrap(),
            "--seed",
            "5",
            "--vertices",
            "128"
        ])),
        0
    );
    let out = handfit(&[
        "synth",
        "--config",
        &format!("{data}/manifest.json"),
        "--out-dir",
        dir.path().join("x").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_passes_and_fails_on_tolerance() {
    let out = handfit(&["gradcheck", "--trials", "10", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["failures"], 0);
    assert!(stderr(&out).contains("worst"));

    // A step of 0.5 is far outside the range where central differences are accurate.
    let out = handfit(&["gradcheck", "--trials", "3", "--eps", "0.5"]);
    assert_ne!(code(&out), 0);
    let diag = stderr(&out);
    assert_eq!(diag.lines().count(), 1);
    assert!(diag.contains("theta[") || diag.contains("beta["));
}

#[test]
fn model_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("small.json");
    assert_eq!(
        code(&handfit(&[
            "export-model",
            "--out",
            model.to_str().unwrap(),
            "--vertices",
            "96"
        ])),
        0
    );
    let mesh = dir.path().join("rest.obj");
    let out = Command::new(env!("CARGO_BIN_EXE_handfit"))
        .args(["export-mesh", "--out", mesh.to_str().unwrap()])
        .env("HANDFIT_MODEL", &model)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let vertices = field(&stdout(&out), "vertices") as usize;
    assert!(vertices <= 96);
    let obj = fs::read_to_string(&mesh).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), vertices);
}

#[test]
fn fit_is_reproducible_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1, r#", "pose_noise_sigma": 0.1"#);
    let run = |name: &str| {
        let report = dir.path().join(name);
        let out = handfit(&[
            "fit",
            "--keypoints",
            &format!("{data}/case_00000.obs.json"),
            "--camera",
            &format!("{data}/camera.json"),
            "--init",
            &format!("{data}/case_00000.init.json"),
            "--report",
            report.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
        assert!(v["timing"]["total_ms"].as_f64().unwrap() >= 0.0);
        v.as_object_mut().unwrap().remove("timing");
        v
    };
    assert_eq!(run("a.json"), run("b.json"));
}
