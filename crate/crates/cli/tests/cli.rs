use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use s2h_core::commands::RunConfig;
use s2h_core::formats::{read_bytes, read_json, write_grasps, write_json, write_obj, GraspRecord};
use s2h_core::geometry::shapes::cuboid;
use s2h_core::geometry::Point3;
use s2h_core::hand::build_capsule_hand;
use s2h_core::toy::toy_grasp_candidates;

fn s2h(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2h"))
        .args(args)
        .env("S2H_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A cube mesh and toy grasps around it.
fn eval_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let cube = cuboid(Point3::new(0.06, 0.06, 0.06));
    let hand = build_capsule_hand(0);
    let grasps: Vec<GraspRecord> = toy_grasp_candidates(&hand, &cube).unwrap().iter().map(GraspRecord::new).collect();
    let (obj, g) = (dir.join("cube.obj"), dir.join("grasps.json"));
    write_obj(&obj, &cube).unwrap();
    write_grasps(&g, &grasps).unwrap();
    (obj, g)
}

#[test]
fn eval_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let (obj, grasps) = eval_inputs(dir.path());
    let o = s2h(&["eval", "--grasps", s(&grasps), "--object", s(&obj), "--plane", "0,0,1,1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["penetration", "displace", "contact_ratio_pct", "diversity"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }

    let out = dir.path().join("report.json");
    let o = s2h(&["eval", "--grasps", s(&grasps), "--object", s(&obj), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let written: serde_json::Value = read_json(&out).unwrap();
    assert_eq!(written, v);
}

#[test]
fn eval_failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let (obj, grasps) = eval_inputs(dir.path());
    let empty = dir.path().join("empty.json");
    write_grasps(&empty, &[]).unwrap();

    let o = s2h(&["eval", "--grasps", s(&empty), "--object", s(&obj)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error"));

    let missing = dir.path().join("missing.json");
    let o = s2h(&["eval", "--grasps", s(&missing), "--object", s(&obj)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));

    let o = s2h(&["eval", "--grasps", s(&grasps), "--object", s(&dir.path().join("nope.obj"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope.obj"), "{}", stderr(&o));

    for plane in ["0,0,1", "0,0,0,0", "a,b,c,d"] {
        let o = s2h(&["eval", "--grasps", s(&grasps), "--object", s(&obj), "--plane", plane]);
        assert!(!o.status.success(), "plane {plane} accepted");
    }

    let o = s2h(&["eval", "--object", s(&obj)]);
    assert!(!o.status.success());
}

#[test]
fn commands_require_out() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x");
    for args in [
        vec!["train"],
        vec!["pretrain-gsp"],
        vec!["sample", "--model", s(&x), "--cloud", s(&x)],
        vec!["complete", "--model", s(&x), "--cloud", s(&x)],
    ] {
        let o = s2h(&args);
        assert!(!o.status.success());
        assert!(stderr(&o).contains("--out"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"split": "scene"}"#).unwrap();
    let o = s2h(&["--config", s(&cfg), "gen-dataset"]);
    assert!(!o.status.success());
    std::fs::write(&cfg, r#"{"resume": "gone.s2hm"}"#).unwrap();
    let o = s2h(&["--config", s(&cfg), "gen-dataset"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("gone.s2hm"), "{}", stderr(&o));
}

#[test]
fn shipped_toy_config_matches_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json");
    let cfg = RunConfig::load(&path).unwrap();
    let mut want = RunConfig::toy();
    want.dataset = cfg.dataset.clone();
    assert_eq!(cfg, want);
    assert!(cfg.dataset.ends_with("toy_dataset"));
}

#[test]
fn end_to_end_with_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = RunConfig::toy();
    cfg.dataset = PathBuf::from("data");
    cfg.epochs = 1;
    cfg.gsp_epochs = 1;
    cfg.gen.poses_per_object = 1;
    cfg.gen.views = Some(vec![13, 14]);
    let cfg_path = d.join("run.json");
    write_json(&cfg_path, &cfg).unwrap();
    let c = s(&cfg_path);

    let run = |args: &[&str]| {
        let mut all = vec!["--config", c];
        all.extend_from_slice(args);
        let o = s2h(&all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["gen-dataset"]);
    assert!(d.join("data").join("dataset.json").exists());
    let gsp = d.join("gsp.s2hm");
    run(&["pretrain-gsp", "--out", s(&gsp)]);
    let model = d.join("model.s2hm");
    run(&["train", "--out", s(&model)]);

    let scene = std::fs::read_dir(d.join("data").join("scenes"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let cloud = scene.join("view_14.s2p");
    let sample = |seed: &str, out: &Path| {
        run(&[
            "sample",
            "--model",
            s(&model),
            "--cloud",
            s(&cloud),
            "--n",
            "3",
            "--steps",
            "5",
            "--eta",
            "1",
            "--seed",
            seed,
            "--out",
            s(out),
        ])
    };
    let (a, b, c2) = (d.join("a.json"), d.join("b.json"), d.join("c.json"));
    sample("7", &a);
    sample("7", &b);
    sample("8", &c2);
    assert_eq!(read_bytes(&a).unwrap(), read_bytes(&b).unwrap());
    assert_ne!(read_bytes(&a).unwrap(), read_bytes(&c2).unwrap());
    assert_eq!(s2h_core::formats::read_grasps(&a).unwrap().len(), 3);

    let merged = d.join("merged.s2p");
    run(&["complete", "--model", s(&model), "--cloud", s(&cloud), "--out", s(&merged)]);
    let input = s2h_core::formats::read_s2p(&cloud).unwrap();
    assert!(s2h_core::formats::read_s2p(&merged).unwrap().len() >= input.len());

    let report = d.join("report.json");
    run(&[
        "eval",
        "--grasps",
        s(&a),
        "--object",
        s(&scene.join("object.obj")),
        "--model",
        s(&model),
        "--out",
        s(&report),
    ]);
    assert!(report.exists());
}
