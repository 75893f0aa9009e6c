use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use s2h_core::commands::{
    cmd_complete, cmd_eval, cmd_gen_dataset, cmd_sample, cmd_train, DatasetIndex, ModelBundle, ObjectSource, RunConfig, SampleOptions,
    SplitMode,
};
use s2h_core::diffusion::NormalizationSpec;
use s2h_core::formats::{
    encode_s2p, read_bytes, read_grasps, read_json, read_s2p, sibling, write_grasps, write_obj, write_s2p, GraspRecord, SceneManifest,
    SplitFile,
};
use s2h_core::geometry::shapes::cuboid;
use s2h_core::geometry::{Plane, Point3, RigidTransform, TriMesh};
use s2h_core::hand::{build_capsule_hand, HandParams};
use s2h_core::losses::kept_completion;
use s2h_core::toy::toy_grasp_candidates;
use s2h_core::Error;

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Toy objects, one pose, one training and one held-out view.
fn small_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::toy();
    cfg.dataset = dir.join("dataset");
    cfg.seed = 5;
    cfg.epochs = 2;
    cfg.gen.poses_per_object = 1;
    cfg.gen.views = Some(vec![13, 14]);
    cfg
}

/// A dataset generated once and shared by the read-only tests.
fn shared() -> &'static (RunConfig, PathBuf) {
    static DATA: OnceLock<(RunConfig, PathBuf)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = work_dir("pipeline_shared");
        let cfg = small_config(&dir);
        cmd_gen_dataset(&cfg, &cfg.dataset).unwrap();
        (cfg, dir)
    })
}

fn manifest(dataset: &Path, scene: &str) -> (PathBuf, SceneManifest) {
    let p = dataset.join("scenes").join(scene).join("manifest.json");
    let m = read_json(&p).unwrap();
    (p, m)
}

fn first_test_cloud(cfg: &RunConfig) -> (PathBuf, PathBuf, SceneManifest) {
    let split: SplitFile = read_json(&cfg.dataset.join("splits").join(SplitMode::View.file_name())).unwrap();
    let e = &split.test[0];
    let (mp, m) = manifest(&cfg.dataset, &e.scene);
    let cloud = sibling(&mp, &format!("view_{:02}.s2p", e.camera));
    (mp, cloud, m)
}

fn fresh_bundle(cfg: &RunConfig, seed: u64) -> ModelBundle {
    let spec = NormalizationSpec::with_scene_box(Point3::from(cfg.scene_center), Point3::from(cfg.scene_half_extent));
    ModelBundle::new(
        &cfg.net,
        seed,
        build_capsule_hand(cfg.hand_seed),
        &spec,
        cfg.schedule.build().unwrap(),
        cfg.merge.merge_threshold,
    )
    .unwrap()
}

#[test]
fn external_object_with_defaults() {
    let dir = work_dir("pipeline_external");
    let mesh = cuboid(Point3::new(0.06, 0.05, 0.04));
    let hand = build_capsule_hand(0);
    let grasps: Vec<GraspRecord> = toy_grasp_candidates(&hand, &mesh).unwrap().iter().map(GraspRecord::new).collect();
    write_obj(&dir.join("block.obj"), &mesh).unwrap();
    write_grasps(&dir.join("block.json"), &grasps).unwrap();
    std::fs::write(dir.join("broken.obj"), "v 0 0 0\nf 1 2 3\n").unwrap();
    let mut cfg = RunConfig::default();
    cfg.dataset = dir.join("dataset");
    cfg.gen.n_object = 128;
    cfg.gen.n_table = 64;
    cfg.gen.complete_points = 128;
    cfg.gen.objects = vec![
        ObjectSource {
            id: "block".into(),
            category: 1,
            mesh: dir.join("block.obj"),
            grasps: dir.join("block.json"),
        },
        ObjectSource {
            id: "broken".into(),
            category: 0,
            mesh: dir.join("broken.obj"),
            grasps: dir.join("block.json"),
        },
    ];
    let summary = cmd_gen_dataset(&cfg, &cfg.dataset).unwrap();
    assert!(summary.clouds <= 360);
    assert!(summary.clouds > 0);
    assert_eq!(summary.scenes + summary.dropped_scenes, 10);
    assert_eq!(summary.clouds, 36 * summary.scenes);
    assert_eq!(summary.skipped_objects.len(), 1);
    assert_eq!(summary.skipped_objects[0].0, "broken");
    let index: DatasetIndex = read_json(&cfg.dataset.join("dataset.json")).unwrap();
    assert_eq!(index.scenes.len(), summary.scenes);
    let views: usize = index
        .scenes
        .iter()
        .map(|s| {
            let p = cfg.dataset.join(s);
            let m: SceneManifest = read_json(&p).unwrap();
            for v in &m.views {
                assert!(sibling(&p, &v.cloud).exists());
            }
            m.views.len()
        })
        .sum();
    assert_eq!(views, summary.clouds);

    cfg.gen.objects.remove(0);
    let again = dir.join("empty");
    assert!(cmd_gen_dataset(&cfg, &again).is_err());
}

#[test]
fn split_definitions() {
    let (cfg, _) = shared();
    let object_of = |scene: &str| manifest(&cfg.dataset, scene).1.object_id;
    let ids = |entries: &[s2h_core::formats::SplitEntry]| entries.iter().map(|e| object_of(&e.scene)).collect::<BTreeSet<_>>();
    let index: DatasetIndex = read_json(&cfg.dataset.join("dataset.json")).unwrap();
    let all: BTreeSet<String> = index.objects.iter().map(|o| o.id.clone()).collect();

    let view: SplitFile = read_json(&cfg.dataset.join("splits").join("view.json")).unwrap();
    assert_eq!(ids(&view.train), all);
    assert_eq!(ids(&view.test), all);
    assert!(view.train.iter().all(|e| !cfg.gen.test_views.contains(&e.camera)));
    assert!(view.test.iter().all(|e| cfg.gen.test_views.contains(&e.camera)));

    let object: SplitFile = read_json(&cfg.dataset.join("splits").join("object.json")).unwrap();
    let (train, test) = (ids(&object.train), ids(&object.test));
    assert!(!train.is_empty() && !test.is_empty());
    assert!(train.is_disjoint(&test));
    assert_eq!(train.union(&test).cloned().collect::<BTreeSet<_>>(), all);
}

#[test]
fn training_resumes_and_reproduces() {
    let (base, _) = shared();
    let dir = work_dir("pipeline_resume");
    let cfg = base.clone();

    let full = dir.join("full.s2hm");
    let a = cmd_train(&cfg, &full).unwrap();
    assert_eq!(a.epochs.len(), 2);
    assert_eq!(a.complete_reads_diffusion, 0);
    assert!(a.complete_reads_perception > 0);

    let again = dir.join("again.s2hm");
    let b = cmd_train(&cfg, &again).unwrap();
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(read_bytes(&full).unwrap(), read_bytes(&again).unwrap());

    let half = dir.join("half.s2hm");
    let mut first = cfg.clone();
    first.epochs = 1;
    let h = cmd_train(&first, &half).unwrap();
    let per_epoch = h.step_losses.len();
    assert_eq!(h.step_losses[..], a.step_losses[..per_epoch]);

    let mut rest = cfg.clone();
    rest.resume = Some(half.clone());
    let resumed = dir.join("resumed.s2hm");
    let r = cmd_train(&rest, &resumed).unwrap();
    assert_eq!(r.epochs.len(), 1);
    assert_eq!(r.epochs[0].epoch, 1);
    assert_eq!(r.step_losses[0], a.step_losses[per_epoch]);
    assert_eq!(r.step_losses[..], a.step_losses[per_epoch..]);
    assert_eq!(read_bytes(&resumed).unwrap(), read_bytes(&full).unwrap());
}

#[test]
fn sampling_is_seeded_and_honors_the_oracle() {
    let (cfg, _) = shared();
    let dir = work_dir("pipeline_sample");
    let (_, cloud, _) = first_test_cloud(cfg);
    let model = dir.join("fresh.s2hm");
    fresh_bundle(cfg, 3).write(&model).unwrap();

    let opts = SampleOptions {
        n: 10,
        steps: 8,
        eta: 0.0,
        seed: 7,
    };
    let (f1, f2) = (dir.join("a.json"), dir.join("b.json"));
    cmd_sample(&model, &cloud, &opts, &f1).unwrap();
    cmd_sample(&model, &cloud, &opts, &f2).unwrap();
    assert_eq!(read_bytes(&f1).unwrap(), read_bytes(&f2).unwrap());

    let stochastic = SampleOptions { eta: 1.0, ..opts };
    let records = cmd_sample(&model, &cloud, &stochastic, &dir.join("c.json")).unwrap();
    assert_eq!(records.len(), 10);
    let distinct: BTreeSet<Vec<u64>> = records.iter().map(|r| r.params.iter().map(|v| v.to_bits()).collect()).collect();
    assert!(distinct.len() >= 2);
    let seeds: BTreeSet<u64> = records.iter().map(|r| r.seed.unwrap()).collect();
    assert_eq!(seeds.len(), 10);

    let mut stub = fresh_bundle(cfg, 3);
    let mut target = HandParams::default();
    target.set_wrist(Point3::new(0.1, -0.2, 0.3), Point3::new(0.01, 0.02, 0.05));
    stub.oracle = Some(target);
    let stub_path = dir.join("stub.s2hm");
    stub.write(&stub_path).unwrap();
    let target = ModelBundle::read(&stub_path).unwrap().oracle.unwrap();
    for eta in [0.0, 1.0] {
        let out = cmd_sample(&stub_path, &cloud, &SampleOptions { eta, ..opts }, &dir.join("d.json")).unwrap();
        for r in &out {
            for (a, b) in r.params.iter().zip(target.as_slice()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    assert!(matches!(
        cmd_sample(&model, &cloud, &SampleOptions { n: 0, ..opts }, &dir.join("e.json")),
        Err(Error::Config(_))
    ));
    assert!(cmd_sample(&model, &model, &opts, &dir.join("f.json")).is_err());
    assert!(cmd_sample(&cloud, &cloud, &opts, &dir.join("g.json")).is_err());
}

#[test]
fn completion_merges_and_roundtrips() {
    let (cfg, _) = shared();
    let dir = work_dir("pipeline_complete");
    let (_, cloud_path, _) = first_test_cloud(cfg);
    let model = dir.join("fresh.s2hm");
    let bundle = fresh_bundle(cfg, 4);
    bundle.write(&model).unwrap();
    let out = dir.join("merged.s2p");
    let merged = cmd_complete(&model, &cloud_path, &out).unwrap();

    let cloud = read_s2p(&cloud_path).unwrap();
    let f_s = s2h_core::nn::encode_scene(&bundle.net, &bundle.params, &cloud, &bundle.spec).unwrap();
    let completion = s2h_core::nn::gsp_complete(&bundle.net, &bundle.params, &f_s, &bundle.spec).unwrap();
    let kept = kept_completion(cloud.points(), completion.points(), bundle.merge_threshold).unwrap();
    assert_eq!(merged.len(), cloud.len() + kept.len());
    assert_eq!(&merged.points()[..cloud.len()], cloud.points());
    let labels = merged.labels().unwrap();
    assert!(labels[cloud.len()..].iter().all(|&l| l == s2h_core::scene::LABEL_OBJECT));

    let back = read_s2p(&out).unwrap();
    assert_eq!(encode_s2p(&back), read_bytes(&out).unwrap());
    let rewritten = dir.join("rewritten.s2p");
    write_s2p(&rewritten, &back).unwrap();
    assert_eq!(read_bytes(&rewritten).unwrap(), read_bytes(&out).unwrap());
}

/// Toy candidates around a cube, and the same grasps pushed `depth` toward
/// its center.
fn eval_fixture(dir: &Path, depth: f64) -> (PathBuf, PathBuf, PathBuf) {
    let cube = cuboid(Point3::new(0.06, 0.06, 0.06));
    let hand = build_capsule_hand(0);
    let clean = toy_grasp_candidates(&hand, &cube).unwrap();
    let pushed: Vec<HandParams> = clean
        .iter()
        .map(|g| {
            let dir = -g.wrist_translation().normalize();
            g.transformed(&RigidTransform::from_axis_angle(&Point3::zeros(), dir * depth))
        })
        .collect();
    let obj = dir.join("cube.obj");
    write_obj(&obj, &cube).unwrap();
    let (a, b) = (dir.join("clean.json"), dir.join("pushed.json"));
    write_grasps(&a, &clean.iter().map(GraspRecord::new).collect::<Vec<_>>()).unwrap();
    write_grasps(&b, &pushed.iter().map(GraspRecord::new).collect::<Vec<_>>()).unwrap();
    (obj, a, b)
}

fn keys(v: &serde_json::Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn eval_report_schema_and_ordering() {
    let dir = work_dir("pipeline_eval");
    let (obj, clean, pushed) = eval_fixture(&dir, 0.015);
    let hand = build_capsule_hand(0);
    let cfg = RunConfig::default();
    let plane = Plane::horizontal(-1.0);
    let out = dir.join("report.json");
    let report = cmd_eval(&[clean.clone()], &obj, &plane, &hand, &cfg.eval, Some(&out)).unwrap();

    let v: serde_json::Value = read_json(&out).unwrap();
    assert_eq!(keys(&v), set(&["penetration", "displace", "contact_ratio_pct", "diversity"]));
    assert_eq!(keys(&v["penetration"]), set(&["depth_cm", "volume_cm3"]));
    assert_eq!(keys(&v["displace"]), set(&["mean_cm", "var_cm"]));
    assert_eq!(keys(&v["diversity"]), set(&["axis", "angle"]));
    assert!(v["contact_ratio_pct"].is_number());
    assert_eq!(serde_json::to_value(&report).unwrap(), v);

    let deep = cmd_eval(&[pushed.clone()], &obj, &plane, &hand, &cfg.eval, None).unwrap();
    assert!(deep.penetration.volume_cm3 > report.penetration.volume_cm3);
    assert!(deep.penetration.depth_cm > report.penetration.depth_cm);

    let both = cmd_eval(&[clean.clone(), pushed.clone()], &obj, &plane, &hand, &cfg.eval, None).unwrap();
    let n_clean = read_grasps(&clean).unwrap().len() as f64;
    let n_pushed = read_grasps(&pushed).unwrap().len() as f64;
    let pooled = (report.penetration.volume_cm3 * n_clean + deep.penetration.volume_cm3 * n_pushed) / (n_clean + n_pushed);
    assert!((both.penetration.volume_cm3 - pooled).abs() < 1e-9 * pooled.max(1.0));

    let empty = dir.join("empty.json");
    write_grasps(&empty, &[]).unwrap();
    assert!(matches!(
        cmd_eval(&[empty], &obj, &plane, &hand, &cfg.eval, None),
        Err(Error::Empty(_))
    ));
    assert!(cmd_eval(&[dir.join("missing.json")], &obj, &plane, &hand, &cfg.eval, None).is_err());
    assert!(cmd_eval(&[clean], &dir.join("missing.obj"), &plane, &hand, &cfg.eval, None).is_err());
}

#[test]
fn posed_scene_mesh_matches_manifest() {
    let (cfg, _) = shared();
    let index: DatasetIndex = read_json(&cfg.dataset.join("dataset.json")).unwrap();
    for s in &index.scenes {
        let p = cfg.dataset.join(s);
        let m: SceneManifest = read_json(&p).unwrap();
        let entry = index.objects.iter().find(|o| o.id == m.object_id).unwrap();
        let object: TriMesh = s2h_core::formats::read_obj(&cfg.dataset.join(&entry.mesh)).unwrap();
        let posed = s2h_core::formats::read_obj(&sibling(&p, &m.object_mesh)).unwrap();
        let moved = object.transformed(&m.pose().unwrap());
        for (a, b) in moved.vertices().iter().zip(posed.vertices()) {
            assert!((a - b).norm() < 1e-6);
        }
        let plane = m.table_plane.to_plane().unwrap();
        let lowest = posed
            .vertices()
            .iter()
            .map(|v| plane.signed_distance(v))
            .fold(f64::INFINITY, f64::min);
        assert!(lowest.abs() < 1e-4, "{s}: lowest vertex {lowest} from the table");
        m.grasp().unwrap();
    }
}
