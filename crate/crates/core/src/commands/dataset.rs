use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, RunConfig};
use crate::formats::{
    read_grasps, read_obj, write_json, write_obj, write_s2p, PlaneRecord, SceneManifest, SplitEntry, SplitFile, ViewRecord,
};
use crate::geometry::{Plane, PointSet, TriMesh};
use crate::hand::{build_capsule_hand, HandModel, HandParams};
use crate::scene::{backproject, camera_ring, filter_grasps, render, sample_scene_cloud, stable_pose, Camera, SceneInstance};
use crate::toy::{toy_objects, toy_top_grasp};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: String,
    pub category: usize,
    /// Object-frame mesh, relative to the dataset root.
    pub mesh: String,
}

/// Top-level `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub objects: Vec<ObjectEntry>,
    /// Scene manifests, relative to the dataset root.
    pub scenes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub scenes: usize,
    pub clouds: usize,
    pub dropped_scenes: usize,
    /// `(object id, reason)` of objects that could not be loaded.
    pub skipped_objects: Vec<(String, String)>,
}

struct LoadedObject {
    id: String,
    category: usize,
    mesh: TriMesh,
    /// Object-frame candidates, or `None` when candidates are generated on
    /// the posed object.
    candidates: Option<Vec<HandParams>>,
}

struct GeneratedScene {
    manifest: SceneManifest,
    clouds: Vec<(String, PointSet)>,
    complete: PointSet,
    posed: TriMesh,
}

fn load_objects(cfg: &RunConfig) -> (Vec<LoadedObject>, Vec<(String, String)>) {
    if cfg.gen.toy {
        let objs = toy_objects()
            .into_iter()
            .map(|o| LoadedObject {
                id: o.id,
                category: o.category,
                mesh: o.mesh,
                candidates: None,
            })
            .collect();
        return (objs, Vec::new());
    }
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for src in &cfg.gen.objects {
        let loaded = read_obj(&src.mesh).and_then(|mesh| {
            mesh.ensure_watertight()?;
            let candidates = read_grasps(&src.grasps)?
                .iter()
                .map(|g| g.hand_params())
                .collect::<Result<Vec<_>>>()?;
            Ok((mesh, candidates))
        });
        match loaded {
            Ok((mesh, candidates)) => ok.push(LoadedObject {
                id: src.id.clone(),
                category: src.category,
                mesh,
                candidates: Some(candidates),
            }),
            Err(e) => {
                log::warn!("skipping object {}: {e}", src.id);
                skipped.push((src.id.clone(), e.to_string()));
            }
        }
    }
    (ok, skipped)
}

fn generate_scene(
    cfg: &RunConfig,
    model: &HandModel,
    cams: &[(usize, Camera)],
    obj: &LoadedObject,
    obj_idx: usize,
    pose_idx: usize,
) -> Result<GeneratedScene> {
    let gen = &cfg.gen;
    let pose = stable_pose(&obj.mesh, derive_seed(cfg.seed, &[obj_idx as u64, pose_idx as u64, 0]))?;
    let scene = SceneInstance::new(obj.mesh.clone(), pose, Plane::horizontal(0.0), gen.table_half_extent)?;
    let posed_grasps: Vec<HandParams> = match &obj.candidates {
        Some(c) => c.iter().map(|g| g.transformed(&pose)).collect(),
        None => toy_top_grasp(model, &scene.posed_object())?,
    };
    if posed_grasps.is_empty() {
        return Err(Error::NoCollisionFreeGrasp);
    }
    let (_, grasp) = filter_grasps(&posed_grasps, &scene, model)?;
    let scene_id = format!("{}_p{pose_idx:02}", obj.id);
    let mut clouds = Vec::new();
    let mut views = Vec::new();
    for &(cam_id, cam) in cams {
        let (depth, labels) = render(&scene, &cam);
        let seed = derive_seed(cfg.seed, &[obj_idx as u64, pose_idx as u64, 1, cam_id as u64]);
        let cloud = backproject(&depth, &cam, &labels).and_then(|c| sample_scene_cloud(&c, gen.n_object, gen.n_table, seed));
        match cloud {
            Ok(c) => {
                let name = format!("view_{cam_id:02}.s2p");
                views.push(ViewRecord {
                    camera: cam_id,
                    cloud: name.clone(),
                });
                clouds.push((name, c));
            }
            Err(Error::LabelExhausted(what)) => log::debug!("{scene_id} camera {cam_id}: no {what} points"),
            Err(e) => return Err(e),
        }
    }
    if views.is_empty() {
        return Err(Error::LabelExhausted("object in every view"));
    }
    let posed = scene.posed_object();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[obj_idx as u64, pose_idx as u64, 2]));
    let complete = PointSet::new(posed.sample_surface(gen.complete_points, &mut rng))?;
    let manifest = SceneManifest {
        scene_id,
        object_id: obj.id.clone(),
        category: obj.category,
        pose: pose.to_rows(),
        grasp: grasp.0.to_vec(),
        table_plane: PlaneRecord::from_plane(&scene.table),
        table_half_extent: gen.table_half_extent,
        views,
        complete_cloud: "complete.s2p".into(),
        object_mesh: "object.obj".into(),
    };
    Ok(GeneratedScene {
        manifest,
        clouds,
        complete,
        posed,
    })
}

fn test_objects(cfg: &RunConfig, ids: &[String]) -> BTreeSet<String> {
    match &cfg.gen.test_objects {
        Some(t) => t.iter().cloned().collect(),
        None => ids
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 5 == 4)
            .map(|(_, id)| id.clone())
            .collect(),
    }
}

/// Renders every object in `poses_per_object` resting poses from each
/// configured camera and writes clouds, manifests, splits and the index
/// under `out`.
pub fn cmd_gen_dataset(cfg: &RunConfig, out: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    let model = build_capsule_hand(cfg.hand_seed);
    let ring = camera_ring(&cfg.gen.ring)?;
    let ids: Vec<usize> = cfg.gen.views.clone().unwrap_or_else(|| (0..ring.len()).collect());
    if let Some(&bad) = ids.iter().find(|&&i| i >= ring.len()) {
        return Err(Error::Config(format!("camera id {bad} out of range 0..{}", ring.len())));
    }
    let cams: Vec<(usize, Camera)> = ids.iter().map(|&i| (i, ring[i])).collect();
    let (objects, skipped_objects) = load_objects(cfg);

    let jobs: Vec<(usize, usize)> = (0..objects.len())
        .flat_map(|o| (0..cfg.gen.poses_per_object).map(move |p| (o, p)))
        .collect();
    let results: Vec<Result<GeneratedScene>> = jobs
        .par_iter()
        .map(|&(o, p)| generate_scene(cfg, &model, &cams, &objects[o], o, p))
        .collect();

    let mut scenes = Vec::new();
    let mut dropped = 0;
    for (r, &(o, p)) in results.into_iter().zip(&jobs) {
        match r {
            Ok(s) => scenes.push(s),
            Err(e @ (Error::NoCollisionFreeGrasp | Error::LabelExhausted(_) | Error::Empty(_))) => {
                log::info!("dropping {} pose {p}: {e}", objects[o].id);
                dropped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if scenes.is_empty() {
        return Err(Error::Empty("generated dataset"));
    }

    let mut entries = Vec::new();
    for o in &objects {
        let rel = format!("objects/{}.obj", o.id);
        write_obj(&out.join(&rel), &o.mesh)?;
        entries.push(ObjectEntry {
            id: o.id.clone(),
            category: o.category,
            mesh: rel,
        });
    }
    let mut manifests = Vec::new();
    let mut clouds = 0;
    for s in &scenes {
        let dir = out.join("scenes").join(&s.manifest.scene_id);
        for (name, c) in &s.clouds {
            write_s2p(&dir.join(name), c)?;
        }
        clouds += s.clouds.len();
        write_s2p(&dir.join(&s.manifest.complete_cloud), &s.complete)?;
        write_obj(&dir.join(&s.manifest.object_mesh), &s.posed)?;
        write_json(&dir.join("manifest.json"), &s.manifest)?;
        manifests.push(format!("scenes/{}/manifest.json", s.manifest.scene_id));
    }

    let held_views: BTreeSet<usize> = cfg.gen.test_views.iter().copied().collect();
    let object_ids: Vec<String> = objects.iter().map(|o| o.id.clone()).collect();
    let held_objects = test_objects(cfg, &object_ids);
    let (mut view_split, mut object_split) = (SplitFile::default(), SplitFile::default());
    for s in &scenes {
        for v in &s.manifest.views {
            let e = SplitEntry {
                scene: s.manifest.scene_id.clone(),
                camera: v.camera,
            };
            let vs = if held_views.contains(&v.camera) {
                &mut view_split.test
            } else {
                &mut view_split.train
            };
            vs.push(e.clone());
            let os = if held_objects.contains(&s.manifest.object_id) {
                &mut object_split.test
            } else {
                &mut object_split.train
            };
            os.push(e);
        }
    }
    write_json(&out.join("splits/view.json"), &view_split)?;
    write_json(&out.join("splits/object.json"), &object_split)?;
    write_json(
        &out.join("dataset.json"),
        &DatasetIndex {
            objects: entries,
            scenes: manifests,
        },
    )?;
    log::info!("wrote {} scenes, {clouds} clouds, dropped {dropped}", scenes.len());
    Ok(GenSummary {
        scenes: scenes.len(),
        clouds,
        dropped_scenes: dropped,
        skipped_objects,
    })
}
