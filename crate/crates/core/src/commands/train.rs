use std::cell::Cell;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use super::{derive_seed, RunConfig};
use crate::diffusion::{q_sample, NormalizationSpec};
use crate::formats::{read_json, read_s2p, sibling, SceneManifest, SplitFile};
use crate::geometry::{fit_plane, Plane, Point3, PointSet};
use crate::hand::{build_capsule_hand, hand_forward};
use crate::losses::{merge_completion, LossComponents, LossWeights, MergeConfig};
use crate::nn::ops::{chamfer_to, cmap_op, hand_vertices, penetration_op, plane_op, vertex_mse};
use crate::nn::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::scene::{LABEL_OBJECT, LABEL_TABLE};
use crate::{Error, Result};

/// Mean losses over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub lr: f64,
    /// Mean objective actually minimized.
    pub loss: f64,
    pub gsp_chamfer: f64,
    pub gcp_ce: f64,
    /// Weighted denoiser objective; 0 during pre-training.
    pub diffusion: f64,
    pub components: LossComponents,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochStats>,
    /// Mean batch objective of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Ground-truth complete-object reads made by the perception losses.
    pub complete_reads_perception: usize,
    /// Ground-truth complete-object reads made inside the denoiser losses.
    pub complete_reads_diffusion: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum Phase {
    #[default]
    Perception,
    Diffusion,
}

/// Counts ground-truth completion reads per phase of a training step.
#[derive(Debug, Default)]
struct Probe {
    phase: Cell<Phase>,
    perception: Cell<usize>,
    diffusion: Cell<usize>,
}

/// Ground-truth complete object, readable only through the probe.
struct GroundTruth(PointSet);

impl GroundTruth {
    fn read(&self, probe: &Probe) -> &PointSet {
        let c = match probe.phase.get() {
            Phase::Perception => &probe.perception,
            Phase::Diffusion => &probe.diffusion,
        };
        c.set(c.get() + 1);
        &self.0
    }
}

struct Sample {
    cloud: PointSet,
    plane: Plane,
    category: usize,
    h0: Vec<f64>,
    vertices: Vec<Point3>,
    complete: GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Gsp,
    Joint,
}

fn entry_manifest(dataset: &Path, scene: &str) -> PathBuf {
    dataset.join("scenes").join(scene).join("manifest.json")
}

fn load_samples(cfg: &RunConfig, bundle: &ModelBundle) -> Result<Vec<Sample>> {
    let split_path = cfg.dataset.join("splits").join(cfg.split.file_name());
    if !split_path.exists() {
        return Err(Error::Config(format!("dataset split {} does not exist", split_path.display())));
    }
    let split: SplitFile = read_json(&split_path)?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut out = Vec::with_capacity(split.train.len());
    for e in &split.train {
        let mpath = entry_manifest(&cfg.dataset, &e.scene);
        let m: SceneManifest = read_json(&mpath)?;
        let view = m
            .views
            .iter()
            .find(|v| v.camera == e.camera)
            .ok_or_else(|| Error::Format(format!("{} has no camera {}", m.scene_id, e.camera)))?;
        let cloud = read_s2p(&sibling(&mpath, &view.cloud))?;
        let table = cloud.select_label(LABEL_TABLE);
        let plane = fit_plane(table.points())?;
        let grasp = m.grasp()?;
        if m.category >= bundle.net.config.num_classes {
            return Err(Error::Config(format!(
                "category {} exceeds {} classes",
                m.category, bundle.net.config.num_classes
            )));
        }
        out.push(Sample {
            cloud,
            plane,
            category: m.category,
            h0: bundle.spec.normalize(&grasp).to_vec(),
            vertices: hand_forward(&bundle.hand, &grasp)?.vertices().to_vec(),
            complete: GroundTruth(read_s2p(&sibling(&mpath, &m.complete_cloud))?),
        });
    }
    Ok(out)
}

struct StepLoss {
    total: Var,
    gsp: f64,
    gcp: f64,
    diffusion: f64,
    components: LossComponents,
}

#[allow(clippy::too_many_arguments)]
fn sample_loss(
    g: &mut Graph,
    b: &ModelBundle,
    s: &Sample,
    stage: Stage,
    w: &LossWeights,
    merge: &MergeConfig,
    rng: &mut ChaCha8Rng,
    probe: &Probe,
) -> Result<StepLoss> {
    let spec = b.spec;
    let p = &b.params;
    probe.phase.set(Phase::Perception);
    let f_s = b.net.encode(g, p, &s.cloud, &spec)?;
    let completion = b.net.gsp(g, p, f_s, &spec)?;
    let l_gsp = chamfer_to(g, completion, s.complete.read(probe).points())?;
    let gsp = g.scalar(l_gsp);
    if stage == Stage::Gsp {
        return Ok(StepLoss {
            total: l_gsp,
            gsp,
            gcp: 0.0,
            diffusion: 0.0,
            components: LossComponents::default(),
        });
    }
    let logits = b.net.gcp(g, p, f_s)?;
    let l_gcp = g.cross_entropy(logits, s.category)?;

    probe.phase.set(Phase::Diffusion);
    let t = rng.random_range(1..=b.schedule.timesteps());
    let eps: Vec<f64> = (0..s.h0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let h_t = q_sample(&s.h0, t, &eps, &b.schedule)?;
    let pred = b.net.denoise(g, p, &h_t, t, &b.schedule, f_s, &b.hand, &spec)?;
    let target = g.input(Tensor::row(s.h0.clone()));
    let diff = g.sub(pred, target)?;
    let diff = g.abs(diff);
    let l_param = g.mean(diff);
    let (verts, _) = hand_vertices(g, &b.hand, &spec, pred)?;
    let l_v = vertex_mse(g, verts, &s.vertices)?;
    // The merged cloud is built from the detached completion.
    let completed: Vec<Point3> = g
        .value(completion)
        .data()
        .chunks_exact(3)
        .map(|c| Point3::new(c[0], c[1], c[2]))
        .collect();
    let merged = merge_completion(&s.cloud, &completed, merge.merge_threshold)?;
    let object = merged.select_label(LABEL_OBJECT).into_points();
    let l_cmap = cmap_op(g, verts, b.hand.contact().indices(), &object, merge.cmap_threshold)?;
    let l_pen = penetration_op(g, verts, b.hand.faces(), &object)?;
    let l_plane = plane_op(g, verts, &s.plane)?;
    let components = LossComponents {
        param: g.scalar(l_param),
        vertex: g.scalar(l_v),
        cmap: g.scalar(l_cmap),
        penetration: g.scalar(l_pen),
        plane: g.scalar(l_plane),
    };
    let diffusion = crate::losses::diff_loss(&components, w)?;
    let total = g.weighted_sum(&[
        (w.gsp, l_gsp),
        (w.gcp, l_gcp),
        (w.param, l_param),
        (w.vertex, l_v),
        (w.cmap, l_cmap),
        (w.penetration, l_pen),
        (w.plane, l_plane),
    ])?;
    Ok(StepLoss {
        total,
        gsp,
        gcp: g.scalar(l_gcp),
        diffusion,
        components,
    })
}

fn add_components(acc: &mut LossComponents, c: &LossComponents, s: f64) {
    acc.param += c.param * s;
    acc.vertex += c.vertex * s;
    acc.cmap += c.cmap * s;
    acc.penetration += c.penetration * s;
    acc.plane += c.plane * s;
}

fn initial_bundle(cfg: &RunConfig) -> Result<ModelBundle> {
    if let Some(r) = &cfg.resume {
        return ModelBundle::read(r);
    }
    let spec = NormalizationSpec::with_scene_box(Point3::from(cfg.scene_center), Point3::from(cfg.scene_half_extent));
    let mut b = ModelBundle::new(
        &cfg.net,
        derive_seed(cfg.seed, &[0]),
        build_capsule_hand(cfg.hand_seed),
        &spec,
        cfg.schedule.build()?,
        cfg.merge.merge_threshold,
    )?;
    if let Some(pre) = &cfg.pretrained {
        let src = ModelBundle::read(pre)?;
        b.params.load_from(&src.params)?;
        b.hand = src.hand;
        b.spec = src.spec;
    }
    Ok(b)
}

fn run(cfg: &RunConfig, out: &Path, stage: Stage) -> Result<TrainSummary> {
    cfg.validate()?;
    let (epochs, adam_cfg): (u32, &AdamConfig) = match stage {
        Stage::Gsp => (cfg.gsp_epochs, cfg.adam_for_gsp()),
        Stage::Joint => (cfg.epochs, &cfg.adam),
    };
    let mut bundle = initial_bundle(cfg)?;
    if cfg.pretrained.is_some() && cfg.resume.is_none() {
        bundle.epoch = 0;
    }
    let samples = load_samples(cfg, &bundle)?;
    let weights = cfg.weights();
    let mut adam = bundle.adam.take().unwrap_or_else(|| AdamState::new(&bundle.params));
    let probe = Probe::default();
    let tag = match stage {
        Stage::Gsp => 1,
        Stage::Joint => 2,
    };
    let mut summary = TrainSummary {
        epochs: Vec::new(),
        step_losses: Vec::new(),
        complete_reads_perception: 0,
        complete_reads_diffusion: 0,
    };
    for epoch in bundle.epoch..epochs {
        let lr = adam_cfg.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag, 0, u64::from(epoch)])));
        let mut stats = EpochStats {
            epoch,
            lr,
            loss: 0.0,
            gsp_chamfer: 0.0,
            gcp_ce: 0.0,
            diffusion: 0.0,
            components: LossComponents::default(),
        };
        let inv_n = 1.0 / samples.len() as f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag, 1, adam.step]));
            let mut grads: Vec<Vec<f64>> = (0..bundle.params.len()).map(|i| vec![0.0; bundle.params.tensor(i).len()]).collect();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut g = Graph::new();
                let r = sample_loss(&mut g, &bundle, &samples[i], stage, &weights, &cfg.merge, &mut rng, &probe);
                let r = match r {
                    Ok(r) => r,
                    Err(e @ (Error::DenoiserDiverged | Error::NonFinite(_))) => {
                        return Err(diverged(&bundle, &adam, out, adam.step, e.to_string()))
                    }
                    Err(e) => return Err(e),
                };
                let loss = g.scalar(r.total);
                if !loss.is_finite() {
                    return Err(diverged(&bundle, &adam, out, adam.step, "non-finite loss".into()));
                }
                let gr = g.backward(r.total)?;
                for (acc, pg) in grads.iter_mut().zip(g.param_grads(&gr, &bundle.params)) {
                    for (a, v) in acc.iter_mut().zip(pg) {
                        *a += v * scale;
                    }
                }
                batch_loss += loss * scale;
                stats.loss += loss * inv_n;
                stats.gsp_chamfer += r.gsp * inv_n;
                stats.gcp_ce += r.gcp * inv_n;
                stats.diffusion += r.diffusion * inv_n;
                add_components(&mut stats.components, &r.components, inv_n);
            }
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(diverged(&bundle, &adam, out, adam.step, "non-finite gradient".into()));
            }
            adam_step(&mut bundle.params, &grads, &mut adam, lr, adam_cfg)?;
            summary.step_losses.push(batch_loss);
        }
        bundle.epoch = epoch + 1;
        bundle.adam = Some(adam);
        // Continue from the stored precision so a resumed run matches this one.
        let file = bundle.to_file()?;
        file.write(out)?;
        bundle = ModelBundle::from_file(&file)?;
        adam = bundle
            .adam
            .take()
            .ok_or_else(|| Error::Format("checkpoint lost its optimizer state".into()))?;
        log::info!(
            "epoch {epoch}: loss {:.6} chamfer {:.6} ce {:.4} diffusion {:.4}",
            stats.loss,
            stats.gsp_chamfer,
            stats.gcp_ce,
            stats.diffusion
        );
        summary.epochs.push(stats);
    }
    if summary.epochs.is_empty() {
        bundle.adam = Some(adam);
        bundle.write(out)?;
    }
    summary.complete_reads_perception = probe.perception.get();
    summary.complete_reads_diffusion = probe.diffusion.get();
    Ok(summary)
}

/// Writes the current state next to `out` and returns the divergence error.
fn diverged(bundle: &ModelBundle, adam: &AdamState, out: &Path, step: u64, what: String) -> Error {
    let mut dump = bundle.clone();
    dump.adam = Some(adam.clone());
    let mut path = out.as_os_str().to_owned();
    path.push(".diverged");
    if let Err(e) = dump.write(Path::new(&path)) {
        log::error!("could not dump diverged state: {e}");
    }
    Error::TrainingDiverged { step, what }
}

/// Trains the scene encoder and completion head under the Chamfer loss.
pub fn cmd_pretrain_gsp(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    run(cfg, out, Stage::Gsp)
}

/// Joint training of perception heads and the denoiser. The checkpoint at
/// `out` is rewritten after every epoch.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    run(cfg, out, Stage::Joint)
}
