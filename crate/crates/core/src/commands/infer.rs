use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::bundle::ModelBundle;
use super::derive_seed;
use crate::diffusion::{sample, Denoiser, OracleDenoiser};
use crate::formats::{read_grasps, read_obj, read_s2p, write_grasps, write_json, write_s2p, GraspRecord};
use crate::geometry::{Plane, PointSet, TriMesh};
use crate::hand::{hand_forward, HandModel, HandParams};
use crate::losses::merge_completion;
use crate::metrics::{evaluate_hands, EvalConfig, EvalReport};
use crate::nn::{encode_scene, gsp_complete, NetDenoiser};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub n: usize,
    pub steps: usize,
    pub eta: f64,
    pub seed: u64,
}

/// Draws `n` independent reverse chains for one scene cloud and writes them
/// as grasp JSON. Chain `i` is seeded from `(seed, i)`.
pub fn cmd_sample(model: &Path, cloud: &Path, opts: &SampleOptions, out: &Path) -> Result<Vec<GraspRecord>> {
    let bundle = ModelBundle::read(model)?;
    let cloud = read_s2p(cloud)?;
    let records = sample_bundle(&bundle, &cloud, opts)?;
    write_grasps(out, &records)?;
    Ok(records)
}

pub(crate) fn sample_bundle(bundle: &ModelBundle, cloud: &PointSet, opts: &SampleOptions) -> Result<Vec<GraspRecord>> {
    if opts.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let f_s = encode_scene(&bundle.net, &bundle.params, cloud, &bundle.spec)?;
    let net = NetDenoiser {
        net: &bundle.net,
        params: &bundle.params,
        model: &bundle.hand,
        spec: &bundle.spec,
        schedule: &bundle.schedule,
    };
    let oracle = bundle.oracle.map(|o| OracleDenoiser(bundle.spec.normalize(&o).to_vec()));
    let denoiser: &(dyn Denoiser + Sync) = match &oracle {
        Some(o) => o,
        None => &net,
    };
    (0..opts.n)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(opts.seed, &[3, i as u64]);
            let h = sample(denoiser, &f_s, opts.steps, opts.eta, seed, &bundle.spec, &bundle.schedule)?;
            Ok(GraspRecord {
                seed: Some(seed),
                steps: Some(opts.steps),
                eta: Some(opts.eta),
                ..GraspRecord::new(&h)
            })
        })
        .collect()
}

/// Completes the object seen in `cloud` and writes the merge of the input
/// with the completion points that fall outside it.
pub fn cmd_complete(model: &Path, cloud: &Path, out: &Path) -> Result<PointSet> {
    let bundle = ModelBundle::read(model)?;
    let cloud = read_s2p(cloud)?;
    let merged = complete_bundle(&bundle, &cloud)?;
    write_s2p(out, &merged)?;
    Ok(merged)
}

pub(crate) fn complete_bundle(bundle: &ModelBundle, cloud: &PointSet) -> Result<PointSet> {
    let f_s = encode_scene(&bundle.net, &bundle.params, cloud, &bundle.spec)?;
    let completion = gsp_complete(&bundle.net, &bundle.params, &f_s, &bundle.spec)?;
    merge_completion(cloud, completion.points(), bundle.merge_threshold)
}

/// Evaluates every grasp of every file against `object` and writes the
/// aggregate report to `out` when given.
pub fn cmd_eval(
    grasp_files: &[PathBuf],
    object: &Path,
    plane: &Plane,
    hand: &HandModel,
    cfg: &EvalConfig,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let mut params = Vec::new();
    for f in grasp_files {
        for g in read_grasps(f)? {
            params.push(g.hand_params()?);
        }
    }
    if params.is_empty() {
        return Err(Error::Empty("grasp set"));
    }
    let object = read_obj(object)?;
    let report = evaluate_params(&params, &object, plane, hand, cfg)?;
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(report)
}

pub(crate) fn evaluate_params(
    params: &[HandParams],
    object: &TriMesh,
    plane: &Plane,
    hand: &HandModel,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let meshes: Vec<TriMesh> = params
        .par_iter()
        .map(|p| hand_forward(hand, p).map(|m| m.into_mesh()))
        .collect::<Result<_>>()?;
    let below = meshes
        .iter()
        .filter(|m| m.vertices().iter().any(|v| plane.signed_distance(v) < 0.0))
        .count();
    if below > 0 {
        log::info!("{below} of {} grasps reach below the table plane", meshes.len());
    }
    Ok(evaluate_hands(&meshes, params, object, cfg)?.0)
}
