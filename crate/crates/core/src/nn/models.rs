use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::points_tensor;
use super::{Graph, Mlp, ParamSet, Tensor, Var};
use crate::diffusion::{Denoiser, DiffusionSchedule, NormalizationSpec};
use crate::geometry::{Point3, PointSet};
use crate::hand::{hand_forward, HandModel, NUM_PARAMS};
use crate::scene::LABEL_OBJECT;
use crate::{Error, Result};

/// Layer widths of the perception and denoising networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Widths of the shared per-point MLP of the scene encoder.
    pub point_widths: Vec<usize>,
    /// Width of the scene feature `F_s`.
    pub feature_width: usize,
    pub gsp_points: usize,
    pub gsp_hidden: Vec<usize>,
    pub num_classes: usize,
    pub gcp_hidden: Vec<usize>,
    /// Widths of the per-point MLP of the hand encoder; the last is `|F_h|`.
    pub hand_widths: Vec<usize>,
    pub cond_hidden: Vec<usize>,
    pub time_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            point_widths: vec![64, 128, 256],
            feature_width: 256,
            gsp_points: 512,
            gsp_hidden: vec![256],
            num_classes: 35,
            gcp_hidden: vec![128],
            hand_widths: vec![64, 128],
            cond_hidden: vec![256, 256],
            time_dim: 64,
        }
    }
}

/// Shared per-point MLP, max pool over the object-labeled points and over
/// the remaining points, pooled MLP on the concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder {
    pub point_mlp: Mlp,
    pub pooled_mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GspHead {
    pub mlp: Mlp,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcpHead {
    pub mlp: Mlp,
}

/// Hand encoder, conditioning MLP and a scene-prior MLP that sees only the
/// scene feature and the time embedding. The two MLP outputs are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    pub hand_mlp: Mlp,
    pub cond_mlp: Mlp,
    pub prior_mlp: Mlp,
    pub time_dim: usize,
}

/// All networks sharing one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct S2hNet {
    pub config: NetConfig,
    pub encoder: PointEncoder,
    pub gsp: GspHead,
    pub gcp: GcpHead,
    pub denoiser: DenoiserNet,
}

impl S2hNet {
    pub fn new(config: &NetConfig, seed: u64) -> Result<(Self, ParamSet)> {
        if config.point_widths.is_empty() || config.hand_widths.is_empty() {
            return Err(Error::Config("encoder widths must be non-empty".into()));
        }
        let dims = [config.feature_width, config.gsp_points, config.num_classes, config.time_dim];
        if dims.contains(&0) || !config.time_dim.is_multiple_of(2) {
            return Err(Error::Config("network widths must be positive, time_dim even".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let w = |first: usize, mid: &[usize], last: usize| -> Vec<usize> {
            std::iter::once(first)
                .chain(mid.iter().copied())
                .chain(std::iter::once(last))
                .collect()
        };
        let pw = &config.point_widths;
        let point_mlp = Mlp::new(
            &mut p,
            "encoder.point",
            &w(4, &pw[..pw.len() - 1], pw[pw.len() - 1]),
            true,
            true,
            true,
            &mut rng,
        );
        let pooled_mlp = Mlp::new(
            &mut p,
            "encoder.pooled",
            &[2 * pw[pw.len() - 1] + 2 * GROUP_STATS, config.feature_width, config.feature_width],
            true,
            true,
            false,
            &mut rng,
        );
        let gsp = GspHead {
            mlp: Mlp::new(
                &mut p,
                "gsp",
                &w(config.feature_width, &config.gsp_hidden, 3 * config.gsp_points),
                false,
                true,
                false,
                &mut rng,
            ),
            points: config.gsp_points,
        };
        let gcp = GcpHead {
            mlp: Mlp::new(
                &mut p,
                "gcp",
                &w(config.feature_width, &config.gcp_hidden, config.num_classes),
                true,
                true,
                false,
                &mut rng,
            ),
        };
        let hw = &config.hand_widths;
        let hand_mlp = Mlp::new(
            &mut p,
            "denoiser.hand",
            &w(3, &hw[..hw.len() - 1], hw[hw.len() - 1]),
            true,
            true,
            true,
            &mut rng,
        );
        let cond_in = hw[hw.len() - 1] + config.feature_width + config.time_dim + NUM_PARAMS;
        let cond_mlp = Mlp::new(
            &mut p,
            "denoiser.cond",
            &w(cond_in, &config.cond_hidden, NUM_PARAMS),
            true,
            true,
            false,
            &mut rng,
        );
        let prior_in = config.feature_width + config.time_dim;
        let prior_mlp = Mlp::new(
            &mut p,
            "denoiser.prior",
            &w(prior_in, &config.cond_hidden, NUM_PARAMS),
            true,
            true,
            false,
            &mut rng,
        );
        let net = S2hNet {
            config: config.clone(),
            encoder: PointEncoder { point_mlp, pooled_mlp },
            gsp,
            gcp,
            denoiser: DenoiserNet {
                hand_mlp,
                cond_mlp,
                prior_mlp,
                time_dim: config.time_dim,
            },
        };
        Ok((net, p))
    }

    pub fn feature_width(&self) -> usize {
        self.config.feature_width
    }

    /// Scene feature `F_s` (`1 × feature_width`). Per-point input is the
    /// scene-box-normalized position plus the object-label flag. A point group
    /// with no members pools to zeros.
    pub fn encode(&self, g: &mut Graph, p: &ParamSet, cloud: &PointSet, spec: &NormalizationSpec) -> Result<Var> {
        if cloud.is_empty() {
            return Err(Error::Empty("scene cloud"));
        }
        let labels = cloud.labels();
        let (c, h) = (spec.translation_center, spec.translation_half_extent);
        let mut groups = [Vec::new(), Vec::new()];
        for (i, q) in cloud.points().iter().enumerate() {
            let n = (q - c).component_div(&h);
            let object = labels.is_some_and(|l| l[i] == LABEL_OBJECT);
            groups[usize::from(object)].extend([n.x, n.y, n.z, if object { 1.0 } else { 0.0 }]);
        }
        let width = self.encoder.point_mlp.out_dim();
        let mut pooled = Vec::with_capacity(2);
        let mut stats = Vec::with_capacity(2 * GROUP_STATS);
        for data in groups {
            if data.is_empty() {
                pooled.push(g.input(Tensor::zeros(vec![1, width])));
                stats.extend([0.0; GROUP_STATS]);
                continue;
            }
            stats.extend(group_stats(&data));
            let x = g.input(Tensor::matrix(data.len() / 4, 4, data)?);
            let per_point = self.encoder.point_mlp.forward(g, p, x)?;
            pooled.push(g.max_rows(per_point)?);
        }
        let stats = g.input(Tensor::row(stats));
        let z = g.concat(&[pooled[1], pooled[0], stats]);
        self.encoder.pooled_mlp.forward(g, p, z)
    }

    fn check_feature(&self, g: &Graph, f_s: Var) -> Result<()> {
        if g.value(f_s).len() != self.feature_width() {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} for heads of width {}",
                g.value(f_s).len(),
                self.feature_width()
            )));
        }
        Ok(())
    }

    /// Completion points (`N × 3`) in scene coordinates.
    pub fn gsp(&self, g: &mut Graph, p: &ParamSet, f_s: Var, spec: &NormalizationSpec) -> Result<Var> {
        self.check_feature(g, f_s)?;
        let y = self.gsp.mlp.forward(g, p, f_s)?;
        let y = g.reshape(y, vec![self.gsp.points, 3])?;
        let h = spec.translation_half_extent;
        let scale = g.input(Tensor::matrix(3, 3, vec![h.x, 0.0, 0.0, 0.0, h.y, 0.0, 0.0, 0.0, h.z])?);
        let y = g.matmul(y, scale)?;
        let c = spec.translation_center;
        let center = g.input(Tensor::row(vec![c.x, c.y, c.z]));
        g.add_row(y, center)
    }

    /// Category logits (`1 × num_classes`).
    pub fn gcp(&self, g: &mut Graph, p: &ParamSet, f_s: Var) -> Result<Var> {
        self.check_feature(g, f_s)?;
        self.gcp.mlp.forward(g, p, f_s)
    }

    /// Normalized clean-parameter prediction (`1 × 61`) from the noisy
    /// normalized parameters `h_t`. The branch that sees `h_t` is scaled by
    /// the signal rate `√ᾱ_t`.
    #[allow(clippy::too_many_arguments)]
    pub fn denoise(
        &self,
        g: &mut Graph,
        p: &ParamSet,
        h_t: &[f64],
        t: usize,
        schedule: &DiffusionSchedule,
        f_s: Var,
        model: &HandModel,
        spec: &NormalizationSpec,
    ) -> Result<Var> {
        self.check_feature(g, f_s)?;
        if t == 0 || t > schedule.timesteps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: schedule.timesteps(),
            });
        }
        if h_t.len() != NUM_PARAMS {
            return Err(Error::LengthMismatch {
                expected: NUM_PARAMS,
                got: h_t.len(),
            });
        }
        let params = spec.denormalize(h_t).map_err(|_| Error::DenoiserDiverged)?;
        let mesh = hand_forward(model, &params).map_err(|_| Error::DenoiserDiverged)?;
        let (c, h) = (spec.translation_center, spec.translation_half_extent);
        let pts: Vec<Point3> = mesh.vertices().iter().map(|v| (v - c).component_div(&h)).collect();
        let x = g.input(points_tensor(&pts));
        let per_point = self.denoiser.hand_mlp.forward(g, p, x)?;
        let f_h = g.max_rows(per_point)?;
        let temb = g.input(Tensor::row(time_embedding(t, self.denoiser.time_dim)));
        let ht = g.input(Tensor::row(h_t.to_vec()));
        let z = g.concat(&[f_h, f_s, temb, ht]);
        let correction = self.denoiser.cond_mlp.forward(g, p, z)?;
        let correction = g.scale(correction, schedule.signal_scale(t));
        let zp = g.concat(&[f_s, temb]);
        let prior = self.denoiser.prior_mlp.forward(g, p, zp)?;
        let out = g.add(prior, correction)?;
        if g.value(out).data().iter().any(|v| !v.is_finite()) {
            return Err(Error::DenoiserDiverged);
        }
        Ok(out)
    }
}

/// Per-axis mean, minimum and maximum of a point group.
const GROUP_STATS: usize = 9;

fn group_stats(rows: &[f64]) -> [f64; GROUP_STATS] {
    let mut out = [0.0; GROUP_STATS];
    for a in 0..3 {
        // Summed in sorted order so the mean is independent of point order.
        let mut col: Vec<f64> = rows.chunks_exact(4).map(|r| r[a]).collect();
        col.sort_by(f64::total_cmp);
        out[a] = col.iter().sum::<f64>() / col.len() as f64;
        out[3 + a] = col[0];
        out[6 + a] = col[col.len() - 1];
    }
    out
}

/// Sinusoidal embedding: `sin(t·ωᵢ)` then `cos(t·ωᵢ)`, `ωᵢ = 10000^(−i/(d/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = 10000f64.powf(-(i as f64) / half as f64);
        out[i] = (t as f64 * w).sin();
        out[half + i] = (t as f64 * w).cos();
    }
    out
}

pub fn encode_scene(net: &S2hNet, p: &ParamSet, cloud: &PointSet, spec: &NormalizationSpec) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let f = net.encode(&mut g, p, cloud, spec)?;
    Ok(g.value(f).data().to_vec())
}

fn feature_input(g: &mut Graph, f_s: &[f64]) -> Var {
    g.input(Tensor::row(f_s.to_vec()))
}

pub fn gsp_complete(net: &S2hNet, p: &ParamSet, f_s: &[f64], spec: &NormalizationSpec) -> Result<PointSet> {
    let mut g = Graph::new();
    let f = feature_input(&mut g, f_s);
    let y = net.gsp(&mut g, p, f, spec)?;
    let pts = g.value(y).data().chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
    PointSet::new(pts)
}

pub fn gcp_classify(net: &S2hNet, p: &ParamSet, f_s: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let f = feature_input(&mut g, f_s);
    let y = net.gcp(&mut g, p, f)?;
    Ok(g.value(y).data().to_vec())
}

#[allow(clippy::too_many_arguments)]
pub fn denoise(
    net: &S2hNet,
    p: &ParamSet,
    h_t: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
    f_s: &[f64],
    model: &HandModel,
    spec: &NormalizationSpec,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let f = feature_input(&mut g, f_s);
    let y = net.denoise(&mut g, p, h_t, t, schedule, f, model, spec)?;
    Ok(g.value(y).data().to_vec())
}

/// Frozen network bound to a hand model, usable by the sampler.
pub struct NetDenoiser<'a> {
    pub net: &'a S2hNet,
    pub params: &'a ParamSet,
    pub model: &'a HandModel,
    pub spec: &'a NormalizationSpec,
    pub schedule: &'a DiffusionSchedule,
}

impl Denoiser for NetDenoiser<'_> {
    fn predict(&self, h_t: &[f64], t: usize, condition: &[f64]) -> Result<Vec<f64>> {
        denoise(self.net, self.params, h_t, t, self.schedule, condition, self.model, self.spec)
    }
}
