use std::path::Path;

use crate::diffusion::{DiffusionSchedule, NormalizationSpec};
use crate::formats::{ModelFile, StoredTensor};
use crate::geometry::Point3;
use crate::hand::{ContactSpec, HandModel, HandParams, NUM_JOINTS, NUM_PARAMS, NUM_SHAPE, NUM_VERTICES};
use crate::nn::{AdamState, NetConfig, ParamSet, S2hNet};
use crate::{Error, Result};

/// Everything a command needs to run a trained model: networks, hand model,
/// normalization, schedule and optimizer state. Stored values are `f32`, so
/// the bundle rounds its reals on construction and reloads bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub schedule: DiffusionSchedule,
    pub net: S2hNet,
    pub params: ParamSet,
    pub hand: HandModel,
    pub spec: NormalizationSpec,
    pub merge_threshold: f64,
    pub adam: Option<AdamState>,
    /// Completed training epochs.
    pub epoch: u32,
    /// When set, sampling ignores the network and returns this grasp.
    pub oracle: Option<HandParams>,
}

fn r32(x: f64) -> f64 {
    x as f32 as f64
}

/// Rounds every field to the nearest `f32`.
pub(crate) fn round_spec(spec: &NormalizationSpec) -> NormalizationSpec {
    let pair = |(a, b): (f64, f64)| (r32(a), r32(b));
    NormalizationSpec {
        shape: pair(spec.shape),
        pose: pair(spec.pose),
        rotation: pair(spec.rotation),
        translation_center: spec.translation_center.map(r32),
        translation_half_extent: spec.translation_half_extent.map(r32),
    }
}

fn ints(name: &str, v: &[usize]) -> StoredTensor {
    StoredTensor::new(name, vec![v.len()], v.iter().map(|&x| x as f32).collect()).expect("sized")
}

fn flat_points(pts: &[Point3]) -> Vec<f64> {
    pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn get_ints(f: &ModelFile, name: &str) -> Result<Vec<usize>> {
    f.require(name)?
        .data
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::Format(format!("{name}: {x} is not a count")))
            }
        })
        .collect()
}

fn get_int(f: &ModelFile, name: &str) -> Result<usize> {
    match get_ints(f, name)?.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Format(format!("{name} must hold one value"))),
    }
}

fn get_sized(f: &ModelFile, name: &str, dims: &[usize]) -> Result<Vec<f64>> {
    let t = f.require(name)?;
    if t.dims != dims {
        return Err(Error::ShapeMismatch(format!("{name}: stored {:?}, expected {dims:?}", t.dims)));
    }
    Ok(t.to_f64())
}

fn points(data: &[f64]) -> Vec<Point3> {
    data.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
}

impl ModelBundle {
    /// Fresh networks for `config` initialized from `seed`.
    pub fn new(
        config: &NetConfig,
        seed: u64,
        hand: HandModel,
        spec: &NormalizationSpec,
        schedule: DiffusionSchedule,
        merge_threshold: f64,
    ) -> Result<Self> {
        let spec = round_spec(spec);
        spec.validate()?;
        let (net, params) = S2hNet::new(config, seed)?;
        Ok(ModelBundle {
            schedule,
            net,
            params,
            hand,
            spec,
            merge_threshold: r32(merge_threshold),
            adam: None,
            epoch: 0,
            oracle: None,
        })
    }

    pub fn to_file(&self) -> Result<ModelFile> {
        let c = &self.net.config;
        let mut t = vec![
            ints("config.point_widths", &c.point_widths),
            ints("config.feature_width", &[c.feature_width]),
            ints("config.gsp_points", &[c.gsp_points]),
            ints("config.gsp_hidden", &c.gsp_hidden),
            ints("config.num_classes", &[c.num_classes]),
            ints("config.gcp_hidden", &c.gcp_hidden),
            ints("config.hand_widths", &c.hand_widths),
            ints("config.cond_hidden", &c.cond_hidden),
            ints("config.time_dim", &[c.time_dim]),
            ints("train.epoch", &[self.epoch as usize]),
        ];
        let s = &self.spec;
        t.push(StoredTensor::from_f64("norm.shape", vec![2], &[s.shape.0, s.shape.1])?);
        t.push(StoredTensor::from_f64("norm.pose", vec![2], &[s.pose.0, s.pose.1])?);
        t.push(StoredTensor::from_f64("norm.rotation", vec![2], &[s.rotation.0, s.rotation.1])?);
        t.push(StoredTensor::from_f64(
            "norm.translation_center",
            vec![3],
            s.translation_center.as_slice(),
        )?);
        t.push(StoredTensor::from_f64(
            "norm.translation_half_extent",
            vec![3],
            s.translation_half_extent.as_slice(),
        )?);
        t.push(StoredTensor::from_f64("merge.threshold", vec![1], &[self.merge_threshold])?);

        let h = &self.hand;
        t.push(StoredTensor::from_f64(
            "hand.rest_vertices",
            vec![NUM_VERTICES, 3],
            &flat_points(h.rest_vertices()),
        )?);
        let faces: Vec<usize> = h.faces().iter().flatten().copied().collect();
        t.push(StoredTensor::new(
            "hand.faces",
            vec![h.faces().len(), 3],
            faces.iter().map(|&x| x as f32).collect(),
        )?);
        let parents: Vec<f32> = h.parents().iter().map(|p| p.map_or(-1.0, |p| p as f32)).collect();
        t.push(StoredTensor::new("hand.parents", vec![NUM_JOINTS], parents)?);
        t.push(StoredTensor::from_f64(
            "hand.rest_joints",
            vec![NUM_JOINTS, 3],
            &flat_points(h.rest_joints()),
        )?);
        let w: Vec<f64> = h.weights().iter().flatten().copied().collect();
        t.push(StoredTensor::from_f64("hand.weights", vec![NUM_VERTICES, NUM_JOINTS], &w)?);
        let sb: Vec<f64> = h.shape_basis().iter().flat_map(|b| flat_points(b)).collect();
        t.push(StoredTensor::from_f64("hand.shape_basis", vec![NUM_SHAPE, NUM_VERTICES, 3], &sb)?);
        let jb: Vec<f64> = h.joint_basis().iter().flat_map(|b| flat_points(b)).collect();
        t.push(StoredTensor::from_f64("hand.joint_basis", vec![NUM_SHAPE, NUM_JOINTS, 3], &jb)?);
        t.push(ints("hand.contact", h.contact().indices()));

        for (name, tensor) in self.params.iter() {
            t.push(StoredTensor::from_f64(name, tensor.shape().to_vec(), tensor.data())?);
        }
        if let Some(adam) = &self.adam {
            for (i, (name, tensor)) in self.params.iter().enumerate() {
                t.push(StoredTensor::from_f64(
                    format!("adam.m.{name}"),
                    tensor.shape().to_vec(),
                    &adam.m[i],
                )?);
                t.push(StoredTensor::from_f64(
                    format!("adam.v.{name}"),
                    tensor.shape().to_vec(),
                    &adam.v[i],
                )?);
            }
            if adam.step >= 1 << 24 {
                return Err(Error::Format("optimizer step count exceeds f32 precision".into()));
            }
            t.push(ints("adam.step", &[adam.step as usize]));
        }
        if let Some(o) = &self.oracle {
            t.push(StoredTensor::from_f64("denoiser.oracle_target", vec![NUM_PARAMS], &o.0)?);
        }
        Ok(ModelFile {
            schedule: self.schedule.clone(),
            tensors: t,
        })
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        let config = NetConfig {
            point_widths: get_ints(f, "config.point_widths")?,
            feature_width: get_int(f, "config.feature_width")?,
            gsp_points: get_int(f, "config.gsp_points")?,
            gsp_hidden: get_ints(f, "config.gsp_hidden")?,
            num_classes: get_int(f, "config.num_classes")?,
            gcp_hidden: get_ints(f, "config.gcp_hidden")?,
            hand_widths: get_ints(f, "config.hand_widths")?,
            cond_hidden: get_ints(f, "config.cond_hidden")?,
            time_dim: get_int(f, "config.time_dim")?,
        };
        let pair = |name: &str| -> Result<(f64, f64)> {
            let v = get_sized(f, name, &[2])?;
            Ok((v[0], v[1]))
        };
        let spec = NormalizationSpec {
            shape: pair("norm.shape")?,
            pose: pair("norm.pose")?,
            rotation: pair("norm.rotation")?,
            translation_center: Point3::from_column_slice(&get_sized(f, "norm.translation_center", &[3])?),
            translation_half_extent: Point3::from_column_slice(&get_sized(f, "norm.translation_half_extent", &[3])?),
        };
        spec.validate()?;
        let merge_threshold = get_sized(f, "merge.threshold", &[1])?[0];

        let nf = f.require("hand.faces")?.dims.first().copied().unwrap_or(0);
        let faces: Vec<[usize; 3]> = get_ints(f, "hand.faces")?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        if faces.len() != nf {
            return Err(Error::Format("hand.faces must be F × 3".into()));
        }
        let raw_parents = get_sized(f, "hand.parents", &[NUM_JOINTS])?;
        let mut parents = [None; NUM_JOINTS];
        for (p, &r) in parents.iter_mut().zip(&raw_parents) {
            *p = match r {
                -1.0 => None,
                r if r >= 0.0 && r.fract() == 0.0 => Some(r as usize),
                r => return Err(Error::Format(format!("bad joint parent {r}"))),
            };
        }
        let rj = points(&get_sized(f, "hand.rest_joints", &[NUM_JOINTS, 3])?);
        let rest_joints: [Point3; NUM_JOINTS] = std::array::from_fn(|j| rj[j]);
        let weights: Vec<[f64; NUM_JOINTS]> = get_sized(f, "hand.weights", &[NUM_VERTICES, NUM_JOINTS])?
            .chunks_exact(NUM_JOINTS)
            .map(|c| std::array::from_fn(|j| c[j]))
            .collect();
        let shape_basis: Vec<Vec<Point3>> = get_sized(f, "hand.shape_basis", &[NUM_SHAPE, NUM_VERTICES, 3])?
            .chunks_exact(3 * NUM_VERTICES)
            .map(points)
            .collect();
        let joint_basis: Vec<[Point3; NUM_JOINTS]> = get_sized(f, "hand.joint_basis", &[NUM_SHAPE, NUM_JOINTS, 3])?
            .chunks_exact(3 * NUM_JOINTS)
            .map(|c| {
                let p = points(c);
                std::array::from_fn(|j| p[j])
            })
            .collect();
        let hand = HandModel::from_parts(
            points(&get_sized(f, "hand.rest_vertices", &[NUM_VERTICES, 3])?),
            faces,
            parents,
            rest_joints,
            weights,
            shape_basis,
            joint_basis,
            ContactSpec::new(get_ints(f, "hand.contact")?)?,
        )?;

        let (net, mut params) = S2hNet::new(&config, 0)?;
        for i in 0..params.len() {
            let name = params.name(i).to_string();
            let shape = params.tensor(i).shape().to_vec();
            let v = get_sized(f, &name, &shape)?;
            params.tensor_mut(i).data_mut().copy_from_slice(&v);
        }
        let adam = match f.get("adam.step") {
            None => None,
            Some(_) => {
                let mut st = AdamState::new(&params);
                for i in 0..params.len() {
                    let shape = params.tensor(i).shape().to_vec();
                    st.m[i] = get_sized(f, &format!("adam.m.{}", params.name(i)), &shape)?;
                    st.v[i] = get_sized(f, &format!("adam.v.{}", params.name(i)), &shape)?;
                }
                st.step = get_int(f, "adam.step")? as u64;
                Some(st)
            }
        };
        let oracle = match f.get("denoiser.oracle_target") {
            None => None,
            Some(_) => Some(HandParams::from_slice(&get_sized(f, "denoiser.oracle_target", &[NUM_PARAMS])?)?),
        };
        Ok(ModelBundle {
            schedule: f.schedule.clone(),
            net,
            params,
            hand,
            spec,
            merge_threshold,
            adam,
            epoch: get_int(f, "train.epoch")? as u32,
            oracle,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file(&ModelFile::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_file()?.write(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::build_capsule_hand;
    use crate::nn::adam_step;

    fn small() -> NetConfig {
        NetConfig {
            point_widths: vec![8, 16],
            feature_width: 16,
            gsp_points: 8,
            gsp_hidden: vec![],
            num_classes: 3,
            gcp_hidden: vec![8],
            hand_widths: vec![8],
            cond_hidden: vec![16],
            time_dim: 8,
        }
    }

    #[test]
    fn bundle_roundtrip_is_exact() {
        let mut b = ModelBundle::new(
            &small(),
            3,
            build_capsule_hand(0),
            &NormalizationSpec::default(),
            DiffusionSchedule::default(),
            1e-4,
        )
        .unwrap();
        let mut st = AdamState::new(&b.params);
        let grads: Vec<Vec<f64>> = (0..b.params.len()).map(|i| vec![0.37; b.params.tensor(i).len()]).collect();
        adam_step(&mut b.params, &grads, &mut st, 1e-3, &Default::default()).unwrap();
        b.adam = Some(st);
        b.epoch = 4;
        let mut o = HandParams::default();
        o.0[60] = 0.125;
        b.oracle = Some(o);

        let bytes = b.to_file().unwrap().encode();
        let back = ModelBundle::from_file(&ModelFile::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_file().unwrap().encode(), bytes);
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let b = ModelBundle::new(
            &small(),
            0,
            build_capsule_hand(0),
            &NormalizationSpec::default(),
            DiffusionSchedule::default(),
            1e-4,
        )
        .unwrap();
        let mut f = b.to_file().unwrap();
        f.tensors.retain(|t| t.name != "gsp.layer0.weight" && !t.name.ends_with("0.weight"));
        assert!(ModelBundle::from_file(&f).is_err());
    }
}
