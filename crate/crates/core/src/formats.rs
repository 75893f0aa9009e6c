//! On-disk formats: `.s2p` point clouds, ASCII OBJ meshes, grasp JSON,
//! the binary model container, and dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSchedule;
use crate::geometry::{Plane, Point3, PointSet, RigidTransform, TriMesh};
use crate::hand::{HandParams, NUM_PARAMS};
use crate::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian reader over a byte slice.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}

const S2P_MAGIC: &[u8; 4] = b"S2PC";
const S2P_VERSION: u32 = 1;

/// Encodes a cloud as `.s2p`; coordinates are stored as `f32`.
pub fn encode_s2p(cloud: &PointSet) -> Vec<u8> {
    let n = cloud.len();
    let labels = cloud.labels();
    let mut out = Vec::with_capacity(13 + 12 * n + labels.map_or(0, |_| n));
    out.extend_from_slice(S2P_MAGIC);
    out.extend_from_slice(&S2P_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(u8::from(labels.is_some()));
    for p in cloud.points() {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    if let Some(l) = labels {
        out.extend_from_slice(l);
    }
    out
}

pub fn decode_s2p(bytes: &[u8]) -> Result<PointSet> {
    let mut c = Cursor::new(bytes);
    if c.take(4)? != S2P_MAGIC {
        return Err(Error::Format("not an .s2p file".into()));
    }
    let version = c.u32()?;
    if version != S2P_VERSION {
        return Err(Error::Format(format!("unsupported .s2p version {version}")));
    }
    let n = c.u32()? as usize;
    let labeled = match c.u8()? {
        0 => false,
        1 => true,
        f => return Err(Error::Format(format!("bad label flag {f}"))),
    };
    let mut pts = Vec::with_capacity(n.min(bytes.len() / 12));
    for _ in 0..n {
        pts.push(Point3::new(f64::from(c.f32()?), f64::from(c.f32()?), f64::from(c.f32()?)));
    }
    let cloud = if labeled {
        PointSet::with_labels(pts, c.take(n)?.to_vec())?
    } else {
        PointSet::new(pts)?
    };
    c.finish()?;
    Ok(cloud)
}

pub fn read_s2p(path: &Path) -> Result<PointSet> {
    decode_s2p(&read_bytes(path)?)
}

pub fn write_s2p(path: &Path, cloud: &PointSet) -> Result<()> {
    write_bytes(path, &encode_s2p(cloud))
}

/// Parses `v` and `f` records; polygons are fan-triangulated, texture and
/// normal indices are ignored, negative indices count from the end.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?;
                if c.len() != 3 {
                    return Err(Error::Format(format!("line {}: vertex needs 3 coordinates", ln + 1)));
                }
                verts.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| Error::Format(format!("line {}: bad index {tok:?}", ln + 1)))?;
                        let n = verts.len() as i64;
                        let k = if i > 0 { i - 1 } else { n + i };
                        if i == 0 || k < 0 || k >= n {
                            return Err(Error::Format(format!("line {}: index {i} out of range", ln + 1)));
                        }
                        Ok(k as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Format(format!("line {}: face needs 3 indices", ln + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(verts, faces)
}

pub fn format_obj(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        s.push_str(&format!("v {:?} {:?} {:?}\n", v.x, v.y, v.z));
    }
    for f in mesh.faces() {
        s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    s
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    write_bytes(path, format_obj(mesh).as_bytes())
}

/// One grasp with optional sampling metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspRecord {
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

impl GraspRecord {
    pub fn new(params: &HandParams) -> Self {
        GraspRecord {
            params: params.0.to_vec(),
            seed: None,
            steps: None,
            eta: None,
        }
    }

    pub fn hand_params(&self) -> Result<HandParams> {
        HandParams::from_slice(&self.params)
    }
}

pub fn encode_grasps(grasps: &[GraspRecord]) -> Result<String> {
    for g in grasps {
        g.hand_params()?;
    }
    let mut s = serde_json::to_string_pretty(grasps)?;
    s.push('\n');
    Ok(s)
}

pub fn decode_grasps(text: &str) -> Result<Vec<GraspRecord>> {
    let grasps: Vec<GraspRecord> = serde_json::from_str(text)?;
    for g in &grasps {
        if g.params.len() != NUM_PARAMS {
            return Err(Error::LengthMismatch {
                expected: NUM_PARAMS,
                got: g.params.len(),
            });
        }
        g.hand_params()?;
    }
    Ok(grasps)
}

pub fn read_grasps(path: &Path) -> Result<Vec<GraspRecord>> {
    decode_grasps(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_grasps(path: &Path, grasps: &[GraspRecord]) -> Result<()> {
    write_bytes(path, encode_grasps(grasps)?.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

const MODEL_MAGIC: &[u8; 4] = b"S2HM";
pub const MODEL_VERSION: u32 = 1;
const SCHEDULE_LINEAR: u32 = 0;

/// A named `f32` tensor of the model container.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: dims {dims:?} vs {} values",
                data.len()
            )));
        }
        Ok(StoredTensor { name, dims, data })
    }

    pub fn from_f64(name: impl Into<String>, dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(name, dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Versioned little-endian container: magic, version, schedule block, then
/// `(name length, name, rank, dims, f32 payload)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub schedule: DiffusionSchedule,
    pub tensors: Vec<StoredTensor>,
}

impl ModelFile {
    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&StoredTensor> {
        self.get(name).ok_or_else(|| Error::Format(format!("model lacks tensor {name}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.schedule.timesteps() as u32).to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_start().to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_end().to_le_bytes());
        out.extend_from_slice(&SCHEDULE_LINEAR.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        if c.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a model container".into()));
        }
        let version = c.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let t = c.u32()? as usize;
        let (b0, b1) = (c.f64()?, c.f64()?);
        let kind = c.u32()?;
        if kind != SCHEDULE_LINEAR {
            return Err(Error::Format(format!("unknown schedule kind {kind}")));
        }
        let schedule = DiffusionSchedule::linear(t, b0, b1)?;
        let count = c.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = c.u32()? as usize;
            let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = c.u32()? as usize;
            let dims: Vec<usize> = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format("tensor too large".into()))?;
            if n > bytes.len() / 4 {
                return Err(Error::Format(format!("tensor {name} exceeds file size")));
            }
            let data: Vec<f32> = (0..n).map(|_| c.f32()).collect::<Result<_>>()?;
            tensors.push(StoredTensor { name, dims, data });
        }
        c.finish()?;
        Ok(ModelFile { schedule, tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_bytes(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode())
    }
}

/// Table plane as stored in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl PlaneRecord {
    pub fn from_plane(p: &Plane) -> Self {
        let n = p.normal();
        PlaneRecord {
            normal: [n.x, n.y, n.z],
            offset: p.offset(),
        }
    }

    pub fn to_plane(&self) -> Result<Plane> {
        Plane::new(Point3::from(self.normal), self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub camera: usize,
    /// Cloud path relative to the manifest's directory.
    pub cloud: String,
}

/// Per-scene manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub object_id: String,
    pub category: usize,
    /// Object-to-world pose, row-major 4×4.
    pub pose: [[f64; 4]; 4],
    pub grasp: Vec<f64>,
    pub table_plane: PlaneRecord,
    pub table_half_extent: [f64; 2],
    pub views: Vec<ViewRecord>,
    /// Complete object surface cloud in world coordinates.
    pub complete_cloud: String,
    /// Posed object mesh in world coordinates.
    pub object_mesh: String,
}

impl SceneManifest {
    pub fn pose(&self) -> Result<RigidTransform> {
        RigidTransform::from_rows(&self.pose)
    }

    pub fn grasp(&self) -> Result<HandParams> {
        HandParams::from_slice(&self.grasp)
    }
}

/// One training or test sample: a scene and one of its views.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SplitEntry {
    pub scene: String,
    pub camera: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<SplitEntry>,
    pub test: Vec<SplitEntry>,
}

/// Resolves `rel` against the directory containing `file`.
pub fn sibling(file: &Path, rel: &str) -> PathBuf {
    file.parent().unwrap_or_else(|| Path::new(".")).join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::icosphere;

    #[test]
    fn s2p_roundtrip() {
        let pts = vec![Point3::new(0.1, -0.2, 0.3), Point3::new(1e-3, 2.0, -7.5)];
        let labeled = PointSet::with_labels(pts.clone(), vec![0, 1]).unwrap();
        for cloud in [labeled, PointSet::new(pts).unwrap()] {
            let bytes = encode_s2p(&cloud);
            assert_eq!(bytes.len(), 13 + 24 + cloud.labels().map_or(0, |_| 2));
            let back = decode_s2p(&bytes).unwrap();
            assert_eq!(encode_s2p(&back), bytes);
        }
        let mut bad = encode_s2p(&PointSet::new(vec![Point3::zeros()]).unwrap());
        bad[0] = b'X';
        assert!(decode_s2p(&bad).is_err());
        let good = encode_s2p(&PointSet::new(vec![Point3::zeros()]).unwrap());
        assert!(decode_s2p(&good[..good.len() - 1]).is_err());
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(decode_s2p(&v2).is_err());
    }

    #[test]
    fn obj_roundtrip() {
        let m = icosphere(0.03, 1);
        let text = format_obj(&m);
        let back = parse_obj(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(format_obj(&back), text);
        let quad = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 -1\n").unwrap();
        assert_eq!(quad.faces(), &[[0, 1, 2], [0, 2, 3]]);
        assert!(parse_obj("v 0 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn grasps_roundtrip() {
        let mut p = HandParams::default();
        p.0[3] = 0.123456789;
        p.0[60] = -1.0 / 3.0;
        let recs = vec![
            GraspRecord {
                seed: Some(7),
                steps: Some(50),
                eta: Some(0.0),
                ..GraspRecord::new(&p)
            },
            GraspRecord::new(&HandParams::default()),
        ];
        let text = encode_grasps(&recs).unwrap();
        let back = decode_grasps(&text).unwrap();
        assert_eq!(back, recs);
        assert_eq!(encode_grasps(&back).unwrap(), text);
        assert!(decode_grasps(r#"[{"params": [1.0, 2.0]}]"#).is_err());
    }

    #[test]
    fn model_roundtrip() {
        let m = ModelFile {
            schedule: DiffusionSchedule::default(),
            tensors: vec![
                StoredTensor::new("a.weight", vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-7, 9.0]).unwrap(),
                StoredTensor::new("b", vec![], vec![4.0]).unwrap(),
            ],
        };
        let bytes = m.encode();
        let back = ModelFile::decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.encode(), bytes);
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(ModelFile::decode(&bad).is_err());
        assert!(ModelFile::decode(&bytes[..bytes.len() - 2]).is_err());
    }
}
