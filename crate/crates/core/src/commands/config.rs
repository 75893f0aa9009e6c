use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSchedule;
use crate::losses::{LossWeights, MergeConfig};
use crate::metrics::EvalConfig;
use crate::nn::{AdamConfig, NetConfig};
use crate::scene::CameraRingConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Novel views of seen objects.
    #[default]
    View,
    /// Unseen objects.
    Object,
}

impl SplitMode {
    pub fn file_name(self) -> &'static str {
        match self {
            SplitMode::View => "view.json",
            SplitMode::Object => "object.json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = DiffusionSchedule::default();
        ScheduleConfig {
            timesteps: s.timesteps(),
            beta_start: s.beta_start(),
            beta_end: s.beta_end(),
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// An external object: a watertight OBJ mesh and its candidate grasps in the
/// object frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSource {
    pub id: String,
    pub category: usize,
    pub mesh: PathBuf,
    pub grasps: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Use the built-in toy objects instead of `objects`.
    pub toy: bool,
    pub objects: Vec<ObjectSource>,
    pub poses_per_object: usize,
    pub ring: CameraRingConfig,
    /// Camera ids to render; all when absent.
    pub views: Option<Vec<usize>>,
    /// Camera ids held out by the view split.
    pub test_views: Vec<usize>,
    /// Object ids held out by the object split; every fifth object when absent.
    pub test_objects: Option<Vec<String>>,
    pub n_object: usize,
    pub n_table: usize,
    /// Surface samples of the complete posed object.
    pub complete_points: usize,
    pub table_half_extent: [f64; 2],
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            toy: false,
            objects: Vec::new(),
            poses_per_object: 10,
            ring: CameraRingConfig::default(),
            views: None,
            test_views: vec![5, 11, 17, 23, 29, 35],
            test_objects: None,
            n_object: 1000,
            n_table: 1000,
            complete_points: 2048,
            table_half_extent: [0.3, 0.3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub steps: usize,
    pub eta: f64,
    pub n: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            steps: 50,
            eta: 0.0,
            n: 10,
        }
    }
}

/// Settings shared by every command. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub split: SplitMode,
    pub seed: u64,
    pub epochs: u32,
    pub gsp_epochs: u32,
    pub batch_size: usize,
    pub schedule: ScheduleConfig,
    /// Defaults to the preset of `split` when absent.
    pub weights: Option<LossWeights>,
    pub merge: MergeConfig,
    pub adam: AdamConfig,
    /// Optimizer for pre-training; `adam` when absent.
    pub gsp_adam: Option<AdamConfig>,
    pub net: NetConfig,
    pub hand_seed: u64,
    /// Scene box used to normalize positions.
    pub scene_center: [f64; 3],
    pub scene_half_extent: [f64; 3],
    /// Model whose weights initialize training.
    pub pretrained: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    pub gen: GenConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("dataset"),
            split: SplitMode::View,
            seed: 0,
            epochs: 200,
            gsp_epochs: 200,
            batch_size: 60,
            schedule: ScheduleConfig::default(),
            weights: None,
            merge: MergeConfig::default(),
            adam: AdamConfig::default(),
            gsp_adam: None,
            net: NetConfig::default(),
            hand_seed: 0,
            scene_center: [0.0; 3],
            scene_half_extent: [0.3; 3],
            pretrained: None,
            resume: None,
            gen: GenConfig::default(),
            sample: SampleConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Small settings for the built-in toy objects on a small table: five
    /// adjacent cameras of the middle ring with the central one held out.
    pub fn toy() -> Self {
        RunConfig {
            epochs: 30,
            gsp_epochs: 30,
            batch_size: 4,
            scene_half_extent: [0.1; 3],
            adam: AdamConfig {
                lr: 1e-3,
                milestones: vec![20],
                ..AdamConfig::default()
            },
            net: NetConfig {
                point_widths: vec![32, 64, 128],
                feature_width: 128,
                gsp_points: 256,
                gsp_hidden: vec![128],
                num_classes: 3,
                gcp_hidden: vec![32],
                hand_widths: vec![32, 64],
                cond_hidden: vec![128, 128],
                time_dim: 32,
            },
            gen: GenConfig {
                toy: true,
                views: Some(vec![12, 13, 14, 15, 16]),
                test_views: vec![14],
                n_object: 384,
                n_table: 256,
                complete_points: 1024,
                table_half_extent: [0.1, 0.1],
                ..GenConfig::default()
            },
            ..RunConfig::default()
        }
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = crate::formats::read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        for o in &mut self.gen.objects {
            fix(&mut o.mesh);
            fix(&mut o.grasps);
        }
        if let Some(p) = &mut self.pretrained {
            fix(p);
        }
        if let Some(p) = &mut self.resume {
            fix(p);
        }
    }

    pub fn weights(&self) -> LossWeights {
        self.weights.unwrap_or(match self.split {
            SplitMode::View => LossWeights::view_split(),
            SplitMode::Object => LossWeights::object_split(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.weights().validate()?;
        self.merge.validate()?;
        self.eval.sim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.scene_half_extent.iter().any(|&h| h.is_nan() || h <= 0.0) {
            return Err(Error::Config("scene_half_extent must be positive".into()));
        }
        if self.gen.poses_per_object == 0 {
            return Err(Error::Config("poses_per_object must be positive".into()));
        }
        let mut paths: Vec<&Path> = self
            .gen
            .objects
            .iter()
            .flat_map(|o| [o.mesh.as_path(), o.grasps.as_path()])
            .collect();
        paths.extend(self.pretrained.as_deref());
        paths.extend(self.resume.as_deref());
        for p in paths {
            if !p.exists() {
                return Err(Error::Config(format!("referenced path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn adam_for_gsp(&self) -> &AdamConfig {
        self.gsp_adam.as_ref().unwrap_or(&self.adam)
    }
}
