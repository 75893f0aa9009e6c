//! End-to-end pipelines behind the `s2h` binary: dataset generation,
//! perception pre-training, joint training, sampling, completion and
//! evaluation.

mod bundle;
mod config;
mod dataset;
mod infer;
mod train;

pub use bundle::ModelBundle;
pub use config::{GenConfig, ObjectSource, RunConfig, SampleConfig, ScheduleConfig, SplitMode};
pub use dataset::{cmd_gen_dataset, DatasetIndex, GenSummary, ObjectEntry};
pub use infer::{cmd_complete, cmd_eval, cmd_sample, SampleOptions};
pub use train::{cmd_pretrain_gsp, cmd_train, EpochStats, TrainSummary};

/// Mixes a base seed with stream coordinates into an independent seed.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    let mut z = base ^ 0x5851_f42d_4c95_7f2d;
    for &c in std::iter::once(&0).chain(coords) {
        z = splitmix(z.wrapping_add(c).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
