//! Reverse-mode autodiff and the perception and denoising networks.

mod adam;
mod graph;
mod layers;
mod models;
pub mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{log_sum_exp, softmax, CustomOp, Gradients, Graph, Var};
pub use layers::{Linear, Mlp, ParamSet};
pub use models::{
    denoise, encode_scene, gcp_classify, gsp_complete, time_embedding, DenoiserNet, GcpHead, GspHead, NetConfig, NetDenoiser, PointEncoder,
    S2hNet,
};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
