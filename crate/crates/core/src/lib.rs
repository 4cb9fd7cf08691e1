//! Analysis-by-synthesis face fitting.
//!
//! A procedurally generated linear morphable face model is rendered by a small
//! software rasterizer, and its parameters are inferred from an image with a
//! Metropolis-Hastings sampler. The proposal mixes a block-wise Gaussian random
//! walk with an image-dependent independence proposal predicted by a
//! dropout-based Bayesian neural network.
//!
//! Module map:
//!
//! * [`scene`]: parameter record, prior, morphable model generation.
//! * [`render`]: pinhole camera, z-buffered rasterizer, Lambertian shading.
//! * [`inference`]: likelihood, posterior, proposal kernels, MH chain.
//! * [`bnn`]: heteroscedastic MLP with MC dropout, training, prediction.
//! * [`data`]: synthetic dataset generation and all binary file formats.
//! * [`experiment`]: paired informed/uninformed benchmark and Friedman test.
//! * [`rng`]: the single random generator used everywhere.

pub mod bnn;
pub mod data;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod render;
pub mod rng;
pub mod scene;

pub use bnn::{Network, PredictiveDistribution, TrainConfig};
pub use data::Dataset;
pub use error::{Error, Result};
pub use experiment::{BenchmarkConfig, BenchmarkReport};
pub use inference::{ChainTrace, LikelihoodConfig, SamplerConfig};
pub use render::{Image, RenderConfig};
pub use rng::Rng;
pub use scene::{ModelConfig, MorphableModel, PriorSpec, SceneParams};
