//! Mean-field Langevin dynamics with kernel-thinned interactions.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the experiment harness uses.

// Comparisons are written as `!(x > 0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod lv;
pub mod mfg;
pub mod objectives;
pub mod points;
pub mod rng;
pub mod scalar;
pub mod thinning;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Kernel = kernels::KernelSpec<f64>;
pub type Points = points::PointSet<f64>;
pub type Strategy = thinning::InteractionStrategy<f64>;
pub type KtConfig = thinning::KtParams<f64>;
pub type MfldConfig = dynamics::MfldConfig<f64>;
pub type ParticleState = dynamics::ParticleState<f64>;
pub type Init = dynamics::Init<f64>;
pub type RunTrace = dynamics::RunTrace<f64>;
pub type MmdModel = objectives::MmdModel<f64>;
pub type NetModel = objectives::NetModel<f64>;
pub type NetConfig = objectives::NetConfig<f64>;
pub type ProModel = objectives::ProModel<f64>;
pub type LvParams = lv::LvParams<f64>;
pub type Dataset = lv::Dataset<f64>;
pub type MfgConfig = mfg::MfgConfig<f64>;
pub type MfgSolution = mfg::MfgSolution<f64>;
