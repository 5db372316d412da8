//! Sequential recommendation with graph-enhanced item embeddings,
//! bucket-cluster contrastive negatives and capsule-based user interests.

pub mod buckets;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod girg;
pub mod interest;
pub mod numerics;
pub mod objective;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type Tape = numerics::Tape<f64>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type Checkpoint = numerics::Checkpoint<f64>;
pub type WeightedGraph = girg::WeightedGraph<f64>;
pub type BucketState = buckets::BucketState<f64>;
pub type Model = trainer::Model<f64>;

pub type TensorF32 = numerics::Tensor<f32>;
pub type TapeF32 = numerics::Tape<f32>;
pub type ModelF32 = trainer::Model<f32>;
