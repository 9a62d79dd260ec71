//! Neural optimal transport with source smoothing.
//!
//! The numeric core is generic over the scalar type through [`Scalar`]
//! (implemented for `f32` and `f64`); the aliases below fix it to `f64`,
//! which is what the trainer, metrics and command-line tool use.

pub mod adam;
pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pointcloud;
pub mod scalar;
pub mod smoothing;
pub mod tensor;
pub mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use autodiff::{Gradients, Tape, Var};
pub use datasets::{DatasetPair, Family, Role, SyntheticDataset};
pub use error::{Error, Result};
pub use metrics::{EvalProtocol, MetricReport, ReferenceSource};
pub use nn::{Activation, IcnnParams, Linear, MlpParams, Parametrized, Potential};
pub use oracle::{w2sq_assignment, w2sq_bruteforce, w2sq_gaussian, w2sq_sinkhorn, SinkhornOptions};
pub use scalar::Scalar;
pub use smoothing::{NoiseSchedule, Perturbation, ScheduleKind};
pub use tensor::Tensor;
pub use trainer::{
    seeded_rng, train, GeneratorKind, ModelPair, PotentialKind, TrainAbort, TrainHistory, TrainRecord, Trainer,
    TrainerConfig,
};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Mlp64 = MlpParams<f64>;
pub type Potential64 = Potential<f64>;
pub type ModelPair64 = ModelPair<f64>;
pub type ModelPair32 = ModelPair<f32>;
