pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod image;
pub mod latency;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod params;
pub mod pose;
pub mod renderer;
pub mod tensor;
pub mod training;

pub use embedding::{EmbeddingConfig, EmbeddingVariant};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use image::Image;
pub use params::ParamStore;
pub use pose::{NormalizedPose, Pose6D, PoseStats};
pub use renderer::{Encoder1Kind, Model, ModelConfig, Variant};
pub use tensor::{Scalar, Tensor};
