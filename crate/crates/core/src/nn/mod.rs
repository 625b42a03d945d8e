//! Minimal CNN engine: architecture descriptors, parameters, and exact
//! forward/backward passes for conv, linear, pooling and ReLU layers.

pub mod arch;
pub mod model;
pub mod ops;
pub mod params;
pub mod presets;

pub use arch::{ArchitectureDescriptor, Block, BlockKind, FeatureShape, LayerSpec};
pub use model::{argmax_rows, model_backward, model_forward};
pub use ops::{conv2d_forward, flatten_kernel_matrix, unflatten_kernel_matrix};
pub use params::{bias_key, weight_key, ParameterSet};
pub use presets::Preset;
