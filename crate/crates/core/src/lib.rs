//! Face forgery detection and localization with shallow convolutional
//! networks, trained either as image-level classifiers (localized through
//! class activation maps) or as per-pixel segmenters.

pub mod arch;
pub mod cam;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod optim;
pub mod param;
pub mod real;
pub mod tensor;
pub mod train;

pub use arch::{ArchId, ArchSpec, Model, Task};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use mask::{BinaryMask, MaskOrigin};
pub use param::{ParamId, ParamStore, Parameter, RunningStats};
pub use real::Real;
pub use tensor::{Shape, Tensor};
