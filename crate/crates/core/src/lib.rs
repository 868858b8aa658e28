pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod ops;
pub mod param;
pub mod sca;
pub mod spatial_transformer;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use param::{Bound, ParamId, ParamStore, Parameter};
pub use tensor::{Element, Tensor};
