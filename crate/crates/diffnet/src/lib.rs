//! Minimal reverse-mode automatic differentiation in double precision.
//!
//! A [`Graph`] records operations eagerly over parameters borrowed from a
//! [`ParamSet`]; [`Graph::backward`] returns [`Gradients`] that are then
//! accumulated into the parameter set and applied with [`sgd_step`].
//! Evaluation order is fixed, so forward and backward passes are bitwise
//! reproducible.

pub mod checkpoint;
mod error;
mod gradcheck;
mod graph;
pub mod init;
pub mod layers;
mod optim;
mod params;
mod tensor;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Conv2dSpec, Graph, NodeId};
pub use optim::{clip_grad_norm, sgd_step};
pub use params::{Gradients, ParamId, ParamSet};
pub use tensor::Tensor;
